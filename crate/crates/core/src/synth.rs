//! Synthetic labeled catalogs.
//!
//! Each embedding is `mood_centroid + genre_centroid + artist_offset + noise`.
//! Mood and genre centroids are scaled vectors of one random orthonormal
//! frame, so mood and genre occupy orthogonal subspaces. Moods are drawn per
//! track, genres per artist, and instruments per track from genre-specific
//! Bernoulli rates whose sum equals `mean_instruments`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, MoodLabel, Track};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dim: usize,
    pub moods: usize,
    pub genres: usize,
    pub instruments: usize,
    pub mean_instruments: f64,
    pub artists: usize,
    pub tracks_per_artist: usize,
    /// Norm of each mood centroid.
    pub mood_axis_scale: f64,
    /// Norm of each genre centroid.
    pub genre_axis_scale: f64,
    /// Expected norm of an artist offset.
    pub artist_scale: f64,
    /// Expected norm of per-track noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 64,
            moods: 4,
            genres: 5,
            instruments: 10,
            mean_instruments: 2.77,
            artists: 400,
            tracks_per_artist: 10,
            mood_axis_scale: 2.0,
            genre_axis_scale: 2.0,
            artist_scale: 1.0,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.dim, self.moods, self.genres, self.artists, self.tracks_per_artist];
        if counts.contains(&0) || self.moods < 2 {
            return Err(Error::InvalidInput(format!("synth counts must be >= 1 (moods >= 2): {counts:?}")));
        }
        if self.dim < self.moods + self.genres {
            return Err(Error::InvalidInput(format!(
                "dim {} cannot host {} orthogonal mood and genre axes",
                self.dim,
                self.moods + self.genres
            )));
        }
        let scales = [self.mood_axis_scale, self.genre_axis_scale, self.artist_scale, self.noise_scale];
        if scales.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || !(self.noise_scale > 0.0) {
            return Err(Error::InvalidInput(format!("scales must be finite, >= 0, noise > 0: {scales:?}")));
        }
        if self.instruments > 0 && !(0.0..=self.instruments as f64).contains(&self.mean_instruments) {
            return Err(Error::InvalidInput("mean_instruments must lie in [0, instruments]".into()));
        }
        Ok(())
    }
}

fn gaussian(d: usize, scale: f64, r: &mut rng::Rng) -> Vec<f64> {
    let s = scale / (d as f64).sqrt();
    (0..d).map(|_| { let z: f64 = StandardNormal.sample(r); s * z }).collect::<Vec<f64>>()
}

/// `count` orthonormal vectors in `R^d` by Gram-Schmidt on Gaussian draws.
fn orthonormal_frame(d: usize, count: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v = gaussian(d, 1.0, r);
        for u in &frame {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= p * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            frame.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    frame
}

/// Per-genre instrument activation rates, each row summing to `mean`.
fn instrument_rates(cfg: &SynthConfig, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    (0..cfg.genres)
        .map(|_| {
            let w: Vec<f64> = (0..cfg.instruments).map(|_| r.random_range(0.1f64..1.0).powi(2)).collect();
            let mut rates = vec![0.0; cfg.instruments];
            // Water-filling: scale the free rates until the capped total hits `mean`.
            let mut capped = vec![false; cfg.instruments];
            for _ in 0..cfg.instruments {
                let fixed: f64 = capped.iter().filter(|&&c| c).count() as f64 * 0.95;
                let free: f64 = w.iter().zip(&capped).filter(|(_, &c)| !c).map(|(x, _)| x).sum();
                let k = if free > 0.0 { (cfg.mean_instruments - fixed) / free } else { 0.0 };
                let mut changed = false;
                for i in 0..cfg.instruments {
                    if !capped[i] {
                        rates[i] = w[i] * k;
                        if rates[i] > 0.95 {
                            capped[i] = true;
                            rates[i] = 0.95;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            rates
        })
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<Catalog> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut frame_rng = rng::stream(cfg.seed, 1);
    let frame = orthonormal_frame(d, cfg.moods + cfg.genres, &mut frame_rng);
    let mood_centroids: Vec<Vec<f64>> = frame[..cfg.moods]
        .iter()
        .map(|u| u.iter().map(|x| x * cfg.mood_axis_scale).collect())
        .collect();
    let genre_centroids: Vec<Vec<f64>> = frame[cfg.moods..]
        .iter()
        .map(|u| u.iter().map(|x| x * cfg.genre_axis_scale).collect())
        .collect();
    let rates = instrument_rates(cfg, &mut frame_rng);

    let mut r = rng::stream(cfg.seed, 2);
    let mut tracks = Vec::with_capacity(cfg.artists * cfg.tracks_per_artist);
    for a in 0..cfg.artists {
        let genre = r.random_range(0..cfg.genres);
        let offset = gaussian(d, cfg.artist_scale, &mut r);
        for _ in 0..cfg.tracks_per_artist {
            let mood = r.random_range(0..cfg.moods);
            let noise = gaussian(d, cfg.noise_scale, &mut r);
            let embedding: Vec<f32> = (0..d)
                .map(|i| (mood_centroids[mood][i] + genre_centroids[genre][i] + offset[i] + noise[i]) as f32)
                .collect();
            let instruments = (0..cfg.instruments)
                .filter(|&i| r.random::<f64>() < rates[genre][i])
                .map(|i| i as u32)
                .collect();
            tracks.push(Track {
                id: format!("t{:06}", tracks.len()),
                artist_id: format!("a{a:05}"),
                embedding,
                mood: MoodLabel(mood as u32),
                genre: genre as u32,
                instruments,
            });
        }
    }
    Catalog::new(tracks, cfg.moods)?.with_label_counts(cfg.genres, cfg.instruments)
}
