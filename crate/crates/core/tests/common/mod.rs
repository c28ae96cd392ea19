//! Reference implementations used as oracles by the integration tests.
//! Written independently of the library code: plain loops, f64 throughout.

#![allow(dead_code)]

use std::collections::BTreeSet;

use moodshift::catalog::{SplitName, SplitRatios};
use moodshift::{Catalog, LossConfig, SplitAssignment, SynthConfig, Track, TrainConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Random catalog with Gaussian embeddings; `dup_every > 0` copies the
/// previous embedding every that many tracks to create exact ties.
pub fn random_catalog(n: usize, d: usize, m: usize, artists: usize, dup_every: usize, seed: u64) -> Catalog {
    let mut r = rng(seed);
    let mut tracks: Vec<Track> = Vec::with_capacity(n);
    for i in 0..n {
        let embedding: Vec<f32> = if dup_every > 0 && i > 0 && i % dup_every == 0 {
            tracks[i - 1].embedding.clone()
        } else {
            (0..d).map(|_| r.random_range(-1.0f32..1.0)).collect()
        };
        let instruments: BTreeSet<u32> = (0..6).filter(|_| r.random_bool(0.3)).collect();
        tracks.push(Track {
            id: format!("r{i:04}"),
            artist_id: format!("a{:03}", i % artists),
            embedding,
            mood: moodshift::MoodLabel(r.random_range(0..m as u32)),
            genre: r.random_range(0..5),
            instruments,
        });
    }
    Catalog::new(tracks, m).unwrap()
}

/// Exhaustive top-K scan: per mood, every other pool member sorted by
/// cosine descending, ties by id ascending.
pub fn naive_lists(catalog: &Catalog, pool: &[usize], k: usize) -> Vec<(String, Vec<Vec<(String, f64)>>)> {
    let m = catalog.mood_count();
    pool.iter()
        .map(|&s| {
            let seed = catalog.track(s);
            let xs = to_f64(&seed.embedding);
            let lists = (0..m)
                .map(|mu| {
                    let mut c: Vec<(String, f64)> = pool
                        .iter()
                        .filter(|&&j| j != s && catalog.track(j).mood.0 as usize == mu)
                        .map(|&j| {
                            let t = catalog.track(j);
                            (t.id.clone(), cosine(&xs, &to_f64(&t.embedding)))
                        })
                        .collect();
                    c.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
                    c.truncate(k);
                    c
                })
                .collect();
            (seed.id.clone(), lists)
        })
        .collect()
}

/// Jaccard of two label sets, `J(∅, ∅) = 1`.
pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Monte-Carlo mean Jaccard between independent Bernoulli label sets.
pub fn monte_carlo_jaccard(classes: usize, mean_labels: f64, draws: usize, seed: u64) -> f64 {
    let p = mean_labels / classes as f64;
    let mut r = rng(seed);
    let mut a = vec![false; classes];
    let mut b = vec![false; classes];
    let mut sum = 0.0;
    for _ in 0..draws {
        for i in 0..classes {
            a[i] = r.random::<f64>() < p;
            b[i] = r.random::<f64>() < p;
        }
        sum += jaccard(&a, &b);
    }
    sum / draws as f64
}

/// Joint loss of one batch computed row by row from scalar formulas.
pub fn scalar_loss(pred: &[Vec<f64>], target: &[Vec<f64>], seed: &[Vec<f64>], matches: &[bool], cfg: &LossConfig) -> [f64; 4] {
    let n = pred.len() as f64;
    let (mut c, mut t, mut b) = (0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        let ct = cosine(&pred[i], &target[i]);
        let cs = cosine(&pred[i], &seed[i]);
        c += 1.0 - ct;
        t += (cfg.alpha + cs - ct).max(0.0);
        let z = cfg.gamma * ct;
        let label = if matches[i] { cfg.t_match } else { cfg.t_mismatch };
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        b += softplus - label * z;
    }
    let (c, t, b) = (c / n, t / n, b / n);
    [cfg.lambda_cosine * c + cfg.lambda_triplet * t + cfg.lambda_cosbce * b, c, t, b]
}

pub fn synth_default() -> Catalog {
    moodshift::synth::generate(&SynthConfig::default()).unwrap()
}

pub fn default_split(catalog: &Catalog) -> SplitAssignment {
    moodshift::catalog::split_catalog(catalog, SplitRatios::default(), 0).unwrap()
}

/// Training setup of the end-to-end synthetic run.
pub fn synthetic_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        kfold: None,
        ..TrainConfig::small_scale()
    }
}

pub fn split_sizes(catalog: &Catalog, split: &SplitAssignment) -> [usize; 3] {
    SplitName::ALL.map(|s| split.indices(catalog, s).len())
}
