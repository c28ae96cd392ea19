use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::TrackMeta;
use crate::error::{Error, Result};
use crate::rng;

/// Metadata before single-label reduction: tracks may carry several mood or
/// genre candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTrackMeta {
    pub id: String,
    pub artist: String,
    pub moods: Vec<u32>,
    pub genres: Vec<u32>,
    #[serde(default)]
    pub instruments: BTreeSet<u32>,
}

/// Keeps one mood and one genre per track, drawn uniformly from its
/// candidates. Instrument sets stay multi-label.
pub fn reduce_multilabels(raw: &[RawTrackMeta], seed: u64) -> Result<Vec<TrackMeta>> {
    let mut rng = rng::rng_from(seed);
    raw.iter()
        .map(|r| {
            if r.moods.is_empty() || r.genres.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "track {:?} has no mood or genre candidates",
                    r.id
                )));
            }
            let mood = r.moods[rng.random_range(0..r.moods.len())];
            let genre = r.genres[rng.random_range(0..r.genres.len())];
            Ok(TrackMeta {
                id: r.id.clone(),
                artist: r.artist.clone(),
                mood,
                genre,
                instruments: r.instruments.clone(),
            })
        })
        .collect()
}
