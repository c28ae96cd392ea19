//! Track catalog: typed records, file formats, label reduction and splits.

mod io;
mod labels;
mod split;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_catalog, read_embeddings, read_metadata, save_catalog, write_embeddings, write_metadata};
pub use labels::{reduce_multilabels, RawTrackMeta};
pub use split::{kfold_split, split_catalog, SplitAssignment, SplitName, SplitRatios};

pub const DEFAULT_MOOD_COUNT: usize = 4;
pub const DEFAULT_DIM: usize = 1728;

/// Index into the mood set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MoodLabel(pub u32);

impl MoodLabel {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn one_hot(self, mood_count: usize) -> Vec<f64> {
        let mut v = vec![0.0; mood_count];
        v[self.index()] = 1.0;
        v
    }
}

/// Per-track metadata, one JSON object per line of the metadata file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackMeta {
    pub id: String,
    pub artist: String,
    pub mood: u32,
    pub genre: u32,
    pub instruments: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: String,
    pub artist_id: String,
    pub embedding: Vec<f32>,
    pub mood: MoodLabel,
    pub genre: u32,
    pub instruments: BTreeSet<u32>,
}

impl Track {
    pub fn meta(&self) -> TrackMeta {
        TrackMeta {
            id: self.id.clone(),
            artist: self.artist_id.clone(),
            mood: self.mood.0,
            genre: self.genre,
            instruments: self.instruments.clone(),
        }
    }
}

/// Immutable, validated set of tracks sharing one embedding dimension.
#[derive(Debug, Clone)]
pub struct Catalog {
    tracks: Vec<Track>,
    dim: usize,
    mood_count: usize,
    genre_count: usize,
    instrument_count: usize,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    /// Validates and assembles a catalog. Genre and instrument counts are
    /// inferred as `max + 1` over the tracks; use [`Catalog::with_label_counts`]
    /// to declare larger taxonomies.
    pub fn new(tracks: Vec<Track>, mood_count: usize) -> Result<Self> {
        if mood_count < 2 {
            return Err(Error::InvalidInput(format!(
                "mood_count must be at least 2, got {mood_count}"
            )));
        }
        let dim = tracks.first().map_or(0, |t| t.embedding.len());
        if tracks.is_empty() || dim == 0 {
            return Err(Error::InvalidInput("catalog has no tracks or zero dimension".into()));
        }
        let mut by_id = HashMap::with_capacity(tracks.len());
        for (row, t) in tracks.iter().enumerate() {
            if t.embedding.len() != dim {
                return Err(Error::Shape(format!(
                    "row {row}: embedding dimension {} != {dim}",
                    t.embedding.len()
                )));
            }
            validate_embedding(&t.embedding, row)?;
            if t.mood.index() >= mood_count {
                return Err(Error::InvalidInput(format!(
                    "mood out of range, row {row}: {} >= {mood_count}",
                    t.mood.0
                )));
            }
            if by_id.insert(t.id.clone(), row).is_some() {
                return Err(Error::InvalidInput(format!("duplicate id {:?} at row {row}", t.id)));
            }
        }
        let genre_count = tracks.iter().map(|t| t.genre as usize + 1).max().unwrap_or(0);
        let instrument_count = tracks
            .iter()
            .filter_map(|t| t.instruments.iter().next_back())
            .map(|&i| i as usize + 1)
            .max()
            .unwrap_or(0);
        Ok(Catalog {
            tracks,
            dim,
            mood_count,
            genre_count,
            instrument_count,
            by_id,
        })
    }

    pub fn with_label_counts(mut self, genre_count: usize, instrument_count: usize) -> Result<Self> {
        if genre_count < self.genre_count || instrument_count < self.instrument_count {
            return Err(Error::InvalidInput(format!(
                "declared label counts ({genre_count} genres, {instrument_count} instruments) \
                 smaller than observed ({}, {})",
                self.genre_count, self.instrument_count
            )));
        }
        self.genre_count = genre_count;
        self.instrument_count = instrument_count;
        Ok(self)
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, index: usize) -> &Track {
        &self.tracks[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Track> {
        self.index_of(id).map(|i| &self.tracks[i])
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mood_count(&self) -> usize {
        self.mood_count
    }

    pub fn genre_count(&self) -> usize {
        self.genre_count
    }

    pub fn instrument_count(&self) -> usize {
        self.instrument_count
    }

    /// Whether any track carries instrument labels.
    pub fn has_instruments(&self) -> bool {
        self.tracks.iter().any(|t| !t.instruments.is_empty())
    }
}

pub(crate) fn validate_embedding(v: &[f32], row: usize) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "embedding".into(),
            row,
        });
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroNorm { row });
    }
    Ok(())
}
