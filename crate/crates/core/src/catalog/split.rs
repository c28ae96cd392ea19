//! Artist-disjoint, mood-stratified train/validation/test splits.
//!
//! Whole artists are assigned to splits. Artists are visited largest first
//! (seeded shuffle breaks count ties) and each one goes to the split whose
//! remaining per-mood track quota best matches the artist's own mood
//! histogram. That keeps split sizes near the requested ratios and each
//! split's mood mix near the global mix.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Catalog;
use crate::error::{Error, Result};
use crate::rng;

/// Largest tolerated gap between a split's mood share and the global share
/// before a warning is logged.
pub const STRATIFICATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    fn validate(&self) -> Result<()> {
        let r = self.as_array();
        if r.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput(format!("split ratios must be positive: {r:?}")));
        }
        Ok(())
    }
}

/// Track id to split. Serialized as a flat JSON object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, SplitName>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<SplitName> {
        self.assignments.get(id).copied()
    }

    /// Catalog indices of the tracks in `split`, in catalog order.
    pub fn indices(&self, catalog: &Catalog, split: SplitName) -> Vec<usize> {
        catalog
            .tracks()
            .iter()
            .enumerate()
            .filter(|(_, t)| self.get(&t.id) == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn artists(&self, catalog: &Catalog, split: SplitName) -> HashSet<String> {
        self.indices(catalog, split)
            .into_iter()
            .map(|i| catalog.track(i).artist_id.clone())
            .collect()
    }

    /// Checks that every catalog track is assigned and no artist spans two
    /// splits.
    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        if self.assignments.len() != catalog.len() {
            return Err(Error::Split(format!(
                "assignment covers {} tracks, catalog has {}",
                self.assignments.len(),
                catalog.len()
            )));
        }
        let mut owner: BTreeMap<&str, SplitName> = BTreeMap::new();
        for t in catalog.tracks() {
            let s = self
                .get(&t.id)
                .ok_or_else(|| Error::Split(format!("track {:?} is unassigned", t.id)))?;
            if let Some(prev) = owner.insert(&t.artist_id, s) {
                if prev != s {
                    return Err(Error::Split(format!(
                        "artist {:?} appears in both {prev} and {s}",
                        t.artist_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-split mood shares minus global mood shares, `[split][mood]`.
    pub fn mood_deviation(&self, catalog: &Catalog) -> [Vec<f64>; 3] {
        let m = catalog.mood_count();
        let global = mood_shares(catalog, 0..catalog.len());
        SplitName::ALL.map(|s| {
            let shares = mood_shares(catalog, self.indices(catalog, s).into_iter());
            (0..m).map(|k| shares[k] - global[k]).collect()
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn mood_shares(catalog: &Catalog, idx: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut counts = vec![0usize; catalog.mood_count()];
    let mut n = 0usize;
    for i in idx {
        counts[catalog.track(i).mood.index()] += 1;
        n += 1;
    }
    counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect()
}

struct ArtistGroup {
    tracks: Vec<usize>,
    moods: Vec<usize>,
}

pub fn split_catalog(catalog: &Catalog, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    ratios.validate()?;
    let m = catalog.mood_count();

    let mut groups: BTreeMap<&str, ArtistGroup> = BTreeMap::new();
    for (i, t) in catalog.tracks().iter().enumerate() {
        let g = groups.entry(&t.artist_id).or_insert_with(|| ArtistGroup {
            tracks: Vec::new(),
            moods: vec![0; m],
        });
        g.tracks.push(i);
        g.moods[t.mood.index()] += 1;
    }
    if groups.len() < 3 {
        return Err(Error::Split(format!(
            "need at least 3 artists for a 3-way split, catalog has {}",
            groups.len()
        )));
    }
    let mut groups: Vec<ArtistGroup> = groups.into_values().collect();
    groups.shuffle(&mut rng::rng_from(seed));
    groups.sort_by(|a, b| b.tracks.len().cmp(&a.tracks.len()));

    let r = ratios.as_array();
    let total: f64 = r.iter().sum();
    let r = r.map(|x| x / total);
    let mut global = vec![0usize; m];
    for t in catalog.tracks() {
        global[t.mood.index()] += 1;
    }
    // Remaining track quota per split and mood.
    let mut need: Vec<Vec<f64>> = r
        .iter()
        .map(|&ri| global.iter().map(|&g| ri * g as f64).collect())
        .collect();
    let mut members: [Vec<usize>; 3] = Default::default();

    for (gi, g) in groups.iter().enumerate() {
        let mut best = 0;
        let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in 0..3 {
            let fit: f64 = g.moods.iter().zip(&need[s]).map(|(&c, &q)| c as f64 * q).sum();
            let size: f64 = need[s].iter().sum();
            let key = (fit, size);
            if key.0 > best_key.0 || (key.0 == best_key.0 && key.1 > best_key.1) {
                best = s;
                best_key = key;
            }
        }
        for (q, &c) in need[best].iter_mut().zip(&g.moods) {
            *q -= c as f64;
        }
        members[best].push(gi);
    }

    // Every split must hold at least one artist.
    for s in 0..3 {
        if members[s].is_empty() {
            let donor = (0..3).max_by_key(|&d| (members[d].len(), usize::MAX - d)).unwrap();
            let smallest = *members[donor]
                .iter()
                .min_by_key(|&&gi| (groups[gi].tracks.len(), gi))
                .unwrap();
            members[donor].retain(|&gi| gi != smallest);
            members[s].push(smallest);
        }
    }

    let mut assignment = SplitAssignment::default();
    for (s, name) in SplitName::ALL.iter().enumerate() {
        debug_assert_eq!(name.slot(), s);
        for &gi in &members[s] {
            for &ti in &groups[gi].tracks {
                assignment.assignments.insert(catalog.track(ti).id.clone(), *name);
            }
        }
    }

    let worst = assignment
        .mood_deviation(catalog)
        .iter()
        .flatten()
        .fold(0.0f64, |acc, d| acc.max(d.abs()));
    if worst > STRATIFICATION_TOLERANCE {
        log::warn!(
            "mood stratification off by {:.1} pp (tolerance {:.0} pp); catalog too small or artists too skewed",
            worst * 100.0,
            STRATIFICATION_TOLERANCE * 100.0
        );
    }
    Ok(assignment)
}

/// `k` independent 8:1:1 splits, each drawn with its own derived seed.
pub fn kfold_split(catalog: &Catalog, k: usize, seed: u64) -> Result<Vec<SplitAssignment>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k-fold needs k >= 2, got {k}")));
    }
    (0..k)
        .map(|fold| split_catalog(catalog, SplitRatios::default(), rng::derive_seed(seed, fold as u64)))
        .collect()
}
