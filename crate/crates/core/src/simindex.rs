//! Exact per-mood top-K cosine neighbor lists and the proxy-target sampler.
//!
//! For every seed of a split the map stores, for each mood, the K most
//! cosine-similar tracks of that mood within the same split. Lists are
//! sorted by similarity descending with ties broken by ascending track id,
//! and a seed never appears in its own lists.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::catalog::{Catalog, MoodLabel, SplitAssignment, SplitName};
use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_K: usize = 100;
const MAGIC: &[u8; 4] = b"SIM1";
const VERSION: u32 = 1;

/// Cosine similarity of two equal-length, nonzero vectors.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let a = linalg::normalized(a).ok_or(Error::ZeroNorm { row: 0 })?;
    let b = linalg::normalized(b).ok_or(Error::ZeroNorm { row: 1 })?;
    Ok(unit_dot(&a, &b))
}

/// Dot product with a fixed four-lane accumulation order. Identical inputs
/// always produce identical bits, which the tie rule relies on.
fn unit_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedLists {
    pub seed_id: String,
    /// One ranked list per mood index.
    pub lists: Vec<Vec<Neighbor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    k: usize,
    mood_count: usize,
    /// Split the map was built over; not persisted in the file format.
    pub built_over: Option<SplitName>,
    seeds: Vec<SeedLists>,
    by_id: HashMap<String, usize>,
}

/// Heap entry ordered so that the heap top is the *worst* kept candidate.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    sim: f64,
    /// Position of the track id in lexicographic order.
    id_rank: usize,
    pool_pos: usize,
}

impl Candidate {
    /// `Less` means "ranks ahead of".
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .sim
            .partial_cmp(&self.sim)
            .unwrap_or(Ordering::Equal)
            .then(self.id_rank.cmp(&other.id_rank))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

impl SimilarityMap {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mood_count(&self) -> usize {
        self.mood_count
    }

    pub fn seeds(&self) -> &[SeedLists] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn lists(&self, seed_id: &str) -> Option<&[Vec<Neighbor>]> {
        self.by_id.get(seed_id).map(|&i| self.seeds[i].lists.as_slice())
    }

    fn from_seeds(k: usize, mood_count: usize, built_over: Option<SplitName>, seeds: Vec<SeedLists>) -> Self {
        let by_id = seeds.iter().enumerate().map(|(i, s)| (s.seed_id.clone(), i)).collect();
        SimilarityMap {
            k,
            mood_count,
            built_over,
            seeds,
            by_id,
        }
    }

    /// Replaces ids with catalog indices for fast sampling.
    pub fn resolve(&self, catalog: &Catalog) -> Result<ResolvedMap> {
        let lookup = |id: &str| {
            catalog
                .index_of(id)
                .ok_or_else(|| Error::InvalidInput(format!("similarity map references unknown track {id:?}")))
        };
        let mut seed_index = Vec::with_capacity(self.seeds.len());
        let mut lists = Vec::with_capacity(self.seeds.len());
        for s in &self.seeds {
            seed_index.push(lookup(&s.seed_id)?);
            lists.push(
                s.lists
                    .iter()
                    .map(|l| l.iter().map(|n| lookup(&n.id)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(ResolvedMap {
            mood_count: self.mood_count,
            seed_index,
            lists,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.k as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.mood_count as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.seeds.len() as u64).to_le_bytes()).map_err(io)?;
        for s in &self.seeds {
            write_str(&mut w, &s.seed_id).map_err(io)?;
            for list in &s.lists {
                w.write_all(&(list.len() as u32).to_le_bytes()).map_err(io)?;
                for n in list {
                    write_str(&mut w, &n.id).map_err(io)?;
                    w.write_all(&n.similarity.to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut r = ByteReader {
            bytes: &bytes,
            pos: 0,
            name: &name,
        };
        if r.take(4)? != MAGIC {
            return Err(Error::format(&name, "bad magic, expected \"SIM1\""));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(&name, format!("unsupported version {version}")));
        }
        let k = r.u32()? as usize;
        let m = r.u32()? as usize;
        let n = r.u64()? as usize;
        let mut seeds = Vec::with_capacity(n.min(bytes.len()));
        for _ in 0..n {
            let seed_id = r.string()?;
            let mut lists = Vec::with_capacity(m);
            for _ in 0..m {
                let len = r.u32()? as usize;
                let mut list = Vec::with_capacity(len.min(k));
                for _ in 0..len {
                    let id = r.string()?;
                    let similarity = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
                    list.push(Neighbor { id, similarity });
                }
                lists.push(list);
            }
            seeds.push(SeedLists { seed_id, lists });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(&name, "trailing bytes"));
        }
        Ok(SimilarityMap::from_seeds(k, m, None, seeds))
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format(self.name, format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(self.name, "invalid utf-8 id"))
    }
}

/// Builds the map over the tracks of `which` in `split`.
pub fn build_similarity_map(
    catalog: &Catalog,
    split: &SplitAssignment,
    which: SplitName,
    k: usize,
) -> Result<SimilarityMap> {
    let pool = split.indices(catalog, which);
    let mut map = build_over_indices(catalog, &pool, k)?;
    map.built_over = Some(which);
    Ok(map)
}

/// Builds the map with `pool` (catalog indices) serving as both seeds and
/// candidates.
pub fn build_over_indices(catalog: &Catalog, pool: &[usize], k: usize) -> Result<SimilarityMap> {
    if pool.is_empty() {
        return Err(Error::InvalidInput("cannot build a similarity map over an empty split".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    let m = catalog.mood_count();
    let vectors: Vec<Vec<f64>> = pool
        .iter()
        .map(|&i| linalg::normalized(&catalog.track(i).embedding).ok_or(Error::ZeroNorm { row: i }))
        .collect::<Result<_>>()?;
    let moods: Vec<usize> = pool.iter().map(|&i| catalog.track(i).mood.index()).collect();

    let mut by_id: Vec<usize> = (0..pool.len()).collect();
    by_id.sort_by(|&a, &b| catalog.track(pool[a]).id.cmp(&catalog.track(pool[b]).id));
    let mut id_rank = vec![0usize; pool.len()];
    for (rank, &p) in by_id.iter().enumerate() {
        id_rank[p] = rank;
    }

    let mut mood_sizes = vec![0usize; m];
    for &mu in &moods {
        mood_sizes[mu] += 1;
    }
    if let Some(mu) = mood_sizes.iter().position(|&c| c == 0) {
        log::warn!("split has no tracks of mood {mu}; those neighbor lists will be empty");
    }

    let seeds: Vec<SeedLists> = (0..pool.len())
        .into_par_iter()
        .map(|s| {
            let mut heaps: Vec<BinaryHeap<Candidate>> = (0..m).map(|_| BinaryHeap::with_capacity(k + 1)).collect();
            for c in 0..pool.len() {
                if c == s {
                    continue;
                }
                let cand = Candidate {
                    sim: unit_dot(&vectors[s], &vectors[c]),
                    id_rank: id_rank[c],
                    pool_pos: c,
                };
                let heap = &mut heaps[moods[c]];
                if heap.len() < k {
                    heap.push(cand);
                } else if cand.rank_cmp(heap.peek().unwrap()) == Ordering::Less {
                    heap.pop();
                    heap.push(cand);
                }
            }
            SeedLists {
                seed_id: catalog.track(pool[s]).id.clone(),
                lists: heaps
                    .into_iter()
                    .map(|h| {
                        h.into_sorted_vec()
                            .into_iter()
                            .map(|c| Neighbor {
                                id: catalog.track(pool[c.pool_pos]).id.clone(),
                                similarity: c.sim as f32,
                            })
                            .collect()
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(SimilarityMap::from_seeds(k, m, None, seeds))
}

/// A seed with a target mood and a proxy target embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub seed_id: String,
    pub target_id: String,
    pub x_s: Vec<f32>,
    pub y_s: MoodLabel,
    pub y_t: MoodLabel,
    pub x_t: Vec<f32>,
    /// The first mood drawn had an empty list and was redrawn.
    pub resampled: bool,
}

impl TrainingPair {
    pub fn is_identity(&self) -> bool {
        self.y_s == self.y_t
    }
}

/// Map with ids resolved to catalog indices.
#[derive(Debug, Clone)]
pub struct ResolvedMap {
    pub mood_count: usize,
    /// Catalog index of each seed, in map order.
    pub seed_index: Vec<usize>,
    /// `[seed][mood] -> catalog indices`, ranked.
    pub lists: Vec<Vec<Vec<usize>>>,
}

/// Outcome of one target draw: target mood plus the target's catalog
/// index (the seed itself for identity pairs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub mood: MoodLabel,
    pub target: usize,
    pub resampled: bool,
}

impl ResolvedMap {
    /// Draws a target mood uniformly over all moods, then a proxy target
    /// uniformly from the seed's list for that mood. Matching moods yield the
    /// identity pair.
    pub fn draw(&self, seed_pos: usize, seed_mood: MoodLabel, rng: &mut impl rand::Rng) -> Draw {
        let lists = &self.lists[seed_pos];
        let seed = self.seed_index[seed_pos];
        let mood = MoodLabel(rng.random_range(0..self.mood_count as u32));
        self.draw_for(seed, lists, seed_mood, mood, rng)
    }

    /// Same as [`ResolvedMap::draw`] with the target mood fixed.
    pub fn draw_with_mood(
        &self,
        seed_pos: usize,
        seed_mood: MoodLabel,
        mood: MoodLabel,
        rng: &mut impl rand::Rng,
    ) -> Draw {
        self.draw_for(self.seed_index[seed_pos], &self.lists[seed_pos], seed_mood, mood, rng)
    }

    fn draw_for(
        &self,
        seed: usize,
        lists: &[Vec<usize>],
        seed_mood: MoodLabel,
        mood: MoodLabel,
        rng: &mut impl rand::Rng,
    ) -> Draw {
        if mood == seed_mood {
            return Draw {
                mood,
                target: seed,
                resampled: false,
            };
        }
        let list = &lists[mood.index()];
        if !list.is_empty() {
            return Draw {
                mood,
                target: list[rng.random_range(0..list.len())],
                resampled: false,
            };
        }
        let alternatives: Vec<usize> = (0..self.mood_count)
            .filter(|&mu| mu != seed_mood.index() && !lists[mu].is_empty())
            .collect();
        if alternatives.is_empty() {
            return Draw {
                mood: seed_mood,
                target: seed,
                resampled: true,
            };
        }
        let mu = alternatives[rng.random_range(0..alternatives.len())];
        Draw {
            mood: MoodLabel(mu as u32),
            target: lists[mu][rng.random_range(0..lists[mu].len())],
            resampled: true,
        }
    }
}

fn pair_from_draw(catalog: &Catalog, seed: usize, draw: Draw) -> TrainingPair {
    let s = catalog.track(seed);
    let t = catalog.track(draw.target);
    TrainingPair {
        seed_id: s.id.clone(),
        target_id: t.id.clone(),
        x_s: s.embedding.clone(),
        y_s: s.mood,
        y_t: draw.mood,
        x_t: t.embedding.clone(),
        resampled: draw.resampled,
    }
}

fn seed_lookup(map: &SimilarityMap, catalog: &Catalog, seed_id: &str) -> Result<(usize, usize)> {
    let pos = *map
        .by_id
        .get(seed_id)
        .ok_or_else(|| Error::InvalidInput(format!("seed {seed_id:?} not in similarity map")))?;
    let idx = catalog
        .index_of(seed_id)
        .ok_or_else(|| Error::InvalidInput(format!("seed {seed_id:?} not in catalog")))?;
    Ok((pos, idx))
}

fn resolve_one(map: &SimilarityMap, catalog: &Catalog, pos: usize) -> Result<Vec<Vec<usize>>> {
    map.seeds[pos]
        .lists
        .iter()
        .map(|l| {
            l.iter()
                .map(|n| {
                    catalog
                        .index_of(&n.id)
                        .ok_or_else(|| Error::InvalidInput(format!("unknown track {:?}", n.id)))
                })
                .collect()
        })
        .collect()
}

/// Samples one training pair for `seed_id`.
pub fn sample_pair(
    map: &SimilarityMap,
    catalog: &Catalog,
    seed_id: &str,
    rng: &mut impl rand::Rng,
) -> Result<TrainingPair> {
    let mood = MoodLabel(rng.random_range(0..map.mood_count as u32));
    sample_pair_with_mood(map, catalog, seed_id, mood, rng)
}

/// Samples a pair with the target mood fixed to `mood`.
pub fn sample_pair_with_mood(
    map: &SimilarityMap,
    catalog: &Catalog,
    seed_id: &str,
    mood: MoodLabel,
    rng: &mut impl rand::Rng,
) -> Result<TrainingPair> {
    let (pos, idx) = seed_lookup(map, catalog, seed_id)?;
    if mood.index() >= map.mood_count {
        return Err(Error::InvalidInput(format!("mood {} out of range", mood.0)));
    }
    let resolved = ResolvedMap {
        mood_count: map.mood_count,
        seed_index: vec![idx],
        lists: vec![resolve_one(map, catalog, pos)?],
    };
    let draw = resolved.draw_with_mood(0, catalog.track(idx).mood, mood, rng);
    Ok(pair_from_draw(catalog, idx, draw))
}
