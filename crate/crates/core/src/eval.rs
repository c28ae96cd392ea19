//! Nearest-neighbor evaluation and the training-free baselines.
//!
//! Each query is a vector standing in for "the seed, moved to mood y_t".
//! Its nearest neighbor (cosine, ties to the smaller id) in the evaluation
//! pool, with the seed itself excluded, decides the metrics:
//!
//! - Mood P@1: neighbor mood equals the target mood.
//! - Genre P@1: neighbor genre equals the seed genre.
//! - Inst. J@1: Jaccard overlap of neighbor and seed instrument sets.

use std::collections::BTreeSet;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, MoodLabel, SplitAssignment, SplitName, Track};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{self, ModelParams, Mode};
use crate::simindex::{ResolvedMap, SimilarityMap};

/// Rows per forward batch when embedding evaluation queries.
const EVAL_BATCH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Model,
    Random,
    AvgMood,
    OracleTop1,
    OracleTop100,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Model,
        Method::Random,
        Method::AvgMood,
        Method::OracleTop1,
        Method::OracleTop100,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Model => "model",
            Method::Random => "random",
            Method::AvgMood => "avg-mood",
            Method::OracleTop1 => "oracle-top1",
            Method::OracleTop100 => "oracle-top100",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub mood_p1: f64,
    pub genre_p1: f64,
    /// Absent when the catalog has no instrument labels.
    pub inst_j1: Option<f64>,
    pub n_queries: usize,
    /// Queries dropped because no candidate existed (oracle modes).
    pub skipped: usize,
    /// `confusion[target_mood][retrieved_mood]`.
    pub confusion: Vec<Vec<u64>>,
    /// Random baseline only: collision probability of the empirical genre
    /// distribution, next to the uniform `1/|G|` reported in `genre_p1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre_p1_empirical: Option<f64>,
}

/// One evaluation query: the catalog index of the seed, the target mood, and
/// the vector to retrieve with.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub seed: usize,
    pub target_mood: MoodLabel,
    pub vector: Vec<f32>,
    /// Catalog index that wins similarity ties (the oracle's proxy target).
    pub prefer: Option<usize>,
}

/// Candidate tracks with unit-normalized embeddings, ready for exact scans.
#[derive(Debug, Clone)]
pub struct RetrievalPool {
    indices: Vec<usize>,
    ids: Vec<String>,
    unit: Vec<Vec<f64>>,
}

impl RetrievalPool {
    pub fn new(catalog: &Catalog, indices: &[usize]) -> Result<Self> {
        let unit = indices
            .iter()
            .map(|&i| linalg::normalized(&catalog.track(i).embedding).ok_or(Error::ZeroNorm { row: i }))
            .collect::<Result<_>>()?;
        Ok(RetrievalPool {
            indices: indices.to_vec(),
            ids: indices.iter().map(|&i| catalog.track(i).id.clone()).collect(),
            unit,
        })
    }

    pub fn for_split(catalog: &Catalog, split: &SplitAssignment, which: SplitName) -> Result<Self> {
        Self::new(catalog, &split.indices(catalog, which))
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Top-`k` pool members by cosine similarity, skipping catalog indices in
    /// `exclude`. Returns `(catalog index, similarity)`.
    pub fn top_k(&self, query: &[f32], exclude: &[usize], k: usize) -> Result<Vec<(usize, f64)>> {
        let q = linalg::normalized(query).ok_or(Error::ZeroNorm { row: 0 })?;
        if q.len() != self.unit.first().map_or(q.len(), |u| u.len()) {
            return Err(Error::Shape(format!("query dimension {}", q.len())));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.indices.len())
            .filter(|&p| !exclude.contains(&self.indices[p]))
            .map(|p| (p, linalg::dot(&q, &self.unit[p])))
            .collect();
        if scored.is_empty() {
            return Err(Error::EmptyPool);
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        scored.truncate(k);
        Ok(scored.into_iter().map(|(p, s)| (self.indices[p], s)).collect())
    }

    /// Catalog index of the nearest pool member not in `exclude`.
    pub fn nearest(&self, query: &[f32], exclude: &[usize]) -> Result<usize> {
        self.nearest_preferring(query, exclude, None)
    }

    /// As [`RetrievalPool::nearest`], but `prefer` wins exact ties.
    pub fn nearest_preferring(&self, query: &[f32], exclude: &[usize], prefer: Option<usize>) -> Result<usize> {
        let q = linalg::normalized(query).ok_or(Error::ZeroNorm { row: 0 })?;
        let mut best: Option<(usize, f64)> = None;
        for (p, u) in self.unit.iter().enumerate() {
            if exclude.contains(&self.indices[p]) {
                continue;
            }
            if u.len() != q.len() {
                return Err(Error::Shape(format!("query dimension {} vs pool {}", q.len(), u.len())));
            }
            let s = linalg::dot(&q, u);
            let better = match best {
                None => true,
                Some((bp, bs)) => {
                    s > bs
                        || (s == bs
                            && Some(self.indices[bp]) != prefer
                            && (Some(self.indices[p]) == prefer || self.ids[p] < self.ids[bp]))
                }
            };
            if better {
                best = Some((p, s));
            }
        }
        best.map(|(p, _)| self.indices[p]).ok_or(Error::EmptyPool)
    }
}

/// Nearest member of `pool` (catalog indices) to `query`, excluding ids in
/// `exclude`.
pub fn nearest_neighbor<'c>(
    catalog: &'c Catalog,
    pool: &[usize],
    query: &[f32],
    exclude: &BTreeSet<String>,
) -> Result<&'c Track> {
    let kept: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&i| !exclude.contains(&catalog.track(i).id))
        .collect();
    let idx = RetrievalPool::new(catalog, &kept)?.nearest(query, &[])?;
    Ok(catalog.track(idx))
}

/// Jaccard index with `J(∅, ∅) = 1`.
pub fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Every `(seed, target mood)` with the target differing from the seed mood.
pub fn enumerate_targets(catalog: &Catalog, seeds: &[usize]) -> Vec<(usize, MoodLabel)> {
    let m = catalog.mood_count() as u32;
    seeds
        .iter()
        .flat_map(|&s| {
            let own = catalog.track(s).mood;
            (0..m).map(MoodLabel).filter(move |&mu| mu != own).map(move |mu| (s, mu))
        })
        .collect()
}

/// Scores queries against `pool`.
pub fn evaluate_queries(
    catalog: &Catalog,
    pool: &RetrievalPool,
    queries: &[EvalQuery],
    method: Method,
) -> Result<EvalReport> {
    let hits: Vec<usize> = queries
        .par_iter()
        .map(|q| pool.nearest_preferring(&q.vector, &[q.seed], q.prefer))
        .collect::<Result<_>>()?;
    let m = catalog.mood_count();
    let mut confusion = vec![vec![0u64; m]; m];
    let (mut mood, mut genre, mut inst) = (0usize, 0usize, 0.0f64);
    for (q, &nn) in queries.iter().zip(&hits) {
        let seed = catalog.track(q.seed);
        let found = catalog.track(nn);
        confusion[q.target_mood.index()][found.mood.index()] += 1;
        mood += usize::from(found.mood == q.target_mood);
        genre += usize::from(found.genre == seed.genre);
        inst += jaccard(&found.instruments, &seed.instruments);
    }
    let n = queries.len();
    let frac = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(EvalReport {
        method,
        mood_p1: frac(mood as f64),
        genre_p1: frac(genre as f64),
        inst_j1: catalog.has_instruments().then(|| frac(inst)),
        n_queries: n,
        skipped: 0,
        confusion,
        genre_p1_empirical: None,
    })
}

/// Runs the model in eval mode on every `(seed, target)` pair.
pub fn model_queries(params: &ModelParams, catalog: &Catalog, targets: &[(usize, MoodLabel)]) -> Result<Vec<EvalQuery>> {
    let d = catalog.dim();
    if params.dim != d || params.mood_count != catalog.mood_count() {
        return Err(Error::Shape(format!(
            "checkpoint (d={}, m={}) does not match catalog (d={d}, m={})",
            params.dim,
            params.mood_count,
            catalog.mood_count()
        )));
    }
    let mut out = Vec::with_capacity(targets.len());
    for chunk in targets.chunks(EVAL_BATCH) {
        let mut x = Mat::zeros(chunk.len(), d);
        for (r, &(s, _)) in chunk.iter().enumerate() {
            x.row_mut(r).copy_from_slice(&catalog.track(s).embedding);
        }
        let y_s: Vec<MoodLabel> = chunk.iter().map(|&(s, _)| catalog.track(s).mood).collect();
        let y_t: Vec<MoodLabel> = chunk.iter().map(|&(_, t)| t).collect();
        let (pred, _) = model::forward(params, &x, &y_s, &y_t, Mode::Eval)?;
        for (r, &(seed, target_mood)) in chunk.iter().enumerate() {
            out.push(EvalQuery {
                seed,
                target_mood,
                vector: pred.row(r).to_vec(),
                prefer: None,
            });
        }
    }
    Ok(out)
}

/// Model metrics with `seeds` as queries and `pool` as retrieval set.
pub fn evaluate_params(
    params: &ModelParams,
    catalog: &Catalog,
    seeds: &[usize],
    pool: &RetrievalPool,
) -> Result<EvalReport> {
    let queries = model_queries(params, catalog, &enumerate_targets(catalog, seeds))?;
    for (i, q) in queries.iter().enumerate() {
        if q.vector.iter().any(|v| !v.is_finite()) || q.vector.iter().all(|&v| v == 0.0) {
            return Err(Error::NonFinite {
                what: "transformed embedding".into(),
                row: i,
            });
        }
    }
    evaluate_queries(catalog, pool, &queries, Method::Model)
}

/// Evaluates a trained model on split `which`: every seed there, every
/// other mood as target, retrieval within the same split.
pub fn evaluate_model(
    params: &ModelParams,
    catalog: &Catalog,
    split: &SplitAssignment,
    which: SplitName,
) -> Result<EvalReport> {
    let seeds = split.indices(catalog, which);
    let pool = RetrievalPool::new(catalog, &seeds)?;
    evaluate_params(params, catalog, &seeds, &pool)
}

/// Expected Jaccard index between two independent label sets where each of
/// `classes` labels is active with probability `mean_labels / classes`,
/// counting `J(∅, ∅) = 1`.
///
/// Given union size `u > 0`, each union member is shared with probability
/// `p² / q` (`q = 1 - (1-p)²`), so `E[J] = (1 - (1-q)^C) p²/q + (1-q)^C`.
pub fn expected_jaccard_bernoulli(classes: usize, mean_labels: f64) -> f64 {
    if classes == 0 {
        return 1.0;
    }
    let p = (mean_labels / classes as f64).clamp(0.0, 1.0);
    let q = 1.0 - (1.0 - p) * (1.0 - p);
    let none = (1.0 - q).powi(classes as i32);
    if q == 0.0 {
        return 1.0;
    }
    (1.0 - none) * p * p / q + none
}

/// Chance-level metrics from label cardinalities alone.
pub fn baseline_random(catalog: &Catalog) -> EvalReport {
    let m = catalog.mood_count();
    let g = catalog.genre_count().max(1);
    let mut counts = vec![0usize; g];
    for t in catalog.tracks() {
        counts[t.genre as usize] += 1;
    }
    let n = catalog.len() as f64;
    let empirical = counts.iter().map(|&c| (c as f64 / n).powi(2)).sum();
    let mean_labels = catalog.tracks().iter().map(|t| t.instruments.len()).sum::<usize>() as f64 / n;
    EvalReport {
        method: Method::Random,
        mood_p1: 1.0 / m as f64,
        genre_p1: 1.0 / g as f64,
        inst_j1: catalog
            .has_instruments()
            .then(|| expected_jaccard_bernoulli(catalog.instrument_count(), mean_labels)),
        n_queries: 0,
        skipped: 0,
        confusion: vec![vec![0; m]; m],
        genre_p1_empirical: Some(empirical),
    }
}

/// Mean raw embedding per mood over `indices`; `None` for absent moods.
pub fn mood_centroids(catalog: &Catalog, indices: &[usize]) -> Vec<Option<Vec<f32>>> {
    let m = catalog.mood_count();
    let d = catalog.dim();
    let mut sums = vec![vec![0.0f64; d]; m];
    let mut counts = vec![0usize; m];
    for &i in indices {
        let t = catalog.track(i);
        counts[t.mood.index()] += 1;
        for (s, &v) in sums[t.mood.index()].iter_mut().zip(&t.embedding) {
            *s += v as f64;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.iter().map(|v| (v / c as f64) as f32).collect()))
        .collect()
}

/// Queries with the target-mood centroid of the split.
pub fn baseline_avg_mood(catalog: &Catalog, split: &SplitAssignment, which: SplitName) -> Result<EvalReport> {
    let seeds = split.indices(catalog, which);
    let centroids = mood_centroids(catalog, &seeds);
    if let Some(mu) = centroids.iter().position(Option::is_none) {
        return Err(Error::InvalidInput(format!("mood {mu} is absent from the {which} split")));
    }
    let queries: Vec<EvalQuery> = enumerate_targets(catalog, &seeds)
        .into_iter()
        .map(|(seed, mu)| EvalQuery {
            seed,
            target_mood: mu,
            vector: centroids[mu.index()].clone().unwrap(),
            prefer: None,
        })
        .collect();
    let pool = RetrievalPool::new(catalog, &seeds)?;
    evaluate_queries(catalog, &pool, &queries, Method::AvgMood)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// Head of the seed's list for the target mood.
    Top1,
    /// Uniform draw from the whole list.
    TopK,
}

/// Queries with the proxy target's own embedding. `simmap` must be built over
/// the evaluation split.
pub fn baseline_oracle(
    catalog: &Catalog,
    simmap: &SimilarityMap,
    mode: OracleMode,
    rng: &mut impl rand::Rng,
) -> Result<EvalReport> {
    let resolved: ResolvedMap = simmap.resolve(catalog)?;
    let pool = RetrievalPool::new(catalog, &resolved.seed_index)?;
    let mut queries = Vec::new();
    let mut skipped = 0;
    for (pos, &seed) in resolved.seed_index.iter().enumerate() {
        for (_, mu) in enumerate_targets(catalog, &[seed]) {
            let list = &resolved.lists[pos][mu.index()];
            if list.is_empty() {
                skipped += 1;
                continue;
            }
            let target = match mode {
                OracleMode::Top1 => list[0],
                OracleMode::TopK => list[rng.random_range(0..list.len())],
            };
            queries.push(EvalQuery {
                seed,
                target_mood: mu,
                vector: catalog.track(target).embedding.clone(),
                prefer: Some(target),
            });
        }
    }
    if skipped > 0 {
        log::warn!("oracle baseline skipped {skipped} queries with empty candidate lists");
    }
    let method = match mode {
        OracleMode::Top1 => Method::OracleTop1,
        OracleMode::TopK => Method::OracleTop100,
    };
    let mut report = evaluate_queries(catalog, &pool, &queries, method)?;
    report.skipped = skipped;
    Ok(report)
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "method,mood_p1,genre_p1,inst_j1,n_queries,skipped"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{},{},{}",
            self.method,
            self.mood_p1,
            self.genre_p1,
            self.inst_j1.map(|v| format!("{v:.6}")).unwrap_or_default(),
            self.n_queries,
            self.skipped
        )
    }

    pub fn confusion_csv(&self) -> String {
        let m = self.confusion.len();
        let mut out = String::from("target");
        for j in 0..m {
            out.push_str(&format!(",retrieved_{j}"));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{SplitRatios, Track};
    use crate::rng;
    use crate::simindex::build_over_indices;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn catalog(n: usize, d: usize, seed: u64) -> Catalog {
        let mut r = rng::rng_from(seed);
        let tracks = (0..n)
            .map(|i| Track {
                id: format!("t{i:03}"),
                artist_id: format!("a{}", i % 9),
                embedding: (0..d).map(|_| StandardNormal.sample(&mut r)).collect(),
                mood: MoodLabel((i % 4) as u32),
                genre: (i % 3) as u32,
                instruments: (0..5u32).filter(|_| r.random::<f64>() < 0.4).collect(),
            })
            .collect();
        Catalog::new(tracks, 4).unwrap()
    }

    #[test]
    fn jaccard_cases() {
        let s = |v: &[u32]| v.iter().copied().collect::<BTreeSet<u32>>();
        assert!((jaccard(&s(&[1, 2]), &s(&[2, 3])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&s(&[]), &s(&[])), 1.0);
        assert_eq!(jaccard(&s(&[1]), &s(&[])), 0.0);
    }

    #[test]
    fn nearest_neighbor_contracts() {
        let cat = catalog(50, 6, 1);
        let pool: Vec<usize> = (0..50).collect();
        let q = cat.track(17).embedding.clone();
        assert_eq!(nearest_neighbor(&cat, &pool, &q, &BTreeSet::new()).unwrap().id, "t017");
        let ex: BTreeSet<String> = ["t017".to_string()].into();
        assert_ne!(nearest_neighbor(&cat, &pool, &q, &ex).unwrap().id, "t017");
        // Exhaustive oracle on random queries.
        let mut r = rng::rng_from(3);
        for _ in 0..20 {
            let q: Vec<f32> = (0..6).map(|_| StandardNormal.sample(&mut r)).collect();
            let mut best = (f64::NEG_INFINITY, String::new());
            for t in cat.tracks() {
                let s = crate::simindex::cosine_similarity(&q, &t.embedding).unwrap();
                if s > best.0 {
                    best = (s, t.id.clone());
                }
            }
            assert_eq!(nearest_neighbor(&cat, &pool, &q, &BTreeSet::new()).unwrap().id, best.1);
        }
        let all: BTreeSet<String> = cat.tracks().iter().map(|t| t.id.clone()).collect();
        assert!(matches!(nearest_neighbor(&cat, &pool, &q, &all), Err(Error::EmptyPool)));
    }

    #[test]
    fn nearest_tie_prefers_smaller_id() {
        let mk = |id: &str, e: Vec<f32>| Track {
            id: id.into(),
            artist_id: "a".into(),
            embedding: e,
            mood: MoodLabel(0),
            genre: 0,
            instruments: Default::default(),
        };
        let cat = Catalog::new(vec![mk("b", vec![1.0, 0.0]), mk("a", vec![2.0, 0.0]), mk("c", vec![0.0, 1.0])], 4).unwrap();
        let nn = nearest_neighbor(&cat, &[0, 1, 2], &[1.0, 0.1], &BTreeSet::new()).unwrap();
        assert_eq!(nn.id, "a");
    }

    #[test]
    fn random_baseline_values() {
        let mut tracks = Vec::new();
        for i in 0..40 {
            tracks.push(Track {
                id: format!("t{i}"),
                artist_id: "a".into(),
                embedding: vec![1.0],
                mood: MoodLabel(i % 4),
                genre: i % 20,
                instruments: Default::default(),
            });
        }
        let cat = Catalog::new(tracks, 4).unwrap();
        let r = baseline_random(&cat);
        assert_eq!(r.mood_p1, 0.25);
        assert_eq!(r.genre_p1, 0.05);
        assert!((r.genre_p1_empirical.unwrap() - 0.05).abs() < 1e-12);
        assert!(r.inst_j1.is_none());
    }

    #[test]
    fn jaccard_closed_form_limits() {
        assert_eq!(expected_jaccard_bernoulli(10, 0.0), 1.0);
        assert!((expected_jaccard_bernoulli(10, 10.0) - 1.0).abs() < 1e-12);
        let v = expected_jaccard_bernoulli(40, 2.77);
        assert!((v - 0.04).abs() < 0.005, "{v}");
    }

    #[test]
    fn enumeration_count() {
        let cat = catalog(20, 4, 2);
        let seeds: Vec<usize> = (0..20).collect();
        let t = enumerate_targets(&cat, &seeds);
        assert_eq!(t.len(), 20 * 3);
        assert!(t.iter().all(|&(s, mu)| cat.track(s).mood != mu));
    }

    #[test]
    fn singleton_centroid() {
        let cat = catalog(5, 3, 4);
        let c = mood_centroids(&cat, &[0, 1, 2, 3]);
        assert_eq!(c[2].as_ref().unwrap(), &cat.track(2).embedding);
    }

    #[test]
    fn oracle_is_perfect_on_mood() {
        let cat = catalog(80, 8, 5);
        let split = crate::catalog::split_catalog(&cat, SplitRatios { train: 1.0, val: 1.0, test: 3.0 }, 1).unwrap();
        let test = split.indices(&cat, SplitName::Test);
        let map = build_over_indices(&cat, &test, 100).unwrap();
        let mut r = rng::rng_from(0);
        for mode in [OracleMode::Top1, OracleMode::TopK] {
            let rep = baseline_oracle(&cat, &map, mode, &mut r).unwrap();
            assert_eq!(rep.mood_p1, 1.0);
            assert_eq!(rep.n_queries + rep.skipped, test.len() * 3);
            let total: u64 = rep.confusion.iter().flatten().sum();
            assert_eq!(total as usize, rep.n_queries);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
