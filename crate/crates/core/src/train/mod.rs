//! Training loop, loss ablation and k-fold cross-validation.

mod adamw;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adamw::{AdamW, AdamWConfig};

use crate::catalog::{kfold_split, Catalog, SplitAssignment, SplitName};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, RetrievalPool};
use crate::linalg::Mat;
use crate::losses::{loss_total, LossBreakdown, LossConfig};
use crate::model::{self, Architecture, ModelParams, Mode};
use crate::rng;
use crate::simindex::{build_similarity_map, SimilarityMap, DEFAULT_K};

// Stream tags for seed derivation.
const STREAM_INIT: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    /// Fixed learning rate.
    #[default]
    Constant,
    /// Linear decay from the base rate to zero over all steps.
    LinearDecay,
}

/// Weights of the validation score used to pick the best loss combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionWeights {
    pub mood: f64,
    pub genre: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        SelectionWeights { mood: 0.6, genre: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub loss: LossConfig,
    pub architecture: Architecture,
    /// Neighbor-list length of the similarity maps.
    pub k: usize,
    pub kfold: Option<usize>,
    pub selection: SelectionWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::large_scale()
    }
}

impl TrainConfig {
    /// 100 epochs at 1e-5, for catalogs on the order of a million tracks.
    pub fn large_scale() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 1024,
            learning_rate: 1e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            schedule: LrSchedule::Constant,
            loss: LossConfig::default(),
            architecture: Architecture::default(),
            k: DEFAULT_K,
            kfold: None,
            selection: SelectionWeights::default(),
        }
    }

    /// 500 epochs at 5e-4 with 3-fold cross-validation, for catalogs of a few
    /// thousand tracks.
    pub fn small_scale() -> Self {
        TrainConfig {
            epochs: 500,
            learning_rate: 5e-4,
            kfold: Some(3),
            ..Self::large_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || self.k == 0 {
            return Err(Error::InvalidInput(format!(
                "need epochs >= 1, batch_size >= 1, learning_rate > 0, k >= 1 (got {}, {}, {}, {})",
                self.epochs, self.batch_size, self.learning_rate, self.k
            )));
        }
        self.loss.validate()
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_mood_p1: f64,
    pub val_genre_p1: f64,
    pub samples: usize,
    pub identity_pairs: usize,
    pub resampled_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the highest validation Mood P@1 (earliest on ties).
    pub best_epoch: usize,
    pub best_val_mood_p1: f64,
    pub best_val_genre_p1: f64,
    pub param_checksum: u64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,total,cosine,triplet,cosbce,val_mood_p1,val_genre_p1,samples,identity_pairs,resampled_pairs\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.8},{:.8},{:.8},{:.8},{:.6},{:.6},{},{},{}\n",
                e.epoch,
                e.loss.total,
                e.loss.cosine,
                e.loss.triplet,
                e.loss.cosbce,
                e.val_mood_p1,
                e.val_genre_p1,
                e.samples,
                e.identity_pairs,
                e.resampled_pairs
            ));
        }
        out
    }
}

/// Report plus the parameters of the selected epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub params: ModelParams,
}

fn check_leakage(catalog: &Catalog, split: &SplitAssignment, simmap: &SimilarityMap) -> Result<()> {
    if let Some(b) = simmap.built_over {
        if b != SplitName::Train {
            return Err(Error::InvalidInput(format!("similarity map was built over {b}, not train")));
        }
    }
    for s in simmap.seeds() {
        let ids = std::iter::once(&s.seed_id).chain(s.lists.iter().flatten().map(|n| &n.id));
        for id in ids {
            if split.get(id) != Some(SplitName::Train) {
                return Err(Error::InvalidInput(format!(
                    "similarity map references {id:?}, which is not a training track"
                )));
            }
            if catalog.index_of(id).is_none() {
                return Err(Error::InvalidInput(format!("similarity map references unknown track {id:?}")));
            }
        }
    }
    Ok(())
}

/// Trains a model on pairs drawn from `simmap` (built over the training
/// split) and keeps the epoch with the best validation Mood P@1.
pub fn train_model(
    catalog: &Catalog,
    split: &SplitAssignment,
    simmap: &SimilarityMap,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_leakage(catalog, split, simmap)?;
    let resolved = simmap.resolve(catalog)?;
    let n = resolved.seed_index.len();
    if n == 0 {
        return Err(Error::InvalidInput("similarity map has no seeds".into()));
    }
    let val_seeds = split.indices(catalog, SplitName::Val);
    if val_seeds.len() < 2 {
        return Err(Error::InvalidInput("validation split needs at least two tracks".into()));
    }
    let val_pool = RetrievalPool::new(catalog, &val_seeds)?;

    let d = catalog.dim();
    let m = catalog.mood_count();
    let mut params: ModelParams =
        model::init_params(d, m, config.architecture, rng::derive_seed(config.seed, STREAM_INIT))?;
    let mut opt = AdamW::new(&params, config.adamw());
    let mut data_rng = rng::stream(config.seed, STREAM_DATA);
    let mut drop_rng = rng::stream(config.seed, STREAM_DROPOUT);

    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, f64, ModelParams)> = None;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut data_rng);
        let mut sums = LossBreakdown::default();
        let (mut identity, mut resampled) = (0usize, 0usize);
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let b = chunk.len();
            let mut x_s = Mat::<f32>::zeros(b, d);
            let mut x_t = Mat::<f32>::zeros(b, d);
            let mut y_s = Vec::with_capacity(b);
            let mut y_t = Vec::with_capacity(b);
            for (r, &pos) in chunk.iter().enumerate() {
                let seed = catalog.track(resolved.seed_index[pos]);
                let draw = resolved.draw(pos, seed.mood, &mut data_rng);
                identity += usize::from(draw.mood == seed.mood);
                resampled += usize::from(draw.resampled);
                x_s.row_mut(r).copy_from_slice(&seed.embedding);
                x_t.row_mut(r).copy_from_slice(&catalog.track(draw.target).embedding);
                y_s.push(seed.mood);
                y_t.push(draw.mood);
            }
            let (pred, trace) = model::forward(&params, &x_s, &y_s, &y_t, Mode::Train(&mut drop_rng))?;
            let matches: Vec<bool> = y_s.iter().zip(&y_t).map(|(a, b)| a == b).collect();
            let (losses, grad) = match loss_total(&pred.cast(), &x_t.cast(), &x_s.cast(), &matches, &config.loss) {
                Ok(v) => v,
                Err(Error::ZeroNorm { .. }) => return Err(Error::Diverged { epoch, step: batch_no }),
                Err(e) => return Err(e),
            };
            if !losses.total.is_finite() {
                return Err(Error::Diverged { epoch, step: batch_no });
            }
            let w = b as f64;
            sums.total += losses.total * w;
            sums.cosine += losses.cosine * w;
            sums.triplet += losses.triplet * w;
            sums.cosbce += losses.cosbce * w;
            sums.batch_size += b;

            let grads = model::backward(&params, &trace, &grad.cast())?;
            let lr = match config.schedule {
                LrSchedule::Constant => config.learning_rate,
                LrSchedule::LinearDecay => config.learning_rate * (1.0 - step as f64 / total_steps),
            };
            opt.step(&mut params, &grads, lr)?;
            step += 1;
        }
        let w = sums.batch_size as f64;
        let loss = LossBreakdown {
            total: sums.total / w,
            cosine: sums.cosine / w,
            triplet: sums.triplet / w,
            cosbce: sums.cosbce / w,
            batch_size: config.batch_size,
        };
        let val = eval::evaluate_params(&params, catalog, &val_seeds, &val_pool)?;
        log::debug!(
            "epoch {epoch}: loss {:.5} val mood {:.4} genre {:.4}",
            loss.total,
            val.mood_p1,
            val.genre_p1
        );
        if best.as_ref().is_none_or(|b| val.mood_p1 > b.1) {
            best = Some((epoch, val.mood_p1, val.genre_p1, params.clone()));
        }
        records.push(EpochRecord {
            epoch,
            loss,
            val_mood_p1: val.mood_p1,
            val_genre_p1: val.genre_p1,
            samples: sums.batch_size,
            identity_pairs: identity,
            resampled_pairs: resampled,
        });
    }
    let (best_epoch, best_val_mood_p1, best_val_genre_p1, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        report: TrainReport {
            epochs: records,
            best_epoch,
            best_val_mood_p1,
            best_val_genre_p1,
            param_checksum: params.checksum(),
            checkpoint: None,
        },
        params,
    })
}

/// Loss-weight combinations in `{0,1}^3 \ {0}`, named by active terms.
pub fn ablation_grid() -> Vec<(String, [f64; 3])> {
    let names = ["cosine", "triplet", "cosbce"];
    let masks = [
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 1, 0],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ];
    masks
        .iter()
        .map(|mask| {
            let name = names
                .iter()
                .zip(mask)
                .filter(|(_, &on)| on == 1)
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join("+");
            (name, mask.map(|v| v as f64))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub combo: String,
    pub lambdas: [f64; 3],
    pub val_mood_p1: f64,
    pub val_genre_p1: f64,
    /// Weighted validation score used for configuration selection.
    pub selection_score: f64,
    pub mood_p1: f64,
    pub genre_p1: f64,
    pub inst_j1: Option<f64>,
    pub mood_pp_vs_random: f64,
    pub genre_pp_vs_random: f64,
    pub param_checksum: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub random: EvalReport,
    /// Row with the highest selection score.
    pub selected: Option<usize>,
}

impl AblationTable {
    pub fn row(&self, combo: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.combo == combo)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("combo,mood_p1,genre_p1,inst_j1,mood_pp_vs_random,genre_pp_vs_random\n");
        for r in &self.rows {
            if r.error.is_some() {
                out.push_str(&format!("{},failed,failed,failed,failed,failed\n", r.combo));
                continue;
            }
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{:.2},{:.2}\n",
                r.combo,
                r.mood_p1,
                r.genre_p1,
                r.inst_j1.map(|v| format!("{v:.6}")).unwrap_or_default(),
                r.mood_pp_vs_random,
                r.genre_pp_vs_random
            ));
        }
        out
    }

    /// Percentage points above the random baseline, one row per combination.
    pub fn pp_view(&self) -> String {
        let mut out = String::from("combo,mood_pp,genre_pp,inst_pp,selected\n");
        for (i, r) in self.rows.iter().enumerate() {
            if r.error.is_some() {
                out.push_str(&format!("{},failed,failed,failed,false\n", r.combo));
                continue;
            }
            let inst = match (r.inst_j1, self.random.inst_j1) {
                (Some(a), Some(b)) => format!("{:.2}", 100.0 * (a - b)),
                _ => String::new(),
            };
            out.push_str(&format!(
                "{},{:.2},{:.2},{},{}\n",
                r.combo,
                r.mood_pp_vs_random,
                r.genre_pp_vs_random,
                inst,
                self.selected == Some(i)
            ));
        }
        out
    }
}

/// Trains every loss combination with the same seed and scores each on the
/// test split. A failed cell is recorded, not propagated.
pub fn run_ablation(
    catalog: &Catalog,
    split: &SplitAssignment,
    simmap: &SimilarityMap,
    base: &TrainConfig,
) -> Result<AblationTable> {
    let random = eval::baseline_random(catalog);
    let rows: Vec<AblationRow> = ablation_grid()
        .into_par_iter()
        .map(|(combo, lambdas)| {
            let config = TrainConfig {
                loss: base.loss.with_lambdas(lambdas[0], lambdas[1], lambdas[2]),
                ..base.clone()
            };
            let result = train_model(catalog, split, simmap, &config).and_then(|outcome| {
                let test = eval::evaluate_model(&outcome.params, catalog, split, SplitName::Test)?;
                Ok((outcome.report, test))
            });
            match result {
                Ok((report, test)) => AblationRow {
                    combo,
                    lambdas,
                    val_mood_p1: report.best_val_mood_p1,
                    val_genre_p1: report.best_val_genre_p1,
                    selection_score: base.selection.mood * report.best_val_mood_p1
                        + base.selection.genre * report.best_val_genre_p1,
                    mood_p1: test.mood_p1,
                    genre_p1: test.genre_p1,
                    inst_j1: test.inst_j1,
                    mood_pp_vs_random: 100.0 * (test.mood_p1 - random.mood_p1),
                    genre_pp_vs_random: 100.0 * (test.genre_p1 - random.genre_p1),
                    param_checksum: report.param_checksum,
                    error: None,
                },
                Err(e) => {
                    log::error!("ablation cell {combo} failed: {e}");
                    AblationRow {
                        combo,
                        lambdas,
                        val_mood_p1: f64::NAN,
                        val_genre_p1: f64::NAN,
                        selection_score: f64::NAN,
                        mood_p1: f64::NAN,
                        genre_p1: f64::NAN,
                        inst_j1: None,
                        mood_pp_vs_random: f64::NAN,
                        genre_pp_vs_random: f64::NAN,
                        param_checksum: 0,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let selected = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.error.is_none())
        .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
            Some((_, s)) if s >= r.selection_score => acc,
            _ => Some((i, r.selection_score)),
        })
        .map(|(i, _)| i);
    Ok(AblationTable { rows, random, selected })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub report: TrainReport,
    pub test: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub mood_p1: f64,
    pub genre_p1: f64,
    pub inst_j1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
}

/// Mean of per-fold test metrics.
pub fn mean_metrics<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> MeanMetrics {
    let reports: Vec<&EvalReport> = reports.into_iter().collect();
    let n = reports.len() as f64;
    let inst: Option<Vec<f64>> = reports.iter().map(|r| r.inst_j1).collect();
    MeanMetrics {
        mood_p1: reports.iter().map(|r| r.mood_p1).sum::<f64>() / n,
        genre_p1: reports.iter().map(|r| r.genre_p1).sum::<f64>() / n,
        inst_j1: inst.map(|v| v.iter().sum::<f64>() / n),
    }
}

/// One model per fold of a `k`-fold 8:1:1 resplit; test metrics averaged.
pub fn train_kfold(catalog: &Catalog, k: usize, config: &TrainConfig) -> Result<KFoldReport> {
    let splits = kfold_split(catalog, k, config.seed)?;
    let folds = splits
        .iter()
        .enumerate()
        .map(|(fold, split)| {
            let seed = rng::derive_seed(config.seed, 1000 + fold as u64);
            let simmap = build_similarity_map(catalog, split, SplitName::Train, config.k)?;
            let outcome = train_model(catalog, split, &simmap, &TrainConfig { seed, ..config.clone() })?;
            let test = eval::evaluate_model(&outcome.params, catalog, split, SplitName::Test)?;
            Ok(FoldResult {
                fold,
                seed,
                report: outcome.report,
                test,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_metrics(folds.iter().map(|f| &f.test));
    Ok(KFoldReport { folds, mean })
}

/// Empirical share of identity pairs (target mood = seed mood) in a report.
pub fn identity_fraction(report: &TrainReport) -> f64 {
    let (id, n) = report
        .epochs
        .iter()
        .fold((0usize, 0usize), |(a, b), e| (a + e.identity_pairs, b + e.samples));
    id as f64 / n.max(1) as f64
}

/// Distinct artists per split, for diagnostics.
pub fn split_artist_counts(catalog: &Catalog, split: &SplitAssignment) -> [usize; 3] {
    SplitName::ALL.map(|s| split.artists(catalog, s).len())
}
