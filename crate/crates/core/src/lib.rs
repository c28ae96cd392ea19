//! Mood-guided transformation of music embeddings.
//!
//! A seed track embedding plus a target mood label is mapped to a new
//! embedding that retrieves catalog tracks of the target mood while keeping
//! the seed's genre and instrumentation. The crate covers the whole
//! experimental pipeline:
//!
//! - [`catalog`]: track records, the binary embedding format, label
//!   reduction, and artist-disjoint stratified splits.
//! - [`simindex`]: exact per-mood top-K cosine neighbor lists and the
//!   training-pair sampler that draws proxy targets from them.
//! - [`model`]: the three-projector transformation network with a
//!   hand-written backward pass.
//! - [`losses`]: cosine, triplet-hinge and cosine-BCE objectives.
//! - [`train`]: AdamW, the epoch loop, model selection, loss ablation, k-fold.
//! - [`eval`]: nearest-neighbor metrics and training-free baselines.
//! - [`synth`]: synthetic catalogs with controllable cluster structure.

pub mod catalog;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod rng;
pub mod simindex;
pub mod synth;
pub mod train;

pub use catalog::{Catalog, MoodLabel, SplitAssignment, SplitName, Track};
pub use error::{Error, Result};
pub use eval::{EvalReport, Method};
pub use losses::{LossBreakdown, LossConfig};
pub use model::{Architecture, ModelParams, Params};
pub use simindex::{SimilarityMap, TrainingPair};
pub use synth::SynthConfig;
pub use train::{TrainConfig, TrainReport};
