//! Incremental example mining.
//!
//! A training-subset selection strategy for incremental learning: every
//! example in the cumulative pool carries an error term built from its pixel
//! cross-entropy, lesion-level false positives and negatives and pixel
//! Jaccard index. Each training iteration takes the K hardest positives and
//! negatives plus K randomly drawn remaining ones of each label, and examples
//! selected too often are dropped as outliers.
//!
//! The crate also ships a small per-pixel logistic segmenter, a synthetic
//! lesion generator that delivers data in shifted chunks, and a harness that
//! compares full retraining, hard example mining, incremental mining and
//! naive fine-tuning under equal SGD budgets.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod pool;
pub mod raster;
pub mod selector;
pub mod synth;
pub mod trainer;

pub use config::{AugmentRecipe, RunConfig, SelectionConfig, TrainConfig};
pub use dataset::{Sample, SampleStore};
pub use error::{Error, Result};
pub use experiment::{run_strategy, Evaluation, ReportRow, RunOptions, RunOutcome, Strategy, StrategyReport};
pub use metrics::{ErrorVariant, ErrorWeights, MetricsBreakdown, ScoringConfig};
pub use model::{ModelParams, Segmenter};
pub use pool::{ExampleRecord, Label, PoolState};
pub use raster::{Dims, GrayImage, PixelMask, ProbabilityMap};
pub use selector::{select_subset, SelectedSubset, SelectionRng};
pub use synth::{ChunkSpec, IntensityShift, Scenario};
