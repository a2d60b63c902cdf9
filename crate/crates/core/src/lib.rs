//! Iterative magnitude pruning laboratory: a small reverse-mode autodiff
//! engine, LeNet and a small conv net, global magnitude pruning with
//! rewinding, repellent and attractive losses, and similarity and stability
//! diagnostics over run directories.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod imp;
pub mod models;
pub mod pruning;
pub mod rng;
pub mod training;

pub use autodiff::{Element, Graph, Tensor, Var};
pub use data::{BatchPlan, Dataset, Split};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, RunDir, RunManifest};
pub use imp::{ImpConfig, OptimaStore, RoundRecord, Seeds, Variant};
pub use models::{Architecture, Model, ModelSpec, ParamSet};
pub use pruning::{Mask, PruneReport};
pub use training::{LrSchedule, MetricRow, OptimState, RepellenceConfig, TrainConfig};
