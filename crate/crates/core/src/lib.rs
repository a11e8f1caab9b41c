//! Fine-grained mixture-of-experts reward head for paired video preference.
//!
//! The head consumes precomputed feature vectors. An aspect gate routes each
//! input over the aspects of a [`Taxonomy`]; a criteria gate weights
//! per-criterion regression scores within each aspect; the overall score is
//! the routing-weighted sum of aspect scores. Training runs in three stages
//! (criteria regression, aspect ranking, joint ranking) and evaluation
//! reports strict and tie-aware preference accuracy plus per-criterion Acc/F1.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradients;
pub mod head;
pub mod losses;
pub mod optim;
pub mod parallel;
pub mod schedule;
pub mod taxonomy;
pub mod trainer;

pub use data::{AnnotatedPair, SyntheticSpec};
pub use error::{Error, Result};
pub use head::{FeatureVector, HeadOutput, Preference, RewardHeadParams, TensorId};
pub use losses::{Stage, StageWeights};
pub use taxonomy::{default_taxonomy, Taxonomy};
pub use trainer::TrainConfig;
