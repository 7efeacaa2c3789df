//! Surrogate models for discontinuous functions: cluster the joint
//! input/output data, classify inputs into clusters, and regress per class.

pub mod active;
pub mod benchmarks;
pub mod clustering;
pub mod data;
pub mod error;
pub mod learners;
pub mod pipeline;
pub mod rng;

pub use active::{active_loop, ActiveConfig, Reservoir, ScoreKind, Strategy};
pub use clustering::{elbow_select, kmeans_fit, ClusterModel, ElbowReport, KMeansConfig};
pub use data::{fit_scaling, load_dataset, split, DataFormat, Dataset, ScalingTransform, SplitSpec};
pub use error::{CcrError, Result};
pub use learners::{ForestConfig, LearnerKind, MlpConfig, Regressor, SoftClassifier};
pub use pipeline::{ccr_fit, l2_score, metrics_table, r2_score, CcrConfig, CcrModel, Metrics};
