//! Runtime-free inference for small Mamba sequence classifiers.
//!
//! The crate covers dense tensor kernels, a reference and a fused streaming
//! selective scan, the Mamba block, a classifier with synthetic weights, a
//! static memory planner with an arena executor, the bundle and feature file
//! formats, and the batch evaluation harness behind the `mambalite` CLI.

pub mod alloc_probe;
pub mod bundle;
pub mod error;
pub mod harness;
pub mod mamba;
pub mod model;
pub mod par;
pub mod planned;
pub mod planner;
pub mod ssm;
pub mod tensor;

pub use bundle::{read_bundle, write_bundle, FeatureSet};
pub use error::{Error, Result};
pub use mamba::{MambaBlockParams, MambaConfig, ScanPath};
pub use model::{Classifier, ClassifierConfig, ClassifierParams, Pooling};
pub use par::Execution;
pub use planned::PlannedClassifier;
pub use planner::{MemoryPlan, ScheduleOptions, Strategy, Variant};
pub use tensor::Tensor;
