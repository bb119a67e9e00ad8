//! Learners trained on frames or PCA scores.

pub mod angle;
pub mod gpr;
pub mod knn;
pub mod mlp;
pub mod svm;

pub use gpr::{train_gpr, GprModel, HyperPolicy};
pub use knn::{knn, KnnModel};
pub use mlp::{train_classifier, train_mlp, MlpConfig, MlpModel, StopReason, Task, TrainReport};
pub use svm::{train_linear_svm, LinearSvm};
