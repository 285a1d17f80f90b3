//! Synthetic worlds with a known Bayes classifier, used to check the cache
//! classifier against its theory.
//!
//! * [`clusters`]: near-orthogonal Gaussian clusters.
//! * [`linear`]: a softmax linear classifier trained by full-batch gradient
//!   descent, compared with the class-balanced cache classifier.
//! * [`shift`]: a shifted test stream with augmented views and a known
//!   posterior.
//! * [`bounds`]: excess-error curves over cache size and boosting.
//!
//! Every generator is a pure function of its seed.

pub mod bounds;
pub mod clusters;
pub mod linear;
pub mod shift;

pub use bounds::{bound_experiment, excess_error, BoundGrid, RiskRow, RiskTable};
pub use clusters::{gen_clusters, ClusterSpec, LabeledSet};
pub use linear::{loss_and_grad, prop1_agreement, train_linear_ce, GdParams, LinearClassifier};
pub use shift::{gen_shift_stream, LabeledRecord, ShiftStreamSpec, ShiftWorld};
