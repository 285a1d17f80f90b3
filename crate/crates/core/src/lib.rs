//! Training-free test-time adaptation for zero-shot embedding classifiers.
//!
//! A zero-shot cosine classifier over a [`ClassBank`] is combined with a small
//! key-value cache of confident past test samples (historical samples) and of
//! confident augmented views of the current sample (boosting samples):
//!
//! ```text
//! logits(x) = clip_scale * W g(x) + sum_i alpha * exp(-beta * (1 - k_i . g(x))) * onehot(y_i)
//! ```
//!
//! * [`math`]: normalization, cosine logits, tempered softmax, entropy, affinity.
//! * [`cache`]: the per-class, entropy-prioritized cache and its retrieval kernels.
//! * [`pipeline`]: per-sample prediction and the online stream loop.
//! * [`io`]: the EMBS stream format, class-bank manifests and JSON reports.
//! * [`lab`]: synthetic worlds and experiments with a known Bayes classifier.
//! * [`cli`]: the `boostadapter` command line.
//!
//! ```
//! use boostadapter::{math::normalize, ClassBank, RunConfig, StreamRecord};
//! use boostadapter::pipeline::run_stream;
//!
//! let bank = ClassBank::unnamed(vec![
//!     normalize(&[1.0, 0.0, 0.0])?,
//!     normalize(&[0.0, 1.0, 0.0])?,
//! ])?;
//! let rec = StreamRecord::new(0, normalize(&[0.9, 0.3, 0.1])?, vec![], Some(0));
//! let report = run_stream(vec![rec], &bank, &RunConfig::default())?;
//! assert_eq!(report.top1, Some(1.0));
//! # Ok::<(), boostadapter::Error>(())
//! ```

pub mod cache;
pub mod cli;
pub mod error;
pub mod io;
pub mod lab;
pub mod math;
pub mod pipeline;

pub use cache::{BoostCache, CacheEntry, InsertOutcome, Provenance};
pub use error::{Error, Result};
pub use math::{ClassBank, Embedding};
pub use pipeline::{
    predict_sample, run_stream, Adapter, CacheMode, MetricsReport, Mode, RunConfig,
    SamplePrediction, StreamRecord,
};
