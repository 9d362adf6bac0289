//! Relevance explanations for 1D-convolutional text classifiers.
//!
//! The crate trains small multi-channel CNN sentence classifiers, then
//! explains single predictions by propagating the output backwards
//! through the dense stack as relevance ratios, landing on the max-pooled
//! filters and the n-grams they selected. On top of the per-n-gram
//! scores it extracts a sufficient set (smallest greedy subset that alone
//! preserves the prediction) and a necessary set (features whose removal
//! alone flips it). Brute-force oracles and an occlusion baseline back
//! the fast paths.

pub mod corpus;
pub mod error;
pub mod explain;
pub mod lrp;
pub mod matrix;
pub mod model;
pub mod oracle;
pub mod report;
pub mod storage;
pub mod train;

pub use error::{Error, Result};
pub use explain::{FeatureSets, NgramFeature, Polarity};
pub use lrp::{RatioRule, RelevanceMatrix};
pub use model::{CnnModel, ForwardTrace};
pub use report::{explain_text, ExplanationReport};
pub use storage::{load_model, model_from_json, model_to_json, save_model};
