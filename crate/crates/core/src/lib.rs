//! Hierarchical saliency-based attention for multiset image classification.
//!
//! A meta-controller places a Gaussian-mixture covert-attention mask on a
//! saliency map; a controller takes glimpses inside the attended region and
//! emits a class label; the glimpsed region is suppressed and the process
//! repeats until a stop label. Training uses a permutation-invariant
//! REINFORCE objective with a learned value baseline.

pub mod agent;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod learning;
pub mod metrics;
pub mod multiset;
pub mod netpbm;
pub mod perception;
pub mod pipeline;
pub mod ndgrad;
pub mod parallel;
pub mod rng;

pub use error::{Error, Result};
pub use multiset::LabelMultiset;
