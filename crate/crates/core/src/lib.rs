//! Pre-release hot/cold popularity prediction for streaming video content.
pub mod codec;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod featurize;
pub mod gbdt;
pub mod hybrid;
pub mod nn;
pub mod optim;
