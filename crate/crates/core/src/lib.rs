//! Model-based approximate query processing.

pub mod aqp;
pub mod artifact;
pub mod bayesnet;
pub mod crossmatch;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod relation;
pub mod sample_gen;
pub mod scalar;
pub mod synth;
pub mod vae;
pub mod vrs;

pub use error::{Error, Result};
pub use scalar::{Probability, Scalar};

pub type VaeF64 = vae::VaeParams<f64>;
pub type VaeF32 = vae::VaeParams<f32>;
pub type BayesNetF64 = bayesnet::BayesNet<f64>;
pub type BayesNetExact = bayesnet::BayesNet<num_rational::Ratio<i64>>;
