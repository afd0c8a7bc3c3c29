//! VAE-based multiple instance regression for bag-level yield prediction.
//!
//! A VAE trained on all instances scores each instance by reconstruction
//! loss; each bag is represented by the mean of its k lowest-loss instances
//! and an MLP regressor maps that prototype to the bag label. Four baseline
//! strategies (Instance-MIR, Mean Regression, Prime-MIR, Cluster-MIR), a
//! synthetic contaminated-bag generator and an expanding-window evaluation
//! harness round out the library.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod mir;
pub mod nn;
pub mod regressor;
pub mod scalar;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

// Concrete f64 aliases; the CLI and the reference tests use these.
pub type Network = nn::Network<f64>;
pub type DenseLayer = nn::DenseLayer<f64>;
pub type Gradients = nn::Gradients<f64>;
pub type AdamState = nn::AdamState<f64>;
pub type VaeModel = vae::VaeModel<f64>;
pub type MlpRegressor = regressor::MlpRegressor<f64>;
pub type Bag = mir::Bag<f64>;
pub type Prototype = mir::Prototype<f64>;
pub type GroundTruth = synth::GroundTruth<f64>;
