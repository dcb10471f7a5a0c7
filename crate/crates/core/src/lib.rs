//! Willingness-aware cooperative relay selection for virtual MIMO uplinks.
//!
//! The crate places users with Poisson point processes, learns each inactive
//! user's willingness to relay with a tanh MLP trained by RPROP or an RBF
//! support vector machine, probes the predicted-willing users over an
//! amplify-and-forward link and keeps the best paths by bit error rate.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the double-precision types used by the simulator and the CLI.

pub mod behavior;
pub mod channel;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod error;
pub mod metrics;
pub mod mlp;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod spatial;
pub mod svm;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Point = spatial::Point2D<f64>;
pub type NetworkScenario = spatial::Scenario<f64>;
pub type Features = behavior::FeatureVector<f64>;
pub type LabeledSample = behavior::Sample<f64>;
pub type FeatureScaler = behavior::Scaler<f64>;
pub type Mlp = mlp::MlpNetwork<f64>;
pub type Mlp32 = mlp::MlpNetwork<f32>;
pub type Svm = svm::SvmModel<f64>;
pub type Svm32 = svm::SvmModel<f32>;
