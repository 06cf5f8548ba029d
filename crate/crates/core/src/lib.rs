//! Importance-aware radio resource management for edge learning.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases. Experiments driven by
//! [`harness`] run in `f64`.

pub mod arq;
pub mod channel;
pub mod dataio;
pub mod error;
pub mod federated;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod scheduling;
pub mod svm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset64 = dataio::Dataset<f64>;
pub type DataSample64 = dataio::DataSample<f64>;
pub type DeviceBuffer64 = dataio::DeviceBuffer<f64>;
pub type BinarySvm64 = svm::BinarySvm<f64>;
pub type MulticlassSvm64 = svm::MulticlassSvm<f64>;
pub type MrcState64 = channel::MrcState<f64>;
pub type ArqPolicyConfig64 = arq::ArqPolicyConfig<f64>;
pub type FederatedState64 = federated::FederatedState<f64>;

pub type Dataset32 = dataio::Dataset<f32>;
pub type DataSample32 = dataio::DataSample<f32>;
pub type BinarySvm32 = svm::BinarySvm<f32>;
pub type MulticlassSvm32 = svm::MulticlassSvm<f32>;
pub type MrcState32 = channel::MrcState<f32>;
