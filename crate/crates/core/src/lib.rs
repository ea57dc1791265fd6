//! Growing convolutional networks with channel-split and channel-prune
//! morphisms, scored by a per-sample Gauss-Newton estimate of the loss
//! change.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gauss_newton;
pub mod grower;
pub mod morphism;
pub mod network;
pub mod optim;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use network::NetworkGraph;
pub use rng::SeededRng;
pub use tensor::Tensor;
