//! Large-system approximation of the ergodic mutual information of
//! correlated Rician MIMO channels, optimization of the transmit covariance,
//! and a seeded Monte-Carlo oracle to check both.
//!
//! All mutual informations are in nats.

pub mod cli;
pub mod detequiv;
pub mod error;
pub mod fixed_point;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod optim;
pub mod rician;

pub use error::{Error, Result};
pub use model::{ChannelModel, CovarianceMatrix};
