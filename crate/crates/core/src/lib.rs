//! Gradient-free training of small feedforward networks by data assimilation.
//!
//! The network's trainable parameters are treated as the state of a
//! data-assimilation system whose observation operator is the network itself.
//! Two ensemble trainers are provided:
//!
//! - [`enkf`]: a stochastic ensemble Kalman filter that assimilates one
//!   observation at a time (online learning);
//! - [`esmda`]: an ensemble smoother with multiple data assimilation that
//!   updates against the whole training set a fixed number of times with
//!   inflated observation noise (offline learning).
//!
//! A full-batch backpropagation trainer ([`gd`]) serves as the baseline, and
//! [`harness`] runs seeded experiments on the two synthetic regression
//! problems in [`data`], reporting RMSE and R² ([`metrics`]).

pub mod data;
pub mod enkf;
pub mod error;
pub mod esmda;
pub mod fnn;
pub mod gd;
pub mod harness;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
