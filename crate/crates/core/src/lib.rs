//! Simulation of a free-space satellite channel corrupted by hybrid
//! Poisson+Gaussian noise, mixture-model fitting of the noise statistics
//! (classical EM and a deep-autoencoder GMM trained by augmented-Lagrangian
//! alternating minimization), and Monte-Carlo achievable-rate estimation.

pub mod autoencoder;
pub mod capacity;
pub mod config;
pub mod dagmm;
pub mod datagen;
pub mod error;
pub mod gmm;
pub mod io;
pub mod linkbudget;
pub mod noise;
pub mod rng;
pub mod svg;

pub use error::{Error, Result};
