//! Multi-domain translation by composing independently trained
//! autoencoders that share a latent prior.

pub mod config;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sem;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
