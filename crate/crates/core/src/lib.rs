//! Convolutional networks with maxout and probout subspace pooling.
//!
//! Probout units replace maxout's maximum over `k` linear responses with a
//! draw from a Boltzmann distribution at inverse temperature λ, optionally
//! folding dropout into the same draw. The crate covers the layer stack,
//! SGD training with λ annealing, test-time model averaging, invariance and
//! sampling probes, dataset handling and a command-line front end.

pub mod error;
pub mod exec;
pub mod numerics;
pub mod subspace;
pub mod network;
pub mod imageops;
pub mod io;
pub mod training;
pub mod inference;
pub mod probes;
pub mod cli;

pub use error::{Error, Result};
