//! Sparse signal recovery under a Boltzmann machine prior on the support.
//!
//! The [`model`] module holds the generative model and posterior scoring;
//! [`greedy`] and [`exact`] estimate supports and coefficients; [`learning`]
//! and [`adaptive`] fit the prior from data; [`data`] provides dictionaries,
//! patches and metrics; [`io`] reads and writes the text formats.

pub mod adaptive;
pub mod data;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod greedy;
pub mod io;
pub mod learning;
mod linalg;
pub mod model;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{BoltzmannParams, LabeledSample, SignalModel, SparseRepresentation, SupportPattern};
