//! Graph signal processing and gated graph recurrent neural networks.
//!
//! The crate covers graph shift operators and their spectra, LSI graph
//! filters, GRNNs with time, node and edge gating, a small reverse-mode
//! autodiff tape used for training, synthetic graph processes, and a
//! harness that measures stability of these models under relative graph
//! perturbations.

pub mod error;
pub mod filters;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod process;
pub mod rng;
pub mod spectral;
pub mod stability;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Mat;
