//! Polynomial signal bases for spectral graph filtering.
//!
//! The crate builds four families of per-hop bases on a sparse graph
//! (monomial propagation, orthonormal Krylov, equal-angle heterophily, and their
//! convex mix), measures them (signal frequency, consecutive angles), trains a
//! weighted-basis softmax classifier, and generates synthetic homophily sweeps.

pub mod basis;
pub mod error;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod synth;

pub use basis::{build_basis, BasisConfig, BasisKind, BasisSet};
pub use error::{Error, Result};
pub use graph::{estimate_homophily, homophily_ratio, Graph, LabeledSplit, PropagationConfig, Subset};
pub use matrix::SignalMatrix;
pub use metrics::{consecutive_angles, signal_frequency, spectrum_profile};
pub use model::{evaluate, train, FilterModel, Hyper, TrainReport};
