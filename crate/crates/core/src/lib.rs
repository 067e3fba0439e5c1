//! Flag Littlewood-Paley theory on periodized lattices: flag convolutions,
//! square and maximal functions, Riesz transforms, dyadic geometry, the
//! atomic decomposition and the experiment harness behind the `flagwave`
//! binary.

pub mod atomic;
pub mod cli;
pub mod config;
pub mod dyadic;
pub mod error;
pub mod flagconv;
pub mod gridio;
pub mod harness;
pub mod kernels;
pub mod lattice;
pub mod maximal;
pub mod riesz;
pub mod square;
pub mod window;

pub use error::{FlagError, Result};
pub use flagconv::ScaleGrid;
pub use kernels::{Calibration, KernelKind, KernelPair};
pub use lattice::{GridFunction, LatticeSpec};
