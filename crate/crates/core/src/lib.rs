//! Parareal in time with geometric multigrid in space for diffusion through
//! a brick-and-mortar membrane.
//!
//! The pieces, bottom up: [`grid`] builds the coefficient field,
//! [`discretization`] assembles the implicit-Euler operator, [`multigrid`]
//! solves it, [`propagator`] steps in time, [`parareal`] iterates over
//! subintervals and [`perf_model`] predicts speedup. [`experiment`] ties
//! them into reproducible runs and [`io`] reads and writes field snapshots.

pub mod discretization;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod multigrid;
pub mod parareal;
pub mod perf_model;
pub mod propagator;

pub use error::{Error, Result};
