//! Numerical laboratory for reflecting Brownian motion on 2-D Lipschitz domains.
//!
//! The crate computes Neumann heat kernels and their killed (part-process)
//! variants on bounded and horn-shaped domains, approximates unbounded domains
//! through exhaustion ladders with a certified error bound, simulates reflected
//! paths with exit times and boundary local time, and fits the constants of the
//! standard Gaussian-type upper bounds to the computed data.
//!
//! Pipeline: [`geometry`] builds domains and cut-cell grids, [`discretize`]
//! assembles the Dirichlet-form finite-volume operators, [`spectral`] solves
//! the eigenproblem and evaluates the eigenfunction series, [`exhaust`] runs
//! the truncation ladder, [`simulate`] provides the Monte Carlo cross-checks,
//! and [`verify`] performs the majorant fits.

pub mod discretize;
pub mod exhaust;
pub mod geometry;
pub mod linalg;
pub mod simulate;
pub mod spectral;
pub mod verify;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain spec: {0}")]
    DomainSpec(String),
    #[error("grid construction: {0}")]
    Grid(String),
    #[error("operator assembly: {0}")]
    Assembly(String),
    #[error("eigensolver: {0}")]
    Solver(String),
    #[error("kernel query: {0}")]
    Kernel(String),
    #[error("exhaustion: {0}")]
    Exhaustion(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("fit: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
