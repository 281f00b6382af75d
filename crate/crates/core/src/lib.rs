//! Phenotype-structured cell population balance models.
//!
//! The crate covers the whole numerical stack needed to simulate the
//! advection-selection-mutation equation over an epithelial-mesenchymal
//! phenotype space:
//!
//! * [`regulatory`]: the miR-200/ZEB/SNAIL regulatory ODEs, their equilibria
//!   and the SNAIL input schedules,
//! * [`reduction`]: the piecewise-linear one-dimensional reduced advection
//!   built from the bifurcation branches, and its calibration,
//! * [`integrator`]: an adaptive Dormand-Prince 5(4) integrator,
//! * [`particles`]: the weighted-particle discretisation with periodic
//!   Gaussian regularisation,
//! * [`entropy`]: heterogeneity metrics and entropy-coupled growth,
//! * [`scenarios`]: ready-made experiments and their post-processing.
//!
//! Everything here is deterministic and allocation-only; file formats and the
//! command line live in the `popbal` crate.

#![no_std]

extern crate alloc;

pub mod entropy;
mod error;
pub mod integrator;
pub mod math;
pub mod particles;
pub mod reduction;
pub mod regulatory;
pub mod scenarios;

pub use error::{Error, Result};
