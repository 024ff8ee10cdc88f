//! Simulation and verification lab for a spatial SIR epidemic on a periodic
//! lattice with `ell` cells of width `eps = 1 / ell`.
//!
//! The crate covers the jump process and its event-driven simulation, the
//! deterministic lattice ODE, the rescaled fluctuations at fixed spacing with
//! their Ornstein-Uhlenbeck limit, and the Gaussian limit as the spacing
//! shrinks. [`verify`] runs the acceptance experiments and [`cli`] drives
//! everything from a JSON config.

pub mod cli;
pub mod deterministic;
pub mod error;
pub mod fluctuation;
pub mod grid;
pub mod jump;
pub mod rng;
pub mod spde_limit;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
