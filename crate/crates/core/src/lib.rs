//! Backstepping control of large-scale and continuum systems of coupled
//! hyperbolic transport PDEs: kernel computation, gain sampling and
//! closed-loop simulation.

pub mod error;
pub mod example;
pub mod geometry;
pub mod controller;
pub mod kernel;
pub mod kernel_nm;
pub mod params;
pub mod quadrature;
pub mod simulator;

pub use error::{Error, Result};
