//! Classical and quantum-action chaos in a two-dimensional anharmonic
//! oscillator.
//!
//! [`dynamics`] integrates the classical motion, [`lyapunov`] and
//! [`poincare`] measure it, and [`ensemble`] gathers statistics over energy
//! shells. [`propagator`] computes exact imaginary-time amplitudes, and
//! [`qaction`] fits the renormalized action that reproduces them.

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod lyapunov;
pub mod poincare;
pub mod propagator;
pub mod qaction;

pub use error::{Error, Result};

// The guide's code blocks run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/lyapunov.md")]
    mod lyapunov {}
    #[doc = include_str!("../../../book/src/poincare.md")]
    mod poincare {}
    #[doc = include_str!("../../../book/src/ensembles.md")]
    mod ensembles {}
    #[doc = include_str!("../../../book/src/propagator.md")]
    mod propagator {}
    #[doc = include_str!("../../../book/src/quantum-action.md")]
    mod quantum_action {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
