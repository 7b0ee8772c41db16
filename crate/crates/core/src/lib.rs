//! Solver for the extinction-profile equation
//! `(|f'|^{p-2} f')' + f - |f'|^{p-1} = 0`, `f(0) = a`, `f'(0) = 0`, `1 < p < 2`.
//!
//! The crate integrates the profile in the radial variable, integrates the
//! first-order transform `psi(1 - f/a) = |f'|^p / a^p`, classifies a shooting
//! parameter as crossing, critical or decaying, brackets the critical value
//! `a*`, and extracts the tail constants of each regime.

pub mod asymptotics;
pub mod classify;
mod error;
pub mod ode;
pub mod params;
pub mod profile;
pub mod psi;
pub mod quad;
mod stiff;
pub mod validation;

pub use error::{Error, Result};
pub use params::Params;
