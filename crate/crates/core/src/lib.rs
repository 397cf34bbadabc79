//! Solitary waves of generalized Benjamin-type equations
//!
//! ```text
//! u_t - L u_x + (u^{q+1}/(q+1))_x = 0,    sigma_L(kappa) = delta |kappa|^{2m} - gamma |kappa|^{2r}
//! ```
//!
//! on a periodic interval: Fourier-collocation profiles by the Petviashvili
//! iteration with vector extrapolation, a fourth-order symplectic time
//! integrator, and diagnostics for the resulting dynamics.

pub mod accel;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod evolve;
pub mod io;
pub mod solitary;
pub mod spectral;

pub use error::{Error, Result};
