//! Numerical laboratory for the kinetic-to-hydrodynamic limit.
//!
//! The crate simulates the scaled Boltzmann/BGK fluctuation equation
//!
//! ```text
//! dg/dt + (1/eps) v . grad_x g + (1/eps^2) L g = (1/eps) Gamma(g, g)
//! ```
//!
//! on a periodic spatial torus with a truncated Cartesian velocity grid, and
//! provides everything needed to watch its fluid moments approach an
//! incompressible Navier-Stokes-Fourier reference solution as the Knudsen
//! number `eps` goes to zero: the collision operator in sigma-representation
//! with conservative remapping, the macro-micro decomposition, energy and
//! dissipation functionals, transport-coefficient extraction, a pseudo-spectral
//! NSF solver, and the epsilon-sweep harness diagnostics.

pub mod collision;
pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod moments;
pub mod nsf;
pub mod picard;
pub mod sim;
pub mod transport;
pub mod velocity;

pub use error::{Error, Result};
