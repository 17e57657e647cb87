//! Numerical laboratory for the volume-preserving flow
//! `dX/dt = (h(t) - H_m^beta) N` on closed convex hypersurfaces of revolution
//! in `R^{n+1}`.
//!
//! * [`symfun`]: the pointwise speed `sigma = H_m^beta`, its derivatives and the
//!   algebraic inequalities it satisfies.
//! * [`constants`]: the pinching constant `C_p(n, m, beta)` and its ingredients.
//! * [`geometry`]: radial-graph profiles, curvatures, quadrature and radii.
//! * [`flow`]: explicit time integration, diagnostics and monitors.
//! * [`verify`]: the property suites behind `hmflow verify`.
//! * [`cli`]: the `hmflow` command-line front end.

pub mod cli;
pub mod constants;
pub mod error;
pub mod flow;
pub mod geometry;
mod sampling;
pub mod symfun;
pub mod verify;

pub use error::{Error, Result};
pub use symfun::{CurvatureVector, FlowParams};
