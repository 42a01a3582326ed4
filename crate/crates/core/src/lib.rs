//! Numerical workbench for viscous shock waves of one-dimensional systems of
//! conservation laws with (possibly degenerate) diffusion:
//!
//! ```text
//!     u_t + f(u)_x = (b(u) u_x)_x ,      u in R^n,  rank b = r <= n.
//! ```
//!
//! The crate computes traveling-wave profiles connecting prescribed
//! endstates, classifies the wave by its characteristic geometry, verifies
//! the spectral stability determinant on contours around the unstable half
//! plane, evaluates the pointwise decay templates that govern the linearized
//! solution operator, and runs the nonlinear phase-tracking iteration whose
//! contraction demonstrates orbital stability with sharp decay rates.
//!
//! Modules, in dependency order:
//!
//! - [`grid`], [`linalg`], [`ode`], [`quad`]: uniform grids and fields,
//!   dense eigen/solver helpers, integrators, quadrature.
//! - [`model`]: the conservation-law trait, built-in model families,
//!   endstate validation, structural hypothesis checks, wave classification.
//! - [`profile`]: connecting-orbit computation with certified tail decay.
//! - [`spectral`]: linearization along the wave, characteristic data at the
//!   endstates, interior hyperbolic transport with its dissipation rates.
//! - [`evans`]: the stability determinant, contour winding, and the spectral
//!   verdict.
//! - [`templates`]: pointwise Green-bound templates, diffusive phase
//!   kernels, and convolution inequality checks.
//! - [`evolution`]: semi-implicit time stepping, phase extraction, the
//!   nonlinear iteration map, and decay verification.
//! - [`config`], [`io`], [`report`]: run configuration, CSV/JSON/SVG
//!   output, and the consolidated verification report.

pub mod config;
pub mod error;
pub mod evans;
pub mod evolution;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod profile;
pub mod quad;
pub mod report;
pub mod spectral;
pub mod templates;
pub mod tol;

pub use error::{Error, Result};
