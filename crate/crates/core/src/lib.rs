//! Neumann boundary-value curvature flow for convex graphs over strictly
//! convex planar domains.
//!
//! The flow `u_t = w (f(kappa) - Phi(x, u))` with `u_nu = phi(x, u)` is
//! integrated on a boundary-fitted polar grid, monitored against the
//! qualitative bounds it must satisfy, and driven to its stationary limit
//! `F(A[u]) = Phi`.

pub mod config;
pub mod domain;
pub mod error;
pub mod flow;
pub mod forcing;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod operator;
pub mod presets;
pub mod radial;
pub mod report;
pub mod symfunc;

pub use error::{Error, Result};
