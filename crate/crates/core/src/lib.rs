//! Bistable reaction-diffusion-advection fronts on branched planar domains.
//!
//! The crate solves `u_t - div(A grad u) + q . grad u = f(x, u)` with zero-flux
//! walls on domains built from a junction and straight branches, and checks
//! explicit sub/supersolution constructions against the discrete dynamics.

pub mod bounds;
pub mod coefficients;
pub mod diagnostics;
mod numerics;
pub mod geometry;
pub mod harness;
pub mod solver;
pub mod wave1d;

pub use numerics::linear_fit;
