//! Differentiable convex quadratic-programming layers.
//!
//! * [`qp`]: dense QPs solved by a primal-dual interior-point method.
//! * [`qp_diff`]: exact backward pass through the KKT conditions.
//! * [`argmin`]: reference argmin-differentiation formulas and a
//!   finite-difference oracle.
//! * [`cone`]: derivatives of LP cone programs through the homogeneous
//!   self-dual embedding.
//! * [`dpp`]: expression trees, curvature rules and the affine-solver-affine
//!   canonicalizer.
//! * [`dsl`]: a small textual modeling language for parametrized problems.
//! * [`layers`]: layer compositions on a reverse-mode tape.
//! * [`experiments`]: denoising, poisoning and gradient-check harnesses.

pub mod linalg;
pub mod qp;
pub mod argmin;
pub mod qp_diff;
pub mod cone;
pub mod dpp;
pub mod dsl;
pub mod layers;
pub mod experiments;
