//! Transformed primal-dual (TPDv) methods with variable preconditioners for
//! affine-constrained convex minimization
//!
//! ```text
//!     min f(u)   subject to   B u = b
//! ```
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: CSR matrices, SPD operators, gradient oracles, Bregman
//!   divergences and extreme generalized eigenvalue estimation.
//! * [`tpdv`]: the explicit, IMEX and inexact-Uzawa iterations, theoretical
//!   parameter selection, the Lyapunov monitor and the inexact-preconditioner
//!   sandwich verifier.
//! * [`flowsim`]: a fourth-order integrator for the continuous TPDv flow used
//!   to check exponential decay of the Lyapunov function.
//! * [`fem2d`], [`multigrid`], [`darcy`]: P0-P1 mixed finite elements on the
//!   square `(-1,1)^2`, a geometric V-cycle for the variable-coefficient
//!   Neumann Laplacian and the Darcy-Forchheimer benchmark.
//! * [`bench`]: seeded quadratic saddle problems with dense KKT oracles, run
//!   configuration, CSV output and report tables.

pub mod bench;
pub mod darcy;
pub mod error;
pub mod fem2d;
pub mod flowsim;
pub mod multigrid;
pub mod numerics;
pub mod tpdv;

pub use error::{Error, Result};
