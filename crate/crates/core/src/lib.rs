//! Solver library for optimal control of linear parabolic PDEs with Neumann
//! boundary conditions and distributed control.
//!
//! The state equation `y_t - div(alpha grad y) + c y = u` on `Q = [0,T] x Omega`
//! is discretized with conforming P1 finite elements in space and implicit
//! Euler (equivalently dG(0)) in time. Two solution paths are provided for the
//! quadratic end-time tracking objective:
//!
//! * [`reduced`] — the problem reduced to the control alone, solved by a
//!   conjugate gradient iteration carried out in the time-weighted mass inner
//!   product. Its operator has all eigenvalues in `[lambda, lambda + gamma]`
//!   with `gamma` independent of the discretization level, so iteration counts
//!   do not grow under refinement.
//! * [`saddle`] — the coupled first-order optimality system in
//!   `(y, u, p)`, a symmetric saddle point problem whose leading block is
//!   nonzero only at the final time step. It is solved by MINRES with a block
//!   preconditioner built around the Schur-type matrix
//!   `W = e_N e_N^T (x) M_N + lambda/(1+lambda) K^T D M^{-1} K`,
//!   which clusters the preconditioned spectrum at `1`, `-1` and a short
//!   interval `(-1, -1/(1+lambda))`.
//!
//! [`spectra`] computes the relevant spectra densely at desk scale and checks
//! every spectral claim with explicit tolerances; [`problem`], [`fem`] and
//! [`timeblock`] provide the problem description, spatial assembly and the
//! time-block operators underneath.

pub mod error;
pub mod fem;
pub mod problem;
pub mod reduced;
pub mod saddle;
pub mod spectra;
pub mod timeblock;

pub use error::{Error, Result};
