//! Approximate message passing with unitary transformation, for linear and
//! bilinear recovery.
//!
//! The crate implements two families of solvers over the model
//! `y = A x + w` (and its bilinear lifting `y = Σ_k b_k A_k c + w`):
//!
//! - [`amp`]: vector-stepsize AMP and the two UTAMP variants, which run AMP
//!   on the unitarily transformed model `r = U^H y = Φ x + ω` obtained from
//!   the SVD of `A`. The transform makes the iterations robust to
//!   correlated, ill-conditioned, low-rank and non-zero-mean matrices.
//! - [`solver`]: Bi-UTAMP for single and multiple measurement vectors,
//!   which jointly recovers the combination weights `b` and the sparse
//!   signal `c` (or matrix `C`) by combining the UTAMP forward recursion
//!   with expectation-propagation moment matching for `b` and `c`.
//!
//! Supporting modules: [`transform`] builds the lifted and transformed
//! models, [`denoisers`] provides the scalar MMSE denoisers used by every
//! solver, [`state_evolution`] predicts per-iteration MSE, [`problems`]
//! generates the synthetic benchmark instances, [`metrics`] computes NMSE
//! metrics and oracle bounds, and [`oracles`] holds slow, independent
//! reference computations (quadrature, grid search, direct solves) used to
//! validate the fast paths.

pub mod amp;
pub mod denoisers;
pub mod error;
pub mod metrics;
pub mod oracles;
pub mod problems;
pub mod seeding;
pub mod solver;
pub mod state_evolution;
pub mod transform;

pub use error::{Error, Result};
