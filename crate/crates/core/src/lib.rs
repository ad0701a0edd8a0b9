//! Optimal conditional planning for hybrid-state Markov decision processes
//! whose continuous variables are monotonically consumed resources.
//!
//! The solver searches an AND/OR graph over the discrete component of the
//! state while value, policy and bookkeeping information over the continuous
//! component is carried by piecewise-constant functions on axis-aligned
//! boxes. Backups are exact: transition outcomes are discrete (relative
//! shifts or absolute jumps), so the Bellman integral collapses to a finite
//! sum and dynamic programming closes over the piecewise-constant class.
//!
//! Crate layout:
//!
//! - [`pwc`] — boxes, box-union regions and piecewise-constant functions.
//! - [`model`] — problem definition, validation, JSON i/o, the normal
//!   consumption discretizer, plus the rover generator ([`model::rover`])
//!   and a randomized small-instance generator ([`model::synth`]).
//! - [`backup`] — exact hybrid Bellman backups and forward images.
//! - [`search`] — the HAO* solver: fringe expansion, SCC-ordered value
//!   updates, reachability recomputation and anytime error bounds.
//! - [`oracle`] — forward enumeration plus backward induction; exact ground
//!   truth on small instances.
//! - [`sim`] — seeded Monte Carlo execution of a solved policy.

pub mod backup;
pub mod error;
pub mod model;
pub mod oracle;
pub mod pwc;
pub mod search;
pub mod sim;

pub use error::Error;

/// Absolute tolerance for value-function merging and for convergence of
/// the fixpoint iteration inside strongly connected components. All value
/// arithmetic is finite sums and products of input constants, so this sits
/// far above accumulated rounding at the instance sizes this crate targets.
pub const VALUE_TOL: f64 = 1e-9;

pub type Result<T> = std::result::Result<T, Error>;
