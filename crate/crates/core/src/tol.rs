//! Global tolerance ladder.
//!
//! Every numerical threshold in the crate derives from one of these, so a
//! check never has to guess which precision its inputs were built with.

/// Exactness expected from constructions (exp of a skew matrix, projectors,
/// closed-form rotations).
pub const CONSTRUCTION: f64 = 1e-12;

/// Tolerance when validating invariants of values handed in from outside
/// (orthogonality, unit determinant, unit norm of loaded vectors).
pub const INVARIANT: f64 = 1e-10;

/// Relative singular-value cutoff for every rank decision: a singular value
/// counts iff it exceeds `RANK_RELATIVE * sigma_max`.
pub const RANK_RELATIVE: f64 = 1e-9;

/// Eigenvalue band inside which a restricted Hessian is called degenerate.
pub const HESSIAN_EIG: f64 = 1e-9;

/// Minimum eigenvalue of a window-averaged projector for persistent excitation.
pub const PE_MIN_EIG: f64 = 1e-6;
