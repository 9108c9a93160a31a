//! Sparse polynomial Hamiltonians in `(φ, r, u, v)`: the term key, the
//! polynomial container, the Poisson bracket, Lie series and numerical
//! evaluation.

pub mod bracket;
pub mod lie;
pub mod monomial;
pub mod polynomial;
pub mod vector_field;

pub use bracket::poisson_bracket;
pub use lie::{lie_transform, LieOptions, LieSeries};
pub use monomial::{conj_var, var, var_site, var_slot, Monomial, ZPower, SLOT_U, SLOT_V};
pub use polynomial::{is_low, Polynomial, PolynomialDocument, TermRecord, PRUNE_TOL};
pub use vector_field::{evaluate, gradient, to_complex, to_real, vector_field_eval, PhaseState, Tangent};
