//! Finite-truncation KAM iteration and partial Birkhoff normal form for the
//! nonlinear Schrödinger equation on the torus `T^d`, with the numerical
//! checks (norms, small divisors, long-time stability) that accompany it.

pub mod algebra;
pub mod error;
pub mod homological;
pub mod kam;
pub mod lattice;
pub mod nls;
pub mod nonresonance;
pub mod norms;
pub mod pipeline;
pub mod quadratic;
pub mod random;

pub use error::{Error, Result};
