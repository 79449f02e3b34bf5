//! Numerical laboratory for the space-time periodic homogenization of the
//! porous medium equation `∂ₜu = div(a(x/ε, t/εʳ) ∇uᵐ)`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod cell;
pub mod coefficients;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod norms;
pub mod pme;
pub mod solver;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
