//! Almost Poisson structures of non-self-adjoint mechanical systems.
//!
//! The crate builds bracket tensors for Chaplygin nonholonomic systems and
//! for affine spaces with torsion, splits them into a canonical Poisson part
//! plus an almost Poisson remainder, measures how far they are from
//! satisfying the Jacobi identity, and integrates the resulting dynamics.
//!
//! Module map:
//!
//! * [`expr`]: expression parser with symbolic differentiation.
//! * [`field`], [`tensor`]: scalar fields and antisymmetric tensor fields.
//! * [`bracket`]: brackets, Jacobiizer/symplecticizer, decomposition.
//! * [`chaplygin`]: reduced dynamics of Chaplygin systems.
//! * [`torsion`]: autoparallels and the torsion bracket.
//! * [`integrate`]: RK4, Strang splitting and the Lagrange-multiplier oracle.
//! * [`systems`]: built-in systems.
//! * [`cli`]: configuration files and the command-line front end.

pub mod bracket;
pub mod chaplygin;
pub mod cli;
pub mod error;
pub mod expr;
pub mod field;
pub mod integrate;
pub mod systems;
pub mod tensor;
pub mod torsion;

pub use error::{Error, Result};
