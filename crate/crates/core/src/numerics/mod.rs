//! Dense tensors with reverse-mode differentiation, two-layer MLPs, Adam
//! and finite-difference gradient checks.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};
pub use mlp::{Activation, Mlp};
pub use tensor::{lit, sigmoid, Graph, Param, ParamId, Parameterized, Real, Var};

use crate::error::{Error, Result};

/// Denominator guard for cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

/// Cosine similarity of two vectors as a differentiable `1 x 1` node.
pub fn cosine_similarity<T: Real>(g: &mut Graph<T>, u: Var, v: Var) -> Result<Var> {
    let (su, sv) = (g.shape(u)?, g.shape(v)?);
    if su.0 != 1 || sv.0 != 1 {
        return Err(Error::dim("cosine_similarity", "row vectors", format!("{}x{} and {}x{}", su.0, su.1, sv.0, sv.1)));
    }
    g.cosine_rows(u, v, lit(COSINE_EPS))
}
