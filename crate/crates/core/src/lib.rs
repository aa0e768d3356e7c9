//! Class-specified cascaded network for compositional zero-shot learning.
//!
//! Attributes and objects are classified by two cascades (attribute then
//! object, and object then attribute), each conditioning its second stage
//! on the first stage's predicted class, alongside a composition branch
//! that matches whole pairs. Scores from all three are fused at inference
//! and evaluated with the generalized seen/unseen bias sweep.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod semantics;
pub mod train;

pub use error::{Error, Result};
