//! Local-global model reduction for parametrized elliptic optimal control:
//! fine-grid KKT systems, generalized multiscale spaces, greedy reduced
//! bases with residual estimators, and the stochastic scenarios that drive
//! them.

// NaN-rejecting `!(x > 0.0)` guards and index loops over parallel arrays are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod error;
pub mod experiment;
pub mod fullorder;
pub mod gmsfem;
pub mod greedy;
pub mod grid;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod rb;
pub mod scenario;
pub mod sparse;
pub mod stochastic;

pub use error::{Error, Result};
