//! Differentiable dynamic programming with smoothed max operators.
//!
//! Replacing the `max` of a dynamic program by a strongly convex smoothed
//! version makes the optimal value differentiable in the input potentials. The
//! gradient is an expected path through the graph and Hessian-vector products
//! cost one extra forward and backward sweep.

pub mod dag;
pub mod dag_dp;
pub mod dtw;
pub mod error;
pub mod gradcheck;
pub mod instances;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod oracle;
pub mod smoothed_max;
pub mod viterbi;

pub use dag::{Dag, DagDocument};
pub use dag_dp::{
    dp_grad, dp_hessian_product, dp_value, hard_value_and_path, DpGrad, ExpectedPath, HardPath,
    HessianProduct, TransitionMatrix,
};
pub use dtw::{dtw_grad, dtw_hessian_product, dtw_value, hard_dtw, CostMatrix, SoftAlignment};
pub use error::{Error, Result};
pub use losses::{CostAugmentation, Divergence, LossGrad};
pub use matrix::Matrix;
pub use smoothed_max::{RegKind, Regularizer, SimplexVector};
pub use viterbi::{
    viterbi_grad, viterbi_hessian_product, viterbi_value, EdgeMarginals, PotentialTensor, Tensor3,
};
