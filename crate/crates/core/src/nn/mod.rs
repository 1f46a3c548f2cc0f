//! Dense layers, normalization, GIN and GAT message passing with hand-written
//! reverse-mode gradients, plus the optimizer and a finite-difference checker.

mod adam;
mod gradcheck;
mod graph_layers;
mod layers;
mod params;
mod softmax;

use ndarray::Array2;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckOptions, GradReport};
pub use graph_layers::{
    gin_aggregate, Adjacency, GatCache, GatHead, GatLayer, GinCache, GinLayer, GAT_NEGATIVE_SLOPE,
};
pub use layers::{
    apply_norm_stats, average_norm_stats, relu, BatchNorm, Ctx, Linear, Mlp, MlpCache, MlpLayer,
    MlpShape, Mode, NormCache, NormStats, BN_EPS, BN_MOMENTUM,
};
pub use params::{ManifestError, NamedArray, ParamSet, ParamSpec, Slot};
pub use softmax::{log_softmax, masked_softmax};

/// Row-major matrix of 64-bit floats; rows are nodes, columns are features.
pub type Dense2D = Array2<f64>;

#[inline]
pub(crate) fn check_finite(x: &Dense2D, what: &str) {
    debug_assert!(
        x.iter().all(|v| v.is_finite()),
        "non-finite value in {what}"
    );
}
