//! Differentiable stereo operators built on the autodiff graph.

mod conv;
mod correlation;
mod resample;
mod warp;

pub use conv::{conv2d, transposed_conv2d, ConvSpec};
pub use correlation::{correlation_patch, correlation_pointwise, identity_pre_weight, CorrelationSpec};
pub use resample::{resample, ResampleMode};
pub use warp::warp_right_to_left;

use crate::autodiff::Var;

/// Slope used after every hidden convolution.
pub const LEAKY_SLOPE: f64 = 0.1;

/// `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu(input: Var<'_>, slope: f64) -> Var<'_> {
    input.unary(
        "leaky_relu",
        move |x| if x >= 0.0 { x } else { slope * x },
        move |x, g| if x >= 0.0 { g } else { slope * g },
    )
}
