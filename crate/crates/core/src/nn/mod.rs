//! Small dense networks with hand-written reverse mode and an Adam optimizer.
//!
//! This is only as general as the latent-variable model needs: stacks of
//! affine layers with `tanh` or identity activations, diagonal Gaussian
//! output heads, and exact gradients for any scalar loss of the network
//! output. Everything is `f64`; importance ratios are products of many small
//! densities and single precision underflows.

mod adam;
mod dense;
mod gaussian;
pub(crate) mod serialize;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use dense::{gradient, Activation, Dense, DenseNetwork, Gradients, Loss, Trace};
pub use gaussian::{
    gaussian_log_density, log_normal, GaussianHead, LOG_2PI, LOG_VARIANCE_MAX, LOG_VARIANCE_MIN,
};
