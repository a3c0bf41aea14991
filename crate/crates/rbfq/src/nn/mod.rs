//! Flat-array parameter stores, MLP forward/backward, and Adam.

mod adam;
mod mlp;
mod params;

pub use adam::{adam_step, AdamState, ADAM_EPS, BETA1, BETA2};
pub use mlp::{
    backward, fd_error_against, finite_diff_check, forward, init_params, Activation, MlpSpec,
};
pub use params::{Gradient, LayoutEntry, ParamStore};
