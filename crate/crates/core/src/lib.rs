//! Bayesian latent threshold dynamic transfer response factor models.
//!
//! Model M: each channel loads current and lagged values of a single latent
//! TVAR(p) process through time-varying, dynamically sparse coefficients:
//!
//! ```text
//! y_it = sum_{k=0}^{r-1} b_ikt x_{t-k} + nu_it,    nu_it ~ N(0, sigma_it^2)
//! x_t  = sum_{j=1}^{p} delta_jt x_{t-j} + eps_t,  eps_t ~ N(0, w_t)
//! delta_t = delta_{t-1} + xi_t,                   xi_t ~ N(0, Psi)
//! b_ikt = beta_ikt * I(|beta_ikt| >= d_ik),       beta_ik. stationary AR(1)
//! ```
//!
//! Model M+ adds a thresholded time-varying VAR(1) term `A_t y_{t-1}`.
//! Variances follow discount (beta-gamma) random walks, except the anchor
//! channel's observation variance, which is constant.

pub mod decomposition;
pub mod dist;
pub mod dlm;
pub mod error;
pub mod impulse;
pub mod io;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod stats;
pub mod summaries;
pub mod threshold;

#[doc(hidden)]
pub mod cli;

pub use error::{ConfigError, Error, Result};
pub use model::{
    default_priors, validate_config, LatentStateSet, ModelConfig, ObservationMatrix,
    PosteriorDraws, PriorSpec, Variant,
};
