//! Categorical-latent conditional VAE for single-agent trajectory forecasting.
//!
//! Inputs are encoded into a motion vector `x` and a context vector `c`
//! (raster map and neighbors). A prior and a posterior over a discrete latent
//! pick one of `|Z|` decoder modes; each mode emits Gaussian controls that are
//! integrated through a unicycle model into position Gaussians.
//!
//! [`debias`] adds the blind-branch objectives, where the same network is
//! evaluated on a null context.

pub mod batch;
pub mod config;
pub mod cvae;
pub mod debias;
pub mod dynamics;
pub mod encoders;
pub mod error;
pub mod model;

pub use batch::Batch;
pub use config::{DebiasConfig, LossConfig, Method, ModelConfig};
pub use debias::{make_null_context, training_objective, Objective};
pub use error::ModelError;
pub use model::{CvaeModel, PredictedDistribution};
