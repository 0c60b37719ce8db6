//! Maximum-likelihood reconstruction of JND scales.
//!
//! Plain stimuli sit at `d(r) = alpha_c * exp(-beta_c * r)` per codec, boosted
//! ones at `t(d) = gamma1 * d + gamma2 * d^2`, and the reference at 0. Answers
//! follow Thurstone Case V with one JND defined as a 75% choice rate.

mod bootstrap;
mod data;
mod fit;
mod likelihood;
mod model;
mod observer;
pub mod optimize;

pub use bootstrap::{bitrate_grid, bootstrap, quantile_sorted, BandCurve, BandPoint, BootstrapBand, BootstrapConfig};
pub use data::{LocalStimulus, ResponseSet, SourceData, Tally};
pub use fit::{fit, Bounds, FitConfig, InitialParams, ParamBounds};
pub use likelihood::{negative_log_likelihood, nll_with_gradient, ParamLayout};
pub use model::{Boosting, BoostingTransfer, CodecCurve, FitStats, ScaleModel, SourceModel};
pub use observer::{choice_probability, normal_cdf, normal_pdf, JND_UNIT_Z, PROBABILITY_FLOOR};
pub use optimize::Optimizer;
