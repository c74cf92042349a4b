//! Heat-exchanger condition monitoring with Bayesian inference.
//!
//! A steady-state counterflow exchanger ([`thermal`]) degrades through
//! stochastic fouling and leakage ([`degradation`]); the forward simulator
//! ([`observation`]) turns a degradation path into a noisy six-channel sensor
//! record, which [`summaries`] reduces to 25 features. Two engines infer the
//! failure mode and the parameters `(tau, beta_f, beta_l, lambda)`:
//!
//! * [`mcmc`]: Metropolis-within-Gibbs on the full latent-augmented model
//!   ([`prior`]), re-run for every record;
//! * [`npe`]: an amortized neural posterior (rational-quadratic spline flow
//!   plus mode classifier) trained once on simulations.
//!
//! [`metrics`] scores posteriors and [`bench`](mod@bench) runs the paired comparison.

pub mod bench;
pub mod degradation;
pub mod error;
pub mod mcmc;
pub mod metrics;
pub mod npe;
pub mod observation;
pub mod posterior;
pub mod prior;
pub mod rng;
pub mod summaries;
pub mod thermal;

pub use degradation::{DegradationParams, FailureMode, LatentDraws, LatentTrajectory};
pub use error::{Error, Result};
pub use observation::{simulate, ObservationSeries, OperatingConditions};
pub use posterior::PosteriorEnsemble;
pub use prior::{DegradationTheta, PriorSpec};
pub use summaries::{summarize, SummaryVector};
