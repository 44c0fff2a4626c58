//! Marked Hawkes processes with neural excitation kernels.
//!
//! Kernels `phi_dj(t, m)` are one-hidden-layer ReLU networks of elapsed time
//! and mark. With an exponential output link the model is a linear
//! (excitatory) Hawkes process; with an identity link kernels may be
//! inhibitory and the intensity is clamped at zero. Compensators are
//! integrated in closed form between zero crossings, which makes exact
//! log-likelihood gradients cheap enough for stochastic gradient fitting.
//!
//! Modules:
//! - [`model`]: event sequences, kernel networks, models, scaling
//! - [`integrate`]: exact compensators and their gradients
//! - [`train`]: log-likelihood, per-event gradients, Adam fitting
//! - [`density`]: Gaussian-mixture mark densities fitted by EM
//! - [`simulate`]: thinning simulation of closed-form and fitted processes
//! - [`evaluate`]: PIT/QQ calibration, kernel grids, forecasting
//! - [`io`]: CSV ingestion and model documents

pub mod density;
pub mod error;
pub mod evaluate;
pub mod integrate;
pub mod io;
pub mod model;
pub mod simulate;
pub mod train;

pub use density::{fit_gmm, gmm_pdf, mark_log_likelihood, GmmDensity, MarkDensity};
pub use error::{Error, Result};
pub use integrate::{
    compensator, hidden_breakpoints, integrate_kernel_exp, integrate_kernel_exp_over,
    integrated_ground_intensity_nnnh, integrated_ground_intensity_snh, BreakpointList,
};
pub use model::{
    apply_scaling, eval_ground_intensity, eval_kernel, EventSequence, HawkesModel, KernelNet, Link,
    MarkedEvent, ModelKind, ScalingTransform,
};
pub use simulate::{sample_mark, simulate, GeneratorSpec, KernelSpec, MarkSampler};
pub use train::{
    event_gradient, fit, init_model, log_likelihood_dim, log_likelihood_gradient,
    log_likelihood_ground, FitConfig, FlooredGradient, TrainTrace,
};
