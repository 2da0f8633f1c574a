//! Maximum likelihood, large-deviation rates, CLT residuals and the
//! Gaussian kernel comparison.

mod kernel;
mod mle;

pub use kernel::{
    c_rho, laplace_condition_check, limit_kernel, rescaled_posterior_kernel, trace_norm_distance,
    GaussianKernelSpec, LaplaceCheck, RescaledWindow, WINDOW_NODES, WINDOW_SIGMAS,
};
pub use mle::{
    clt_residual, clt_samples, golden_section_max, grid_argmax, mle, mle_consistency_stat, mle_path,
    rate_trace, CltSamples, ConsistencyStat, MleEstimate, MlePath, RatePoint, RateTrace, Refinement,
};
