use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp;
use crate::linalg::{trace_norm, CMatrix};
use crate::probe::ProbeModel;
use crate::quadrature::{midpoint_nodes, GaussLegendre};
use crate::spectral::{Component, Grid, SpectralModel};
use crate::state::StateKernel;
use crate::trajectory::Trajectory;

use super::mle::mle;

/// Window half-width in units of `1/sqrt(F)`.
pub const WINDOW_SIGMAS: f64 = 8.0;
pub const WINDOW_NODES: usize = 241;

/// `G_F(u, u') = exp(-F (u^2 + u'^2) / 4) / sqrt(2 pi / F)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernelSpec {
    pub fisher: f64,
    pub center: f64,
    pub scale: f64,
}

impl GaussianKernelSpec {
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        (-self.fisher * (u * u + v * v) / 4.0).exp() / (2.0 * PI / self.fisher).sqrt()
    }
}

/// Rescaled coordinates `u` around `nu_hat`: node `u_j` stands for
/// `nu_hat + u_j / sqrt(k)` and carries mass `du * h(nu_hat + u_j / sqrt(k))`.
#[derive(Debug, Clone)]
pub struct RescaledWindow {
    pub nu_hat: f64,
    pub k: usize,
    pub fisher: f64,
    pub half_width: f64,
    grid: Arc<Grid>,
}

impl RescaledWindow {
    pub fn new(
        model: &SpectralModel,
        probe: &ProbeModel,
        nu_hat: f64,
        k: usize,
        half_width: Option<f64>,
        nodes: usize,
    ) -> Result<Self> {
        let fisher = probe.fisher_information(nu_hat)?;
        let half_width = half_width.unwrap_or(WINDOW_SIGMAS / fisher.sqrt());
        let root = (k.max(1) as f64).sqrt();
        let (us, du) = midpoint_nodes(-half_width, half_width, nodes);
        let densities = us.iter().map(|&u| model.density(nu_hat + u / root)).collect();
        let grid = Arc::new(Grid::new(us, vec![du; nodes], densities));
        Ok(Self {
            nu_hat,
            k,
            fisher,
            half_width,
            grid,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn gaussian(&self) -> GaussianKernelSpec {
        GaussianKernelSpec {
            fisher: self.fisher,
            center: self.nu_hat,
            scale: (self.k as f64).sqrt(),
        }
    }

    /// Original coordinate of window node `j`.
    pub fn nu(&self, j: usize) -> f64 {
        self.nu_hat + self.grid.point(j) / (self.k.max(1) as f64).sqrt()
    }
}

fn interval_component(model: &SpectralModel, nu: f64) -> Result<&Component> {
    match model.component_containing(nu) {
        Some(c) if c.is_interval() && c.nodes.len() >= 3 => Ok(c),
        Some(c) if c.is_interval() => Err(Error::Interpolation(format!(
            "component around {nu} has fewer than three nodes"
        ))),
        _ => Err(Error::NotInterior { nu }),
    }
}

/// Initial kernel interpolated piecewise-quadratically in both arguments
/// over one component.
struct KernelInterpolant<'a> {
    state: &'a StateKernel,
    xs: &'a [f64],
    offset: usize,
}

impl<'a> KernelInterpolant<'a> {
    fn new(state: &'a StateKernel, component: &Component) -> Self {
        Self {
            state,
            xs: &state.grid().points()[component.nodes.clone()],
            offset: component.nodes.start,
        }
    }

    fn weights(&self, x: f64) -> (usize, [f64; 3]) {
        let s = interp::stencil(self.xs, x);
        (s + self.offset, interp::basis(self.xs, s, x))
    }

    fn block(&self, x: f64, y: f64) -> CMatrix {
        let n = self.state.multiplicity();
        let (sx, wx) = self.weights(x);
        let (sy, wy) = self.weights(y);
        let mut out = CMatrix::zeros(n, n);
        for (p, &a) in wx.iter().enumerate() {
            for (q, &b) in wy.iter().enumerate() {
                out += self.state.block(sx + p, sy + q) * Complex64::new(a * b, 0.0);
            }
        }
        out
    }
}

/// `(1/sqrt(k)) rho_k(nu_hat + u/sqrt(k), nu_hat + u'/sqrt(k))` on the window,
/// normalized to unit trace over the window nodes. Nodes falling outside the
/// component carry zero mass and zero kernel.
pub fn rescaled_posterior_kernel(
    trajectory: &Trajectory,
    state: &StateKernel,
    model: &SpectralModel,
    window: &RescaledWindow,
) -> Result<StateKernel> {
    let component = interval_component(model, window.nu_hat)?;
    let sums = trajectory.sums_at(window.k)?;
    let xs = &model.grid().points()[component.nodes.clone()];
    let ys = &sums[component.nodes.clone()];
    let rho = KernelInterpolant::new(state, component);
    let n = state.multiplicity();
    let grid = window.grid();
    let m = grid.len();
    let live: Vec<bool> = (0..m).map(|j| grid.mass(j) > 0.0 && component.contains(window.nu(j))).collect();
    let l: Vec<f64> = (0..m)
        .map(|j| if live[j] { interp::interpolate(xs, ys, window.nu(j)) } else { f64::NEG_INFINITY })
        .collect();
    let shift = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::ZeroNormalizer);
    }
    let factor: Vec<f64> = l.iter().map(|&v| (0.5 * (v - shift)).exp()).collect();
    let mut values = CMatrix::zeros(m * n, m * n);
    for j in (0..m).filter(|&j| live[j]) {
        for jj in (0..m).filter(|&jj| live[jj]) {
            let block = rho.block(window.nu(j), window.nu(jj)) * Complex64::new(factor[j] * factor[jj], 0.0);
            values.view_mut((j * n, jj * n), (n, n)).copy_from(&block);
        }
    }
    let kernel = StateKernel::new(grid.clone(), n, values)?;
    let z = kernel.trace();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::ZeroNormalizer);
    }
    let values = kernel.values() / Complex64::new(z, 0.0);
    StateKernel::new(grid.clone(), n, values)
}

/// `c_rho(nu_hat) G_F(u, u') / h(nu_hat)` on the window, with
/// `c_rho = rho(nu_hat, nu_hat) / tr rho(nu_hat, nu_hat)`, zero when the trace vanishes.
pub fn limit_kernel(model: &SpectralModel, state: &StateKernel, window: &RescaledWindow) -> Result<StateKernel> {
    let h = model.density(window.nu_hat);
    if !(h > 0.0) {
        return Err(Error::NotInterior { nu: window.nu_hat });
    }
    let component = interval_component(model, window.nu_hat)?;
    let c = rho_ratio(state, component, window.nu_hat);
    let n = state.multiplicity();
    let g = window.gaussian();
    let grid = window.grid();
    let m = grid.len();
    let mut values = CMatrix::zeros(m * n, m * n);
    for j in 0..m {
        for jj in 0..m {
            let scale = g.eval(grid.point(j), grid.point(jj)) / h;
            values
                .view_mut((j * n, jj * n), (n, n))
                .copy_from(&(&c * Complex64::new(scale, 0.0)));
        }
    }
    StateKernel::new(grid.clone(), n, values)
}

fn rho_ratio(state: &StateKernel, component: &Component, nu: f64) -> CMatrix {
    let block = KernelInterpolant::new(state, component).block(nu, nu);
    let tr: f64 = block.diagonal().iter().map(|z| z.re).sum();
    let scale = component
        .nodes
        .clone()
        .map(|i| state.block_trace(i).abs())
        .fold(0.0, f64::max);
    let n = state.multiplicity();
    if tr > 1e-12 * scale {
        block / Complex64::new(tr, 0.0)
    } else {
        CMatrix::zeros(n, n)
    }
}

/// `c_rho(nu)`, the normalized diagonal block of the initial kernel.
pub fn c_rho(model: &SpectralModel, state: &StateKernel, nu: f64) -> Result<CMatrix> {
    Ok(rho_ratio(state, interval_component(model, nu)?, nu))
}

/// Trace norm of `M_A - M_B`.
pub fn trace_norm_distance(a: &StateKernel, b: &StateKernel) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::MismatchedGrids);
    }
    Ok(trace_norm(&(a.weighted_matrix() - b.weighted_matrix())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCheck {
    pub k: usize,
    pub nu_hat: f64,
    pub fisher: f64,
    pub half_width: f64,
    pub ratio: f64,
}

/// `int exp(L(nu_hat + u/sqrt k) - L(nu_hat)) du / int exp(-F u^2 / 2) du`
/// over `[-W, W]`, with `L` interpolated from the grid sums.
pub fn laplace_condition_check(
    trajectory: &Trajectory,
    k: usize,
    model: &SpectralModel,
    probe: &ProbeModel,
    half_width: Option<f64>,
) -> Result<LaplaceCheck> {
    let nu_hat = mle(trajectory, k, model, probe, true)?.nu;
    let component = interval_component(model, nu_hat)?;
    let sums = trajectory.sums_at(k)?;
    let xs = &model.grid().points()[component.nodes.clone()];
    let ys = &sums[component.nodes.clone()];
    let fisher = probe.fisher_information(nu_hat)?;
    let w = half_width.unwrap_or(WINDOW_SIGMAS / fisher.sqrt());
    let root = (k.max(1) as f64).sqrt();
    let l0 = interp::interpolate(xs, ys, nu_hat);
    let rule = GaussLegendre::new(16);
    let num = rule.integrate(-w, w, 32, |u| (interp::interpolate(xs, ys, nu_hat + u / root) - l0).exp());
    let den = rule.integrate(-w, w, 32, |u| (-fisher * u * u / 2.0).exp());
    Ok(LaplaceCheck {
        k,
        nu_hat,
        fisher,
        half_width: w,
        ratio: num / den,
    })
}
