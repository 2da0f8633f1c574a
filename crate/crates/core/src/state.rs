//! Density matrices as matrix-valued kernels on a grid.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, hermiticity_defect, CMatrix};
use crate::spectral::{Grid, Region, SpectralModel, SpectralWeights};

/// A kernel `rho(nu_i, nu_j)` with `n x n` blocks, stored as one
/// `(N n) x (N n)` matrix with row index `i * n + a`.
#[derive(Debug, Clone)]
pub struct StateKernel {
    grid: Arc<Grid>,
    n: usize,
    values: CMatrix,
}

impl StateKernel {
    pub fn new(grid: Arc<Grid>, n: usize, values: CMatrix) -> Result<Self> {
        let dim = grid.len() * n;
        if n == 0 || values.nrows() != dim || values.ncols() != dim {
            return Err(Error::InvalidState(format!(
                "kernel must be {dim}x{dim} for {} nodes with multiplicity {n}",
                grid.len()
            )));
        }
        Ok(Self { grid, n, values })
    }

    /// Rank-one state `psi psi^*`, normalized in the discrete trace.
    ///
    /// `psi` holds the `n` components of each node consecutively.
    pub fn pure(grid: Arc<Grid>, n: usize, psi: &[Complex64]) -> Result<Self> {
        if psi.len() != grid.len() * n {
            return Err(Error::InvalidState("amplitude length does not match the grid".into()));
        }
        let norm: f64 = (0..grid.len())
            .map(|i| grid.mass(i) * psi[i * n..(i + 1) * n].iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidState("amplitude has zero norm".into()));
        }
        let scale = norm.sqrt().recip();
        let v: Vec<Complex64> = psi.iter().map(|z| z * scale).collect();
        let dim = v.len();
        let values = DMatrix::from_fn(dim, dim, |r, c| v[r] * v[c].conj());
        Self::new(grid, n, values)
    }

    /// Block-diagonal state with prescribed node probabilities.
    pub fn diagonal(grid: Arc<Grid>, n: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != grid.len() {
            return Err(Error::InvalidState("diagonal weights do not match the grid".into()));
        }
        let weights = SpectralWeights::from_masses(probs.to_vec())?;
        let dim = grid.len() * n;
        let mut values = CMatrix::zeros(dim, dim);
        for (i, &p) in weights.probs().iter().enumerate() {
            let entry = p / (grid.mass(i) * n as f64);
            for a in 0..n {
                values[(i * n + a, i * n + a)] = Complex64::new(entry, 0.0);
            }
        }
        Self::new(grid, n, values)
    }

    /// The normalized identity restricted to the grid.
    pub fn maximally_mixed(grid: Arc<Grid>, n: usize) -> Result<Self> {
        let masses = grid.masses();
        Self::diagonal(grid, n, &masses)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn multiplicity(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &CMatrix {
        &self.values
    }

    pub fn entry(&self, i: usize, a: usize, j: usize, b: usize) -> Complex64 {
        self.values[(i * self.n + a, j * self.n + b)]
    }

    /// `tr_{n x n} K[i][i]`.
    pub fn block_trace(&self, i: usize) -> f64 {
        (0..self.n).map(|a| self.entry(i, a, i, a).re).sum()
    }

    /// The `n x n` block `K[i][j]`.
    pub fn block(&self, i: usize, j: usize) -> CMatrix {
        self.values
            .view((i * self.n, j * self.n), (self.n, self.n))
            .into_owned()
    }

    fn root_masses(&self) -> Vec<f64> {
        (0..self.grid.len())
            .flat_map(|i| std::iter::repeat_n(self.grid.mass(i).max(0.0).sqrt(), self.n))
            .collect()
    }

    /// `M = D K D` with `D = diag(sqrt(mass_i))`, the discrete image of the kernel
    /// as an operator. Its trace and trace norm are those of the state.
    pub fn weighted_matrix(&self) -> CMatrix {
        let d = self.root_masses();
        let mut m = self.values.clone();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                m[(r, c)] *= d[r] * d[c];
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.grid.mass(i) * self.block_trace(i))
            .sum()
    }

    /// The spectral measure of the state as node probabilities.
    pub fn spectral_weights(&self) -> Result<SpectralWeights> {
        let masses = (0..self.grid.len())
            .map(|i| (self.grid.mass(i) * self.block_trace(i)).max(0.0))
            .collect();
        SpectralWeights::from_masses(masses)
    }

    pub fn same_grid(&self, other: &StateKernel) -> bool {
        self.n == other.n && (Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid)
    }

    pub fn to_spec(&self) -> DenseStateSpec {
        let rows = |f: fn(&Complex64) -> f64| {
            self.values
                .row_iter()
                .map(|r| r.iter().map(f).collect())
                .collect()
        };
        DenseStateSpec {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }

    pub fn from_dense(grid: Arc<Grid>, n: usize, dense: &DenseStateSpec) -> Result<Self> {
        let dim = dense.re.len();
        if dense.im.len() != dim
            || dense.re.iter().chain(&dense.im).any(|row| row.len() != dim)
        {
            return Err(Error::InvalidState("re/im arrays must be square and of equal shape".into()));
        }
        let values = DMatrix::from_fn(dim, dim, |r, c| Complex64::new(dense.re[r][c], dense.im[r][c]));
        Self::new(grid, n, values)
    }
}

/// Dense kernel as separate real and imaginary row arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseStateSpec {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

/// Amplitude profile of a pure initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AmplitudeSpec {
    Flat,
    Linear { intercept: f64, slope: f64 },
    Tabulated { points: Vec<(f64, f64)> },
}

impl AmplitudeSpec {
    fn eval(&self, nu: f64) -> f64 {
        match self {
            AmplitudeSpec::Flat => 1.0,
            AmplitudeSpec::Linear { intercept, slope } => intercept + slope * nu,
            AmplitudeSpec::Tabulated { points } => {
                crate::spectral::DensitySpec::Tabulated {
                    points: points.clone(),
                }
                .eval(nu)
            }
        }
    }
}

/// Initial state declaration used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateSpec {
    MaximallyMixed,
    /// Per-node spectral probabilities of a block-diagonal state.
    Diagonal { weights: Vec<f64> },
    /// `psi(nu) = a(nu) (1, ..., 1) / sqrt(n)`, normalized.
    Pure { amplitude: AmplitudeSpec },
    Dense(DenseStateSpec),
}

impl Default for StateSpec {
    fn default() -> Self {
        StateSpec::MaximallyMixed
    }
}

impl StateSpec {
    pub fn build(&self, model: &SpectralModel) -> Result<StateKernel> {
        let grid = model.grid().clone();
        let n = model.multiplicity();
        match self {
            StateSpec::MaximallyMixed => StateKernel::maximally_mixed(grid, n),
            StateSpec::Diagonal { weights } => StateKernel::diagonal(grid, n, weights),
            StateSpec::Pure { amplitude } => {
                let scale = (n as f64).sqrt().recip();
                let psi: Vec<Complex64> = grid
                    .points()
                    .iter()
                    .flat_map(|&nu| {
                        std::iter::repeat_n(Complex64::new(amplitude.eval(nu) * scale, 0.0), n)
                    })
                    .collect();
                StateKernel::pure(grid, n, &psi)
            }
            StateSpec::Dense(dense) => StateKernel::from_dense(grid, n, dense),
        }
    }
}

/// `tr(Pi(region) rho)` on the grid.
pub fn spectral_probability(model: &SpectralModel, state: &StateKernel, region: &Region) -> Result<f64> {
    if !Arc::ptr_eq(model.grid(), state.grid()) && **model.grid() != **state.grid() {
        return Err(Error::MismatchedGrids);
    }
    let nodes = model.resolve(region)?;
    Ok(nodes
        .iter()
        .map(|&i| state.grid().mass(i) * state.block_trace(i))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateTolerances {
    pub hermiticity: f64,
    pub positivity: f64,
    pub trace: f64,
}

impl Default for StateTolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-10,
            positivity: 1e-10,
            trace: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    pub positivity_defect: f64,
    pub trace_defect: f64,
    pub tolerances: StateTolerances,
    pub passed: bool,
}

pub fn validate_state(state: &StateKernel, tolerances: StateTolerances) -> StateReport {
    let hermiticity_defect = hermiticity_defect(state.values());
    let m = state.weighted_matrix();
    let min_eigenvalue = hermitian_eigenvalues(&m).first().copied().unwrap_or(0.0);
    let positivity_defect = (-min_eigenvalue).max(0.0);
    let trace_defect = (state.trace() - 1.0).abs();
    let passed = hermiticity_defect <= tolerances.hermiticity
        && positivity_defect <= tolerances.positivity
        && trace_defect <= tolerances.trace;
    StateReport {
        hermiticity_defect,
        min_eigenvalue,
        positivity_defect,
        trace_defect,
        tolerances,
        passed,
    }
}
