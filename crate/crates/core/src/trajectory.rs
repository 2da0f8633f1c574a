//! Outcome trajectories, the running log-likelihood field, and posteriors.
//!
//! Two samplers produce the same law on outcome sequences: the mixture
//! sampler draws a hidden value from the initial spectral weights and then
//! i.i.d. outcomes, the sequential sampler draws each outcome from the
//! current predictive distribution (node from the posterior, then outcome).
//!
//! Per-trajectory random streams are derived from a master seed as
//! `ChaCha8Rng::seed_from_u64(master)` with `set_stream(index)`, so a
//! trajectory's outcomes depend only on `(master, index)`.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::{Outcome, OutcomeSpace, ProbeModel};
use crate::spectral::SpectralWeights;
use crate::state::StateKernel;

/// Stream for trajectory `index` under `master`.
pub fn trajectory_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub stream: u64,
}

/// Per-node log-likelihood rows `l(nu_i | xi)`; tabulated once for finite
/// outcome spaces.
#[derive(Debug, Clone)]
pub struct NodeLoglik<'a> {
    probe: &'a ProbeModel,
    points: Vec<f64>,
    table: Option<Vec<Vec<f64>>>,
}

impl<'a> NodeLoglik<'a> {
    pub fn new(probe: &'a ProbeModel, points: &[f64]) -> Result<Self> {
        let table = match probe.outcome_space() {
            OutcomeSpace::Finite(m) => Some(
                (0..m)
                    .map(|o| {
                        points
                            .iter()
                            .map(|&nu| Ok(probe.log_likelihood(nu, Outcome::Index(o))?.value))
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            OutcomeSpace::Real => None,
        };
        Ok(Self {
            probe,
            points: points.to_vec(),
            table,
        })
    }

    pub fn probe(&self) -> &ProbeModel {
        self.probe
    }

    pub fn row(&self, xi: Outcome) -> Result<Cow<'_, [f64]>> {
        match (&self.table, xi) {
            (Some(table), Outcome::Index(o)) => table
                .get(o)
                .map(|r| Cow::Borrowed(r.as_slice()))
                .ok_or_else(|| Error::ForeignOutcome(xi.to_string())),
            _ => Ok(Cow::Owned(
                self.points
                    .iter()
                    .map(|&nu| Ok(self.probe.log_likelihood(nu, xi)?.value))
                    .collect::<Result<Vec<f64>>>()?,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenValue {
    /// Grid node the value was drawn at, when drawn from the spectral weights.
    pub node: Option<usize>,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub k: usize,
    pub loglik_sums: Vec<f64>,
}

/// A recorded outcome sequence with its log-likelihood field
/// `L_k[i] = sum_{j <= k} l(nu_i | xi_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    outcomes: Vec<Outcome>,
    loglik_sums: Vec<f64>,
    checkpoints: Vec<Checkpoint>,
    wanted: Vec<usize>,
    hidden: Option<HiddenValue>,
    seed: Option<SeedRecord>,
}

impl Trajectory {
    /// Empty trajectory on `nodes` grid points that will record sums at
    /// the given steps.
    pub fn new(nodes: usize, checkpoints: &[usize]) -> Self {
        let mut wanted = checkpoints.to_vec();
        wanted.sort_unstable();
        wanted.dedup();
        Self {
            outcomes: Vec::new(),
            loglik_sums: vec![0.0; nodes],
            checkpoints: Vec::new(),
            wanted,
            hidden: None,
            seed: None,
        }
    }

    /// Rebuilds a trajectory from stored outcomes.
    pub fn replay(outcomes: &[Outcome], field: &NodeLoglik<'_>, checkpoints: &[usize]) -> Result<Self> {
        let mut t = Self::new(field.points.len(), checkpoints);
        for &xi in outcomes {
            t.push(xi, &field.row(xi)?);
        }
        Ok(t)
    }

    /// A trajectory known only through stored log-likelihood sums.
    pub fn from_checkpoints(checkpoints: Vec<Checkpoint>) -> Self {
        let nodes = checkpoints.first().map_or(0, |c| c.loglik_sums.len());
        Self {
            outcomes: Vec::new(),
            loglik_sums: vec![0.0; nodes],
            wanted: checkpoints.iter().map(|c| c.k).collect(),
            checkpoints,
            hidden: None,
            seed: None,
        }
    }

    pub fn with_hidden(mut self, hidden: HiddenValue) -> Self {
        self.hidden = Some(hidden);
        self
    }

    pub fn with_seed(mut self, seed: SeedRecord) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Appends `xi`, adding its row `l(nu_i | xi)` to every sum.
    pub fn push(&mut self, xi: Outcome, row: &[f64]) {
        debug_assert_eq!(row.len(), self.loglik_sums.len());
        for (s, l) in self.loglik_sums.iter_mut().zip(row) {
            *s += l;
        }
        self.outcomes.push(xi);
        let k = self.outcomes.len();
        if self.wanted.binary_search(&k).is_ok() {
            self.checkpoints.push(Checkpoint {
                k,
                loglik_sums: self.loglik_sums.clone(),
            });
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn loglik_sums(&self) -> &[f64] {
        &self.loglik_sums
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn hidden(&self) -> Option<HiddenValue> {
        self.hidden
    }

    pub fn seed(&self) -> Option<SeedRecord> {
        self.seed
    }

    /// `L_k` if it was recorded (step 0, a checkpoint, or the final step).
    pub fn sums_at(&self, k: usize) -> Result<Cow<'_, [f64]>> {
        if k == 0 {
            return Ok(Cow::Owned(vec![0.0; self.loglik_sums.len()]));
        }
        if k == self.outcomes.len() {
            return Ok(Cow::Borrowed(&self.loglik_sums));
        }
        self.checkpoints
            .iter()
            .find(|c| c.k == k)
            .map(|c| Cow::Borrowed(c.loglik_sums.as_slice()))
            .ok_or_else(|| Error::MissingCheckpoint {
                k,
                available: self.checkpoints.iter().map(|c| c.k).collect(),
            })
    }

    /// `nu -> sum_{j <= k} l(nu | xi_j)` evaluated from the outcomes
    /// themselves (grouped by outcome for finite spaces).
    pub fn loglik_function<'p>(&self, probe: &'p ProbeModel, k: usize) -> LoglikFunction<'_, 'p> {
        let outcomes = &self.outcomes[..k.min(self.outcomes.len())];
        let counts = match probe.outcome_space() {
            OutcomeSpace::Finite(m) => {
                let mut c = vec![0usize; m];
                for xi in outcomes {
                    if let Outcome::Index(i) = xi {
                        if *i < m {
                            c[*i] += 1;
                        }
                    }
                }
                Some(c)
            }
            OutcomeSpace::Real => None,
        };
        LoglikFunction { probe, outcomes, counts }
    }
}

/// Exact log-likelihood of a trajectory prefix as a function of `nu`.
pub struct LoglikFunction<'t, 'p> {
    probe: &'p ProbeModel,
    outcomes: &'t [Outcome],
    counts: Option<Vec<usize>>,
}

impl LoglikFunction<'_, '_> {
    pub fn eval(&self, nu: f64) -> Result<f64> {
        match &self.counts {
            Some(counts) => counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(o, &c)| Ok(c as f64 * self.probe.log_likelihood(nu, Outcome::Index(o))?.value))
                .sum(),
            None => self
                .outcomes
                .iter()
                .map(|&xi| Ok(self.probe.log_likelihood(nu, xi)?.value))
                .sum(),
        }
    }
}

fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Mixture sampler: hidden node from the spectral weights of `state`, then
/// `k` i.i.d. outcomes from `mu_nu`.
pub fn definetti_sample<R: Rng + ?Sized>(
    state: &StateKernel,
    probe: &ProbeModel,
    k: usize,
    checkpoints: &[usize],
    rng: &mut R,
) -> Result<Trajectory> {
    let field = NodeLoglik::new(probe, state.grid().points())?;
    definetti_sample_with(state, &field, None, k, checkpoints, rng)
}

/// Mixture sampler with a precomputed field and an optional fixed hidden value.
pub fn definetti_sample_with<R: Rng + ?Sized>(
    state: &StateKernel,
    field: &NodeLoglik<'_>,
    hidden_nu: Option<f64>,
    k: usize,
    checkpoints: &[usize],
    rng: &mut R,
) -> Result<Trajectory> {
    let hidden = match hidden_nu {
        Some(nu) => HiddenValue { node: None, nu },
        None => {
            let weights = state.spectral_weights()?;
            let node = draw_index(weights.probs(), rng);
            HiddenValue {
                node: Some(node),
                nu: state.grid().point(node),
            }
        }
    };
    let mut traj = Trajectory::new(state.grid().len(), checkpoints).with_hidden(hidden);
    for _ in 0..k {
        let xi = field.probe().sample_outcome(hidden.nu, rng)?;
        traj.push(xi, &field.row(xi)?);
    }
    Ok(traj)
}

/// Sequential sampler: each outcome from the current predictive law.
pub fn sequential_sample<R: Rng + ?Sized>(
    state: &StateKernel,
    probe: &ProbeModel,
    k: usize,
    checkpoints: &[usize],
    rng: &mut R,
) -> Result<Trajectory> {
    let field = NodeLoglik::new(probe, state.grid().points())?;
    sequential_sample_with(state, &field, k, checkpoints, rng)
}

pub fn sequential_sample_with<R: Rng + ?Sized>(
    state: &StateKernel,
    field: &NodeLoglik<'_>,
    k: usize,
    checkpoints: &[usize],
    rng: &mut R,
) -> Result<Trajectory> {
    let mut filter = PosteriorFilter::new(&state.spectral_weights()?);
    let mut traj = Trajectory::new(state.grid().len(), checkpoints);
    for _ in 0..k {
        let node = draw_index(&filter.weights(), rng);
        let xi = field.probe().sample_outcome(state.grid().point(node), rng)?;
        let row = field.row(xi)?;
        filter.update(&row);
        traj.push(xi, &row);
    }
    Ok(traj)
}

/// Posterior spectral weights `lambda_i exp(L_k[i])`, normalized in log space.
pub fn posterior_weights(state: &StateKernel, trajectory: &Trajectory, k: usize) -> Result<SpectralWeights> {
    let sums = trajectory.sums_at(k)?;
    posterior_weights_from_sums(&state.spectral_weights()?, &sums)
}

pub fn posterior_weights_from_sums(prior: &SpectralWeights, sums: &[f64]) -> Result<SpectralWeights> {
    let log_masses: Vec<f64> = prior
        .probs()
        .iter()
        .zip(sums)
        .map(|(&p, &l)| if p > 0.0 { p.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    SpectralWeights::from_log_masses(&log_masses)
}

/// One-step Bayesian updates of the spectral weights in log space.
#[derive(Debug, Clone)]
pub struct PosteriorFilter {
    log_weights: Vec<f64>,
}

impl PosteriorFilter {
    pub fn new(prior: &SpectralWeights) -> Self {
        Self {
            log_weights: prior.log_probs(),
        }
    }

    pub fn update(&mut self, row: &[f64]) {
        for (w, l) in self.log_weights.iter_mut().zip(row) {
            *w += l;
        }
        let lse = log_sum_exp(&self.log_weights);
        for w in &mut self.log_weights {
            *w -= lse;
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Predictive probability of `xi` given the current weights.
    pub fn predictive(&self, row: &[f64]) -> f64 {
        self.log_weights
            .iter()
            .zip(row)
            .map(|(w, l)| (w + l).exp())
            .sum()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `rho_k(i, j) = e^{L_i / 2} rho(i, j) e^{L_j / 2} / Z`, with `Z` the discrete trace.
pub fn posterior_kernel(state: &StateKernel, trajectory: &Trajectory, k: usize) -> Result<StateKernel> {
    let sums = trajectory.sums_at(k)?;
    posterior_kernel_from_sums(state, &sums)
}

pub fn posterior_kernel_from_sums(state: &StateKernel, sums: &[f64]) -> Result<StateKernel> {
    let grid = state.grid();
    let n = state.multiplicity();
    let shift = (0..grid.len())
        .filter(|&i| grid.mass(i) * state.block_trace(i) > 0.0)
        .map(|i| sums[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::ZeroNormalizer);
    }
    let factors: Vec<f64> = sums.iter().map(|&l| (0.5 * (l - shift)).exp()).collect();
    let z: f64 = (0..grid.len())
        .map(|i| grid.mass(i) * factors[i] * factors[i] * state.block_trace(i))
        .sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::ZeroNormalizer);
    }
    let mut values = state.values().clone();
    for c in 0..values.ncols() {
        for r in 0..values.nrows() {
            values[(r, c)] *= factors[r / n] * factors[c / n] / z;
        }
    }
    StateKernel::new(grid.clone(), n, values)
}

fn enumerate_tuples(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..m).map(move |o| {
                    let mut t = t.clone();
                    t.push(o);
                    t
                })
            })
            .collect();
    }
    out
}

fn finite_outcomes(probe: &ProbeModel) -> Result<usize> {
    match probe.outcome_space() {
        OutcomeSpace::Finite(m) => Ok(m),
        OutcomeSpace::Real => Err(Error::UnsupportedDensity(
            "exact tuple distributions need a finite outcome space".into(),
        )),
    }
}

/// Exact law of `(xi_1..xi_k)` from the mixture representation
/// `sum_i lambda_i prod_j f(xi_j | nu_i)`.
pub fn exact_definetti_distribution(
    state: &StateKernel,
    probe: &ProbeModel,
    k: usize,
) -> Result<Vec<(Vec<usize>, f64)>> {
    let m = finite_outcomes(probe)?;
    let prior = state.spectral_weights()?;
    let points = state.grid().points();
    enumerate_tuples(m, k)
        .into_iter()
        .map(|tuple| {
            let mut p = 0.0;
            for (i, &w) in prior.probs().iter().enumerate() {
                let mut term = w;
                for &o in &tuple {
                    term *= probe.density(points[i], Outcome::Index(o))?;
                }
                p += term;
            }
            Ok((tuple, p))
        })
        .collect()
}

/// Exact law of `(xi_1..xi_k)` by the chain rule through the sequential
/// sampler's predictive distributions.
pub fn exact_sequential_distribution(
    state: &StateKernel,
    probe: &ProbeModel,
    k: usize,
) -> Result<Vec<(Vec<usize>, f64)>> {
    let m = finite_outcomes(probe)?;
    let field = NodeLoglik::new(probe, state.grid().points())?;
    let prior = state.spectral_weights()?;
    enumerate_tuples(m, k)
        .into_iter()
        .map(|tuple| {
            let mut filter = PosteriorFilter::new(&prior);
            let mut p = 1.0;
            for &o in &tuple {
                let row = field.row(Outcome::Index(o))?;
                p *= filter.predictive(&row);
                filter.update(&row);
            }
            Ok((tuple, p))
        })
        .collect()
}
