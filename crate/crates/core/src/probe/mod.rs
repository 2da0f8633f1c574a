//! Probe outcome statistics `f(xi|nu)`.
//!
//! The jump amplitudes are fixed to `V_xi(nu) = sqrt(f(xi|nu))`, real and
//! nonnegative; models with complex phases cannot be declared. Expectations
//! over continuous outcomes use composite Gauss-Legendre quadrature on a
//! truncated window (7.5 standard deviations on each side for the Gaussian
//! readout, so the discarded mass is below 1e-13).

mod validate;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp;
use crate::quadrature::GaussLegendre;
use crate::spectral::SpectralModel;

pub use validate::{validate_probe, AssumptionReport, CheckResult, ProbeTolerances};

/// Half-width of the Gaussian outcome window, in units of `sigma`.
pub const GAUSSIAN_WINDOW: f64 = 7.5;
/// Central-difference step for first derivatives of tabulated densities.
pub const FD_STEP: f64 = 1e-5;
/// Central-difference step for second derivatives of tabulated densities.
pub const FD_STEP_SECOND: f64 = 1e-4;

fn one() -> f64 {
    1.0
}

/// A single probe outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Index(usize),
    Real(f64),
}

impl Outcome {
    pub fn value(self) -> f64 {
        match self {
            Outcome::Index(i) => i as f64,
            Outcome::Real(x) => x,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Index(i) => write!(f, "{i}"),
            Outcome::Real(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeSpace {
    /// `{0, .., m-1}` with counting measure.
    Finite(usize),
    /// The real line with Lebesgue measure.
    Real,
}

impl OutcomeSpace {
    pub fn parse(&self, text: &str) -> Result<Outcome> {
        let bad = || Error::ForeignOutcome(text.to_string());
        match *self {
            OutcomeSpace::Finite(m) => {
                let i: usize = text.trim().parse().map_err(|_| bad())?;
                if i < m {
                    Ok(Outcome::Index(i))
                } else {
                    Err(bad())
                }
            }
            OutcomeSpace::Real => text.trim().parse().map(Outcome::Real).map_err(|_| bad()),
        }
    }
}

/// Probe family declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProbeSpec {
    /// `f(xi|nu) = N(xi; nu, sigma^2)`.
    GaussianReadout { sigma: f64 },
    /// Outcomes `{0, 1}` with `f(0|nu) = cos^2(theta/2)`, `theta = offset + scale * nu`.
    BinaryPhase {
        #[serde(default)]
        phase_offset: f64,
        #[serde(default = "one")]
        phase_scale: f64,
    },
    /// Finite outcomes; `values[outcome][j] = f(outcome | nu[j])`.
    TabulatedFinite { nu: Vec<f64>, values: Vec<Vec<f64>> },
    /// Real outcomes; `values[k][j] = f(xi[k] | nu[j])`, linear in `xi`
    /// between nodes and zero outside `[xi[0], xi[last]]`.
    TabulatedContinuous {
        xi: Vec<f64>,
        nu: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

/// `l(nu|xi)` with its first two `nu`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Where `f(xi|.)` is continued past the spectrum: unchanged on `[lo, hi]`,
/// `l` multiplied by a quintic C2 step down to zero over `margin`, and
/// `f = 1` beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extension {
    pub lo: f64,
    pub hi: f64,
    pub margin: f64,
}

impl Extension {
    /// Spectrum hull plus three grid spacings of blending margin.
    pub fn for_model(model: &SpectralModel) -> Self {
        let (lo, hi) = model.hull();
        Self {
            lo,
            hi,
            margin: 3.0 * model.min_spacing(),
        }
    }

    // (s, ds/dnu, d2s/dnu2)
    fn blend(&self, nu: f64) -> (f64, f64, f64) {
        let (t, dt) = if nu > self.hi {
            ((nu - self.hi) / self.margin, 1.0 / self.margin)
        } else if nu < self.lo {
            ((self.lo - nu) / self.margin, -1.0 / self.margin)
        } else {
            return (1.0, 0.0, 0.0);
        };
        if t >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let s = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let ds = -30.0 * t * t * (1.0 - t) * (1.0 - t);
        let d2s = -60.0 * t * (1.0 - 3.0 * t + 2.0 * t * t);
        (s, ds * dt, d2s * dt * dt)
    }
}

#[derive(Debug, Clone)]
pub struct ProbeModel {
    spec: ProbeSpec,
    extension: Option<Extension>,
    rule: GaussLegendre,
}

impl ProbeModel {
    pub fn new(spec: ProbeSpec) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidProbe(msg));
        let increasing = |xs: &[f64]| xs.windows(2).all(|w| w[1] > w[0]);
        match &spec {
            ProbeSpec::GaussianReadout { sigma } => {
                if !(*sigma > 0.0) || !sigma.is_finite() {
                    return invalid(format!("sigma must be positive, got {sigma}"));
                }
            }
            ProbeSpec::BinaryPhase {
                phase_offset,
                phase_scale,
            } => {
                if !phase_offset.is_finite() || !phase_scale.is_finite() || *phase_scale == 0.0 {
                    return invalid("phase_offset and phase_scale must be finite, scale nonzero".into());
                }
            }
            ProbeSpec::TabulatedFinite { nu, values } => {
                if nu.len() < 3 || !increasing(nu) {
                    return invalid("tabulated nu grid needs at least 3 increasing nodes".into());
                }
                if values.len() < 2 || values.iter().any(|row| row.len() != nu.len()) {
                    return invalid("tabulated values must be outcomes x nu with at least 2 outcomes".into());
                }
                if values.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return invalid("tabulated densities must be finite and nonnegative".into());
                }
            }
            ProbeSpec::TabulatedContinuous { xi, nu, values } => {
                if nu.len() < 3 || !increasing(nu) || xi.len() < 2 || !increasing(xi) {
                    return invalid("tabulated grids need increasing nodes (>= 3 in nu, >= 2 in xi)".into());
                }
                if values.len() != xi.len() || values.iter().any(|row| row.len() != nu.len()) {
                    return invalid("tabulated values must be xi x nu".into());
                }
                if values.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return invalid("tabulated densities must be finite and nonnegative".into());
                }
            }
        }
        Ok(Self {
            spec,
            extension: None,
            rule: GaussLegendre::new(16),
        })
    }

    /// Attaches the continuation of `f(xi|.)` beyond the model's spectrum.
    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = Some(extension);
        self
    }

    pub fn spec(&self) -> &ProbeSpec {
        &self.spec
    }

    pub fn extension(&self) -> Option<&Extension> {
        self.extension.as_ref()
    }

    pub fn outcome_space(&self) -> OutcomeSpace {
        match &self.spec {
            ProbeSpec::GaussianReadout { .. } | ProbeSpec::TabulatedContinuous { .. } => OutcomeSpace::Real,
            ProbeSpec::BinaryPhase { .. } => OutcomeSpace::Finite(2),
            ProbeSpec::TabulatedFinite { values, .. } => OutcomeSpace::Finite(values.len()),
        }
    }

    /// Whether derivatives come from closed forms rather than finite differences.
    pub fn has_analytic_derivatives(&self) -> bool {
        matches!(
            self.spec,
            ProbeSpec::GaussianReadout { .. } | ProbeSpec::BinaryPhase { .. }
        )
    }

    fn check_outcome(&self, xi: Outcome) -> Result<()> {
        match (self.outcome_space(), xi) {
            (OutcomeSpace::Finite(m), Outcome::Index(i)) if i < m => Ok(()),
            (OutcomeSpace::Real, Outcome::Real(x)) if x.is_finite() => Ok(()),
            _ => Err(Error::ForeignOutcome(xi.to_string())),
        }
    }

    /// `f(xi|nu)` of the family itself, ignoring the extension.
    pub fn raw_density(&self, nu: f64, xi: Outcome) -> f64 {
        match (&self.spec, xi) {
            (ProbeSpec::GaussianReadout { sigma }, Outcome::Real(x)) => {
                let z = (x - nu) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            (
                ProbeSpec::BinaryPhase {
                    phase_offset,
                    phase_scale,
                },
                Outcome::Index(i),
            ) => {
                let half = 0.5 * (phase_offset + phase_scale * nu);
                if i == 0 {
                    half.cos().powi(2)
                } else {
                    half.sin().powi(2)
                }
            }
            (ProbeSpec::TabulatedFinite { nu: nodes, values }, Outcome::Index(i)) => {
                tabulated_column(nodes, &values[i], nu)
            }
            (ProbeSpec::TabulatedContinuous { xi: xs, nu: nodes, values }, Outcome::Real(x)) => {
                if x < xs[0] || x > xs[xs.len() - 1] {
                    return 0.0;
                }
                let k = xs.partition_point(|&p| p <= x).clamp(1, xs.len() - 1);
                let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                let left = tabulated_column(nodes, &values[k - 1], nu);
                let right = tabulated_column(nodes, &values[k], nu);
                (1.0 - t) * left + t * right
            }
            _ => 0.0,
        }
    }

    /// `f(xi|nu)` including the continuation outside the spectrum.
    pub fn density(&self, nu: f64, xi: Outcome) -> Result<f64> {
        self.check_outcome(xi)?;
        match self.extension {
            Some(ext) if nu < ext.lo || nu > ext.hi => Ok(self.log_likelihood(nu, xi)?.value.exp()),
            _ => Ok(self.raw_density(nu, xi)),
        }
    }

    fn raw_log_likelihood(&self, nu: f64, xi: Outcome) -> Result<LogLik> {
        self.check_outcome(xi)?;
        let zero = || Error::ZeroDensity { nu, xi: xi.value() };
        match (&self.spec, xi) {
            (ProbeSpec::GaussianReadout { sigma }, Outcome::Real(x)) => {
                let var = sigma * sigma;
                let r = x - nu;
                Ok(LogLik {
                    value: -0.5 * r * r / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln(),
                    d1: r / var,
                    d2: -1.0 / var,
                })
            }
            (
                ProbeSpec::BinaryPhase {
                    phase_offset,
                    phase_scale,
                },
                Outcome::Index(i),
            ) => {
                let half = 0.5 * (phase_offset + phase_scale * nu);
                let (c, s) = (half.cos(), half.sin());
                let b = *phase_scale;
                let ll = if i == 0 {
                    LogLik {
                        value: (c * c).ln(),
                        d1: -b * s / c,
                        d2: -0.5 * b * b / (c * c),
                    }
                } else {
                    LogLik {
                        value: (s * s).ln(),
                        d1: b * c / s,
                        d2: -0.5 * b * b / (s * s),
                    }
                };
                if ll.value.is_finite() && ll.d1.is_finite() && ll.d2.is_finite() {
                    Ok(ll)
                } else {
                    Err(zero())
                }
            }
            _ => {
                let l = |v: f64| self.raw_density(v, xi).ln();
                let value = l(nu);
                if !value.is_finite() {
                    return Err(zero());
                }
                let h1 = FD_STEP;
                let h2 = FD_STEP_SECOND;
                let d1 = (l(nu + h1) - l(nu - h1)) / (2.0 * h1);
                let d2 = (l(nu + h2) - 2.0 * value + l(nu - h2)) / (h2 * h2);
                if d1.is_finite() && d2.is_finite() {
                    Ok(LogLik { value, d1, d2 })
                } else {
                    Err(zero())
                }
            }
        }
    }

    /// `l(nu|xi) = log f(xi|nu)` with `nu`-derivatives.
    pub fn log_likelihood(&self, nu: f64, xi: Outcome) -> Result<LogLik> {
        let Some(ext) = self.extension else {
            return self.raw_log_likelihood(nu, xi);
        };
        let (s, ds, d2s) = ext.blend(nu);
        if s == 1.0 && ds == 0.0 {
            return self.raw_log_likelihood(nu, xi);
        }
        if s == 0.0 && ds == 0.0 && d2s == 0.0 {
            self.check_outcome(xi)?;
            return Ok(LogLik {
                value: 0.0,
                d1: 0.0,
                d2: 0.0,
            });
        }
        let raw = self.raw_log_likelihood(nu, xi)?;
        Ok(LogLik {
            value: s * raw.value,
            d1: ds * raw.value + s * raw.d1,
            d2: d2s * raw.value + 2.0 * ds * raw.d1 + s * raw.d2,
        })
    }

    /// Draws `xi ~ mu_nu`.
    ///
    /// Finite outcomes use inverse-CDF sampling; the Gaussian readout adds a
    /// standard normal draw; tabulated continuous densities use rejection from
    /// a uniform envelope at the largest tabulated value for `nu`.
    pub fn sample_outcome<R: Rng + ?Sized>(&self, nu: f64, rng: &mut R) -> Result<Outcome> {
        if let Some(ext) = self.extension {
            let tol = 1e-9 * (ext.hi - ext.lo).abs().max(1.0);
            if nu < ext.lo - tol || nu > ext.hi + tol {
                return Err(Error::OutsideExtension {
                    nu,
                    lo: ext.lo,
                    hi: ext.hi,
                });
            }
        }
        match &self.spec {
            ProbeSpec::GaussianReadout { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                Ok(Outcome::Real(nu + sigma * z))
            }
            ProbeSpec::BinaryPhase { .. } | ProbeSpec::TabulatedFinite { .. } => {
                let OutcomeSpace::Finite(m) = self.outcome_space() else {
                    unreachable!()
                };
                let probs: Vec<f64> = (0..m).map(|i| self.raw_density(nu, Outcome::Index(i))).collect();
                let total: f64 = probs.iter().sum();
                let u: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Ok(Outcome::Index(i));
                    }
                }
                Ok(Outcome::Index(m - 1))
            }
            ProbeSpec::TabulatedContinuous { xi, values, nu: nodes } => {
                let envelope = values
                    .iter()
                    .map(|row| tabulated_column(nodes, row, nu))
                    .fold(0.0, f64::max);
                if !(envelope > 0.0) {
                    return Err(Error::UnsupportedDensity(format!(
                        "tabulated density vanishes identically at nu = {nu}"
                    )));
                }
                let (lo, hi) = (xi[0], xi[xi.len() - 1]);
                for _ in 0..1_000_000 {
                    let x = lo + (hi - lo) * rng.random::<f64>();
                    if rng.random::<f64>() * envelope < self.raw_density(nu, Outcome::Real(x)) {
                        return Ok(Outcome::Real(x));
                    }
                }
                Err(Error::UnsupportedDensity("rejection sampler did not accept".into()))
            }
        }
    }

    /// Outcome nodes and `mu`-weights covering `mu_nu` for every `nu` in
    /// `[lo, hi]`.
    pub fn outcome_quadrature(&self, lo: f64, hi: f64) -> Vec<(Outcome, f64)> {
        match &self.spec {
            ProbeSpec::BinaryPhase { .. } | ProbeSpec::TabulatedFinite { .. } => {
                let OutcomeSpace::Finite(m) = self.outcome_space() else {
                    unreachable!()
                };
                (0..m).map(|i| (Outcome::Index(i), 1.0)).collect()
            }
            ProbeSpec::GaussianReadout { sigma } => {
                let a = lo - GAUSSIAN_WINDOW * sigma;
                let b = hi + GAUSSIAN_WINDOW * sigma;
                let panels = ((b - a) / (0.5 * sigma)).ceil() as usize;
                let mut nodes = Vec::with_capacity(panels * self.rule.order());
                self.rule
                    .for_each_node(a, b, panels, |x, w| nodes.push((Outcome::Real(x), w)));
                nodes
            }
            ProbeSpec::TabulatedContinuous { xi, .. } => {
                let cell_rule = GaussLegendre::new(8);
                let mut nodes = Vec::new();
                for w in xi.windows(2) {
                    cell_rule.for_each_node(w[0], w[1], 1, |x, wt| nodes.push((Outcome::Real(x), wt)));
                }
                nodes
            }
        }
    }

    /// `E_nu[g(xi)]` by the outcome quadrature.
    pub fn expectation<F>(&self, nu: f64, mut g: F) -> Result<f64>
    where
        F: FnMut(Outcome) -> Result<f64>,
    {
        let mut total = 0.0;
        for (xi, w) in self.outcome_quadrature(nu, nu) {
            let f = self.raw_density(nu, xi);
            if f > 0.0 {
                total += w * f * g(xi)?;
            }
        }
        Ok(total)
    }

    /// `int f(xi|nu) dmu(xi)`.
    pub fn normalization(&self, nu: f64) -> f64 {
        self.outcome_quadrature(nu, nu)
            .into_iter()
            .map(|(xi, w)| w * self.raw_density(nu, xi))
            .sum()
    }

    /// `F(nu) = E_nu[(d/dnu l)^2]`.
    pub fn fisher_information(&self, nu: f64) -> Result<f64> {
        let value = self.expectation(nu, |xi| Ok(self.raw_log_likelihood(nu, xi)?.d1.powi(2)))?;
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(Error::DegenerateFisher { nu, value })
        }
    }

    /// `E_nu[d^2/dnu^2 l]`, which equals `-F(nu)` for regular families.
    pub fn expected_curvature(&self, nu: f64) -> Result<f64> {
        self.expectation(nu, |xi| Ok(self.raw_log_likelihood(nu, xi)?.d2))
    }

    /// `E_nu[d/dnu l]`, zero for regular families.
    pub fn expected_score(&self, nu: f64) -> Result<f64> {
        self.expectation(nu, |xi| Ok(self.raw_log_likelihood(nu, xi)?.d1))
    }

    /// `S(nu | region) = min_{nu'} E_nu[l(nu|xi) - l(nu'|xi)]` over the given
    /// region points, by exhaustive search.
    pub fn relative_entropy(&self, nu: f64, region: &[f64]) -> Result<RelativeEntropy> {
        if region.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let nodes = self.outcome_quadrature(nu, nu);
        let mut base = Vec::with_capacity(nodes.len());
        for &(xi, w) in &nodes {
            let f = self.raw_density(nu, xi);
            if f > 0.0 {
                base.push((xi, w * f, self.raw_log_likelihood(nu, xi)?.value));
            }
        }
        let mut best = RelativeEntropy {
            value: f64::INFINITY,
            minimizer: region[0],
        };
        for &other in region {
            let mut s = 0.0;
            for &(xi, wf, l) in &base {
                let lo = match self.raw_log_likelihood(other, xi) {
                    Ok(ll) => ll.value,
                    Err(Error::ZeroDensity { .. }) => f64::NEG_INFINITY,
                    Err(e) => return Err(e),
                };
                s += wf * (l - lo);
            }
            if s < best.value {
                best = RelativeEntropy {
                    value: s,
                    minimizer: other,
                };
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeEntropy {
    pub value: f64,
    pub minimizer: f64,
}

fn tabulated_column(nodes: &[f64], column: &[f64], nu: f64) -> f64 {
    let x = nu.clamp(nodes[0], nodes[nodes.len() - 1]);
    interp::interpolate(nodes, column, x).max(0.0)
}
