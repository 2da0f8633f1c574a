use serde::{Deserialize, Serialize};

use super::{Outcome, ProbeModel};
use crate::spectral::SpectralModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeTolerances {
    pub normalization: f64,
    /// Minimal L1 distance between `f(.|nu_i)` and `f(.|nu_j)`, `i != j`.
    pub identifiability: f64,
    pub derivative: f64,
    pub score_mean: f64,
    pub information_identity: f64,
}

impl Default for ProbeTolerances {
    fn default() -> Self {
        Self {
            normalization: 1e-8,
            identifiability: 1e-6,
            derivative: 1e-6,
            score_mean: 1e-6,
            information_identity: 1e-6,
        }
    }
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub assumption: String,
    pub passed: bool,
    /// Worst value of the checked quantity over the grid.
    pub worst: f64,
    pub threshold: f64,
    /// Where the worst value occurs.
    pub location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<CheckResult>,
    pub caveats: Vec<String>,
    pub passed: bool,
}

impl AssumptionReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Worst {
    value: f64,
    location: Option<String>,
}

impl Worst {
    fn max() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            location: None,
        }
    }

    fn min() -> Self {
        Self {
            value: f64::INFINITY,
            location: None,
        }
    }

    fn raise(&mut self, v: f64, loc: impl FnOnce() -> String) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.location = Some(loc());
        }
    }

    fn lower(&mut self, v: f64, loc: impl FnOnce() -> String) {
        if v < self.value || v.is_nan() {
            self.value = v;
            self.location = Some(loc());
        }
    }
}

fn result(name: &str, assumption: &str, worst: Worst, threshold: f64, passed: bool) -> CheckResult {
    CheckResult {
        name: name.into(),
        assumption: assumption.into(),
        passed,
        worst: worst.value,
        threshold,
        location: worst.location,
    }
}

/// Checks the probe's regularity assumptions over the spectral grid.
///
/// All checks run on grid nodes and on the outcome quadrature nodes, never
/// off-grid.
pub fn validate_probe(probe: &ProbeModel, model: &SpectralModel, tol: ProbeTolerances) -> AssumptionReport {
    let nus = model.grid().points();
    let (lo, hi) = model.hull();
    let outcomes = probe.outcome_quadrature(lo, hi);
    // density[i][q] = f(xi_q | nu_i)
    let density: Vec<Vec<f64>> = nus
        .iter()
        .map(|&nu| outcomes.iter().map(|&(xi, _)| probe.raw_density(nu, xi)).collect())
        .collect();

    let mut checks = Vec::new();

    let mut norm = Worst::max();
    for (i, &nu) in nus.iter().enumerate() {
        let total: f64 = outcomes.iter().zip(&density[i]).map(|(&(_, w), f)| w * f).sum();
        norm.raise((total - 1.0).abs(), || format!("nu = {nu}"));
    }
    let ok = norm.value < tol.normalization;
    checks.push(result("normalization", "normalization", norm, tol.normalization, ok));

    // For continuous outcomes positivity is required inside each mu_nu
    // window (the tabulated range, or 7.5 sigma around nu for the readout).
    let mut pos = Worst::min();
    for (i, &nu) in nus.iter().enumerate() {
        for (q, &(xi, _)) in outcomes.iter().enumerate() {
            if in_window(probe, nu, xi) {
                pos.lower(density[i][q], || format!("nu = {nu}, xi = {xi}"));
            }
        }
    }
    let ok = pos.value > 0.0;
    checks.push(result("positivity", "regularity: positivity", pos, 0.0, ok));

    let mut ident = Worst::min();
    for i in 0..nus.len() {
        for j in (i + 1)..nus.len() {
            let l1: f64 = outcomes
                .iter()
                .enumerate()
                .map(|(q, &(_, w))| w * (density[i][q] - density[j][q]).abs())
                .sum();
            ident.lower(l1, || format!("nu = {} vs nu = {}", nus[i], nus[j]));
        }
    }
    if nus.len() < 2 {
        ident.value = f64::INFINITY;
    }
    let ok = ident.value > tol.identifiability;
    checks.push(result(
        "identifiability",
        "consistency: identifiability",
        ident,
        tol.identifiability,
        ok,
    ));

    // continuity / differentiability: analytic derivatives vs central differences,
    // without the continuation past the hull
    let mut deriv = Worst::max();
    let h = super::FD_STEP;
    for &nu in nus {
        for &(xi, _) in sample_outcomes(&outcomes, probe, nu).iter() {
            let (Ok(c), Ok(up), Ok(down)) = (
                probe.raw_log_likelihood(nu, xi),
                probe.raw_log_likelihood(nu + h, xi),
                probe.raw_log_likelihood(nu - h, xi),
            ) else {
                deriv.raise(f64::INFINITY, || format!("nu = {nu}, xi = {xi} (zero density)"));
                continue;
            };
            let e1 = (c.d1 - (up.value - down.value) / (2.0 * h)).abs() / c.d1.abs().max(1.0);
            let e2 = (c.d2 - (up.d1 - down.d1) / (2.0 * h)).abs() / c.d2.abs().max(1.0);
            deriv.raise(e1.max(e2), || format!("nu = {nu}, xi = {xi}"));
        }
    }
    let ok = deriv.value < tol.derivative;
    checks.push(result(
        "differentiability",
        "consistency and regularity: continuity",
        deriv,
        tol.derivative,
        ok,
    ));

    // dominance: E_nu[sup_{nu'} |l(nu'|xi)|] over grid nu'
    let sup_abs: Vec<f64> = (0..outcomes.len())
        .map(|q| density.iter().map(|row| row[q].ln().abs()).fold(0.0, f64::max))
        .collect();
    let mut dom = Worst::max();
    for (i, &nu) in nus.iter().enumerate() {
        let e: f64 = outcomes
            .iter()
            .enumerate()
            .filter(|&(q, _)| density[i][q] > 0.0)
            .map(|(q, &(_, w))| w * density[i][q] * sup_abs[q])
            .sum();
        dom.raise(e, || format!("nu = {nu}"));
    }
    let ok = dom.value.is_finite();
    checks.push(result("dominance", "consistency: dominance", dom, f64::INFINITY, ok));

    let mut score = Worst::max();
    let mut identity = Worst::max();
    let mut curvature = Worst::min();
    for &nu in nus {
        match (probe.expected_score(nu), probe.fisher_information(nu), probe.expected_curvature(nu)) {
            (Ok(s), Ok(f), Ok(c)) => {
                score.raise(s.abs(), || format!("nu = {nu}"));
                identity.raise((c + f).abs(), || format!("nu = {nu}"));
                curvature.lower(-c, || format!("nu = {nu}"));
            }
            _ => {
                score.raise(f64::INFINITY, || format!("nu = {nu} (not integrable)"));
                identity.raise(f64::INFINITY, || format!("nu = {nu} (not integrable)"));
                curvature.lower(f64::NEG_INFINITY, || format!("nu = {nu} (not integrable)"));
            }
        }
    }
    let ok = score.value < tol.score_mean;
    checks.push(result("score-mean-zero", "regularity: integrability", score, tol.score_mean, ok));
    let ok = identity.value < tol.information_identity;
    checks.push(result(
        "information-identity",
        "regularity: integrability",
        identity,
        tol.information_identity,
        ok,
    ));
    let ok = curvature.value > 0.0 && curvature.value.is_finite();
    checks.push(result("positive-information", "regularity: integrability", curvature, 0.0, ok));

    checks.push(CheckResult {
        name: "gauge".into(),
        assumption: "gauge: real nonnegative amplitudes".into(),
        passed: true,
        worst: 0.0,
        threshold: 0.0,
        location: None,
    });

    let mut caveats = vec![
        "dominance is certified on grid points only; off-grid suprema are not bounded".to_string(),
    ];
    if !probe.has_analytic_derivatives() {
        caveats.push(
            "derivatives are central differences of the tabulated interpolant; the differentiability check compares them with themselves"
                .to_string(),
        );
    }
    let passed = checks.iter().all(|c| c.passed);
    AssumptionReport {
        checks,
        caveats,
        passed,
    }
}

fn in_window(probe: &ProbeModel, nu: f64, xi: Outcome) -> bool {
    match (probe.spec(), xi) {
        (_, Outcome::Index(_)) => true,
        (super::ProbeSpec::GaussianReadout { sigma }, Outcome::Real(x)) => {
            (x - nu).abs() <= super::GAUSSIAN_WINDOW * sigma
        }
        (super::ProbeSpec::TabulatedContinuous { xi: xs, .. }, Outcome::Real(x)) => {
            x > xs[0] && x < xs[xs.len() - 1]
        }
        _ => false,
    }
}

// A thinned set of outcome nodes near the bulk of mu_nu for derivative checks.
fn sample_outcomes(outcomes: &[(Outcome, f64)], probe: &ProbeModel, nu: f64) -> Vec<(Outcome, f64)> {
    if outcomes.len() <= 16 {
        return outcomes.to_vec();
    }
    let bulk: Vec<(Outcome, f64)> = outcomes
        .iter()
        .copied()
        .filter(|&(xi, _)| probe.raw_density(nu, xi) > 1e-6)
        .collect();
    let stride = (bulk.len() / 24).max(1);
    bulk.into_iter().step_by(stride).collect()
}
