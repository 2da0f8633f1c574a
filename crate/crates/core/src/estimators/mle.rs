use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp;
use crate::probe::ProbeModel;
use crate::spectral::{ComponentKind, Region, RegionPart, SpectralModel};
use crate::state::StateKernel;
use crate::stats::BinomialComparison;
use crate::trajectory::{log_sum_exp, Trajectory};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Refinement {
    None,
    /// Golden-section search of the exact log-likelihood sum.
    Likelihood,
    /// Vertex of the quadratic through the three grid values around the argmax.
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleEstimate {
    pub k: usize,
    pub nu: f64,
    pub node: usize,
    pub refinement: Refinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlePath {
    pub estimates: Vec<MleEstimate>,
    pub refined: bool,
}

impl MlePath {
    pub fn last(&self) -> Option<&MleEstimate> {
        self.estimates.last()
    }
}

/// First index of the maximum; nodes are sorted, so ties go to the smallest `nu`.
pub fn grid_argmax(sums: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in sums.iter().enumerate() {
        if v > sums[best] {
            best = i;
        }
    }
    best
}

/// Maximizes `f` on `[a, b]` by golden-section search down to `tol`, then
/// keeps the better of the interior point and the two ends.
pub fn golden_section_max<F: FnMut(f64) -> Result<f64>>(mut a: f64, mut b: f64, tol: f64, mut f: F) -> Result<f64> {
    let (lo, hi) = (a, b);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid)?);
    for x in [lo, hi] {
        let v = f(x)?;
        if v > best.1 {
            best = (x, v);
        }
    }
    Ok(best.0)
}

/// `argmax_nu L_k(nu)`: grid argmax, optionally refined inside the
/// bracketing cell of its spectral component.
pub fn mle(
    trajectory: &Trajectory,
    k: usize,
    model: &SpectralModel,
    probe: &ProbeModel,
    refine: bool,
) -> Result<MleEstimate> {
    let sums = trajectory.sums_at(k)?;
    let node = grid_argmax(&sums);
    let pts = model.grid().points();
    let mut estimate = MleEstimate {
        k,
        nu: pts[node],
        node,
        refinement: Refinement::None,
    };
    let component = model.component_of(node);
    let (lo, hi) = match component.kind {
        ComponentKind::Interval { lo, hi, .. } if refine && k > 0 => (lo, hi),
        _ => return Ok(estimate),
    };
    let nodes = component.nodes.clone();
    let a = if node > nodes.start { pts[node - 1] } else { lo };
    let b = if node + 1 < nodes.end { pts[node + 1] } else { hi };
    let (a, b) = (a.max(lo), b.min(hi));
    let (full_lo, full_hi) = model.hull();
    let tol = 1e-8 * (full_hi - full_lo).max(f64::MIN_POSITIVE);

    if trajectory.len() >= k {
        let l = trajectory.loglik_function(probe, k);
        estimate.nu = golden_section_max(a, b, tol, |nu| l.eval(nu))?;
        estimate.refinement = Refinement::Likelihood;
    } else {
        let xs = &pts[nodes.clone()];
        let ys = &sums[nodes.clone()];
        if xs.len() >= 3 {
            let s = interp::stencil(xs, pts[node]);
            estimate.nu = golden_section_max(a, b, tol, |nu| Ok(interp::quadratic(xs, ys, s, nu)))?;
            estimate.refinement = Refinement::Interpolated;
        }
    }
    Ok(estimate)
}

pub fn mle_path(
    trajectory: &Trajectory,
    checkpoints: &[usize],
    model: &SpectralModel,
    probe: &ProbeModel,
    refine: bool,
) -> Result<MlePath> {
    let estimates = checkpoints
        .iter()
        .map(|&k| mle(trajectory, k, model, probe, refine))
        .collect::<Result<Vec<_>>>()?;
    Ok(MlePath {
        refined: refine && estimates.iter().any(|e| e.refinement != Refinement::None),
        estimates,
    })
}

/// Frequency of `N_k in region` over an ensemble against `tr(Pi(region) rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStat {
    pub k: usize,
    pub comparison: BinomialComparison,
}

pub fn mle_consistency_stat(
    ensemble: &[Trajectory],
    k: usize,
    model: &SpectralModel,
    probe: &ProbeModel,
    state: &StateKernel,
    region: &Region,
) -> Result<ConsistencyStat> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let nodes = model.resolve(region)?;
    let exact = crate::state::spectral_probability(model, state, region)?;
    let mut hits = 0;
    for t in ensemble {
        let est = mle(t, k, model, probe, false)?;
        if nodes.binary_search(&est.node).is_ok() {
            hits += 1;
        }
    }
    Ok(ConsistencyStat {
        k,
        comparison: BinomialComparison::new(hits, ensemble.len(), exact, 3.0)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTrace {
    pub points: Vec<RatePoint>,
    /// `S(reference | region)`.
    pub target: f64,
    pub reference: f64,
    pub minimizer: f64,
}

/// `-(1/k) log tr(Pi(region) rho_k)` at each checkpoint, with the target
/// relative entropy at `reference` (the hidden value or the final estimate).
pub fn rate_trace(
    trajectory: &Trajectory,
    state: &StateKernel,
    model: &SpectralModel,
    probe: &ProbeModel,
    region: &Region,
    checkpoints: &[usize],
    reference: f64,
) -> Result<RateTrace> {
    let nodes = model.resolve(region)?;
    let prior = state.spectral_weights()?;
    if prior.mass_of(&nodes) <= 0.0 {
        return Err(Error::ZeroPriorMass);
    }
    let log_prior = prior.log_probs();
    let mut points = Vec::with_capacity(checkpoints.len());
    for &k in checkpoints.iter().filter(|&&k| k > 0) {
        let sums = trajectory.sums_at(k)?;
        let all: Vec<f64> = log_prior.iter().zip(sums.iter()).map(|(p, l)| p + l).collect();
        let inside: Vec<f64> = nodes.iter().map(|&i| all[i]).collect();
        let log_mass = log_sum_exp(&inside) - log_sum_exp(&all);
        points.push(RatePoint {
            k,
            value: -log_mass / k as f64,
        });
    }
    let mut region_points: Vec<f64> = nodes.iter().map(|&i| model.grid().point(i)).collect();
    // closest point of each interval part, so the target is taken over the closure
    for part in &region.parts {
        if let RegionPart::Interval([a, b]) = *part {
            let c = reference.clamp(a.min(b), a.max(b));
            if model.component_containing(c).is_some_and(|comp| comp.is_interval()) {
                region_points.push(c);
            }
        }
    }
    let s = probe.relative_entropy(reference, &region_points)?;
    Ok(RateTrace {
        points,
        target: s.value,
        reference,
        minimizer: s.minimizer,
    })
}

/// Standardized residuals `sqrt(k) (N_k - nu) sqrt(F(nu))` over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltSamples {
    pub k: usize,
    pub residuals: Vec<f64>,
    /// Trajectories whose hidden value lies within `5/sqrt(k)` of a
    /// component boundary, or on an atom.
    pub excluded: usize,
}

pub fn clt_residual(
    trajectory: &Trajectory,
    k: usize,
    model: &SpectralModel,
    probe: &ProbeModel,
) -> Result<Option<f64>> {
    let hidden = trajectory
        .hidden()
        .ok_or_else(|| Error::Config("residuals need trajectories with a hidden value".into()))?;
    let margin = 5.0 / (k as f64).sqrt();
    let interior = model
        .component_containing(hidden.nu)
        .is_some_and(|c| c.is_interval() && c.distance_to_boundary(hidden.nu) >= margin);
    if !interior {
        return Ok(None);
    }
    let est = mle(trajectory, k, model, probe, true)?;
    let f = probe.fisher_information(hidden.nu)?;
    Ok(Some((k as f64).sqrt() * (est.nu - hidden.nu) * f.sqrt()))
}

pub fn clt_samples(
    ensemble: &[Trajectory],
    k: usize,
    model: &SpectralModel,
    probe: &ProbeModel,
) -> Result<CltSamples> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut residuals = Vec::with_capacity(ensemble.len());
    let mut excluded = 0;
    for t in ensemble {
        match clt_residual(t, k, model, probe)? {
            Some(r) => residuals.push(r),
            None => excluded += 1,
        }
    }
    Ok(CltSamples {
        k,
        residuals,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{Outcome, ProbeSpec};
    use crate::spectral::{build_spectral_model, DensitySpec};
    use crate::state::StateSpec;
    use crate::trajectory::{definetti_sample_with, trajectory_rng, Checkpoint, NodeLoglik};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn gaussian() -> ProbeModel {
        ProbeModel::new(ProbeSpec::GaussianReadout { sigma: 1.0 }).unwrap()
    }

    fn unit_interval(nodes: usize) -> SpectralModel {
        build_spectral_model(&[], &[(0.0, 1.0)], DensitySpec::default(), nodes, 1).unwrap()
    }

    fn record(model: &SpectralModel, probe: &ProbeModel, xs: &[Outcome]) -> Trajectory {
        let field = NodeLoglik::new(probe, model.grid().points()).unwrap();
        Trajectory::replay(xs, &field, &[]).unwrap()
    }

    #[test]
    fn interior_maximum_is_the_sample_mean() {
        let m = unit_interval(100);
        let p = gaussian();
        let t = record(&m, &p, &[Outcome::Real(0.2), Outcome::Real(0.4)]);
        let est = mle(&t, 2, &m, &p, true).unwrap();
        assert_abs_diff_eq!(est.nu, 0.3, epsilon = 1e-7);
        assert_eq!(est.refinement, Refinement::Likelihood);
    }

    #[test]
    fn boundary_maximum_is_clamped() {
        let m = unit_interval(100);
        let p = gaussian();
        let t = record(&m, &p, &[Outcome::Real(1.5), Outcome::Real(1.9)]);
        assert_eq!(mle(&t, 2, &m, &p, true).unwrap().nu, 1.0);
    }

    #[test]
    fn ties_go_to_the_smaller_atom() {
        let m = build_spectral_model(&[(0.0, 0.5), (1.0, 0.5)], &[], DensitySpec::default(), 2, 1).unwrap();
        let p = gaussian();
        let t = record(&m, &p, &[Outcome::Real(0.5)]);
        assert_eq!(t.loglik_sums()[0], t.loglik_sums()[1]);
        assert_eq!(mle(&t, 1, &m, &p, true).unwrap().nu, 0.0);
        assert_eq!(grid_argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn interpolated_refinement_finds_the_vertex() {
        let m = unit_interval(50);
        let p = gaussian();
        let t = record(&m, &p, &[Outcome::Real(0.43); 3]);
        let sums_only = Trajectory::from_checkpoints(vec![Checkpoint {
            k: 3,
            loglik_sums: t.loglik_sums().to_vec(),
        }]);
        let est = mle(&sums_only, 3, &m, &p, true).unwrap();
        assert_eq!(est.refinement, Refinement::Interpolated);
        assert_abs_diff_eq!(est.nu, 0.43, epsilon = 1e-7);
    }

    #[test]
    fn consistency_for_point_mass_and_full_region() {
        let m = build_spectral_model(&[(0.5, 1.0)], &[], DensitySpec::default(), 2, 1).unwrap();
        let s = StateSpec::MaximallyMixed.build(&m).unwrap();
        let p = gaussian();
        let field = NodeLoglik::new(&p, m.grid().points()).unwrap();
        let ens: Vec<_> = (0..20)
            .map(|i| definetti_sample_with(&s, &field, None, 5, &[], &mut trajectory_rng(1, i)).unwrap())
            .collect();
        let stat = mle_consistency_stat(&ens, 5, &m, &p, &s, &Region::point(0.5)).unwrap();
        assert_eq!(stat.comparison.frequency, 1.0);
        assert!(stat.comparison.within());

        let m = unit_interval(20);
        let s = StateSpec::MaximallyMixed.build(&m).unwrap();
        let field = NodeLoglik::new(&p, m.grid().points()).unwrap();
        let ens: Vec<_> = (0..20)
            .map(|i| definetti_sample_with(&s, &field, None, 5, &[], &mut trajectory_rng(2, i)).unwrap())
            .collect();
        let stat = mle_consistency_stat(&ens, 5, &m, &p, &s, &Region::hull(&m)).unwrap();
        assert_eq!(stat.comparison.frequency, 1.0);
        assert!(mle_consistency_stat(&[], 5, &m, &p, &s, &Region::hull(&m)).is_err());
    }

    #[test]
    fn rate_vanishes_on_a_region_holding_the_estimate() {
        let m = unit_interval(100);
        let s = StateSpec::MaximallyMixed.build(&m).unwrap();
        let p = gaussian();
        let field = NodeLoglik::new(&p, m.grid().points()).unwrap();
        let t = definetti_sample_with(&s, &field, Some(0.5), 2000, &[2000], &mut trajectory_rng(3, 0)).unwrap();
        let r = rate_trace(&t, &s, &m, &p, &Region::interval(0.3, 0.7), &[2000], 0.5).unwrap();
        assert!(r.points[0].value.abs() < 1e-6);
        assert_eq!(r.target, 0.0);
    }

    #[test]
    fn two_atom_rate_matches_relative_entropy() {
        let m = build_spectral_model(&[(0.0, 0.5), (1.0, 0.5)], &[], DensitySpec::default(), 2, 1).unwrap();
        let s = StateSpec::MaximallyMixed.build(&m).unwrap();
        let p = ProbeModel::new(ProbeSpec::BinaryPhase {
            phase_offset: PI / 4.0,
            phase_scale: PI / 2.0,
        })
        .unwrap();
        let field = NodeLoglik::new(&p, m.grid().points()).unwrap();
        let t = definetti_sample_with(&s, &field, Some(0.0), 20_000, &[20_000], &mut trajectory_rng(4, 0)).unwrap();
        let r = rate_trace(&t, &s, &m, &p, &Region::point(1.0), &[20_000], 0.0).unwrap();
        let f = |nu: f64, o: usize| p.density(nu, Outcome::Index(o)).unwrap();
        let oracle: f64 = (0..2).map(|o| f(0.0, o) * (f(0.0, o) / f(1.0, o)).ln()).sum();
        assert_abs_diff_eq!(r.target, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(r.points[0].value, oracle, epsilon = 0.02);
        assert!(rate_trace(&t, &s, &m, &p, &Region::point(5.0), &[10], 0.0).is_err());
    }

    #[test]
    fn gaussian_residual_is_the_standardized_mean() {
        let m = build_spectral_model(&[], &[(-5.0, 5.0)], DensitySpec::default(), 200, 1).unwrap();
        let s = StateSpec::MaximallyMixed.build(&m).unwrap();
        let p = ProbeModel::new(ProbeSpec::GaussianReadout { sigma: 2.0 }).unwrap();
        let field = NodeLoglik::new(&p, m.grid().points()).unwrap();
        let t = definetti_sample_with(&s, &field, Some(0.7), 10, &[], &mut trajectory_rng(5, 0)).unwrap();
        let mean = t.outcomes().iter().map(|o| o.value()).sum::<f64>() / 10.0;
        let r = clt_residual(&t, 10, &m, &p).unwrap().unwrap();
        assert_abs_diff_eq!(r, 10f64.sqrt() * (mean - 0.7) / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn boundary_hidden_values_are_excluded() {
        let m = unit_interval(50);
        let s = StateSpec::MaximallyMixed.build(&m).unwrap();
        let p = gaussian();
        let field = NodeLoglik::new(&p, m.grid().points()).unwrap();
        let t = definetti_sample_with(&s, &field, Some(0.01), 100, &[], &mut trajectory_rng(6, 0)).unwrap();
        let c = clt_samples(&[t], 100, &m, &p).unwrap();
        assert_eq!(c.excluded, 1);
        assert!(c.residuals.is_empty());
    }
}
