use std::collections::BTreeMap;

use super::config::{Experiment, ExperimentKind, LoadedConfig};
use super::report::{Check, Report, Table};
use crate::error::{Error, Result};
use crate::estimators::{
    clt_residual, laplace_condition_check, limit_kernel, mle, rate_trace, rescaled_posterior_kernel,
    trace_norm_distance, MleEstimate, RatePoint, RescaledWindow, WINDOW_NODES,
};
use crate::probe::{Outcome, ProbeModel};
use crate::spectral::SpectralModel;
use crate::state::spectral_probability;
use crate::stats::{ks_test, mean, median, standard_normal_cdf, variance, BinomialComparison};
use crate::trajectory::Trajectory;

/// `E_nu[l(nu_i | xi)]` at every grid node, by outcome quadrature.
pub fn expected_loglik(probe: &ProbeModel, model: &SpectralModel, nu: f64) -> Result<Vec<f64>> {
    let nodes: Vec<(Outcome, f64)> = {
        let (lo, hi) = model.hull();
        probe.outcome_quadrature(lo.min(nu), hi.max(nu))
    };
    let weighted: Vec<(Outcome, f64)> = nodes
        .into_iter()
        .map(|(xi, w)| Ok((xi, w * probe.density(nu, xi)?)))
        .filter(|r: &Result<(Outcome, f64)>| r.as_ref().map_or(true, |(_, wf)| *wf > 0.0))
        .collect::<Result<_>>()?;
    model
        .grid()
        .points()
        .iter()
        .map(|&other| {
            weighted
                .iter()
                .map(|&(xi, wf)| Ok(wf * probe.log_likelihood(other, xi)?.value))
                .sum()
        })
        .collect()
}

/// `sup_i |L_k[i] / k - E_nu[l(nu_i | xi)]` at each checkpoint (`k = 0`
/// gives `sup_i |E_nu[l(nu_i | xi)]|`).
pub fn uniform_lln_residual(trajectory: &Trajectory, expected: &[f64], checkpoints: &[usize]) -> Result<Vec<f64>> {
    checkpoints
        .iter()
        .map(|&k| {
            let sums = trajectory.sums_at(k)?;
            let scale = if k == 0 { 0.0 } else { 1.0 / k as f64 };
            Ok(sums
                .iter()
                .zip(expected)
                .map(|(l, e)| (l * scale - e).abs())
                .fold(0.0, f64::max))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPoint {
    pub k: usize,
    pub nu_hat: f64,
    pub distance: f64,
    pub laplace_ratio: f64,
}

/// What each trajectory contributes to an experiment's statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryStats {
    Born {
        hidden: Option<f64>,
        estimates: Vec<MleEstimate>,
    },
    Rate {
        hidden: Option<f64>,
        reference: f64,
        target: f64,
        rates: Vec<RatePoint>,
        ulln: Option<Vec<f64>>,
    },
    Clt {
        hidden: f64,
        residuals: Vec<Option<f64>>,
    },
    Kernel {
        hidden: f64,
        points: Vec<KernelPoint>,
    },
}

pub(crate) struct Context<'a> {
    exp: &'a Experiment,
    expected: Option<Vec<f64>>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn hidden_of(t: &Trajectory) -> Result<f64> {
    t.hidden()
        .map(|h| h.nu)
        .ok_or_else(|| Error::Config("this experiment needs trajectories with a hidden value".into()))
}

fn diag(map: &mut BTreeMap<String, f64>, key: &str, v: f64) {
    if v.is_finite() {
        map.insert(key.into(), v);
    }
}

impl<'a> Context<'a> {
    pub fn new(exp: &'a Experiment) -> Result<Self> {
        let expected = match (exp.config.kind, exp.config.hidden_nu) {
            (ExperimentKind::RateConvergence, Some(nu)) => Some(expected_loglik(&exp.probe, &exp.model, nu)?),
            _ => None,
        };
        Ok(Self { exp, expected })
    }

    fn final_k(&self) -> usize {
        *self.exp.checkpoints.last().expect("validated checkpoints")
    }

    pub fn analyze(&self, t: &Trajectory) -> Result<TrajectoryStats> {
        let exp = self.exp;
        let cps = &exp.checkpoints;
        let hidden = t.hidden().map(|h| h.nu);
        match exp.config.kind {
            ExperimentKind::BornFrequency => Ok(TrajectoryStats::Born {
                hidden,
                estimates: cps
                    .iter()
                    .map(|&k| mle(t, k, &exp.model, &exp.probe, false))
                    .collect::<Result<_>>()?,
            }),
            ExperimentKind::RateConvergence => {
                let reference = match hidden {
                    Some(nu) => nu,
                    None => mle(t, self.final_k(), &exp.model, &exp.probe, true)?.nu,
                };
                let region = exp.config.region.as_ref().expect("validated region");
                let trace = rate_trace(t, &exp.state, &exp.model, &exp.probe, region, cps, reference)?;
                let ulln = match &self.expected {
                    Some(e) => Some(uniform_lln_residual(t, e, cps)?),
                    None => None,
                };
                Ok(TrajectoryStats::Rate {
                    hidden,
                    reference,
                    target: trace.target,
                    rates: trace.points,
                    ulln,
                })
            }
            ExperimentKind::Clt => Ok(TrajectoryStats::Clt {
                hidden: hidden_of(t)?,
                residuals: cps
                    .iter()
                    .map(|&k| clt_residual(t, k, &exp.model, &exp.probe))
                    .collect::<Result<_>>()?,
            }),
            ExperimentKind::KernelConvergence => {
                let nodes = exp.config.window_nodes.unwrap_or(WINDOW_NODES);
                let points = cps
                    .iter()
                    .map(|&k| {
                        let nu_hat = mle(t, k, &exp.model, &exp.probe, true)?.nu;
                        let window = RescaledWindow::new(&exp.model, &exp.probe, nu_hat, k, None, nodes)?;
                        let post = rescaled_posterior_kernel(t, &exp.state, &exp.model, &window)?;
                        let limit = limit_kernel(&exp.model, &exp.state, &window)?;
                        let laplace = laplace_condition_check(t, k, &exp.model, &exp.probe, None)?;
                        Ok(KernelPoint {
                            k,
                            nu_hat,
                            distance: trace_norm_distance(&post, &limit)?,
                            laplace_ratio: laplace.ratio,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(TrajectoryStats::Kernel {
                    hidden: hidden_of(t)?,
                    points,
                })
            }
            ExperimentKind::AssumptionValidation => Err(Error::Config("nothing to analyze".into())),
        }
    }

    pub fn report(&self, loaded: &LoadedConfig, stats: Vec<TrajectoryStats>) -> Result<Report> {
        let mut out = Output::default();
        match self.exp.config.kind {
            ExperimentKind::BornFrequency => self.born(&stats, &mut out)?,
            ExperimentKind::RateConvergence => self.rate(&stats, &mut out),
            ExperimentKind::Clt => self.clt(&stats, &mut out)?,
            ExperimentKind::KernelConvergence => self.kernel(&stats, &mut out),
            ExperimentKind::AssumptionValidation => {}
        }
        Ok(Report::new(loaded, self.exp, out.checks, out.diagnostics, out.caveats, out.tables))
    }

    fn born(&self, stats: &[TrajectoryStats], out: &mut Output) -> Result<()> {
        let exp = self.exp;
        let region = exp.config.region.as_ref().expect("validated region");
        let nodes = exp.region_nodes.as_ref().expect("validated region");
        let reference = spectral_probability(&exp.model, &exp.state, region)?;
        let mut paths = Table::new("mle_paths.csv", &["trajectory", "k", "estimate", "hidden_nu"]);
        let mut freq = Table::new("born_frequency.csv", &["k", "frequency", "reference", "half_width"]);
        let mut hits = vec![0usize; exp.checkpoints.len()];
        for (i, s) in stats.iter().enumerate() {
            let TrajectoryStats::Born { hidden, estimates } = s else {
                unreachable!()
            };
            for (c, e) in estimates.iter().enumerate() {
                paths.push(vec![i.to_string(), e.k.to_string(), e.nu.to_string(), fmt_opt(*hidden)]);
                if nodes.binary_search(&e.node).is_ok() {
                    hits[c] += 1;
                }
            }
        }
        let z = exp.config.tolerances.binomial_sigmas;
        let mut last = None;
        for (c, &k) in exp.checkpoints.iter().enumerate() {
            let b = BinomialComparison::new(hits[c], stats.len(), reference, z)?;
            freq.push(vec![
                k.to_string(),
                b.frequency.to_string(),
                b.reference.to_string(),
                b.half_width.to_string(),
            ]);
            last = Some((k, b));
        }
        let (k, b) = last.expect("validated checkpoints");
        out.checks.push(Check::at_most(
            "born-frequency",
            format!(
                "|frequency of MLE in region - tr(Pi(N) rho)| at k = {k} within a {z}-sigma binomial band (almost-sure limit law of the MLE)"
            ),
            b.deviation(),
            b.half_width,
            stats.len(),
        ));
        diag(&mut out.diagnostics, "frequency", b.frequency);
        diag(&mut out.diagnostics, "reference_probability", b.reference);
        out.tables.extend([paths, freq]);
        Ok(())
    }

    fn rate(&self, stats: &[TrajectoryStats], out: &mut Output) {
        let exp = self.exp;
        let mut trace = Table::new("rate_trace.csv", &["trajectory", "k", "rate", "target", "reference_nu"]);
        let mut med = Table::new("rate_median.csv", &["k", "median_rate", "median_target"]);
        let mut ulln_table = Table::new("ulln.csv", &["trajectory", "k", "residual"]);
        let mut per_k: Vec<Vec<f64>> = vec![Vec::new(); exp.checkpoints.len()];
        let mut targets = Vec::new();
        let mut ulln_final = Vec::new();
        for (i, s) in stats.iter().enumerate() {
            let TrajectoryStats::Rate {
                reference,
                target,
                rates,
                ulln,
                ..
            } = s
            else {
                unreachable!()
            };
            targets.push(*target);
            for (c, p) in rates.iter().enumerate() {
                trace.push(vec![
                    i.to_string(),
                    p.k.to_string(),
                    p.value.to_string(),
                    target.to_string(),
                    reference.to_string(),
                ]);
                per_k[c].push(p.value);
            }
            if let Some(u) = ulln {
                for (&k, r) in exp.checkpoints.iter().zip(u) {
                    ulln_table.push(vec![i.to_string(), k.to_string(), r.to_string()]);
                }
                ulln_final.extend(u.last().copied());
            }
        }
        let target = median(&targets);
        for (&k, v) in exp.checkpoints.iter().zip(&per_k) {
            med.push(vec![k.to_string(), median(v).to_string(), target.to_string()]);
        }
        let k = *exp.checkpoints.last().expect("validated checkpoints");
        let rate = median(per_k.last().expect("validated checkpoints"));
        let tol = exp.config.tolerances.rate_relative;
        let (statistic, description) = if target > 0.0 {
            (
                (rate - target).abs() / target,
                format!("relative error of the median decay rate -(1/k) log tr(Pi(N) rho_k) at k = {k} against S(nu|N)"),
            )
        } else {
            (
                rate.abs(),
                format!("median decay rate at k = {k} for a region holding the limit (S = 0)"),
            )
        };
        out.checks.push(Check::at_most("rate-convergence", description, statistic, tol, stats.len()));
        let negative = per_k.iter().flatten().filter(|&&v| v < -1e-10).count();
        if target > 0.0 {
            out.checks.push(Check::at_most(
                "rate-positivity",
                "number of negative decay rates for a region excluding the limit".into(),
                negative as f64,
                0.0,
                stats.len(),
            ));
        }
        diag(&mut out.diagnostics, "median_rate", rate);
        diag(&mut out.diagnostics, "median_target", target);
        if !ulln_final.is_empty() {
            diag(&mut out.diagnostics, "median_ulln_residual", median(&ulln_final));
            out.tables.push(ulln_table);
        }
        out.tables.splice(0..0, [trace, med]);
    }

    fn clt(&self, stats: &[TrajectoryStats], out: &mut Output) -> Result<()> {
        let exp = self.exp;
        let mut res = Table::new("clt_residuals.csv", &["trajectory", "k", "hidden_nu", "residual"]);
        let mut ks = Table::new(
            "clt_ks.csv",
            &["k", "samples", "excluded", "mean", "variance", "ks_statistic", "p_value"],
        );
        let mut per_k: Vec<Vec<f64>> = vec![Vec::new(); exp.checkpoints.len()];
        for (i, s) in stats.iter().enumerate() {
            let TrajectoryStats::Clt { hidden, residuals } = s else {
                unreachable!()
            };
            for (c, r) in residuals.iter().enumerate() {
                res.push(vec![
                    i.to_string(),
                    exp.checkpoints[c].to_string(),
                    hidden.to_string(),
                    fmt_opt(*r),
                ]);
                per_k[c].extend(*r);
            }
        }
        let mut last = None;
        for (&k, v) in exp.checkpoints.iter().zip(&per_k) {
            let test = ks_test(v, standard_normal_cdf).ok();
            ks.push(vec![
                k.to_string(),
                v.len().to_string(),
                (stats.len() - v.len()).to_string(),
                mean(v).to_string(),
                variance(v).to_string(),
                fmt_opt(test.map(|t| t.statistic)),
                fmt_opt(test.map(|t| t.p_value)),
            ]);
            last = Some((k, v));
        }
        let (k, v) = last.expect("validated checkpoints");
        let test = ks_test(v, standard_normal_cdf)?;
        let alpha = exp.config.tolerances.alpha;
        let n = v.len();
        out.checks.push(Check::at_least(
            "clt-ks",
            format!("KS p-value of sqrt(k F) (MLE - nu) at k = {k} against the standard normal"),
            test.p_value,
            alpha,
            n,
        ));
        let m = mean(v);
        let var = variance(v);
        out.checks.push(Check::at_most(
            "clt-mean",
            "|mean of standardized residuals| within 3/sqrt(M)".into(),
            m.abs(),
            3.0 / (n as f64).sqrt(),
            n,
        ));
        // 3-sigma band for the sample variance of normal data, sd = sqrt(2/(M-1))
        out.checks.push(Check::at_most(
            "clt-variance",
            "|variance of standardized residuals - 1| within a 3-sigma chi-square band".into(),
            (var - 1.0).abs(),
            3.0 * (2.0 / (n as f64 - 1.0)).sqrt(),
            n,
        ));
        let excluded = stats.len() - n;
        if excluded > 0 {
            out.caveats.push(format!(
                "{excluded} trajectories excluded: hidden value within 5/sqrt(k) of a component boundary"
            ));
        }
        diag(&mut out.diagnostics, "residual_mean", m);
        diag(&mut out.diagnostics, "residual_variance", var);
        diag(&mut out.diagnostics, "ks_statistic", test.statistic);
        diag(&mut out.diagnostics, "ks_p_value", test.p_value);
        out.tables.extend([res, ks]);
        Ok(())
    }

    fn kernel(&self, stats: &[TrajectoryStats], out: &mut Output) {
        let exp = self.exp;
        let tol = exp.config.tolerances;
        let mut dist = Table::new(
            "kernel_distance.csv",
            &["trajectory", "k", "hidden_nu", "nu_hat", "distance", "laplace_ratio"],
        );
        let mut med = Table::new("kernel_median.csv", &["k", "median_distance", "median_laplace_ratio"]);
        let cps = &exp.checkpoints;
        let mut d: Vec<Vec<f64>> = vec![Vec::new(); cps.len()];
        let mut r: Vec<Vec<f64>> = vec![Vec::new(); cps.len()];
        for (i, s) in stats.iter().enumerate() {
            let TrajectoryStats::Kernel { hidden, points } = s else {
                unreachable!()
            };
            for (c, p) in points.iter().enumerate() {
                dist.push(vec![
                    i.to_string(),
                    p.k.to_string(),
                    hidden.to_string(),
                    p.nu_hat.to_string(),
                    p.distance.to_string(),
                    p.laplace_ratio.to_string(),
                ]);
                d[c].push(p.distance);
                r[c].push(p.laplace_ratio);
            }
        }
        let md: Vec<f64> = d.iter().map(|v| median(v)).collect();
        let mr: Vec<f64> = r.iter().map(|v| median(v)).collect();
        for (c, &k) in cps.iter().enumerate() {
            med.push(vec![k.to_string(), md[c].to_string(), mr[c].to_string()]);
        }
        let k = *cps.last().expect("validated checkpoints");
        let n = stats.len();
        let laplace = Check::at_most(
            "laplace-condition",
            format!("|median Laplace ratio - 1| at k = {k} (Bernstein-von Mises condition)"),
            (mr[cps.len() - 1] - 1.0).abs(),
            tol.laplace,
            n,
        );
        let gate = laplace.passes();
        let increases = md.windows(2).filter(|w| !(w[1] < w[0])).count();
        let mut monotone = Check::at_most(
            "kernel-monotone",
            "checkpoints where the median trace-norm distance to c_rho G_F / h fails to decrease".into(),
            increases as f64,
            0.0,
            n,
        );
        let mut close = Check::at_most(
            "kernel-distance",
            format!("median trace-norm distance to c_rho G_F / h at k = {k}"),
            md[cps.len() - 1],
            tol.kernel_distance,
            n,
        );
        if !gate {
            for c in [&mut monotone, &mut close] {
                c.verdict = Some(false);
                c.description.push_str(" (not assessed: Laplace condition failed)");
            }
        }
        diag(&mut out.diagnostics, "median_distance", md[cps.len() - 1]);
        diag(&mut out.diagnostics, "median_laplace_ratio", mr[cps.len() - 1]);
        out.checks.extend([laplace, monotone, close]);
        out.tables.extend([dist, med]);
    }
}

#[derive(Default)]
struct Output {
    checks: Vec<Check>,
    diagnostics: BTreeMap<String, f64>,
    caveats: Vec<String>,
    tables: Vec<Table>,
}
