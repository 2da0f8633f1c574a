//! Experiment orchestration: ensembles, statistical tests, reports.
//!
//! Trajectories are generated (or read back) in chunks; each chunk is
//! processed in parallel and merged in trajectory order, so reports do not
//! depend on the worker count.

mod analysis;
mod config;
mod persist;
mod report;

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::probe::{validate_probe, AssumptionReport, CheckResult};
use crate::state::validate_state;
use crate::trajectory::{
    definetti_sample_with, sequential_sample_with, trajectory_rng, NodeLoglik, SeedRecord, Trajectory,
};

pub use analysis::{expected_loglik, uniform_lln_residual, TrajectoryStats};
pub use config::{
    Experiment, ExperimentConfig, ExperimentKind, LoadedConfig, SamplerKind, Tolerances, DEFAULT_CHECKPOINTS,
    DEFAULT_SEED,
};
pub use persist::{SimulationManifest, MANIFEST_FILE, META_FILE, SUMS_FILE, TRAJECTORIES_FILE};
pub use report::{Comparison, Report, Summary, Table, TestResult, SUMMARY_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker cap; `None` uses rayon's default.
    pub threads: Option<usize>,
    /// Trajectories held in memory at once.
    pub chunk: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: None,
            chunk: 256,
        }
    }
}

impl RunOptions {
    fn install<T: Send>(&self, job: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            None => Ok(job()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
                Ok(pool.install(job))
            }
        }
    }
}

/// Probe and state checks for an experiment.
pub fn assumption_report(exp: &Experiment) -> AssumptionReport {
    let mut report = validate_probe(&exp.probe, &exp.model, exp.config.tolerances.probe);
    let state = validate_state(&exp.state, exp.config.tolerances.state);
    let t = state.tolerances;
    for (name, worst, threshold) in [
        ("state-hermiticity", state.hermiticity_defect, t.hermiticity),
        ("state-positivity", state.positivity_defect, t.positivity),
        ("state-trace", state.trace_defect, t.trace),
    ] {
        report.checks.push(CheckResult {
            name: name.into(),
            assumption: "state kernel invariants".into(),
            passed: worst <= threshold,
            worst,
            threshold,
            location: None,
        });
    }
    report.passed = report.checks.iter().all(|c| c.passed);
    report
}

fn checked(loaded: &LoadedConfig) -> Result<Experiment> {
    let exp = loaded.config.build()?;
    let report = assumption_report(&exp);
    if !report.passed {
        return Err(Error::ValidationFailed(Box::new(report)));
    }
    Ok(exp)
}

/// Runs only the assumption checks and reports them as test results.
pub fn validate(loaded: &LoadedConfig) -> Result<Report> {
    let exp = loaded.config.build()?;
    let report = assumption_report(&exp);
    Ok(report::validation_report(loaded, &exp, &report))
}

fn generate(exp: &Experiment, field: &NodeLoglik<'_>, index: u64) -> Result<Trajectory> {
    let c = &exp.config;
    let mut rng = trajectory_rng(c.seed, index);
    let t = match c.sampler {
        SamplerKind::DeFinetti => {
            definetti_sample_with(&exp.state, field, c.hidden_nu, c.k_max, &exp.checkpoints, &mut rng)?
        }
        SamplerKind::Sequential => sequential_sample_with(&exp.state, field, c.k_max, &exp.checkpoints, &mut rng)?,
    };
    Ok(t.with_seed(SeedRecord {
        master: c.seed,
        stream: index,
    }))
}

fn chunks(total: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let size = size.max(1);
    (0..total.div_ceil(size)).map(move |c| c * size..((c + 1) * size).min(total))
}

/// Generates and analyzes the whole ensemble in one pass.
pub fn run_experiment(loaded: &LoadedConfig, options: &RunOptions) -> Result<Report> {
    let exp = checked(loaded)?;
    if !exp.config.kind.needs_trajectories() {
        return validate(loaded);
    }
    let ctx = analysis::Context::new(&exp)?;
    let field = NodeLoglik::new(&exp.probe, exp.model.grid().points())?;
    let stats = options.install(|| -> Result<Vec<TrajectoryStats>> {
        let mut stats = Vec::with_capacity(exp.config.ensemble_size);
        for range in chunks(exp.config.ensemble_size, options.chunk) {
            log::debug!("trajectories {range:?}");
            let part: Vec<TrajectoryStats> = range
                .into_par_iter()
                .map(|i| ctx.analyze(&generate(&exp, &field, i as u64)?))
                .collect::<Result<_>>()?;
            stats.extend(part);
        }
        Ok(stats)
    })??;
    ctx.report(loaded, stats)
}

/// Generates the ensemble and persists it under `out`.
pub fn simulate(loaded: &LoadedConfig, options: &RunOptions, out: &Path) -> Result<SimulationManifest> {
    let exp = checked(loaded)?;
    if !exp.config.kind.needs_trajectories() {
        return Err(Error::Config("assumption-validation experiments have no trajectories".into()));
    }
    let field = NodeLoglik::new(&exp.probe, exp.model.grid().points())?;
    let mut writer = persist::Writer::create(out, &exp)?;
    options.install(|| -> Result<()> {
        for range in chunks(exp.config.ensemble_size, options.chunk) {
            log::debug!("simulating trajectories {range:?}");
            let part: Vec<Trajectory> = range
                .into_par_iter()
                .map(|i| generate(&exp, &field, i as u64))
                .collect::<Result<_>>()?;
            for t in &part {
                writer.write(t, &exp.checkpoints)?;
            }
        }
        Ok(())
    })??;
    writer.finish(loaded)
}

/// Recomputes the report from trajectories persisted by [`simulate`].
pub fn estimate(loaded: &LoadedConfig, options: &RunOptions, dir: &Path) -> Result<Report> {
    let exp = checked(loaded)?;
    if !exp.config.kind.needs_trajectories() {
        return validate(loaded);
    }
    let mut reader = persist::Reader::open(dir, &exp)?;
    let ctx = analysis::Context::new(&exp)?;
    let field = NodeLoglik::new(&exp.probe, exp.model.grid().points())?;
    let stats = options.install(|| -> Result<Vec<TrajectoryStats>> {
        let mut stats = Vec::with_capacity(exp.config.ensemble_size);
        for range in chunks(exp.config.ensemble_size, options.chunk) {
            log::debug!("replaying trajectories {range:?}");
            let mut part = Vec::with_capacity(range.len());
            for _ in range {
                part.push(reader.next(&field, &exp.checkpoints)?);
            }
            let analyzed: Vec<TrajectoryStats> =
                part.par_iter().map(|t| ctx.analyze(t)).collect::<Result<_>>()?;
            stats.extend(analyzed);
        }
        reader.finish()?;
        Ok(stats)
    })??;
    ctx.report(loaded, stats)
}
