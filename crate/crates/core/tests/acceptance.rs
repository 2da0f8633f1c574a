//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with `harness = false` so the lines are printed even when cargo
//! captures test output. Exits nonzero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use qnd_core::estimators::{mle, trace_norm_distance};
use qnd_core::harness::{self, LoadedConfig, Report, RunOptions, TestResult};
use qnd_core::probe::{Outcome, ProbeModel, ProbeSpec};
use qnd_core::spectral::{build_spectral_model, DensitySpec, SpectralModel};
use qnd_core::state::{AmplitudeSpec, StateKernel, StateSpec};
use qnd_core::stats::chi_square_test;
use qnd_core::trajectory::{
    definetti_sample, definetti_sample_with, exact_definetti_distribution, exact_sequential_distribution,
    posterior_weights_from_sums, sequential_sample, trajectory_rng, NodeLoglik, PosteriorFilter, Trajectory,
};
use rand::Rng;

type Verdict = Result<String, String>;

fn config(name: &str) -> LoadedConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    LoadedConfig::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn result<'a>(report: &'a Report, name: &str) -> Result<&'a TestResult, String> {
    report
        .summary
        .results
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| format!("report has no {name} result"))
}

fn diagnostic(report: &Report, name: &str) -> Result<f64, String> {
    report
        .summary
        .diagnostics
        .get(name)
        .copied()
        .ok_or_else(|| format!("report has no {name} diagnostic"))
}

fn require(ok: bool, msg: String) -> Result<String, String> {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within_budget(start: Instant, budget: Duration, detail: String) -> Verdict {
    let elapsed = start.elapsed();
    require(
        elapsed <= budget,
        format!("{detail}; {:.1}s of {}s", elapsed.as_secs_f64(), budget.as_secs()),
    )
}

fn run(loaded: &LoadedConfig) -> Result<Report, String> {
    harness::run_experiment(loaded, &RunOptions::default()).map_err(|e| e.to_string())
}

fn born_rule() -> Verdict {
    let start = Instant::now();
    let loaded = config("born-two-atoms");
    let c = &loaded.config;
    if c.k_max != 200 || c.ensemble_size != 10_000 {
        return Err(format!("config drifted: k = {}, M = {}", c.k_max, c.ensemble_size));
    }
    let report = run(&loaded)?;
    let freq = diagnostic(&report, "frequency")?;
    let band = 3.0 * (0.3f64 * 0.7 / 10_000.0).sqrt();
    let r = result(&report, "born-frequency")?;
    require(
        r.passed && (freq - 0.7).abs() <= band && (r.threshold - band).abs() < 1e-12,
        format!("frequency {freq:.4} vs 0.7 +- {band:.4}"),
    )
    .and_then(|d| within_budget(start, Duration::from_secs(60), d))
}

fn large_deviation_rate() -> Verdict {
    let start = Instant::now();
    let loaded = config("rate-gaussian");
    let report = run(&loaded)?;
    // Gaussian relative entropy to the nearest point of [0.6, 1.0] from 0.2
    let oracle = (0.6f64 - 0.2).powi(2) / 2.0;
    let rate = diagnostic(&report, "median_rate")?;
    let rel = (rate - oracle).abs() / oracle;
    require(
        rel <= 0.1 && result(&report, "rate-convergence")?.passed,
        format!("median rate {rate:.5} vs oracle {oracle:.5} (relative error {rel:.4})"),
    )
    .and_then(|d| within_budget(start, Duration::from_secs(120), d))
}

fn clt() -> Verdict {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for k in [10usize, 100] {
        let mut cfg = config("clt-gaussian").config;
        cfg.k_max = k;
        cfg.checkpoints = Some(vec![k]);
        let report = run(&LoadedConfig::from_config(cfg))?;
        let r = result(&report, "clt-ks")?;
        ok &= r.passed && r.statistic > 0.01 && r.sample_size == 2000;
        lines.push(format!("gaussian k={k} p={:.3}", r.statistic));
    }
    let report = run(&config("clt-binary"))?;
    let r = result(&report, "clt-ks")?;
    ok &= r.passed && r.statistic > 0.01;
    lines.push(format!("binary k=10000 p={:.3} (n={})", r.statistic, r.sample_size));
    require(ok, lines.join(", ")).and_then(|d| within_budget(start, Duration::from_secs(300), d))
}

// Trapezoid integral of score^2 * density over +-12 sigma.
fn gaussian_fisher_oracle(sigma: f64, nu: f64) -> f64 {
    let n = 40_000;
    let (a, b) = (nu - 12.0 * sigma, nu + 12.0 * sigma);
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let f = (-(x - nu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let score = (x - nu) / (sigma * sigma);
            w * h * f * score * score
        })
        .sum()
}

// sum_o p_o'^2 / p_o with central differences of cos^2(theta/2).
fn binary_fisher_oracle(offset: f64, scale: f64, nu: f64) -> f64 {
    let p0 = |v: f64| ((offset + scale * v) / 2.0).cos().powi(2);
    let h = 1e-6;
    let d = (p0(nu + h) - p0(nu - h)) / (2.0 * h);
    let p = p0(nu);
    d * d / p + d * d / (1.0 - p)
}

fn fisher_identity() -> Verdict {
    let mut worst_identity: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for sigma in [1.0, 0.5] {
        let model = build_spectral_model(&[], &[(0.0, 1.0)], DensitySpec::default(), 100, 1).map_err(|e| e.to_string())?;
        let probe = ProbeModel::new(ProbeSpec::GaussianReadout { sigma }).map_err(|e| e.to_string())?;
        for &nu in model.grid().points() {
            let f = probe.fisher_information(nu).map_err(|e| e.to_string())?;
            let c = probe.expected_curvature(nu).map_err(|e| e.to_string())?;
            worst_identity = worst_identity.max((c + f).abs());
            worst_oracle = worst_oracle
                .max((f - 1.0 / (sigma * sigma)).abs())
                .max((f - gaussian_fisher_oracle(sigma, nu)).abs());
        }
    }
    let (offset, scale) = (0.0, 1.0);
    let model = build_spectral_model(&[], &[(0.5, 2.5)], DensitySpec::default(), 100, 1).map_err(|e| e.to_string())?;
    let probe = ProbeModel::new(ProbeSpec::BinaryPhase {
        phase_offset: offset,
        phase_scale: scale,
    })
    .map_err(|e| e.to_string())?;
    for &nu in model.grid().points() {
        let f = probe.fisher_information(nu).map_err(|e| e.to_string())?;
        let c = probe.expected_curvature(nu).map_err(|e| e.to_string())?;
        worst_identity = worst_identity.max((c + f).abs());
        worst_oracle = worst_oracle
            .max((f - 1.0).abs())
            .max((f - binary_fisher_oracle(offset, scale, nu)).abs());
    }
    for name in ["validate-gaussian", "validate-binary"] {
        let report = harness::validate(&config(name)).map_err(|e| e.to_string())?;
        if !result(&report, "information-identity")?.passed {
            return Err(format!("{name}: information-identity check failed"));
        }
    }
    require(
        worst_identity < 1e-6 && worst_oracle < 1e-6,
        format!("max |E[d2 l] + F| = {worst_identity:.2e}, max |F - oracle| = {worst_oracle:.2e}"),
    )
}

fn kernel_convergence() -> Verdict {
    let start = Instant::now();
    let loaded = config("kernel-gaussian");
    if loaded.config.checkpoints.as_deref() != Some(&[100, 1000, 10_000][..]) || loaded.config.ensemble_size != 20 {
        return Err("config drifted from checkpoints {100, 1000, 10000}, M = 20".into());
    }
    let report = run(&loaded)?;
    let monotone = result(&report, "kernel-monotone")?;
    let distance = result(&report, "kernel-distance")?;
    let laplace = result(&report, "laplace-condition")?;
    let d = diagnostic(&report, "median_distance")?;
    let ratio = diagnostic(&report, "median_laplace_ratio")?;
    require(
        monotone.passed && distance.passed && laplace.passed && d < 0.1 && (ratio - 1.0).abs() <= 0.05,
        format!("median distance {d:.4} at k=10000, decreasing {}, Laplace ratio {ratio:.6}", monotone.passed),
    )
    .and_then(|d| within_budget(start, Duration::from_secs(300), d))
}

fn two_atom_binary() -> (SpectralModel, StateKernel, ProbeModel) {
    let model = build_spectral_model(&[(0.0, 0.3), (1.0, 0.7)], &[], DensitySpec::default(), 2, 1).unwrap();
    let state = StateSpec::MaximallyMixed.build(&model).unwrap();
    let probe = ProbeModel::new(ProbeSpec::BinaryPhase {
        phase_offset: std::f64::consts::FRAC_PI_4,
        phase_scale: std::f64::consts::FRAC_PI_2,
    })
    .unwrap();
    (model, state, probe)
}

fn tuple_index(t: &Trajectory) -> usize {
    t.outcomes().iter().fold(0, |acc, o| match o {
        Outcome::Index(i) => 2 * acc + i,
        Outcome::Real(_) => unreachable!("binary outcomes"),
    })
}

fn sampler_equivalence() -> Verdict {
    let (_, state, probe) = two_atom_binary();
    let k = 3;
    // brute-force mixture law, written out independently
    let p0 = |nu: f64| ((std::f64::consts::FRAC_PI_4 + std::f64::consts::FRAC_PI_2 * nu) / 2.0).cos().powi(2);
    let oracle: Vec<f64> = (0..8usize)
        .map(|code| {
            [(0.0, 0.3), (1.0, 0.7)]
                .iter()
                .map(|&(nu, w)| {
                    (0..k).fold(w, |acc, j| {
                        let bit = (code >> (k - 1 - j)) & 1;
                        acc * if bit == 0 { p0(nu) } else { 1.0 - p0(nu) }
                    })
                })
                .sum()
        })
        .collect();
    let definetti = exact_definetti_distribution(&state, &probe, k).map_err(|e| e.to_string())?;
    let sequential = exact_sequential_distribution(&state, &probe, k).map_err(|e| e.to_string())?;
    let mut exact_gap: f64 = 0.0;
    for ((ta, pa), (tb, pb)) in definetti.iter().zip(&sequential) {
        if ta != tb {
            return Err("tuple enumeration orders differ".into());
        }
        let code = ta.iter().fold(0, |acc, &o| 2 * acc + o);
        exact_gap = exact_gap.max((pa - pb).abs()).max((pa - oracle[code]).abs());
    }

    let m = 100_000usize;
    let mut p_values = Vec::new();
    for sequential_sampler in [false, true] {
        let mut counts = [0u64; 8];
        for i in 0..m {
            let mut rng = trajectory_rng(7 + sequential_sampler as u64, i as u64);
            let t = if sequential_sampler {
                sequential_sample(&state, &probe, k, &[k], &mut rng)
            } else {
                definetti_sample(&state, &probe, k, &[k], &mut rng)
            }
            .map_err(|e| e.to_string())?;
            counts[tuple_index(&t)] += 1;
        }
        p_values.push(chi_square_test(&counts, &oracle).map_err(|e| e.to_string())?.p_value);
    }
    require(
        exact_gap <= 1e-10 && p_values.iter().all(|&p| p > 0.01),
        format!(
            "exact gap {exact_gap:.1e}, chi-square p de Finetti {:.3}, sequential {:.3}",
            p_values[0], p_values[1]
        ),
    )
}

fn invariants() -> Verdict {
    let start = Instant::now();
    let mut notes = Vec::new();
    let gaussian = ProbeModel::new(ProbeSpec::GaussianReadout { sigma: 1.0 }).unwrap();
    let binary = ProbeModel::new(ProbeSpec::BinaryPhase {
        phase_offset: 0.0,
        phase_scale: 1.0,
    })
    .unwrap();
    let mut rng = trajectory_rng(11, 0);

    // normalization and score mean zero
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let nu = rng.random_range(0.1..3.0);
        for p in [&gaussian, &binary] {
            worst = worst
                .max((p.normalization(nu) - 1.0).abs())
                .max(p.expected_score(nu).map_err(|e| e.to_string())?.abs());
        }
    }
    if worst > 1e-8 {
        return Err(format!("normalization or score mean off by {worst:.2e}"));
    }
    notes.push("normalization, score mean".to_string());

    // relative entropy nonnegative
    for _ in 0..200 {
        let nu = rng.random_range(0.1..3.0);
        let region: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..3.0)).collect();
        for p in [&gaussian, &binary] {
            let s = p.relative_entropy(nu, &region).map_err(|e| e.to_string())?.value;
            if s < -1e-12 {
                return Err(format!("negative relative entropy {s:.2e} at nu = {nu}"));
            }
        }
    }
    notes.push("S >= 0".into());

    // batch vs iterative posterior
    let model = build_spectral_model(&[], &[(0.0, 1.0)], DensitySpec::default(), 100, 1).unwrap();
    let state = StateSpec::MaximallyMixed.build(&model).unwrap();
    let field = NodeLoglik::new(&gaussian, model.grid().points()).unwrap();
    let t = definetti_sample_with(&state, &field, Some(0.4), 500, &[500], &mut rng).map_err(|e| e.to_string())?;
    let prior = state.spectral_weights().unwrap();
    let mut filter = PosteriorFilter::new(&prior);
    for &xi in t.outcomes() {
        filter.update(&field.row(xi).unwrap());
    }
    let batch = posterior_weights_from_sums(&prior, t.loglik_sums()).unwrap();
    let gap = batch
        .probs()
        .iter()
        .zip(filter.weights())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > 1e-10 {
        return Err(format!("batch and iterative posteriors differ by {gap:.2e}"));
    }
    notes.push("batch = iterative".into());

    // trace-norm axioms on random pure states
    let pure = |rng: &mut rand_chacha::ChaCha8Rng| {
        let pts: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 / 10.0, rng.random_range(0.0..1.0))).collect();
        StateSpec::Pure {
            amplitude: AmplitudeSpec::Tabulated { points: pts },
        }
        .build(&model)
        .unwrap()
    };
    for _ in 0..10 {
        let (a, b, c) = (pure(&mut rng), pure(&mut rng), pure(&mut rng));
        let d = |x: &StateKernel, y: &StateKernel| trace_norm_distance(x, y).unwrap();
        let (ab, ba, bc, ac, aa) = (d(&a, &b), d(&b, &a), d(&b, &c), d(&a, &c), d(&a, &a));
        if aa > 1e-9 || (ab - ba).abs() > 1e-9 || ac > ab + bc + 1e-9 || ab > 2.0 + 1e-9 {
            return Err(format!("trace-norm axioms violated: d(a,a)={aa}, d(a,b)={ab}, d(b,a)={ba}"));
        }
    }
    notes.push("trace-norm axioms".into());

    // MLE shift invariance for the location family
    let shift = 2.5;
    let shifted = build_spectral_model(&[], &[(shift, 1.0 + shift)], DensitySpec::default(), 100, 1).unwrap();
    let shifted_field = NodeLoglik::new(&gaussian, shifted.grid().points()).unwrap();
    let moved: Vec<Outcome> = t.outcomes().iter().map(|o| Outcome::Real(o.value() + shift)).collect();
    let t2 = Trajectory::replay(&moved, &shifted_field, &[500]).unwrap();
    let a = mle(&t, 500, &model, &gaussian, true).unwrap();
    let b = mle(&t2, 500, &shifted, &gaussian, true).unwrap();
    if (b.nu - a.nu - shift).abs() > 1e-6 {
        return Err(format!("MLE not shift invariant: {} vs {} + {shift}", b.nu, a.nu));
    }
    notes.push("MLE shift".into());

    // determinism across worker counts and replay through persisted files
    let mut cfg = config("born-two-atoms").config;
    cfg.ensemble_size = 600;
    let loaded = LoadedConfig::from_config(cfg);
    let one = harness::run_experiment(&loaded, &RunOptions { threads: Some(1), chunk: 64 }).unwrap();
    let many = harness::run_experiment(&loaded, &RunOptions { threads: Some(4), chunk: 256 }).unwrap();
    if one.summary_json() != many.summary_json() || one.tables != many.tables {
        return Err("report depends on the worker count".into());
    }
    let dir = tempfile::tempdir().unwrap();
    harness::simulate(&loaded, &RunOptions::default(), dir.path()).map_err(|e| e.to_string())?;
    let replayed = harness::estimate(&loaded, &RunOptions::default(), dir.path()).map_err(|e| e.to_string())?;
    if replayed.summary_json() != one.summary_json() || replayed.tables != one.tables {
        return Err("estimate from persisted trajectories differs from verify".into());
    }
    notes.push("determinism, replay".into());

    within_budget(start, Duration::from_secs(180), notes.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("1 Born-rule purification", born_rule),
        ("2 large-deviation rate", large_deviation_rate),
        ("3 central limit theorem", clt),
        ("4 Fisher identity", fisher_identity),
        ("5 kernel convergence", kernel_convergence),
        ("6 sampler equivalence", sampler_equivalence),
        ("7 invariant suites", invariants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, criterion) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(criterion).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
