use std::path::{Path, PathBuf};

use qnd_core::harness::{
    self, expected_loglik, uniform_lln_residual, LoadedConfig, Report, RunOptions, MANIFEST_FILE, SUMMARY_FILE,
    SUMS_FILE,
};
use qnd_core::probe::{ProbeModel, ProbeSpec};
use qnd_core::spectral::{build_spectral_model, DensitySpec};
use qnd_core::state::StateSpec;
use qnd_core::trajectory::{definetti_sample_with, trajectory_rng, NodeLoglik};
use qnd_core::Error;

fn shipped(name: &str) -> LoadedConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    LoadedConfig::read(&path).unwrap()
}

fn small_born() -> LoadedConfig {
    let mut c = shipped("born-two-atoms").config;
    c.ensemble_size = 300;
    LoadedConfig::from_config(c)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

// Gaussian readout, sigma = 1: with e = xi - nu, the residual at node nu_i is
// |A / 2 + (nu - nu_i) B| for A = mean(e^2) - 1, B = mean(e), so the sup sits at
// an end of the grid. A and B are uncorrelated with variances 2/k and 1/k.
fn paired_decrease_oracle(offsets: (f64, f64), draws: usize) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = trajectory_rng(1234, 0);
    let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
    let res = |a: f64, b: f64| (0.5 * a + offsets.0 * b).abs().max((0.5 * a + offsets.1 * b).abs());
    let mut hits = 0;
    for _ in 0..draws {
        let (a1, b1) = (2f64.sqrt() * z() * 100.0, z() * 100.0);
        let (a2, b2) = (2f64.sqrt() * z() * 30_000f64.sqrt(), z() * 30_000f64.sqrt());
        let r10 = res(a1 / 1e4, b1 / 1e4);
        let r40 = res((a1 + a2) / 4e4, (b1 + b2) / 4e4);
        hits += (r40 < r10) as usize;
    }
    hits as f64 / draws as f64
}

struct UllnRun {
    small: usize,
    decreasing: usize,
    offsets: (f64, f64),
}

fn ulln_run() -> UllnRun {
    let model = build_spectral_model(&[], &[(0.0, 1.0)], DensitySpec::default(), 100, 1).unwrap();
    let probe = ProbeModel::new(ProbeSpec::GaussianReadout { sigma: 1.0 }).unwrap();
    let state = StateSpec::MaximallyMixed.build(&model).unwrap();
    let field = NodeLoglik::new(&probe, model.grid().points()).unwrap();
    let hidden = 0.3;
    let expected = expected_loglik(&probe, &model, hidden).unwrap();
    let checkpoints = [0, 10_000, 40_000];

    let mut run = UllnRun {
        small: 0,
        decreasing: 0,
        offsets: (hidden - model.grid().point(0), hidden - model.grid().point(model.len() - 1)),
    };
    for i in 0..100 {
        let t = definetti_sample_with(&state, &field, Some(hidden), 40_000, &checkpoints, &mut trajectory_rng(5, i))
            .unwrap();
        let r = uniform_lln_residual(&t, &expected, &checkpoints).unwrap();
        let baseline = expected.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        assert_eq!(r[0], baseline);
        run.small += (r[1] < 0.05) as usize;
        run.decreasing += (r[2] < r[1]) as usize;
    }
    run
}

#[test]
fn ulln_residual_shrinks() {
    let run = ulln_run();
    assert!(run.small >= 95, "{} of 100 below 0.05", run.small);
    let p = paired_decrease_oracle(run.offsets, 200_000);
    let band = 3.0 * (p * (1.0 - p) / 100.0).sqrt();
    let freq = run.decreasing as f64 / 100.0;
    assert!(p > 0.5);
    assert!((freq - p).abs() <= band, "decreased in {freq}, oracle {p} +- {band}");
}

// The stated target of a decrease in at least 90% of trajectories sits above
// the oracle probability (about 0.81) and is expected to fail.
#[test]
#[ignore = "target exceeds the oracle paired-decrease probability"]
fn ulln_residual_decreases_in_ninety_percent() {
    let run = ulln_run();
    assert!(run.decreasing >= 90, "{} of 100 decreased", run.decreasing);
}

#[test]
fn expected_loglik_matches_closed_form() {
    let model = build_spectral_model(&[], &[(0.0, 1.0)], DensitySpec::default(), 20, 1).unwrap();
    let sigma = 0.7;
    let probe = ProbeModel::new(ProbeSpec::GaussianReadout { sigma }).unwrap();
    let nu = 0.35;
    let e = expected_loglik(&probe, &model, nu).unwrap();
    for (&other, &got) in model.grid().points().iter().zip(&e) {
        let want = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
            - (sigma * sigma + (nu - other) * (nu - other)) / (2.0 * sigma * sigma);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn reports_cite_hashes_and_seed() {
    let loaded = small_born();
    let report = harness::run_experiment(&loaded, &RunOptions::default()).unwrap();
    let hash = loaded.config.hash();
    assert_eq!(report.summary.config_hash, hash);
    assert_eq!(report.summary.seed, loaded.config.seed);
    for r in &report.summary.results {
        assert_eq!(r.config_hash, hash);
        assert_eq!(r.input_hash, loaded.input_hash());
    }

    let mut reseeded = loaded.config.clone();
    reseeded.seed = 99;
    let other = harness::run_experiment(&LoadedConfig::from_config(reseeded), &RunOptions::default()).unwrap();
    assert_eq!(other.summary.seed, 99);
    assert_ne!(other.summary.config_hash, hash);
}

#[test]
fn input_hash_is_git_blob_style() {
    let loaded = LoadedConfig::parse(b"{\"kind\":\"assumption-validation\",\"spectrum\":{\"atoms\":[[0,1]]},\"probe\":{\"kind\":\"binary-phase\"}}".to_vec()).unwrap();
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", loaded.raw.len()));
    h.update(&loaded.raw);
    assert_eq!(loaded.input_hash(), hex::encode(h.finalize()));
}

#[test]
fn reports_do_not_depend_on_workers_or_chunks() {
    let loaded = small_born();
    let a = harness::run_experiment(&loaded, &RunOptions { threads: Some(1), chunk: 7 }).unwrap();
    let b = harness::run_experiment(&loaded, &RunOptions { threads: Some(3), chunk: 1000 }).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.summary_json(), b.summary_json());
}

#[test]
fn simulate_then_estimate_equals_verify() {
    let mut c = shipped("clt-gaussian").config;
    c.ensemble_size = 120;
    let loaded = LoadedConfig::from_config(c);
    let direct = harness::run_experiment(&loaded, &RunOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = harness::simulate(&loaded, &RunOptions::default(), dir.path()).unwrap();
    assert_eq!(manifest.ensemble_size, 120);
    let estimated = harness::estimate(&loaded, &RunOptions { threads: Some(2), chunk: 16 }, dir.path()).unwrap();
    assert_eq!(direct, estimated);
}

#[test]
fn outputs_are_rewritten_byte_identically() {
    let loaded = small_born();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions::default();
    harness::simulate(&loaded, &opts, dir.path()).unwrap();
    harness::estimate(&loaded, &opts, dir.path()).unwrap().write(dir.path()).unwrap();
    let first = files(dir.path());
    harness::simulate(&loaded, &opts, dir.path()).unwrap();
    harness::estimate(&loaded, &opts, dir.path()).unwrap().write(dir.path()).unwrap();
    assert_eq!(first, files(dir.path()));
    assert!(first.iter().any(|(n, _)| n == SUMMARY_FILE));
    let summary = Report::read_summary(dir.path()).unwrap();
    assert_eq!(summary.config_hash, loaded.config.hash());
}

#[test]
fn replay_audit_rejects_tampered_sums() {
    let loaded = small_born();
    let dir = tempfile::tempdir().unwrap();
    harness::simulate(&loaded, &RunOptions::default(), dir.path()).unwrap();
    let path = dir.path().join(SUMS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row = &mut lines[5];
    let (head, value) = row.rsplit_once(',').unwrap();
    let bumped = value.parse::<f64>().unwrap() + 1e-9;
    *row = format!("{head},{bumped}");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = harness::estimate(&loaded, &RunOptions::default(), dir.path()).unwrap_err();
    assert!(matches!(err, Error::Persistence(_)), "{err}");
}

#[test]
fn estimate_needs_a_matching_simulation() {
    let loaded = small_born();
    let dir = tempfile::tempdir().unwrap();
    let err = harness::estimate(&loaded, &RunOptions::default(), dir.path()).unwrap_err();
    assert!(err.is_usage(), "{err}");

    harness::simulate(&loaded, &RunOptions::default(), dir.path()).unwrap();
    assert!(dir.path().join(MANIFEST_FILE).exists());
    let mut other = loaded.config.clone();
    other.seed += 1;
    let err = harness::estimate(&LoadedConfig::from_config(other), &RunOptions::default(), dir.path()).unwrap_err();
    assert!(matches!(err, Error::Persistence(_)), "{err}");
}

#[test]
fn failing_probe_blocks_simulation() {
    // theta = pi at nu = 1 makes outcome 0 impossible there
    let raw = br#"{
        "kind": "born-frequency",
        "spectrum": { "atoms": [[0.0, 0.5], [1.0, 0.5]] },
        "probe": { "kind": "binary-phase", "phase_offset": 0.0, "phase_scale": 3.141592653589793 },
        "k_max": 10,
        "region": [1.0]
    }"#;
    let loaded = LoadedConfig::parse(raw.to_vec()).unwrap();
    let err = harness::run_experiment(&loaded, &RunOptions::default()).unwrap_err();
    let Error::ValidationFailed(report) = err else {
        panic!("expected a validation failure");
    };
    assert!(report.failed().any(|c| c.name == "positivity"));
    let report = harness::validate(&loaded).unwrap();
    assert!(!report.passed());
}

#[test]
fn validation_experiments_report_every_check() {
    let report = harness::run_experiment(&shipped("validate-binary"), &RunOptions::default()).unwrap();
    assert!(report.passed());
    let names: Vec<&str> = report.summary.results.iter().map(|r| r.name.as_str()).collect();
    for want in ["normalization", "positivity", "identifiability", "information-identity", "state-trace"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
}
