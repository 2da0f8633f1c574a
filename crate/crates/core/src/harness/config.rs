use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::probe::{Extension, ProbeModel, ProbeSpec, ProbeTolerances};
use crate::spectral::{Region, SpectralModel, SpectralSpec};
use crate::state::{StateKernel, StateSpec, StateTolerances};

/// Master seed used when neither the config nor the command line sets one.
pub const DEFAULT_SEED: u64 = 20_240_917;

pub const DEFAULT_CHECKPOINTS: [usize; 7] = [10, 30, 100, 300, 1000, 3000, 10_000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BornFrequency,
    RateConvergence,
    Clt,
    KernelConvergence,
    AssumptionValidation,
}

impl ExperimentKind {
    pub fn needs_trajectories(self) -> bool {
        self != ExperimentKind::AssumptionValidation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    #[default]
    DeFinetti,
    Sequential,
}

fn default_sigmas() -> f64 {
    3.0
}
fn default_alpha() -> f64 {
    0.01
}
fn default_rate() -> f64 {
    0.1
}
fn default_kernel() -> f64 {
    0.1
}
fn default_laplace() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Half-width of binomial bands in standard deviations.
    #[serde(default = "default_sigmas")]
    pub binomial_sigmas: f64,
    /// KS and chi-square significance level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Relative tolerance on large-deviation rates.
    #[serde(default = "default_rate")]
    pub rate_relative: f64,
    /// Bound on the median trace-norm distance at the last checkpoint.
    #[serde(default = "default_kernel")]
    pub kernel_distance: f64,
    /// Bound on `|ratio - 1|` for the Laplace condition.
    #[serde(default = "default_laplace")]
    pub laplace: f64,
    #[serde(default)]
    pub probe: ProbeTolerances,
    #[serde(default)]
    pub state: StateTolerances,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            binomial_sigmas: default_sigmas(),
            alpha: default_alpha(),
            rate_relative: default_rate(),
            kernel_distance: default_kernel(),
            laplace: default_laplace(),
            probe: ProbeTolerances::default(),
            state: StateTolerances::default(),
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_ensemble() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub kind: ExperimentKind,
    pub spectrum: SpectralSpec,
    #[serde(default)]
    pub state: StateSpec,
    pub probe: ProbeSpec,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub k_max: usize,
    /// Defaults to the geometric schedule up to `k_max`, plus `k_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    /// Fixes the hidden value of every mixture-sampled trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_nu: Option<f64>,
    /// Rescaled window node count for kernel comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_nodes: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// A config together with the bytes it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: Vec<u8>,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(raw)
    }

    pub fn parse(raw: Vec<u8>) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        Ok(Self { config, raw })
    }

    pub fn from_config(config: ExperimentConfig) -> Self {
        let raw = serde_json::to_vec_pretty(&config).expect("config serializes");
        Self { config, raw }
    }

    /// Content hash of the input bytes, git blob style (`blob <len>\0<bytes>`) under SHA-256.
    pub fn input_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", self.raw.len()).as_bytes());
        h.update(&self.raw);
        hex::encode(h.finalize())
    }
}

impl ExperimentConfig {
    /// SHA-256 of the canonical serialization of the resolved config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        match &self.checkpoints {
            Some(c) => c.clone(),
            None => {
                let mut c: Vec<usize> = DEFAULT_CHECKPOINTS
                    .iter()
                    .copied()
                    .filter(|&k| k < self.k_max)
                    .collect();
                if self.k_max > 0 {
                    c.push(self.k_max);
                }
                c
            }
        }
    }

    /// Structural checks and model construction.
    pub fn build(&self) -> Result<Experiment> {
        let checkpoints = self.checkpoints();
        if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("checkpoints must be strictly increasing".into()));
        }
        if checkpoints.last().is_some_and(|&k| k > self.k_max) {
            return Err(Error::Config(format!("checkpoints exceed k_max = {}", self.k_max)));
        }
        if self.kind.needs_trajectories() {
            if self.ensemble_size == 0 {
                return Err(Error::Config("ensemble_size must be at least 1".into()));
            }
            if self.k_max == 0 || checkpoints.is_empty() {
                return Err(Error::Config("k_max and at least one checkpoint are required".into()));
            }
        }
        let needs_hidden = matches!(self.kind, ExperimentKind::Clt | ExperimentKind::KernelConvergence);
        if needs_hidden && self.sampler != SamplerKind::DeFinetti {
            return Err(Error::Config(format!(
                "{:?} experiments need the de-finetti sampler",
                self.kind
            )));
        }
        if self.hidden_nu.is_some() && self.sampler != SamplerKind::DeFinetti {
            return Err(Error::Config("hidden_nu applies only to the de-finetti sampler".into()));
        }
        let needs_region = matches!(
            self.kind,
            ExperimentKind::BornFrequency | ExperimentKind::RateConvergence
        );
        if needs_region && self.region.is_none() {
            return Err(Error::Config("this experiment kind needs a region".into()));
        }
        let model = SpectralModel::new(self.spectrum.clone())?;
        let state = self.state.build(&model)?;
        let probe = ProbeModel::new(self.probe.clone())?.with_extension(Extension::for_model(&model));
        let region_nodes = match &self.region {
            Some(r) => Some(model.resolve(r)?),
            None => None,
        };
        if let Some(nu) = self.hidden_nu {
            if model.component_containing(nu).is_none() {
                return Err(Error::Config(format!("hidden_nu = {nu} is not in the spectrum")));
            }
        }
        Ok(Experiment {
            config: self.clone(),
            checkpoints,
            model,
            state,
            probe,
            region_nodes,
        })
    }
}

/// A config with its models built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub checkpoints: Vec<usize>,
    pub model: SpectralModel,
    pub state: StateKernel,
    pub probe: ProbeModel,
    pub region_nodes: Option<Vec<usize>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BORN: &str = r#"{
        "kind": "born-frequency",
        "spectrum": { "atoms": [[0, 0.3], [1, 0.7]] },
        "probe": { "kind": "binary-phase", "phase_offset": 0.7853981633974483, "phase_scale": 1.5707963267948966 },
        "k_max": 200,
        "ensemble_size": 10,
        "region": [1.0]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = LoadedConfig::parse(BORN.as_bytes().to_vec()).unwrap().config;
        assert_eq!(c.seed, DEFAULT_SEED);
        assert_eq!(c.sampler, SamplerKind::DeFinetti);
        assert_eq!(c.checkpoints(), vec![10, 30, 100, 200]);
        let e = c.build().unwrap();
        assert_eq!(e.region_nodes, Some(vec![1]));
    }

    #[test]
    fn hash_tracks_content() {
        let a = LoadedConfig::parse(BORN.as_bytes().to_vec()).unwrap();
        let mut c = a.config.clone();
        assert_eq!(c.hash(), a.config.hash());
        c.seed += 1;
        assert_ne!(c.hash(), a.config.hash());
        assert_eq!(a.input_hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = LoadedConfig::parse(BORN.as_bytes().to_vec()).unwrap().config;
        c.checkpoints = Some(vec![300]);
        assert!(matches!(c.build(), Err(Error::Config(_))));
        c.checkpoints = Some(vec![20, 10]);
        assert!(c.build().is_err());
        c.checkpoints = None;
        c.region = None;
        assert!(c.build().is_err());
        assert!(LoadedConfig::parse(b"{\"kind\": \"born-frequency\"}".to_vec()).is_err());
        assert!(LoadedConfig::parse(b"{".to_vec()).is_err());
    }
}
