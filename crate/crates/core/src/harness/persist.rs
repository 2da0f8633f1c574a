//! Trajectory files written by `simulate` and read back by `estimate`.
//!
//! * `trajectories.csv`: `trajectory,step,outcome`, one row per outcome.
//! * `trajectory_meta.csv`: `trajectory,master_seed,stream,hidden_node,hidden_nu,length`.
//! * `loglik_checkpoints.csv`: `trajectory,k,node,loglik`, the sums `L_k` at
//!   every checkpoint.
//! * `simulation.json`: hashes and sizes, checked before reading.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Experiment, LoadedConfig};
use crate::error::{Error, Result};
use crate::probe::OutcomeSpace;
use crate::trajectory::{HiddenValue, NodeLoglik, SeedRecord, Trajectory};

pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const META_FILE: &str = "trajectory_meta.csv";
pub const SUMS_FILE: &str = "loglik_checkpoints.csv";
pub const MANIFEST_FILE: &str = "simulation.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub config_hash: String,
    pub input_hash: String,
    pub seed: u64,
    pub ensemble_size: usize,
    pub k_max: usize,
    pub checkpoints: Vec<usize>,
    pub files: Vec<String>,
}

pub(crate) struct Writer {
    dir: PathBuf,
    outcomes: BufWriter<File>,
    meta: BufWriter<File>,
    sums: BufWriter<File>,
    written: usize,
    exp: Experiment,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

impl Writer {
    pub fn create(dir: &Path, exp: &Experiment) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        // a stale manifest must not survive a partial rewrite
        let manifest = dir.join(MANIFEST_FILE);
        if manifest.exists() {
            std::fs::remove_file(&manifest)?;
        }
        let mut w = Self {
            dir: dir.to_path_buf(),
            outcomes: create(&dir.join(TRAJECTORIES_FILE))?,
            meta: create(&dir.join(META_FILE))?,
            sums: create(&dir.join(SUMS_FILE))?,
            written: 0,
            exp: exp.clone(),
        };
        writeln!(w.outcomes, "trajectory,step,outcome")?;
        writeln!(w.meta, "trajectory,master_seed,stream,hidden_node,hidden_nu,length")?;
        writeln!(w.sums, "trajectory,k,node,loglik")?;
        Ok(w)
    }

    pub fn write(&mut self, t: &Trajectory, checkpoints: &[usize]) -> Result<()> {
        let i = self.written;
        for (step, xi) in t.outcomes().iter().enumerate() {
            writeln!(self.outcomes, "{i},{},{xi}", step + 1)?;
        }
        let seed = t.seed().unwrap_or(SeedRecord {
            master: self.exp.config.seed,
            stream: i as u64,
        });
        let (node, nu) = match t.hidden() {
            Some(h) => (h.node.map(|n| n.to_string()).unwrap_or_default(), h.nu.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(self.meta, "{i},{},{},{node},{nu},{}", seed.master, seed.stream, t.len())?;
        for &k in checkpoints {
            for (node, l) in t.sums_at(k)?.iter().enumerate() {
                writeln!(self.sums, "{i},{k},{node},{l}")?;
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self, loaded: &LoadedConfig) -> Result<SimulationManifest> {
        self.outcomes.flush()?;
        self.meta.flush()?;
        self.sums.flush()?;
        let manifest = SimulationManifest {
            config_hash: loaded.config.hash(),
            input_hash: loaded.input_hash(),
            seed: self.exp.config.seed,
            ensemble_size: self.written,
            k_max: self.exp.config.k_max,
            checkpoints: self.exp.checkpoints.clone(),
            files: [TRAJECTORIES_FILE, META_FILE, SUMS_FILE]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

fn open(path: &Path) -> Result<Lines<BufReader<File>>> {
    let f = File::open(path).map_err(|e| {
        Error::Persistence(format!(
            "missing trajectory file {} ({e}); run simulate first",
            path.display()
        ))
    })?;
    let mut lines = BufReader::new(f).lines();
    lines.next().transpose()?;
    Ok(lines)
}

fn field<T: std::str::FromStr>(parts: &[&str], i: usize, file: &str) -> Result<T> {
    parts
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Persistence(format!("malformed row in {file}: {}", parts.join(","))))
}

/// Replays persisted trajectories in order and audits them against the
/// stored checkpoint sums.
pub(crate) struct Reader {
    outcomes: std::iter::Peekable<Lines<BufReader<File>>>,
    meta: Lines<BufReader<File>>,
    sums: Lines<BufReader<File>>,
    space: OutcomeSpace,
    next: usize,
    total: usize,
}

impl Reader {
    pub fn open(dir: &Path, exp: &Experiment) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            Error::Persistence(format!("no simulation found in {} (run simulate first)", dir.display()))
        })?;
        let manifest: SimulationManifest = serde_json::from_str(&text)?;
        if manifest.config_hash != exp.config.hash() {
            return Err(Error::Persistence(
                "persisted trajectories were simulated from a different config or seed".into(),
            ));
        }
        Ok(Self {
            outcomes: open(&dir.join(TRAJECTORIES_FILE))?.peekable(),
            meta: open(&dir.join(META_FILE))?,
            sums: open(&dir.join(SUMS_FILE))?,
            space: exp.probe.outcome_space(),
            next: 0,
            total: manifest.ensemble_size,
        })
    }

    pub fn next(&mut self, field_rows: &NodeLoglik<'_>, checkpoints: &[usize]) -> Result<Trajectory> {
        let i = self.next;
        if i >= self.total {
            return Err(Error::Persistence("fewer persisted trajectories than configured".into()));
        }
        let line = self
            .meta
            .next()
            .ok_or_else(|| Error::Persistence(format!("{META_FILE} ends early")))??;
        let parts: Vec<&str> = line.split(',').collect();
        if field::<usize>(&parts, 0, META_FILE)? != i {
            return Err(Error::Persistence(format!("{META_FILE} out of order at trajectory {i}")));
        }
        let seed = SeedRecord {
            master: field(&parts, 1, META_FILE)?,
            stream: field(&parts, 2, META_FILE)?,
        };
        let hidden = match parts.get(4) {
            Some(s) if !s.is_empty() => Some(HiddenValue {
                node: parts.get(3).and_then(|n| n.parse().ok()),
                nu: field(&parts, 4, META_FILE)?,
            }),
            _ => None,
        };
        let length: usize = field(&parts, 5, META_FILE)?;

        let mut outcomes = Vec::with_capacity(length);
        while let Some(Ok(row)) = self.outcomes.peek() {
            let mut it = row.splitn(3, ',');
            let owner: Option<usize> = it.next().and_then(|s| s.parse().ok());
            if owner != Some(i) {
                break;
            }
            let row = self.outcomes.next().expect("peeked")?;
            let text = row.rsplit(',').next().unwrap_or_default();
            outcomes.push(self.space.parse(text)?);
        }
        if outcomes.len() != length {
            return Err(Error::Persistence(format!(
                "trajectory {i}: expected {length} outcomes, found {}",
                outcomes.len()
            )));
        }
        let mut t = Trajectory::replay(&outcomes, field_rows, checkpoints)?.with_seed(seed);
        if let Some(h) = hidden {
            t = t.with_hidden(h);
        }

        for &k in checkpoints {
            let replayed = t.sums_at(k)?;
            for (node, &l) in replayed.iter().enumerate() {
                let line = self
                    .sums
                    .next()
                    .ok_or_else(|| Error::Persistence(format!("{SUMS_FILE} ends early")))??;
                let parts: Vec<&str> = line.split(',').collect();
                let stored: f64 = field(&parts, 3, SUMS_FILE)?;
                let key: (usize, usize, usize) = (
                    field(&parts, 0, SUMS_FILE)?,
                    field(&parts, 1, SUMS_FILE)?,
                    field(&parts, 2, SUMS_FILE)?,
                );
                if key != (i, k, node) || stored.to_bits() != l.to_bits() {
                    return Err(Error::Persistence(format!(
                        "replay audit failed for trajectory {i} at k = {k}, node {node}"
                    )));
                }
            }
        }
        self.next += 1;
        Ok(t)
    }

    pub fn finish(&mut self) -> Result<()> {
        if self.next != self.total || self.meta.next().is_some() {
            return Err(Error::Persistence("persisted ensemble size does not match the config".into()));
        }
        Ok(())
    }
}
