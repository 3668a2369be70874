//! Experiment files: flat dotted keys in TOML, e.g.
//!
//! ```toml
//! name = "fig3_pirl"
//! seeds = [0, 1, 2, 3]
//! out_dir = "runs/fig3_pirl"
//! system.kind = "benchmark"
//! train.lambda = 0.01
//! eval.grid = 10
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::sde::Benchmark;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Benchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// Diffusion coefficient of the benchmark (`σ = noise·I`).
    pub noise: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { kind: SystemKind::Benchmark, noise: Benchmark::DEFAULT_NOISE }
    }
}

impl SystemConfig {
    pub fn build(&self) -> Benchmark {
        match self.kind {
            SystemKind::Benchmark => Benchmark::with_noise(self.noise),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Grid points per axis over `Ω_D`.
    pub grid: usize,
    /// Monte-Carlo paths per grid point.
    pub n_paths: usize,
    /// Horizon at which the network is evaluated.
    pub tau: f64,
    pub probes: Vec<Vec<f64>>,
    pub probe_paths: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: 10,
            n_paths: 10_000,
            tau: 2.0,
            probes: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]],
            probe_paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub system: SystemConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
            system: SystemConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; `origin` names the source in error messages.
    pub fn parse(src: &str, origin: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|sp| line_of_offset(src, sp.start));
            HarnessError::Config { origin: origin.into(), line, msg: e.message().to_string() }
        })?;
        cfg.validate().map_err(|(key, msg)| HarnessError::Config {
            origin: origin.into(),
            line: locate_key(src, &key),
            msg: format!("{key}: {msg}"),
        })?;
        Ok(cfg)
    }

    /// Returns the dotted key at fault.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.seeds.is_empty() {
            return Err(("seeds".into(), "need at least one seed".into()));
        }
        if !(self.system.noise >= 0.0 && self.system.noise.is_finite()) {
            return Err(("system.noise".into(), "must be non-negative".into()));
        }
        self.train.validate().map_err(|(f, m)| (format!("train.{f}"), m))?;
        let e = &self.eval;
        if e.grid == 0 || e.n_paths == 0 || e.probe_paths == 0 {
            return Err(("eval.grid".into(), "grid size and path counts must be positive".into()));
        }
        if !(e.tau > 0.0) {
            return Err(("eval.tau".into(), "must be positive".into()));
        }
        if let Some(p) = e.probes.iter().find(|p| p.len() != 2) {
            return Err(("eval.probes".into(), format!("probe {p:?} is not a 2-D state")));
        }
        Ok(())
    }

    /// Copy with the training seed set to `seed`.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        c
    }

    /// SHA-256 over the system and training sections, hex-encoded. The
    /// training section carries the seed, so every run has its own hash.
    pub fn config_hash(&self) -> [u8; 32] {
        let canon = serde_json::to_string(&(&self.system, &self.train)).expect("config serialises");
        Sha256::digest(canon.as_bytes()).into()
    }

    pub fn config_hash_hex(&self) -> String {
        hex::encode(self.config_hash())
    }
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// 1-based line that assigns the dotted `key`, either written out in full or
/// as the tail of the key under a matching `[table]` header.
pub fn locate_key(src: &str, key: &str) -> Option<usize> {
    let mut table = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            table = h.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs: String = lhs.split('.').map(str::trim).collect::<Vec<_>>().join(".");
        let full = if table.is_empty() { lhs } else { format!("{table}.{lhs}") };
        if full == key {
            return Some(i + 1);
        }
    }
    None
}
