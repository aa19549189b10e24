use std::path::{Path, PathBuf};

use qmix::linear::{GreenOptions, InitialSpec};
use qmix::nonlinear::SimConfig;
use qmix::penrose::ScanResolution;
use qmix::{KernelSpec, ProfileSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA: u32 = 1;

/// Top-level configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Wavevectors traced by `linear` and `simulate`; merged into the simulate block.
    #[serde(default)]
    pub traced_modes: Vec<Vec<f64>>,
    #[serde(default)]
    pub hbar_sweep: Vec<f64>,
    #[serde(default)]
    pub penrose: Option<PenroseBlock>,
    #[serde(default)]
    pub linear: Option<LinearBlock>,
    #[serde(default)]
    pub simulate: Option<SimConfig>,
    /// Initial perturbation for `linear`, `simulate` and `sweep-hbar`.
    #[serde(default)]
    pub initial: Option<InitialSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenroseBlock {
    pub dim: usize,
    pub profile: ProfileSpec,
    #[serde(default = "one")]
    pub profile_amplitude: f64,
    pub kernel: KernelSpec,
    #[serde(default = "one")]
    pub coupling: f64,
    pub hbar_set: Vec<f64>,
    pub k_max: f64,
    pub lambda_max: f64,
    #[serde(default)]
    pub resolution: Option<ScanResolution>,
    /// |k| values whose Nyquist curves are written, one file per (|k|, ħ).
    #[serde(default)]
    pub nyquist_k: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearBlock {
    pub dim: usize,
    pub hbar: f64,
    pub profile: ProfileSpec,
    #[serde(default = "one")]
    pub profile_amplitude: f64,
    pub kernel: KernelSpec,
    #[serde(default = "one")]
    pub coupling: f64,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub green: GreenOptions,
}

fn one() -> f64 {
    1.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let config: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))?;
        if config.schema != SCHEMA {
            return Err(CliError::Config(format!(
                "schema: expected {SCHEMA}, found {}",
                config.schema
            )));
        }
        let canonical = serde_json::to_vec(&config).map_err(|e| CliError::Config(e.to_string()))?;
        let hash = hex::encode(Sha256::digest(&canonical));
        Ok((config, hash))
    }

    pub fn penrose_block(&self) -> Result<&PenroseBlock, CliError> {
        self.penrose
            .as_ref()
            .ok_or_else(|| CliError::Config("penrose: block missing".into()))
    }

    pub fn linear_block(&self) -> Result<&LinearBlock, CliError> {
        self.linear
            .as_ref()
            .ok_or_else(|| CliError::Config("linear: block missing".into()))
    }

    pub fn initial(&self) -> Result<&InitialSpec, CliError> {
        self.initial
            .as_ref()
            .ok_or_else(|| CliError::Config("initial: block missing".into()))
    }

    /// The simulate block with the top-level traced modes appended.
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let mut sim = self
            .simulate
            .clone()
            .ok_or_else(|| CliError::Config("simulate: block missing".into()))?;
        for k in &self.traced_modes {
            if !sim.traced_modes.contains(k) {
                sim.traced_modes.push(k.clone());
            }
        }
        Ok(sim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str) -> Result<(RunConfig, String), CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, text).unwrap();
        RunConfig::load(&path)
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = load_str(r#"{"schema":1,"penrose":{"dim":3,"bogus":1}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("penrose"), "{msg}");
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn wrong_schema_rejected() {
        assert!(matches!(load_str(r#"{"schema":2}"#), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_is_stable_under_formatting() {
        let (_, a) = load_str(r#"{"schema":1,"seed":3}"#).unwrap();
        let (_, b) = load_str("{\n  \"seed\": 3,\n  \"schema\": 1\n}").unwrap();
        assert_eq!(a, b);
        let (_, c) = load_str(r#"{"schema":1,"seed":4}"#).unwrap();
        assert_ne!(a, c);
    }
}
