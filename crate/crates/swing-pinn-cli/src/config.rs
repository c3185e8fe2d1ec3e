//! Run configuration: JSON schema, defaults, and flag overrides.
//!
//! Precedence is flags > config file > defaults. Unknown keys anywhere in
//! the document are rejected. Every run writes the fully resolved
//! configuration (defaults included) alongside its outputs; feeding that
//! echo back reproduces the run.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Raw document: every key optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    dataset: Option<RawDataset>,
    train: Option<RawTrain>,
    ensemble: Option<RawEnsemble>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    n_traj: Option<usize>,
    n_steps: Option<usize>,
    seed: Option<u64>,
    rtol: Option<f64>,
    atol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    learning_rate: Option<f64>,
    iterations: Option<usize>,
    physics_batch: Option<usize>,
    data_batch: Option<usize>,
    seed: Option<u64>,
    lambda_u: Option<f64>,
    lambda_f: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    n_members: Option<usize>,
    master_seed: Option<u64>,
    confidence_level: Option<f64>,
    noise_palette: Option<Vec<f64>>,
    jobs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    pub n_traj: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub rtol: f64,
    pub atol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub iterations: usize,
    pub physics_batch: usize,
    pub data_batch: usize,
    pub seed: u64,
    pub lambda_u: f64,
    pub lambda_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSection {
    pub n_members: usize,
    pub master_seed: u64,
    pub confidence_level: f64,
    pub noise_palette: Vec<f64>,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// Fully resolved run configuration. Serializing it yields the echo, which
/// itself validates against the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
}

/// Flag-level overrides (precedence above the config file).
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Which seed the global `--seed` flag overrides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeedTarget {
    Dataset,
    Train,
    EnsembleMaster,
}

impl RunConfig {
    /// Load (optionally) a config file, apply overrides, fill defaults.
    pub fn resolve(
        path: Option<&Path>,
        overrides: &Overrides,
        seed_target: SeedTarget,
    ) -> Result<RunConfig> {
        let raw: RawConfig = match path {
            None => RawConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("invalid config {}", p.display()))?
            }
        };

        let preset = overrides
            .preset
            .clone()
            .or(raw.preset)
            .ok_or_else(|| anyhow!("missing key `preset` (set it in the config or via --preset)"))?;
        if preset != "1bus" && preset != "2bus" {
            bail!("key `preset`: unknown preset `{preset}` (expected 1bus or 2bus)");
        }

        let rd = raw.dataset.unwrap_or_default();
        let mut dataset = DatasetSection {
            n_traj: rd.n_traj.unwrap_or(100),
            n_steps: rd.n_steps.unwrap_or(201),
            seed: rd.seed.unwrap_or(42),
            rtol: rd.rtol.unwrap_or(1e-8),
            atol: rd.atol.unwrap_or(1e-10),
        };

        let rt = raw.train.unwrap_or_default();
        let mut train = TrainSection {
            learning_rate: rt.learning_rate.unwrap_or(5e-3),
            iterations: rt.iterations.unwrap_or(20_000),
            physics_batch: rt.physics_batch.unwrap_or(512),
            data_batch: rt.data_batch.unwrap_or(256),
            seed: rt.seed.unwrap_or(7),
            lambda_u: rt.lambda_u.unwrap_or(1.0),
            lambda_f: rt.lambda_f.unwrap_or(1.0),
        };

        let re = raw.ensemble.unwrap_or_default();
        let default_members = if preset == "2bus" { 3 } else { 6 };
        let mut ensemble = EnsembleSection {
            n_members: re.n_members.unwrap_or(default_members),
            master_seed: re.master_seed.unwrap_or(2024),
            confidence_level: re.confidence_level.unwrap_or(0.95),
            noise_palette: re
                .noise_palette
                .unwrap_or_else(|| swing_pinn::ensemble::NOISE_PALETTE.to_vec()),
            jobs: re.jobs.unwrap_or(1),
        };

        let ro = raw.output.unwrap_or_default();
        let output = OutputSection {
            dir: ro.dir.unwrap_or_else(|| PathBuf::from(".")),
        };

        if let Some(seed) = overrides.seed {
            match seed_target {
                SeedTarget::Dataset => dataset.seed = seed,
                SeedTarget::Train => train.seed = seed,
                SeedTarget::EnsembleMaster => ensemble.master_seed = seed,
            }
        }
        if let Some(jobs) = overrides.jobs {
            ensemble.jobs = jobs;
        }

        let cfg = RunConfig {
            preset,
            dataset,
            train,
            ensemble,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.n_traj < 1 {
            bail!("key `dataset.n_traj`: must be at least 1");
        }
        if self.dataset.n_steps < 2 {
            bail!("key `dataset.n_steps`: must be at least 2");
        }
        if !(self.dataset.rtol > 0.0 && self.dataset.atol > 0.0) {
            bail!("key `dataset.rtol`/`dataset.atol`: must be positive");
        }
        if !(self.train.learning_rate > 0.0) {
            bail!("key `train.learning_rate`: must be positive");
        }
        if self.train.iterations == 0 {
            bail!("key `train.iterations`: must be at least 1");
        }
        if !(self.train.lambda_u >= 0.0 && self.train.lambda_f >= 0.0) {
            bail!("key `train.lambda_u`/`train.lambda_f`: must be nonnegative");
        }
        if self.ensemble.n_members == 0 {
            bail!("key `ensemble.n_members`: must be at least 1");
        }
        if !(self.ensemble.confidence_level > 0.0 && self.ensemble.confidence_level < 1.0) {
            bail!("key `ensemble.confidence_level`: must lie strictly inside (0, 1)");
        }
        if self.ensemble.noise_palette.is_empty() {
            bail!("key `ensemble.noise_palette`: must not be empty");
        }
        if self.ensemble.noise_palette.iter().any(|s| *s < 0.0) {
            bail!("key `ensemble.noise_palette`: noise levels must be nonnegative");
        }
        Ok(())
    }

    /// The library-level training configuration this run uses.
    pub fn train_config(&self) -> swing_pinn::TrainConfig {
        swing_pinn::TrainConfig {
            learning_rate: self.train.learning_rate,
            iterations: self.train.iterations,
            physics_batch: self.train.physics_batch,
            data_batch: self.train.data_batch,
            seed: self.train.seed,
            lambda_u: self.train.lambda_u,
            lambda_f: self.train.lambda_f,
            ..swing_pinn::TrainConfig::default()
        }
    }

    pub fn solver_config(&self) -> swing_pinn::solver::SolverConfig {
        swing_pinn::solver::SolverConfig {
            rtol: self.dataset.rtol,
            atol: self.dataset.atol,
            ..swing_pinn::solver::SolverConfig::default()
        }
    }

    /// Write the resolved config next to the primary artifact.
    pub fn write_echo(&self, out: &Path) -> Result<PathBuf> {
        let echo_path = out.with_extension("config.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&echo_path, text)
            .with_context(|| format!("cannot write config echo {}", echo_path.display()))?;
        Ok(echo_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_cfg(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("cfg.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(dir.path(), r#"{"preset":"1bus"}"#);
        let cfg =
            RunConfig::resolve(Some(&p), &Overrides::default(), SeedTarget::Dataset).unwrap();
        assert_eq!(cfg.preset, "1bus");
        assert_eq!(cfg.dataset.n_traj, 100);
        assert_eq!(cfg.dataset.n_steps, 201);
        assert_eq!(cfg.ensemble.n_members, 6);
        assert_eq!(cfg.ensemble.jobs, 1);
    }

    #[test]
    fn two_bus_defaults_to_three_members() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(dir.path(), r#"{"preset":"2bus"}"#);
        let cfg =
            RunConfig::resolve(Some(&p), &Overrides::default(), SeedTarget::Dataset).unwrap();
        assert_eq!(cfg.ensemble.n_members, 3);
    }

    #[test]
    fn unknown_preset_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(dir.path(), r#"{"preset":"9bus"}"#);
        let err = RunConfig::resolve(Some(&p), &Overrides::default(), SeedTarget::Dataset)
            .unwrap_err()
            .to_string();
        assert!(err.contains("preset"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(dir.path(), r#"{"preset":"1bus","typo_key":1}"#);
        let err = RunConfig::resolve(Some(&p), &Overrides::default(), SeedTarget::Dataset)
            .unwrap_err();
        assert!(format!("{err:#}").contains("typo_key"), "{err:#}");

        let p = write_cfg(dir.path(), r#"{"preset":"1bus","train":{"lr":1}}"#);
        let err = RunConfig::resolve(Some(&p), &Overrides::default(), SeedTarget::Dataset)
            .unwrap_err();
        assert!(format!("{err:#}").contains("lr"), "{err:#}");
    }

    #[test]
    fn zero_members_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(dir.path(), r#"{"preset":"1bus","ensemble":{"n_members":0}}"#);
        let err = RunConfig::resolve(Some(&p), &Overrides::default(), SeedTarget::Dataset)
            .unwrap_err()
            .to_string();
        assert!(err.contains("n_members"), "{err}");
    }

    #[test]
    fn flags_beat_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(
            dir.path(),
            r#"{"preset":"1bus","dataset":{"seed":5},"ensemble":{"jobs":4}}"#,
        );
        let ov = Overrides {
            preset: Some("2bus".into()),
            seed: Some(99),
            jobs: Some(2),
        };
        let cfg = RunConfig::resolve(Some(&p), &ov, SeedTarget::Dataset).unwrap();
        assert_eq!(cfg.preset, "2bus");
        assert_eq!(cfg.dataset.seed, 99);
        assert_eq!(cfg.ensemble.jobs, 2);
    }

    #[test]
    fn echo_revalidates_and_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_cfg(dir.path(), r#"{"preset":"1bus","train":{"iterations":123}}"#);
        let cfg =
            RunConfig::resolve(Some(&p), &Overrides::default(), SeedTarget::Dataset).unwrap();
        let echo = cfg.write_echo(&dir.path().join("artifact.json")).unwrap();
        let cfg2 =
            RunConfig::resolve(Some(&echo), &Overrides::default(), SeedTarget::Dataset).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn missing_preset_is_an_error() {
        let err = RunConfig::resolve(None, &Overrides::default(), SeedTarget::Dataset)
            .unwrap_err()
            .to_string();
        assert!(err.contains("preset"), "{err}");
    }
}
