//! Experiment configuration for `kge train-head`.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "prototypes": {"source": "random-orthogonal", "classes": ["a", "b", "c"], "dim": 3},
//!   "background": {"policy": "implicit", "threshold": 0.55},
//!   "loss": {"kind": "contrastive", "temperature": 0.07, "metric": "cosine"},
//!   "dataset": {"samples_per_class": 100, "noise": 0.1},
//!   "optimizer": {"lr": 0.05, "steps": 2000}
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Command-line flags take precedence over the file.

use std::path::{Path, PathBuf};

use kge_core::losses::LossConfig;
use kge_core::prototypes::BackgroundPolicy;
use kge_core::trainer::{DatasetSpec, OptimizerSpec};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PrototypeSource {
    /// A prototype JSON file written by `build-prototypes`.
    File { path: PathBuf },
    RandomOrthogonal { classes: Vec<String>, dim: usize },
    /// Trainable rows for the cross-entropy baseline.
    LearnedBaseline { classes: Vec<String>, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackgroundSpec {
    Implicit { threshold: f64 },
    /// Explicit background at the mean of the class prototypes.
    ExplicitMean,
    Explicit { vector: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub prototypes: PrototypeSource,
    /// Keeps the policy stored with the prototypes when absent.
    #[serde(default)]
    pub background: Option<BackgroundSpec>,
    #[serde(default)]
    pub loss: LossConfig,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    /// Optional class → category map for the category-confusion report.
    #[serde(default)]
    pub categories: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Seeds handed to each random component, all drawn from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub master: u64,
    pub prototypes: u64,
    pub dataset: u64,
    pub head: u64,
    pub optimizer: u64,
}

impl DerivedSeeds {
    pub fn from_master(master: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        DerivedSeeds {
            master,
            prototypes: rng.next_u64(),
            dataset: rng.next_u64(),
            head: rng.next_u64(),
            optimizer: rng.next_u64(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let PrototypeSource::File { path } = &mut cfg.prototypes {
            *path = resolve(base, path);
        }
        if let Some(c) = &mut cfg.categories {
            *c = resolve(base, c);
        }
        if let Some(o) = &mut cfg.out {
            *o = resolve(base, o);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.loss.validate()?;
        self.dataset.validate()?;
        self.optimizer.validate()?;
        for p in [
            match &self.prototypes {
                PrototypeSource::File { path } => Some(path),
                _ => None,
            },
            self.categories.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

impl BackgroundSpec {
    pub fn apply(&self, p: kge_core::prototypes::PrototypeSet) -> kge_core::Result<kge_core::prototypes::PrototypeSet> {
        match self {
            BackgroundSpec::Implicit { threshold } => p.with_background(BackgroundPolicy::Implicit { threshold: *threshold }),
            BackgroundSpec::ExplicitMean => p.with_mean_background(),
            BackgroundSpec::Explicit { vector } => p.with_background(BackgroundPolicy::Explicit { vector: vector.clone() }),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}
