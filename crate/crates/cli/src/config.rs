//! Run configuration read from a TOML file with one section per module.

use std::path::{Path, PathBuf};

use consensus_core::kinetic::KineticConfig;
use consensus_core::neural::{GridSpec, TrainConfig};
use consensus_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_samples: usize,
    pub seed: u64,
    /// Defaults to `<out_dir>/dataset.csv`.
    pub path: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { n_samples: 1000, seed: 0, path: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Nodes per axis of the evaluation grid.
    pub grid_n: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { grid_n: 316 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinarySection {
    pub xi0: f64,
    pub xj0: f64,
    pub dt: f64,
    pub horizon: f64,
    pub pmp_max_sweeps: usize,
    pub pmp_tol: f64,
    pub gap_threshold: f64,
}

impl Default for BinarySection {
    fn default() -> Self {
        BinarySection {
            xi0: -0.5,
            xj0: 0.6,
            dt: 0.01,
            horizon: 100.0,
            pmp_max_sweeps: 200,
            pmp_tol: 1e-8,
            gap_threshold: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Defaults to `<out_dir>/model_value.json`.
    pub value_model: Option<PathBuf>,
    /// Defaults to `<out_dir>/model_control.json`.
    pub control_model: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the dataset, training and kinetic seeds when set.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub grid_search: GridSpec,
    pub eval: EvalSection,
    pub binary: BinarySection,
    pub kinetic: KineticConfig,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            threads: None,
            out_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            dataset: DatasetSection::default(),
            train: TrainConfig::default(),
            grid_search: GridSpec::default(),
            eval: EvalSection::default(),
            binary: BinarySection::default(),
            kinetic: KineticConfig::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = consensus_core::io::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Pushes the top-level seed into every seeded section.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.dataset.seed = s;
            self.train.seed = s;
            self.kinetic.seed = s;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.grid_search.validate()?;
        self.kinetic.validate()?;
        if self.dataset.n_samples < 2 {
            return Err(CliError::Validation(format!("dataset.n_samples must be ≥ 2, got {}", self.dataset.n_samples)));
        }
        if self.eval.grid_n < 2 {
            return Err(CliError::Validation(format!("eval.grid_n must be ≥ 2, got {}", self.eval.grid_n)));
        }
        if self.threads == Some(0) {
            return Err(CliError::Validation("threads must be positive".into()));
        }
        let b = &self.binary;
        consensus_core::BinaryState::new(b.xi0, b.xj0).validate()?;
        consensus_core::sdre::n_steps(b.dt, b.horizon)?;
        if !(b.pmp_tol > 0.0) || b.pmp_max_sweeps == 0 {
            return Err(CliError::Validation("binary.pmp_tol and binary.pmp_max_sweeps must be positive".into()));
        }
        if !(b.gap_threshold > 0.0) {
            return Err(CliError::Validation(format!("binary.gap_threshold must be positive, got {}", b.gap_threshold)));
        }
        Ok(())
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.path.clone().unwrap_or_else(|| self.out_dir.join("dataset.csv"))
    }

    pub fn value_model_path(&self) -> PathBuf {
        self.paths.value_model.clone().unwrap_or_else(|| self.out_dir.join("model_value.json"))
    }

    pub fn control_model_path(&self) -> PathBuf {
        self.paths.control_model.clone().unwrap_or_else(|| self.out_dir.join("model_control.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::parse("seed = 7\n[model]\ngamma = 0.5\n[kinetic]\neps = 0.05\ncontroller = \"none\"\n").unwrap();
        assert_eq!(c.model.gamma, 0.5);
        assert_eq!(c.model.beta, -1.0);
        assert_eq!(c.kinetic.eps, 0.05);
        assert_eq!(c.kinetic.n_agents, 100_000);
        let mut c = c;
        c.apply_seed();
        assert_eq!((c.dataset.seed, c.train.seed, c.kinetic.seed), (7, 7, 7));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("[model]\ngama = 1.0\n"), Err(CliError::Validation(_))));
        assert!(RunConfig::parse("[nope]\n").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.model.gamma = -1.0;
        assert!(c.validate().is_err());
        let c = RunConfig { binary: BinarySection { xi0: 1.5, ..BinarySection::default() }, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { dataset: DatasetSection { n_samples: 1, ..DatasetSection::default() }, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }
}
