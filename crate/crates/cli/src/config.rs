use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use physnet::control::{ChirpSpec, Gains, SwingUpConfig};
use physnet::energy_models::ModelVariant;
use physnet::evaluation::{GeneratorSpec, UniformRanges};
use physnet::integrators::Scheme;
use physnet::plants::{FrictionModel, Plant, PlantKind, PlantParams};
use physnet::training::{LossKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Output directory override; the only setting read from the environment.
pub const OUT_ENV: &str = "PHYSNET_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    DelanStructured,
    DelanBlackbox,
    HnnStructured,
    HnnBlackbox,
    Ffnn,
    Sysid,
    Analytic,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_possible_value().expect("no skipped variants");
        f.write_str(v.get_name())
    }
}

impl Variant {
    /// The learnable energy variant, if this is one.
    /// Loss used when the config leaves it open: the torque residual for
    /// Lagrangian variants, both of Hamilton's equations for Hamiltonian
    /// ones, forward plus inverse residuals for the feed-forward network.
    pub fn default_loss(self) -> LossKind {
        match self {
            Variant::DelanStructured | Variant::DelanBlackbox => LossKind::Inverse,
            Variant::HnnStructured | Variant::HnnBlackbox => LossKind::Hamiltonian,
            Variant::Ffnn | Variant::Sysid | Variant::Analytic => LossKind::Combined,
        }
    }

    pub fn energy(self) -> Option<ModelVariant> {
        match self {
            Variant::DelanStructured => Some(ModelVariant::StructuredLagrangian),
            Variant::DelanBlackbox => Some(ModelVariant::BlackBoxLagrangian),
            Variant::HnnStructured => Some(ModelVariant::StructuredHamiltonian),
            Variant::HnnBlackbox => Some(ModelVariant::BlackBoxHamiltonian),
            Variant::Ffnn | Variant::Sysid | Variant::Analytic => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub kind: PlantKind,
    /// Plant parameter file; defaults for `kind` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Existing dataset; the generator below runs when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub n_samples: usize,
    pub noise_std: f64,
    /// Per-plant uniform ranges when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { file: None, n_samples: 1000, noise_std: 0.0, generator: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub starts: usize,
    pub steps: usize,
    pub dt: f64,
    pub scheme: Scheme,
    pub threshold: f64,
    /// Half-widths of the initial position and velocity boxes.
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self {
            starts: 20,
            steps: 1000,
            dt: 0.01,
            scheme: Scheme::Rk4,
            threshold: 1e-2,
            q: vec![1.57, 1.57],
            qd: vec![1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlTask {
    Tracking,
    SwingUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    /// Tracking for the two-link pendulum, swing-up otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<ControlTask>,
    pub dt: f64,
    pub steps: usize,
    pub sensor_noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chirp: Option<ChirpSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Gains>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub swing_up: Option<SwingUpConfig>,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self { task: None, dt: 2e-3, steps: 5000, sensor_noise: 0.0, chirp: None, gains: None, swing_up: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SysIdSection {
    pub lambda: f64,
    /// Samples dropped at each end, where filtered derivatives are transient.
    pub trim: usize,
    /// Prior `θ₀`; zeros when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
}

/// Everything one run needs. Stored next to the outputs, it reproduces them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Saved model (or identified parameters) used by eval, rollout and control.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_file: Option<PathBuf>,
    pub plant: PlantSection,
    #[serde(default)]
    pub friction: FrictionModel,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub sysid: SysIdSection,
    /// Whether `train.loss` was written out rather than defaulted.
    #[serde(skip)]
    pub loss_given: bool,
}

fn default_variant() -> Variant {
    Variant::DelanStructured
}

fn absolute(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ExperimentConfig {
    /// Reads a config; relative paths inside it are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.loss_given = raw.get("train").and_then(|t| t.get("loss")).is_some();
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let base = std::path::absolute(base).map_err(|e| CliError::io(base, e))?;
        absolute(&base, &mut cfg.plant.params_file);
        absolute(&base, &mut cfg.dataset.file);
        absolute(&base, &mut cfg.model_file);
        absolute(&base, &mut cfg.out);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Fills in the variant's loss when the config names none.
    pub fn apply_default_loss(&mut self) {
        if !self.loss_given {
            self.train.loss = self.variant.default_loss();
            self.loss_given = true;
        }
    }

    /// Training always uses the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn plant(&self) -> Result<Plant, CliError> {
        let params = match &self.plant.params_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                PlantParams::from_toml(&text)?
            }
            None => PlantParams::default_for(self.plant.kind),
        };
        if params.kind != self.plant.kind {
            return Err(CliError::Config(format!(
                "parameter file describes a {} but the config asks for a {}",
                params.kind, self.plant.kind
            )));
        }
        Ok(Plant::new(params)?)
    }

    pub fn generator(&self) -> GeneratorSpec {
        self.dataset.generator.clone().unwrap_or_else(|| GeneratorSpec::Uniform(default_ranges(self.plant.kind)))
    }

    pub fn control_task(&self) -> ControlTask {
        self.control.task.unwrap_or(match self.plant.kind {
            PlantKind::TwoLinkPendulum => ControlTask::Tracking,
            PlantKind::Cartpole | PlantKind::Furuta => ControlTask::SwingUp,
        })
    }
}

/// Sampling box covering the motions each plant sees under its controllers.
pub fn default_ranges(kind: PlantKind) -> UniformRanges {
    use std::f64::consts::PI;
    match kind {
        PlantKind::TwoLinkPendulum => UniformRanges::symmetric(&[PI, PI], &[3.0, 3.0], &[10.0, 10.0], 0.01),
        PlantKind::Cartpole => UniformRanges::symmetric(&[1.0, PI], &[2.0, 8.0], &[5.0, 0.5], 0.01),
        PlantKind::Furuta => UniformRanges::symmetric(&[PI, PI], &[2.0, 6.0], &[0.1, 0.1], 0.01),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults_and_round_trips() {
        let cfg: ExperimentConfig = toml::from_str("[plant]\nkind = \"cartpole\"\n").unwrap();
        assert_eq!(cfg.variant, Variant::DelanStructured);
        assert_eq!(cfg.control_task(), ControlTask::SwingUp);
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn loss_follows_the_variant_unless_given() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "variant = \"hnn-structured\"\n[plant]\nkind = \"furuta\"\n").unwrap();
        let mut cfg = ExperimentConfig::load(&path).unwrap();
        assert!(!cfg.loss_given);
        cfg.apply_default_loss();
        assert_eq!(cfg.train.loss, LossKind::Hamiltonian);

        std::fs::write(&path, "[plant]\nkind = \"furuta\"\n[train]\nloss = \"state-rk4\"\n").unwrap();
        let mut cfg = ExperimentConfig::load(&path).unwrap();
        cfg.apply_default_loss();
        assert_eq!(cfg.train.loss, LossKind::StateRk4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("sed = 1\n[plant]\nkind = \"furuta\"\n").is_err());
    }
}
