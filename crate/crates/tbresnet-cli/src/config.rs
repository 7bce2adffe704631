//! JSON run configurations, one schema per subcommand.
//!
//! Unknown keys are rejected and every default is a named function, so the
//! effective configuration written back into the output directory spells
//! out each value a run actually used. Field lists stay flat; serde's
//! flatten is avoided because it cannot coexist with unknown-key rejection.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use tbresnet::dataset::{
    generate_synthetic, load_csv_infer, split, ChoiceDataset, GenerateConfig, NoiseKind,
};
use tbresnet::dcm::{DcmParams, Scenario};
use tbresnet::error::{Error, Result};
use tbresnet::model::{TrainConfig, TrainerKind, DEFAULT_DELTA_GRID};
use tbresnet::robustness::{Attack, TgsmTarget, DEFAULT_EPSILON_GRID};
use tbresnet::surface::{ReferenceObservation, DEFAULT_RESOLUTION};

fn d_noise() -> NoiseKind {
    NoiseKind::Gumbel
}

fn d_split_fraction() -> f64 {
    0.75
}

fn d_trainer() -> TrainerKind {
    TrainerKind::Sequential
}

fn d_hidden() -> Vec<usize> {
    vec![100, 100]
}

fn d_iterations() -> usize {
    5000
}

fn d_batch_size() -> usize {
    100
}

fn d_learning_rate() -> f64 {
    0.01
}

fn d_grad_tol() -> f64 {
    1e-6
}

fn d_attacks() -> Vec<Attack> {
    vec![Attack::Fgsm, Attack::Tgsm, Attack::Gaussian]
}

fn d_epsilon_grid() -> Vec<f64> {
    DEFAULT_EPSILON_GRID.to_vec()
}

fn d_true() -> bool {
    true
}

fn d_tgsm_target() -> TgsmTarget {
    TgsmTarget::LeastLikely
}

fn d_resolution() -> usize {
    DEFAULT_RESOLUTION
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Synthetic-data settings shared by `generate` and by inline data sources.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSettings {
    pub scenario: Scenario,
    /// Rows to draw; omitted means the scenario's calibration sample size.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "d_noise")]
    pub noise: NoiseKind,
    /// Weight of the smooth residual outside the theory family.
    #[serde(default)]
    pub nonlinearity: f64,
    /// Generator truth; omitted means the calibrated scenario parameters.
    #[serde(default)]
    pub true_params: Option<DcmParams>,
}

impl GeneratorSettings {
    pub fn to_generate_config(&self, seed: u64) -> GenerateConfig {
        GenerateConfig {
            scenario: self.scenario,
            n: self.n,
            noise: self.noise,
            true_params: self.true_params.clone(),
            nonlinearity: self.nonlinearity,
            seed,
        }
    }
}

/// Where a command's train/test data comes from: CSV files or an inline
/// generator (drawn fresh, then split).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub train_csv: Option<PathBuf>,
    #[serde(default)]
    pub test_csv: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GeneratorSettings>,
    /// Train share when the generator source is split.
    #[serde(default = "d_split_fraction")]
    pub split_fraction: f64,
}

impl DataSource {
    /// Loads the configured data. The generator source always yields both
    /// sides; file sources yield whichever paths are present.
    pub fn load(&self, seed: u64) -> Result<(Option<ChoiceDataset>, Option<ChoiceDataset>)> {
        match (&self.generate, &self.train_csv, &self.test_csv) {
            (Some(settings), None, None) => {
                let (full, _) = generate_synthetic(&settings.to_generate_config(seed))?;
                let (train, test) = split(&full, self.split_fraction, seed)?;
                Ok((Some(train), Some(test)))
            }
            (None, train, test) => {
                if train.is_none() && test.is_none() {
                    return Err(Error::config(
                        "data source needs train_csv, test_csv, or a generate block",
                    ));
                }
                let train = train.as_deref().map(load_csv_infer).transpose()?;
                let test = test.as_deref().map(load_csv_infer).transpose()?;
                Ok((train, test))
            }
            (Some(_), _, _) => Err(Error::config(
                "data source cannot mix a generate block with CSV paths",
            )),
        }
    }

    pub fn require_train(&self, seed: u64) -> Result<(ChoiceDataset, Option<ChoiceDataset>)> {
        let (train, test) = self.load(seed)?;
        let train = train.ok_or_else(|| Error::config("this command needs training data"))?;
        Ok((train, test))
    }

    pub fn require_test(&self, seed: u64) -> Result<ChoiceDataset> {
        let (_, test) = self.load(seed)?;
        test.ok_or_else(|| Error::config("this command needs test data"))
    }

    pub fn require_both(&self, seed: u64) -> Result<(ChoiceDataset, ChoiceDataset)> {
        let (train, test) = self.load(seed)?;
        match (train, test) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::config("this command needs both train and test data")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateCmd {
    pub scenario: Scenario,
    /// Rows to draw; omitted means the scenario's calibration sample size.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "d_noise")]
    pub noise: NoiseKind,
    /// Weight of the smooth residual outside the theory family.
    #[serde(default)]
    pub nonlinearity: f64,
    /// Generator truth; omitted means the calibrated scenario parameters.
    #[serde(default)]
    pub true_params: Option<DcmParams>,
    /// When set, the dataset is also split and written as train/test CSVs.
    #[serde(default)]
    pub split_fraction: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl GenerateCmd {
    pub fn to_generate_config(&self) -> GenerateConfig {
        GenerateConfig {
            scenario: self.scenario,
            n: self.n,
            noise: self.noise,
            true_params: self.true_params.clone(),
            nonlinearity: self.nonlinearity,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCmd {
    pub scenario: Scenario,
    pub data: DataSource,
    pub delta: f64,
    #[serde(default = "d_trainer")]
    pub trainer: TrainerKind,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    /// Theory-stage learning rate; omitted means the scenario default.
    #[serde(default)]
    pub dcm_learning_rate: Option<f64>,
    #[serde(default = "d_grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FitCmd {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            delta: self.delta,
            hidden: self.hidden.clone(),
            iterations: self.iterations,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            dcm_learning_rate: self.dcm_learning_rate,
            grad_tol: self.grad_tol,
            trainer: self.trainer,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCmd {
    pub scenario: Scenario,
    pub data: DataSource,
    /// Omitted means the default 27-point grid.
    #[serde(default)]
    pub delta_grid: Option<Vec<f64>>,
    #[serde(default = "d_trainer")]
    pub trainer: TrainerKind,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    /// Theory-stage learning rate; omitted means the scenario default.
    #[serde(default)]
    pub dcm_learning_rate: Option<f64>,
    #[serde(default = "d_grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SweepCmd {
    pub fn grid(&self) -> Vec<f64> {
        self.delta_grid
            .clone()
            .unwrap_or_else(|| DEFAULT_DELTA_GRID.to_vec())
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            delta: 0.0,
            hidden: self.hidden.clone(),
            iterations: self.iterations,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            dcm_learning_rate: self.dcm_learning_rate,
            grad_tol: self.grad_tol,
            trainer: self.trainer,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmd {
    pub model: PathBuf,
    /// The test side is evaluated.
    pub data: DataSource,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbCmd {
    pub model: PathBuf,
    pub data: DataSource,
    #[serde(default = "d_attacks")]
    pub attacks: Vec<Attack>,
    #[serde(default = "d_epsilon_grid")]
    pub epsilon_grid: Vec<f64>,
    #[serde(default = "d_true")]
    pub perturb_z: bool,
    #[serde(default = "d_tgsm_target")]
    pub tgsm_target: TgsmTarget,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticityCmd {
    pub model: PathBuf,
    pub data: DataSource,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceCmd {
    pub model: PathBuf,
    /// Source of the median reference; not needed when `reference` is given.
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub alternative: usize,
    pub attr_a: String,
    /// A second attribute turns the slice into a 2D grid.
    #[serde(default)]
    pub attr_b: Option<String>,
    pub range_a: (f64, f64),
    #[serde(default)]
    pub range_b: Option<(f64, f64)>,
    #[serde(default = "d_resolution")]
    pub resolution_a: usize,
    #[serde(default = "d_resolution")]
    pub resolution_b: usize,
    /// Explicit raw-unit reference observation overriding the train median.
    #[serde(default)]
    pub reference: Option<ReferenceObservation>,
    #[serde(default)]
    pub seed: u64,
}
