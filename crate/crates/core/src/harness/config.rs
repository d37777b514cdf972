//! Experiment configuration: TOML schema, validation, and conversion into
//! the runtime structures.
//!
//! Every randomness source is driven by one of five explicit seeds; there is
//! no ambient RNG anywhere. Validation errors carry the offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ModelSpec};
use crate::optim::{OptimConfig, OptimVariant};
use crate::protocols::{Method, RoundConfig, SelectionMode, Sflv1Period};
use crate::seeds::SeedSet;
use crate::system::ProfileRanges;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerCfg {
    Dense {
        #[serde(rename = "in")]
        in_dim: usize,
        out: usize,
    },
    Relu {
        dim: usize,
    },
    SoftmaxXentHead {
        dim: usize,
    },
    SquaredErrorHead {
        dim: usize,
    },
}

impl LayerCfg {
    fn to_spec(&self) -> LayerSpec {
        match *self {
            LayerCfg::Dense { in_dim, out } => LayerSpec::dense(in_dim, out),
            LayerCfg::Relu { dim } => LayerSpec::relu(dim),
            LayerCfg::SoftmaxXentHead { dim } => LayerSpec::softmax_xent_head(dim),
            LayerCfg::SquaredErrorHead { dim } => LayerSpec::squared_error_head(dim),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    pub layers: Vec<LayerCfg>,
    /// Cut index L: layers `0..L` run on the client.
    pub cut: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetCfg {
    /// Synthetic Gaussian blobs; evaluation uses a held-out set drawn with a
    /// seed derived from the data seed.
    Blobs {
        classes: usize,
        dims: usize,
        per_class: usize,
        spread: f64,
        /// Held-out evaluation samples per class (defaults to `per_class`).
        eval_per_class: Option<usize>,
    },
    /// CSV import with header `f0..f{d-1},label`. Evaluation uses
    /// `eval_path` when given, otherwise the training set.
    Csv {
        path: PathBuf,
        eval_path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionCfg {
    pub clients: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundsCfg {
    pub total: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub selection_rate: f64,
    #[serde(default = "default_selection_mode")]
    pub selection_mode: SelectionMode,
    pub method: Method,
    #[serde(default = "default_alpha")]
    pub staleness_alpha: f64,
    #[serde(default)]
    pub global_momentum: f64,
    /// "every_step", "every_epoch", "round_end", or a step count.
    #[serde(default = "default_period")]
    pub sflv1_period: Sflv1PeriodCfg,
    #[serde(default)]
    pub fedprox_mu: f64,
    #[serde(default)]
    pub persist_client_momentum: bool,
}

fn default_selection_mode() -> SelectionMode {
    SelectionMode::FixedFraction
}

fn default_alpha() -> f64 {
    -0.1
}

fn default_period() -> Sflv1PeriodCfg {
    Sflv1PeriodCfg::Named("round_end".to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sflv1PeriodCfg {
    Named(String),
    Steps(usize),
}

impl Sflv1PeriodCfg {
    fn resolve(&self) -> Result<Sflv1Period> {
        match self {
            Sflv1PeriodCfg::Named(s) => match s.as_str() {
                "every_step" => Ok(Sflv1Period::EveryStep),
                "every_epoch" => Ok(Sflv1Period::EveryEpoch),
                "round_end" => Ok(Sflv1Period::RoundEnd),
                other => Err(Error::config(format!(
                    "rounds.sflv1_period: unknown period {other:?} (expected every_step, every_epoch, round_end, or a step count)"
                ))),
            },
            Sflv1PeriodCfg::Steps(k) => {
                if *k == 0 {
                    Err(Error::config("rounds.sflv1_period: must be >= 1"))
                } else {
                    Ok(Sflv1Period::Steps(*k))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimCfg {
    pub eta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay_per_round: f64,
    #[serde(default = "default_variant")]
    pub variant: String,
}

fn default_beta() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    0.0005
}

fn default_lr_decay() -> f64 {
    0.998
}

fn default_variant() -> String {
    "sgdm".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyCfg {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_inference_range")]
    pub inference_range: (f64, f64),
    #[serde(default = "default_bandwidth_range")]
    pub bandwidth_range: (f64, f64),
    /// Optional CSV of measured profiles (`client_id,p_d_s_per_frame,b_kbps`),
    /// used instead of sampling when present.
    pub profiles_csv: Option<PathBuf>,
}

fn default_kappa() -> f64 {
    100.0
}

fn default_inference_range() -> (f64, f64) {
    (0.001, 0.1)
}

fn default_bandwidth_range() -> (f64, f64) {
    (1000.0, 20000.0)
}

impl Default for LatencyCfg {
    fn default() -> Self {
        LatencyCfg {
            kappa: default_kappa(),
            inference_range: default_inference_range(),
            bandwidth_range: default_bandwidth_range(),
            profiles_csv: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetCfg {
    /// Fixed accuracy target in [0, 1].
    Absolute { value: f64 },
    /// Target = `value` times the baseline run's best accuracy, resolved by
    /// `compare` against the first (baseline) run.
    BaselineFraction { value: f64 },
}

impl Default for TargetCfg {
    fn default() -> Self {
        TargetCfg::BaselineFraction { value: 0.9 }
    }
}

/// The full experiment configuration as parsed from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelCfg,
    pub dataset: DatasetCfg,
    pub partition: PartitionCfg,
    pub rounds: RoundsCfg,
    pub optim: OptimCfg,
    #[serde(default)]
    pub latency: LatencyCfg,
    pub seeds: SeedSet,
    #[serde(default)]
    pub target: TargetCfg,
}

fn default_name() -> String {
    "experiment".to_string()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.model.layers.iter().map(|l| l.to_spec()).collect())
            .map_err(|e| Error::config(format!("model.layers: {e}")))
    }

    pub fn optim_config(&self) -> Result<OptimConfig> {
        let variant = match self.optim.variant.as_str() {
            "sgdm" => OptimVariant::Sgdm,
            "nag" => OptimVariant::Nag,
            other => {
                return Err(Error::config(format!(
                    "optim.variant: unknown variant {other:?} (expected sgdm or nag)"
                )))
            }
        };
        let cfg = OptimConfig {
            eta: self.optim.eta,
            beta: self.optim.beta,
            weight_decay: self.optim.weight_decay,
            lr_decay_per_round: self.optim.lr_decay_per_round,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn round_config(&self) -> Result<RoundConfig> {
        let cfg = RoundConfig {
            rounds: self.rounds.total,
            local_epochs: self.rounds.local_epochs,
            batch_size: self.rounds.batch_size,
            selection_rate: self.rounds.selection_rate,
            selection_mode: self.rounds.selection_mode,
            staleness_alpha: self.rounds.staleness_alpha,
            global_momentum: self.rounds.global_momentum,
            method: self.rounds.method,
            sflv1_period: self.rounds.sflv1_period.resolve()?,
            fedprox_mu: self.rounds.fedprox_mu,
            persist_client_momentum: self.rounds.persist_client_momentum,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn profile_ranges(&self) -> ProfileRanges {
        ProfileRanges {
            inference_s_per_frame: self.latency.inference_range,
            bandwidth_kbps: self.latency.bandwidth_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.layers.is_empty() {
            return Err(Error::config("model.layers: must not be empty"));
        }
        let spec = self.model_spec()?;
        if self.model.cut >= spec.layer_count() {
            return Err(Error::config(format!(
                "model.cut: {} out of range for {} layers",
                self.model.cut,
                spec.layer_count()
            )));
        }
        match &self.dataset {
            DatasetCfg::Blobs {
                classes,
                dims,
                per_class,
                spread,
                eval_per_class,
            } => {
                if *classes < 2 {
                    return Err(Error::config("dataset.classes: must be >= 2"));
                }
                if *dims == 0 {
                    return Err(Error::config("dataset.dims: must be >= 1"));
                }
                if *per_class == 0 {
                    return Err(Error::config("dataset.per_class: must be >= 1"));
                }
                if *spread < 0.0 {
                    return Err(Error::config("dataset.spread: must be >= 0"));
                }
                if let Some(0) = eval_per_class {
                    return Err(Error::config("dataset.eval_per_class: must be >= 1"));
                }
                if *dims != spec.in_dim() {
                    return Err(Error::config(format!(
                        "dataset.dims: {} does not match the model input width {}",
                        dims,
                        spec.in_dim()
                    )));
                }
            }
            DatasetCfg::Csv { .. } => {}
        }
        if self.partition.clients == 0 {
            return Err(Error::config("partition.clients: must be >= 1"));
        }
        if !(self.partition.gamma > 0.0) {
            return Err(Error::config("partition.gamma: must be > 0"));
        }
        self.round_config()?;
        self.optim_config()?;
        if !(self.latency.kappa > 0.0) {
            return Err(Error::config("latency.kappa: must be > 0"));
        }
        for (name, r) in [
            ("latency.inference_range", self.latency.inference_range),
            ("latency.bandwidth_range", self.latency.bandwidth_range),
        ] {
            if !(r.0 > 0.0) || r.1 < r.0 {
                return Err(Error::config(format!("{name}: must satisfy 0 < lo <= hi")));
            }
        }
        match &self.target {
            TargetCfg::Absolute { value } => {
                if !(0.0..=1.0).contains(value) {
                    return Err(Error::config("target.value: must be in [0, 1]"));
                }
            }
            TargetCfg::BaselineFraction { value } => {
                if !(*value > 0.0 && *value <= 1.0) {
                    return Err(Error::config("target.value: must be in (0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Canonical description of everything that must match for two runs to
    /// be comparable: dataset, partition, model, schedule, and seeds, but
    /// not the method or its method-specific knobs.
    pub fn comparability_fingerprint(&self) -> String {
        format!(
            "model={:?};cut={};dataset={:?};partition=({},{});rounds=({},{},{},{},{:?});optim=({},{},{},{},{});latency=({:?},{:?},{});seeds={:?}",
            self.model
                .layers
                .iter()
                .map(|l| format!("{l:?}"))
                .collect::<Vec<_>>(),
            self.model.cut,
            self.dataset_fingerprint(),
            self.partition.clients,
            self.partition.gamma,
            self.rounds.total,
            self.rounds.local_epochs,
            self.rounds.batch_size,
            self.rounds.selection_rate,
            self.rounds.selection_mode,
            self.optim.eta,
            self.optim.beta,
            self.optim.weight_decay,
            self.optim.lr_decay_per_round,
            self.optim.variant,
            self.latency.inference_range,
            self.latency.bandwidth_range,
            self.latency.kappa,
            self.seeds,
        )
    }

    fn dataset_fingerprint(&self) -> String {
        match &self.dataset {
            DatasetCfg::Blobs {
                classes,
                dims,
                per_class,
                spread,
                eval_per_class,
            } => format!("blobs({classes},{dims},{per_class},{spread},{eval_per_class:?})"),
            DatasetCfg::Csv { path, eval_path } => {
                format!("csv({},{:?})", path.display(), eval_path)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"
name = "demo"

[model]
cut = 1
layers = [
  { kind = "dense", in = 4, out = 8 },
  { kind = "relu", dim = 8 },
  { kind = "dense", in = 8, out = 3 },
  { kind = "softmax_xent_head", dim = 3 },
]

[dataset]
kind = "blobs"
classes = 3
dims = 4
per_class = 30
spread = 1.0

[partition]
clients = 4
gamma = 0.5

[rounds]
total = 2
local_epochs = 1
batch_size = 8
selection_rate = 1.0
method = "smofi"
global_momentum = 0.3

[optim]
eta = 0.05

[seeds]
data = 1
init = 2
selection = 3
batching = 4
profiles = 5
"#;

    #[test]
    fn example_config_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml_str(EXAMPLE).unwrap();
        assert_eq!(cfg.name, "demo");
        assert_eq!(cfg.model_spec().unwrap().layer_count(), 4);
        assert_eq!(cfg.round_config().unwrap().method, Method::Smofi);
        assert_eq!(cfg.optim_config().unwrap().beta, 0.9);
    }

    #[test]
    fn validation_reports_field_paths() {
        let bad = EXAMPLE.replace("batch_size = 8", "batch_size = 0");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("rounds.batch_size"), "{err}");

        let bad = EXAMPLE.replace("selection_rate = 1.0", "selection_rate = 1.5");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("rounds.selection_rate"), "{err}");

        let bad = EXAMPLE.replace("dims = 4", "dims = 5");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("dataset.dims"), "{err}");

        let bad = EXAMPLE.replace("cut = 1", "cut = 9");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("model.cut"), "{err}");
    }

    #[test]
    fn sflv1_period_forms() {
        let with_period = EXAMPLE.replace(
            "method = \"smofi\"",
            "method = \"sflv1\"\nsflv1_period = \"every_epoch\"",
        );
        let cfg = ExperimentConfig::from_toml_str(&with_period).unwrap();
        assert_eq!(
            cfg.round_config().unwrap().sflv1_period,
            Sflv1Period::EveryEpoch
        );

        let with_steps = EXAMPLE.replace(
            "method = \"smofi\"",
            "method = \"sflv1\"\nsflv1_period = 7",
        );
        let cfg = ExperimentConfig::from_toml_str(&with_steps).unwrap();
        assert_eq!(
            cfg.round_config().unwrap().sflv1_period,
            Sflv1Period::Steps(7)
        );
    }

    #[test]
    fn fingerprint_ignores_method_but_not_seeds() {
        let a = ExperimentConfig::from_toml_str(EXAMPLE).unwrap();
        let b = ExperimentConfig::from_toml_str(
            &EXAMPLE.replace("method = \"smofi\"", "method = \"fedavg\""),
        )
        .unwrap();
        assert_eq!(a.comparability_fingerprint(), b.comparability_fingerprint());
        let c =
            ExperimentConfig::from_toml_str(&EXAMPLE.replace("data = 1", "data = 99")).unwrap();
        assert_ne!(a.comparability_fingerprint(), c.comparability_fingerprint());
    }
}
