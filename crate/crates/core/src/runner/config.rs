use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackConfig, Method};
use crate::classifiers::{SurrogateConfig, TargetConfig};
use crate::data::{DatasetFormat, SyntheticConfig};
use crate::editdist::DeepLevConfig;
use crate::error::{Error, Result};
use crate::evaluation::LmConfig;
use crate::seq2seq::{MaskerSet, Seq2SeqConfig};

/// Environment variable holding the root that relative output directories
/// resolve against.
pub const OUTPUT_ROOT_ENV: &str = "SEQADV_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticConfig),
    File(FileDataset),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDataset {
    pub path: PathBuf,
    pub format: DatasetFormat,
    /// Separate test file; otherwise `test_fraction` of `path` is held out.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_min_freq() -> usize {
    1
}

fn default_max_len() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    #[default]
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Which classifier scores decoded candidates during an attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    #[default]
    Surrogate,
    /// White-box ablation: the target guides its own attack.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSpec {
    pub method: Method,
    pub n: usize,
    /// Absolute proposal std; when unset, `sigma_scale` times the mean
    /// per-dimension std of encoder states on the training data.
    pub sigma: Option<f64>,
    pub sigma_scale: f64,
    pub sigma_wer: f64,
    pub sigma_class: f64,
    pub lambda: f64,
    pub step_size: f64,
    pub beam: usize,
    pub masker: MaskerSet,
    pub guidance: GuidanceKind,
    pub split: Split,
    /// Attack only the first `n_examples` of the split.
    pub n_examples: Option<usize>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        let base = AttackConfig::default();
        Self {
            method: Method::Cascada,
            n: base.n,
            sigma: None,
            sigma_scale: 0.1,
            sigma_wer: base.sigma_wer,
            sigma_class: base.sigma_class,
            lambda: base.lambda,
            step_size: base.step_size,
            beam: base.beam,
            masker: base.masker,
            guidance: GuidanceKind::Surrogate,
            split: Split::Test,
            n_examples: None,
        }
    }
}

impl AttackSpec {
    pub fn resolve(&self, state_std: f64, seed: u64) -> Result<AttackConfig> {
        let cfg = AttackConfig {
            n: self.n,
            sigma: self.sigma.unwrap_or(self.sigma_scale * state_std),
            sigma_wer: self.sigma_wer,
            sigma_class: self.sigma_class,
            lambda: self.lambda,
            step_size: self.step_size,
            beam: self.beam,
            masker: self.masker.clone(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmKind {
    #[default]
    Trained,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub lm: LmKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStrategy {
    #[default]
    Random,
    Grid,
}

/// Ranges are `[low, high]`; positive ranges are sampled log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub budget: usize,
    pub strategy: SweepStrategy,
    /// Values per parameter for the grid strategy.
    pub grid_levels: usize,
    pub step_size: [f64; 2],
    pub lambda: [f64; 2],
    pub beam: Vec<usize>,
    pub sigma_scale: [f64; 2],
    pub sigma_wer: [f64; 2],
    pub sigma_class: [f64; 2],
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            budget: 8,
            strategy: SweepStrategy::Random,
            grid_levels: 2,
            step_size: [1.0, 100.0],
            lambda: [0.1, 10.0],
            beam: vec![1, 3, 5],
            sigma_scale: [0.3, 3.0],
            sigma_wer: [0.3, 3.0],
            sigma_class: [0.1, 1.0],
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("sweep budget must be at least 1".into()));
        }
        if self.beam.is_empty() || self.beam.contains(&0) {
            return Err(Error::Config("sweep beams must be a non-empty list of positive widths".into()));
        }
        let ranges = [
            ("step_size", self.step_size),
            ("sigma_scale", self.sigma_scale),
            ("sigma_wer", self.sigma_wer),
            ("sigma_class", self.sigma_class),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::Config(format!("sweep range {name} must satisfy 0 < low <= high")));
            }
        }
        let [lo, hi] = self.lambda;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config("sweep range lambda must satisfy 0 <= low <= high".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Overrides the seed of every training stage and of the attacks.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub seq2seq: Seq2SeqConfig,
    pub surrogate: SurrogateConfig,
    pub deep_lev: DeepLevConfig,
    pub lm: LmConfig,
    pub target: TargetConfig,
    pub attack: AttackSpec,
    pub metrics: MetricOptions,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetSpec::default(),
            seq2seq: Seq2SeqConfig::default(),
            surrogate: SurrogateConfig::default(),
            deep_lev: DeepLevConfig::default(),
            lm: LmConfig::default(),
            target: TargetConfig::default(),
            attack: AttackSpec::default(),
            metrics: MetricOptions::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Splits `a.b.c=value`. The value is read as a TOML literal when it
/// parses as one, as a bare string otherwise.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key=value` overrides, and propagates the
    /// top-level seed.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg.seeded())
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at(path))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The config as stored in a run directory. `output_dir` is left out so
    /// the directory stays relocatable and identical runs match byte for byte.
    pub fn to_run_toml(&self) -> Result<String> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        table.remove("output_dir");
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }

    fn seeded(mut self) -> Self {
        let s = self.seed;
        self.seq2seq.seed = s;
        self.surrogate.seed = s;
        self.deep_lev.seed = s;
        self.lm.seed = s;
        self.target.seed = s;
        self
    }

    /// Identifies the trained artifacts: dataset, model sections and seed.
    pub fn training_hash(&self) -> String {
        let v = serde_json::json!({
            "seed": self.seed,
            "dataset": self.dataset,
            "seq2seq": self.seq2seq,
            "surrogate": self.surrogate,
            "deep_lev": self.deep_lev,
            "lm": self.lm,
            "target": self.target,
        });
        sha256_hex(v.to_string().as_bytes())
    }

    /// Identifies the whole merged configuration except where it is written.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        sha256_hex(v.to_string().as_bytes())
    }

    /// `output_dir`, under the output root when relative and the root is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
