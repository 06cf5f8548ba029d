//! Experiment configuration files.
//!
//! The format is TOML: flat `key = value` pairs under section headers.
//! Relative paths are resolved against the directory holding the config
//! file. SNR values are written in dB and converted to linear scale here,
//! once; everything downstream sees linear SNR.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::arq::ArqPolicy;
use crate::channel::db_to_linear;
use crate::dataio::{DeviceDistribution, SplitSpec};
use crate::error::{Error, Result};
use crate::federated::{Aggregation, ImportanceMetric};
use crate::scheduling::SchedulingPolicy;
use crate::svm::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ArqBinary,
    ArqMulticlass,
    Scheduling,
    Federated,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ArqBinary => "arq_binary",
            Mode::ArqMulticlass => "arq_multiclass",
            Mode::Scheduling => "scheduling",
            Mode::Federated => "federated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "arq_binary" => Ok(Mode::ArqBinary),
            "arq_multiclass" => Ok(Mode::ArqMulticlass),
            "scheduling" => Ok(Mode::Scheduling),
            "federated" => Ok(Mode::Federated),
            other => Err(Error::Config(format!(
                "mode: unknown mode `{other}` (expected arq_binary, arq_multiclass, scheduling or federated)"
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    mode: Mode,
    #[serde(default)]
    seeds: Vec<u64>,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
    data: DataSection,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    svm: SvmSection,
    arq: Option<ArqSection>,
    scheduling: Option<SchedulingSection>,
    federated: Option<FederatedSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    train_images: PathBuf,
    train_labels: PathBuf,
    classes: Vec<i32>,
    #[serde(default = "default_seed_size")]
    seed_size: usize,
    buffer_size: usize,
    devices: usize,
    #[serde(default)]
    reserve_per_device: usize,
    test_size: usize,
    #[serde(default)]
    distribution: DeviceDistribution,
}

fn default_seed_size() -> usize {
    50
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    #[serde(default = "default_transmit_snr_db")]
    transmit_snr_db: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            transmit_snr_db: default_transmit_snr_db(),
        }
    }
}

fn default_transmit_snr_db() -> f64 {
    15.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SvmSection {
    #[serde(default = "default_c")]
    c: f64,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_passes")]
    max_passes: usize,
    #[serde(default = "default_bias_scale")]
    bias_scale: f64,
}

impl Default for SvmSection {
    fn default() -> Self {
        Self {
            c: default_c(),
            tol: default_tol(),
            max_passes: default_max_passes(),
            bias_scale: default_bias_scale(),
        }
    }
}

fn default_c() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    0.1
}
fn default_max_passes() -> usize {
    1000
}
fn default_bias_scale() -> f64 {
    10.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArqSection {
    #[serde(default = "all_arq_policies")]
    policies: Vec<ArqPolicy>,
    theta0: Option<f64>,
    alignment_probability: Option<f64>,
    theta_snr_db: f64,
    budget: usize,
    #[serde(default = "default_max_retx")]
    max_retx_per_sample: usize,
    #[serde(default = "default_arq_checkpoint")]
    checkpoint_every: usize,
    #[serde(default = "default_bins")]
    histogram_bins: usize,
    grid_step: Option<usize>,
}

fn all_arq_policies() -> Vec<ArqPolicy> {
    ArqPolicy::ALL.to_vec()
}
fn default_max_retx() -> usize {
    64
}
fn default_arq_checkpoint() -> usize {
    25
}
fn default_bins() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchedulingSection {
    #[serde(default = "all_scheduling_policies")]
    policies: Vec<SchedulingPolicy>,
    #[serde(default = "default_blocks")]
    blocks: usize,
    #[serde(default = "one")]
    snr_term_scale: f64,
    #[serde(default = "one_usize")]
    checkpoint_every: usize,
}

fn all_scheduling_policies() -> Vec<SchedulingPolicy> {
    SchedulingPolicy::ALL.to_vec()
}
fn default_blocks() -> usize {
    100
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FederatedSection {
    #[serde(default = "all_metrics")]
    metrics: Vec<ImportanceMetric>,
    scheduled: usize,
    rounds: usize,
    learning_rate: f64,
    #[serde(default)]
    l2: f64,
    aggregation: Option<Aggregation>,
    upload_snr_db: Option<f64>,
}

fn all_metrics() -> Vec<ImportanceMetric> {
    vec![ImportanceMetric::GradientNorm, ImportanceMetric::Mai]
}

/// How `theta0` is obtained for the importance-aware rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta0 {
    Fixed(f64),
    /// Calibrated per replicate to this data-alignment probability.
    Alignment(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArqSettings {
    pub policies: Vec<ArqPolicy>,
    pub theta0: Theta0,
    pub theta_snr: f64,
    pub budget: usize,
    pub max_retx_per_sample: usize,
    pub checkpoint_every: usize,
    pub histogram_bins: usize,
    pub grid_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingSettings {
    pub policies: Vec<SchedulingPolicy>,
    pub blocks: usize,
    pub snr_term_scale: f64,
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedSettings {
    pub metrics: Vec<ImportanceMetric>,
    pub scheduled: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub aggregation: Option<Aggregation>,
    pub upload_snr: Option<f64>,
}

/// Validated experiment description. SNRs are linear.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub classes: Vec<i32>,
    pub split: SplitSpec,
    pub transmit_snr: f64,
    pub svm: TrainConfig<f64>,
    pub arq: Option<ArqSettings>,
    pub scheduling: Option<SchedulingSettings>,
    pub federated: Option<FederatedSettings>,
}

fn cfg_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        Self::resolve(file, base)
    }

    fn resolve(file: ConfigFile, base: &Path) -> Result<Self> {
        let data = file.data;
        let split = SplitSpec {
            seed_size: data.seed_size,
            buffer_size: data.buffer_size,
            devices: data.devices,
            reserve_per_device: data.reserve_per_device,
            test_size: data.test_size,
            distribution: data.distribution,
        };
        let svm = TrainConfig {
            c: file.svm.c,
            tol: file.svm.tol,
            max_passes: file.svm.max_passes,
            bias_scale: file.svm.bias_scale,
        };
        svm.validate().map_err(|e| cfg_err("svm", e))?;

        let arq = file
            .arq
            .map(|a| -> Result<ArqSettings> {
                let theta0 = match (a.theta0, a.alignment_probability) {
                    (Some(t), None) => Theta0::Fixed(t),
                    (None, Some(p)) => Theta0::Alignment(p),
                    _ => {
                        return Err(cfg_err(
                            "arq.theta0",
                            "set exactly one of `theta0` or `alignment_probability`",
                        ))
                    }
                };
                Ok(ArqSettings {
                    policies: a.policies,
                    theta0,
                    theta_snr: db_to_linear(a.theta_snr_db),
                    budget: a.budget,
                    max_retx_per_sample: a.max_retx_per_sample,
                    checkpoint_every: a.checkpoint_every,
                    histogram_bins: a.histogram_bins,
                    grid_step: a.grid_step.unwrap_or((a.budget / 40).max(1)),
                })
            })
            .transpose()?;

        let cfg = Self {
            mode: file.mode,
            seeds: if file.seeds.is_empty() { vec![1] } else { file.seeds },
            out_dir: file.out_dir.map(|p| base.join(p)),
            threads: file.threads,
            train_images: base.join(data.train_images),
            train_labels: base.join(data.train_labels),
            classes: data.classes,
            split,
            transmit_snr: db_to_linear(file.channel.transmit_snr_db),
            svm,
            arq,
            scheduling: file.scheduling.map(|s| SchedulingSettings {
                policies: s.policies,
                blocks: s.blocks,
                snr_term_scale: s.snr_term_scale,
                checkpoint_every: s.checkpoint_every,
            }),
            federated: file.federated.map(|f| FederatedSettings {
                metrics: f.metrics,
                scheduled: f.scheduled,
                rounds: f.rounds,
                learning_rate: f.learning_rate,
                l2: f.l2,
                aggregation: f.aggregation,
                upload_snr: f.upload_snr_db.map(db_to_linear),
            }),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks internal consistency. File existence is checked separately by
    /// [`ExperimentConfig::check_files`].
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(cfg_err("seeds", "need at least one replicate seed"));
        }
        if self.threads == Some(0) {
            return Err(cfg_err("threads", "must be at least 1"));
        }
        let want_classes = match self.mode {
            Mode::ArqMulticlass => None,
            _ => Some(2),
        };
        match want_classes {
            Some(n) if self.classes.len() != n => {
                return Err(cfg_err(
                    "data.classes",
                    format!("mode {} needs exactly {n} classes", self.mode.name()),
                ))
            }
            None if self.classes.len() < 3 => {
                return Err(cfg_err("data.classes", "arq_multiclass needs at least 3 classes"))
            }
            _ => {}
        }
        if self.split.devices == 0 {
            return Err(cfg_err("data.devices", "must be at least 1"));
        }
        if self.split.buffer_size == 0 {
            return Err(cfg_err("data.buffer_size", "must be at least 1"));
        }
        if self.split.test_size == 0 {
            return Err(cfg_err("data.test_size", "must be at least 1"));
        }
        if self.mode != Mode::Federated && self.split.seed_size < self.classes.len() {
            return Err(cfg_err("data.seed_size", "must cover every class"));
        }
        if !(self.transmit_snr > 0.0) || !self.transmit_snr.is_finite() {
            return Err(cfg_err("channel.transmit_snr_db", "must be finite"));
        }
        match self.mode {
            Mode::ArqBinary | Mode::ArqMulticlass => {
                let a = self.arq.as_ref().ok_or_else(|| cfg_err("arq", "section required for this mode"))?;
                if a.policies.is_empty() {
                    return Err(cfg_err("arq.policies", "must not be empty"));
                }
                match a.theta0 {
                    Theta0::Fixed(t) if !(t >= 0.0) => {
                        return Err(cfg_err("arq.theta0", "must be nonnegative"))
                    }
                    Theta0::Alignment(p) if !(p > 0.5 && p < 1.0) => {
                        return Err(cfg_err("arq.alignment_probability", "must be in (0.5, 1)"))
                    }
                    _ => {}
                }
                if a.budget == 0 {
                    return Err(cfg_err("arq.budget", "must be at least 1"));
                }
                if a.max_retx_per_sample == 0 {
                    return Err(cfg_err("arq.max_retx_per_sample", "must be at least 1"));
                }
                if a.checkpoint_every == 0 {
                    return Err(cfg_err("arq.checkpoint_every", "must be at least 1"));
                }
                if a.histogram_bins == 0 {
                    return Err(cfg_err("arq.histogram_bins", "must be at least 1"));
                }
            }
            Mode::Scheduling => {
                let s = self
                    .scheduling
                    .as_ref()
                    .ok_or_else(|| cfg_err("scheduling", "section required for this mode"))?;
                if s.policies.is_empty() {
                    return Err(cfg_err("scheduling.policies", "must not be empty"));
                }
                if s.checkpoint_every == 0 {
                    return Err(cfg_err("scheduling.checkpoint_every", "must be at least 1"));
                }
                if !(s.snr_term_scale >= 0.0) {
                    return Err(cfg_err("scheduling.snr_term_scale", "must be nonnegative"));
                }
            }
            Mode::Federated => {
                let f = self
                    .federated
                    .as_ref()
                    .ok_or_else(|| cfg_err("federated", "section required for this mode"))?;
                if f.metrics.is_empty() {
                    return Err(cfg_err("federated.metrics", "must not be empty"));
                }
                if f.scheduled == 0 || f.scheduled > self.split.devices {
                    return Err(cfg_err(
                        "federated.scheduled",
                        format!("must be in 1..={}", self.split.devices),
                    ));
                }
                if !(f.learning_rate > 0.0) {
                    return Err(cfg_err("federated.learning_rate", "must be positive"));
                }
                if !(f.l2 >= 0.0) {
                    return Err(cfg_err("federated.l2", "must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    pub fn check_files(&self) -> Result<()> {
        for (field, path) in [
            ("data.train_images", &self.train_images),
            ("data.train_labels", &self.train_labels),
        ] {
            if !path.is_file() {
                return Err(cfg_err(field, format!("file not found: {}", path.display())));
            }
        }
        Ok(())
    }

    /// Policy names in the order they are run.
    pub fn policy_names(&self) -> Vec<&'static str> {
        match self.mode {
            Mode::ArqBinary | Mode::ArqMulticlass => self
                .arq
                .as_ref()
                .map(|a| a.policies.iter().map(|p| p.name()).collect())
                .unwrap_or_default(),
            Mode::Scheduling => self
                .scheduling
                .as_ref()
                .map(|s| s.policies.iter().map(|p| p.name()).collect())
                .unwrap_or_default(),
            Mode::Federated => self
                .federated
                .as_ref()
                .map(|f| f.metrics.iter().map(|m| m.name()).collect())
                .unwrap_or_default(),
        }
    }
}
