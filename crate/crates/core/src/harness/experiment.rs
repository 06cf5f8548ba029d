//! Replicated experiment runs and their on-disk outputs.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Mode, Theta0};
use super::metrics::{
    build_retx_histogram, parse_trace, summarize, write_histogram, write_summary, HistogramBin,
    SummaryRow,
};
use crate::arq::{
    calibrate_theta0_linear, calibrate_theta0_quadratic, run_arq_acquisition, AcquisitionTrace,
    ArqLearner, ArqPolicyConfig,
};
use crate::channel::NoiseModel;
use crate::dataio::{build_binary_subset, build_class_subset, partition, Dataset, Partition};
use crate::error::{Error, Result};
use crate::federated::{run_federated, FederatedConfig, FederatedTrace, LogisticShard};
use crate::learner::{BinaryLearner, MulticlassLearner};
use crate::rng::{Purpose, RngStreams};
use crate::scheduling::{run_scheduling_acquisition, SchedulingConfig, SchedulingTrace};

#[derive(Debug, Clone, PartialEq)]
pub enum RunTrace {
    Arq(AcquisitionTrace),
    Scheduling(SchedulingTrace),
    Federated(FederatedTrace<f64>),
}

impl RunTrace {
    pub fn to_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let res = match self {
            RunTrace::Arq(t) => t.write_csv(&mut buf),
            RunTrace::Scheduling(t) => t.write_csv(&mut buf),
            RunTrace::Federated(t) => t.write_csv(&mut buf),
        };
        res.expect("writing to a Vec cannot fail");
        buf
    }

    /// Accuracy after the last acquired sample, block or round.
    pub fn final_accuracy(&self) -> Option<f64> {
        match self {
            RunTrace::Arq(t) => Some(t.final_accuracy()),
            RunTrace::Scheduling(t) => Some(t.final_accuracy()),
            RunTrace::Federated(t) => t.rounds.last().and_then(|r| r.test_accuracy),
        }
    }
}

/// One `(seed, policy)` replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub policy: &'static str,
    pub seed: u64,
    pub trace: RunTrace,
    pub csv: Vec<u8>,
}

impl RunResult {
    pub fn file_name(&self) -> String {
        format!("{}_seed{}.csv", self.policy, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub mode: Mode,
    /// Ordered by seed, then by policy in config order.
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    /// Pooled over seeds; ARQ modes only.
    pub histogram: Vec<(String, Vec<HistogramBin>)>,
}

impl ExperimentOutput {
    pub fn runs_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a RunResult> + 'a {
        self.runs.iter().filter(move |r| r.policy == policy)
    }

    /// Per-seed final accuracies of `policy`, in seed order.
    pub fn final_accuracies(&self, policy: &str) -> Vec<f64> {
        self.runs_for(policy)
            .filter_map(|r| r.trace.final_accuracy())
            .collect()
    }

    pub fn summary_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_summary(&self.summary, &mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn histogram_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_histogram(&self.histogram, &mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Writes `traces/*.csv`, `summary.csv` and, for ARQ modes, `histogram.csv`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let traces = out_dir.join("traces");
        fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
        for r in &self.runs {
            let path = traces.join(r.file_name());
            fs::write(&path, &r.csv).map_err(|e| Error::io(&path, e))?;
        }
        let path = out_dir.join("summary.csv");
        fs::write(&path, self.summary_csv()).map_err(|e| Error::io(&path, e))?;
        if matches!(self.mode, Mode::ArqBinary | Mode::ArqMulticlass) {
            let path = out_dir.join("histogram.csv");
            fs::write(&path, self.histogram_csv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Loads the labelled pool named by `cfg`: `+1`/`-1` labels for binary
/// modes, original digit labels for multiclass.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset<f64>> {
    let raw = Dataset::load(&cfg.train_images, &cfg.train_labels, &cfg.classes)?;
    prepare_dataset(cfg, &raw)
}

/// Restricts `raw` to the classes in `cfg`, relabelling for binary modes.
pub fn prepare_dataset(cfg: &ExperimentConfig, raw: &Dataset<f64>) -> Result<Dataset<f64>> {
    match cfg.mode {
        Mode::ArqMulticlass => build_class_subset(raw, &cfg.classes),
        _ => build_binary_subset(raw, cfg.classes[0], cfg.classes[1]),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    cfg.check_files()?;
    let data = load_dataset(cfg)?;
    run_on_dataset(cfg, &data)
}

/// Runs every `(seed, policy)` replicate on an already prepared pool.
pub fn run_on_dataset(cfg: &ExperimentConfig, data: &Dataset<f64>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let signal_power = data.mean_power();
    let noise = NoiseModel::new(signal_power)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("threads: {e}")))?;

    let per_seed: Vec<Vec<RunResult>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, data, &noise, seed))
            .collect::<Result<_>>()
    })?;
    let runs: Vec<RunResult> = per_seed.into_iter().flatten().collect();

    let grid_step = cfg.arq.as_ref().map_or(1, |a| a.grid_step);
    let summary = summarize_runs(&runs, grid_step)?;
    let histogram = match (&cfg.arq, cfg.mode) {
        (Some(a), Mode::ArqBinary | Mode::ArqMulticlass) => cfg
            .policy_names()
            .into_iter()
            .map(|policy| {
                let pooled: Vec<_> = runs
                    .iter()
                    .filter(|r| r.policy == policy)
                    .flat_map(|r| match &r.trace {
                        RunTrace::Arq(t) => t.records.clone(),
                        _ => Vec::new(),
                    })
                    .collect();
                (policy.to_string(), build_retx_histogram(&pooled, a.histogram_bins))
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(ExperimentOutput {
        mode: cfg.mode,
        runs,
        summary,
        histogram,
    })
}

/// Summary computed from the serialized traces, so it matches what
/// summarizing the written files gives.
fn summarize_runs(runs: &[RunResult], grid_step: usize) -> Result<Vec<SummaryRow>> {
    let parsed = runs
        .iter()
        .map(|r| {
            let text = std::str::from_utf8(&r.csv).expect("traces are ASCII");
            Ok((r.policy.to_string(), parse_trace(text)?))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(&parsed, grid_step)
}

fn run_seed(
    cfg: &ExperimentConfig,
    data: &Dataset<f64>,
    noise: &NoiseModel<f64>,
    seed: u64,
) -> Result<Vec<RunResult>> {
    let streams = RngStreams::new(seed);
    let part = partition(data, &cfg.split, &streams)?;
    let trainer_seed: u64 = streams.stream(Purpose::Trainer, 0).random();
    let wrap = |policy: &'static str, trace: RunTrace| RunResult {
        policy,
        seed,
        csv: trace.to_csv(),
        trace,
    };

    match cfg.mode {
        Mode::ArqBinary => {
            let learner = BinaryLearner::new(&part.seed, cfg.svm, trainer_seed)?;
            let a = cfg.arq.as_ref().expect("validated");
            let theta0 = match a.theta0 {
                Theta0::Fixed(t) => t,
                Theta0::Alignment(p) => {
                    let u = median_uncertainty(&learner, &part)?;
                    calibrate_theta0_linear(p, noise.signal_power(), u)
                }
            };
            run_arq_policies(cfg, &part, learner, theta0, noise, &streams, wrap)
        }
        Mode::ArqMulticlass => {
            let learner =
                MulticlassLearner::new(cfg.classes.clone(), &part.seed, cfg.svm, trainer_seed)?;
            let a = cfg.arq.as_ref().expect("validated");
            let theta0 = match a.theta0 {
                Theta0::Fixed(t) => t,
                Theta0::Alignment(p) => calibrate_theta0_quadratic(p, noise.signal_power()),
            };
            run_arq_policies(cfg, &part, learner, theta0, noise, &streams, wrap)
        }
        Mode::Scheduling => {
            let learner = BinaryLearner::new(&part.seed, cfg.svm, trainer_seed)?;
            let s = cfg.scheduling.as_ref().expect("validated");
            let sc = SchedulingConfig {
                transmit_snr: cfg.transmit_snr,
                blocks: s.blocks,
                snr_term_scale: s.snr_term_scale,
                checkpoint_every: s.checkpoint_every,
            };
            s.policies
                .iter()
                .map(|&policy| {
                    let mut l = learner.clone();
                    let t = run_scheduling_acquisition(
                        policy,
                        part.devices.clone(),
                        &mut l,
                        noise,
                        &sc,
                        &part.test,
                        &streams,
                    )?;
                    Ok(wrap(policy.name(), RunTrace::Scheduling(t)))
                })
                .collect()
        }
        Mode::Federated => {
            let f = cfg.federated.as_ref().expect("validated");
            let shards = part
                .devices
                .iter()
                .map(|d| LogisticShard::from_samples(&d.samples))
                .collect::<Result<Vec<_>>>()?;
            let test = LogisticShard::from_samples(&part.test)?;
            f.metrics
                .iter()
                .map(|&metric| {
                    let fc = FederatedConfig {
                        scheduled: f.scheduled,
                        rounds: f.rounds,
                        learning_rate: f.learning_rate,
                        l2: f.l2,
                        metric,
                        aggregation: f.aggregation,
                        upload_snr: f.upload_snr,
                    };
                    let (_, t) = run_federated(&fc, &shards, Some(&test), &streams)?;
                    Ok(wrap(metric.name(), RunTrace::Federated(t)))
                })
                .collect()
        }
    }
}

fn run_arq_policies<L, F>(
    cfg: &ExperimentConfig,
    part: &Partition<f64>,
    learner: L,
    theta0: f64,
    noise: &NoiseModel<f64>,
    streams: &RngStreams,
    wrap: F,
) -> Result<Vec<RunResult>>
where
    L: ArqLearner<f64> + Clone,
    F: Fn(&'static str, RunTrace) -> RunResult,
{
    let a = cfg.arq.as_ref().expect("validated");
    let pc = ArqPolicyConfig {
        theta0,
        theta_snr: a.theta_snr,
        transmit_snr: cfg.transmit_snr,
        budget: a.budget,
        max_retx_per_sample: a.max_retx_per_sample,
        checkpoint_every: a.checkpoint_every,
    };
    a.policies
        .iter()
        .map(|&policy| {
            let mut l = learner.clone();
            let t = run_arq_acquisition(
                policy,
                part.devices.clone(),
                &mut l,
                noise,
                &pc,
                &part.test,
                streams,
            )?;
            Ok(wrap(policy.name(), RunTrace::Arq(t)))
        })
        .collect()
}

/// Median uncertainty of the device-held samples under the seed model.
fn median_uncertainty(learner: &BinaryLearner<f64>, part: &Partition<f64>) -> Result<f64> {
    let mut u = part
        .devices
        .iter()
        .flat_map(|d| d.samples.iter())
        .map(|s| learner.uncertainty(&s.features).map(|v| v.value))
        .collect::<Result<Vec<_>>>()?;
    if u.is_empty() {
        return Err(Error::Empty("device buffers"));
    }
    u.sort_by(f64::total_cmp);
    let n = u.len();
    Ok(if n % 2 == 1 {
        u[n / 2]
    } else {
        0.5 * (u[n / 2 - 1] + u[n / 2])
    })
}
