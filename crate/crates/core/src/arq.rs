//! Retransmission control for wireless data acquisition.
//!
//! Three policies decide, after each received copy of a sample, whether to
//! request another copy (combined by MRC) or move on to a new sample:
//!
//! * importance-aware: the SNR target grows with the sample's uncertainty
//!   under the current model, capped at `theta_snr`. Binary models use a
//!   target linear in the distance-based uncertainty `theta0 * U`; the
//!   multiclass rule checks every component relevant to the predicted class
//!   against `theta0 / |s_l|^2`, i.e. quadratic in that component's
//!   uncertainty. The two exponents are kept as they are; see
//!   [`alignment_snr`] for where each comes from.
//! * channel-aware: retransmit until the effective SNR exceeds `theta_snr`.
//! * no retransmission: every sample is sent exactly once.
//!
//! A tie (effective SNR exactly at the threshold) retransmits.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::{draw_fade, transmit_once, MrcState, NoiseModel};
use crate::dataio::{DataSample, DeviceBuffer};
use crate::error::{Error, Result};
use crate::learner::{BinaryLearner, Learner, MulticlassLearner};
use crate::rng::{Purpose, RngStreams};
use crate::svm::{CodingMatrix, UncertaintyScore};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArqPolicyConfig<T> {
    pub theta0: T,
    /// Maximum SNR target (linear).
    pub theta_snr: T,
    /// Average transmit SNR (linear).
    pub transmit_snr: T,
    /// Uplink channel uses available for the whole acquisition.
    pub budget: usize,
    pub max_retx_per_sample: usize,
    /// Test accuracy is evaluated every this many accepted samples.
    pub checkpoint_every: usize,
}

impl<T: Scalar> ArqPolicyConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta0 >= T::zero()) {
            return Err(Error::invalid("theta0", "must be nonnegative"));
        }
        if !(self.theta_snr > T::zero()) {
            return Err(Error::invalid("theta_snr", "must be positive"));
        }
        if !(self.transmit_snr > T::zero()) {
            return Err(Error::invalid("transmit_snr", "must be positive"));
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be at least 1"));
        }
        if self.max_retx_per_sample == 0 {
            return Err(Error::invalid("max_retx_per_sample", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArqPolicy {
    #[serde(rename = "importance")]
    ImportanceAware,
    ChannelAware,
    #[serde(rename = "no_retx")]
    NoRetransmission,
}

impl ArqPolicy {
    pub const ALL: [ArqPolicy; 3] = [
        ArqPolicy::ImportanceAware,
        ArqPolicy::ChannelAware,
        ArqPolicy::NoRetransmission,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArqPolicy::ImportanceAware => "importance",
            ArqPolicy::ChannelAware => "channel_aware",
            ArqPolicy::NoRetransmission => "no_retx",
        }
    }
}

/// Binary rule: retransmit while `snr <= min(theta0 * uncertainty, theta_snr)`.
pub fn iaw_should_retransmit<T: Scalar>(
    effective_snr: T,
    uncertainty: T,
    cfg: &ArqPolicyConfig<T>,
) -> bool {
    effective_snr <= (cfg.theta0 * uncertainty).min(cfg.theta_snr)
}

/// Multiclass rule: retransmit while any component `l` with `M[c, l] != 0`
/// has `snr <= min(theta0 / |s_l|^2, theta_snr)`.
pub fn iaw_multiclass_should_retransmit<T: Scalar>(
    effective_snr: T,
    scores: &[T],
    coding: &CodingMatrix,
    predicted: usize,
    cfg: &ArqPolicyConfig<T>,
) -> bool {
    scores.iter().enumerate().any(|(l, &s)| {
        if coding.entry(predicted, l) == 0 {
            return false;
        }
        let sq = s * s;
        let target = if sq > T::zero() {
            (cfg.theta0 / sq).min(cfg.theta_snr)
        } else {
            cfg.theta_snr
        };
        effective_snr <= target
    })
}

pub fn channel_aware_should_retransmit<T: Scalar>(effective_snr: T, cfg: &ArqPolicyConfig<T>) -> bool {
    effective_snr <= cfg.theta_snr
}

/// Receive SNR at which a sample at `distance` from the boundary stays on the
/// same side after Gaussian noise of per-dimension variance `P / snr` with
/// probability `p`: `snr = P * z_p^2 / distance^2`.
pub fn alignment_snr(p: f64, signal_power: f64, distance: f64) -> f64 {
    let z = standard_normal().inverse_cdf(p);
    signal_power * z * z / (distance * distance)
}

/// `theta0` for the multiclass rule so its per-component target equals
/// [`alignment_snr`] for alignment probability `p`.
pub fn calibrate_theta0_quadratic(p: f64, signal_power: f64) -> f64 {
    let z = standard_normal().inverse_cdf(p);
    signal_power * z * z
}

/// `theta0` for the binary (linear) rule, matched to [`alignment_snr`] at
/// `reference_uncertainty`.
pub fn calibrate_theta0_linear(p: f64, signal_power: f64, reference_uncertainty: f64) -> f64 {
    calibrate_theta0_quadratic(p, signal_power) * reference_uncertainty
}

/// Probability that a sample at `distance` keeps its side of the boundary at `snr`.
pub fn alignment_probability(distance: f64, signal_power: f64, snr: f64) -> f64 {
    let sigma = (signal_power / snr).sqrt();
    standard_normal().cdf(distance / sigma)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Models that can drive an importance-aware retransmission decision.
pub trait ArqLearner<T: Scalar>: Learner<T> {
    type Probe;

    /// Importance of a clean sample under the current (broadcast) model.
    fn probe(&self, x: &[T]) -> Result<Self::Probe>;

    /// Scalar uncertainty recorded in the trace.
    fn probe_uncertainty(&self, probe: &Self::Probe) -> T;

    fn importance_retransmit(&self, probe: &Self::Probe, effective_snr: T, cfg: &ArqPolicyConfig<T>)
        -> bool;
}

impl<T: Scalar> ArqLearner<T> for BinaryLearner<T> {
    type Probe = UncertaintyScore<T>;

    fn probe(&self, x: &[T]) -> Result<Self::Probe> {
        self.uncertainty(x)
    }

    fn probe_uncertainty(&self, probe: &Self::Probe) -> T {
        probe.value
    }

    fn importance_retransmit(&self, probe: &Self::Probe, snr: T, cfg: &ArqPolicyConfig<T>) -> bool {
        iaw_should_retransmit(snr, probe.value, cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassProbe<T> {
    pub scores: Vec<T>,
    pub predicted: usize,
}

impl<T: Scalar> ArqLearner<T> for MulticlassLearner<T> {
    type Probe = MulticlassProbe<T>;

    fn probe(&self, x: &[T]) -> Result<Self::Probe> {
        let scores = self.model().component_scores(x)?;
        let predicted = crate::svm::hamming_decode(self.model().coding(), &scores);
        Ok(MulticlassProbe { scores, predicted })
    }

    /// Largest distance-based uncertainty among the components the decision checks.
    fn probe_uncertainty(&self, probe: &Self::Probe) -> T {
        let coding = self.model().coding();
        probe
            .scores
            .iter()
            .enumerate()
            .filter(|(l, _)| coding.entry(probe.predicted, *l) != 0)
            .map(|(_, &s)| UncertaintyScore::from_distance(s.abs()).value)
            .fold(T::zero(), T::max)
    }

    fn importance_retransmit(&self, probe: &Self::Probe, snr: T, cfg: &ArqPolicyConfig<T>) -> bool {
        iaw_multiclass_should_retransmit(
            snr,
            &probe.scores,
            self.model().coding(),
            probe.predicted,
            cfg,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// 1-based index of the acquired sample.
    pub block_index: usize,
    pub device_id: usize,
    pub origin: usize,
    pub label: i32,
    pub uncertainty: f64,
    pub transmissions: usize,
    pub effective_snr: f64,
    pub budget_spent: usize,
    pub accepted: bool,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionTrace {
    pub policy: ArqPolicy,
    pub budget: usize,
    pub budget_spent: usize,
    pub initial_accuracy: f64,
    pub records: Vec<SampleRecord>,
    pub early_stop: Option<String>,
}

pub const ARQ_TRACE_HEADER: &str =
    "block_index,device_id,uncertainty,n_transmissions,effective_snr,budget_spent,test_accuracy";

impl AcquisitionTrace {
    pub fn transmissions(&self) -> usize {
        self.records.iter().map(|r| r.transmissions).sum()
    }

    pub fn accepted(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }

    /// `(budget_spent, accuracy)` at every evaluation point.
    pub fn checkpoints(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.test_accuracy.map(|a| (r.budget_spent, a)))
            .collect()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.checkpoints()
            .last()
            .map(|&(_, a)| a)
            .unwrap_or(self.initial_accuracy)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{ARQ_TRACE_HEADER}")?;
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{},{},",
                r.block_index, r.device_id, r.uncertainty, r.transmissions, r.effective_snr, r.budget_spent
            )?;
            match r.test_accuracy {
                Some(a) => writeln!(out, "{a}")?,
                None => writeln!(out)?,
            }
        }
        Ok(())
    }
}

/// Acquires samples round-robin from `devices` under `policy` until the
/// channel-use budget is spent or every buffer is empty.
///
/// Each step takes a random sample from the current device's buffer, scores
/// it with the current model, sends it (repeating per the policy, combining
/// copies by MRC), adds the combined vector with its noiseless label to the
/// training set and refits. If the budget runs out mid-sample, the copies
/// received so far are combined and used.
#[allow(clippy::too_many_arguments)]
pub fn run_arq_acquisition<T: Scalar, L: ArqLearner<T>>(
    policy: ArqPolicy,
    mut devices: Vec<DeviceBuffer<T>>,
    learner: &mut L,
    noise: &NoiseModel<T>,
    cfg: &ArqPolicyConfig<T>,
    test: &[DataSample<T>],
    streams: &RngStreams,
) -> Result<AcquisitionTrace> {
    cfg.validate()?;
    if devices.is_empty() {
        return Err(Error::Empty("devices"));
    }
    let mut selection = streams.stream(Purpose::Selection, 0);
    let mut channels = streams.device_channels(devices.len());

    let mut trace = AcquisitionTrace {
        policy,
        budget: cfg.budget,
        budget_spent: 0,
        initial_accuracy: learner.accuracy(test)?,
        records: Vec::new(),
        early_stop: None,
    };
    let mut cursor = 0;
    let mut accepted = 0usize;

    while trace.budget_spent < cfg.budget {
        let n = devices.len();
        let Some(k) = (0..n).map(|j| (cursor + j) % n).find(|&k| !devices[k].is_empty()) else {
            trace.early_stop = Some("device buffers exhausted".into());
            break;
        };
        cursor = (k + 1) % n;

        let idx = selection.random_range(0..devices[k].len());
        let sample = devices[k].take(idx);
        let probe = learner.probe(&sample.features)?;
        let rng = &mut channels[k];

        let mut mrc = MrcState::new(sample.features.len());
        loop {
            let draw = draw_fade(cfg.transmit_snr, rng);
            let obs = transmit_once(&sample.features, &draw, noise, rng);
            mrc.combine(&obs, draw.receive_snr)?;
            trace.budget_spent += 1;
            let snr = mrc.effective_snr();
            let again = match policy {
                ArqPolicy::ImportanceAware => learner.importance_retransmit(&probe, snr, cfg),
                ArqPolicy::ChannelAware => channel_aware_should_retransmit(snr, cfg),
                ArqPolicy::NoRetransmission => false,
            };
            if !again
                || mrc.observations() >= cfg.max_retx_per_sample
                || trace.budget_spent >= cfg.budget
            {
                break;
            }
        }

        let combined = mrc.combined();
        if let Some(x) = &combined {
            learner.absorb(x, sample.label)?;
            accepted += 1;
        }
        let last = trace.budget_spent >= cfg.budget;
        let evaluate = combined.is_some() && (accepted % cfg.checkpoint_every == 0 || last);
        trace.records.push(SampleRecord {
            block_index: trace.records.len() + 1,
            device_id: devices[k].device_id,
            origin: sample.origin,
            label: sample.label,
            uncertainty: learner.probe_uncertainty(&probe).as_f64(),
            transmissions: mrc.observations(),
            effective_snr: mrc.effective_snr().as_f64(),
            budget_spent: trace.budget_spent,
            accepted: combined.is_some(),
            test_accuracy: if evaluate { Some(learner.accuracy(test)?) } else { None },
        });
    }
    if let Some(r) = trace.records.last_mut() {
        if r.test_accuracy.is_none() {
            r.test_accuracy = Some(learner.accuracy(test)?);
        }
    }
    Ok(trace)
}
