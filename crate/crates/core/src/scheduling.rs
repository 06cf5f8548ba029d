//! Multiuser device selection by data-importance indicator (DII).
//!
//! Each sample block: the server broadcasts the current model, every device
//! draws its fade and reports `I_k = -1/SNR_k + max_n U(x_{k,n})`, one device
//! is scheduled and uploads its most uncertain buffered sample once, the
//! server labels it and refits. The three policies differ only in which
//! device they schedule.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::{draw_fade, transmit_once, NoiseModel};
use crate::dataio::{DataSample, DeviceBuffer};
use crate::error::{Error, Result};
use crate::learner::{BinaryLearner, Learner};
use crate::rng::RngStreams;
use crate::svm::BinarySvm;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiiRecord<T> {
    pub device_id: usize,
    pub snr: T,
    pub max_uncertainty: T,
    pub dii: T,
    /// Buffer index of the most uncertain sample.
    pub best_index: usize,
}

/// DII of one device. `snr_term_scale` multiplies the `1/SNR` term (1 gives
/// the plain indicator). A zero SNR yields `-inf`.
pub fn compute_dii<T: Scalar>(
    buffer: &DeviceBuffer<T>,
    model: &BinarySvm<T>,
    snr: T,
    snr_term_scale: T,
) -> Result<DiiRecord<T>> {
    if buffer.is_empty() {
        return Err(Error::Empty("device buffer"));
    }
    let mut best_index = 0;
    let mut max_uncertainty = T::neg_infinity();
    for (n, s) in buffer.samples.iter().enumerate() {
        let u = model.uncertainty_distance(&s.features)?.value;
        if u > max_uncertainty {
            max_uncertainty = u;
            best_index = n;
        }
    }
    let dii = if snr > T::zero() {
        -snr_term_scale / snr + max_uncertainty
    } else {
        T::neg_infinity()
    };
    Ok(DiiRecord {
        device_id: buffer.device_id,
        snr,
        max_uncertainty,
        dii,
        best_index,
    })
}

/// Position of the largest value; ties go to the earliest position.
fn argmax<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Index (into `records`) of the device with the largest DII.
pub fn select_scheme1<T: Scalar>(records: &[DiiRecord<T>]) -> Result<usize> {
    argmax(records.iter().map(|r| r.dii)).ok_or(Error::Empty("dii records"))
}

pub fn select_channel_aware<T: Scalar>(snrs: &[T]) -> Result<usize> {
    argmax(snrs.iter().copied()).ok_or(Error::Empty("snrs"))
}

pub fn select_data_aware<T: Scalar>(max_uncertainties: &[T]) -> Result<usize> {
    argmax(max_uncertainties.iter().copied()).ok_or(Error::Empty("uncertainties"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingPolicy {
    Scheme1,
    ChannelAware,
    DataAware,
}

impl SchedulingPolicy {
    pub const ALL: [SchedulingPolicy; 3] = [
        SchedulingPolicy::Scheme1,
        SchedulingPolicy::ChannelAware,
        SchedulingPolicy::DataAware,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulingPolicy::Scheme1 => "scheme1",
            SchedulingPolicy::ChannelAware => "channel_aware",
            SchedulingPolicy::DataAware => "data_aware",
        }
    }

    pub fn select<T: Scalar>(self, records: &[DiiRecord<T>]) -> Result<usize> {
        match self {
            SchedulingPolicy::Scheme1 => select_scheme1(records),
            SchedulingPolicy::ChannelAware => {
                select_channel_aware(&records.iter().map(|r| r.snr).collect::<Vec<_>>())
            }
            SchedulingPolicy::DataAware => select_data_aware(
                &records.iter().map(|r| r.max_uncertainty).collect::<Vec<_>>(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulingConfig<T> {
    /// Average transmit SNR (linear).
    pub transmit_snr: T,
    /// Number of sample blocks `T`.
    pub blocks: usize,
    pub snr_term_scale: T,
    pub checkpoint_every: usize,
}

impl<T: Scalar> SchedulingConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.transmit_snr > T::zero()) {
            return Err(Error::invalid("transmit_snr", "must be positive"));
        }
        if !(self.snr_term_scale >= T::zero()) {
            return Err(Error::invalid("snr_term_scale", "must be nonnegative"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub block: usize,
    pub selected_device: usize,
    pub origin: usize,
    pub snr: f64,
    pub dii: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingTrace {
    pub policy: SchedulingPolicy,
    pub initial_accuracy: f64,
    pub records: Vec<BlockRecord>,
    pub early_stop: Option<String>,
}

pub const SCHEDULING_TRACE_HEADER: &str = "block,selected_device,policy,snr,dii,test_accuracy";

impl SchedulingTrace {
    pub fn checkpoints(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.test_accuracy.map(|a| (r.block, a)))
            .collect()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.checkpoints()
            .last()
            .map(|&(_, a)| a)
            .unwrap_or(self.initial_accuracy)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{SCHEDULING_TRACE_HEADER}")?;
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{},",
                r.block,
                r.selected_device,
                self.policy.name(),
                r.snr,
                r.dii
            )?;
            match r.test_accuracy {
                Some(a) => writeln!(out, "{a}")?,
                None => writeln!(out)?,
            }
        }
        Ok(())
    }
}

/// Runs `cfg.blocks` sample blocks of single-shot uploads.
pub fn run_scheduling_acquisition<T: Scalar>(
    policy: SchedulingPolicy,
    mut devices: Vec<DeviceBuffer<T>>,
    learner: &mut BinaryLearner<T>,
    noise: &NoiseModel<T>,
    cfg: &SchedulingConfig<T>,
    test: &[DataSample<T>],
    streams: &RngStreams,
) -> Result<SchedulingTrace> {
    cfg.validate()?;
    let mut channels = streams.device_channels(devices.len());
    let mut trace = SchedulingTrace {
        policy,
        initial_accuracy: learner.accuracy(test)?,
        records: Vec::with_capacity(cfg.blocks),
        early_stop: None,
    };

    for block in 1..=cfg.blocks {
        let mut records = Vec::with_capacity(devices.len());
        let mut draws = Vec::with_capacity(devices.len());
        for (k, dev) in devices.iter().enumerate() {
            if dev.is_empty() {
                continue;
            }
            let draw = draw_fade(cfg.transmit_snr, &mut channels[k]);
            records.push(compute_dii(dev, learner.model(), draw.receive_snr, cfg.snr_term_scale)?);
            draws.push((k, draw));
        }
        if records.is_empty() {
            trace.early_stop = Some("device buffers exhausted".into());
            break;
        }
        let chosen = policy.select(&records)?;
        let rec = records[chosen];
        let (k, draw) = draws[chosen];
        let sample = devices[k].take(rec.best_index);
        let received = transmit_once(&sample.features, &draw, noise, &mut channels[k]);
        learner.absorb(&received, sample.label)?;

        let evaluate = block % cfg.checkpoint_every == 0 || block == cfg.blocks;
        trace.records.push(BlockRecord {
            block,
            selected_device: rec.device_id,
            origin: sample.origin,
            snr: rec.snr.as_f64(),
            dii: rec.dii.as_f64(),
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

/// `E|d + N(0, sigma^2)|`, the folded-Gaussian mean.
pub fn expected_distance_oracle(distance: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return distance.abs();
    }
    let d = distance;
    let phi = Normal::new(0.0, 1.0).expect("unit normal");
    d * (1.0 - 2.0 * phi.cdf(-d / sigma))
        + sigma * (2.0 / std::f64::consts::PI).sqrt() * (-d * d / (2.0 * sigma * sigma)).exp()
}
