//! Federated rounds with importance-aware client selection.
//!
//! Two indicators rank devices each round:
//!
//! * gradient norm: every device computes its local gradient at the broadcast
//!   model and reports `|g_k|`; the top `m` upload.
//! * model age (MAI): every device reports `|w_hat_k - w|`, the distance
//!   between the model it last uploaded and the broadcast model. Only the
//!   top `m` then compute an update, so the round costs `m` gradient
//!   evaluations instead of `K`.
//!
//! Updates are aggregated either as gradients (`w -= lr * mean g`) or as
//! local models (`w = mean(w - lr * g_k)`). The local learner is
//! l2-regularized logistic regression with an unregularized bias stored as
//! the last model coordinate.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_fade, transmit_once, NoiseModel};
use crate::dataio::DataSample;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{Purpose, RngStreams};
use crate::Scalar;

/// One device's training data, labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticShard<T> {
    dim: usize,
    features: Vec<T>,
    labels: Vec<T>,
}

impl<T: Scalar> LogisticShard<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_samples(samples: &[DataSample<T>]) -> Result<Self> {
        let dim = samples.first().ok_or(Error::Empty("shard"))?.features.len();
        let mut shard = Self::new(dim);
        for s in samples {
            shard.push(&s.features, s.label)?;
        }
        Ok(shard)
    }

    pub fn push(&mut self, x: &[T], label: i32) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if label != 1 && label != -1 {
            return Err(Error::invalid("label", format!("expected +1/-1, got {label}")));
        }
        self.features.extend_from_slice(x);
        self.labels.push(T::lit(label as f64));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension; models have `dim + 1` coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(features, label)` pairs, labels as `+1` / `-1`.
    pub fn rows(&self) -> impl Iterator<Item = (&[T], T)> {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }
}

fn margin<T: Scalar>(w: &[T], x: &[T], y: T) -> T {
    let d = x.len();
    y * (linalg::dot(&w[..d], x) + w[d])
}

/// `log(1 + exp(-m))` without overflow.
fn softplus_neg<T: Scalar>(m: T) -> T {
    if m > T::zero() {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `1 / (1 + exp(m))`
fn sigmoid_neg<T: Scalar>(m: T) -> T {
    if m > T::zero() {
        let e = (-m).exp();
        e / (T::one() + e)
    } else {
        T::one() / (T::one() + m.exp())
    }
}

/// Mean logistic loss plus `l2/2 |w_weights|^2`.
pub fn local_loss<T: Scalar>(w: &[T], shard: &LogisticShard<T>, l2: T) -> Result<T> {
    check_model(w, shard)?;
    let n = T::lit(shard.len() as f64);
    let data = shard
        .rows()
        .map(|(x, y)| softplus_neg(margin(w, x, y)))
        .fold(T::zero(), |a, b| a + b)
        / n;
    let d = shard.dim;
    Ok(data + T::lit(0.5) * l2 * linalg::dot(&w[..d], &w[..d]))
}

/// Exact full-batch gradient of [`local_loss`].
pub fn local_gradient<T: Scalar>(w: &[T], shard: &LogisticShard<T>, l2: T) -> Result<Vec<T>> {
    check_model(w, shard)?;
    let d = shard.dim;
    let mut g = vec![T::zero(); d + 1];
    for (x, y) in shard.rows() {
        let coef = -y * sigmoid_neg(margin(w, x, y));
        linalg::axpy(coef, x, &mut g[..d]);
        g[d] += coef;
    }
    let inv_n = T::one() / T::lit(shard.len() as f64);
    for (gi, &wi) in g[..d].iter_mut().zip(&w[..d]) {
        *gi = *gi * inv_n + l2 * wi;
    }
    g[d] = g[d] * inv_n;
    Ok(g)
}

fn check_model<T: Scalar>(w: &[T], shard: &LogisticShard<T>) -> Result<()> {
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    if w.len() != shard.dim + 1 {
        return Err(Error::DimensionMismatch {
            expected: shard.dim + 1,
            found: w.len(),
        });
    }
    Ok(())
}

pub fn importance_gradient_norm<T: Scalar>(gradient: &[T]) -> T {
    linalg::norm(gradient)
}

/// Model age indicator `|stored - global|`.
pub fn mai<T: Scalar>(stored: &[T], global: &[T]) -> T {
    linalg::distance(stored, global)
}

/// The `m` devices with the largest indicators (ties to the lowest id),
/// returned in ascending id order.
pub fn select_top_m<T: Scalar>(indicators: &[T], m: usize) -> Result<Vec<usize>> {
    if m > indicators.len() {
        return Err(Error::invalid(
            "scheduled",
            format!("cannot select {m} of {} devices", indicators.len()),
        ));
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| {
        indicators[b]
            .partial_cmp(&indicators[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(m);
    order.sort_unstable();
    Ok(order)
}

pub fn accuracy<T: Scalar>(w: &[T], shard: &LogisticShard<T>) -> Result<f64> {
    check_model(w, shard)?;
    let correct = shard
        .rows()
        .filter(|&(x, y)| margin(w, x, y) > T::zero())
        .count();
    Ok(correct as f64 / shard.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMetric {
    GradientNorm,
    Mai,
}

impl ImportanceMetric {
    pub fn name(self) -> &'static str {
        match self {
            ImportanceMetric::GradientNorm => "gradient_norm",
            ImportanceMetric::Mai => "mai",
        }
    }

    pub fn default_aggregation(self) -> Aggregation {
        match self {
            ImportanceMetric::GradientNorm => Aggregation::Gradient,
            ImportanceMetric::Mai => Aggregation::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Gradient,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig<T> {
    /// Devices scheduled per round (`m`).
    pub scheduled: usize,
    pub rounds: usize,
    pub learning_rate: T,
    pub l2: T,
    pub metric: ImportanceMetric,
    /// Defaults to the metric's natural upload type.
    pub aggregation: Option<Aggregation>,
    /// Route uploads through the fading channel at this transmit SNR (linear).
    pub upload_snr: Option<T>,
}

impl<T: Scalar> FederatedConfig<T> {
    pub fn aggregation(&self) -> Aggregation {
        self.aggregation.unwrap_or(self.metric.default_aggregation())
    }

    pub fn validate(&self, devices: usize) -> Result<()> {
        if self.scheduled == 0 || self.scheduled > devices {
            return Err(Error::invalid(
                "scheduled",
                format!("must be in 1..={devices}, got {}", self.scheduled),
            ));
        }
        if !(self.learning_rate > T::zero()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.l2 >= T::zero()) {
            return Err(Error::invalid("l2", "must be nonnegative"));
        }
        if let Some(s) = self.upload_snr {
            if !(s > T::zero()) {
                return Err(Error::invalid("upload_snr", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedState<T> {
    pub global: Vec<T>,
    pub round: usize,
    /// Model each device most recently uploaded (the broadcast model it
    /// differentiated at, for gradient uploads).
    pub stored: Vec<Vec<T>>,
    /// Rounds since each device last uploaded.
    pub staleness: Vec<usize>,
}

impl<T: Scalar> FederatedState<T> {
    pub fn new(initial: Vec<T>, devices: usize) -> Self {
        Self {
            stored: vec![initial.clone(); devices],
            staleness: vec![0; devices],
            global: initial,
            round: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub mean_indicator: f64,
    pub global_loss: f64,
    pub test_accuracy: Option<f64>,
    pub gradient_computations: usize,
    pub indicator_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedTrace<T> {
    pub metric: ImportanceMetric,
    pub aggregation: Aggregation,
    pub initial_loss: f64,
    pub rounds: Vec<RoundRecord>,
    /// Global model before round 1, then after every round.
    pub history: Vec<Vec<T>>,
}

pub const FEDERATED_TRACE_HEADER: &str =
    "round,mode,selected_devices,mean_indicator,global_loss,test_accuracy,gradient_computations";

impl<T: Scalar> FederatedTrace<T> {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{FEDERATED_TRACE_HEADER}")?;
        for r in &self.rounds {
            let selected: Vec<String> = r.selected.iter().map(|k| k.to_string()).collect();
            write!(
                out,
                "{},{},{},{},{},",
                r.round,
                self.metric.name(),
                selected.join(";"),
                r.mean_indicator,
                r.global_loss
            )?;
            match r.test_accuracy {
                Some(a) => write!(out, "{a}")?,
                None => {}
            }
            writeln!(out, ",{}", r.gradient_computations)?;
        }
        Ok(())
    }
}

/// Size-weighted mean of shard losses, i.e. the loss on the union.
pub fn global_loss<T: Scalar>(w: &[T], shards: &[LogisticShard<T>], l2: T) -> Result<T> {
    let total: usize = shards.iter().map(|s| s.len()).sum();
    let mut acc = T::zero();
    for s in shards {
        acc += local_loss(w, s, l2)? * T::lit(s.len() as f64);
    }
    Ok(acc / T::lit(total as f64))
}

fn upload<T: Scalar, R: Rng>(v: Vec<T>, snr: Option<T>, rng: &mut R) -> Result<Vec<T>> {
    let Some(snr) = snr else { return Ok(v) };
    let power = v.iter().map(|&x| x * x).fold(T::zero(), |a, b| a + b) / T::lit(v.len() as f64);
    if !(power > T::zero()) {
        return Ok(v);
    }
    let noise = NoiseModel::new(power)?;
    let draw = draw_fade(snr, rng);
    Ok(transmit_once(&v, &draw, &noise, rng))
}

/// Runs `cfg.rounds` communication rounds from the all-zero model.
pub fn run_federated<T: Scalar>(
    cfg: &FederatedConfig<T>,
    shards: &[LogisticShard<T>],
    test: Option<&LogisticShard<T>>,
    streams: &RngStreams,
) -> Result<(FederatedState<T>, FederatedTrace<T>)> {
    let k_devices = shards.len();
    if k_devices == 0 {
        return Err(Error::Empty("shards"));
    }
    cfg.validate(k_devices)?;
    let dim = shards[0].dim();
    if let Some(bad) = shards.iter().find(|s| s.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let mut uplinks = (0..k_devices as u64)
        .map(|k| streams.stream(Purpose::Federated, k))
        .collect::<Vec<_>>();
    let aggregation = cfg.aggregation();
    let lr = cfg.learning_rate;

    let mut state = FederatedState::new(vec![T::zero(); dim + 1], k_devices);
    let initial_loss = global_loss(&state.global, shards, cfg.l2)?;
    let mut trace = FederatedTrace {
        metric: cfg.metric,
        aggregation,
        initial_loss: initial_loss.as_f64(),
        rounds: Vec::with_capacity(cfg.rounds),
        history: vec![state.global.clone()],
    };

    for round in 1..=cfg.rounds {
        let w = state.global.clone();
        let mut gradients: Vec<Option<Vec<T>>> = vec![None; k_devices];
        let mut computations = 0;
        let indicators: Vec<T> = match cfg.metric {
            ImportanceMetric::GradientNorm => shards
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let g = local_gradient(&w, s, cfg.l2)?;
                    computations += 1;
                    let n = importance_gradient_norm(&g);
                    gradients[k] = Some(g);
                    Ok(n)
                })
                .collect::<Result<_>>()?,
            ImportanceMetric::Mai => state.stored.iter().map(|s| mai(s, &w)).collect(),
        };
        let selected = select_top_m(&indicators, cfg.scheduled)?;

        let mut sum = vec![T::zero(); dim + 1];
        for &k in &selected {
            let g = match gradients[k].take() {
                Some(g) => g,
                None => {
                    computations += 1;
                    local_gradient(&w, &shards[k], cfg.l2)?
                }
            };
            match aggregation {
                Aggregation::Gradient => {
                    let sent = upload(g, cfg.upload_snr, &mut uplinks[k])?;
                    linalg::axpy(T::one(), &sent, &mut sum);
                    state.stored[k] = w.clone();
                }
                Aggregation::Model => {
                    let mut local = w.clone();
                    linalg::axpy(-lr, &g, &mut local);
                    let sent = upload(local.clone(), cfg.upload_snr, &mut uplinks[k])?;
                    linalg::axpy(T::one(), &sent, &mut sum);
                    state.stored[k] = local;
                }
            }
        }
        let inv_m = T::one() / T::lit(selected.len() as f64);
        state.global = match aggregation {
            Aggregation::Gradient => {
                let mut next = w;
                for (wi, &si) in next.iter_mut().zip(&sum) {
                    *wi -= lr * (si * inv_m);
                }
                next
            }
            Aggregation::Model => sum.into_iter().map(|s| s * inv_m).collect(),
        };
        for (k, tau) in state.staleness.iter_mut().enumerate() {
            if selected.binary_search(&k).is_ok() {
                *tau = 0;
            } else {
                *tau += 1;
            }
        }
        state.round = round;

        let loss = global_loss(&state.global, shards, cfg.l2)?.as_f64();
        if !loss.is_finite() || loss > 10.0 * trace.initial_loss {
            return Err(Error::Diverged {
                round,
                loss,
                initial: trace.initial_loss,
            });
        }
        let mean_indicator = indicators.iter().map(|v| v.as_f64()).sum::<f64>() / k_devices as f64;
        trace.rounds.push(RoundRecord {
            round,
            selected,
            mean_indicator,
            global_loss: loss,
            test_accuracy: test.map(|t| accuracy(&state.global, t)).transpose()?,
            gradient_computations: computations,
            indicator_evaluations: k_devices,
        });
        trace.history.push(state.global.clone());
    }
    Ok((state, trace))
}
