//! Block-fading uplink with analog (uncoded) transmission of feature vectors
//! and maximal-ratio combining of repeated observations.
//!
//! A fade is reduced to its power gain `|h|^2 ~ Exp(1)` (unit-variance
//! Rayleigh); phase is assumed perfectly compensated. Every transmission
//! attempt draws an independent fade. Received noise is white Gaussian with
//! per-dimension variance `P / snr`, where `P` is the mean per-dimension power
//! of the training pool.

use rand::Rng;

use crate::error::{Error, Result};
use crate::Scalar;

pub fn db_to_linear<T: Scalar>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

pub fn linear_to_db<T: Scalar>(linear: T) -> T {
    T::lit(10.0) * linear.log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw<T> {
    pub power_gain: T,
    pub receive_snr: T,
}

pub fn draw_fade<T: Scalar, R: Rng + ?Sized>(transmit_snr: T, rng: &mut R) -> ChannelDraw<T> {
    let power_gain = T::unit_exponential(rng);
    ChannelDraw {
        power_gain,
        receive_snr: transmit_snr * power_gain,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<T> {
    signal_power: T,
}

impl<T: Scalar> NoiseModel<T> {
    pub fn new(signal_power: T) -> Result<Self> {
        if !(signal_power > T::zero()) || !signal_power.is_finite() {
            return Err(Error::invalid(
                "signal_power",
                format!("must be positive and finite, got {signal_power}"),
            ));
        }
        Ok(Self { signal_power })
    }

    pub fn signal_power(&self) -> T {
        self.signal_power
    }

    /// Per-dimension noise variance at the given receive SNR.
    pub fn noise_variance(&self, receive_snr: T) -> T {
        self.signal_power / receive_snr
    }
}

/// One analog transmission: `features + z`, `z ~ N(0, P / snr)` per dimension.
///
/// A non-positive receive SNR yields an all-zero observation; MRC assigns it
/// zero weight.
pub fn transmit_once<T: Scalar, R: Rng + ?Sized>(
    features: &[T],
    draw: &ChannelDraw<T>,
    noise: &NoiseModel<T>,
    rng: &mut R,
) -> Vec<T> {
    if !(draw.receive_snr > T::zero()) {
        return vec![T::zero(); features.len()];
    }
    if draw.receive_snr.is_infinite() {
        return features.to_vec();
    }
    let sigma = noise.noise_variance(draw.receive_snr).sqrt();
    features
        .iter()
        .map(|&x| x + sigma * T::standard_normal(rng))
        .collect()
}

/// Running maximal-ratio combiner for one data sample.
///
/// Stores the SNR-weighted sum of observations, so the combined estimate is
/// `sum(snr_m * obs_m) / sum(snr_m)` with equivalent noise variance
/// `P / effective_snr`.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcState<T> {
    weighted_sum: Vec<T>,
    snrs: Vec<T>,
    effective_snr: T,
}

impl<T: Scalar> MrcState<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            weighted_sum: vec![T::zero(); dim],
            snrs: Vec::new(),
            effective_snr: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weighted_sum.len()
    }

    pub fn effective_snr(&self) -> T {
        self.effective_snr
    }

    pub fn observations(&self) -> usize {
        self.snrs.len()
    }

    pub fn receive_snrs(&self) -> &[T] {
        &self.snrs
    }

    /// Combined estimate, or `None` before any observation with positive SNR.
    pub fn combined(&self) -> Option<Vec<T>> {
        if !(self.effective_snr > T::zero()) {
            return None;
        }
        Some(
            self.weighted_sum
                .iter()
                .map(|&v| v / self.effective_snr)
                .collect(),
        )
    }

    pub fn combine(&mut self, observation: &[T], receive_snr: T) -> Result<()> {
        if observation.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: observation.len(),
            });
        }
        let weight = receive_snr.max(T::zero());
        if weight > T::zero() {
            for (acc, &o) in self.weighted_sum.iter_mut().zip(observation) {
                *acc += weight * o;
            }
        }
        self.snrs.push(weight);
        self.effective_snr += weight;
        Ok(())
    }
}

/// Functional form of [`MrcState::combine`].
pub fn mrc_combine<T: Scalar>(
    mut state: MrcState<T>,
    observation: &[T],
    receive_snr: T,
) -> Result<MrcState<T>> {
    state.combine(observation, receive_snr)?;
    Ok(state)
}

/// Transmit SNR and noise reference shared by every device in an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelEnv<T> {
    pub transmit_snr: T,
    pub noise: NoiseModel<T>,
}

impl<T: Scalar> ChannelEnv<T> {
    pub fn new(transmit_snr: T, noise: NoiseModel<T>) -> Result<Self> {
        if !(transmit_snr > T::zero()) {
            return Err(Error::invalid(
                "transmit_snr",
                format!("must be positive, got {transmit_snr}"),
            ));
        }
        Ok(Self {
            transmit_snr,
            noise,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifteen_db() {
        let lin: f64 = db_to_linear(15.0);
        assert!((lin - 10f64.powf(1.5)).abs() < 1e-12);
        assert!((linear_to_db(lin) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn mean_receive_snr_tracks_transmit_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mean = (0..n)
            .map(|_| draw_fade(31.6f64, &mut rng).receive_snr)
            .sum::<f64>()
            / n as f64;
        assert!((mean / 31.6 - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn draws_are_seeded() {
        let a: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..10).map(|_| draw_fade(2.0f32, &mut rng)).collect()
        };
        let b: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..10).map(|_| draw_fade(2.0f32, &mut rng)).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|d| d.power_gain >= 0.0 && d.receive_snr == 2.0 * d.power_gain));
    }

    #[test]
    fn infinite_snr_is_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = NoiseModel::new(0.1f64).unwrap();
        let draw = ChannelDraw {
            power_gain: 1.0,
            receive_snr: f64::INFINITY,
        };
        let x = [0.25, 0.5, 1.0];
        assert_eq!(transmit_once(&x, &draw, &noise, &mut rng), x.to_vec());
        let huge = ChannelDraw {
            power_gain: 1.0,
            receive_snr: 1e30,
        };
        let y = transmit_once(&x, &huge, &noise, &mut rng);
        assert_eq!(y.len(), 3);
        assert!(y.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn single_observation_is_identity() {
        let obs = [0.3f64, -0.2, 1.5];
        let s = mrc_combine(MrcState::new(3), &obs, 4.0).unwrap();
        assert_eq!(s.effective_snr(), 4.0);
        let c = s.combined().unwrap();
        for (a, b) in c.iter().zip(&obs) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn snr_additivity() {
        let mut s = MrcState::new(2);
        s.combine(&[1.0f64, 0.0], 2.0).unwrap();
        s.combine(&[0.0, 1.0], 3.0).unwrap();
        assert_eq!(s.effective_snr(), 5.0);
        assert_eq!(s.combined().unwrap(), vec![0.4, 0.6]);
        assert_eq!(s.observations(), 2);
    }

    #[test]
    fn dimension_mismatch() {
        let mut s = MrcState::<f64>::new(2);
        assert!(matches!(
            s.combine(&[1.0], 1.0),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn zero_snr_observation_has_no_weight() {
        let mut s = MrcState::new(1);
        assert!(s.combined().is_none());
        s.combine(&[100.0f64], 0.0).unwrap();
        assert!(s.combined().is_none());
        s.combine(&[1.0], 2.0).unwrap();
        assert_eq!(s.combined().unwrap(), vec![1.0]);
    }

    #[test]
    fn noise_model_rejects_nonpositive_power() {
        assert!(NoiseModel::new(0.0f64).is_err());
        assert!(NoiseModel::new(f64::NAN).is_err());
        assert_eq!(NoiseModel::new(0.5f64).unwrap().noise_variance(2.0), 0.25);
    }
}
