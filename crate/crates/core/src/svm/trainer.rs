//! Dual coordinate descent for the L1-loss linear SVM, with shrinking and
//! warm starts.
//!
//! The bias is learned as an extra weight on a constant feature of magnitude
//! `bias_scale`; the penalty it receives is `b^2 / (2 bias_scale^2)`, which
//! vanishes as the scale grows. Dual variables persist between calls to
//! [`BinaryTrainer::fit`], so appending one sample and refitting only has to
//! repair the KKT violations that sample introduces.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BinarySvm;
use crate::error::{Error, Result};
use crate::linalg;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    /// Soft-margin penalty `C`.
    pub c: T,
    /// Stop when the projected-gradient spread falls below this.
    pub tol: T,
    /// Upper bound on sweeps per `fit`.
    pub max_passes: usize,
    pub bias_scale: T,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            c: T::one(),
            tol: T::lit(1e-4),
            max_passes: 10_000,
            bias_scale: T::lit(10.0),
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > T::zero()) {
            return Err(Error::invalid("c", "must be positive"));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        if self.max_passes == 0 {
            return Err(Error::invalid("max_passes", "must be at least 1"));
        }
        if !(self.bias_scale > T::zero()) {
            return Err(Error::invalid("bias_scale", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BinaryTrainer<T> {
    cfg: TrainConfig<T>,
    dim: usize,
    features: Vec<T>,
    labels: Vec<T>,
    alpha: Vec<T>,
    qdiag: Vec<T>,
    w: Vec<T>,
    w_bias: T,
    positives: usize,
    rng: ChaCha8Rng,
    passes_last_fit: usize,
}

impl<T: Scalar> BinaryTrainer<T> {
    pub fn new(dim: usize, cfg: TrainConfig<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            dim,
            features: Vec::new(),
            labels: Vec::new(),
            alpha: Vec::new(),
            qdiag: Vec::new(),
            w: vec![T::zero(); dim],
            w_bias: T::zero(),
            positives: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            passes_last_fit: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig<T> {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn passes_last_fit(&self) -> usize {
        self.passes_last_fit
    }

    pub fn sample(&self, i: usize) -> (&[T], i32) {
        let y = if self.labels[i] > T::zero() { 1 } else { -1 };
        (&self.features[i * self.dim..(i + 1) * self.dim], y)
    }

    /// Appends a sample with label `+1` or `-1`; its dual variable starts at zero.
    pub fn push(&mut self, x: &[T], label: i32) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let y = match label {
            1 => T::one(),
            -1 => -T::one(),
            other => {
                return Err(Error::invalid(
                    "label",
                    format!("binary labels are +1/-1, got {other}"),
                ))
            }
        };
        self.features.extend_from_slice(x);
        self.labels.push(y);
        self.alpha.push(T::zero());
        let b = self.cfg.bias_scale;
        self.qdiag.push(linalg::dot(x, x) + b * b);
        if label == 1 {
            self.positives += 1;
        }
        Ok(())
    }

    /// Current primal iterate as a model.
    pub fn model(&self) -> BinarySvm<T> {
        BinarySvm::new(self.w.clone(), self.w_bias * self.cfg.bias_scale, self.cfg.c)
    }

    /// Primal objective of the current iterate on the stored samples.
    pub fn objective(&self) -> T {
        let m = self.model();
        m.objective((0..self.len()).map(|i| self.sample(i)))
    }

    /// Runs coordinate descent from the current dual state until the
    /// projected-gradient spread drops below `tol` or `max_passes` is hit.
    pub fn fit(&mut self) -> Result<BinarySvm<T>> {
        let n = self.len();
        if self.positives == 0 || self.positives == n {
            return Err(Error::SingleClass);
        }
        let c = self.cfg.c;
        let b = self.cfg.bias_scale;
        let tol = self.cfg.tol;
        let d = self.dim;

        let mut active: Vec<usize> = (0..n).collect();
        let mut pg_max_old = T::infinity();
        let mut pg_min_old = T::neg_infinity();
        let mut passes = 0;

        while passes < self.cfg.max_passes {
            passes += 1;
            active.shuffle(&mut self.rng);
            let mut pg_max = T::neg_infinity();
            let mut pg_min = T::infinity();
            let mut s = 0;
            while s < active.len() {
                let i = active[s];
                let xi = &self.features[i * d..(i + 1) * d];
                let yi = self.labels[i];
                let g = yi * (linalg::dot(&self.w, xi) + self.w_bias * b) - T::one();
                let ai = self.alpha[i];

                let mut pg = T::zero();
                if ai == T::zero() {
                    if g > pg_max_old {
                        active.swap_remove(s);
                        continue;
                    } else if g < T::zero() {
                        pg = g;
                    }
                } else if ai == c {
                    if g < pg_min_old {
                        active.swap_remove(s);
                        continue;
                    } else if g > T::zero() {
                        pg = g;
                    }
                } else {
                    pg = g;
                }
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);

                if pg.abs() > T::lit(1e-12) {
                    let new = (ai - g / self.qdiag[i]).max(T::zero()).min(c);
                    let step = (new - ai) * yi;
                    self.alpha[i] = new;
                    linalg::axpy(step, xi, &mut self.w);
                    self.w_bias += step * b;
                }
                s += 1;
            }

            if pg_max - pg_min <= tol {
                if active.len() == n {
                    break;
                }
                active = (0..n).collect();
                pg_max_old = T::infinity();
                pg_min_old = T::neg_infinity();
                continue;
            }
            pg_max_old = if pg_max <= T::zero() { T::infinity() } else { pg_max };
            pg_min_old = if pg_min >= T::zero() { T::neg_infinity() } else { pg_min };
        }
        self.passes_last_fit = passes;
        Ok(self.model())
    }
}

/// Trains from scratch on `(features, label)` pairs with labels in `{-1, +1}`.
pub fn train_binary<'a, T: Scalar>(
    samples: impl IntoIterator<Item = (&'a [T], i32)>,
    cfg: &TrainConfig<T>,
    seed: u64,
) -> Result<BinarySvm<T>> {
    let mut it = samples.into_iter().peekable();
    let dim = it.peek().map(|(x, _)| x.len()).ok_or(Error::Empty("training set"))?;
    let mut trainer = BinaryTrainer::new(dim, *cfg, seed)?;
    for (x, y) in it {
        trainer.push(x, y)?;
    }
    trainer.fit()
}
