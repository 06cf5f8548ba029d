//! Server-side linear SVM classifiers and distance-based uncertainty.

mod multiclass;
mod snapshot;
mod trainer;

pub use multiclass::{
    hamming_decode, hamming_distances, CodingMatrix, MulticlassSvm, MulticlassTrainer,
};
pub use snapshot::{decode_snapshot, encode_binary, encode_multiclass, Snapshot, SNAPSHOT_VERSION};
pub use trainer::{train_binary, BinaryTrainer, TrainConfig};

use crate::dataio::DataSample;
use crate::error::{Error, Result};
use crate::linalg;
use crate::Scalar;

/// Distances below this are clamped before inversion.
pub const UNCERTAINTY_EPS: f64 = 1e-6;

/// Linear classifier `sign(w . x + b)` trained with regularization `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm<T> {
    weights: Vec<T>,
    bias: T,
    c: T,
    norm: T,
}

impl<T: Scalar> BinarySvm<T> {
    pub fn new(weights: Vec<T>, bias: T, c: T) -> Self {
        let norm = linalg::norm(&weights);
        Self {
            weights,
            bias,
            c,
            norm,
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> T {
        self.bias
    }

    pub fn c(&self) -> T {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weight_norm(&self) -> T {
        self.norm
    }

    pub fn decision_value(&self, x: &[T]) -> T {
        linalg::dot(&self.weights, x) + self.bias
    }

    /// Signed distance `(w . x + b) / |w|`.
    pub fn signed_distance(&self, x: &[T]) -> Result<T> {
        if !(self.norm > T::zero()) {
            return Err(Error::DegenerateModel);
        }
        Ok(self.decision_value(x) / self.norm)
    }

    /// Euclidean distance from `x` to the decision hyperplane.
    pub fn distance(&self, x: &[T]) -> Result<T> {
        self.signed_distance(x).map(T::abs)
    }

    pub fn uncertainty_distance(&self, x: &[T]) -> Result<UncertaintyScore<T>> {
        self.distance(x).map(UncertaintyScore::from_distance)
    }

    /// Primal soft-margin objective `0.5 |w|^2 + c * sum hinge(y (w . x + b))`.
    pub fn objective<'a>(&self, samples: impl IntoIterator<Item = (&'a [T], i32)>) -> T {
        let hinge = samples
            .into_iter()
            .map(|(x, y)| (T::one() - T::lit(y as f64) * self.decision_value(x)).max(T::zero()))
            .fold(T::zero(), |a, b| a + b);
        T::lit(0.5) * self.norm * self.norm + self.c * hinge
    }

    /// Same hyperplane with `(w, b)` multiplied by `factor`.
    pub fn rescaled(&self, factor: T) -> Self {
        Self::new(
            self.weights.iter().map(|&w| w * factor).collect(),
            self.bias * factor,
            self.c,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyKind {
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyScore<T> {
    pub value: T,
    pub kind: UncertaintyKind,
}

impl<T: Scalar> UncertaintyScore<T> {
    /// `1 / max(distance, 1e-6)`.
    pub fn from_distance(distance: T) -> Self {
        Self {
            value: T::one() / distance.max(T::lit(UNCERTAINTY_EPS)),
            kind: UncertaintyKind::Distance,
        }
    }
}

pub trait Classifier<T> {
    fn predict(&self, x: &[T]) -> i32;
}

impl<T: Scalar> Classifier<T> for BinarySvm<T> {
    /// `+1` on or above the hyperplane, `-1` below.
    fn predict(&self, x: &[T]) -> i32 {
        if self.decision_value(x) >= T::zero() {
            1
        } else {
            -1
        }
    }
}

/// Fraction of `test` whose label the model predicts correctly.
pub fn accuracy<T, M: Classifier<T> + ?Sized>(model: &M, test: &[DataSample<T>]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let correct = test
        .iter()
        .filter(|s| model.predict(&s.features) == s.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}
