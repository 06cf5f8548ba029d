//! Server-side models that are refit after every acquired sample.

use crate::dataio::DataSample;
use crate::error::{Error, Result};
use crate::svm::{
    accuracy, BinarySvm, BinaryTrainer, Classifier, MulticlassSvm, MulticlassTrainer, TrainConfig,
    UncertaintyScore,
};
use crate::Scalar;

pub trait Learner<T: Scalar> {
    type Model: Classifier<T>;

    fn model(&self) -> &Self::Model;

    /// Adds one labelled sample and refits from the current state.
    fn absorb(&mut self, x: &[T], label: i32) -> Result<()>;

    fn accuracy(&self, test: &[DataSample<T>]) -> Result<f64> {
        accuracy(self.model(), test)
    }
}

#[derive(Debug, Clone)]
pub struct BinaryLearner<T> {
    trainer: BinaryTrainer<T>,
    model: BinarySvm<T>,
}

impl<T: Scalar> BinaryLearner<T> {
    /// Fits the coarse initial model on `seed` (labels `+1` / `-1`).
    pub fn new(seed: &[DataSample<T>], cfg: TrainConfig<T>, rng_seed: u64) -> Result<Self> {
        let dim = seed.first().ok_or(Error::Empty("seed set"))?.features.len();
        let mut trainer = BinaryTrainer::new(dim, cfg, rng_seed)?;
        for s in seed {
            trainer.push(&s.features, s.label)?;
        }
        let model = trainer.fit()?;
        Ok(Self { trainer, model })
    }

    pub fn trainer(&self) -> &BinaryTrainer<T> {
        &self.trainer
    }

    pub fn uncertainty(&self, x: &[T]) -> Result<UncertaintyScore<T>> {
        self.model.uncertainty_distance(x)
    }
}

impl<T: Scalar> Learner<T> for BinaryLearner<T> {
    type Model = BinarySvm<T>;

    fn model(&self) -> &BinarySvm<T> {
        &self.model
    }

    fn absorb(&mut self, x: &[T], label: i32) -> Result<()> {
        self.trainer.push(x, label)?;
        self.model = self.trainer.fit()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MulticlassLearner<T> {
    trainer: MulticlassTrainer<T>,
    model: MulticlassSvm<T>,
}

impl<T: Scalar> MulticlassLearner<T> {
    pub fn new(
        classes: Vec<i32>,
        seed: &[DataSample<T>],
        cfg: TrainConfig<T>,
        rng_seed: u64,
    ) -> Result<Self> {
        let dim = seed.first().ok_or(Error::Empty("seed set"))?.features.len();
        let mut trainer = MulticlassTrainer::new(classes, dim, cfg, rng_seed)?;
        for s in seed {
            trainer.push(&s.features, s.label)?;
        }
        let model = trainer.fit()?;
        Ok(Self { trainer, model })
    }
}

impl<T: Scalar> Learner<T> for MulticlassLearner<T> {
    type Model = MulticlassSvm<T>;

    fn model(&self) -> &MulticlassSvm<T> {
        &self.model
    }

    fn absorb(&mut self, x: &[T], label: i32) -> Result<()> {
        self.trainer.push(x, label)?;
        self.model = self.trainer.fit()?;
        Ok(())
    }
}
