//! One-vs-one decomposition with coding-matrix decoding.

use super::{BinarySvm, BinaryTrainer, Classifier, TrainConfig};
use crate::error::{Error, Result};
use crate::Scalar;

/// `C x L` matrix over `{-1, 0, +1}`. Column `l` is the component separating
/// the pair `(i, j)`, `i < j`, with `+1` in row `i` and `-1` in row `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingMatrix {
    rows: usize,
    pairs: Vec<(usize, usize)>,
}

impl CodingMatrix {
    pub fn one_vs_one(classes: usize) -> Self {
        let pairs = (0..classes)
            .flat_map(|i| (i + 1..classes).map(move |j| (i, j)))
            .collect();
        Self {
            rows: classes,
            pairs,
        }
    }

    pub fn classes(&self) -> usize {
        self.rows
    }

    pub fn components(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, column: usize) -> (usize, usize) {
        self.pairs[column]
    }

    pub fn entry(&self, row: usize, column: usize) -> i8 {
        let (i, j) = self.pairs[column];
        if row == i {
            1
        } else if row == j {
            -1
        } else {
            0
        }
    }

    pub fn row(&self, row: usize) -> Vec<i8> {
        (0..self.components()).map(|l| self.entry(row, l)).collect()
    }
}

/// Generalized Hamming distance from `scores` to every row of `coding`.
///
/// A component contributes 0 when its sign agrees with a nonzero entry, 1 when
/// it disagrees, and 0.5 when the entry is zero or the score is exactly zero.
pub fn hamming_distances<T: Scalar>(coding: &CodingMatrix, scores: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    (0..coding.classes())
        .map(|row| {
            scores
                .iter()
                .enumerate()
                .map(|(l, &s)| {
                    let m = coding.entry(row, l);
                    if m == 0 || s == T::zero() {
                        half
                    } else if (s > T::zero()) == (m > 0) {
                        T::zero()
                    } else {
                        T::one()
                    }
                })
                .fold(T::zero(), |a, b| a + b)
        })
        .collect()
}

/// Row index with the smallest Hamming distance; ties go to the lowest index.
pub fn hamming_decode<T: Scalar>(coding: &CodingMatrix, scores: &[T]) -> usize {
    let dists = hamming_distances(coding, scores);
    let mut best = 0;
    for (c, &d) in dists.iter().enumerate().skip(1) {
        if d < dists[best] {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassSvm<T> {
    classes: Vec<i32>,
    components: Vec<BinarySvm<T>>,
    coding: CodingMatrix,
}

impl<T: Scalar> MulticlassSvm<T> {
    pub fn new(classes: Vec<i32>, components: Vec<BinarySvm<T>>) -> Result<Self> {
        let coding = CodingMatrix::one_vs_one(classes.len());
        if components.len() != coding.components() {
            return Err(Error::invalid(
                "components",
                format!(
                    "{} classes need {} components, got {}",
                    classes.len(),
                    coding.components(),
                    components.len()
                ),
            ));
        }
        Ok(Self {
            classes,
            components,
            coding,
        })
    }

    pub fn classes(&self) -> &[i32] {
        &self.classes
    }

    pub fn components(&self) -> &[BinarySvm<T>] {
        &self.components
    }

    pub fn coding(&self) -> &CodingMatrix {
        &self.coding
    }

    pub fn class_index(&self, label: i32) -> Option<usize> {
        self.classes.iter().position(|&c| c == label)
    }

    /// Signed distance of `x` to each component hyperplane.
    pub fn component_scores(&self, x: &[T]) -> Result<Vec<T>> {
        self.components.iter().map(|m| m.signed_distance(x)).collect()
    }

    pub fn predict_index(&self, x: &[T]) -> Result<usize> {
        Ok(hamming_decode(&self.coding, &self.component_scores(x)?))
    }
}

impl<T: Scalar> Classifier<T> for MulticlassSvm<T> {
    fn predict(&self, x: &[T]) -> i32 {
        match self.predict_index(x) {
            Ok(i) => self.classes[i],
            Err(_) => i32::MIN,
        }
    }
}

/// One warm-startable trainer per component; only components that received
/// new data are refit.
#[derive(Debug, Clone)]
pub struct MulticlassTrainer<T> {
    classes: Vec<i32>,
    coding: CodingMatrix,
    trainers: Vec<BinaryTrainer<T>>,
    models: Vec<Option<BinarySvm<T>>>,
    dirty: Vec<bool>,
}

impl<T: Scalar> MulticlassTrainer<T> {
    pub fn new(classes: Vec<i32>, dim: usize, cfg: TrainConfig<T>, seed: u64) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::invalid("classes", "need at least two classes"));
        }
        let coding = CodingMatrix::one_vs_one(classes.len());
        let trainers = (0..coding.components())
            .map(|l| BinaryTrainer::new(dim, cfg, seed.wrapping_add(l as u64)))
            .collect::<Result<Vec<_>>>()?;
        let l = coding.components();
        Ok(Self {
            classes,
            coding,
            trainers,
            models: vec![None; l],
            dirty: vec![false; l],
        })
    }

    pub fn classes(&self) -> &[i32] {
        &self.classes
    }

    pub fn push(&mut self, x: &[T], label: i32) -> Result<()> {
        let row = self
            .classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::invalid("label", format!("{label} is not a trained class")))?;
        for l in 0..self.coding.components() {
            let m = self.coding.entry(row, l);
            if m != 0 {
                self.trainers[l].push(x, m as i32)?;
                self.dirty[l] = true;
            }
        }
        Ok(())
    }

    pub fn fit(&mut self) -> Result<MulticlassSvm<T>> {
        for l in 0..self.trainers.len() {
            if self.dirty[l] || self.models[l].is_none() {
                self.models[l] = Some(self.trainers[l].fit()?);
                self.dirty[l] = false;
            }
        }
        MulticlassSvm::new(
            self.classes.clone(),
            self.models.iter().flatten().cloned().collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_class_layout() {
        let m = CodingMatrix::one_vs_one(3);
        assert_eq!(m.components(), 3);
        assert_eq!(m.row(0), vec![1, 1, 0]);
        assert_eq!(m.row(1), vec![-1, 0, 1]);
        assert_eq!(m.row(2), vec![0, -1, -1]);
        assert_eq!(CodingMatrix::one_vs_one(4).components(), 6);
        for l in 0..m.components() {
            let col: Vec<i8> = (0..3).map(|r| m.entry(r, l)).collect();
            assert_eq!(col.iter().filter(|&&e| e == 1).count(), 1);
            assert_eq!(col.iter().filter(|&&e| e == -1).count(), 1);
        }
    }

    #[test]
    fn decode_all_positive_scores() {
        let m = CodingMatrix::one_vs_one(3);
        let s = [1.0f64, 1.0, 1.0];
        assert_eq!(hamming_distances(&m, &s), vec![0.5, 1.5, 2.5]);
        assert_eq!(hamming_decode(&m, &s), 0);
    }

    #[test]
    fn agreeing_scores_decode_to_their_row() {
        let m = CodingMatrix::one_vs_one(4);
        for c in 0..4 {
            let s: Vec<f64> = m.row(c).iter().map(|&e| if e == 0 { 0.3 } else { e as f64 }).collect();
            assert_eq!(hamming_decode(&m, &s), c);
        }
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let m = CodingMatrix::one_vs_one(3);
        assert_eq!(hamming_decode(&m, &[0.0f64, 0.0, 0.0]), 0);
    }

    #[test]
    fn component_count_checked() {
        let c = BinarySvm::new(vec![1.0f64], 0.0, 1.0);
        assert!(MulticlassSvm::new(vec![0, 1, 2], vec![c.clone(), c]).is_err());
    }

    #[test]
    fn scores_on_boundary_and_scaling() {
        let comps = vec![
            BinarySvm::new(vec![1.0f64, 0.0], 0.0, 1.0),
            BinarySvm::new(vec![0.0, 1.0], -1.0, 1.0),
            BinarySvm::new(vec![1.0, 1.0], 0.5, 1.0),
        ];
        let mc = MulticlassSvm::new(vec![3, 5, 8], comps.clone()).unwrap();
        let x = [0.0, 2.0];
        let s = mc.component_scores(&x).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], 0.0);

        let scaled = MulticlassSvm::new(
            vec![3, 5, 8],
            comps.iter().enumerate().map(|(i, c)| c.rescaled(1.0 + i as f64)).collect(),
        )
        .unwrap();
        let s2 = scaled.component_scores(&x).unwrap();
        for (a, b) in s.iter().zip(&s2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn untrained_component_errors() {
        let comps = vec![
            BinarySvm::new(vec![1.0f64], 0.0, 1.0),
            BinarySvm::new(vec![0.0], 0.0, 1.0),
            BinarySvm::new(vec![1.0], 0.0, 1.0),
        ];
        let mc = MulticlassSvm::new(vec![0, 1, 2], comps).unwrap();
        assert!(mc.component_scores(&[1.0]).is_err());
    }

    #[test]
    fn trainer_separates_three_blobs() {
        let cfg = TrainConfig {
            c: 10.0,
            tol: 1e-5,
            ..TrainConfig::default()
        };
        let mut t = MulticlassTrainer::new(vec![3, 5, 8], 2, cfg, 0).unwrap();
        let centers = [(3, [0.0, 0.0]), (5, [4.0, 0.0]), (8, [0.0, 4.0])];
        for k in 0..10 {
            for &(label, c) in &centers {
                let dx = (k as f64 * 0.7).sin() * 0.5;
                let dy = (k as f64 * 1.3).cos() * 0.5;
                t.push(&[c[0] + dx, c[1] + dy], label).unwrap();
            }
        }
        let mc = t.fit().unwrap();
        for &(label, c) in &centers {
            assert_eq!(mc.predict(&c), label);
        }
        assert!(t.push(&[0.0, 0.0], 9).is_err());
    }
}
