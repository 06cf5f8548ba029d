//! MNIST IDX ingestion and the seed / device / test split.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStreams};
use crate::Scalar;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Unscaled image payload straight from an IDX3 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn scaled<T: Scalar>(&self, i: usize) -> Vec<T> {
        let scale = T::lit(1.0 / 255.0);
        self.image(i)
            .iter()
            .map(|&p| T::lit(p as f64) * scale)
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IMAGE_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let word = bytes.get(at..at + 4).ok_or(Error::Truncated {
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([word[0], word[1], word[2], word[3]]))
}

pub fn read_idx_images(bytes: &[u8]) -> Result<RawImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

/// Parses an IDX3 image file into `count` rows of `rows * cols` intensities in `[0, 1]`.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Vec<Vec<T>>> {
    let raw = read_idx_images(bytes)?;
    Ok((0..raw.count).map(|i| raw.scaled(i)).collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let labels = bytes[8..expected].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(Error::LabelOutOfRange { index, label });
    }
    Ok(labels)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSample<T> {
    pub features: Vec<T>,
    pub label: i32,
    /// Row index in the source file; unique within a dataset.
    pub origin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    dim: usize,
    samples: Vec<DataSample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(dim: usize, samples: Vec<DataSample<T>>) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| s.features.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.features.len(),
            });
        }
        Ok(Self { dim, samples })
    }

    /// Pairs an image file with its label file, keeping only `classes` (all when empty).
    pub fn from_idx(images: &RawImages, labels: &[u8], classes: &[i32]) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::CountMismatch {
                images: images.count,
                labels: labels.len(),
            });
        }
        let samples = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| classes.is_empty() || classes.contains(&(l as i32)))
            .map(|(i, &l)| DataSample {
                features: images.scaled(i),
                label: l as i32,
                origin: i,
            })
            .collect();
        Self::new(images.dim(), samples)
    }

    pub fn load(images: &Path, labels: &Path, classes: &[i32]) -> Result<Self> {
        let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
        let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
        Self::from_idx(&read_idx_images(&img)?, &parse_idx_labels(&lab)?, classes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[DataSample<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<DataSample<T>> {
        self.samples
    }

    pub fn count_label(&self, label: i32) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Mean per-dimension power `E[x_j^2]` over the dataset.
    pub fn mean_power(&self) -> T {
        mean_power(self.samples.iter().map(|s| s.features.as_slice()))
    }
}

pub fn mean_power<'a, T: Scalar>(rows: impl IntoIterator<Item = &'a [T]>) -> T {
    let mut total = 0.0f64;
    let mut n = 0usize;
    for r in rows {
        total += r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        n += r.len();
    }
    if n == 0 {
        T::zero()
    } else {
        T::lit(total / n as f64)
    }
}

/// Keeps classes `positive` and `negative`, relabelled `+1` and `-1`.
pub fn build_binary_subset<T: Scalar>(
    dataset: &Dataset<T>,
    positive: i32,
    negative: i32,
) -> Result<Dataset<T>> {
    for class in [positive, negative] {
        if dataset.count_label(class) == 0 {
            return Err(Error::EmptyClass(class));
        }
    }
    let samples = dataset
        .samples
        .iter()
        .filter(|s| s.label == positive || s.label == negative)
        .map(|s| DataSample {
            label: if s.label == positive { 1 } else { -1 },
            ..s.clone()
        })
        .collect();
    Dataset::new(dataset.dim, samples)
}

/// Keeps only `classes`, labels unchanged. Every class must be present.
pub fn build_class_subset<T: Scalar>(dataset: &Dataset<T>, classes: &[i32]) -> Result<Dataset<T>> {
    for &class in classes {
        if dataset.count_label(class) == 0 {
            return Err(Error::EmptyClass(class));
        }
    }
    let samples = dataset
        .samples
        .iter()
        .filter(|s| classes.contains(&s.label))
        .cloned()
        .collect();
    Dataset::new(dataset.dim, samples)
}

/// Local data held by one edge device.
///
/// `samples` is the visible buffer of exactly `N` entries; `reserve` holds the
/// device's remaining local data, used to top the buffer back up after an upload.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceBuffer<T> {
    pub device_id: usize,
    pub samples: Vec<DataSample<T>>,
    pub reserve: Vec<DataSample<T>>,
}

impl<T: Clone> DeviceBuffer<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Removes buffer entry `index`, refilling its slot from the reserve when possible.
    pub fn take(&mut self, index: usize) -> DataSample<T> {
        match self.reserve.pop() {
            Some(fresh) => std::mem::replace(&mut self.samples[index], fresh),
            None => self.samples.remove(index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceDistribution {
    /// Uniform sampling without replacement from the shuffled pool.
    #[default]
    Iid,
    /// Devices are dealt contiguous runs of the label-sorted pool (non-IID).
    LabelSorted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed_size: usize,
    pub buffer_size: usize,
    pub devices: usize,
    #[serde(default)]
    pub reserve_per_device: usize,
    pub test_size: usize,
    #[serde(default)]
    pub distribution: DeviceDistribution,
}

impl SplitSpec {
    pub fn required(&self) -> usize {
        self.seed_size + self.devices * (self.buffer_size + self.reserve_per_device) + self.test_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub seed: Vec<DataSample<T>>,
    pub devices: Vec<DeviceBuffer<T>>,
    pub test: Vec<DataSample<T>>,
}

impl<T> Partition<T> {
    pub fn origins(&self) -> impl Iterator<Item = usize> + '_ {
        self.seed
            .iter()
            .chain(self.test.iter())
            .chain(
                self.devices
                    .iter()
                    .flat_map(|d| d.samples.iter().chain(d.reserve.iter())),
            )
            .map(|s| s.origin)
    }
}

/// Splits `dataset` into a class-stratified seed set, device buffers and a test set.
pub fn partition<T: Scalar>(
    dataset: &Dataset<T>,
    spec: &SplitSpec,
    streams: &RngStreams,
) -> Result<Partition<T>> {
    let needed = spec.required();
    if dataset.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            available: dataset.len(),
        });
    }
    let mut rng = streams.stream(Purpose::Partition, 0);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);

    let mut classes: Vec<i32> = dataset.samples.iter().map(|s| s.label).collect();
    classes.sort_unstable();
    classes.dedup();

    // Round-robin over classes so the coarse initial model sees every class.
    let mut seed_idx = Vec::with_capacity(spec.seed_size);
    let mut per_class: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| {
            order
                .iter()
                .copied()
                .filter(|&i| dataset.samples[i].label == c)
                .rev()
                .collect()
        })
        .collect();
    'outer: while seed_idx.len() < spec.seed_size {
        let mut progressed = false;
        for bucket in per_class.iter_mut() {
            if seed_idx.len() == spec.seed_size {
                break 'outer;
            }
            if let Some(i) = bucket.pop() {
                seed_idx.push(i);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    let mut used = vec![false; dataset.len()];
    for &i in &seed_idx {
        used[i] = true;
    }
    let mut rest: Vec<usize> = order.into_iter().filter(|&i| !used[i]).collect();

    let test_idx: Vec<usize> = rest.drain(..spec.test_size).collect();
    let per_device = spec.buffer_size + spec.reserve_per_device;
    let mut pool: Vec<usize> = rest.drain(..spec.devices * per_device).collect();
    if spec.distribution == DeviceDistribution::LabelSorted {
        pool.sort_by_key(|&i| (dataset.samples[i].label, i));
    }

    let take = |idx: &[usize]| -> Vec<DataSample<T>> {
        idx.iter().map(|&i| dataset.samples[i].clone()).collect()
    };
    let devices = pool
        .chunks(per_device)
        .enumerate()
        .map(|(device_id, chunk)| {
            let mut chunk = chunk.to_vec();
            if spec.distribution == DeviceDistribution::LabelSorted {
                chunk.shuffle(&mut rng);
            }
            let (buf, res) = chunk.split_at(spec.buffer_size);
            DeviceBuffer {
                device_id,
                samples: take(buf),
                reserve: take(res),
            }
        })
        .collect();

    Ok(Partition {
        seed: take(&seed_idx),
        devices,
        test: take(&test_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn synthetic_images(count: usize, rows: usize, cols: usize) -> Vec<u8> {
        let raw = RawImages {
            count,
            rows,
            cols,
            pixels: (0..count * rows * cols).map(|i| (i % 256) as u8).collect(),
        };
        raw.encode()
    }

    fn toy_dataset(n: usize) -> Dataset<f64> {
        let samples = (0..n)
            .map(|i| DataSample {
                features: vec![i as f64 / n as f64, 0.5],
                label: if i % 2 == 0 { 3 } else { 5 },
                origin: i,
            })
            .collect();
        Dataset::new(2, samples).unwrap()
    }

    #[test]
    fn single_white_pixel() {
        let bytes = RawImages {
            count: 1,
            rows: 1,
            cols: 1,
            pixels: vec![255],
        }
        .encode();
        let parsed: Vec<Vec<f64>> = parse_idx_images(&bytes).unwrap();
        assert_eq!(parsed, vec![vec![1.0]]);
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = synthetic_images(2, 2, 2);
        bytes[3] = 0x01;
        assert!(matches!(
            parse_idx_images::<f32>(&bytes),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            parse_idx_labels(&synthetic_images(1, 1, 1)),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = synthetic_images(3, 2, 2);
        let err = parse_idx_images::<f64>(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
        assert!(matches!(
            parse_idx_images::<f64>(&bytes[..6]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn labels_parse_and_range_check() {
        assert_eq!(parse_idx_labels(&encode_idx_labels(&[0])).unwrap(), vec![0]);
        let err = parse_idx_labels(&encode_idx_labels(&[1, 10])).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { index: 1, label: 10 }));
    }

    #[test]
    fn reparse_is_identical() {
        let bytes = synthetic_images(4, 3, 3);
        let a: Vec<Vec<f32>> = parse_idx_images(&bytes).unwrap();
        let b: Vec<Vec<f32>> = parse_idx_images(&bytes).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn image_label_count_mismatch() {
        let raw = read_idx_images(&synthetic_images(3, 1, 1)).unwrap();
        let err = Dataset::<f64>::from_idx(&raw, &[1, 2], &[]).unwrap_err();
        assert!(matches!(err, Error::CountMismatch { images: 3, labels: 2 }));
    }

    #[test]
    fn binary_subset_maps_labels() {
        let ds = toy_dataset(10);
        let bin = build_binary_subset(&ds, 3, 5).unwrap();
        assert_eq!(bin.len(), 10);
        assert!(bin.samples().iter().all(|s| s.label == 1 || s.label == -1));
        assert_eq!(bin.count_label(1), 5);
        assert!(matches!(
            build_binary_subset(&ds, 3, 7),
            Err(Error::EmptyClass(7))
        ));
    }

    #[test]
    fn partition_shapes_and_disjointness() {
        let ds = toy_dataset(400);
        let spec = SplitSpec {
            seed_size: 20,
            buffer_size: 10,
            devices: 10,
            reserve_per_device: 5,
            test_size: 100,
            distribution: DeviceDistribution::Iid,
        };
        let p = partition(&ds, &spec, &RngStreams::new(1)).unwrap();
        assert_eq!(p.seed.len(), 20);
        assert_eq!(p.seed.iter().filter(|s| s.label == 3).count(), 10);
        assert_eq!(p.devices.len(), 10);
        assert!(p.devices.iter().all(|d| d.len() == 10 && d.reserve.len() == 5));
        assert_eq!(p.test.len(), 100);
        let ids: Vec<usize> = p.origins().collect();
        let unique: HashSet<usize> = ids.iter().copied().collect();
        assert_eq!(ids.len(), unique.len());
        assert_eq!(ids.len(), spec.required());

        let again = partition(&ds, &spec, &RngStreams::new(1)).unwrap();
        assert_eq!(p, again);
        let other = partition(&ds, &spec, &RngStreams::new(2)).unwrap();
        assert_ne!(p, other);
    }

    #[test]
    fn partition_needs_enough_data() {
        let ds = toy_dataset(50);
        let spec = SplitSpec {
            seed_size: 10,
            buffer_size: 10,
            devices: 10,
            reserve_per_device: 0,
            test_size: 10,
            distribution: DeviceDistribution::Iid,
        };
        assert!(matches!(
            partition(&ds, &spec, &RngStreams::new(0)),
            Err(Error::InsufficientData { needed: 120, .. })
        ));
    }

    #[test]
    fn label_sorted_devices_are_skewed() {
        let ds = toy_dataset(200);
        let spec = SplitSpec {
            seed_size: 10,
            buffer_size: 10,
            devices: 4,
            reserve_per_device: 0,
            test_size: 10,
            distribution: DeviceDistribution::LabelSorted,
        };
        let p = partition(&ds, &spec, &RngStreams::new(3)).unwrap();
        assert!(p.devices[0].samples.iter().all(|s| s.label == 3));
        assert!(p.devices[3].samples.iter().all(|s| s.label == 5));
    }

    #[test]
    fn take_refills_from_reserve() {
        let s = |o| DataSample {
            features: vec![0.0f64],
            label: 1,
            origin: o,
        };
        let mut buf = DeviceBuffer {
            device_id: 0,
            samples: vec![s(0), s(1)],
            reserve: vec![s(2)],
        };
        assert_eq!(buf.take(0).origin, 0);
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.samples[0].origin, 2);
        assert_eq!(buf.take(0).origin, 2);
        assert_eq!(buf.len(), 1);
    }
}
