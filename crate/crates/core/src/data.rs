//! Dataset ingestion and seeded batch iteration.
//!
//! MNIST is read from the big-endian IDX container: images carry magic
//! `0x00000803` followed by count, rows and columns; labels carry
//! `0x00000801` followed by count. Pixels are scaled to `[0, 1]` and
//! standardized with mean 0.1307 and std 0.3081.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, CounterRng};

pub const MNIST_MEAN: f32 = 0.1307;
pub const MNIST_STD: f32 = 0.3081;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel standardization applied after scaling pixels to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn mnist() -> Self {
        Normalization {
            mean: vec![MNIST_MEAN],
            std: vec![MNIST_STD],
        }
    }
}

/// Images `N×C×H×W` (normalized) and integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub split: Split,
    images: Vec<f32>,
    labels: Vec<usize>,
    shape: [usize; 3],
    classes: usize,
    normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(
        id: impl Into<String>,
        split: Split,
        images: Vec<f32>,
        labels: Vec<usize>,
        shape: [usize; 3],
        classes: usize,
    ) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::dim("dataset", &[labels.len(), per], &[images.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                index: bad,
                bound: classes,
            });
        }
        Ok(Dataset {
            id: id.into(),
            split,
            images,
            labels,
            shape,
            classes,
            normalization: None,
        })
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = Some(n);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Stacks the given examples into an `[B, C, H, W]` tensor plus labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.shape;
        let t = Tensor::new([indices.len(), c, h, w], data).expect("non-empty batch");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` examples (all of them when `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        self.slice(0, n)
    }

    /// Examples `start..start + n`, clipped to the dataset.
    pub fn slice(&self, start: usize, n: usize) -> Dataset {
        let start = start.min(self.len());
        let end = (start + n).min(self.len());
        let il = self.image_len();
        Dataset {
            id: self.id.clone(),
            split: self.split,
            images: self.images[start * il..end * il].to_vec(),
            labels: self.labels[start..end].to_vec(),
            shape: self.shape,
            classes: self.classes,
            normalization: self.normalization.clone(),
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Average-pools every image by `factor` in both spatial dimensions.
    pub fn downsampled(&self, factor: usize) -> Result<Dataset> {
        let [c, h, w] = self.shape;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Parameter(format!("downsample factor {factor} does not divide {h}x{w}")));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (oh, ow) = (h / factor, w / factor);
        let inv = 1.0 / (factor * factor) as f32;
        let mut images = Vec::with_capacity(self.len() * c * oh * ow);
        for img in self.images.chunks(self.image_len()) {
            for plane in img.chunks(h * w) {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0f32;
                        for dy in 0..factor {
                            let row = (y * factor + dy) * w + x * factor;
                            acc += plane[row..row + factor].iter().sum::<f32>();
                        }
                        images.push(acc * inv);
                    }
                }
            }
        }
        Ok(Dataset {
            id: format!("{}_ds{factor}", self.id),
            split: self.split,
            images,
            labels: self.labels.clone(),
            shape: [c, oh, ow],
            classes: self.classes,
            normalization: self.normalization.clone(),
        })
    }

    /// Reinterprets each image with a new shape of the same size.
    pub fn reshaped(mut self, shape: [usize; 3]) -> Result<Dataset> {
        if shape.iter().product::<usize>() != self.image_len() {
            return Err(Error::dim("reshape dataset", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Parses an IDX3 image file into raw bytes plus `(count, rows, cols)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    if bytes.len() < 16 {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: 16,
            found: bytes.len(),
        });
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let (n, rows, cols) = (
        be_u32(bytes, 4) as usize,
        be_u32(bytes, 8) as usize,
        be_u32(bytes, 12) as usize,
    );
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((bytes[16..].to_vec(), n, rows, cols))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: 8,
            found: bytes.len(),
        });
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: 8 + n,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub fn normalize_pixel(byte: u8, mean: f32, std: f32) -> f32 {
    (byte as f32 / 255.0 - mean) / std
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (pixels, n, rows, cols) = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            message: format!("{} labels for {n} images", labels.len()),
        });
    }
    let images = pixels
        .iter()
        .map(|&b| normalize_pixel(b, MNIST_MEAN, MNIST_STD))
        .collect();
    let split = if n >= 60_000 { Split::Train } else { Split::Test };
    Ok(Dataset::new(
        "mnist",
        split,
        images,
        labels.into_iter().map(usize::from).collect(),
        [1, rows, cols],
        10,
    )?
    .with_normalization(Normalization::mnist()))
}

/// Standard MNIST file names below a directory.
#[derive(Clone, Debug)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Self {
        MnistFiles {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels]
            .iter()
            .all(|p| p.is_file())
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let mut train = load_mnist_idx(&self.train_images, &self.train_labels)?;
        let mut test = load_mnist_idx(&self.test_images, &self.test_labels)?;
        train.split = Split::Train;
        test.split = Split::Test;
        Ok((train, test))
    }
}

/// Gaussian class clusters in `dim` dimensions, stored as `[1, 1, dim]` images.
///
/// Class centers are random directions scaled to length `separation`;
/// each sample adds isotropic noise of standard deviation `spread`.
pub fn synthetic_blobs_with(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Parameter("synthetic_blobs needs at least 2 classes".into()));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::Parameter("synthetic_blobs needs per_class, dim >= 1".into()));
    }
    let mut rng = CounterRng::with_stream(seed, rng::stream::SYNTHETIC);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm * separation).collect()
        })
        .collect();
    let mut images = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            images.extend(center.iter().map(|&m| (m + spread * rng.normal()) as f32));
            labels.push(c);
        }
    }
    Dataset::new("blobs", Split::Train, images, labels, [1, 1, dim], classes)
}

pub fn synthetic_blobs(classes: usize, per_class: usize, dim: usize, seed: u64) -> Result<Dataset> {
    synthetic_blobs_with(classes, per_class, dim, 4.0, 1.0, seed)
}

/// Shuffling parameters. `(seed, epoch)` fully determines an epoch's order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn new(seed: u64, batch_size: usize) -> Self {
        BatchPlan {
            seed,
            batch_size,
            drop_last: false,
        }
    }

    /// Fisher–Yates permutation of `0..n` for `epoch`.
    pub fn permutation(&self, n: usize, epoch: usize) -> Vec<usize> {
        let key = rng::derive(rng::derive(self.seed, rng::stream::DATA_ORDER), epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        CounterRng::new(key).shuffle(&mut order);
        order
    }

    /// Index lists of each batch in `epoch`.
    pub fn batch_indices(&self, n: usize, epoch: usize) -> Result<Vec<Vec<usize>>> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Parameter(format!(
                "batch size {} must be in 1..={n}",
                self.batch_size
            )));
        }
        let order = self.permutation(n, epoch);
        Ok(order
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect())
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }
}

pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Ordered batches of one epoch.
pub fn batches<'a>(
    dataset: &'a Dataset,
    plan: &BatchPlan,
    epoch: usize,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    let indices = plan.batch_indices(dataset.len(), epoch)?;
    Ok(indices.into_iter().map(move |idx| {
        let (images, labels) = dataset.gather(&idx);
        Batch { images, labels }
    }))
}

/// Random shift-crop (zero padding `pad`) and horizontal flip, in place.
pub fn augment_batch(images: &mut Tensor<f32>, pad: usize, rng: &mut CounterRng) {
    let shape = images.shape().to_vec();
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let per = c * h * w;
    let mut scratch = vec![0.0f32; per];
    for img in images.data_mut().chunks_mut(per) {
        let dy = rng.below(2 * pad + 1) as isize - pad as isize;
        let dx = rng.below(2 * pad + 1) as isize - pad as isize;
        let flip = rng.below(2) == 1;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = y as isize + dy;
                    let sx0 = if flip { (w - 1 - x) as isize } else { x as isize };
                    let sx = sx0 + dx;
                    scratch[(ch * h + y) * w + x] =
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            img[(ch * h + sy as usize) * w + sx as usize]
                        } else {
                            0.0
                        };
                }
            }
        }
        img.copy_from_slice(&scratch);
    }
}

#[cfg(feature = "cifar")]
pub mod cifar {
    //! CIFAR-10 binary batches: 3073-byte records (label byte + 3072 pixels,
    //! channel-major 32×32).

    use super::*;

    pub const RECORD: usize = 3073;
    pub const MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
    pub const STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

    pub fn parse_batch(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::Length {
                path: path.to_path_buf(),
                expected: bytes.len().div_ceil(RECORD).max(1) * RECORD,
                found: bytes.len(),
            });
        }
        let mut images = Vec::with_capacity(bytes.len() / RECORD * 3072);
        let mut labels = Vec::with_capacity(bytes.len() / RECORD);
        for rec in bytes.chunks(RECORD) {
            if rec[0] >= 10 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("label byte {} out of range", rec[0]),
                });
            }
            labels.push(rec[0] as usize);
            for (i, &b) in rec[1..].iter().enumerate() {
                let ch = i / 1024;
                images.push(normalize_pixel(b, MEAN[ch], STD[ch]));
            }
        }
        Ok((images, labels))
    }

    pub fn load(paths: &[PathBuf], split: Split) -> Result<Dataset> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for p in paths {
            let (i, l) = parse_batch(&read_file(p)?, p)?;
            images.extend(i);
            labels.extend(l);
        }
        Ok(Dataset::new("cifar10", split, images, labels, [3, 32, 32], 10)?.with_normalization(
            Normalization {
                mean: MEAN.to_vec(),
                std: STD.to_vec(),
            },
        ))
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
    fn downsample_averages_blocks() {
        let images: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let d = Dataset::new("t", Split::Train, images, vec![0], [1, 4, 4], 2).unwrap();
        let small = d.downsampled(2).unwrap();
        assert_eq!(small.shape(), [1, 2, 2]);
        assert_eq!(small.images(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(d.downsampled(3).is_err());
    }

    #[test]
        fn parses_records() {
            let mut bytes = vec![3u8];
            bytes.extend(std::iter::repeat(255u8).take(3072));
            let (img, lab) = parse_batch(&bytes, Path::new("x")).unwrap();
            assert_eq!(lab, vec![3]);
            assert!((img[0] - (1.0 - MEAN[0]) / STD[0]).abs() < 1e-6);
            assert!(parse_batch(&bytes[..100], Path::new("x")).is_err());
        }
    }
}
