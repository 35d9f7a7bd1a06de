//! MNIST loading, a synthetic stand-in, and deterministic minibatching.

pub mod idx;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CLASSES, IMAGE_PIXELS};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub use idx::{encode_images, encode_labels, parse_idx, parse_images, parse_labels, Idx};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
/// Held-out tail of the training file used for validation loss.
pub const VALID_SIZE: usize = 10_000;

/// Standard deviation of the per-pixel noise around each class prototype.
pub const SYNTHETIC_NOISE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
        })
    }
}

/// Flattened images (`N×784`, pixels in `[0, 1]`) with their labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    split: Split,
}

/// A gathered minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, split: Split) -> Result<Self> {
        let n = match images.shape() {
            [n, f] if *f == IMAGE_PIXELS => *n,
            s => return Err(Error::dim("dataset", format!("expected N×{IMAGE_PIXELS} images, got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::dim("dataset", format!("{n} images but {} labels", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= CLASSES) {
            return Err(Error::Validation(format!("label {l} outside 0..{CLASSES}")));
        }
        if let Some(p) = images.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Validation(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Dataset { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Ok(Batch {
            images: self.images.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// The first `limit` examples (or all of them) as one batch.
    pub fn head(&self, limit: usize) -> Result<Batch> {
        let idx: Vec<usize> = (0..limit.min(self.len())).collect();
        self.batch(&idx)
    }

    /// Splits off the last `n_valid` examples as a validation set. The two
    /// index ranges are disjoint by construction.
    pub fn split_tail(self, n_valid: usize) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        if n_valid == 0 || n_valid >= n {
            return Err(Error::Validation(format!(
                "cannot hold out {n_valid} of {n} examples"
            )));
        }
        let cut = n - n_valid;
        let train: Vec<usize> = (0..cut).collect();
        let valid: Vec<usize> = (cut..n).collect();
        let a = self.batch(&train)?;
        let b = self.batch(&valid)?;
        Ok((
            Dataset::new(a.images, a.labels, Split::Train)?,
            Dataset::new(b.images, b.labels, Split::Valid)?,
        ))
    }
}

/// Loads the MNIST training files from `dir` and holds out the last
/// [`VALID_SIZE`] images for validation.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read(&path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!(
                    "cannot read {} ({e}); expected {TRAIN_IMAGES} and {TRAIN_LABELS} (uncompressed) in {}",
                    path.display(),
                    dir.display()
                ),
            ))
        })
    };
    let images = parse_images(&read(TRAIN_IMAGES)?)?;
    let labels = parse_labels(&read(TRAIN_LABELS)?)?;
    let n = images.shape()[0];
    let flat = images.reshape(&[n, images.numel() / n])?;
    Dataset::new(flat, labels, Split::Train)?.split_tail(VALID_SIZE)
}

/// `n` examples in `classes` Gaussian blobs around random prototypes,
/// clipped to `[0, 1]`. Example `i` has label `i % classes`.
pub fn synthetic(rng: &mut RngState, n: usize, classes: usize) -> Result<Dataset> {
    if classes == 0 || classes > CLASSES {
        return Err(Error::Validation(format!("classes must be in 1..={CLASSES}, got {classes}")));
    }
    if n < classes {
        return Err(Error::Validation(format!("need at least {classes} examples, got {n}")));
    }
    let prototypes: Vec<f64> = (0..classes * IMAGE_PIXELS).map(|_| rng.next_f64()).collect();
    let mut pixels = Vec::with_capacity(n * IMAGE_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let proto = &prototypes[c * IMAGE_PIXELS..(c + 1) * IMAGE_PIXELS];
        pixels.extend(proto.iter().map(|&p| (p + SYNTHETIC_NOISE * rng.next_normal()).clamp(0.0, 1.0)));
        labels.push(c);
    }
    Dataset::new(Tensor::new(&[n, IMAGE_PIXELS], pixels)?, labels, Split::Train)
}

/// Endless stream of minibatch index lists. Each epoch is a fresh
/// permutation of `0..len` cut into batches; the last batch of an epoch may
/// be short.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    rng: RngState,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, rng: RngState) -> Result<Self> {
        if len == 0 || batch_size == 0 {
            return Err(Error::Validation(format!(
                "batching needs a non-empty dataset and batch size (len {len}, batch {batch_size})"
            )));
        }
        let mut it = BatchIterator {
            len,
            batch_size,
            rng,
            order: (0..len).collect(),
            pos: 0,
            epoch: 0,
        };
        it.rng.shuffle(&mut it.order);
        Ok(it)
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos == self.len {
            self.epoch += 1;
            self.pos = 0;
            self.order = (0..self.len).collect();
            self.rng.shuffle(&mut self.order);
        }
        let end = (self.pos + self.batch_size).min(self.len);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_indices())
    }
}
