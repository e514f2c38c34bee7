//! Labeled image datasets: IDX loading, IID / Dirichlet partitioning
//! across the hierarchy, and minibatch sampling.

mod idx;
mod partition;

pub use idx::{load_idx, locate_idx_files, write_idx_images, write_idx_labels, IdxFiles};
pub use partition::{
    dirichlet_proportions, largest_remainder, partition, partition_dirichlet, partition_iid,
    partition_iid_with_shard, sample_batch, PartitionedData, Provenance,
};

use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated payload, need {expected} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("sample {index} has label {label}, but num_classes = {num_classes}")]
    InvalidLabel {
        index: usize,
        label: u8,
        num_classes: usize,
    },
    #[error("sample {index} has a pixel value {value} outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },
    #[error("dataset is empty")]
    Empty,
    #[error("{samples} samples cannot fill {devices} device shards")]
    TooFewSamples { samples: usize, devices: usize },
    #[error("degenerate Dirichlet draw: an edge could not give every device a sample after {attempts} attempts")]
    DegenerateDraw { attempts: usize },
    #[error("hierarchy: {0}")]
    Hierarchy(#[from] crate::config::ConfigError),
}

/// Images with integer class labels. Pixels are stored sparsely (only
/// nonzero entries), which is what the MLP forward/backward iterate over;
/// [`LabeledDataset::image`] gives the dense, flattened view.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    num_classes: usize,
    offsets: Vec<usize>,
    pixel_index: Vec<u32>,
    pixel_value: Vec<f32>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    /// Builds a dataset from raw 8-bit pixels (row-major, `dim` per image),
    /// scaling by 1/255.
    pub fn from_u8_pixels(
        pixels: &[u8],
        dim: usize,
        labels: Vec<u8>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        let images = pixels.len().checked_div(dim).unwrap_or(0);
        if images != labels.len() {
            return Err(DataError::CountMismatch {
                images,
                labels: labels.len(),
            });
        }
        let mut builder = Builder::new(dim, labels.len());
        for img in pixels.chunks_exact(dim.max(1)).take(images) {
            builder.push(img.iter().map(|&p| p as f32 / 255.0));
        }
        builder.finish(labels, num_classes)
    }

    /// Builds a dataset from dense rows of already-normalized pixels.
    pub fn from_dense(
        rows: &[Vec<f32>],
        labels: Vec<u8>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if rows.len() != labels.len() {
            return Err(DataError::CountMismatch {
                images: rows.len(),
                labels: labels.len(),
            });
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut builder = Builder::new(dim, rows.len());
        for row in rows {
            assert_eq!(row.len(), dim, "ragged image rows");
            builder.push(row.iter().copied());
        }
        builder.finish(labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixels per image.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Nonzero pixels of image `i` as `(indices, values)`.
    pub fn sparse_image(&self, i: usize) -> (&[u32], &[f32]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.pixel_index[r.clone()], &self.pixel_value[r])
    }

    /// Dense, flattened image `i` with values in `[0, 1]`.
    pub fn image(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let (idx, val) = self.sparse_image(i);
        for (&j, &v) in idx.iter().zip(val) {
            out[j as usize] = v as f64;
        }
        out
    }

    /// Sample indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    pub fn class_histogram<'a>(&self, indices: impl IntoIterator<Item = &'a usize>) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in indices {
            h[self.label(i)] += 1;
        }
        h
    }

    /// A new dataset holding the given samples, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut builder = Builder::new(self.dim, indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (idx, val) = self.sparse_image(i);
            builder.push_sparse(idx, val);
            labels.push(self.labels[i]);
        }
        builder
            .finish(labels, self.num_classes)
            .expect("subset of a valid dataset is valid")
    }

    /// `n` samples drawn without replacement (all of them if `n >= len`),
    /// kept in their original order.
    pub fn subsample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut picked = index::sample(rng, self.len(), n).into_vec();
        picked.sort_unstable();
        self.subset(&picked)
    }
}

struct Builder {
    dim: usize,
    offsets: Vec<usize>,
    pixel_index: Vec<u32>,
    pixel_value: Vec<f32>,
}

impl Builder {
    fn new(dim: usize, capacity: usize) -> Self {
        let mut offsets = Vec::with_capacity(capacity + 1);
        offsets.push(0);
        Self {
            dim,
            offsets,
            pixel_index: Vec::new(),
            pixel_value: Vec::new(),
        }
    }

    fn push(&mut self, pixels: impl Iterator<Item = f32>) {
        for (j, v) in pixels.enumerate() {
            if v != 0.0 {
                self.pixel_index.push(j as u32);
                self.pixel_value.push(v);
            }
        }
        self.offsets.push(self.pixel_index.len());
    }

    fn push_sparse(&mut self, idx: &[u32], val: &[f32]) {
        self.pixel_index.extend_from_slice(idx);
        self.pixel_value.extend_from_slice(val);
        self.offsets.push(self.pixel_index.len());
    }

    fn finish(self, labels: Vec<u8>, num_classes: usize) -> Result<LabeledDataset, DataError> {
        for (index, &label) in labels.iter().enumerate() {
            if label as usize >= num_classes {
                return Err(DataError::InvalidLabel {
                    index,
                    label,
                    num_classes,
                });
            }
        }
        for i in 0..labels.len() {
            let r = self.offsets[i]..self.offsets[i + 1];
            if let Some(&value) = self.pixel_value[r].iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(DataError::PixelOutOfRange { index: i, value });
            }
        }
        Ok(LabeledDataset {
            dim: self.dim,
            num_classes,
            offsets: self.offsets,
            pixel_index: self.pixel_index,
            pixel_value: self.pixel_value,
            labels,
        })
    }
}
