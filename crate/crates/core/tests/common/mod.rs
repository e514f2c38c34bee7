#![allow(dead_code)]

use hiersign_core::config::{fork_rng, Purpose, StreamLabel, StreamRng};
use hiersign_core::dataio::LabeledDataset;
use rand::Rng;

pub fn rng(seed: u64) -> StreamRng {
    fork_rng(seed, StreamLabel::new(Purpose::Probe))
}

/// `n` random images: each pixel is nonzero with probability `density`.
/// Class `c` brightens a class-specific band of pixels so the task is
/// learnable.
pub fn random_images(n: usize, dim: usize, classes: usize, density: f64, seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let band = dim / classes;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.random_range(0..classes);
        let row: Vec<f32> = (0..dim)
            .map(|j| {
                let base = if r.random::<f64>() < density { r.random::<f32>() * 0.5 } else { 0.0 };
                if j / band == c && r.random::<f64>() < 0.5 {
                    (base + 0.5).min(1.0)
                } else {
                    base
                }
            })
            .collect();
        rows.push(row);
        labels.push(c as u8);
    }
    LabeledDataset::from_dense(&rows, labels, classes).unwrap()
}

/// Writes `n_train`/`n_test` random images as IDX files into `dir`.
pub fn write_idx_dir(dir: &std::path::Path, n_train: usize, n_test: usize, seed: u64) {
    use hiersign_core::dataio::{write_idx_images, write_idx_labels};
    for (split, n, gzip) in [("train", n_train, true), ("t10k", n_test, false)] {
        let ds = random_images(n, 784, 10, 0.15, seed + n as u64);
        let pixels: Vec<u8> = (0..n)
            .flat_map(|i| ds.image(i).into_iter().map(|v| (v * 255.0).round() as u8))
            .collect();
        let ext = if gzip { ".gz" } else { "" };
        let split = if split == "t10k" { "test" } else { split };
        write_idx_images(&dir.join(format!("{split}-images-idx3-ubyte{ext}")), &pixels, n, 28, 28, gzip).unwrap();
        write_idx_labels(&dir.join(format!("{split}-labels-idx1-ubyte{ext}")), ds.labels(), gzip).unwrap();
    }
}
