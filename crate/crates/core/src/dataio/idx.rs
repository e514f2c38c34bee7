//! IDX container format (big-endian header, magic `0x00000803` for
//! images and `0x00000801` for labels). Gzip-compressed files are
//! detected by their magic bytes and decompressed transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{DataError, LabeledDataset};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Parses header and payload; returns `(dims, payload)`.
fn parse(path: &Path, bytes: &[u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, Vec<u8>), DataError> {
    let header = 4 + 4 * ndims;
    let truncated = |expected| DataError::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    let found = be_u32(bytes, 0).ok_or_else(|| truncated(header))?;
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let dims = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| truncated(header))?;
    let need = header + dims.iter().product::<usize>();
    if bytes.len() < need {
        return Err(truncated(need));
    }
    Ok((dims, bytes[header..need].to_vec()))
}

/// Loads an image/label IDX pair. Pixels are scaled by 1/255; the class
/// count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let images = read_maybe_gz(images_path)?;
    let (dims, pixels) = parse(images_path, &images, IMAGES_MAGIC, 3)?;
    let labels = read_maybe_gz(labels_path)?;
    let (ldims, labels) = parse(labels_path, &labels, LABELS_MAGIC, 1)?;
    if dims[0] != ldims[0] {
        return Err(DataError::CountMismatch {
            images: dims[0],
            labels: ldims[0],
        });
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    LabeledDataset::from_u8_pixels(&pixels, dims[1] * dims[2], labels, num_classes)
}

fn write_bytes(path: &Path, bytes: &[u8], gzip: bool) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(io)?;
        fs::write(path, enc.finish().map_err(io)?).map_err(io)
    } else {
        fs::write(path, bytes).map_err(io)
    }
}

/// Writes `count` row-major `rows x cols` 8-bit images.
pub fn write_idx_images(
    path: &Path,
    pixels: &[u8],
    count: usize,
    rows: usize,
    cols: usize,
    gzip: bool,
) -> Result<(), DataError> {
    assert_eq!(pixels.len(), count * rows * cols, "pixel buffer size");
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend_from_slice(pixels);
    write_bytes(path, &bytes, gzip)
}

pub fn write_idx_labels(path: &Path, labels: &[u8], gzip: bool) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    write_bytes(path, &bytes, gzip)
}

/// Paths of a train (and optional test) IDX pair found in one directory.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

/// Looks for `*train-images*` / `*train-labels*` (and the `test`
/// counterparts) in `dir`, preferring EMNIST-digits file names.
pub fn locate_idx_files(dir: &Path) -> Option<IdxFiles> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let find = |split: &str, kind: &str| -> Option<PathBuf> {
        let needle = format!("{split}-{kind}");
        let mut hits: Vec<&PathBuf> = names
            .iter()
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.contains(&needle) && n.contains("idx"))
            })
            .collect();
        hits.sort_by_key(|p| !p.to_string_lossy().contains("emnist-digits"));
        hits.first().map(|p| (*p).clone())
    };
    Some(IdxFiles {
        train_images: find("train", "images")?,
        train_labels: find("train", "labels")?,
        test_images: find("test", "images"),
        test_labels: find("test", "labels"),
    })
}
