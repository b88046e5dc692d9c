//! IDX (MNIST) and CIFAR-10 binary readers.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(DataError::Truncated {
                path: self.path.display().to_string(),
                needed: self.pos + n,
                found: self.bytes.len(),
            }),
        }
    }

    fn u32_be(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<(), DataError> {
        let found = self.u32_be()?;
        if found != expected {
            return Err(DataError::BadMagic {
                path: self.path.display().to_string(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads an IDX image/label file pair; pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;

    let mut images = Cursor {
        bytes: &image_bytes,
        pos: 0,
        path: images_path,
    };
    images.magic(IDX_IMAGES_MAGIC)?;
    let n_images = images.u32_be()? as usize;
    let rows = images.u32_be()? as usize;
    let cols = images.u32_be()? as usize;
    let pixels = images.take(n_images * rows * cols)?;

    let mut labels = Cursor {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path,
    };
    labels.magic(IDX_LABELS_MAGIC)?;
    let n_labels = labels.u32_be()? as usize;
    let raw_labels = labels.take(n_labels)?;

    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let n_classes = raw_labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    let features = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let labels = raw_labels.iter().map(|&l| l as u32).collect();
    let name = images_path
        .file_name()
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(name, rows * cols, n_classes, features, labels)
}

/// Standard MNIST file names inside `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset), DataError> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Reads CIFAR-10 binary batches, converting each image to 16x16 grayscale.
pub fn load_cifar_batches(paths: &[&Path]) -> Result<Dataset, DataError> {
    const OUT: usize = CIFAR_SIDE / 2;
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for &path in paths {
        let bytes = read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(DataError::Truncated {
                path: path.display().to_string(),
                needed: (bytes.len() / CIFAR_RECORD + 1) * CIFAR_RECORD,
                found: bytes.len(),
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            labels.push(record[0] as u32);
            let px = &record[1..];
            let gray = |i: usize| {
                0.299 * px[i] as f32 + 0.587 * px[plane + i] as f32 + 0.114 * px[2 * plane + i] as f32
            };
            for oy in 0..OUT {
                for ox in 0..OUT {
                    let (y, x) = (2 * oy, 2 * ox);
                    let sum = gray(y * CIFAR_SIDE + x)
                        + gray(y * CIFAR_SIDE + x + 1)
                        + gray((y + 1) * CIFAR_SIDE + x)
                        + gray((y + 1) * CIFAR_SIDE + x + 1);
                    features.push(sum / (4.0 * 255.0));
                }
            }
        }
    }
    Dataset::new("cifar10-gray16", OUT * OUT, 10, features, labels)
}
