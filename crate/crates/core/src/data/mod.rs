//! Datasets: file loaders, synthetic tasks, non-iid partitioning and evaluation.

pub mod cache;
mod dataset;
mod idx;
mod partition;
mod synth;

pub use dataset::{Dataset, DatasetInfo, Split};
pub use idx::{load_cifar_batches, load_idx, load_mnist_dir, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{balanced_subset, partition_noniid, Partition, PartitionSpec};
pub use synth::{synthetic_dataset, train_test_split, SyntheticSpec};

use crate::model::{ModelError, TinyModel};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: String, expected: u32, found: u32 },
    #[error("{path}: truncated, needed {needed} bytes but file has {found}")]
    Truncated { path: String, needed: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("infeasible partition: {0}")]
    Infeasible(String),
}

/// Test accuracy of `model` on `test`; ties in the argmax go to the lowest class.
pub fn evaluate<S: Scalar>(model: &TinyModel<S>, test: &Dataset) -> Result<f64, ModelError> {
    model.accuracy(test)
}
