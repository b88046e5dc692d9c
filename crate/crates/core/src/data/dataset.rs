use serde::{Deserialize, Serialize};

use super::DataError;

/// Labelled samples stored row-major in 32-bit precision.
///
/// Features are kept as `f32` regardless of the model scalar so that a dataset
/// round-trips bit-exactly through the on-disk cache format.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    dim: usize,
    n_classes: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        n_classes: usize,
        features: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self, DataError> {
        if dim == 0 || n_classes == 0 {
            return Err(DataError::Invalid("dim and n_classes must be positive".into()));
        }
        if labels.is_empty() {
            return Err(DataError::Invalid("dataset has no samples".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(DataError::Invalid(format!(
                "feature buffer holds {} values, expected {} x {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite feature at flat index {pos}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            n_classes,
            features,
            labels,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Copies the selected rows into a new dataset, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(DataError::Invalid(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.name.clone(), self.dim, self.n_classes, features, labels)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Sorted set of labels present in the dataset.
    pub fn label_set(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(l, _)| l)
            .collect()
    }
}

/// A train/test pair with matching dimensions.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Summary of a dataset that is recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub samples: usize,
    pub dim: usize,
    pub n_classes: usize,
}

impl From<&Dataset> for DatasetInfo {
    fn from(d: &Dataset) -> Self {
        Self {
            name: d.name.clone(),
            samples: d.len(),
            dim: d.dim,
            n_classes: d.n_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new("t", 2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![0, 2, 2]).unwrap()
    }

    #[test]
    fn rows_and_counts() {
        let d = tiny();
        assert_eq!(d.row(1), &[2.0, 3.0]);
        assert_eq!(d.class_counts(), vec![1, 0, 2]);
        assert_eq!(d.label_set(), vec![0, 2]);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let err = Dataset::new("t", 1, 2, vec![0.0], vec![2]).unwrap_err();
        assert!(err.to_string().contains("label 2"));
    }

    #[test]
    fn rejects_non_finite_feature() {
        assert!(Dataset::new("t", 1, 2, vec![f32::NAN], vec![0]).is_err());
    }

    #[test]
    fn subset_keeps_order() {
        let d = tiny().subset(&[2, 0]).unwrap();
        assert_eq!(d.labels(), &[2, 0]);
        assert_eq!(d.row(0), &[4.0, 5.0]);
    }
}
