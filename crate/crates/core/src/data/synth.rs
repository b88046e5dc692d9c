use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

/// Gaussian-blob classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub dim: usize,
    pub n_classes: usize,
    /// Minimum pairwise distance between class centroids, in units of the blob std.
    pub separation: f64,
    #[serde(default = "one")]
    pub blob_std: f64,
}

fn one() -> f64 {
    1.0
}

/// Balanced Gaussian blobs with unit-variance noise around seeded centroids.
///
/// Centroids are rejection-sampled in a growing cube until every pair is at least
/// `separation` apart. Values are rounded to `f32`.
pub fn synthetic_dataset(seed: u64, spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    let SyntheticSpec {
        n_samples,
        dim,
        n_classes,
        separation,
        blob_std,
    } = *spec;
    if n_classes < 2 || dim == 0 || n_samples < n_classes {
        return Err(DataError::Invalid(
            "synthetic data needs n_classes >= 2, dim >= 1 and n_samples >= n_classes".into(),
        ));
    }
    if !(separation > 0.0) || !(blob_std > 0.0) {
        return Err(DataError::Invalid("separation and blob_std must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = centroids(&mut rng, dim, n_classes, separation * blob_std);

    let mut labels: Vec<u32> = (0..n_samples).map(|i| (i % n_classes) as u32).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n_samples * dim);
    for &label in &labels {
        let c = &centroids[label as usize];
        features.extend(c.iter().map(|&m| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (m + blob_std * z) as f32
        }));
    }
    Dataset::new(
        format!("synthetic-{n_classes}c-{dim}d"),
        dim,
        n_classes,
        features,
        labels,
    )
}

fn centroids(rng: &mut ChaCha8Rng, dim: usize, n: usize, min_dist: f64) -> Vec<Vec<f64>> {
    let mut half_width = min_dist;
    let mut failures = 0;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(-half_width..=half_width)).collect();
        let ok = out.iter().all(|c| {
            c.iter()
                .zip(&cand)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= min_dist
        });
        if ok {
            out.push(cand);
        } else {
            failures += 1;
            if failures % 200 == 0 {
                half_width *= 1.1;
            }
        }
    }
    out
}

/// Splits off a seeded held-out fraction as a test set.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::Invalid("test_fraction must lie in [0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((data.len() as f64) * test_fraction).round() as usize;
    let (test, train) = order.split_at(n_test.clamp(1, data.len() - 1));
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train)?, data.subset(&test)?))
}
