use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::protocol::Algorithm;

use super::SimError;

/// Server-side processing times in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationMs {
    pub spyker: f64,
    pub sync_spyker: f64,
    pub fedasync: f64,
    pub fedavg: f64,
    pub hierfavg: f64,
}

impl Default for AggregationMs {
    fn default() -> Self {
        Self {
            spyker: 2.0,
            sync_spyker: 2.0,
            fedasync: 2.0,
            fedavg: 15.0,
            hierfavg: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingDelayModel {
    /// Per-client Gaussian draw, fixed for the whole run.
    #[default]
    Gaussian,
    /// Every client uses the nominal local-training time.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComputeProfile {
    /// Nominal per-epoch local training time.
    pub local_training_ms: f64,
    pub training_delay: TrainingDelayModel,
    pub delay_mean_ms: f64,
    pub delay_std_ms: f64,
    pub aggregation_ms: AggregationMs,
}

impl Default for ComputeProfile {
    fn default() -> Self {
        Self {
            local_training_ms: 200.0,
            training_delay: TrainingDelayModel::Gaussian,
            delay_mean_ms: 150.0,
            delay_std_ms: 7.5,
            aggregation_ms: AggregationMs::default(),
        }
    }
}

impl ComputeProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let a = &self.aggregation_ms;
        let all = [
            self.local_training_ms,
            self.delay_mean_ms,
            a.spyker,
            a.sync_spyker,
            a.fedasync,
            a.fedavg,
            a.hierfavg,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.delay_mean_ms > 0.0) {
            return Err(SimError::Config("compute delays must be finite, non-negative, mean > 0".into()));
        }
        if !(self.delay_std_ms >= 0.0 && self.delay_std_ms.is_finite()) {
            return Err(SimError::Config("training delay std must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn aggregation_for(&self, algorithm: Algorithm) -> f64 {
        let a = &self.aggregation_ms;
        match algorithm {
            Algorithm::Spyker => a.spyker,
            Algorithm::SyncSpyker => a.sync_spyker,
            Algorithm::FedAsync => a.fedasync,
            Algorithm::FedAvg => a.fedavg,
            Algorithm::HierFavg => a.hierfavg,
        }
    }

    /// Per-epoch training time of one client, drawn once at setup.
    pub fn sample_training_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.training_delay {
            TrainingDelayModel::Fixed => self.local_training_ms,
            TrainingDelayModel::Gaussian => sample_positive_gaussian(self.delay_mean_ms, self.delay_std_ms, rng),
        }
    }
}

/// Gaussian draw, resampled until strictly positive.
pub fn sample_positive_gaussian<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, std).expect("validated parameters");
    loop {
        let v = normal.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}
