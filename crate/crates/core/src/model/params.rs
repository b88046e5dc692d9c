use serde::{Deserialize, Serialize};

use super::aggregate::{decay, StalenessMode};
use super::ModelError;

/// Learning-rate schedule a client would follow without decay, as a function of its update count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseSchedule {
    #[default]
    Constant,
    /// `eta_init / sqrt(1 + u)`
    InverseSqrt,
}

/// Protocol and optimiser constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub eta_init: f64,
    pub eta_min: f64,
    pub beta: f64,
    /// Inter-server age spread threshold. `None` derives `n_clients / (5 n_servers)`.
    pub h_inter: Option<f64>,
    pub h_intra: f64,
    pub phi: f64,
    pub eta_a: f64,
    pub eta_server: f64,
    pub alpha_fedasync: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub staleness_mode: StalenessMode,
    pub base_schedule: BaseSchedule,
    /// Disabling leaves every client on the base schedule.
    pub decay_enabled: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta_init: 0.05,
            eta_min: 1e-6,
            beta: 0.05,
            h_inter: None,
            h_intra: 350.0,
            phi: 1.5,
            eta_a: 0.6,
            eta_server: 0.6,
            alpha_fedasync: 0.5,
            local_epochs: 1,
            batch_size: 32,
            staleness_mode: StalenessMode::Dampened,
            base_schedule: BaseSchedule::Constant,
            decay_enabled: true,
        }
    }
}

impl HyperParams {
    /// Table defaults, including the larger initial client learning rate.
    pub fn table_defaults() -> Self {
        Self {
            eta_init: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Rejected(msg.to_string()));
        if !(self.eta_min > 0.0 && self.eta_min <= self.eta_init) {
            return bad("hyperparams: need 0 < eta_min <= eta_init");
        }
        if !(self.beta >= 0.0) {
            return bad("hyperparams: beta must be >= 0");
        }
        if !(self.phi > 0.0) {
            return bad("hyperparams: phi must be > 0");
        }
        if !(self.eta_a > 0.0 && self.eta_a <= 1.0) {
            return bad("hyperparams: eta_a must lie in (0, 1]");
        }
        if !(self.eta_server > 0.0 && self.eta_server <= 1.0) {
            return bad("hyperparams: eta_server must lie in (0, 1]");
        }
        if matches!(self.h_inter, Some(h) if !(h > 0.0)) || !(self.h_intra > 0.0) {
            return bad("hyperparams: h_inter and h_intra must be > 0");
        }
        if !(self.alpha_fedasync >= 0.0) {
            return bad("hyperparams: alpha_fedasync must be >= 0");
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return bad("hyperparams: local_epochs and batch_size must be >= 1");
        }
        Ok(())
    }

    pub fn h_inter_for(&self, n_clients: usize, n_servers: usize) -> f64 {
        self.h_inter
            .unwrap_or(n_clients as f64 / (5.0 * n_servers as f64))
    }

    pub fn base_lr(&self, updates: u64) -> f64 {
        match self.base_schedule {
            BaseSchedule::Constant => self.eta_init,
            BaseSchedule::InverseSqrt => self.eta_init / (1.0 + updates as f64).sqrt(),
        }
    }

    /// Learning rate handed back to a client after its `u_k`-th update.
    pub fn client_lr(&self, u_k: u64, u_mean: f64) -> f64 {
        let base = self.base_lr(u_k);
        if self.decay_enabled {
            decay(base, u_k, u_mean, self.beta, self.eta_min)
        } else {
            base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        HyperParams::default().validate().unwrap();
        HyperParams::table_defaults().validate().unwrap();
    }

    #[test]
    fn h_inter_from_client_count() {
        assert_eq!(HyperParams::default().h_inter_for(100, 4), 5.0);
    }

    #[test]
    fn decay_switch() {
        let mut hp = HyperParams::default();
        assert!(hp.client_lr(30, 10.0) < hp.eta_init);
        hp.decay_enabled = false;
        assert_eq!(hp.client_lr(30, 10.0), hp.eta_init);
    }

    #[test]
    fn inverse_sqrt_schedule() {
        let hp = HyperParams {
            base_schedule: BaseSchedule::InverseSqrt,
            ..HyperParams::default()
        };
        assert!((hp.base_lr(3) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn rejects_eta_min_above_init() {
        let hp = HyperParams {
            eta_min: 1.0,
            ..HyperParams::default()
        };
        assert!(hp.validate().is_err());
    }
}
