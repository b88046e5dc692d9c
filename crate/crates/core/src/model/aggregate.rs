//! Aggregation and weighting rules used by the servers.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::{Age, ModelError, ModelVector};

/// Data-size weighted average `sum_k (d_k / d) W_k`.
pub fn fedavg_aggregate<S: Scalar>(
    updates: &[(&ModelVector<S>, usize)],
) -> Result<ModelVector<S>, ModelError> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| ModelError::Rejected("cannot aggregate an empty update list".into()))?;
    let total: usize = updates.iter().map(|(_, d)| d).sum();
    if updates.iter().any(|(_, d)| *d == 0) {
        return Err(ModelError::Rejected("every update needs a positive sample count".into()));
    }
    let mut acc = vec![S::zero(); first.dim()];
    let total = S::of_usize(total);
    for (model, d_k) in updates {
        first.check_dim(model)?;
        let weight = S::of_usize(*d_k) / total;
        for (a, &w) in acc.iter_mut().zip(model.as_slice()) {
            *a += weight * w;
        }
    }
    ModelVector::new(acc)
}

/// Polynomial staleness damping `(1 + tau)^(-alpha)`.
pub fn staleness_damping<S: Scalar>(staleness: u64, alpha: S) -> S {
    (S::one() + S::of_f64(staleness as f64)).powf(-alpha)
}

/// Staleness-damped asynchronous merge:
/// `W_global - s(tau) * (d_k / d) * (W_sent - W_returned)`.
pub fn fedasync_merge<S: Scalar>(
    global: &ModelVector<S>,
    sent: &ModelVector<S>,
    returned: &ModelVector<S>,
    staleness: u64,
    d_k: usize,
    d: usize,
    alpha: S,
) -> Result<ModelVector<S>, ModelError> {
    global.check_dim(sent)?;
    global.check_dim(returned)?;
    if d_k == 0 || d < d_k {
        return Err(ModelError::Rejected(format!(
            "data fraction {d_k}/{d} must satisfy 1 <= d_k <= d"
        )));
    }
    let coeff = staleness_damping(staleness, alpha) * S::of_usize(d_k) / S::of_usize(d);
    let delta = returned.sub(sent)?;
    global.add_scaled(&delta, coeff)
}

/// How a server turns the age gap of a client update into a merge weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StalenessMode {
    /// The raw age difference `A_server - A_sent`.
    Literal,
    /// `1 / (1 + A_server - A_sent)`.
    #[default]
    Dampened,
}

pub fn client_staleness_weight<S: Scalar>(
    server_age: Age<S>,
    sent_age: Age<S>,
    mode: StalenessMode,
) -> Result<S, ModelError> {
    if server_age < sent_age {
        return Err(ModelError::ProtocolViolation(format!(
            "update echoes age {} newer than server age {}",
            sent_age.0, server_age.0
        )));
    }
    let gap = server_age.0 - sent_age.0;
    Ok(match mode {
        StalenessMode::Literal => gap,
        StalenessMode::Dampened => S::one() / (S::one() + gap),
    })
}

/// `W_server + eta_server * weight * (W_client - W_server)`.
pub fn spyker_client_merge<S: Scalar>(
    server: &ModelVector<S>,
    client: &ModelVector<S>,
    weight: S,
    eta_server: S,
) -> Result<ModelVector<S>, ModelError> {
    if weight < S::zero() {
        return Err(ModelError::Rejected("merge weight must be non-negative".into()));
    }
    if !(eta_server > S::zero() && eta_server <= S::one()) {
        return Err(ModelError::Rejected("eta_server must lie in (0, 1]".into()));
    }
    server.moved_toward(client, eta_server * weight)
}

/// Client learning-rate decay for clients that update more often than average.
pub fn decay(base_lr: f64, u_k: u64, u_mean: f64, beta: f64, eta_min: f64) -> f64 {
    let u_k = u_k as f64;
    if u_k < u_mean {
        base_lr
    } else {
        eta_min.max(base_lr - beta * (u_k - u_mean))
    }
}

/// Sigmoid weight `1 / (1 + exp(-phi (A_j - A_i) / A_i))` for merging peer model `j` into `i`.
///
/// An age of zero is replaced by one in the denominator.
pub fn server_pair_weight<S: Scalar>(a_i: Age<S>, a_j: Age<S>, phi: S) -> S {
    let denom = a_i.0.max(S::one());
    let a = phi * (a_j.0 - a_i.0) / denom;
    S::one() / (S::one() + (-a).exp())
}

/// Age-weighted merge of peer model `(W_j, A_j)` into `(W_i, A_i)`.
pub fn server_merge<S: Scalar>(
    w_i: &ModelVector<S>,
    a_i: Age<S>,
    w_j: &ModelVector<S>,
    a_j: Age<S>,
    eta_a: S,
    phi: S,
) -> Result<(ModelVector<S>, Age<S>), ModelError> {
    if !(eta_a > S::zero() && eta_a <= S::one()) {
        return Err(ModelError::Rejected("eta_a must lie in (0, 1]".into()));
    }
    let coeff = eta_a * server_pair_weight(a_i, a_j, phi);
    let model = w_i.moved_toward(w_j, coeff)?;
    let age = (S::one() - coeff) * a_i.0 + coeff * a_j.0;
    // keep the convex combination inside [min, max] under rounding
    let age = age.max(a_i.0.min(a_j.0)).min(a_i.0.max(a_j.0));
    Ok((model, Age(age)))
}
