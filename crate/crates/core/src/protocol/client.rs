use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::model::{Age, ModelShape, ModelVector, TinyModel};
use crate::scalar::Scalar;

use super::message::{Message, NodeId};
use super::ProtocolError;

/// A training client bound to a single home server.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: NodeId,
    pub home: NodeId,
    pub data: Arc<Dataset>,
    pub shape: ModelShape,
    /// Per-epoch compute time, fixed for the whole run.
    pub training_delay_ms: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the most recent dispatch.
    pub lr: f64,
    rng: ChaCha8Rng,
}

impl ClientState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: NodeId,
        home: NodeId,
        data: Arc<Dataset>,
        shape: ModelShape,
        training_delay_ms: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            id,
            home,
            data,
            shape,
            training_delay_ms,
            epochs,
            batch_size,
            lr: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.data.len()
    }

    /// Trains on a dispatched model and returns the update plus its simulated duration.
    pub fn client_handle_dispatch<S: Scalar>(
        &mut self,
        from: NodeId,
        model: &ModelVector<S>,
        age: Age<S>,
        lr: f64,
    ) -> Result<(Message<S>, f64), ProtocolError> {
        if from != self.home {
            return Err(ProtocolError::Violation(format!(
                "client {} got a dispatch from {from}, home is {}",
                self.id, self.home
            )));
        }
        self.lr = lr;
        let start = TinyModel::new(self.shape, model.clone())?;
        let trained = start.local_training(
            &self.data,
            S::of_f64(lr),
            self.epochs,
            self.batch_size,
            &mut self.rng,
        )?;
        let update = Message::ClientUpdate {
            model: trained.into_params(),
            age_sent: age,
        };
        Ok((update, self.training_delay_ms * self.epochs as f64))
    }
}
