//! Softmax regression and one-hidden-layer MLP with analytic gradients.
//!
//! Parameter layout is input-major so the inner loops are `axpy`s over the
//! output dimension and zero inputs (common in image data) can be skipped:
//!
//! * logistic: `W[input_dim][n_classes]`, then `b[n_classes]`
//! * mlp: `W1[input_dim][hidden]`, `b1[hidden]`, `W2[hidden][n_classes]`, `b2[n_classes]`
//!
//! The loss is the batch-mean cross-entropy of the softmax output.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::scalar::Scalar;

use super::vector::check_finite;
use super::{ModelError, ModelVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticRegression,
    #[serde(rename = "mlp-1-hidden", alias = "mlp")]
    Mlp1Hidden,
}

/// Architecture of a [`TinyModel`], independent of its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub n_classes: usize,
    /// Ignored for logistic regression.
    #[serde(default)]
    pub hidden_dim: usize,
}

impl ModelShape {
    pub fn logistic(input_dim: usize, n_classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            n_classes,
            hidden_dim: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, n_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1Hidden,
            input_dim,
            n_classes,
            hidden_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.n_classes, self.hidden_dim);
        match self.kind {
            ModelKind::LogisticRegression => c * (d + 1),
            ModelKind::Mlp1Hidden => h * (d + 1) + c * (h + 1),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.n_classes < 2 {
            return Err(ModelError::Rejected(
                "input_dim must be positive and n_classes at least 2".into(),
            ));
        }
        if self.kind == ModelKind::Mlp1Hidden && self.hidden_dim == 0 {
            return Err(ModelError::Rejected("mlp hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Anything with a differentiable scalar loss over a flat parameter vector.
pub trait Objective<S: Scalar> {
    fn dim(&self) -> usize;

    /// Writes the gradient at `params` into `grad` and returns the loss.
    fn loss_and_grad(&self, params: &[S], grad: &mut [S]) -> Result<S, ModelError>;
}

/// One gradient-descent step `params <- params - lr * grad` on an arbitrary objective.
pub fn sgd_step<S: Scalar, O: Objective<S>>(
    params: &ModelVector<S>,
    objective: &O,
    lr: S,
) -> Result<ModelVector<S>, ModelError> {
    if lr < S::zero() {
        return Err(ModelError::Rejected("learning rate must be non-negative".into()));
    }
    if objective.dim() != params.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: params.dim(),
            found: objective.dim(),
        });
    }
    let mut grad = vec![S::zero(); params.dim()];
    objective.loss_and_grad(params.as_slice(), &mut grad)?;
    check_finite(&grad)?;
    let stepped: Vec<S> = params
        .as_slice()
        .iter()
        .zip(&grad)
        .map(|(&w, &g)| w - lr * g)
        .collect();
    ModelVector::new(stepped)
}

/// A view of some rows of a dataset.
#[derive(Clone, Copy)]
pub struct Batch<'a> {
    data: &'a Dataset,
    indices: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn full(data: &'a Dataset) -> Self {
        Self { data, indices: None }
    }

    pub fn rows(data: &'a Dataset, indices: &'a [usize]) -> Self {
        Self {
            data,
            indices: Some(indices),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.map_or(self.data.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn for_each(&self, mut f: impl FnMut(&[f32], usize)) {
        match self.indices {
            Some(idx) => idx
                .iter()
                .for_each(|&i| f(self.data.row(i), self.data.label(i))),
            None => (0..self.data.len()).for_each(|i| f(self.data.row(i), self.data.label(i))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyModel<S> {
    shape: ModelShape,
    params: ModelVector<S>,
}

impl<S: Scalar> TinyModel<S> {
    pub fn new(shape: ModelShape, params: ModelVector<S>) -> Result<Self, ModelError> {
        shape.validate()?;
        if params.dim() != shape.param_count() {
            return Err(ModelError::DimensionMismatch {
                expected: shape.param_count(),
                found: params.dim(),
            });
        }
        Ok(Self { shape, params })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn random<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Result<Self, ModelError> {
        shape.validate()?;
        let mut values = Vec::with_capacity(shape.param_count());
        let mut layer = |fan_in: usize, fan_out: usize, values: &mut Vec<S>| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            values.extend((0..fan_in * fan_out).map(|_| S::of_f64(dist.sample(rng))));
            values.extend(std::iter::repeat_n(S::zero(), fan_out));
        };
        match shape.kind {
            ModelKind::LogisticRegression => {
                layer(shape.input_dim, shape.n_classes, &mut values);
            }
            ModelKind::Mlp1Hidden => {
                layer(shape.input_dim, shape.hidden_dim, &mut values);
                layer(shape.hidden_dim, shape.n_classes, &mut values);
            }
        }
        Self::new(shape, ModelVector::new(values)?)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn params(&self) -> &ModelVector<S> {
        &self.params
    }

    pub fn into_params(self) -> ModelVector<S> {
        self.params
    }

    /// Same architecture, different weights.
    pub fn with_params(&self, params: ModelVector<S>) -> Result<Self, ModelError> {
        Self::new(self.shape, params)
    }

    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        if data.dim() != self.shape.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.shape.input_dim,
                found: data.dim(),
            });
        }
        if data.n_classes() > self.shape.n_classes {
            return Err(ModelError::Rejected(format!(
                "dataset has {} classes, model outputs {}",
                data.n_classes(),
                self.shape.n_classes
            )));
        }
        Ok(())
    }

    /// Class probabilities for one input row.
    pub fn predict_proba(&self, x: &[f32]) -> Vec<S> {
        let mut scratch = Scratch::new(&self.shape);
        self.forward(self.params.as_slice(), x, &mut scratch);
        softmax_in_place(&mut scratch.logits);
        scratch.logits
    }

    /// Argmax class; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f32]) -> usize {
        let mut scratch = Scratch::new(&self.shape);
        self.forward(self.params.as_slice(), x, &mut scratch);
        argmax(&scratch.logits)
    }

    /// Fraction of rows whose argmax prediction equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64, ModelError> {
        self.check_data(data)?;
        let mut scratch = Scratch::new(&self.shape);
        let correct = (0..data.len())
            .filter(|&i| {
                self.forward(self.params.as_slice(), data.row(i), &mut scratch);
                argmax(&scratch.logits) == data.label(i)
            })
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn loss(&self, batch: Batch<'_>) -> Result<S, ModelError> {
        let mut grad = vec![S::zero(); self.params.dim()];
        self.batch_loss_and_grad(self.params.as_slice(), batch, &mut grad)
    }

    /// Analytic gradient of the batch-mean loss at the current parameters.
    pub fn gradient(&self, batch: Batch<'_>) -> Result<(S, Vec<S>), ModelError> {
        let mut grad = vec![S::zero(); self.params.dim()];
        let loss = self.batch_loss_and_grad(self.params.as_slice(), batch, &mut grad)?;
        check_finite(&grad)?;
        Ok((loss, grad))
    }

    /// Returns a copy of the model after one SGD step on `batch`.
    pub fn local_sgd_step(&self, batch: Batch<'_>, lr: S) -> Result<Self, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Rejected("batch must be non-empty".into()));
        }
        let objective = BatchObjective { model: self, batch };
        let params = sgd_step(&self.params, &objective, lr)?;
        Ok(Self {
            shape: self.shape,
            params,
        })
    }

    /// `epochs` passes of mini-batch SGD over `data`, reshuffled each epoch with `rng`.
    pub fn local_training<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        lr: S,
        epochs: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if epochs == 0 || batch_size == 0 {
            return Err(ModelError::Rejected("epochs and batch_size must be positive".into()));
        }
        if data.is_empty() {
            return Err(ModelError::Rejected("training data must be non-empty".into()));
        }
        if lr < S::zero() {
            return Err(ModelError::Rejected("learning rate must be non-negative".into()));
        }
        self.check_data(data)?;
        let mut params = self.params.clone();
        let mut grad = vec![S::zero(); params.dim()];
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch_size) {
                self.batch_loss_and_grad(params.as_slice(), Batch::rows(data, chunk), &mut grad)?;
                check_finite(&grad)?;
                for (w, &g) in params.as_mut_slice().iter_mut().zip(&grad) {
                    *w -= lr * g;
                }
            }
        }
        check_finite(params.as_slice())?;
        Ok(Self {
            shape: self.shape,
            params,
        })
    }

    fn batch_loss_and_grad(
        &self,
        params: &[S],
        batch: Batch<'_>,
        grad: &mut [S],
    ) -> Result<S, ModelError> {
        self.check_data(batch.data)?;
        if batch.is_empty() {
            return Err(ModelError::Rejected("batch must be non-empty".into()));
        }
        grad.iter_mut().for_each(|g| *g = S::zero());
        let mut scratch = Scratch::new(&self.shape);
        let mut total = S::zero();
        batch.for_each(|x, y| {
            total += self.accumulate_sample(params, x, y, grad, &mut scratch);
        });
        let inv = S::one() / S::of_usize(batch.len());
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok(total * inv)
    }

    /// Forward pass leaving logits (and hidden activations) in `scratch`.
    fn forward(&self, params: &[S], x: &[f32], scratch: &mut Scratch<S>) {
        let ModelShape {
            input_dim: d,
            n_classes: c,
            hidden_dim: h,
            ..
        } = self.shape;
        match self.shape.kind {
            ModelKind::LogisticRegression => {
                let (w, b) = params.split_at(d * c);
                dense_forward(w, b, x.iter().map(|&v| S::of_f32(v)), &mut scratch.logits);
            }
            ModelKind::Mlp1Hidden => {
                let (w1, rest) = params.split_at(d * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * c);
                dense_forward(w1, b1, x.iter().map(|&v| S::of_f32(v)), &mut scratch.hidden);
                scratch.hidden.iter_mut().for_each(|a| *a = a.tanh());
                dense_forward(w2, b2, scratch.hidden.iter().copied(), &mut scratch.logits);
            }
        }
    }

    fn accumulate_sample(
        &self,
        params: &[S],
        x: &[f32],
        y: usize,
        grad: &mut [S],
        scratch: &mut Scratch<S>,
    ) -> S {
        let ModelShape {
            input_dim: d,
            n_classes: c,
            hidden_dim: h,
            ..
        } = self.shape;
        self.forward(params, x, scratch);
        let loss = log_sum_exp(&scratch.logits) - scratch.logits[y];
        // logits become dL/dz = softmax - onehot
        softmax_in_place(&mut scratch.logits);
        scratch.logits[y] -= S::one();
        let dz = &scratch.logits;
        match self.shape.kind {
            ModelKind::LogisticRegression => {
                let (gw, gb) = grad.split_at_mut(d * c);
                dense_backward(gw, gb, x.iter().map(|&v| S::of_f32(v)), dz);
            }
            ModelKind::Mlp1Hidden => {
                let w2 = &params[d * h + h..d * h + h + h * c];
                let (gw1, rest) = grad.split_at_mut(d * h);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(h * c);
                dense_backward(gw2, gb2, scratch.hidden.iter().copied(), dz);
                for (k, da) in scratch.delta_hidden.iter_mut().enumerate() {
                    let row = &w2[k * c..(k + 1) * c];
                    let back: S = row.iter().zip(dz).map(|(&w, &g)| w * g).sum();
                    let act = scratch.hidden[k];
                    *da = back * (S::one() - act * act);
                }
                dense_backward(gw1, gb1, x.iter().map(|&v| S::of_f32(v)), &scratch.delta_hidden);
            }
        }
        loss
    }
}

/// Adapts a model plus batch to [`Objective`] so it shares the generic SGD step.
struct BatchObjective<'m, 'b, S> {
    model: &'m TinyModel<S>,
    batch: Batch<'b>,
}

impl<S: Scalar> Objective<S> for BatchObjective<'_, '_, S> {
    fn dim(&self) -> usize {
        self.model.params.dim()
    }

    fn loss_and_grad(&self, params: &[S], grad: &mut [S]) -> Result<S, ModelError> {
        self.model.batch_loss_and_grad(params, self.batch, grad)
    }
}

struct Scratch<S> {
    hidden: Vec<S>,
    delta_hidden: Vec<S>,
    logits: Vec<S>,
}

impl<S: Scalar> Scratch<S> {
    fn new(shape: &ModelShape) -> Self {
        Self {
            hidden: vec![S::zero(); shape.hidden_dim],
            delta_hidden: vec![S::zero(); shape.hidden_dim],
            logits: vec![S::zero(); shape.n_classes],
        }
    }
}

/// `out = b + x^T W` with `W` stored input-major.
#[inline]
fn dense_forward<S: Scalar>(w: &[S], b: &[S], x: impl Iterator<Item = S>, out: &mut [S]) {
    let n_out = out.len();
    out.copy_from_slice(b);
    for (row, xi) in w.chunks_exact(n_out).zip(x) {
        if xi == S::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

#[inline]
fn dense_backward<S: Scalar>(gw: &mut [S], gb: &mut [S], x: impl Iterator<Item = S>, dout: &[S]) {
    let n_out = dout.len();
    for (g, &d) in gb.iter_mut().zip(dout) {
        *g += d;
    }
    for (row, xi) in gw.chunks_exact_mut(n_out).zip(x) {
        if xi == S::zero() {
            continue;
        }
        for (g, &d) in row.iter_mut().zip(dout) {
            *g += xi * d;
        }
    }
}

fn log_sum_exp<S: Scalar>(z: &[S]) -> S {
    let m = z.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    m + z.iter().map(|&v| (v - m).exp()).sum::<S>().ln()
}

fn softmax_in_place<S: Scalar>(z: &mut [S]) {
    let m = z.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    let mut total = S::zero();
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

fn argmax<S: Scalar>(z: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quadratic;

    impl Objective<f64> for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn loss_and_grad(&self, p: &[f64], g: &mut [f64]) -> Result<f64, ModelError> {
            g[0] = 2.0 * p[0];
            Ok(p[0] * p[0])
        }
    }

    fn toy_data() -> Dataset {
        Dataset::new(
            "toy",
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, -1.0, 0.2],
            vec![0, 1, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn quadratic_step() {
        let w = ModelVector::new(vec![1.0]).unwrap();
        let next = sgd_step(&w, &Quadratic, 0.1).unwrap();
        assert!((next[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = TinyModel::<f64>::random(ModelShape::mlp(2, 3, 2), &mut rng).unwrap();
        let data = toy_data();
        let next = m.local_sgd_step(Batch::full(&data), 0.0).unwrap();
        assert_eq!(next, m);
    }

    #[test]
    fn param_counts() {
        assert_eq!(ModelShape::logistic(784, 10).param_count(), 7850);
        assert_eq!(ModelShape::mlp(784, 64, 10).param_count(), 64 * 785 + 10 * 65);
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let m = TinyModel::<f64>::new(ModelShape::logistic(3, 2), ModelVector::zeros(8)).unwrap();
        let err = m.local_sgd_step(Batch::full(&toy_data()), 0.1).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch { expected: 3, found: 2 }));
    }

    #[test]
    fn rejects_wrong_param_count() {
        assert!(TinyModel::<f64>::new(ModelShape::logistic(2, 2), ModelVector::zeros(5)).is_err());
    }

    #[test]
    fn softmax_sums_to_one_and_loss_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = TinyModel::<f64>::random(ModelShape::mlp(2, 4, 3), &mut rng).unwrap();
        let p = m.predict_proba(&[0.3, -2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let data = Dataset::new("d", 2, 3, vec![0.3, -2.0], vec![2]).unwrap();
        assert!(m.loss(Batch::full(&data)).unwrap() >= 0.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0f64, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0f64, 2.0, 2.0]), 1);
    }

    #[test]
    fn one_epoch_full_batch_equals_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = TinyModel::<f64>::random(ModelShape::logistic(2, 2), &mut rng).unwrap();
        let data = toy_data();
        let trained = m.local_training(&data, 0.3, 1, data.len(), &mut rng).unwrap();
        let stepped = m.local_sgd_step(Batch::full(&data), 0.3).unwrap();
        // full batch: shuffle order only changes summation order
        assert!(trained.params().linf_distance(stepped.params()).unwrap() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = toy_data();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let m = TinyModel::<f64>::random(ModelShape::mlp(2, 3, 2), &mut rng).unwrap();
            m.local_training(&data, 0.1, 2, 2, &mut rng).unwrap()
        };
        assert_eq!(run().params().as_slice(), run().params().as_slice());
    }

    #[test]
    fn exploding_lr_reports_non_finite() {
        let data = Dataset::new("big", 1, 2, vec![1e30], vec![0]).unwrap();
        let m = TinyModel::<f32>::new(
            ModelShape::logistic(1, 2),
            ModelVector::new(vec![1e30, -1e30, 0.0, 0.0]).unwrap(),
        )
        .unwrap();
        let err = m.local_training(&data, 1e30, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(ModelError::NonFinite { .. })));
    }
}
