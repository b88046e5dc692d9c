use std::ops::Index;

use crate::scalar::Scalar;

use super::ModelError;

/// Flat parameter vector; the unit that is trained, exchanged and aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector<S> {
    values: Vec<S>,
}

impl<S: Scalar> ModelVector<S> {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<S>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::Rejected("model vector must be non-empty".into()));
        }
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "model dimension must be positive");
        Self {
            values: vec![S::zero(); dim],
        }
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, ModelError> {
        Self::new(values.iter().map(|&v| S::of_f64(v)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    /// Mutable access for in-place optimisers. Callers must keep values finite.
    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }

    pub fn check_dim(&self, other: &Self) -> Result<(), ModelError> {
        if self.dim() != other.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    /// `self + coeff * (target - self)`, the move shared by every merge rule.
    pub fn moved_toward(&self, target: &Self, coeff: S) -> Result<Self, ModelError> {
        self.check_dim(target)?;
        let values: Vec<S> = self
            .values
            .iter()
            .zip(&target.values)
            .map(|(&a, &b)| a + coeff * (b - a))
            .collect();
        check_finite(&values)?;
        Ok(Self { values })
    }

    /// `self + coeff * delta`.
    pub fn add_scaled(&self, delta: &Self, coeff: S) -> Result<Self, ModelError> {
        self.check_dim(delta)?;
        let values: Vec<S> = self
            .values
            .iter()
            .zip(&delta.values)
            .map(|(&a, &d)| a + coeff * d)
            .collect();
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, ModelError> {
        self.check_dim(other)?;
        let values: Vec<S> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a - b)
            .collect();
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn linf_distance(&self, other: &Self) -> Result<S, ModelError> {
        self.check_dim(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl<S> Index<usize> for ModelVector<S> {
    type Output = S;

    fn index(&self, i: usize) -> &S {
        &self.values[i]
    }
}

pub(crate) fn check_finite<S: Scalar>(values: &[S]) -> Result<(), ModelError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ModelError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Model age: number of client updates absorbed, real-valued once server merges happen.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Age<S>(pub S);

impl<S: Scalar> Age<S> {
    pub fn zero() -> Self {
        Age(S::zero())
    }

    #[inline]
    pub fn value(self) -> S {
        self.0
    }

    pub fn incremented(self) -> Self {
        Age(self.0 + S::one())
    }

    pub fn max(self, other: Self) -> Self {
        Age(self.0.max(other.0))
    }
}
