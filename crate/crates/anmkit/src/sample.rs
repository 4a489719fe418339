//! Finite samples: the empirical inputs to every estimator in the crate.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("sample is empty")]
    Empty,
    #[error("sample contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("paired sample length mismatch: {x} x-values vs {y} y-values")]
    LengthMismatch { x: usize, y: usize },
}

/// Finite draws from a scalar marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>) -> Result<Self, SampleError> {
        if values.is_empty() {
            return Err(SampleError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SampleError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        crate::util::mean(&self.values)
    }

    /// Sample standard deviation (ddof = 1).
    pub fn std(&self) -> f64 {
        crate::util::sample_std(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl std::ops::Deref for SampleSet {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Finite draws from a joint distribution of two scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    x: SampleSet,
    y: SampleSet,
}

impl PairedSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, SampleError> {
        if x.len() != y.len() {
            return Err(SampleError::LengthMismatch { x: x.len(), y: y.len() });
        }
        Ok(Self { x: SampleSet::new(x)?, y: SampleSet::new(y)? })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn x_set(&self) -> &SampleSet {
        &self.x
    }

    pub fn y_set(&self) -> &SampleSet {
        &self.y
    }

    /// The same pairs with the roles of x and y exchanged.
    pub fn swapped(&self) -> PairedSample {
        PairedSample { x: self.y.clone(), y: self.x.clone() }
    }
}
