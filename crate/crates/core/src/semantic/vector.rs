use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

/// An L2-normalized real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector {
    values: Vec<f64>,
}

impl UnitVector {
    /// Normalizes `values`; fails on an all-zero or non-finite input.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("unit vector"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm("unit vector normalization"));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// Wraps values that are already unit length.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::config(format!("vector norm {norm} is not 1")));
        }
        Ok(Self { values })
    }

    /// The `i`-th standard basis vector.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[i] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn neg(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::from_unit(v)
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Self {
        u.values
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(u: &UnitVector, v: &UnitVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(dot(&u.values, &v.values).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        let u = UnitVector::normalize(vec![3.0, 4.0, 0.0]).unwrap();
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&u, &u.neg()).unwrap() + 1.0).abs() < 1e-12);
        let e0 = UnitVector::basis(3, 0);
        let e1 = UnitVector::basis(3, 1);
        assert_eq!(cosine(&e0, &e1).unwrap(), 0.0);
        assert!(cosine(&e0, &UnitVector::basis(2, 0)).is_err());
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(UnitVector::normalize(vec![0.0; 4]).is_err());
        assert!(UnitVector::from_unit(vec![0.5, 0.5]).is_err());
    }
}
