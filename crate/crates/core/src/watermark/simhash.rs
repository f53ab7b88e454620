//! Random-hyperplane SimHash.

use crate::error::{Error, Result};
use crate::rng::{derived_rng, standard_normal_f64};
use crate::semantic::vector::{dot, UnitVector};

/// `count` Gaussian-direction unit normals in `dim` dimensions.
pub fn random_hyperplanes(count: usize, dim: usize, seed: u64) -> Vec<UnitVector> {
    let mut rng = derived_rng(seed, "simhash/planes", 0);
    (0..count)
        .map(|_| loop {
            if let Ok(u) = UnitVector::normalize(standard_normal_f64(&mut rng, dim)) {
                break u;
            }
        })
        .collect()
}

/// Bit `p` is set when the embedding lies on the positive side of plane `p`.
pub fn simhash(embedding: &UnitVector, hyperplanes: &[UnitVector]) -> Result<Vec<bool>> {
    hyperplanes
        .iter()
        .map(|h| {
            if h.dim() != embedding.dim() {
                return Err(Error::DimensionMismatch {
                    expected: h.dim(),
                    actual: embedding.dim(),
                });
            }
            Ok(dot(embedding.values(), h.values()) > 0.0)
        })
        .collect()
}

pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derived_rng;

    fn unit(seed: u64, d: usize) -> UnitVector {
        UnitVector::normalize(standard_normal_f64(&mut derived_rng(seed, "t", 0), d)).unwrap()
    }

    #[test]
    fn deterministic_and_antisymmetric() {
        let planes = random_hyperplanes(64, 16, 1);
        let v = unit(2, 16);
        let a = simhash(&v, &planes).unwrap();
        assert_eq!(a, simhash(&v, &planes).unwrap());
        let b = simhash(&v.neg(), &planes).unwrap();
        assert_eq!(hamming(&a, &b), 64);
    }

    #[test]
    fn dimension_mismatch() {
        let planes = random_hyperplanes(4, 16, 1);
        assert!(simhash(&unit(1, 8), &planes).is_err());
    }
}
