//! Scaled integer lattice with a half-open basic cell.
//!
//! The lattice is alpha*Z^n. Its basic cell is the half-open cube
//! alpha*(-1/2, 1/2]^n, so nearest-point ties round up: the unique lattice
//! point y with x in (y - cell) satisfies y - x in the cell itself. Keeping
//! the cell half-open makes the quantizer's error set an exact partition,
//! which the dithered error-distribution guarantees depend on.

use crate::rng::RandomStream;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("lattice dimension must be at least 1")]
    ZeroDimension,
    #[error("lattice scale must be finite and positive, got {0}")]
    BadScale(f64),
    #[error("expected a vector of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input component {0} is not finite")]
    NonFinite(f64),
    #[error("scaled component {0} exceeds the integer coordinate range")]
    CoordinateOverflow(f64),
}

/// Description of alpha*Z^n: a dimension and a positive scale.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatticeSpec {
    dimension: usize,
    scale: f64,
}

impl LatticeSpec {
    pub fn new(dimension: usize, scale: f64) -> Result<Self, LatticeError> {
        if dimension == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(LatticeError::BadScale(scale));
        }
        Ok(LatticeSpec { dimension, scale })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn basic_cell(&self) -> BasicCell {
        BasicCell {
            dimension: self.dimension,
            half_width: 0.5 * self.scale,
        }
    }

    /// Builds the lattice point with integer coordinates `coords`; the real
    /// embedding is recomputed as `scale * j` so it can never drift from the
    /// integers across a serialization boundary.
    pub fn point(&self, coords: Vec<i64>) -> Result<LatticePoint, LatticeError> {
        if coords.len() != self.dimension {
            return Err(LatticeError::DimensionMismatch {
                expected: self.dimension,
                got: coords.len(),
            });
        }
        let embedding = coords.iter().map(|&j| self.scale * j as f64).collect();
        Ok(LatticePoint { coords, embedding })
    }

    /// Nearest lattice point under the half-open tie rule: returns the unique
    /// y with y - x in the basic cell, so exact midpoints round toward +inf.
    pub fn nearest_point(&self, x: &[f64]) -> Result<LatticePoint, LatticeError> {
        if x.len() != self.dimension {
            return Err(LatticeError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        let half = 0.5 * self.scale;
        let mut coords = Vec::with_capacity(x.len());
        for &xi in x {
            if !xi.is_finite() {
                return Err(LatticeError::NonFinite(xi));
            }
            let t = xi / self.scale;
            if t.abs() >= 9.0e18 {
                return Err(LatticeError::CoordinateOverflow(t));
            }
            let mut j = (t + 0.5).floor();
            // Rounding in t + 0.5 can land one cell off near boundaries; a
            // single correction restores half-open membership exactly.
            let z = self.scale * j - xi;
            if z > half {
                j -= 1.0;
            } else if z <= -half {
                j += 1.0;
            }
            coords.push(j as i64);
        }
        self.point(coords)
    }

    /// Uniform sample from the basic cell. Consumes `dimension` draws; each
    /// component lies in (-scale/2, scale/2].
    pub fn sample_uniform_cell(&self, stream: &mut RandomStream) -> Vec<f64> {
        (0..self.dimension)
            .map(|_| self.scale * (0.5 - stream.uniform()))
            .collect()
    }
}

/// Half-open cube alpha*(-1/2, 1/2]^n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicCell {
    dimension: usize,
    half_width: f64,
}

impl BasicCell {
    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dimension
            && z.iter()
                .all(|&zi| zi > -self.half_width && zi <= self.half_width)
    }

    pub fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dimension as i32)
    }
}

/// A point of alpha*Z^n: integer coordinates plus their real embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePoint {
    coords: Vec<i64>,
    embedding: Vec<f64>,
}

impl LatticePoint {
    pub fn coords(&self) -> &[i64] {
        &self.coords
    }

    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: exhaustive search over a window of integer points
    /// for the one whose offset lands in the half-open cell.
    fn brute_force_nearest(x: &[f64], spec: &LatticeSpec) -> Vec<i64> {
        let one_d = LatticeSpec::new(1, spec.scale()).unwrap().basic_cell();
        let mut out = Vec::new();
        for &xi in x {
            let center = (xi / spec.scale()).round() as i64;
            let mut found = None;
            for j in center - 3..=center + 3 {
                let z = spec.scale() * j as f64 - xi;
                if one_d.contains(&[z]) {
                    found = Some(j);
                    break;
                }
            }
            out.push(found.expect("window always contains the nearest point"));
        }
        out
    }

    #[test]
    fn nearest_point_matches_brute_force_on_frozen_case() {
        let spec = LatticeSpec::new(3, 0.5).unwrap();
        let x = [0.74, -0.26, 0.0];
        let p = spec.nearest_point(&x).unwrap();
        assert_eq!(p.coords(), &[1, -1, 0]);
        assert_eq!(p.coords(), brute_force_nearest(&x, &spec).as_slice());
        assert_eq!(p.embedding(), &[0.5, -0.5, 0.0]);
    }

    #[test]
    fn midpoints_round_up() {
        let spec = LatticeSpec::new(1, 1.0).unwrap();
        assert_eq!(spec.nearest_point(&[0.5]).unwrap().coords(), &[1]);
        assert_eq!(spec.nearest_point(&[-0.5]).unwrap().coords(), &[0]);
        assert_eq!(spec.nearest_point(&[1.5]).unwrap().coords(), &[2]);
        let fine = LatticeSpec::new(1, 1e-5).unwrap();
        assert_eq!(fine.nearest_point(&[0.5e-5]).unwrap().coords(), &[1]);
    }

    #[test]
    fn nearest_point_matches_brute_force_on_random_inputs() {
        let mut stream = RandomStream::new(2024);
        for alpha in [1.0, 0.5, 1e-3] {
            let spec = LatticeSpec::new(2, alpha).unwrap();
            for _ in 0..500 {
                let x = [
                    alpha * 20.0 * (stream.uniform() - 0.5),
                    alpha * 20.0 * (stream.uniform() - 0.5),
                ];
                let p = spec.nearest_point(&x).unwrap();
                assert_eq!(p.coords(), brute_force_nearest(&x, &spec).as_slice());
            }
        }
    }

    #[test]
    fn cell_membership_is_half_open() {
        let spec = LatticeSpec::new(1, 1.0).unwrap();
        let cell = spec.basic_cell();
        assert!(cell.contains(&[0.5]));
        assert!(!cell.contains(&[-0.5]));
        assert!(cell.contains(&[0.0]));
        assert!(!cell.contains(&[0.5000001]));
    }

    #[test]
    fn quantization_offset_lands_in_cell() {
        let mut stream = RandomStream::new(5);
        let spec = LatticeSpec::new(3, 0.25).unwrap();
        let cell = spec.basic_cell();
        for _ in 0..2000 {
            let x: Vec<f64> = (0..3).map(|_| 10.0 * (stream.uniform() - 0.5)).collect();
            let p = spec.nearest_point(&x).unwrap();
            let z: Vec<f64> = p
                .embedding()
                .iter()
                .zip(&x)
                .map(|(yi, xi)| yi - xi)
                .collect();
            assert!(cell.contains(&z), "offset {z:?} escaped the cell");
        }
    }

    #[test]
    fn shift_by_lattice_vector_shifts_coordinates() {
        let spec = LatticeSpec::new(2, 0.5).unwrap();
        let mut stream = RandomStream::new(9);
        for _ in 0..500 {
            let x = [stream.uniform() * 4.0 - 2.0, stream.uniform() * 4.0 - 2.0];
            let k = [3i64, -7];
            let shifted: Vec<f64> = x
                .iter()
                .zip(&k)
                .map(|(xi, &ki)| xi + spec.scale() * ki as f64)
                .collect();
            let base = spec.nearest_point(&x).unwrap();
            let moved = spec.nearest_point(&shifted).unwrap();
            let expect: Vec<i64> = base
                .coords()
                .iter()
                .zip(&k)
                .map(|(j, &ki)| j + ki)
                .collect();
            assert_eq!(moved.coords(), expect.as_slice());
        }
    }

    #[test]
    fn cell_samples_have_uniform_moments() {
        let spec = LatticeSpec::new(1, 1.0).unwrap();
        let mut stream = RandomStream::new(77);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let v = spec.sample_uniform_cell(&mut stream)[0];
            assert!(v > -0.5 && v <= 0.5);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "cell sample mean {mean}");
        assert!(
            (var - 1.0 / 12.0).abs() < 0.01,
            "cell sample variance {var}"
        );
    }

    #[test]
    fn invalid_specs_and_inputs_are_rejected() {
        assert_eq!(
            LatticeSpec::new(0, 1.0).unwrap_err(),
            LatticeError::ZeroDimension
        );
        assert!(matches!(
            LatticeSpec::new(2, 0.0),
            Err(LatticeError::BadScale(_))
        ));
        assert!(matches!(
            LatticeSpec::new(2, f64::NAN),
            Err(LatticeError::BadScale(_))
        ));
        let spec = LatticeSpec::new(2, 1.0).unwrap();
        assert!(matches!(
            spec.nearest_point(&[0.0]),
            Err(LatticeError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            spec.nearest_point(&[f64::INFINITY, 0.0]),
            Err(LatticeError::NonFinite(_))
        ));
        let fine = LatticeSpec::new(1, 1e-10).unwrap();
        assert!(matches!(
            fine.nearest_point(&[1e12]),
            Err(LatticeError::CoordinateOverflow(_))
        ));
    }
}
