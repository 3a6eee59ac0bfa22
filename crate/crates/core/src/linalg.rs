//! Dense linear-algebra helpers shared by the subsolvers and problem generators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Deterministic RNG used everywhere a seed is accepted.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniformly distributed direction on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    loop {
        let v = normal_vector(rng, d);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform sample from the closed ball of the given radius.
pub fn ball_vector<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64) -> Vector {
    let u: f64 = rng.random();
    unit_vector(rng, d) * (radius * u.powf(1.0 / d as f64))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest singular value of a general matrix.
pub fn spectral_norm(m: &Matrix) -> f64 {
    sym_spectral_norm(&(m.transpose() * m)).sqrt()
}

/// Eigendecomposition `A = Q diag(λ) Qᵀ` of a symmetric positive semidefinite
/// matrix, computed once per subproblem.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub values: Vector,
    pub vectors: Matrix,
}

impl Spectral {
    /// Eigendecomposes `a`; eigenvalues below `-tol·max(1, λ_max)` are rejected,
    /// smaller negative values are clamped to zero.
    pub fn psd(a: &Matrix, tol: f64) -> Result<Self, f64> {
        let eig = SymmetricEigen::new(symmetrize(a));
        let scale = eig.eigenvalues.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        let min = eig.eigenvalues.min();
        if min < -tol * scale {
            return Err(min);
        }
        let values = eig.eigenvalues.map(|v| v.max(0.0));
        Ok(Self {
            values,
            vectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values.max()
    }

    /// Coordinates of `v` in the eigenbasis.
    pub fn to_eigenbasis(&self, v: &Vector) -> Vector {
        self.vectors.tr_mul(v)
    }

    pub fn from_eigenbasis(&self, v: &Vector) -> Vector {
        &self.vectors * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_rejects_negative_curvature() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(Spectral::psd(&a, 1e-12).is_err());
        let b = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-16]);
        let s = Spectral::psd(&b, 1e-12).unwrap();
        assert_eq!(s.min_eigenvalue(), 0.0);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((sym_spectral_norm(&a) - 4.0).abs() < 1e-12);
        assert!((spectral_norm(&a) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            assert!(ball_vector(&mut rng, 4, 0.7).norm() <= 0.7 + 1e-15);
        }
    }
}
