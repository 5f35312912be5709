//! Collective spin matrices in the Jz eigenbasis, ordered m = J, J-1, ..., -J.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Largest Hilbert-space dimension accepted by default (J = 100).
pub const DEFAULT_DIMENSION_CAP: usize = 201;

#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub total_spin: f64,
    pub jx: DMatrix<C64>,
    pub jy: DMatrix<C64>,
    pub jz: DMatrix<C64>,
    /// Jz eigenvalues in basis order.
    pub m: Vec<f64>,
    /// `ladder[k] = <m_k| J+ |m_{k+1}>`.
    pub ladder: Vec<f64>,
    /// Eigenvalues and eigenvectors of Jy.
    pub jy_eigenvalues: Vec<f64>,
    pub jy_eigenvectors: DMatrix<C64>,
}

/// Operator-norm-free residuals of the angular-momentum algebra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgebraResiduals {
    /// Max over cyclic permutations of the Frobenius norm of [Ja, Jb] - i Jc.
    pub commutator: f64,
    /// Frobenius norm of Jx^2 + Jy^2 + Jz^2 - J(J+1).
    pub casimir: f64,
    /// Largest Frobenius norm of J - J^dagger.
    pub hermiticity: f64,
}

impl SpinOperators {
    pub fn new(total_spin: f64) -> Result<Self> {
        Self::with_cap(total_spin, DEFAULT_DIMENSION_CAP)
    }

    pub fn with_cap(total_spin: f64, cap: usize) -> Result<Self> {
        let two_j = 2.0 * total_spin;
        if !(total_spin > 0.0 && two_j.fract() == 0.0 && two_j.is_finite()) {
            return Err(Error::InvalidSpin(total_spin));
        }
        let dim = two_j as usize + 1;
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }
        let j = total_spin;
        let m: Vec<f64> = (0..dim).map(|k| j - k as f64).collect();
        let ladder: Vec<f64> = (0..dim - 1)
            .map(|k| {
                let mk = m[k + 1];
                (j * (j + 1.0) - mk * (mk + 1.0)).sqrt()
            })
            .collect();
        let mut jplus = DMatrix::<C64>::zeros(dim, dim);
        for (k, &a) in ladder.iter().enumerate() {
            jplus[(k, k + 1)] = C64::new(a, 0.0);
        }
        let jminus = jplus.adjoint();
        let jx = (&jplus + &jminus).scale(0.5);
        let jy = (&jplus - &jminus) * C64::new(0.0, -0.5);
        let jz = DMatrix::from_diagonal(&DVector::from_iterator(dim, m.iter().map(|&x| C64::new(x, 0.0))));
        let eig = SymmetricEigen::new(jy.clone());
        Ok(Self {
            total_spin,
            jx,
            jy,
            jz,
            m,
            ladder,
            jy_eigenvalues: eig.eigenvalues.iter().copied().collect(),
            jy_eigenvectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn residuals(&self) -> AlgebraResiduals {
        let i = C64::new(0.0, 1.0);
        let comm = |a: &DMatrix<C64>, b: &DMatrix<C64>, c: &DMatrix<C64>| (a * b - b * a - c * i).norm();
        let commutator = comm(&self.jx, &self.jy, &self.jz)
            .max(comm(&self.jy, &self.jz, &self.jx))
            .max(comm(&self.jz, &self.jx, &self.jy));
        let j = self.total_spin;
        let id = DMatrix::<C64>::identity(self.dim(), self.dim());
        let casimir = (&self.jx * &self.jx + &self.jy * &self.jy + &self.jz * &self.jz
            - id * C64::new(j * (j + 1.0), 0.0))
        .norm();
        let hermiticity = [&self.jx, &self.jy, &self.jz]
            .iter()
            .map(|a| (*a - a.adjoint()).norm())
            .fold(0.0, f64::max);
        AlgebraResiduals {
            commutator,
            casimir,
            hermiticity,
        }
    }

    /// `exp(-i theta Jy)` from the eigendecomposition of Jy.
    pub fn jy_rotation(&self, theta: f64) -> DMatrix<C64> {
        let v = &self.jy_eigenvectors;
        let phases = DVector::from_iterator(
            self.dim(),
            self.jy_eigenvalues.iter().map(|&l| C64::from_polar(1.0, -theta * l)),
        );
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| v[(r, c)] * phases[c]);
        scaled * v.adjoint()
    }

    /// `Jy v` using the tridiagonal structure.
    pub fn apply_jy(&self, v: &DVector<C64>, out: &mut DVector<C64>) {
        let n = self.dim();
        let half_i = C64::new(0.0, -0.5);
        for k in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            if k + 1 < n {
                acc += v[k + 1] * self.ladder[k];
            }
            if k > 0 {
                acc -= v[k - 1] * self.ladder[k - 1];
            }
            out[k] = acc * half_i;
        }
    }

    pub fn expectation(&self, op: &DMatrix<C64>, rho: &DMatrix<C64>) -> f64 {
        (op * rho).trace().re
    }

    /// `<Jz>` of a density matrix from its diagonal.
    pub fn mean_jz(&self, rho: &DMatrix<C64>) -> f64 {
        self.m.iter().enumerate().map(|(k, m)| m * rho[(k, k)].re).sum()
    }
}

/// The spin coherent state pointing along +x.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinCoherentState {
    pub amplitudes: DVector<C64>,
}

impl SpinCoherentState {
    /// Amplitudes `2^{-J} sqrt(binom(2J, J + m))`.
    pub fn along_x(ops: &SpinOperators) -> Self {
        let n = ops.dim() - 1;
        // log binomials by recurrence to stay finite for large J
        let mut log_binom = vec![0.0f64; n + 1];
        for k in 1..=n {
            log_binom[k] = log_binom[k - 1] + ((n + 1 - k) as f64).ln() - (k as f64).ln();
        }
        let ln2 = std::f64::consts::LN_2;
        let amplitudes = DVector::from_iterator(
            n + 1,
            (0..=n).map(|k| C64::new((0.5 * log_binom[k] - 0.5 * n as f64 * ln2).exp(), 0.0)),
        );
        Self { amplitudes }
    }

    pub fn density_matrix(&self) -> DMatrix<C64> {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spin_half() {
        let s = SpinOperators::new(0.5).unwrap();
        assert_eq!(s.m, vec![0.5, -0.5]);
        assert_eq!(s.jz[(0, 0)].re, 0.5);
        assert_eq!(s.jz[(1, 1)].re, -0.5);
        assert!((s.jx[(0, 1)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spin_one_algebra() {
        let s = SpinOperators::new(1.0).unwrap();
        assert_eq!(s.m, vec![1.0, 0.0, -1.0]);
        assert!(s.residuals().commutator <= 1e-12);
    }

    #[test]
    fn casimir_at_ten() {
        let r = SpinOperators::new(10.0).unwrap().residuals();
        assert!(r.casimir <= 1e-10);
        assert!(r.hermiticity == 0.0);
    }

    #[test]
    fn invalid_spins() {
        assert!(matches!(SpinOperators::new(0.3), Err(Error::InvalidSpin(_))));
        assert!(matches!(SpinOperators::new(0.0), Err(Error::InvalidSpin(_))));
        assert!(matches!(
            SpinOperators::new(100.5),
            Err(Error::DimensionCap { dim: 202, cap: 201 })
        ));
        assert!(SpinOperators::new(100.0).is_ok());
    }

    #[test]
    fn coherent_state_points_along_x() {
        for &j in &[0.5, 3.0, 20.0, 100.0] {
            let s = SpinOperators::new(j).unwrap();
            let psi = SpinCoherentState::along_x(&s);
            assert!((psi.amplitudes.norm() - 1.0).abs() < 1e-12);
            let rho = psi.density_matrix();
            assert!((s.expectation(&s.jx, &rho) - j).abs() < 1e-10 * j);
            assert!(s.mean_jz(&rho).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_matches_series_and_tridiagonal_product() {
        let s = SpinOperators::new(2.5).unwrap();
        let theta = 0.3;
        let u = s.jy_rotation(theta);
        // Taylor series oracle
        let mut term = DMatrix::<C64>::identity(6, 6);
        let mut series = term.clone();
        for k in 1..40 {
            term = &term * &s.jy * C64::new(0.0, -theta / k as f64);
            series += &term;
        }
        assert!((u - series).norm() < 1e-12);
        let v = DVector::from_fn(6, |k, _| C64::new(k as f64, 1.0 - k as f64));
        let mut out = DVector::zeros(6);
        s.apply_jy(&v, &mut out);
        assert!((out - &s.jy * v).norm() < 1e-13);
    }
}
