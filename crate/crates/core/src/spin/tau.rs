//! Record Fisher information and conditional QFI at finite J.
//!
//! With unit efficiency the conditional state stays pure, so the
//! unnormalized state and its B-derivative are propagated as vectors driven
//! by the same photocurrent. If `psi` is the normalized state and `phi` the
//! derivative divided by the same norm, then `Tr tau = 2 Re <psi|phi>` is the
//! score of the record and `4 (<phi|phi> - |<psi|phi>|^2)` is the QFI of the
//! conditional state.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::evolve::{hermitian_eigen, Stepper};
use super::operators::{SpinCoherentState, SpinOperators, C64};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TimeGrid};
use crate::trajectories::derive_seed;

/// Eigenvalue-sum floor below which SLD terms are dropped.
pub const SLD_EIGENVALUE_FLOOR: f64 = 1e-12;

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::InsufficientTrajectories(format!(
                "{} samples cannot carry an error bar",
                xs.len()
            )));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self {
            mean,
            stderr: (var / n).sqrt(),
            samples: xs.len(),
        })
    }

    /// Fail unless the relative standard error is at most `tolerance`.
    pub fn require_relative_precision(&self, tolerance: f64) -> Result<Self> {
        let rel = self.stderr / self.mean.abs();
        if rel > tolerance {
            return Err(Error::InsufficientTrajectories(format!(
                "relative standard error {rel:.3e} above {tolerance:.3e} with {} trajectories",
                self.samples
            )));
        }
        Ok(*self)
    }
}

/// Ensemble averages at the final time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEnsemble {
    /// E[(Tr tau)^2], the record Fisher information.
    pub fisher: Estimate,
    /// E[Q(rho_c)].
    pub qfi_conditional: Estimate,
    /// Per-trajectory sum of the two, so that its error bar includes their covariance.
    pub effective: Estimate,
}

/// Final-time quantities of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSample {
    pub trace_tau: f64,
    pub qfi_conditional: f64,
}

pub(crate) struct PureTauStepper<'a> {
    stepper: Stepper<'a>,
    /// `dU/dB = -i gamma dt Jy U`, when the rotation is not the identity.
    rotation_derivative: Option<DMatrix<C64>>,
    gamma_dt: f64,
}

impl<'a> PureTauStepper<'a> {
    pub fn new(ops: &'a SpinOperators, params: &ModelParams, dt: f64) -> Self {
        let stepper = Stepper::new(ops, params, dt, 1.0);
        let gamma_dt = params.gamma * dt;
        let rotation_derivative = stepper
            .rotation
            .as_ref()
            .map(|u| (&ops.jy * u) * C64::new(0.0, -gamma_dt));
        Self {
            stepper,
            rotation_derivative,
            gamma_dt,
        }
    }

    /// Advance (psi, phi) with photocurrent increment dy and renormalize.
    pub fn step(&self, psi: &mut DVector<C64>, phi: &mut DVector<C64>, scratch: &mut DVector<C64>, dy: f64) {
        let ops = self.stepper.ops;
        match (&self.stepper.rotation, &self.rotation_derivative) {
            (Some(u), Some(du)) => {
                let new_phi = u * &*phi + du * &*psi;
                *psi = u * &*psi;
                *phi = new_phi;
            }
            _ => {
                ops.apply_jy(psi, scratch);
                phi.axpy(C64::new(0.0, -self.gamma_dt), scratch, C64::new(1.0, 0.0));
            }
        }
        let kraus = self.stepper.kraus(dy);
        for (k, f) in kraus.iter().enumerate() {
            psi[k] *= *f;
            phi[k] *= *f;
        }
        let norm = psi.norm();
        *psi /= C64::new(norm, 0.0);
        *phi /= C64::new(norm, 0.0);
    }

    pub fn mean_jz(&self, psi: &DVector<C64>) -> f64 {
        self.stepper
            .ops
            .m
            .iter()
            .zip(psi.iter())
            .map(|(m, a)| m * a.norm_sqr())
            .sum()
    }
}

/// Run one unit-efficiency trajectory, drawing dw from `rng`.
pub fn tau_trajectory(ops: &SpinOperators, params: &ModelParams, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> TauSample {
    let dt = grid.dt();
    let stepper = PureTauStepper::new(ops, params, dt);
    let mut psi = SpinCoherentState::along_x(ops).amplitudes;
    let mut phi = DVector::zeros(ops.dim());
    let mut scratch = DVector::zeros(ops.dim());
    let gain = 2.0 * params.kappa.sqrt() * dt;
    let sd = dt.sqrt();
    for _ in 0..grid.n_steps {
        let z: f64 = StandardNormal.sample(rng);
        let dy = gain * stepper.mean_jz(&psi) + sd * z;
        stepper.step(&mut psi, &mut phi, &mut scratch, dy);
    }
    let overlap = psi.dotc(&phi);
    TauSample {
        trace_tau: 2.0 * overlap.re,
        qfi_conditional: 4.0 * (phi.norm_squared() - overlap.norm_sqr()),
    }
}

fn check_unit_efficiency(params: &ModelParams) -> Result<()> {
    if params.eta != 1.0 {
        return Err(Error::Unsupported(format!(
            "finite-J record Fisher information requires eta = 1, got {}",
            params.eta
        )));
    }
    Ok(())
}

/// Ensemble of unit-efficiency trajectories; trajectory `i` uses the ChaCha8
/// stream seeded with `derive_seed(seed, i)`.
pub fn tau_ensemble(
    ops: &SpinOperators,
    params: &ModelParams,
    grid: &TimeGrid,
    n_trajectories: usize,
    seed: u64,
) -> Result<TauEnsemble> {
    params.validate()?;
    grid.validate()?;
    check_unit_efficiency(params)?;
    if ops.total_spin != params.total_spin {
        return Err(Error::InvalidParameter {
            name: "J",
            value: params.total_spin,
            reason: "must match the spin operators",
        });
    }
    let samples: Vec<TauSample> = (0..n_trajectories as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
            tau_trajectory(ops, params, grid, &mut rng)
        })
        .collect();
    let f: Vec<f64> = samples.iter().map(|s| s.trace_tau * s.trace_tau).collect();
    let q: Vec<f64> = samples.iter().map(|s| s.qfi_conditional).collect();
    let sum: Vec<f64> = f.iter().zip(&q).map(|(a, b)| a + b).collect();
    Ok(TauEnsemble {
        fisher: Estimate::from_samples(&f)?,
        qfi_conditional: Estimate::from_samples(&q)?,
        effective: Estimate::from_samples(&sum)?,
    })
}

/// Record Fisher information E[(Tr tau)^2] at the end of `grid`.
pub fn fisher_tau(params: &ModelParams, grid: &TimeGrid, n_trajectories: usize, seed: u64) -> Result<Estimate> {
    let ops = SpinOperators::new(params.total_spin)?;
    Ok(tau_ensemble(&ops, params, grid, n_trajectories, seed)?.fisher)
}

/// QFI of `rho` for a parameter with derivative `drho`, via the symmetric
/// logarithmic derivative in the eigenbasis of `rho`.
pub fn qfi_sld(rho: &DMatrix<C64>, drho: &DMatrix<C64>, floor: f64) -> Result<f64> {
    let eig = hermitian_eigen(rho)?;
    let v = &eig.eigenvectors;
    let d = v.adjoint() * drho * v;
    let l = &eig.eigenvalues;
    let n = l.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = l[i] + l[j];
            if s > floor {
                q += 2.0 * d[(i, j)].norm_sqr() / s;
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::information::fisher_record_closed;

    /// Density-matrix route: propagate the unnormalized state and its
    /// B-derivative with the same elementwise Kraus factors.
    fn matrix_route(ops: &SpinOperators, p: &ModelParams, g: &TimeGrid, seed: u64) -> (DMatrix<C64>, DMatrix<C64>) {
        let dt = g.dt();
        let st = Stepper::new(ops, p, dt, p.eta);
        let u = ops.jy_rotation(p.gamma * p.field * dt);
        let du = (&ops.jy * &u) * C64::new(0.0, -p.gamma * dt);
        let mut rho = SpinCoherentState::along_x(ops).density_matrix();
        let mut tau = DMatrix::<C64>::zeros(ops.dim(), ops.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..g.n_steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            let dy = 2.0 * (p.eta * p.kappa).sqrt() * ops.mean_jz(&rho) * dt + dt.sqrt() * z;
            let k = st.kraus(dy);
            let factor = |m: DMatrix<C64>| {
                DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
                    m[(r, c)] * st.dephasing[(r, c)] * k[r] * k[c]
                })
            };
            let new_tau = factor(&u * &tau * u.adjoint() + &du * &rho * u.adjoint() + &u * &rho * du.adjoint());
            let new_rho = factor(&u * &rho * u.adjoint());
            let tr = new_rho.trace();
            rho = new_rho / tr;
            tau = new_tau / tr;
        }
        (rho, tau)
    }

    #[test]
    fn vector_and_matrix_routes_agree() {
        for &b in &[0.0, 0.4] {
            let ops = SpinOperators::new(3.0).unwrap();
            let p = ModelParams::new(3.0, 1.0, 1.3, 1.0, b).unwrap();
            let g = TimeGrid::new(0.3, 300).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let s = tau_trajectory(&ops, &p, &g, &mut rng);
            let (rho, tau) = matrix_route(&ops, &p, &g, 77);
            let tr_tau = tau.trace();
            assert!(
                (tr_tau.re - s.trace_tau).abs() < 1e-9 * s.trace_tau.abs().max(1.0),
                "B = {b}"
            );
            assert!(tr_tau.im.abs() < 1e-10);
            let drho = &tau - &rho * tr_tau;
            let q = qfi_sld(&rho, &drho, SLD_EIGENVALUE_FLOOR).unwrap();
            assert!(
                (q - s.qfi_conditional).abs() < 1e-6 * s.qfi_conditional,
                "{q} vs {}",
                s.qfi_conditional
            );
        }
    }

    #[test]
    fn sld_qfi_of_rotated_coherent_state() {
        // pure state rotated about y: Q = 4 Var(Jy) gamma^2 t^2 per unit B
        let ops = SpinOperators::new(2.0).unwrap();
        let rho = SpinCoherentState::along_x(&ops).density_matrix();
        let i = C64::new(0.0, 1.0);
        let drho = (&ops.jy * &rho - &rho * &ops.jy) * (-i);
        let q = qfi_sld(&rho, &drho, SLD_EIGENVALUE_FLOOR).unwrap();
        // Var(Jy) = J / 2 for the x-polarized coherent state
        assert!((q - 4.0 * 1.0).abs() < 1e-10);
    }

    #[test]
    fn no_coupling_no_information() {
        let p = ModelParams::new(5.0, 1.0, 0.0, 1.0, 0.0).unwrap();
        let g = TimeGrid::new(0.2, 200).unwrap();
        let f = fisher_tau(&p, &g, 50, 1).unwrap();
        assert_eq!(f.mean, 0.0);
    }

    #[test]
    fn stderr_scales_with_trajectory_count() {
        let p = ModelParams::new(5.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let g = TimeGrid::new(0.2, 200).unwrap();
        let a = fisher_tau(&p, &g, 2000, 3).unwrap();
        let b = fisher_tau(&p, &g, 4000, 3).unwrap();
        let ratio = b.stderr / a.stderr;
        assert!((ratio - 0.5f64.sqrt()).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn fisher_tau_close_to_gaussian_form() {
        let p = ModelParams::new(10.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let g = TimeGrid::new(0.2, 1000).unwrap();
        let f = fisher_tau(&p, &g, 3000, 11).unwrap();
        let closed = fisher_record_closed(&p, 0.2).unwrap();
        assert!((f.mean / closed - 1.0).abs() < 0.15, "{f:?} vs {closed}");
    }

    #[test]
    fn rejects_partial_efficiency_and_tiny_ensembles() {
        let g = TimeGrid::new(0.1, 10).unwrap();
        let p = ModelParams::new(2.0, 1.0, 1.0, 0.5, 0.0).unwrap();
        assert!(matches!(fisher_tau(&p, &g, 10, 0), Err(Error::Unsupported(_))));
        assert!(matches!(
            fisher_tau(&p.with_eta(1.0), &g, 1, 0),
            Err(Error::InsufficientTrajectories(_))
        ));
        let e = Estimate::from_samples(&[1.0, 3.0]).unwrap();
        assert!(e.require_relative_precision(0.1).is_err());
        assert!(e.require_relative_precision(1.0).is_ok());
    }
}
