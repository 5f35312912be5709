//! Unconditional and conditional evolution of finite-J density matrices.
//!
//! Each step applies the Larmor rotation exactly and then the Jz-diagonal
//! part (dephasing plus measurement backaction) as an elementwise factor.
//! The measurement factor is the Kraus form
//! `M_m = exp(sqrt(eta kappa) m dy - eta kappa m^2 dt)`, which agrees with the stochastic master equation to
//! first order and keeps every step completely positive.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::operators::{SpinOperators, C64};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TimeGrid};

/// Negative eigenvalues above this magnitude abort the evolution.
pub const POSITIVITY_ABORT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixRole {
    Rho,
    Tau,
    RhoBar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityLikeMatrix {
    pub data: DMatrix<C64>,
    pub role: MatrixRole,
    pub t: f64,
}

impl DensityLikeMatrix {
    pub fn rho(data: DMatrix<C64>, t: f64) -> Self {
        Self {
            data,
            role: MatrixRole::Rho,
            t,
        }
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        (&self.data - self.data.adjoint()).norm()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        min_eigenvalue(&self.data)
    }
}

/// Relative flush levels tried in turn by [`hermitian_eigen`].
const EIGEN_FLUSH_LEVELS: [f64; 3] = [1e-30, 1e-20, 1e-14];

/// Eigendecomposition of the Hermitian part.
///
/// Conditional states have entries spanning hundreds of orders of magnitude,
/// on which the QR sweep can stall or return NaN. Entries far below the
/// largest one are flushed to zero first, which moves eigenvalues by at most
/// `dim * level * max|entry|`; coarser levels are tried if a sweep fails.
pub(crate) fn hermitian_eigen(m: &DMatrix<C64>) -> Result<SymmetricEigen<C64, nalgebra::Dyn>> {
    let h = (m + m.adjoint()).scale(0.5);
    let max = h.iter().map(|x| x.norm()).fold(0.0, f64::max);
    for level in EIGEN_FLUSH_LEVELS {
        let cutoff = level * max;
        let flushed = h.map(|x| if x.norm() < cutoff { C64::new(0.0, 0.0) } else { x });
        if let Some(eig) = SymmetricEigen::try_new(flushed, f64::EPSILON, 10_000) {
            if eig.eigenvalues.iter().all(|l| l.is_finite())
                && eig.eigenvectors.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            {
                return Ok(eig);
            }
        }
    }
    Err(Error::NonFinite("Hermitian eigendecomposition"))
}

/// Smallest eigenvalue of the Hermitian part.
pub fn min_eigenvalue(m: &DMatrix<C64>) -> Result<f64> {
    Ok(hermitian_eigen(m)?
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

/// Half the trace norm of `a - b` for Hermitian arguments.
pub fn trace_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<f64> {
    Ok(0.5
        * hermitian_eigen(&(a - b))?
            .eigenvalues
            .iter()
            .map(|x| x.abs())
            .sum::<f64>())
}

/// Sampling and safety cadence of an evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Keep every `sample_every`-th state (the initial and final states are always kept).
    pub sample_every: usize,
    /// Check positivity every this many steps and at the end; 0 disables the checks.
    pub check_every: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            sample_every: usize::MAX,
            check_every: 64,
        }
    }
}

impl EvolveOptions {
    fn due_check(&self, step: usize, n: usize) -> bool {
        self.check_every != 0 && (step.is_multiple_of(self.check_every) || step == n)
    }
}

/// Source of the stochastic increments of a conditional evolution.
#[derive(Debug, Clone, PartialEq)]
pub enum Drive {
    /// Draw Wiener increments from a seeded ChaCha8 stream.
    Seed(u64),
    /// Given Wiener increments dw, one per step.
    Noise(Vec<f64>),
    /// Given photocurrent increments dy, one per step; dw is reconstructed.
    Record(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTrajectory {
    pub states: Vec<DensityLikeMatrix>,
    /// Photocurrent increments `dy = 2 sqrt(eta kappa) <Jz> dt + dw`.
    pub record: Vec<f64>,
}

impl ConditionalTrajectory {
    pub fn final_state(&self) -> &DensityLikeMatrix {
        self.states.last().expect("at least the initial state")
    }
}

pub(crate) struct Stepper<'a> {
    pub ops: &'a SpinOperators,
    pub rotation: Option<DMatrix<C64>>,
    pub dephasing: DMatrix<f64>,
    /// `exp(-eta kappa m^2 dt)`.
    pub quad: Vec<f64>,
    pub meas: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(ops: &'a SpinOperators, params: &ModelParams, dt: f64, monitored_eta: f64) -> Self {
        let k = params.kappa;
        let theta = params.gamma * params.field * dt;
        let rotation = (theta != 0.0).then(|| ops.jy_rotation(theta));
        let n = ops.dim();
        let dephasing = DMatrix::from_fn(n, n, |r, c| {
            let d = ops.m[r] - ops.m[c];
            (-(1.0 - monitored_eta) * k * d * d * dt / 2.0).exp()
        });
        let quad = ops.m.iter().map(|m| (-monitored_eta * k * m * m * dt).exp()).collect();
        Self {
            ops,
            rotation,
            dephasing,
            quad,
            meas: (monitored_eta * k).sqrt(),
        }
    }

    /// `M_m` for a photocurrent increment dy, built from powers of exp(s dy).
    pub fn kraus(&self, dy: f64) -> Vec<f64> {
        let r = (self.meas * dy).exp();
        let r_inv = r.recip();
        let mut x = (self.meas * dy * self.ops.total_spin).exp();
        self.quad
            .iter()
            .map(|q| {
                let v = x * q;
                x *= r_inv;
                v
            })
            .collect()
    }

    /// Rotation then elementwise factor `kraus_m kraus_n dephasing_mn`.
    pub fn apply(&self, rho: &DMatrix<C64>, kraus: Option<&[f64]>) -> DMatrix<C64> {
        let mut out = match &self.rotation {
            Some(u) => u * rho * u.adjoint(),
            None => rho.clone(),
        };
        let n = out.nrows();
        for c in 0..n {
            for r in 0..n {
                let mut f = self.dephasing[(r, c)];
                if let Some(k) = kraus {
                    f *= k[r] * k[c];
                }
                out[(r, c)] *= f;
            }
        }
        out
    }
}

fn check_positivity(rho: &mut DMatrix<C64>, t: f64) -> Result<()> {
    let eig = hermitian_eigen(rho)?;
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -POSITIVITY_ABORT {
        return Err(Error::PositivityLoss { t, min_eigenvalue: min });
    }
    if min < 0.0 {
        let clipped = eig.eigenvalues.map(|l| C64::new(l.max(0.0), 0.0));
        let v = &eig.eigenvectors;
        let mut r = v * DMatrix::from_diagonal(&clipped) * v.adjoint();
        let tr = r.trace();
        r /= tr;
        *rho = r;
    }
    Ok(())
}

fn validate_rho(rho0: &DMatrix<C64>, ops: &SpinOperators) -> Result<()> {
    if rho0.nrows() != ops.dim() || rho0.ncols() != ops.dim() {
        return Err(Error::InvalidParameter {
            name: "rho0",
            value: rho0.nrows() as f64,
            reason: "dimension must be 2J + 1",
        });
    }
    if (rho0.trace().re - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name: "rho0",
            value: rho0.trace().re,
            reason: "trace must be one",
        });
    }
    Ok(())
}

/// Lindblad evolution with H = gamma B Jy and jump operator sqrt(kappa) Jz.
pub fn evolve_unconditional(
    ops: &SpinOperators,
    rho0: &DMatrix<C64>,
    params: &ModelParams,
    grid: &TimeGrid,
    options: EvolveOptions,
) -> Result<Vec<DensityLikeMatrix>> {
    params.validate()?;
    grid.validate()?;
    validate_rho(rho0, ops)?;
    let stepper = Stepper::new(ops, params, grid.dt(), 0.0);
    let mut rho = rho0.clone();
    let mut states = vec![DensityLikeMatrix::rho(rho.clone(), 0.0)];
    for i in 0..grid.n_steps {
        rho = stepper.apply(&rho, None);
        let t = grid.time(i + 1);
        if options.due_check(i + 1, grid.n_steps) {
            check_positivity(&mut rho, t)?;
        }
        if (i + 1) % options.sample_every == 0 || i + 1 == grid.n_steps {
            states.push(DensityLikeMatrix::rho(rho.clone(), t));
        }
    }
    Ok(states)
}

/// Conditional evolution under continuous monitoring of Jz with efficiency eta.
pub fn evolve_conditional(
    ops: &SpinOperators,
    rho0: &DMatrix<C64>,
    params: &ModelParams,
    grid: &TimeGrid,
    drive: &Drive,
    options: EvolveOptions,
) -> Result<ConditionalTrajectory> {
    params.validate()?;
    grid.validate()?;
    validate_rho(rho0, ops)?;
    let n = grid.n_steps;
    match drive {
        Drive::Noise(v) | Drive::Record(v) if v.len() != n => {
            return Err(Error::RecordMismatch(format!("{} increments for {n} steps", v.len())));
        }
        _ => {}
    }
    let dt = grid.dt();
    let stepper = Stepper::new(ops, params, dt, params.eta);
    let mut rng = match drive {
        Drive::Seed(s) => Some(ChaCha8Rng::seed_from_u64(*s)),
        _ => None,
    };
    let mut rho = rho0.clone();
    let mut states = vec![DensityLikeMatrix::rho(rho.clone(), 0.0)];
    let mut record = Vec::with_capacity(n);
    let gain = 2.0 * stepper.meas;
    for i in 0..n {
        let mean = gain * ops.mean_jz(&rho) * dt;
        let dy = match drive {
            Drive::Seed(_) => {
                let z: f64 = StandardNormal.sample(rng.as_mut().expect("seeded stream"));
                mean + z * dt.sqrt()
            }
            Drive::Noise(dw) => mean + dw[i],
            Drive::Record(dy) => dy[i],
        };
        record.push(dy);
        let kraus = stepper.kraus(dy);
        rho = stepper.apply(&rho, Some(&kraus));
        let tr = rho.trace();
        if !(tr.re > 0.0 && tr.re.is_finite()) {
            return Err(Error::NonFinite("conditional state trace"));
        }
        rho /= tr;
        let t = grid.time(i + 1);
        if options.due_check(i + 1, n) {
            check_positivity(&mut rho, t)?;
        }
        if (i + 1) % options.sample_every == 0 || i + 1 == n {
            states.push(DensityLikeMatrix::rho(rho.clone(), t));
        }
    }
    Ok(ConditionalTrajectory { states, record })
}

/// Var[Jz] of a density matrix.
pub fn variance_jz(ops: &SpinOperators, rho: &DMatrix<C64>) -> f64 {
    let mean = ops.mean_jz(rho);
    ops.m
        .iter()
        .enumerate()
        .map(|(k, m)| (m - mean).powi(2) * rho[(k, k)].re)
        .sum()
}
