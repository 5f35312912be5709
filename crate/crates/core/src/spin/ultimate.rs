//! Ultimate QFI at finite J from the two-field generalized master equation
//! `d rho_bar/dt = -i (H1 rho_bar - rho_bar H2) + kappa D[Jz] rho_bar`,
//! with `H_k = gamma B_k Jy`. Its trace is the overlap of the two global
//! states, and `Q_bar = 4 d^2 log|Tr rho_bar| / dB1 dB2` at B1 = B2 = B.

use nalgebra::DMatrix;

use super::evolve::{DensityLikeMatrix, MatrixRole};
use super::operators::{SpinCoherentState, SpinOperators};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TimeGrid};

/// Target |log C| at the off-diagonal finite-difference points.
pub const LOG_OVERLAP_TARGET: f64 = 1e-4;
/// Largest relative change tolerated when the offset is halved.
pub const REFINEMENT_TOLERANCE: f64 = 1e-2;

/// Elementwise dephasing factors `exp(-kappa (m - n)^2 dt / 2)`.
fn dephasing(ops: &SpinOperators, kappa: f64, dt: f64) -> DMatrix<f64> {
    let n = ops.dim();
    DMatrix::from_fn(n, n, |r, c| {
        let d = ops.m[r] - ops.m[c];
        (-kappa * d * d * dt / 2.0).exp()
    })
}

/// Integrate the generalized master equation from the coherent state.
pub fn evolve_rho_bar(
    ops: &SpinOperators,
    params: &ModelParams,
    grid: &TimeGrid,
    field_1: f64,
    field_2: f64,
) -> Result<DensityLikeMatrix> {
    params.validate()?;
    grid.validate()?;
    let dt = grid.dt();
    let u1 = ops.jy_rotation(params.gamma * field_1 * dt);
    let u2_adj = ops.jy_rotation(params.gamma * field_2 * dt).adjoint();
    let deph = dephasing(ops, params.kappa, dt);
    let mut rho = SpinCoherentState::along_x(ops).density_matrix();
    for _ in 0..grid.n_steps {
        rho = &u1 * &rho * &u2_adj;
        rho.zip_apply(&deph, |x, f| *x *= f);
    }
    if rho.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::NonFinite("generalized master equation"));
    }
    Ok(DensityLikeMatrix {
        data: rho,
        role: MatrixRole::RhoBar,
        t: grid.t_final,
    })
}

/// `log |Tr rho_bar|` for fields `(B + d1, B + d2)`.
fn log_overlap(ops: &SpinOperators, p: &ModelParams, g: &TimeGrid, d1: f64, d2: f64) -> Result<f64> {
    Ok(evolve_rho_bar(ops, p, g, p.field + d1, p.field + d2)?
        .trace()
        .norm()
        .ln())
}

/// Central mixed difference at offset h, using log C = 0 on the diagonal.
fn mixed_difference(ops: &SpinOperators, p: &ModelParams, g: &TimeGrid, h: f64) -> Result<f64> {
    let pm = log_overlap(ops, p, g, h, -h)?;
    let mp = log_overlap(ops, p, g, -h, h)?;
    Ok(-(pm + mp) / (h * h))
}

/// Finite-difference result with the offsets used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltimateQfiEstimate {
    pub value: f64,
    /// Value at twice the final offset.
    pub coarse: f64,
    pub offset: f64,
}

/// Ultimate QFI at finite J. With `offset = None` the offset is chosen so
/// that |log C| at the off-diagonal points is about [`LOG_OVERLAP_TARGET`];
/// the estimate is then recomputed at half the offset and the two must agree.
pub fn ultimate_qfi_finite_j(
    params: &ModelParams,
    grid: &TimeGrid,
    offset: Option<f64>,
) -> Result<UltimateQfiEstimate> {
    let ops = SpinOperators::new(params.total_spin)?;
    ultimate_qfi_finite_j_with(&ops, params, grid, offset)
}

pub fn ultimate_qfi_finite_j_with(
    ops: &SpinOperators,
    params: &ModelParams,
    grid: &TimeGrid,
    offset: Option<f64>,
) -> Result<UltimateQfiEstimate> {
    let h = match offset {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => {
            return Err(Error::InvalidParameter {
                name: "offset",
                value: h,
                reason: "must be positive",
            })
        }
        None => {
            let probe_h = 1e-3;
            let probe = -log_overlap(ops, params, grid, probe_h, -probe_h)?;
            if !(probe > 0.0 && probe.is_finite()) {
                return Err(Error::FiniteDifference(format!(
                    "overlap dip unresolved at offset {probe_h:e} (log C = {:e})",
                    -probe
                )));
            }
            probe_h * (LOG_OVERLAP_TARGET / probe).sqrt()
        }
    };
    let coarse = mixed_difference(ops, params, grid, h)?;
    let fine = mixed_difference(ops, params, grid, 0.5 * h)?;
    if !(coarse.is_finite() && fine.is_finite()) {
        return Err(Error::FiniteDifference("non-finite mixed difference".into()));
    }
    let rel = ((fine - coarse) / fine).abs();
    if rel > REFINEMENT_TOLERANCE {
        return Err(Error::FiniteDifference(format!(
            "offset refinement changed the estimate by {rel:.2e}"
        )));
    }
    Ok(UltimateQfiEstimate {
        value: fine,
        coarse,
        offset: 0.5 * h,
    })
}
