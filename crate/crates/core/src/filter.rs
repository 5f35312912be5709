//! Gaussian conditional dynamics of the effective (X, P) mode.
//!
//! The covariance and the field sensitivity evolve deterministically; only the
//! first moment of P carries measurement noise. The record convention used
//! throughout is the one where the photocurrent is
//! `dy = 2 sqrt(eta kappa Jbar) <P> dt + dw`, which is the convention under
//! which the variance flow, the mean update gain `2 Var sqrt(eta kappa Jbar)`
//! and the sensitivity equation are mutually consistent.

use std::io::{BufRead, Write};

use nalgebra::{Matrix2, Vector2};

use crate::error::{check_time, Error, Result};
use crate::model::{moment_matrices, ModelParams, TimeGrid};
use crate::ode::{rk4_span, StepControl};

/// Default pointwise tolerance between the variance ODE and its closed form.
pub const VARIANCE_ODE_TOLERANCE: f64 = 1e-6;

/// First moments and covariance of the conditional state.
///
/// `cov` follows the symmetrized convention, so `cov[(1,1)] = 2 Var_c[P]`.
/// `mean_x` is carried along but never enters any information quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianConditionalState {
    pub mean_x: f64,
    pub mean_p: f64,
    pub cov: Matrix2<f64>,
    pub t: f64,
}

impl GaussianConditionalState {
    /// The spin coherent state mapped to the vacuum: zero means, identity covariance.
    pub fn initial() -> Self {
        Self {
            mean_x: 0.0,
            mean_p: 0.0,
            cov: Matrix2::identity(),
            t: 0.0,
        }
    }

    #[inline]
    pub fn var_p(&self) -> f64 {
        0.5 * self.cov[(1, 1)]
    }

    /// Robertson-Schrodinger form of the uncertainty relation, det(cov) >= 1.
    pub fn uncertainty_product(&self) -> f64 {
        self.cov.determinant()
    }
}

/// Derivative of the conditional mean of P with respect to B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityState {
    pub dmean_p_db: f64,
    pub t: f64,
}

/// Closed-form conditional variance of P, 1 / (8 eta J (1 - e^{-kappa t/2}) + 2).
pub fn var_p_closed(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(var_p_unchecked(params, t))
}

#[inline]
pub(crate) fn var_p_unchecked(p: &ModelParams, t: f64) -> f64 {
    let decayed = -(-0.5 * p.kappa * t).exp_m1();
    1.0 / (8.0 * p.eta * p.total_spin * decayed + 2.0)
}

/// Closed-form sigma_11 = 1 + 4 J (1 - e^{-kappa t/2}) (valid while sigma_12 = 0).
pub fn sigma_xx_closed(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(1.0 - 4.0 * params.total_spin * (-0.5 * params.kappa * t).exp_m1())
}

/// Analytic solution of the sensitivity equation, obtained with the
/// integrating factor 1/(2 Var).
pub fn sensitivity_closed(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let p = params;
    let k = p.kappa;
    let ej = 8.0 * p.eta * p.total_spin;
    let quarter = -(-0.25 * k * t).exp_m1();
    let three_quarter = -(-0.75 * k * t).exp_m1();
    let integral = p.gamma * p.total_spin.sqrt() * (4.0 / k) * ((2.0 + ej) * quarter - ej / 3.0 * three_quarter);
    Ok(-var_p_unchecked(p, t) * integral)
}

/// Deterministic part of the filter sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterFlow {
    pub times: Vec<f64>,
    pub var_p: Vec<f64>,
    pub dmean_p_db: Vec<f64>,
    /// Running Fisher information of the photocurrent, the time integral of
    /// 4 eta kappa Jbar (d<P>/dB)^2.
    pub fisher_record: Vec<f64>,
}

/// Integrate Var_c[P], d<P>/dB and the accumulated record Fisher information
/// together, starting from Var = 1/2 and zero sensitivity.
pub fn integrate_flow(params: &ModelParams, grid: &TimeGrid, control: StepControl) -> Result<FilterFlow> {
    params.validate()?;
    grid.validate()?;
    let p = *params;
    let rhs = move |t: f64, y: &[f64; 3]| {
        let jb = p.jbar_unchecked(t);
        let rate = 4.0 * p.eta * p.kappa * jb;
        let (var, sens) = (y[0], y[1]);
        [
            -rate * var * var,
            -p.gamma * jb.sqrt() - rate * var * sens,
            rate * sens * sens,
        ]
    };
    let dt = grid.dt();
    let mut y = [0.5, 0.0, 0.0];
    let mut flow = FilterFlow {
        times: Vec::with_capacity(grid.n_steps + 1),
        var_p: Vec::with_capacity(grid.n_steps + 1),
        dmean_p_db: Vec::with_capacity(grid.n_steps + 1),
        fisher_record: Vec::with_capacity(grid.n_steps + 1),
    };
    let push = |flow: &mut FilterFlow, t: f64, y: &[f64; 3]| {
        flow.times.push(t);
        flow.var_p.push(y[0]);
        flow.dmean_p_db.push(y[1]);
        flow.fisher_record.push(y[2]);
    };
    push(&mut flow, 0.0, &y);
    for i in 0..grid.n_steps {
        let t0 = grid.time(i);
        // linearized decay rate of the variance equation, the stiffest mode
        let stiffness = 8.0 * p.eta * p.kappa * p.jbar_unchecked(t0) * y[0] + p.kappa;
        let n = control.substeps(stiffness, dt);
        y = rk4_span(&rhs, t0, y, dt, n);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("filter flow"));
        }
        push(&mut flow, grid.time(i + 1), &y);
    }
    Ok(flow)
}

/// Numerical Var_c[P(t)] on the grid, checked pointwise against the closed form.
pub fn var_p_ode(params: &ModelParams, grid: &TimeGrid, control: StepControl, tolerance: f64) -> Result<Vec<f64>> {
    let flow = integrate_flow(params, grid, control)?;
    let rel_err = flow
        .times
        .iter()
        .zip(&flow.var_p)
        .map(|(&t, &v)| {
            let exact = var_p_unchecked(params, t);
            ((v - exact) / exact).abs()
        })
        .fold(0.0, f64::max);
    if rel_err > tolerance {
        return Err(Error::Convergence {
            what: "conditional variance ODE",
            rel_err,
            tolerance,
        });
    }
    Ok(flow.var_p)
}

/// Step count for plain fixed-step RK4 on the variance equation:
/// max(kappa dt, 4 eta kappa J dt Var(0)^2) <= 1e-3.
pub fn recommended_steps(params: &ModelParams, t_final: f64) -> usize {
    let rate = params.kappa.max(params.eta * params.kappa * params.total_spin);
    ((rate * t_final / 1e-3).ceil() as usize).max(1)
}

/// One Euler-Maruyama step of the conditional mean of P, with the covariance
/// moved to its deterministic value at `t + dt`.
pub fn step_conditional_mean(
    state: &GaussianConditionalState,
    params: &ModelParams,
    dt: f64,
    dw: f64,
) -> GaussianConditionalState {
    let p = params;
    let jb = p.jbar_unchecked(state.t);
    let mean_p =
        state.mean_p - p.field * p.gamma * jb.sqrt() * dt + 2.0 * state.var_p() * (p.eta * p.kappa * jb).sqrt() * dw;
    let t = state.t + dt;
    GaussianConditionalState {
        mean_x: state.mean_x,
        mean_p,
        cov: covariance_closed(p, t),
        t,
    }
}

fn covariance_closed(p: &ModelParams, t: f64) -> Matrix2<f64> {
    let sxx = 1.0 - 4.0 * p.total_spin * (-0.5 * p.kappa * t).exp_m1();
    Matrix2::new(sxx, 0.0, 0.0, 2.0 * var_p_unchecked(p, t))
}

/// Matrix-form step: `dr = u dt + sigma M dw / sqrt(2)`, `dsigma = (D - sigma M M^T sigma) dt`.
///
/// `dw` holds two independent Wiener increments; only the first couples to
/// the state for this model.
pub fn step_conditional_mean_matrix(
    state: &GaussianConditionalState,
    params: &ModelParams,
    dt: f64,
    dw: Vector2<f64>,
) -> Result<GaussianConditionalState> {
    let mm = moment_matrices(params, state.t)?;
    // M is 2x2 with a single (2,1) entry, so M dw = (0, m dw_1)
    let m_dw = Vector2::new(0.0, mm.measurement[1] * dw[0]);
    let r = Vector2::new(state.mean_x, state.mean_p) + mm.drift * dt + state.cov * m_dw / std::f64::consts::SQRT_2;
    let cov = riccati_span(params, state.cov, state.t, dt, 8)?;
    Ok(GaussianConditionalState {
        mean_x: r[0],
        mean_p: r[1],
        cov,
        t: state.t + dt,
    })
}

fn riccati_rhs(p: &ModelParams) -> impl Fn(f64, &[f64; 3]) -> [f64; 3] {
    let p = *p;
    move |t: f64, y: &[f64; 3]| {
        let jb = p.jbar_unchecked(t);
        let d = 2.0 * p.kappa * jb;
        let mm = 2.0 * p.eta * p.kappa * jb;
        let (sxp, spp) = (y[1], y[2]);
        // D - sigma M M^T sigma, with M M^T = diag(0, mm)
        [d - mm * sxp * sxp, -mm * sxp * spp, -mm * spp * spp]
    }
}

fn riccati_span(p: &ModelParams, cov: Matrix2<f64>, t0: f64, dt: f64, n: usize) -> Result<Matrix2<f64>> {
    let f = riccati_rhs(p);
    let y = rk4_span(&f, t0, [cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]], dt, n);
    let out = Matrix2::new(y[0], y[1], y[1], y[2]);
    if !(out[(0, 0)] > 0.0 && out.determinant() > 0.0) {
        return Err(Error::NotPositiveDefinite { t: t0 + dt });
    }
    Ok(out)
}

/// Full 2x2 Riccati flow of the covariance from sigma(0) = identity.
pub fn cov_flow_matrix(params: &ModelParams, grid: &TimeGrid, control: StepControl) -> Result<Vec<Matrix2<f64>>> {
    params.validate()?;
    grid.validate()?;
    let dt = grid.dt();
    let mut cov = Matrix2::identity();
    let mut out = Vec::with_capacity(grid.n_steps + 1);
    out.push(cov);
    for i in 0..grid.n_steps {
        let t0 = grid.time(i);
        let stiffness = 4.0 * params.eta * params.kappa * params.jbar_unchecked(t0) * cov[(1, 1)] + params.kappa;
        let n = control.substeps(stiffness, dt);
        cov = riccati_span(params, cov, t0, dt, n)?;
        out.push(cov);
    }
    Ok(out)
}

/// Sensitivity d<P>/dB on the grid. Deterministic: no noise enters.
pub fn sensitivity_ode(params: &ModelParams, grid: &TimeGrid, control: StepControl) -> Result<Vec<SensitivityState>> {
    let flow = integrate_flow(params, grid, control)?;
    Ok(flow
        .times
        .iter()
        .zip(&flow.dmean_p_db)
        .map(|(&t, &s)| SensitivityState { dmean_p_db: s, t })
        .collect())
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub mean_p: f64,
    pub var_p: f64,
    pub dmean_p_db: f64,
}

pub const TRAJECTORY_HEADER: &str = "# ctmag-trajectory v1";

/// Write rows as comma-separated columns `t,mean_p,var_p,dmean_p_dB` after a
/// versioned header line.
pub fn write_trajectory_dump<W: Write>(mut w: W, rows: &[TrajectoryRow]) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    writeln!(w, "t,mean_p,var_p,dmean_p_dB")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.t, r.mean_p, r.var_p, r.dmean_p_db)?;
    }
    Ok(())
}

pub fn read_trajectory_dump<R: BufRead>(r: R) -> Result<Vec<TrajectoryRow>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => return Err(Error::Parse("missing trajectory header".into())),
    }
    lines.next().transpose()?;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(Error::Parse(format!("expected 4 columns, got {}", v.len())));
        }
        rows.push(TrajectoryRow {
            t: v[0],
            mean_p: v[1],
            var_p: v[2],
            dmean_p_db: v[3],
        });
    }
    Ok(rows)
}
