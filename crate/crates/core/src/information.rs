//! Fisher information of the photocurrent, quantum Fisher information of the
//! conditional state, the effective QFI and the ultimate (global-state) QFI.
//!
//! Every closed form is evaluated in a rearrangement built on `exp_m1`, which
//! is algebraically identical to the textbook expression but free of the
//! catastrophic cancellation that appears for small `kappa t` or large `J`.
//! All information quantities carry units of 1/G^2.

use std::io::Write;

use nalgebra::Complex;

use crate::error::{check_time, Error, Result};
use crate::filter::{integrate_flow, var_p_unchecked};
use crate::model::{ModelParams, TimeGrid, ValidityThresholds};
use crate::ode::{rk4_span, StepControl};

/// Information quantities for one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationReport {
    pub total_spin: f64,
    pub kappa_t: f64,
    pub eta: f64,
    pub gamma_over_kappa: f64,
    /// Classical Fisher information of the photocurrent record.
    pub fisher_record: f64,
    /// QFI of the conditional state.
    pub qfi_conditional: f64,
    /// `fisher_record + qfi_conditional`.
    pub qfi_effective: f64,
    /// QFI of the global system + environment state.
    pub qfi_ultimate: f64,
    pub k1: f64,
    pub k2: f64,
}

pub const REPORT_CSV_HEADER: &str = "J,kappa_t,eta,gamma_over_kappa,F_record,Q_cond,Q_tilde,Q_bar,K1,K2";

impl InformationReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.total_spin,
            self.kappa_t,
            self.eta,
            self.gamma_over_kappa,
            self.fisher_record,
            self.qfi_conditional,
            self.qfi_effective,
            self.qfi_ultimate,
            self.k1,
            self.k2
        )
    }
}

pub fn write_reports_csv<W: Write>(mut w: W, reports: &[InformationReport]) -> Result<()> {
    writeln!(w, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

// Shorthands for e^{kappa t/4} and friends.
struct Exps {
    /// e^{u}, u = kappa t / 4
    a: f64,
    /// e^{u} - 1
    em1: f64,
    /// 1 - e^{-u}
    one_minus_x: f64,
    /// e^{-u}
    x: f64,
}

impl Exps {
    fn new(kappa_t: f64) -> Self {
        let u = 0.25 * kappa_t;
        Self {
            a: u.exp(),
            em1: u.exp_m1(),
            one_minus_x: -(-u).exp_m1(),
            x: (-u).exp(),
        }
    }

    /// (4 eta J + 1) e^{2u} - 4 eta J
    fn denominator(&self, eta_j: f64, kappa_t: f64) -> f64 {
        4.0 * eta_j * (0.5 * kappa_t).exp_m1() + self.a * self.a
    }
}

/// Classical Fisher information of the homodyne record up to time t.
pub fn fisher_record_closed(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let p = params;
    let kt = p.kappa_t(t);
    let e = Exps::new(kt);
    let ej = p.eta * p.total_spin;
    let g2 = p.gamma_over_kappa().powi(2);
    // bracket: -4 eta J - 12 eta J a + 3 (4 eta J + 3) a^2 + (4 eta J + 3) a^3
    let bracket = 4.0 * ej * e.em1 * (6.0 + 6.0 * e.em1 + e.em1 * e.em1) + 3.0 * e.a * e.a * (3.0 + e.a);
    let num = 64.0 * g2 * p.eta * p.total_spin.powi(2) * (-kt).exp() * e.em1.powi(3) * bracket;
    Ok(num / (9.0 * e.denominator(ej, kt)))
}

/// Leading large-J form of the record Fisher information.
pub fn fisher_record_large_j(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let p = params;
    let kt = p.kappa_t(t);
    let e = Exps::new(kt);
    let g2 = p.gamma_over_kappa().powi(2);
    Ok(
        64.0 * g2 * p.eta * p.total_spin.powi(2) * (-kt).exp() * e.em1.powi(3) * (4.0 * e.a + e.a * e.a + 1.0)
            / (9.0 * (e.a + 1.0)),
    )
}

/// Leading small-time behavior, (4/3) eta J^2 gamma^2 kappa t^3.
pub fn fisher_record_small_t(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let p = params;
    Ok(4.0 / 3.0 * p.eta * p.total_spin.powi(2) * p.gamma.powi(2) * p.kappa * t.powi(3))
}

/// Record Fisher information by integrating the sensitivity equation and
/// accumulating `4 eta kappa Jbar (d<P>/dB)^2`. Returns the value at the end
/// of the grid.
pub fn fisher_record_numeric(params: &ModelParams, grid: &TimeGrid, control: StepControl) -> Result<f64> {
    let flow = integrate_flow(params, grid, control)?;
    Ok(*flow.fisher_record.last().expect("non-empty flow"))
}

/// Closed-form QFI of the conditional Gaussian state.
pub fn qfi_conditional(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let p = params;
    let kt = p.kappa_t(t);
    let e = Exps::new(kt);
    let ej = p.eta * p.total_spin;
    let g2 = p.gamma_over_kappa().powi(2);
    // 12 eta J - 4 eta J e^{-2u} - (8 eta J + 3) e^{u} + 3
    //   = -(e^u - 1) [4 eta J e^{-2u} (e^u - 1)(2 e^u + 1) + 3]
    let inner = 4.0 * ej * e.x * e.x * e.em1 * (2.0 * e.a + 1.0) + 3.0;
    let num = 32.0 * g2 * p.total_spin * (e.em1 * inner).powi(2);
    Ok(num / (9.0 * e.denominator(ej, kt)))
}

/// Conditional QFI from the ODE route: (d<P>/dB)^2 / Var_c[P], both integrated numerically.
pub fn qfi_conditional_numeric(params: &ModelParams, grid: &TimeGrid, control: StepControl) -> Result<f64> {
    let flow = integrate_flow(params, grid, control)?;
    let s = *flow.dmean_p_db.last().expect("non-empty flow");
    let v = *flow.var_p.last().expect("non-empty flow");
    Ok(qfi_from_moments(s, v))
}

/// QFI of a Gaussian state whose only parameter dependence is in <P>.
#[inline]
pub fn qfi_from_moments(dmean_p_db: f64, var_p: f64) -> f64 {
    dmean_p_db * dmean_p_db / var_p
}

/// Large-J form of the conditional QFI.
pub fn qfi_conditional_large_j(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let p = params;
    let kt = p.kappa_t(t);
    let e = Exps::new(kt);
    let g2 = p.gamma_over_kappa().powi(2);
    // -3 a^2 + 2 a^3 + 1 = (a - 1)^2 (2a + 1)
    let poly = e.em1 * e.em1 * (2.0 * e.a + 1.0);
    Ok(128.0 * g2 * p.eta * p.total_spin.powi(2) * (-kt).exp() * poly * poly / (9.0 * (0.5 * kt).exp_m1()))
}

/// SQL coefficient K1 = 32 (gamma/kappa)^2 (1 - e^{-kappa t/4})^2.
pub fn k1(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let e = Exps::new(params.kappa_t(t));
    Ok(32.0 * params.gamma_over_kappa().powi(2) * e.one_minus_x.powi(2))
}

/// Heisenberg coefficient K2 = 64 (gamma/kappa)^2 (1 - 8/3 x + 2 x^2 - x^4/3),
/// x = e^{-kappa t/4}, evaluated as (64/3) (gamma/kappa)^2 (1 - x)^3 (3 + x).
pub fn k2(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let e = Exps::new(params.kappa_t(t));
    Ok(64.0 / 3.0 * params.gamma_over_kappa().powi(2) * e.one_minus_x.powi(3) * (3.0 + e.x))
}

/// Effective QFI and its ingredients.
pub fn effective_qfi(params: &ModelParams, t: f64) -> Result<InformationReport> {
    params.validate()?;
    let fisher = fisher_record_closed(params, t)?;
    let q = qfi_conditional(params, t)?;
    Ok(InformationReport {
        total_spin: params.total_spin,
        kappa_t: params.kappa_t(t),
        eta: params.eta,
        gamma_over_kappa: params.gamma_over_kappa(),
        fisher_record: fisher,
        qfi_conditional: q,
        qfi_effective: fisher + q,
        qfi_ultimate: ultimate_qfi_closed(params, t)?,
        k1: k1(params, t)?,
        k2: k2(params, t)?,
    })
}

/// K1 J + eta K2 J^2, the simplified effective QFI.
pub fn effective_qfi_k_form(params: &ModelParams, t: f64) -> Result<f64> {
    let j = params.total_spin;
    Ok(k1(params, t)? * j + params.eta * k2(params, t)? * j * j)
}

/// Solution of the two-field generalized master equation in the Gaussian ansatz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenMeSolution {
    /// Trace of the two-field operator, the overlap of the global states.
    pub trace: Complex<f64>,
    /// Phase-space first moment x_m (purely imaginary for this model).
    pub x_m: Complex<f64>,
    pub sigma11: f64,
    pub field_1: f64,
    pub field_2: f64,
    pub t: f64,
}

/// Exponent q(t) in C(t) = exp(-q (B1 - B2)^2).
fn overlap_exponent(p: &ModelParams, t: f64) -> f64 {
    let kt = p.kappa_t(t);
    let e = Exps::new(kt);
    let j = p.total_spin;
    // -4 J a + (6 J + 3) a^2 - 2 J = 2 J (a - 1)(3 a + 1) + 3 a^2
    let poly = 2.0 * j * e.em1 * (3.0 * e.a + 1.0) + 3.0 * e.a * e.a;
    4.0 * p.gamma_over_kappa().powi(2) / 3.0 * j * (-kt).exp() * e.em1 * e.em1 * poly
}

/// Closed-form solution of the generalized master equation for fields (B1, B2).
pub fn gen_me_closed(params: &ModelParams, t: f64, field_1: f64, field_2: f64) -> Result<GenMeSolution> {
    check_time(t)?;
    let p = params;
    let k = p.kappa;
    let j = p.total_spin;
    let db = field_1 - field_2;
    let sigma11 = 1.0 - 4.0 * j * (-0.5 * k * t).exp_m1();
    // int_0^t sqrt(Jbar) sigma11 ds
    let integral = j.sqrt()
        * ((1.0 + 4.0 * j) * (4.0 / k) * (-(-0.25 * k * t).exp_m1())
            - 4.0 * j * (4.0 / (3.0 * k)) * (-(-0.75 * k * t).exp_m1()));
    let x_m = Complex::new(0.0, -0.5 * p.gamma * db * integral);
    let trace = Complex::new((-overlap_exponent(p, t) * db * db).exp(), 0.0);
    Ok(GenMeSolution {
        trace,
        x_m,
        sigma11,
        field_1,
        field_2,
        t,
    })
}

/// Ultimate QFI, 4 d^2/dB1 dB2 log|C| at B1 = B2, which equals 8 q(t).
pub fn ultimate_qfi_closed(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(8.0 * overlap_exponent(params, t))
}

/// Integrate the (sigma11, x_m, C) system of the Gaussian ansatz with RK4.
pub fn gen_me_ode(params: &ModelParams, grid: &TimeGrid, field_1: f64, field_2: f64) -> Result<GenMeSolution> {
    params.validate()?;
    grid.validate()?;
    let p = *params;
    let db = field_1 - field_2;
    // state: sigma11, Re x_m, Im x_m, Re C, Im C
    let rhs = move |t: f64, y: &[f64; 5]| {
        let jb = p.jbar_unchecked(t);
        let sq = jb.sqrt();
        let x_m = Complex::new(y[1], y[2]);
        let c = Complex::new(y[3], y[4]);
        let dx = Complex::new(0.0, -0.5 * p.gamma * sq * db * y[0]);
        let dc = Complex::new(0.0, -p.gamma * sq * db) * x_m * c;
        [2.0 * p.kappa * jb, dx.re, dx.im, dc.re, dc.im]
    };
    let y = rk4_span(&rhs, 0.0, [1.0, 0.0, 0.0, 1.0, 0.0], grid.t_final, grid.n_steps);
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("generalized master equation"));
    }
    Ok(GenMeSolution {
        trace: Complex::new(y[3], y[4]),
        x_m: Complex::new(y[1], y[2]),
        sigma11: y[0],
        field_1,
        field_2,
        t: grid.t_final,
    })
}

/// Target size of |log C| at the finite-difference offsets.
const LOG_OVERLAP_TARGET: f64 = 0.1;

/// Ultimate QFI from the ansatz ODE and a mixed central second difference of
/// log|C| in (B1, B2). The offset is chosen adaptively so that |log C| at the
/// off-diagonal points is about 0.1.
pub fn ultimate_qfi_ode(params: &ModelParams, t: f64, n_steps: usize) -> Result<f64> {
    check_time(t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let grid = TimeGrid::new(t, n_steps)?;
    let b = params.field;
    let log_c = |b1: f64, b2: f64| -> Result<f64> {
        match gen_me_ode(params, &grid, b1, b2) {
            Ok(sol) => Ok(sol.trace.norm().ln()),
            Err(Error::NonFinite(_)) => Ok(f64::NAN),
            Err(e) => Err(e),
        }
    };
    // bracket an offset where |log C| is resolvable, then rescale to the target
    let mut h = 1e-3;
    let mut probe = log_c(b + h, b - h)?;
    for _ in 0..40 {
        if probe.is_finite() && probe.abs() > 1e-8 && probe.abs() < 10.0 {
            break;
        }
        h *= if probe.is_finite() && probe.abs() <= 1e-8 {
            10.0
        } else {
            0.1
        };
        probe = log_c(b + h, b - h)?;
    }
    if probe == 0.0 {
        return Ok(0.0);
    }
    if !(probe.is_finite() && probe.abs() > 1e-8) {
        return Err(Error::FiniteDifference("no resolvable finite-difference offset".into()));
    }
    let h = h * (LOG_OVERLAP_TARGET / probe.abs()).sqrt();
    let pp = log_c(b + h, b + h)?;
    let pm = log_c(b + h, b - h)?;
    let mp = log_c(b - h, b + h)?;
    let mm = log_c(b - h, b - h)?;
    let mixed = (pp - pm - mp + mm) / (4.0 * h * h);
    if !mixed.is_finite() || (pm.abs() < 1e3 * f64::EPSILON) {
        return Err(Error::FiniteDifference(format!(
            "mixed difference lost to cancellation (offset {h:e})"
        )));
    }
    Ok(4.0 * mixed)
}

/// Quantity tracked by [`scaling_slope`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    FisherRecord,
    ConditionalQfi,
    EffectiveQfi,
    UltimateQfi,
}

impl Quantity {
    pub fn evaluate(&self, params: &ModelParams, t: f64) -> Result<f64> {
        match self {
            Quantity::FisherRecord => fisher_record_closed(params, t),
            Quantity::ConditionalQfi => qfi_conditional(params, t),
            Quantity::EffectiveQfi => Ok(fisher_record_closed(params, t)? + qfi_conditional(params, t)?),
            Quantity::UltimateQfi => ultimate_qfi_closed(params, t),
        }
    }
}

/// Sweep variable for [`scaling_slope`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepAxis {
    /// Sweep J at fixed reduced time `kappa_t`.
    TotalSpin { kappa_t: f64 },
    /// Sweep kappa*t at fixed J (taken from the parameters).
    KappaT,
}

/// Logarithmically spaced window [lo, hi] with `points` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogWindow {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl LogWindow {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        Self { lo, hi, points }
    }

    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        (0..self.points)
            .map(|i| (a + (b - a) * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

/// Least-squares slope of log(quantity) against log(axis) over the window.
pub fn scaling_slope(params: &ModelParams, quantity: Quantity, axis: SweepAxis, window: LogWindow) -> Result<f64> {
    if window.points < 3 {
        return Err(Error::DegenerateWindow { points: window.points });
    }
    if !(window.lo > 0.0 && window.hi > window.lo) {
        return Err(Error::InvalidGrid(format!(
            "window [{}, {}] must be positive and increasing",
            window.lo, window.hi
        )));
    }
    let threshold = ValidityThresholds::default().gaussian;
    let max_kt = match axis {
        SweepAxis::TotalSpin { kappa_t } => kappa_t,
        SweepAxis::KappaT => window.hi,
    };
    if max_kt > threshold {
        return Err(Error::OutsideValidity {
            kappa_t: max_kt,
            threshold,
        });
    }
    let xs = window.values();
    let ys = xs
        .iter()
        .map(|&x| {
            let (p, t) = match axis {
                SweepAxis::TotalSpin { kappa_t } => (params.with_total_spin(x), params.time_from_kappa_t(kappa_t)),
                SweepAxis::KappaT => (*params, params.time_from_kappa_t(x)),
            };
            let v = quantity.evaluate(&p, t)?;
            if v <= 0.0 {
                return Err(Error::NonPositive(v));
            }
            Ok(v.ln())
        })
        .collect::<Result<Vec<f64>>>()?;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    Ok(least_squares_slope(&lx, &ys))
}

pub(crate) fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Var_c[P] closed form re-exported for report consumers.
pub fn conditional_variance(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(var_p_unchecked(params, t))
}
