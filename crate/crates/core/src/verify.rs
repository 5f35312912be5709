//! Self-consistency checks between independent evaluation routes.

use std::io::Write;

use crate::error::Result;
use crate::filter::{var_p_closed, var_p_ode, VARIANCE_ODE_TOLERANCE};
use crate::information::{
    effective_qfi, effective_qfi_k_form, fisher_record_closed, fisher_record_numeric, fisher_record_small_t,
    qfi_conditional, qfi_conditional_numeric, ultimate_qfi_closed, ultimate_qfi_ode,
};
use crate::model::{ModelParams, TimeGrid};
use crate::ode::StepControl;
use crate::spin::{ultimate_qfi_finite_j, SpinOperators};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.residual.is_finite() && self.residual <= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check,residual,threshold,verdict")?;
        for c in &self.checks {
            let verdict = if c.passed() { "pass" } else { "fail" };
            writeln!(w, "{},{:e},{:e},{verdict}", c.name, c.residual, c.threshold)?;
        }
        Ok(())
    }
}

/// What to run and where.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub eta_values: Vec<f64>,
    pub total_spin_values: Vec<f64>,
    pub kappa_t_values: Vec<f64>,
    pub gamma_over_kappa: f64,
    /// Include the finite-J generalized master equation comparison.
    pub include_finite_j: bool,
    /// Multiply the closed-form record Fisher information by this factor
    /// before comparing. Anything other than 1 is a negative control.
    pub fault_factor: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            eta_values: vec![0.1, 0.5, 1.0],
            total_spin_values: vec![10.0, 1e3, 1e6],
            kappa_t_values: vec![0.01, 0.1, 1.0],
            gamma_over_kappa: 1.0,
            include_finite_j: true,
            fault_factor: 1.0,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        ((a - b) / b).abs()
    }
}

const ODE_STEPS: usize = 2000;

pub fn run(options: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut push = |name: String, residual: f64, threshold: f64| {
        checks.push(Check {
            name,
            residual,
            threshold,
        })
    };
    for &j in &options.total_spin_values {
        for &kt in &options.kappa_t_values {
            for &eta in &options.eta_values {
                let p = ModelParams::reduced(j, options.gamma_over_kappa, eta, 0.0)?;
                let grid = TimeGrid::new(kt, ODE_STEPS)?;
                let tag = format!("J={j}/kappa_t={kt}/eta={eta}");
                let closed = fisher_record_closed(&p, kt)? * options.fault_factor;
                let numeric = fisher_record_numeric(&p, &grid, StepControl::default())?;
                push(
                    format!("fisher_record_ode_vs_closed[{tag}]"),
                    rel(numeric, closed),
                    1e-6,
                );
                let q_numeric = qfi_conditional_numeric(&p, &grid, StepControl::default())?;
                push(
                    format!("qfi_conditional_ratio_vs_closed[{tag}]"),
                    rel(q_numeric, qfi_conditional(&p, kt)?),
                    1e-6,
                );
                let r = effective_qfi(&p, kt)?;
                push(
                    format!("effective_qfi_k_form_vs_sum[{tag}]"),
                    rel(effective_qfi_k_form(&p, kt)?, r.qfi_effective),
                    1e-10,
                );
                let v = var_p_ode(&p, &grid, StepControl::default(), VARIANCE_ODE_TOLERANCE)
                    .map(|v| rel(*v.last().expect("non-empty"), var_p_closed(&p, kt).expect("valid time")))
                    .unwrap_or(f64::INFINITY);
                push(format!("variance_ode_vs_closed[{tag}]"), v, VARIANCE_ODE_TOLERANCE);
            }
            let p = ModelParams::reduced(j, options.gamma_over_kappa, 1.0, 0.0)?;
            let tag = format!("J={j}/kappa_t={kt}");
            let r = effective_qfi(&p, kt)?;
            let q_bar = ultimate_qfi_closed(&p, kt)?;
            push(
                format!("ultimate_equals_effective_at_unit_eta[{tag}]"),
                rel(r.fisher_record * options.fault_factor + r.qfi_conditional, q_bar),
                1e-10,
            );
            push(
                format!("ultimate_ode_vs_closed[{tag}]"),
                rel(ultimate_qfi_ode(&p, kt, ODE_STEPS)?, q_bar),
                1e-6,
            );
        }
    }
    let p = ModelParams::reduced(10.0, options.gamma_over_kappa, 1.0, 0.0)?;
    let ratio = fisher_record_closed(&p, 1e-4)? * options.fault_factor / fisher_record_small_t(&p, 1e-4)?;
    push("small_time_law[J=10/kappa_t=1e-4]".into(), (ratio - 1.0).abs(), 1e-2);
    let ops = SpinOperators::new(10.0)?;
    let res = ops.residuals();
    push("spin_algebra_commutators[J=10]".into(), res.commutator, 1e-10);
    push("spin_algebra_casimir[J=10]".into(), res.casimir, 1e-10);
    if options.include_finite_j {
        let p = ModelParams::reduced(5.0, options.gamma_over_kappa, 1.0, 0.0)?;
        let kt = 0.1;
        let q = ultimate_qfi_finite_j(&p, &TimeGrid::new(kt, 1000)?, None)?;
        push(
            "finite_j_ultimate_vs_gaussian[J=5/kappa_t=0.1]".into(),
            rel(q.value, ultimate_qfi_closed(&p, kt)?),
            0.1,
        );
    }
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyOptions {
        VerifyOptions {
            eta_values: vec![0.5, 1.0],
            total_spin_values: vec![10.0, 1e4],
            kappa_t_values: vec![0.1, 1.0],
            include_finite_j: false,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn default_checks_pass() {
        let report = run(&small()).unwrap();
        let failures: Vec<_> = report.failures().collect();
        assert!(failures.is_empty(), "{failures:?}");
        assert!(report.checks.len() > 20);
    }

    #[test]
    fn corrupted_constant_is_detected() {
        let report = run(&VerifyOptions {
            fault_factor: 1.0 + 1e-3,
            ..small()
        })
        .unwrap();
        assert!(!report.passed());
        assert!(report
            .failures()
            .any(|c| c.name.starts_with("fisher_record_ode_vs_closed")));
    }

    #[test]
    fn csv_report() {
        let report = VerifyReport {
            checks: vec![Check {
                name: "x".into(),
                residual: 2.0,
                threshold: 1.0,
            }],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("x,2e0,1e0,fail\n"));
    }
}
