//! Physical configuration of the monitored ensemble and the time-dependent
//! coefficients shared by every other module.
//!
//! Public functions take physical units (time, Gauss). Internally most
//! formulas are written in the reduced variables `kappa * t` and
//! `gamma / kappa` (units 1/G).

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{check_time, Error, Result};

/// Physical parameters of the collective-spin magnetometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Total spin J = N/2. Stored as a real; every closed form is smooth in J.
    pub total_spin: f64,
    /// Coupling rate to the probe light, 1/time.
    pub kappa: f64,
    /// Coupling to the magnetic field, 1/(time * G).
    pub gamma: f64,
    /// Detection efficiency in [0, 1].
    pub eta: f64,
    /// Magnetic field, Gauss.
    pub field: f64,
}

impl ModelParams {
    pub fn new(total_spin: f64, kappa: f64, gamma: f64, eta: f64, field: f64) -> Result<Self> {
        let p = Self {
            total_spin,
            kappa,
            gamma,
            eta,
            field,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters in the reduced units used throughout: kappa = 1, so that
    /// `gamma` equals gamma/kappa and times are measured in units of 1/kappa.
    pub fn reduced(total_spin: f64, gamma_over_kappa: f64, eta: f64, field: f64) -> Result<Self> {
        Self::new(total_spin, 1.0, gamma_over_kappa, eta, field)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_spin.is_finite() && self.total_spin > 0.0) {
            return Err(Error::InvalidParameter {
                name: "J",
                value: self.total_spin,
                reason: "must be positive and finite",
            });
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::InvalidParameter {
                name: "kappa",
                value: self.kappa,
                reason: "must be positive and finite",
            });
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: self.gamma,
                reason: "must be finite",
            });
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter {
                name: "eta",
                value: self.eta,
                reason: "must lie in [0, 1]",
            });
        }
        if !self.field.is_finite() {
            return Err(Error::InvalidParameter {
                name: "B",
                value: self.field,
                reason: "must be finite",
            });
        }
        Ok(())
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_field(mut self, field: f64) -> Self {
        self.field = field;
        self
    }

    pub fn with_total_spin(mut self, total_spin: f64) -> Self {
        self.total_spin = total_spin;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    #[inline]
    pub fn kappa_t(&self, t: f64) -> f64 {
        self.kappa * t
    }

    #[inline]
    pub fn gamma_over_kappa(&self) -> f64 {
        self.gamma / self.kappa
    }

    /// Physical time corresponding to a reduced time `kappa * t`.
    #[inline]
    pub fn time_from_kappa_t(&self, kappa_t: f64) -> f64 {
        kappa_t / self.kappa
    }

    /// J * exp(-kappa t / 2) without the time check.
    #[inline]
    pub(crate) fn jbar_unchecked(&self, t: f64) -> f64 {
        self.total_spin * (-0.5 * self.kappa * t).exp()
    }
}

/// Uniform time discretization from 0 to `t_final`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        let g = Self { t_final, n_steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be at least 1".into()));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "t_final must be positive, got {}",
                self.t_final
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    /// Time of grid node `i` (0..=n_steps).
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_final
        } else {
            i as f64 * self.dt()
        }
    }

    /// All n_steps + 1 grid nodes.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }

    /// Grid node closest to time `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let i = (t / self.dt()).round();
        (i.max(0.0) as usize).min(self.n_steps)
    }
}

/// Drift, diffusion and measurement coefficients of the Gaussian moment
/// equations at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentMatrices {
    /// Diffusion matrix, diag(2 kappa Jbar, 0).
    pub diffusion: Matrix2<f64>,
    /// Measurement column (0, sqrt(2 eta kappa Jbar)).
    pub measurement: Vector2<f64>,
    /// Drift (0, -gamma B sqrt(Jbar)).
    pub drift: Vector2<f64>,
    pub t: f64,
}

impl MomentMatrices {
    /// M M^T, the only combination entering the Riccati flow.
    pub fn measurement_outer(&self) -> Matrix2<f64> {
        self.measurement * self.measurement.transpose()
    }
}

/// Mean collective spin along x, J exp(-kappa t / 2).
pub fn jbar(params: &ModelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(params.jbar_unchecked(t))
}

pub fn moment_matrices(params: &ModelParams, t: f64) -> Result<MomentMatrices> {
    check_time(t)?;
    params.validate()?;
    let jb = params.jbar_unchecked(t);
    Ok(MomentMatrices {
        diffusion: Matrix2::new(2.0 * params.kappa * jb, 0.0, 0.0, 0.0),
        measurement: Vector2::new(0.0, (2.0 * params.eta * params.kappa * jb).sqrt()),
        drift: Vector2::new(0.0, -params.gamma * params.field * jb.sqrt()),
        t,
    })
}

/// Thresholds for the advisory validity flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityThresholds {
    /// Upper bound on kappa*t for the Gaussian reduction.
    pub gaussian: f64,
    /// Upper bound on |gamma B t| for the small-field approximation.
    pub small_field: f64,
}

impl Default for ValidityThresholds {
    fn default() -> Self {
        Self {
            gaussian: 1.0,
            small_field: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    pub kappa_t: f64,
    pub gaussian_ok: bool,
    /// |gamma B t|, the Larmor angle accumulated by time t.
    pub larmor_angle: f64,
    pub small_field_ok: bool,
}

pub fn validity_report(params: &ModelParams, t: f64, thresholds: ValidityThresholds) -> ValidityReport {
    let kappa_t = params.kappa_t(t);
    let larmor_angle = (params.gamma * params.field * t).abs();
    ValidityReport {
        kappa_t,
        gaussian_ok: kappa_t <= thresholds.gaussian,
        larmor_angle,
        small_field_ok: larmor_angle <= thresholds.small_field,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(j: f64, eta: f64) -> ModelParams {
        ModelParams::new(j, 1.0, 1.0, eta, 0.0).unwrap()
    }

    #[test]
    fn jbar_examples() {
        let p = params(1e4, 1.0);
        assert_eq!(jbar(&p, 0.0).unwrap(), 1e4);
        let t = 2.0 * std::f64::consts::LN_2;
        assert!((jbar(&p, t).unwrap() - 5e3).abs() < 1e-9);
        let p = params(100.0, 1.0);
        assert!((jbar(&p, 1.0).unwrap() - 60.653_065_971_263_34).abs() < 1e-10);
    }

    #[test]
    fn jbar_matches_integrated_decay() {
        // d<Jx>/dt = -(kappa/2)<Jx> at B = 0, integrated with RK4
        let p = ModelParams::new(100.0, 2.0, 1.0, 1.0, 0.0).unwrap();
        let n = 1000;
        let h = 0.5 / n as f64;
        let f = |x: f64| -0.5 * p.kappa * x;
        let mut x = 100.0;
        for _ in 0..n {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((x - jbar(&p, 0.5).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn jbar_rejects_negative_time() {
        assert!(matches!(jbar(&params(1.0, 1.0), -1.0), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn moment_matrix_examples() {
        let m = moment_matrices(&params(5.0, 0.0), 0.3).unwrap();
        assert_eq!(m.measurement, Vector2::zeros());

        let m = moment_matrices(&params(1.0, 1.0), 0.0).unwrap();
        assert!((m.measurement[1] - 2f64.sqrt()).abs() < 1e-15);

        let p = params(1e4, 0.5);
        let m = moment_matrices(&p, 1.0).unwrap();
        let expected = (2.0 * 0.5 * 1e4 * (-0.5f64).exp()).sqrt();
        assert!((m.measurement[1] - expected).abs() < 1e-12);
        assert!((m.diffusion[(0, 0)] - 2.0 * jbar(&p, 1.0).unwrap()).abs() < 1e-9);
        assert_eq!(m.diffusion[(1, 1)], 0.0);
        assert_eq!(m.diffusion[(0, 1)], 0.0);
    }

    #[test]
    fn doubling_eta_scales_measurement_only() {
        let p = ModelParams::new(30.0, 1.3, 0.7, 0.2, 0.05).unwrap();
        let a = moment_matrices(&p, 0.4).unwrap();
        let b = moment_matrices(&p.with_eta(0.4), 0.4).unwrap();
        assert!((b.measurement[1] / a.measurement[1] - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(a.diffusion, b.diffusion);
        assert_eq!(a.drift, b.drift);
    }

    #[test]
    fn validity_flags() {
        let p = ModelParams::new(10.0, 1.0, 1.0, 1.0, 0.01).unwrap();
        let th = ValidityThresholds::default();
        assert!(validity_report(&p, 0.5, th).gaussian_ok);
        assert!(!validity_report(&p, 3.0, th).gaussian_ok);
        let r = validity_report(&p, 1.0, th);
        assert!(r.small_field_ok);
        assert!((r.larmor_angle - 0.01).abs() < 1e-15);
    }

    #[test]
    fn parameter_validation() {
        assert!(ModelParams::new(0.0, 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(ModelParams::new(1.0, -1.0, 1.0, 1.0, 0.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.5, 0.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, f64::NAN, 1.0, 0.0).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(-1.0, 3).is_err());
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let ts = g.times();
        assert_eq!(ts.len(), 4);
        assert_eq!(ts[3], 1.0);
        assert_eq!(g.index_of(0.34), 1);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn jbar_log_linear(j in 0.5f64..1e8, kappa in 1e-3f64..1e3, kt1 in 0.0f64..10.0, kdt in 1e-6f64..10.0) {
                let p = ModelParams::new(j, kappa, 1.0, 1.0, 0.0).unwrap();
                let (t1, dt) = (kt1 / kappa, kdt / kappa);
                let a = jbar(&p, t1).unwrap();
                let b = jbar(&p, t1 + dt).unwrap();
                prop_assert!(b < a);
                let slope = (b.ln() - a.ln()) / dt;
                prop_assert!((slope / kappa + 0.5).abs() <= 1e-9 / kdt);
            }

            #[test]
            fn reduced_time_rescaling(j in 0.5f64..1e6, s in 1e-2f64..1e2, kt in 0.0f64..3.0, eta in 0.0f64..=1.0) {
                let p = ModelParams::new(j, 1.0, 1.0, eta, 1e-3).unwrap();
                let q = ModelParams::new(j, s, s, eta, 1e-3).unwrap();
                let (a, b) = (moment_matrices(&p, kt).unwrap(), moment_matrices(&q, kt / s).unwrap());
                prop_assert!(((b.diffusion[(0, 0)] / s) - a.diffusion[(0, 0)]).abs() <= 1e-9 * a.diffusion[(0, 0)]);
                prop_assert!((b.drift[1] / s - a.drift[1]).abs() <= 1e-9 * a.drift[1].abs());
                prop_assert!((jbar(&p, kt).unwrap() - jbar(&q, kt / s).unwrap()).abs() <= 1e-12 * j);
            }
        }
    }
}
