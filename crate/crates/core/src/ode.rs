//! Fixed-grid Runge-Kutta stepping for the small deterministic systems.

/// How each grid cell of a deterministic integration is subdivided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepControl {
    /// One RK4 step per grid cell.
    Fixed,
    /// Subdivide each cell so that `stiffness * h <= max_rate_step`, where the
    /// stiffness is supplied by the system at the start of the cell.
    Substepped { max_rate_step: f64 },
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::Substepped { max_rate_step: 0.02 }
    }
}

impl StepControl {
    pub(crate) fn substeps(&self, stiffness: f64, dt: f64) -> usize {
        match *self {
            StepControl::Fixed => 1,
            StepControl::Substepped { max_rate_step } => {
                let n = (stiffness.abs() * dt / max_rate_step).ceil();
                if n.is_finite() && n >= 1.0 {
                    n as usize
                } else {
                    1
                }
            }
        }
    }
}

pub(crate) fn rk4_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let add = |a: &[f64; N], b: &[f64; N], s: f64| -> [f64; N] {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &add(y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &add(y, &k2, 0.5 * h));
    let k4 = f(t + h, &add(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Advance `y` from `t0` to `t0 + dt` in `n` equal RK4 steps.
pub(crate) fn rk4_span<const N: usize, F>(f: &F, t0: f64, y: [f64; N], dt: f64, n: usize) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let h = dt / n as f64;
    let mut y = y;
    for k in 0..n {
        y = rk4_step(f, t0 + k as f64 * h, &y, h);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential() {
        let f = |_t: f64, y: &[f64; 1]| [-y[0]];
        let y = rk4_span(&f, 0.0, [1.0], 1.0, 100);
        assert!((y[0] - (-1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn substep_counts() {
        let c = StepControl::Substepped { max_rate_step: 0.1 };
        assert_eq!(c.substeps(100.0, 0.01), 10);
        assert_eq!(c.substeps(0.0, 0.01), 1);
        assert_eq!(StepControl::Fixed.substeps(1e9, 1.0), 1);
    }
}
