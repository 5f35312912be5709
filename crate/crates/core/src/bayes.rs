//! Grid-based Bayesian estimation of B from photocurrent records.
//!
//! The conditional mean of P is affine in the candidate field,
//! `m_i(B) = a_i + B b_i`, because the variance and gain are B-independent.
//! Each record therefore reduces to three sums and its log-likelihood is an
//! exact quadratic in B. [`log_likelihood`] runs the filter at one B directly
//! and is kept as the reference the quadratic form is tested against.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::information::fisher_record_closed;
use crate::model::ModelParams;
use crate::trajectories::{CurrentConvention, FilterCoefficients, PhotocurrentRecord};

/// Uniform prior on a closed interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub lo: f64,
    pub hi: f64,
}

impl Prior {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidPrior(format!("[{lo}, {hi}] is not a proper interval")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, b: f64) -> bool {
        (self.lo..=self.hi).contains(&b)
    }
}

/// Uniform grid over the prior interval with trapezoidal weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    /// Posterior probability allowed in the outer 5% of the interval on
    /// either side before the grid is declared too narrow.
    pub boundary_mass_limit: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 401,
            boundary_mass_limit: 0.5,
        }
    }
}

impl GridSpec {
    pub fn with_points(points: usize) -> Self {
        Self {
            points,
            ..Self::default()
        }
    }

    fn nodes(&self, prior: &Prior) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.points < 2 {
            return Err(Error::InvalidGrid(format!("{} posterior grid points", self.points)));
        }
        let h = (prior.hi - prior.lo) / (self.points - 1) as f64;
        let b: Vec<f64> = (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    prior.hi
                } else {
                    prior.lo + i as f64 * h
                }
            })
            .collect();
        let mut w = vec![h; self.points];
        w[0] = 0.5 * h;
        w[self.points - 1] = 0.5 * h;
        Ok((b, w))
    }
}

/// Sufficient statistics of one record (or a prefix of it).
///
/// `log L(B) = -(ee - 2 B ef + B^2 ff) / (2 dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadraticLikelihood {
    pub ee: f64,
    pub ef: f64,
    pub ff: f64,
    pub dt: f64,
    pub t: f64,
}

impl QuadraticLikelihood {
    pub fn eval(&self, field: f64) -> f64 {
        if self.dt == 0.0 {
            return 0.0;
        }
        -(self.ee - 2.0 * field * self.ef + field * field * self.ff) / (2.0 * self.dt)
    }

    /// Fisher information of the discretized filter, `sum f_i^2 / dt`.
    pub fn discrete_fisher(&self) -> f64 {
        if self.dt == 0.0 {
            0.0
        } else {
            self.ff / self.dt
        }
    }

    /// Maximum-likelihood field.
    pub fn argmax(&self) -> Option<f64> {
        (self.ff > 0.0).then(|| self.ef / self.ff)
    }

    /// Statistics after the first `n` steps for each `n` in `checkpoints`
    /// (which must be non-decreasing and at most the record length).
    pub fn prefixes(record: &PhotocurrentRecord, checkpoints: &[usize]) -> Result<Vec<Self>> {
        if checkpoints.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidGrid("checkpoints must be non-decreasing".into()));
        }
        if checkpoints.last().is_some_and(|&n| n > record.n_steps()) {
            return Err(Error::RecordMismatch("checkpoint beyond the end of the record".into()));
        }
        let dt = record.dt;
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = checkpoints.iter().peekable();
        let mut acc = Self { dt, ..Self::default() };
        let mut push = |acc: &Self, n: usize, out: &mut Vec<Self>| {
            while next.next_if(|&&c| c == n).is_some() {
                out.push(*acc);
            }
        };
        push(&acc, 0, &mut out);
        if record.n_steps() > 0 {
            let coeffs = FilterCoefficients::new(&record.params, &record.grid()?, record.convention)?;
            let (mut a, mut b) = (0.0, 0.0);
            for (i, &dy) in record.increments.iter().enumerate() {
                let c = coeffs.current[i] * dt;
                let e = dy - c * a;
                let f = c * b;
                acc.ee += e * e;
                acc.ef += e * f;
                acc.ff += f * f;
                acc.t = (i + 1) as f64 * dt;
                a += coeffs.gain[i] * e;
                b += -coeffs.drift[i] * dt - coeffs.gain[i] * f;
                push(&acc, i + 1, &mut out);
            }
        }
        if !(acc.ee.is_finite() && acc.ef.is_finite() && acc.ff.is_finite()) {
            return Err(Error::NonFinite("likelihood accumulation"));
        }
        Ok(out)
    }

    pub fn from_record(record: &PhotocurrentRecord) -> Result<Self> {
        Ok(Self::prefixes(record, &[record.n_steps()])?[0])
    }
}

/// Log-likelihood of `record` at candidate field `field`, by running the
/// filter conditioned on the observed increments.
pub fn log_likelihood(record: &PhotocurrentRecord, field: f64) -> Result<f64> {
    if record.n_steps() == 0 {
        return Ok(0.0);
    }
    let coeffs = FilterCoefficients::new(&record.params, &record.grid()?, record.convention)?;
    let dt = coeffs.dt;
    let mut mean_p = 0.0;
    let mut acc = 0.0;
    for (i, &dy) in record.increments.iter().enumerate() {
        let innovation = dy - coeffs.current[i] * mean_p * dt;
        acc -= innovation * innovation / (2.0 * dt);
        mean_p = coeffs.step(i, mean_p, field, innovation);
    }
    if !acc.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }
    Ok(acc)
}

/// Posterior density on the grid, normalized so that `sum(weights * density) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub b_values: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub density: Vec<f64>,
    pub prior: Prior,
    /// Elapsed record time the posterior conditions on.
    pub t: f64,
    pub n_records: usize,
    /// Model the records were analysed under (field set to zero), if any.
    pub params: Option<ModelParams>,
    pub convention: CurrentConvention,
}

impl PosteriorGrid {
    /// Quadrature probabilities, summing to one.
    pub fn probabilities(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.density).map(|(w, d)| w * d).collect()
    }

    /// Probability in the outer 5% of the interval on the (low, high) sides.
    pub fn boundary_mass(&self) -> (f64, f64) {
        let span = self.prior.hi - self.prior.lo;
        let (lo_edge, hi_edge) = (self.prior.lo + 0.05 * span, self.prior.hi - 0.05 * span);
        let p = self.probabilities();
        let lo = self
            .b_values
            .iter()
            .zip(&p)
            .filter(|(b, _)| **b <= lo_edge)
            .map(|(_, p)| p)
            .sum();
        let hi = self
            .b_values
            .iter()
            .zip(&p)
            .filter(|(b, _)| **b >= hi_edge)
            .map(|(_, p)| p)
            .sum();
        (lo, hi)
    }

    pub fn kappa_t(&self) -> f64 {
        self.params.map_or(0.0, |p| p.kappa_t(self.t))
    }
}

fn check_compatible(records: &[PhotocurrentRecord]) -> Result<()> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    for (k, r) in records.iter().enumerate().skip(1) {
        let same_model = r.params.with_field(0.0) == first.params.with_field(0.0);
        if !same_model {
            return Err(Error::RecordMismatch(format!(
                "record {k} has different model parameters"
            )));
        }
        if r.convention != first.convention {
            return Err(Error::RecordMismatch(format!(
                "record {k} uses convention {} but record 0 uses {}",
                r.convention, first.convention
            )));
        }
        if r.n_steps() != first.n_steps() || r.dt != first.dt {
            return Err(Error::RecordMismatch(format!("record {k} is on a different time grid")));
        }
    }
    Ok(())
}

fn assemble(
    stats: &[QuadraticLikelihood],
    records: &[PhotocurrentRecord],
    prior: &Prior,
    grid: &GridSpec,
    check_boundary: bool,
) -> Result<PosteriorGrid> {
    let (b_values, weights) = grid.nodes(prior)?;
    let log_likelihood: Vec<f64> = b_values
        .iter()
        .map(|&b| stats.iter().map(|s| s.eval(b)).sum::<f64>())
        .collect();
    let density = normalize(&log_likelihood, &weights)?;
    let post = PosteriorGrid {
        b_values,
        weights,
        log_likelihood,
        density,
        prior: *prior,
        t: stats.first().map_or(0.0, |s| s.t),
        n_records: stats.len(),
        params: records.first().map(|r| r.params.with_field(0.0)),
        convention: records
            .first()
            .map_or_else(CurrentConvention::default, |r| r.convention),
    };
    if check_boundary {
        let (lo, hi) = post.boundary_mass();
        for (side, mass) in [("lower", lo), ("upper", hi)] {
            if mass > grid.boundary_mass_limit {
                return Err(Error::BoundaryMass { side, mass });
            }
        }
    }
    Ok(post)
}

/// Max-subtracted exponentiation and trapezoidal normalization.
pub fn normalize(log_likelihood: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if log_likelihood.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("log-likelihood on grid"));
    }
    let max = log_likelihood.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let un: Vec<f64> = log_likelihood.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = un.iter().zip(weights).map(|(u, w)| u * w).sum();
    Ok(un.into_iter().map(|u| u / z).collect())
}

/// Posterior after the full records, under a uniform prior.
pub fn posterior(records: &[PhotocurrentRecord], prior: &Prior, grid: &GridSpec) -> Result<PosteriorGrid> {
    check_compatible(records)?;
    let stats = records
        .par_iter()
        .map(QuadraticLikelihood::from_record)
        .collect::<Result<Vec<_>>>()?;
    assemble(&stats, records, prior, grid, true)
}

/// Posteriors after the first `n` steps, for each `n` in `checkpoints`.
/// Boundary mass is not treated as an error here, since early snapshots are
/// expected to be prior-dominated.
pub fn posterior_checkpoints(
    records: &[PhotocurrentRecord],
    prior: &Prior,
    grid: &GridSpec,
    checkpoints: &[usize],
) -> Result<Vec<PosteriorGrid>> {
    check_compatible(records)?;
    let per_record = records
        .par_iter()
        .map(|r| QuadraticLikelihood::prefixes(r, checkpoints))
        .collect::<Result<Vec<_>>>()?;
    (0..checkpoints.len())
        .map(|k| {
            let stats: Vec<QuadraticLikelihood> = per_record.iter().map(|s| s[k]).collect();
            let mut post = assemble(&stats, records, prior, grid, false)?;
            if let Some(r) = records.first() {
                post.t = checkpoints[k] as f64 * r.dt;
            }
            Ok(post)
        })
        .collect()
}

/// `count` checkpoint indices spread evenly over `n_steps`, excluding 0.
pub fn even_checkpoints(n_steps: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, n_steps.max(1));
    (1..=count).map(|k| (k * n_steps).div_ceil(count)).collect()
}

/// Posterior moments and the Cramer-Rao comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateSummary {
    pub t: f64,
    pub kappa_t: f64,
    pub mean: f64,
    pub sd: f64,
    /// `(n_records * F)^(-1/2)`; absent when the Fisher information vanishes.
    pub sd_crb: Option<f64>,
    pub ratio: Option<f64>,
}

pub const SUMMARY_CSV_HEADER: &str = "kappa_t,mean,sd,sd_crb,ratio";

impl EstimateSummary {
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| v.to_string());
        format!(
            "{},{},{},{},{}",
            self.kappa_t,
            self.mean,
            self.sd,
            opt(self.sd_crb),
            opt(self.ratio)
        )
    }
}

/// Posterior mean and standard deviation by quadrature.
pub fn estimate(post: &PosteriorGrid) -> Result<EstimateSummary> {
    let p = post.probabilities();
    let support = p.iter().filter(|&&x| x > 1e-300).count();
    if support < 2 {
        return Err(Error::DegeneratePosterior);
    }
    let mean: f64 = post.b_values.iter().zip(&p).map(|(b, p)| b * p).sum();
    let var: f64 = post.b_values.iter().zip(&p).map(|(b, p)| (b - mean).powi(2) * p).sum();
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 0.0 {
        return Err(Error::DegeneratePosterior);
    }
    let sd_crb = match post.params {
        Some(params) if post.n_records > 0 => {
            let eff = post.convention.effective_params(&params);
            let f = fisher_record_closed(&eff, post.t)? * post.n_records as f64;
            (f > 0.0).then(|| f.sqrt().recip())
        }
        _ => None,
    };
    Ok(EstimateSummary {
        t: post.t,
        kappa_t: post.kappa_t(),
        mean,
        sd,
        sd_crb,
        ratio: sd_crb.map(|c| sd / c),
    })
}

/// Long-format posterior snapshots: one `(kappa_t, t, B, density)` row per grid point.
pub fn write_posterior_csv<W: Write>(mut w: W, snapshots: &[PosteriorGrid]) -> Result<()> {
    writeln!(w, "kappa_t,t,B,density")?;
    for s in snapshots {
        for (b, d) in s.b_values.iter().zip(&s.density) {
            writeln!(w, "{},{},{},{}", s.kappa_t(), s.t, b, d)?;
        }
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[EstimateSummary]) -> Result<()> {
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;
    use crate::trajectories::{batch_simulate, simulate_record, simulate_record_with};
    use proptest::prelude::*;

    fn fig2_params(b: f64) -> ModelParams {
        ModelParams::new(1e4, 1.0, 1.0, 1.0, b).unwrap()
    }

    fn prior() -> Prior {
        Prior::uniform(-0.01, 0.01).unwrap()
    }

    #[test]
    fn quadratic_form_matches_direct_filter() {
        let g = TimeGrid::new(1.0, 2000).unwrap();
        let rec = simulate_record(&fig2_params(1e-3), &g, 5).unwrap();
        let q = QuadraticLikelihood::from_record(&rec).unwrap();
        for &b in &[-0.01, -2e-3, 0.0, 1e-3, 7e-3] {
            let direct = log_likelihood(&rec, b).unwrap();
            assert!((q.eval(b) - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{b}");
        }
    }

    #[test]
    fn single_step_hand_computation() {
        // one step: the mean starts at 0, so the first innovation does not depend on B
        // and the likelihood is flat. Two steps: the second innovation is
        // dy1 - c1 (g0 dy0 - B d0 dt) dt.
        let g = TimeGrid::new(0.02, 2).unwrap();
        let mut rec = simulate_record(&fig2_params(0.0), &g, 1).unwrap();
        rec.increments = vec![0.03, -0.01];
        let coeffs = FilterCoefficients::new(&rec.params, &g, rec.convention).unwrap();
        let dt = g.dt();
        let by_hand = |b: f64| {
            let m1 = coeffs.gain[0] * 0.03 - b * coeffs.drift[0] * dt;
            let e1 = -0.01 - coeffs.current[1] * m1 * dt;
            -(0.03f64.powi(2) + e1 * e1) / (2.0 * dt)
        };
        let q = QuadraticLikelihood::from_record(&rec).unwrap();
        for &b in &[-1.0, 0.0, 2.5] {
            assert!((log_likelihood(&rec, b).unwrap() - by_hand(b)).abs() < 1e-12);
            assert!((q.eval(b) - by_hand(b)).abs() < 1e-12);
        }
        let one = rec.truncated(1).unwrap();
        assert_eq!(log_likelihood(&one, 0.0).unwrap(), log_likelihood(&one, 3.0).unwrap());
    }

    #[test]
    fn empty_record_gives_prior() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let rec = simulate_record(&fig2_params(0.0), &g, 1).unwrap().truncated(0).unwrap();
        assert_eq!(log_likelihood(&rec, 0.4).unwrap(), 0.0);
        let post = posterior(&[rec], &prior(), &GridSpec::default()).unwrap();
        let first = post.density[0];
        assert!(post.density.iter().all(|d| (d - first).abs() < 1e-9 * first));
        let none = posterior(&[], &prior(), &GridSpec::default()).unwrap();
        assert!((none.density[200] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_posterior_moments() {
        let post = posterior(&[], &Prior::uniform(-0.3, 0.3).unwrap(), &GridSpec::default()).unwrap();
        let s = estimate(&post).unwrap();
        assert!(s.mean.abs() < 1e-15);
        assert!((s.sd - 0.3 / 3f64.sqrt()).abs() < 1e-4 * s.sd);
        assert_eq!(s.ratio, None);
        assert!(s.csv_row().ends_with(",NA,NA"));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let g = TimeGrid::new(1.0, 1000).unwrap();
        let recs = batch_simulate(&fig2_params(0.0), &g, 3, 2).unwrap();
        let post = posterior(&recs, &prior(), &GridSpec::default()).unwrap();
        assert!((post.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(post.density.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn duplicated_record_doubles_log_likelihood() {
        let g = TimeGrid::new(1.0, 1000).unwrap();
        let rec = simulate_record(&fig2_params(0.0), &g, 4).unwrap();
        let one = posterior(std::slice::from_ref(&rec), &prior(), &GridSpec::default()).unwrap();
        let two = posterior(&[rec.clone(), rec], &prior(), &GridSpec::default()).unwrap();
        for (a, b) in one.log_likelihood.iter().zip(&two.log_likelihood) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs());
        }
        assert!(estimate(&two).unwrap().sd < estimate(&one).unwrap().sd);
    }

    #[test]
    fn record_order_does_not_matter() {
        let g = TimeGrid::new(1.0, 500).unwrap();
        let mut recs = batch_simulate(&fig2_params(0.0), &g, 4, 9).unwrap();
        let a = posterior(&recs, &prior(), &GridSpec::default()).unwrap();
        recs.reverse();
        let b = posterior(&recs, &prior(), &GridSpec::default()).unwrap();
        for (x, y) in a.density.iter().zip(&b.density) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn mismatched_records_are_rejected() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let a = simulate_record(&fig2_params(0.0), &g, 1).unwrap();
        let b = simulate_record(&fig2_params(0.0), &TimeGrid::new(1.0, 200).unwrap(), 1).unwrap();
        let c = simulate_record_with(&fig2_params(0.0), &g, 1, CurrentConvention::ReducedAmplitude).unwrap();
        let d = simulate_record(&fig2_params(0.0).with_eta(0.5), &g, 1).unwrap();
        for other in [b, c, d] {
            assert!(matches!(
                posterior(&[a.clone(), other], &prior(), &GridSpec::default()),
                Err(Error::RecordMismatch(_))
            ));
        }
    }

    #[test]
    fn narrow_prior_is_flagged() {
        let g = TimeGrid::new(1.0, 2000).unwrap();
        let rec = simulate_record(&fig2_params(5e-3), &g, 1).unwrap();
        let r = posterior(&[rec], &Prior::uniform(-0.01, -0.005).unwrap(), &GridSpec::default());
        assert!(matches!(r, Err(Error::BoundaryMass { side: "upper", .. })));
    }

    #[test]
    fn maximum_near_true_field() {
        let g = TimeGrid::new(1.0, 4000).unwrap();
        let recs = batch_simulate(&fig2_params(2e-3), &g, 20, 17).unwrap();
        let post = posterior(&recs, &prior(), &GridSpec::default()).unwrap();
        let s = estimate(&post).unwrap();
        assert!((s.mean - 2e-3).abs() < 4.0 * s.sd, "{s:?}");
    }

    #[test]
    fn checkpoints_match_truncated_records() {
        let g = TimeGrid::new(1.0, 300).unwrap();
        let rec = simulate_record(&fig2_params(0.0), &g, 3).unwrap();
        let cps = even_checkpoints(300, 3);
        assert_eq!(cps, vec![100, 200, 300]);
        let snaps = posterior_checkpoints(std::slice::from_ref(&rec), &prior(), &GridSpec::default(), &cps).unwrap();
        for (cp, snap) in cps.iter().zip(&snaps) {
            let direct = QuadraticLikelihood::from_record(&rec.truncated(*cp).unwrap()).unwrap();
            assert!((snap.t - *cp as f64 * g.dt()).abs() < 1e-12);
            let i = 123;
            assert!((snap.log_likelihood[i] - direct.eval(snap.b_values[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn discrete_fisher_tracks_closed_form() {
        let g = TimeGrid::new(1.0, 5000).unwrap();
        let rec = simulate_record(&fig2_params(0.0), &g, 3).unwrap();
        let q = QuadraticLikelihood::from_record(&rec).unwrap();
        let closed = fisher_record_closed(&fig2_params(0.0), 1.0).unwrap();
        assert!((q.discrete_fisher() / closed - 1.0).abs() < 5e-3);
    }

    #[test]
    fn csv_exports() {
        let post = posterior(&[], &prior(), &GridSpec::with_points(5)).unwrap();
        let mut buf = Vec::new();
        write_posterior_csv(&mut buf, std::slice::from_ref(&post)).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &[estimate(&post).unwrap()]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(SUMMARY_CSV_HEADER));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn constant_shift_leaves_posterior_unchanged(
            shift in -1e6f64..1e6, seed in any::<u64>(),
        ) {
            let g = TimeGrid::new(1.0, 200).unwrap();
            let rec = simulate_record(&fig2_params(0.0), &g, seed).unwrap();
            let post = posterior(&[rec], &prior(), &GridSpec::with_points(41)).unwrap();
            let shifted: Vec<f64> = post.log_likelihood.iter().map(|l| l + shift).collect();
            let d = normalize(&shifted, &post.weights).unwrap();
            for (a, b) in d.iter().zip(&post.density) {
                prop_assert!((a - b).abs() <= 1e-9 * b.max(1e-12));
            }
        }
    }
}
