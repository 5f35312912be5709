//! Simulated homodyne photocurrent records.
//!
//! A record is generated by Euler-Maruyama on the conditional mean of P with
//! the variance taken from its closed form. The same discrete recursion is
//! what the likelihood in [`crate::bayes`] runs, so a record evaluated at its
//! own field reproduces the Wiener increments that generated it exactly.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::var_p_unchecked;
use crate::model::{ModelParams, TimeGrid};

pub const RECORD_FORMAT_VERSION: u32 = 1;
pub const RNG_ALGORITHM: &str = "ChaCha8Rng::seed_from_u64+StandardNormal";
const RECORD_MAGIC: &str = "# ctmag-record";
const DATA_MARKER: &str = "# increments";

/// Normalization of the mean photocurrent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurrentConvention {
    /// `dy = 2 sqrt(eta kappa Jbar) <P> dt + dw`.
    #[default]
    Standard,
    /// `dy = sqrt(2 eta kappa Jbar) <P> dt + dw`. With unit-variance noise
    /// this is the standard model at efficiency `eta / 2`, and the filter,
    /// variance and Fisher information follow that substitution.
    ReducedAmplitude,
}

impl CurrentConvention {
    /// Efficiency at which the standard equations describe this convention.
    pub fn effective_eta(&self, eta: f64) -> f64 {
        match self {
            CurrentConvention::Standard => eta,
            CurrentConvention::ReducedAmplitude => 0.5 * eta,
        }
    }

    /// Parameters under which the standard closed forms apply.
    pub fn effective_params(&self, params: &ModelParams) -> ModelParams {
        params.with_eta(self.effective_eta(params.eta))
    }
}

impl fmt::Display for CurrentConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurrentConvention::Standard => "standard",
            CurrentConvention::ReducedAmplitude => "reduced-amplitude",
        })
    }
}

impl FromStr for CurrentConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CurrentConvention::Standard),
            "reduced-amplitude" => Ok(CurrentConvention::ReducedAmplitude),
            other => Err(Error::Parse(format!("unknown current convention `{other}`"))),
        }
    }
}

/// Per-step coefficients of the discrete filter, independent of B.
///
/// At step i, with mean `m_i` of P: the expected increment is `c_i m_i dt`,
/// the drift is `-B d_i dt` and the innovation gain is `g_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub dt: f64,
    pub current: Vec<f64>,
    pub gain: Vec<f64>,
    pub drift: Vec<f64>,
}

impl FilterCoefficients {
    pub fn new(params: &ModelParams, grid: &TimeGrid, convention: CurrentConvention) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        let eff = convention.effective_params(params);
        let dt = grid.dt();
        let n = grid.n_steps;
        let mut current = Vec::with_capacity(n);
        let mut gain = Vec::with_capacity(n);
        let mut drift = Vec::with_capacity(n);
        for i in 0..n {
            let t = grid.time(i);
            let jb = eff.jbar_unchecked(t);
            let c = 2.0 * (eff.eta * eff.kappa * jb).sqrt();
            current.push(c);
            gain.push(var_p_unchecked(&eff, t) * c);
            drift.push(eff.gamma * jb.sqrt());
        }
        Ok(Self {
            dt,
            current,
            gain,
            drift,
        })
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Advance the conditional mean by one step given the innovation.
    #[inline]
    pub fn step(&self, i: usize, mean_p: f64, field: f64, innovation: f64) -> f64 {
        mean_p - field * self.drift[i] * self.dt + self.gain[i] * innovation
    }
}

/// A discretized photocurrent with the metadata needed to analyse it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotocurrentRecord {
    pub increments: Vec<f64>,
    pub dt: f64,
    pub t_final: f64,
    /// Generating parameters; `field` is the true value of B.
    pub params: ModelParams,
    pub seed: u64,
    pub convention: CurrentConvention,
    pub rng_algorithm: String,
    pub format_version: u32,
}

impl PhotocurrentRecord {
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.n_steps())
    }

    /// A record with `eta = 0` carries no information about B.
    pub fn is_informative(&self) -> bool {
        self.params.eta > 0.0 && self.params.gamma != 0.0
    }

    /// Keep only the first `n` increments.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.n_steps() {
            return Err(Error::RecordMismatch(format!(
                "cannot truncate {} steps to {n}",
                self.n_steps()
            )));
        }
        let mut out = self.clone();
        out.increments.truncate(n);
        out.t_final = n as f64 * self.dt;
        Ok(out)
    }
}

/// Simulate one record with the default convention.
pub fn simulate_record(params: &ModelParams, grid: &TimeGrid, seed: u64) -> Result<PhotocurrentRecord> {
    simulate_record_with(params, grid, seed, CurrentConvention::default())
}

pub fn simulate_record_with(
    params: &ModelParams,
    grid: &TimeGrid,
    seed: u64,
    convention: CurrentConvention,
) -> Result<PhotocurrentRecord> {
    let coeffs = FilterCoefficients::new(params, grid, convention)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = coeffs.dt.sqrt();
    let mut mean_p = 0.0;
    let mut increments = Vec::with_capacity(grid.n_steps);
    for i in 0..grid.n_steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        let dw = sd * z;
        increments.push(coeffs.current[i] * mean_p * coeffs.dt + dw);
        mean_p = coeffs.step(i, mean_p, params.field, dw);
    }
    if !mean_p.is_finite() {
        return Err(Error::NonFinite("simulated conditional mean"));
    }
    Ok(PhotocurrentRecord {
        increments,
        dt: coeffs.dt,
        t_final: grid.t_final,
        params: *params,
        seed,
        convention,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        format_version: RECORD_FORMAT_VERSION,
    })
}

/// Sub-seed of record `index`: the splitmix64 output for state
/// `seed_base + (index + 1) * 0x9E3779B97F4A7C15` (wrapping).
pub fn derive_seed(seed_base: u64, index: u64) -> u64 {
    let mut z = seed_base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulate `n_records` independent records with seeds from [`derive_seed`].
pub fn batch_simulate(
    params: &ModelParams,
    grid: &TimeGrid,
    n_records: usize,
    seed_base: u64,
) -> Result<Vec<PhotocurrentRecord>> {
    batch_simulate_with(params, grid, n_records, seed_base, CurrentConvention::default())
}

pub fn batch_simulate_with(
    params: &ModelParams,
    grid: &TimeGrid,
    n_records: usize,
    seed_base: u64,
    convention: CurrentConvention,
) -> Result<Vec<PhotocurrentRecord>> {
    if n_records == 0 {
        return Err(Error::InvalidParameter {
            name: "n_records",
            value: 0.0,
            reason: "at least one record is required",
        });
    }
    (0..n_records as u64)
        .into_par_iter()
        .map(|i| simulate_record_with(params, grid, derive_seed(seed_base, i), convention))
        .collect()
}

/// Normalized residuals `(dy_i - c_i m_i(B) dt) / sqrt(dt)` under field `field`.
pub fn normalized_residuals(record: &PhotocurrentRecord, field: f64) -> Result<Vec<f64>> {
    let grid = record.grid()?;
    let coeffs = FilterCoefficients::new(&record.params, &grid, record.convention)?;
    let sd = coeffs.dt.sqrt();
    let mut mean_p = 0.0;
    let mut out = Vec::with_capacity(record.n_steps());
    for (i, dy) in record.increments.iter().enumerate() {
        let innovation = dy - coeffs.current[i] * mean_p * coeffs.dt;
        out.push(innovation / sd);
        mean_p = coeffs.step(i, mean_p, field, innovation);
    }
    Ok(out)
}

/// Sample mean and variance of a residual sequence.
pub fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Write a record as text: `# key = value` header lines, then one increment per line.
pub fn write_record<W: Write>(mut w: W, record: &PhotocurrentRecord) -> Result<()> {
    let p = &record.params;
    writeln!(w, "{RECORD_MAGIC} v{}", record.format_version)?;
    writeln!(w, "# J = {:e}", p.total_spin)?;
    writeln!(w, "# kappa = {:e}", p.kappa)?;
    writeln!(w, "# gamma = {:e}", p.gamma)?;
    writeln!(w, "# eta = {:e}", p.eta)?;
    writeln!(w, "# B = {:e}", p.field)?;
    writeln!(w, "# t_final = {:e}", record.t_final)?;
    writeln!(w, "# dt = {:e}", record.dt)?;
    writeln!(w, "# n_steps = {}", record.n_steps())?;
    writeln!(w, "# seed = {}", record.seed)?;
    writeln!(w, "# convention = {}", record.convention)?;
    writeln!(w, "# rng = {}", record.rng_algorithm)?;
    writeln!(w, "# informative = {}", record.is_informative())?;
    writeln!(w, "{DATA_MARKER}")?;
    for x in &record.increments {
        writeln!(w, "{x:e}")?;
    }
    Ok(())
}

pub fn read_record<R: BufRead>(r: R) -> Result<PhotocurrentRecord> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| Error::Parse("empty record file".into()))??;
    let version = first
        .strip_prefix(RECORD_MAGIC)
        .and_then(|v| v.trim().strip_prefix('v'))
        .ok_or_else(|| Error::Parse(format!("not a record file: `{first}`")))?
        .parse::<u32>()
        .map_err(|e| Error::Parse(e.to_string()))?;
    if version != RECORD_FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported record format v{version}")));
    }
    let mut header = std::collections::HashMap::new();
    for line in lines.by_ref() {
        let line = line?;
        if line == DATA_MARKER {
            break;
        }
        let kv = line
            .strip_prefix("# ")
            .and_then(|s| s.split_once(" = "))
            .ok_or_else(|| Error::Parse(format!("bad header line `{line}`")))?;
        header.insert(kv.0.to_string(), kv.1.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        header
            .get(k)
            .ok_or_else(|| Error::Parse(format!("missing header `{k}`")))
    };
    let num = |k: &str| -> Result<f64> { get(k)?.parse::<f64>().map_err(|e| Error::Parse(format!("{k}: {e}"))) };
    let params = ModelParams::new(num("J")?, num("kappa")?, num("gamma")?, num("eta")?, num("B")?)?;
    let n_steps: usize = get("n_steps")?
        .parse()
        .map_err(|e| Error::Parse(format!("n_steps: {e}")))?;
    let seed: u64 = get("seed")?.parse().map_err(|e| Error::Parse(format!("seed: {e}")))?;
    let mut increments = Vec::with_capacity(n_steps);
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let x: f64 = line
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("increment: {e}")))?;
        if !x.is_finite() {
            return Err(Error::NonFinite("record increment"));
        }
        increments.push(x);
    }
    if increments.len() != n_steps {
        return Err(Error::Parse(format!(
            "header declares {n_steps} increments, found {}",
            increments.len()
        )));
    }
    Ok(PhotocurrentRecord {
        increments,
        dt: num("dt")?,
        t_final: num("t_final")?,
        params,
        seed,
        convention: get("convention")?.parse()?,
        rng_algorithm: get("rng")?.clone(),
        format_version: version,
    })
}

pub fn save_record(path: impl AsRef<std::path::Path>, record: &PhotocurrentRecord) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_record(&mut w, record)?;
    w.flush()?;
    Ok(())
}

pub fn load_record(path: impl AsRef<std::path::Path>) -> Result<PhotocurrentRecord> {
    let f = std::fs::File::open(path)?;
    read_record(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(eta: f64, b: f64) -> ModelParams {
        ModelParams::new(1e4, 1.0, 1.0, eta, b).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let g = TimeGrid::new(1.0, 500).unwrap();
        let a = simulate_record(&params(1.0, 0.0), &g, 7).unwrap();
        let b = simulate_record(&params(1.0, 0.0), &g, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_record(&params(1.0, 0.0), &g, 8).unwrap();
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn unmonitored_record_is_pure_noise() {
        let g = TimeGrid::new(1.0, 4000).unwrap();
        let a = simulate_record(&params(0.0, 0.0), &g, 3).unwrap();
        let b = simulate_record(&params(0.0, 5e-3), &g, 3).unwrap();
        assert_eq!(a.increments, b.increments);
        assert!(!a.is_informative());
        let z: Vec<f64> = a.increments.iter().map(|x| x / g.dt().sqrt()).collect();
        let (m, v) = sample_moments(&z);
        assert!(m.abs() < 4.0 / (z.len() as f64).sqrt());
        assert!((v - 1.0).abs() < 0.1);
    }

    #[test]
    fn residuals_at_true_field_are_standard_normal() {
        let g = TimeGrid::new(1.0, 20_000).unwrap();
        let rec = simulate_record(&params(1.0, 2e-3), &g, 11).unwrap();
        let z = normalized_residuals(&rec, 2e-3).unwrap();
        let (m, v) = sample_moments(&z);
        assert!(m.abs() < 4.0 / (z.len() as f64).sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 0.05, "var {v}");
        // a wrong field leaves a drifting residual
        let z_wrong = normalized_residuals(&rec, 5e-2).unwrap();
        let (m_wrong, _) = sample_moments(&z_wrong);
        assert!(m_wrong.abs() > 4.0 / (z.len() as f64).sqrt());
    }

    #[test]
    fn batch_of_one_matches_single() {
        let g = TimeGrid::new(0.5, 100).unwrap();
        let p = params(1.0, 0.0);
        let batch = batch_simulate(&p, &g, 1, 99).unwrap();
        let single = simulate_record(&p, &g, derive_seed(99, 0)).unwrap();
        assert_eq!(batch, vec![single]);
        assert_eq!(
            batch_simulate(&p, &g, 4, 5).unwrap(),
            batch_simulate(&p, &g, 4, 5).unwrap()
        );
        assert!(batch_simulate(&p, &g, 0, 5).is_err());
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 10_000);
    }

    #[test]
    fn reduced_amplitude_is_half_efficiency() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let p = params(1.0, 0.0);
        let a = FilterCoefficients::new(&p, &g, CurrentConvention::ReducedAmplitude).unwrap();
        let b = FilterCoefficients::new(&p.with_eta(0.5), &g, CurrentConvention::Standard).unwrap();
        assert_eq!(a, b);
        let jb = p.jbar_unchecked(g.time(3));
        assert!((a.current[3] - (2.0 * jb).sqrt()).abs() < 1e-12 * a.current[3]);
    }

    #[test]
    fn truncation() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let r = simulate_record(&params(1.0, 0.0), &g, 1).unwrap();
        let t = r.truncated(40).unwrap();
        assert_eq!(t.n_steps(), 40);
        assert!((t.t_final - 0.4).abs() < 1e-12);
        assert!(r.truncated(101).is_err());
    }

    #[test]
    fn rejects_corrupt_files() {
        assert!(read_record("nothing here\n".as_bytes()).is_err());
        let g = TimeGrid::new(1.0, 3).unwrap();
        let r = simulate_record(&params(1.0, 0.0), &g, 1).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let short: String = text
            .lines()
            .take(text.lines().count() - 1)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(read_record(short.as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn record_round_trip_is_bit_exact(
            seed in any::<u64>(), n in 1usize..200, b in -1e-2f64..1e-2, eta in 0.0f64..=1.0,
            reduced in any::<bool>(),
        ) {
            let g = TimeGrid::new(0.7, n).unwrap();
            let conv = if reduced { CurrentConvention::ReducedAmplitude } else { CurrentConvention::Standard };
            let r = simulate_record_with(&params(eta, b), &g, seed, conv).unwrap();
            let mut buf = Vec::new();
            write_record(&mut buf, &r).unwrap();
            let back = read_record(buf.as_slice()).unwrap();
            prop_assert_eq!(back.increments.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            r.increments.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, r);
        }
    }
}
