use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ctmag::bayes::{self, GridSpec, PosteriorGrid, Prior};
use ctmag::information::{effective_qfi, write_reports_csv, InformationReport};
use ctmag::model::{validity_report, ValidityThresholds};
use ctmag::trajectories::{self, load_record, save_record, PhotocurrentRecord};
use ctmag::verify::{self, VerifyOptions};
use ctmag::ModelParams;
use rayon::prelude::*;

use crate::{CliError, ExperimentSpec};

pub const INFO_SWEEP_FILE: &str = "info_sweep.csv";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const VERIFY_FILE: &str = "verify_report.csv";

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `body` into `path` behind the provenance header.
fn write_csv(
    path: &Path,
    header: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> ctmag::Result<()>,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(header.as_bytes()).map_err(io_err(path))?;
    body(&mut w)?;
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// One row per (J, kappa_t, eta), J outermost, in the order given.
pub fn sweep_reports(experiment: &ExperimentSpec) -> Result<Vec<InformationReport>, CliError> {
    let mut points = Vec::new();
    for &j in &experiment.total_spin_values() {
        for &kt in &experiment.kappa_t_values() {
            for &eta in &experiment.eta_values() {
                points.push((j, kt, eta));
            }
        }
    }
    let reports = points
        .par_iter()
        .map(|&(j, kt, eta)| {
            let p = ModelParams::new(j, experiment.kappa, experiment.gamma, eta, 0.0)?;
            effective_qfi(&p, p.time_from_kappa_t(kt))
        })
        .collect::<ctmag::Result<Vec<_>>>()?;
    Ok(reports)
}

pub fn info_sweep(experiment: &ExperimentSpec, out: &Path) -> Result<PathBuf, CliError> {
    let reports = sweep_reports(experiment)?;
    for r in &reports {
        let p = ModelParams::new(r.total_spin, experiment.kappa, experiment.gamma, r.eta, 0.0)?;
        let v = validity_report(&p, p.time_from_kappa_t(r.kappa_t), ValidityThresholds::default());
        if !v.gaussian_ok {
            eprintln!(
                "warning: kappa_t = {} is beyond the Gaussian validity bound (J = {}, eta = {})",
                r.kappa_t, r.total_spin, r.eta
            );
        }
    }
    let path = out.join(INFO_SWEEP_FILE);
    write_csv(&path, &experiment.provenance("info-sweep"), |w| {
        write_reports_csv(w, &reports)
    })?;
    println!("wrote {} rows to {}", reports.len(), path.display());
    Ok(path)
}

pub fn record_file_name(seed: u64, index: usize) -> String {
    format!("record_s{seed}_{index:05}.txt")
}

pub fn simulate(experiment: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = experiment.params()?;
    let grid = experiment.grid()?;
    let records = trajectories::batch_simulate_with(
        &params,
        &grid,
        experiment.n_records,
        experiment.seed,
        experiment.convention()?,
    )?;
    if params.eta == 0.0 {
        eprintln!("warning: eta = 0, records carry no information about B (flagged in metadata)");
    }
    let mut paths = Vec::with_capacity(records.len());
    for (k, r) in records.iter().enumerate() {
        let path = out.join(record_file_name(experiment.seed, k));
        save_record(&path, r)?;
        paths.push(path);
    }
    println!("wrote {} records to {}", paths.len(), out.display());
    Ok(paths)
}

/// Expand directories into their `record_*.txt` files, sorted by name.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(io_err(input))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("record_") && n.ends_with(".txt"))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else if input.exists() {
            files.push(input.clone());
        } else {
            return Err(CliError::Usage(format!("no such record file: {}", input.display())));
        }
    }
    Ok(files)
}

pub fn estimate(experiment: &ExperimentSpec, inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let files = expand_inputs(inputs)?;
    let records = files
        .iter()
        .map(load_record)
        .collect::<ctmag::Result<Vec<PhotocurrentRecord>>>()?;
    let prior = Prior::uniform(experiment.prior_lo, experiment.prior_hi)?;
    let grid = GridSpec::with_points(experiment.grid_points);
    let snapshots: Vec<PosteriorGrid> = match records.first() {
        None => {
            eprintln!("warning: no records given, the posterior is the prior");
            vec![bayes::posterior(&[], &prior, &grid)?]
        }
        Some(first) => {
            let checkpoints = bayes::even_checkpoints(first.n_steps(), experiment.checkpoints);
            let snaps = bayes::posterior_checkpoints(&records, &prior, &grid, &checkpoints)?;
            if let Some(last) = snaps.last() {
                let (lo, hi) = last.boundary_mass();
                for (side, mass) in [("lower", lo), ("upper", hi)] {
                    if mass > grid.boundary_mass_limit {
                        return Err(ctmag::Error::BoundaryMass { side, mass }.into());
                    }
                }
            }
            snaps
        }
    };
    let summaries = snapshots
        .iter()
        .map(bayes::estimate)
        .collect::<ctmag::Result<Vec<_>>>()?;
    let mut header = experiment.provenance("estimate");
    header.push_str(&format!("# records = {}\n", records.len()));
    for (f, r) in files.iter().zip(&records) {
        header.push_str(&format!("# record {} seed={}\n", f.display(), r.seed));
    }
    write_csv(&out.join(POSTERIOR_FILE), &header, |w| {
        bayes::write_posterior_csv(w, &snapshots)
    })?;
    write_csv(&out.join(SUMMARY_FILE), &header, |w| {
        bayes::write_summary_csv(w, &summaries)
    })?;
    if let Some(s) = summaries.last() {
        let ratio = s.ratio.map_or_else(|| "NA".to_string(), |r| format!("{r:.3}"));
        println!(
            "kappa_t = {}: mean = {:e}, sd = {:e}, sd/sd_crb = {ratio}",
            s.kappa_t, s.mean, s.sd
        );
    }
    Ok(())
}

pub fn verify_options(experiment: &ExperimentSpec, fault_factor: f64, include_finite_j: bool) -> VerifyOptions {
    let d = VerifyOptions::default();
    VerifyOptions {
        eta_values: experiment.eta_values.clone().unwrap_or(d.eta_values),
        total_spin_values: experiment.total_spin_values.clone().unwrap_or(d.total_spin_values),
        kappa_t_values: experiment.kappa_t_values.clone().unwrap_or(d.kappa_t_values),
        gamma_over_kappa: experiment.gamma / experiment.kappa,
        include_finite_j,
        fault_factor,
    }
}

pub fn verify(
    experiment: &ExperimentSpec,
    out: &Path,
    fault_factor: f64,
    include_finite_j: bool,
) -> Result<(), CliError> {
    let report = verify::run(&verify_options(experiment, fault_factor, include_finite_j))?;
    let mut header = experiment.provenance("verify");
    if fault_factor != 1.0 {
        header.push_str(&format!("# injected fault factor = {fault_factor}\n"));
    }
    let path = out.join(VERIFY_FILE);
    write_csv(&path, &header, |w| report.write_csv(w))?;
    let failed = report.failures().count();
    for c in report.failures() {
        eprintln!("FAIL {}: residual {:e} > {:e}", c.name, c.residual, c.threshold);
    }
    println!(
        "{} of {} checks passed; report in {}",
        report.checks.len() - failed,
        report.checks.len(),
        path.display()
    );
    if failed > 0 {
        return Err(CliError::Verification {
            failed,
            total: report.checks.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_order_and_single_point_match_library() {
        let experiment =
            ExperimentSpec::from_toml_str("J_values = [10.0, 100.0]\nkappa_t_values = [0.1, 1.0]\neta_values = [0.5]")
                .unwrap();
        let rows = sweep_reports(&experiment).unwrap();
        let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.total_spin, r.kappa_t)).collect();
        assert_eq!(keys, vec![(10.0, 0.1), (10.0, 1.0), (100.0, 0.1), (100.0, 1.0)]);
        let direct = effective_qfi(&ModelParams::new(100.0, 1.0, 1.0, 0.5, 0.0).unwrap(), 0.1).unwrap();
        assert_eq!(rows[2].csv_row(), direct.csv_row());
    }

    #[test]
    fn record_names_sort_by_index() {
        assert!(record_file_name(3, 2) < record_file_name(3, 10));
    }
}
