use ctmag::bayes::{estimate, posterior, GridSpec, Prior};
use ctmag::trajectories::{
    batch_simulate_with, load_record, normalized_residuals, sample_moments, save_record, CurrentConvention,
};
use ctmag::{ModelParams, RunConfig, TimeGrid};

#[test]
fn records_survive_disk_and_feed_the_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::new(1e4, 1.0, 1.0, 1.0, 2e-3).unwrap();
    let grid = TimeGrid::new(1.0, 4000).unwrap();
    let records = batch_simulate_with(&params, &grid, 5, 3, CurrentConvention::ReducedAmplitude).unwrap();
    let loaded: Vec<_> = records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let path = dir.path().join(format!("r{k}.txt"));
            save_record(&path, r).unwrap();
            load_record(&path).unwrap()
        })
        .collect();
    assert_eq!(loaded, records);

    let post = posterior(&loaded, &Prior::uniform(-0.01, 0.01).unwrap(), &GridSpec::default()).unwrap();
    let s = estimate(&post).unwrap();
    assert!((s.mean - 2e-3).abs() < 4.0 * s.sd, "{s:?}");
    assert!((s.ratio.unwrap() - 1.0).abs() < 0.05);

    // residuals at the true field are the unit-variance driving noise
    let z = normalized_residuals(&loaded[0], 2e-3).unwrap();
    let (m, v) = sample_moments(&z);
    assert!(m.abs() < 0.1 && (v - 1.0).abs() < 0.1, "{m} {v}");
}

#[test]
fn run_config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    let cfg = RunConfig::new(
        ModelParams::new(10.0, 2.0, 0.5, 0.3, 1e-4).unwrap(),
        TimeGrid::new(0.25, 100).unwrap(),
        17,
    );
    cfg.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}
