//! Experiment description read from `--config`.
//!
//! Every key is optional. Scalar keys form the model template; list keys
//! span the sweep grids.
//!
//! ```toml
//! J = 10000.0
//! kappa = 1.0
//! gamma = 1.0
//! eta = 1.0
//! B = 0.0
//! t_final = 1.0
//! n_steps = 5000
//! seed = 42
//! J_values = [1e2, 1e4, 1e6]
//! kappa_t_values = [0.01, 0.1, 1.0]
//! eta_values = [0.1, 0.5, 1.0]
//! n_records = 20
//! prior_lo = -0.01
//! prior_hi = 0.01
//! grid_points = 401
//! checkpoints = 20
//! convention = "standard"
//! ```

use std::path::Path;

use ctmag::trajectories::CurrentConvention;
use ctmag::{ModelParams, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Optional guard: when set it must name the subcommand being run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workflow: Option<String>,
    #[serde(rename = "J")]
    pub total_spin: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub eta: f64,
    #[serde(rename = "B")]
    pub field: f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(rename = "J_values", skip_serializing_if = "Option::is_none")]
    pub total_spin_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_t_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_values: Option<Vec<f64>>,
    pub n_records: usize,
    pub prior_lo: f64,
    pub prior_hi: f64,
    pub grid_points: usize,
    pub checkpoints: usize,
    pub convention: String,
}

pub const DEFAULT_TOTAL_SPIN_VALUES: [f64; 3] = [1e2, 1e4, 1e6];
pub const DEFAULT_KAPPA_T_VALUES: [f64; 3] = [0.01, 0.1, 1.0];
pub const DEFAULT_ETA_VALUES: [f64; 3] = [0.1, 0.5, 1.0];

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            workflow: None,
            total_spin: 1e4,
            kappa: 1.0,
            gamma: 1.0,
            eta: 1.0,
            field: 0.0,
            t_final: 1.0,
            n_steps: 5000,
            seed: 0,
            total_spin_values: None,
            kappa_t_values: None,
            eta_values: None,
            n_records: 1,
            prior_lo: -0.01,
            prior_hi: 0.01,
            grid_points: 401,
            checkpoints: 20,
            convention: CurrentConvention::default().to_string(),
        }
    }
}

fn non_empty(name: &str, v: &Option<Vec<f64>>) -> Result<(), CliError> {
    match v {
        Some(v) if v.is_empty() => Err(CliError::Usage(format!("`{name}` must not be empty"))),
        Some(v) if v.iter().any(|x| !x.is_finite()) => Err(CliError::Usage(format!("`{name}` has a non-finite entry"))),
        _ => Ok(()),
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        let experiment: Self = toml::from_str(s).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        experiment.validate()?;
        Ok(experiment)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        non_empty("J_values", &self.total_spin_values)?;
        non_empty("kappa_t_values", &self.kappa_t_values)?;
        non_empty("eta_values", &self.eta_values)?;
        self.convention()?;
        Ok(())
    }

    pub fn check_workflow(&self, name: &str) -> Result<(), CliError> {
        match &self.workflow {
            Some(w) if w != name => Err(CliError::Usage(format!(
                "config is for workflow `{w}` but `{name}` was requested"
            ))),
            _ => Ok(()),
        }
    }

    pub fn params(&self) -> ctmag::Result<ModelParams> {
        ModelParams::new(self.total_spin, self.kappa, self.gamma, self.eta, self.field)
    }

    pub fn grid(&self) -> ctmag::Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.n_steps)
    }

    pub fn convention(&self) -> Result<CurrentConvention, CliError> {
        self.convention
            .parse()
            .map_err(|_| CliError::Usage(format!("unknown convention `{}`", self.convention)))
    }

    pub fn total_spin_values(&self) -> Vec<f64> {
        self.total_spin_values
            .clone()
            .unwrap_or_else(|| DEFAULT_TOTAL_SPIN_VALUES.to_vec())
    }

    pub fn kappa_t_values(&self) -> Vec<f64> {
        self.kappa_t_values
            .clone()
            .unwrap_or_else(|| DEFAULT_KAPPA_T_VALUES.to_vec())
    }

    pub fn eta_values(&self) -> Vec<f64> {
        self.eta_values.clone().unwrap_or_else(|| DEFAULT_ETA_VALUES.to_vec())
    }

    /// The experiment as `# `-prefixed TOML lines, for output headers.
    pub fn provenance(&self, command: &str) -> String {
        let mut out = format!("# ctmag {} {command}\n", env!("CARGO_PKG_VERSION"));
        let body = toml::to_string(self).expect("experiment serializes");
        for line in body.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
