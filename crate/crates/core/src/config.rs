//! Flat key-value run configuration, stored as TOML.
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
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "J")]
    pub total_spin: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub eta: f64,
    #[serde(rename = "B")]
    pub field: f64,
    pub t_final: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(params: ModelParams, grid: TimeGrid, seed: u64) -> Self {
        Self {
            total_spin: params.total_spin,
            kappa: params.kappa,
            gamma: params.gamma,
            eta: params.eta,
            field: params.field,
            t_final: grid.t_final,
            n_steps: grid.n_steps,
            seed,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.total_spin, self.kappa, self.gamma, self.eta, self.field)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.n_steps)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.params()?;
        cfg.grid()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_example() {
        let s = "J = 10000.0\nkappa = 1.0\ngamma = 1.0\neta = 1.0\nB = 0.0\nt_final = 1.0\nn_steps = 5000\nseed = 42\n";
        let cfg = RunConfig::from_toml_str(s).unwrap();
        assert_eq!(cfg.total_spin, 1e4);
        assert_eq!(cfg.n_steps, 5000);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn rejects_invalid_values() {
        let s = "J = 10.0\nkappa = 1.0\ngamma = 1.0\neta = 2.0\nB = 0.0\nt_final = 1.0\nn_steps = 10\n";
        assert!(RunConfig::from_toml_str(s).is_err());
        assert!(RunConfig::from_toml_str("J = 1").is_err());
    }

    proptest! {
        #[test]
        fn toml_round_trip(
            j in 0.5f64..1e8, kappa in 1e-3f64..1e3, gamma in -10f64..10.0,
            eta in 0.0f64..=1.0, b in -1f64..1.0, t in 1e-4f64..10.0,
            n in 1usize..100_000, seed in any::<u64>(),
        ) {
            let cfg = RunConfig {
                total_spin: j, kappa, gamma, eta, field: b, t_final: t, n_steps: n, seed,
            };
            let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
            prop_assert_eq!(cfg, back);
        }
    }
}
