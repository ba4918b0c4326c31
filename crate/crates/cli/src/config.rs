use lorentz_tube::analysis::{A4Config, A6Config, InvarianceConfig, InvarianceMap, LyapunovConfig};
use lorentz_tube::tube::TubeConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Everything a run depends on. Together with the master seed it fixes every
/// per-orbit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tube: TubeConfig,
    /// Master seed; per-orbit streams are derived from it.
    pub seed: u64,
    /// Worker threads (all cores when absent).
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub simulate: SimulateParams,
    pub recurrence: RecurrenceParams,
    pub lyapunov: LyapunovParams,
    pub check: CheckParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tube: TubeConfig::default(),
            seed: 0,
            workers: None,
            out: PathBuf::from("out"),
            simulate: SimulateParams::default(),
            recurrence: RecurrenceParams::default(),
            lyapunov: LyapunovParams::default(),
            check: CheckParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub orbits: usize,
    pub collisions: Option<u64>,
    pub max_time: Option<f64>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self { orbits: 1, collisions: Some(1000), max_time: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrenceParams {
    /// Seeds of the quenched realizations.
    pub tube_seeds: Vec<u64>,
    pub orbits_per_tube: usize,
    pub n_max: u64,
    pub drift_horizon: u64,
}

impl Default for RecurrenceParams {
    fn default() -> Self {
        Self { tube_seeds: (0..10).collect(), orbits_per_tube: 100, n_max: 10_000, drift_horizon: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Tangent,
    Shadow,
    /// Both methods on the same orbits, with their relative difference.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovParams {
    pub orbits: usize,
    pub method: MethodChoice,
    /// Largest relative difference accepted between the two methods.
    pub agreement: f64,
    pub estimator: LyapunovConfig,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self { orbits: 10, method: MethodChoice::Tangent, agreement: 0.05, estimator: LyapunovConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A3Params {
    /// Cells 0..cells are checked.
    pub cells: i64,
    pub samples: usize,
}

impl Default for A3Params {
    fn default() -> Self {
        Self { cells: 10, samples: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A6Params {
    /// Cell and dispersing piece of `M_α`.
    pub alpha: (i64, usize),
    pub deltas: Vec<f64>,
    /// Largest accepted ratio between the measure/δ estimates.
    pub max_spread: f64,
    pub estimator: A6Config,
}

impl Default for A6Params {
    fn default() -> Self {
        Self {
            alpha: (0, 0),
            deltas: vec![1e-2, 1e-3, 1e-4],
            max_spread: 2.0,
            estimator: A6Config { samples: 200_000, ..A6Config::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureParams {
    pub map: InvarianceMap,
    pub samples: usize,
    /// Also run the biased-reference negative control, which must fail.
    pub control: bool,
    pub test: InvarianceConfig,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self { map: InvarianceMap::PoincareN, samples: 100_000, control: true, test: InvarianceConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub orbits: usize,
    pub collisions: usize,
    pub point_tolerance: f64,
    pub cos_tolerance: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self { orbits: 100, collisions: 100, point_tolerance: 1e-9, cos_tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckParams {
    pub a3: A3Params,
    pub a4: A4Config,
    pub a6: A6Params,
    pub measure: MeasureParams,
    pub oracle: OracleParams,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = RunConfig { seed: 17, ..RunConfig::default() };
        c.check.a6.deltas = vec![0.1, 0.01];
        c.lyapunov.method = MethodChoice::Both;
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn partial_files_use_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 3, "recurrence": {"n_max": 50}}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.recurrence.n_max, 50);
        assert_eq!(c.recurrence.orbits_per_tube, 100);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 3}"#).is_err());
    }
}
