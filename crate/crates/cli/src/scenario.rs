//! Scenario documents (JSON, or TOML when the file ends in `.toml`).
//!
//! ```toml
//! id = "six-bus"
//! pmus = [5, 3, 6]        # 1-based bus ids, in placement order
//! pmu_counts = [0, 1, 2, 3]
//! samples = [20, 30]      # M sweep for experiments
//! runs = 500
//! intervals = 2
//! mode = "integrate"
//! algorithms = ["sase", "gt", "blse"]
//!
//! [measurement]
//! sigma_p = 0.5
//! M = 30
//! ```

use std::path::Path;

use serde::Deserialize;

use sase_core::analysis::Algorithm;
use sase_core::estimator::ResyncMode;
use sase_core::MeasurementConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub id: String,
    pub measurement: MeasurementConfig,
    pub pmus: Option<Vec<usize>>,
    pub pmu_counts: Option<Vec<usize>>,
    pub samples: Option<Vec<usize>>,
    pub runs: Option<usize>,
    /// Resync intervals in simulated streams.
    pub intervals: usize,
    pub mode: ResyncMode,
    pub algorithms: Option<Vec<Algorithm>>,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile {
            id: "scenario".into(),
            measurement: MeasurementConfig::default(),
            pmus: None,
            pmu_counts: None,
            samples: None,
            runs: None,
            intervals: 1,
            mode: ResyncMode::Reset,
            algorithms: None,
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str, toml: bool) -> Result<Self, String> {
        let sc: ScenarioFile = if toml {
            toml::from_str(text).map_err(|e| e.to_string())?
        } else {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        };
        sc.measurement.validate().map_err(|e| e.to_string())?;
        if sc.intervals == 0 {
            return Err("intervals must be ≥ 1".into());
        }
        Ok(sc)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ScenarioFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let toml = path.extension().is_some_and(|e| e == "toml");
        Self::parse(&text, toml).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}
