//! Merged run configuration shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleConfig;
use crate::error::{Result, VistaError};
use crate::eval::EvalConfig;
use crate::postprocess::InferenceConfig;
use crate::synth::{NoiseConfig, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inference: InferenceConfig,
    pub ensemble: EnsembleConfig,
    pub eval: EvalConfig,
    pub noise: NoiseConfig,
    pub scenario: ScenarioConfig,
    /// Prediction sources written by `synth`.
    pub synth_sources: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inference: InferenceConfig::default(),
            ensemble: EnsembleConfig::default(),
            eval: EvalConfig::default(),
            noise: NoiseConfig::default(),
            scenario: ScenarioConfig::default(),
            synth_sources: 2,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| VistaError::from_json(context, &e))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VistaError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Validates every section, collecting all problems.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let checks = [
            self.inference.validate(),
            self.ensemble.validate(),
            self.eval.validate(),
            self.noise.validate(),
        ];
        for r in checks {
            match r {
                Ok(()) => {}
                Err(VistaError::Validation { context, problems: p }) => {
                    problems.extend(p.into_iter().map(|x| format!("{context}: {x}")))
                }
                Err(e) => problems.push(e.to_string()),
            }
        }
        if self.synth_sources == 0 {
            problems.push("synth_sources must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(VistaError::Validation {
                context: "run config".into(),
                problems,
            })
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
