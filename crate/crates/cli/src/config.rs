use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trackcast::cells::CellKind;
use trackcast::eval::EvalSettings;
use trackcast::forecast::{ModelConfig, TrainConfig};
use trackcast::trackgen::{TrackScenario, DEFAULT_SPLIT};
use trackcast::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub alphas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Train and validation fractions of the time span; the test split gets the rest.
    pub split: [f64; 2],
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let s = EvalSettings::default();
        Self {
            alphas: s.alphas,
            epsilons: s.epsilons,
            split: [DEFAULT_SPLIT.0, DEFAULT_SPLIT.1],
        }
    }
}

impl EvaluationConfig {
    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            alphas: self.alphas.clone(),
            epsilons: self.epsilons.clone(),
        }
    }

    pub fn ratios(&self) -> (f64, f64) {
        (self.split[0], self.split[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub variants: Vec<CellKind>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            variants: vec![CellKind::ConvLstm, CellKind::Gru, CellKind::Lstm],
        }
    }
}

/// One run. `seed` is the only required key; it also replaces `scenario.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub scenario: TrackScenario,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.scenario.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.scenario.seed = s;
        }
        self
    }

    /// Every problem at once, each naming its field.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if let Err(Error::Validation(v)) = self.scenario.validate() {
            bad.extend(v.into_iter().map(|m| format!("scenario.{m}")));
        }
        for r in [
            self.model.validate(),
            self.training.validate(),
            self.evaluation.settings().validate(),
        ] {
            match r {
                Ok(()) => {}
                Err(Error::Validation(v)) => bad.extend(v),
                Err(e) => bad.push(e.to_string()),
            }
        }
        let [a, b] = self.evaluation.split;
        if !(a > 0.0 && b > 0.0 && a + b < 1.0) {
            bad.push(format!("evaluation.split: fractions must be > 0 and sum below 1, got [{a}, {b}]"));
        }
        if self.compare.variants.is_empty() {
            bad.push("compare.variants: must list at least one variant".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
