//! Training configuration and `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::PreprocessConfig;
use crate::error::{Error, Result};
use crate::kernels::KernelVariant;
use crate::solver::ADMMSettings;

/// Training hyperparameters. Defaults follow the reported experiments:
/// curl-free kernel, `σ = 10`, 200 features, `λ = 0.01`, `τ = 0` and 250
/// constraint points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kernel: KernelVariant,
    pub sigma: f64,
    pub num_features: usize,
    pub lambda: f64,
    pub tau: f64,
    /// Number of constraint points; `0` trains without contraction
    /// constraints. Overrides `preprocess.constraint_points`.
    pub constraint_points: usize,
    pub seed: u64,
    pub admm: ADMMSettings,
    pub preprocess: PreprocessConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kernel: KernelVariant::CurlFree,
            sigma: 10.0,
            num_features: 200,
            lambda: 0.01,
            tau: 0.0,
            constraint_points: 250,
            seed: 0,
            admm: ADMMSettings::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.num_features == 0 {
            return bad("num_features must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be >= 0, got {}", self.tau));
        }
        self.admm.validate()?;
        self.preprocess.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies `key=value` overrides; nested keys use dots (`admm.rho=2`).
    /// Values are parsed as JSON, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("override `{o}` is not of the form key=value"))
            })?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            let mut node = &mut tree;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = node.as_object_mut().ok_or_else(|| {
                    Error::InvalidArgument(format!("`{key}` does not name a config field"))
                })?;
                if !obj.contains_key(*part) {
                    return Err(Error::InvalidArgument(format!("unknown config key `{key}`")));
                }
                if i + 1 == parts.len() {
                    obj.insert((*part).to_string(), value.clone());
                    break;
                }
                node = obj.get_mut(*part).expect("checked above");
            }
        }
        serde_json::from_value(tree)
            .map_err(|e| Error::InvalidArgument(format!("bad override: {e}")))
    }

    /// Preprocessing with the top-level constraint count applied.
    pub fn effective_preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            constraint_points: self.constraint_points.max(1),
            ..self.preprocess
        }
    }
}
