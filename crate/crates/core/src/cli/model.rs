//! Portable JSON model files.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::dynamics::TrainedField;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, VanishingProjector};
use crate::kernels::KernelKind;
use crate::solver::SolveReport;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub iters: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    /// `None` without constraint points.
    pub max_constraint_violation: Option<f64>,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            converged: r.converged,
            iters: r.iters,
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
            objective: r.objective,
            max_constraint_violation: r
                .max_constraint_violation
                .is_finite()
                .then_some(r.max_constraint_violation),
        }
    }
}

/// Everything needed to rebuild a [`TrainedField`] bit for bit.
///
/// The projector is stored as its orthonormal basis `Q` (`feature_dim × r`,
/// one inner array per column); `L = I - QQᵀ` is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: String,
    pub config: TrainConfig,
    pub kernel: KernelKind,
    /// One inner array per random frequency.
    pub frequencies: Vec<Vec<f64>>,
    pub phases: Vec<f64>,
    pub projector_basis: Vec<Vec<f64>>,
    pub equilibria: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub solve: SolveSummary,
}

impl ModelFile {
    pub fn new(config: &TrainConfig, field: &TrainedField, report: &SolveReport) -> Self {
        let map = field.map();
        let q = field.projector().basis();
        Self {
            schema_version: SCHEMA_VERSION.into(),
            config: config.clone(),
            kernel: map.kind,
            frequencies: map.freqs.row_iter().map(|r| r.iter().copied().collect()).collect(),
            phases: map.phases.iter().copied().collect(),
            projector_basis: q.column_iter().map(|c| c.iter().copied().collect()).collect(),
            equilibria: field
                .equilibria()
                .iter()
                .map(|z| z.iter().copied().collect())
                .collect(),
            theta: field.theta().iter().copied().collect(),
            solve: report.into(),
        }
    }

    pub fn to_field(&self) -> Result<TrainedField> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported model schema {}",
                self.schema_version
            )));
        }
        let s = self.frequencies.len();
        let n = self.frequencies.first().map_or(0, Vec::len);
        if self.frequencies.iter().any(|r| r.len() != n) {
            return Err(Error::Data("ragged frequency matrix".into()));
        }
        let freqs = DMatrix::from_fn(s, n, |i, j| self.frequencies[i][j]);
        let kind = KernelKind::new(self.kernel.variant, self.kernel.sigma)?;
        let map = FeatureMap::new(kind, freqs, DVector::from_vec(self.phases.clone()))?;
        let fd = map.feature_dim();
        if self.projector_basis.iter().any(|c| c.len() != fd) {
            return Err(Error::Data("projector basis does not match the feature map".into()));
        }
        let basis = DMatrix::from_fn(fd, self.projector_basis.len(), |i, j| {
            self.projector_basis[j][i]
        });
        let equilibria = self
            .equilibria
            .iter()
            .map(|z| DVector::from_vec(z.clone()))
            .collect();
        let proj = VanishingProjector::from_basis(basis, equilibria);
        TrainedField::new(map, proj, DVector::from_vec(self.theta.clone()), self.config.tau)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
