//! Data → features → constrained fit.

use nalgebra::DVector;

use super::config::TrainConfig;
use crate::dataset::{resample_and_average, subsample_constraint_points, DemoSet, Demonstration};
use crate::dynamics::TrainedField;
use crate::error::Result;
use crate::features::{build_vanishing_projector, sample_feature_map};
use crate::kernels::KernelKind;
use crate::solver::{admm_solve, assemble_problem, SolveReport};

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub field: TrainedField,
    pub report: SolveReport,
    /// The averaged demonstration the field was fit to.
    pub averaged: Demonstration,
    pub constraint_points: Vec<DVector<f64>>,
}

/// Fits a field to the average of `set`, vanishing at the goal (origin) and
/// contracting at `cfg.constraint_points` points along the average.
pub fn train_field(cfg: &TrainConfig, set: &DemoSet) -> Result<TrainOutput> {
    cfg.validate()?;
    let pre = cfg.effective_preprocess();
    let averaged = resample_and_average(set, &pre)?;
    let velocities = averaged.velocities.as_ref().expect("averaging fills velocities");
    let pairs: Vec<_> = (0..averaged.len())
        .map(|t| (averaged.position(t), velocities.row(t).transpose()))
        .collect();
    let cpoints = if cfg.constraint_points == 0 {
        Vec::new()
    } else {
        subsample_constraint_points(&averaged, cfg.constraint_points)
    };

    let kind = KernelKind::new(cfg.kernel, cfg.sigma)?;
    let map = sample_feature_map(kind, cfg.num_features, set.dim, cfg.seed)?;
    let proj = build_vanishing_projector(&map, &[DVector::zeros(set.dim)])?;
    let problem = assemble_problem(&map, &proj, &pairs, &cpoints, cfg.lambda, cfg.tau)?;
    log::info!(
        "training: {} pairs, {} constraint points, {} parameters",
        pairs.len(),
        cpoints.len(),
        problem.num_params()
    );
    let report = admm_solve(&problem, &cfg.admm)?;
    let field = TrainedField::new(map, proj, report.theta.clone(), cfg.tau)?;
    Ok(TrainOutput {
        field,
        report,
        averaged,
        constraint_points: cpoints,
    })
}
