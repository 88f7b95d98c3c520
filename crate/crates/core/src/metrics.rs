//! Reproduction, goal-reaching, grid-stability and DTW metrics.
//!
//! All demonstrations are expected in goal-centred coordinates, so the goal
//! is the origin.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{finite_difference_velocities, DemoSet, Demonstration, PreprocessConfig};
use crate::dynamics::{rollout, rollout_sampled, IntegratorSettings, RolloutResult, VectorField};
use crate::error::{check_dim, Error, Result};

/// Horizon multiplier for goal-reaching rollouts.
pub const GOAL_HORIZON_FACTOR: f64 = 30.0;

/// Reproduction and goal metrics. Means that have no contributing demo are
/// `NaN` (serialised as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub training_trajectory_error: f64,
    pub training_velocity_error: f64,
    pub test_trajectory_error: f64,
    pub test_velocity_error: f64,
    pub distance_to_goal: f64,
    pub duration_to_goal: Option<f64>,
    pub number_reached_goal: usize,
    pub number_of_demos: usize,
    pub integration_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvalReport {
    pub grid_fraction_reached: f64,
    pub grid_duration: Option<f64>,
    pub grid_distance_to_goal: f64,
    pub grid_dtwd: f64,
    pub grid_points: usize,
    pub integration_failures: usize,
}

fn check_pairs(demos: &[Demonstration], rollouts: &[RolloutResult]) -> Result<()> {
    if demos.is_empty() {
        return Err(Error::InvalidArgument("no demonstrations".into()));
    }
    check_dim(demos.len(), rollouts.len())?;
    for (d, r) in demos.iter().zip(rollouts) {
        if d.len() != r.len() {
            return Err(Error::InvalidArgument(format!(
                "rollout has {} samples, demonstration has {}",
                r.len(),
                d.len()
            )));
        }
        check_dim(d.dim(), r.states.ncols())?;
    }
    Ok(())
}

fn mean_row_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let total: f64 = (0..a.nrows()).map(|t| (a.row(t) - b.row(t)).norm()).sum();
    total / a.nrows() as f64
}

/// Mean over demos of the time-averaged position error.
pub fn trajectory_error(demos: &[Demonstration], rollouts: &[RolloutResult]) -> Result<f64> {
    check_pairs(demos, rollouts)?;
    let sum: f64 = demos
        .iter()
        .zip(rollouts)
        .map(|(d, r)| mean_row_distance(&d.positions, &r.states))
        .sum();
    Ok(sum / demos.len() as f64)
}

/// Mean over demos of the time-averaged velocity error; rollout velocities
/// are `f` at the rolled-out states.
pub fn velocity_error(demos: &[Demonstration], rollouts: &[RolloutResult]) -> Result<f64> {
    check_pairs(demos, rollouts)?;
    let mut sum = 0.0;
    for (d, r) in demos.iter().zip(rollouts) {
        let v = d
            .velocities
            .as_ref()
            .ok_or_else(|| Error::Data("demonstration has no velocities".into()))?;
        sum += mean_row_distance(v, &r.velocities);
    }
    Ok(sum / demos.len() as f64)
}

/// Dynamic time warping with Euclidean local cost and no window or
/// normalisation. Paths are `T × n` matrices.
pub fn dtw_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidArgument("DTW needs non-empty paths".into()));
    }
    check_dim(a.ncols(), b.ncols())?;
    let m = b.nrows();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for i in 0..a.nrows() {
        for j in 0..m {
            let cost = (a.row(i) - b.row(j)).norm();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                prev[j].min(left).min(diag)
            };
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

fn with_velocities(d: &Demonstration) -> Result<Demonstration> {
    match d.velocities {
        Some(_) => Ok(d.clone()),
        None => finite_difference_velocities(d, &PreprocessConfig::default()),
    }
}

fn reproduce<F: VectorField + ?Sized>(
    f: &F,
    d: &Demonstration,
    s: &IntegratorSettings,
) -> Result<RolloutResult> {
    let s = IntegratorSettings {
        detect_goal: false,
        ..*s
    };
    rollout_sampled(f, &d.start(), &d.relative_times(), &s)
}

struct Reproduction {
    trajectory: f64,
    velocity: f64,
}

/// Per-demo errors; `None` marks an integration failure.
fn reproduction_errors<F: VectorField + ?Sized>(
    f: &F,
    set: &DemoSet,
    s: &IntegratorSettings,
) -> Result<Vec<Option<Reproduction>>> {
    set.demos
        .par_iter()
        .map(|d| {
            check_dim(f.dim(), d.dim())?;
            let d = with_velocities(d)?;
            match reproduce(f, &d, s) {
                Ok(r) => {
                    let one = std::slice::from_ref(&d);
                    let rr = std::slice::from_ref(&r);
                    Ok(Some(Reproduction {
                        trajectory: trajectory_error(one, rr)?,
                        velocity: velocity_error(one, rr)?,
                    }))
                }
                Err(Error::Integration { t, message, .. }) => {
                    log::warn!("reproduction rollout failed at t = {t}: {message}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

struct GoalRun {
    distance_at_t: f64,
    time_to_goal: Option<f64>,
}

fn goal_run<F: VectorField + ?Sized>(
    f: &F,
    d: &Demonstration,
    s: &IntegratorSettings,
) -> Result<GoalRun> {
    let t = d.duration();
    let at_t = rollout_sampled(
        f,
        &d.start(),
        &[0.0, t],
        &IntegratorSettings {
            detect_goal: false,
            ..*s
        },
    )?;
    let long = rollout(
        f,
        &d.start(),
        &IntegratorSettings {
            horizon: GOAL_HORIZON_FACTOR * t,
            detect_goal: true,
            ..*s
        },
    )?;
    Ok(GoalRun {
        distance_at_t: at_t.last_state().norm(),
        time_to_goal: long.time_to_goal,
    })
}

/// Reproduction errors on `train` and `test`, and goal metrics over all of
/// their demonstrations. Integration failures are excluded from the means
/// and counted in `integration_failures`.
pub fn evaluate<F: VectorField + ?Sized>(
    f: &F,
    train: &DemoSet,
    test: &DemoSet,
    s: &IntegratorSettings,
) -> Result<EvalReport> {
    s.validate()?;
    let train_err = reproduction_errors(f, train, s)?;
    let test_err = reproduction_errors(f, test, s)?;

    let all: Vec<&Demonstration> = train.demos.iter().chain(&test.demos).collect();
    let goals: Vec<Option<GoalRun>> = all
        .par_iter()
        .map(|d| match goal_run(f, d, s) {
            Ok(g) => Ok(Some(g)),
            Err(Error::Integration { t, message, .. }) => {
                log::warn!("goal rollout failed at t = {t}: {message}");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let failures = train_err.iter().chain(&test_err).filter(|e| e.is_none()).count()
        + goals.iter().filter(|g| g.is_none()).count();
    let ok_goals: Vec<&GoalRun> = goals.iter().flatten().collect();
    let durations: Vec<f64> = ok_goals.iter().filter_map(|g| g.time_to_goal).collect();

    Ok(EvalReport {
        training_trajectory_error: mean(train_err.iter().flatten().map(|r| r.trajectory)),
        training_velocity_error: mean(train_err.iter().flatten().map(|r| r.velocity)),
        test_trajectory_error: mean(test_err.iter().flatten().map(|r| r.trajectory)),
        test_velocity_error: mean(test_err.iter().flatten().map(|r| r.velocity)),
        distance_to_goal: mean(ok_goals.iter().map(|g| g.distance_at_t)),
        duration_to_goal: (!durations.is_empty()).then(|| mean(durations.iter().copied())),
        number_reached_goal: durations.len(),
        number_of_demos: all.len(),
        integration_failures: failures,
    })
}

/// Uniform grid of `k` starts over the demonstrations' bounding box, inflated
/// by 10% of its extent on every side. `k` must be a perfect `n`-th power.
/// With `jitter_seed`, each start moves uniformly within its grid cell.
pub fn grid_starts(demos: &DemoSet, k: usize, jitter_seed: Option<u64>) -> Result<Vec<DVector<f64>>> {
    let n = demos.dim;
    let per = (k as f64).powf(1.0 / n as f64).round() as usize;
    if per < 1 || per.pow(n as u32) != k {
        return Err(Error::InvalidArgument(format!(
            "grid size {k} is not a perfect power of the dimension {n}"
        )));
    }
    let bounds: Vec<(f64, f64)> = demos
        .bounding_box()
        .into_iter()
        .map(|(lo, hi)| {
            let pad = 0.1 * (hi - lo);
            (lo - pad, hi + pad)
        })
        .collect();
    let coord = |axis: usize, i: usize| {
        let (lo, hi) = bounds[axis];
        if per == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (per - 1) as f64
        }
    };
    let mut rng = jitter_seed.map(ChaCha20Rng::seed_from_u64);
    let mut starts = Vec::with_capacity(k);
    for idx in 0..k {
        // the first axis varies fastest
        let mut x = DVector::zeros(n);
        let mut rem = idx;
        for (axis, xa) in x.iter_mut().enumerate() {
            *xa = coord(axis, rem % per);
            rem /= per;
            if let Some(rng) = rng.as_mut() {
                let (lo, hi) = bounds[axis];
                let half = 0.5 * (hi - lo) / per.max(2).saturating_sub(1) as f64;
                *xa = (*xa + rng.random_range(-half..=half)).clamp(lo, hi);
            }
        }
        starts.push(x);
    }
    Ok(starts)
}

struct GridRun {
    reached: bool,
    duration: Option<f64>,
    distance: f64,
    dtw: f64,
}

fn grid_run<F: VectorField + ?Sized>(
    f: &F,
    x0: &DVector<f64>,
    demos: &[Demonstration],
    dt: f64,
    s: &IntegratorSettings,
) -> Result<GridRun> {
    let run = rollout(f, x0, s)?;
    let t_end = *run.times.last().unwrap();
    let steps = (t_end / dt).floor() as usize;
    let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    if t_end - times.last().unwrap() > 1e-12 {
        times.push(t_end);
    }
    let path = rollout_sampled(
        f,
        x0,
        &times,
        &IntegratorSettings {
            detect_goal: false,
            ..*s
        },
    )?;
    let dtw = demos
        .iter()
        .map(|d| dtw_distance(&path.states, &d.positions))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(GridRun {
        reached: run.reached_goal,
        duration: run.time_to_goal,
        distance: run.last_state().norm(),
        dtw,
    })
}

/// Rolls out from a grid around the demonstrations with horizon `30·T̄` and
/// the goal event. DTW compares each rollout, sampled at the demonstrations'
/// mean sample interval, with its closest demonstration.
pub fn grid_evaluate<F: VectorField + ?Sized>(
    f: &F,
    demos: &DemoSet,
    s: &IntegratorSettings,
    grid_k: usize,
    jitter_seed: Option<u64>,
) -> Result<GridEvalReport> {
    s.validate()?;
    check_dim(f.dim(), demos.dim)?;
    let starts = grid_starts(demos, grid_k, jitter_seed)?;
    let samples: usize = demos.demos.iter().map(|d| d.len() - 1).sum();
    let total: f64 = demos.demos.iter().map(|d| d.duration()).sum();
    let dt = total / samples as f64;
    let s = IntegratorSettings {
        horizon: GOAL_HORIZON_FACTOR * demos.mean_duration(),
        detect_goal: true,
        ..*s
    };

    let runs: Vec<Option<GridRun>> = starts
        .par_iter()
        .map(|x0| match grid_run(f, x0, &demos.demos, dt, &s) {
            Ok(r) => Ok(Some(r)),
            Err(Error::Integration { t, message, .. }) => {
                log::warn!("grid rollout failed at t = {t}: {message}");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let ok: Vec<&GridRun> = runs.iter().flatten().collect();
    let reached = ok.iter().filter(|r| r.reached).count();
    let durations: Vec<f64> = ok.iter().filter_map(|r| r.duration).collect();
    Ok(GridEvalReport {
        grid_fraction_reached: reached as f64 / starts.len() as f64,
        grid_duration: (!durations.is_empty()).then(|| mean(durations.iter().copied())),
        grid_distance_to_goal: mean(ok.iter().map(|r| r.distance)),
        grid_dtwd: mean(ok.iter().map(|r| r.dtw)),
        grid_points: starts.len(),
        integration_failures: runs.len() - ok.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearField;
    use crate::synthetic::exponential_decay_demos;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn path(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    fn fake_rollout(states: DMatrix<f64>, velocities: DMatrix<f64>) -> RolloutResult {
        RolloutResult {
            times: (0..states.nrows()).map(|i| i as f64).collect(),
            states,
            velocities,
            reached_goal: false,
            time_to_goal: None,
            n_field_evals: 0,
        }
    }

    fn demo_1d(pos: &[f64], vel: &[f64]) -> Demonstration {
        Demonstration::new(
            (0..pos.len()).map(|i| i as f64).collect(),
            DMatrix::from_column_slice(pos.len(), 1, pos),
            Some(DMatrix::from_column_slice(vel.len(), 1, vel)),
        )
        .unwrap()
    }

    #[test]
    fn error_examples() {
        let d = demo_1d(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]);
        let same = fake_rollout(d.positions.clone(), d.velocities.clone().unwrap());
        assert_eq!(trajectory_error(std::slice::from_ref(&d), std::slice::from_ref(&same)).unwrap(), 0.0);
        assert_eq!(velocity_error(std::slice::from_ref(&d), &[same]).unwrap(), 0.0);

        let shifted = fake_rollout(d.positions.add_scalar(1.0), DMatrix::zeros(3, 1));
        assert_abs_diff_eq!(trajectory_error(std::slice::from_ref(&d), std::slice::from_ref(&shifted)).unwrap(), 1.0);
        // zero field against constant speed 1
        assert_abs_diff_eq!(velocity_error(std::slice::from_ref(&d), &[shifted]).unwrap(), 1.0);

        let r = fake_rollout(path(&[&[0.0], &[1.0], &[4.0]]), DMatrix::zeros(3, 1));
        assert_abs_diff_eq!(trajectory_error(std::slice::from_ref(&d), &[r]).unwrap(), 2.0 / 3.0, epsilon = 1e-15);

        let d2 = demo_1d(&[0.0, 0.0], &[1.0, 1.0]);
        let r2 = fake_rollout(DMatrix::zeros(2, 1), path(&[&[0.0], &[2.0]]));
        assert_abs_diff_eq!(velocity_error(&[d2], &[r2]).unwrap(), 1.0);

        let short = fake_rollout(DMatrix::zeros(2, 1), DMatrix::zeros(2, 1));
        assert!(trajectory_error(&[d], &[short]).is_err());
    }

    /// Minimum cost over every monotone warping path, by recursion.
    fn dtw_brute(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        fn go(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize, j: usize) -> f64 {
            let c = (a.row(i) - b.row(j)).norm();
            let (la, lb) = (a.nrows() - 1, b.nrows() - 1);
            if i == la && j == lb {
                return c;
            }
            let mut best = f64::INFINITY;
            if i < la {
                best = best.min(go(a, b, i + 1, j));
            }
            if j < lb {
                best = best.min(go(a, b, i, j + 1));
            }
            if i < la && j < lb {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            c + best
        }
        go(a, b, 0, 0)
    }

    #[test]
    fn dtw_examples() {
        let a = path(&[&[0.0], &[1.0], &[2.0]]);
        assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(dtw_distance(&path(&[&[0.0]]), &path(&[&[3.0]])).unwrap(), 3.0);
        let b = path(&[&[0.0], &[2.0]]);
        assert_abs_diff_eq!(dtw_distance(&a, &b).unwrap(), dtw_brute(&a, &b));
        assert_abs_diff_eq!(dtw_distance(&a, &b).unwrap(), 1.0);
        assert!(dtw_distance(&DMatrix::zeros(0, 1), &b).is_err());
    }

    fn arb_path() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..=6, 1usize..=2).prop_flat_map(|(len, n)| {
            prop::collection::vec(-5.0f64..5.0, len * n)
                .prop_map(move |v| DMatrix::from_row_slice(len, n, &v))
        })
    }

    proptest! {
        #[test]
        fn dtw_matches_enumeration(a in arb_path(), b in arb_path()) {
            prop_assume!(a.ncols() == b.ncols());
            let dp = dtw_distance(&a, &b).unwrap();
            prop_assert!((dp - dtw_brute(&a, &b)).abs() <= 1e-9);
            prop_assert!(dp >= 0.0);
            prop_assert!((dp - dtw_distance(&b, &a).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn errors_reorder_and_scale(shift in -3.0f64..3.0, scale in 0.1f64..10.0) {
            let d1 = demo_1d(&[0.0, 1.0, 2.0], &[1.0, 2.0, 0.5]);
            let d2 = demo_1d(&[5.0, 4.0], &[-1.0, 0.0]);
            let r1 = fake_rollout(d1.positions.add_scalar(shift), DMatrix::zeros(3, 1));
            let r2 = fake_rollout(path(&[&[5.5], &[3.0]]), path(&[&[1.0], &[1.0]]));
            let e = trajectory_error(&[d1.clone(), d2.clone()], &[r1.clone(), r2.clone()]).unwrap();
            let swapped = trajectory_error(&[d2.clone(), d1.clone()], &[r2.clone(), r1.clone()]).unwrap();
            prop_assert!((e - swapped).abs() <= 1e-12);
            let v = velocity_error(&[d1.clone(), d2.clone()], &[r1.clone(), r2.clone()]).unwrap();

            let sc = |d: &Demonstration| Demonstration::new(
                d.times.clone(), &d.positions * scale, d.velocities.as_ref().map(|v| v * scale)).unwrap();
            let sr = |r: &RolloutResult| fake_rollout(&r.states * scale, &r.velocities * scale);
            let es = trajectory_error(&[sc(&d1), sc(&d2)], &[sr(&r1), sr(&r2)]).unwrap();
            let vs = velocity_error(&[sc(&d1), sc(&d2)], &[sr(&r1), sr(&r2)]).unwrap();
            prop_assert!((es - scale * e).abs() <= 1e-9 * (1.0 + es));
            prop_assert!((vs - scale * v).abs() <= 1e-9 * (1.0 + vs));
        }
    }

    fn decay_set() -> DemoSet {
        let starts = vec![vec![40.0, 30.0], vec![-35.0, 20.0], vec![10.0, -45.0]];
        let demos = exponential_decay_demos(&starts, 6.0, 300).unwrap();
        DemoSet::from_translated(demos, DVector::zeros(2)).unwrap()
    }

    #[test]
    fn evaluate_exact_field() {
        let set = decay_set();
        let f = LinearField::new(-DMatrix::identity(2, 2)).unwrap();
        let r = evaluate(&f, &set, &set, &IntegratorSettings::default()).unwrap();
        assert!(r.training_trajectory_error <= 0.05, "{r:?}");
        assert!(r.training_velocity_error <= 0.05, "{r:?}");
        assert_eq!(r.number_reached_goal, 6);
        assert_eq!(r.number_of_demos, 6);
        // |x0| e^{-6}
        let mean_start: f64 = set.demos.iter().map(|d| d.start().norm()).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(r.distance_to_goal, mean_start * (-6f64).exp(), epsilon = 1e-3);
        let d = r.duration_to_goal.unwrap();
        let expect: f64 = set.demos.iter().map(|d| d.start().norm().ln()).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(d, expect, epsilon = 2e-2);
    }

    #[test]
    fn evaluate_zero_field() {
        let set = decay_set();
        let r = evaluate(&LinearField::zero(2), &set, &set, &IntegratorSettings::default()).unwrap();
        let mean_start: f64 = set.demos.iter().map(|d| d.start().norm()).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(r.distance_to_goal, mean_start, epsilon = 1e-12);
        assert_eq!(r.number_reached_goal, 0);
        assert_eq!(r.duration_to_goal, None);
        let json = serde_json::to_value(&r).unwrap();
        for key in [
            "training_trajectory_error",
            "training_velocity_error",
            "test_trajectory_error",
            "test_velocity_error",
            "distance_to_goal",
            "duration_to_goal",
            "number_reached_goal",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn grid_starts_cover_inflated_box() {
        let set = decay_set();
        let g = grid_starts(&set, 16, None).unwrap();
        assert_eq!(g.len(), 16);
        let bb = set.bounding_box();
        let pad = 0.1 * (bb[0].1 - bb[0].0);
        assert_abs_diff_eq!(g[0][0], bb[0].0 - pad, epsilon = 1e-12);
        assert_abs_diff_eq!(g[3][0], bb[0].1 + pad, epsilon = 1e-12);
        assert_eq!(g[1][1], g[0][1]);
        assert!(grid_starts(&set, 15, None).is_err());
        let j1 = grid_starts(&set, 16, Some(4)).unwrap();
        assert_eq!(j1, grid_starts(&set, 16, Some(4)).unwrap());
        assert_ne!(j1, g);
    }

    #[test]
    fn grid_metrics_for_decay_and_zero_fields() {
        let set = decay_set();
        let s = IntegratorSettings::default();
        let f = LinearField::new(-DMatrix::identity(2, 2)).unwrap();
        let r = grid_evaluate(&f, &set, &s, 16, None).unwrap();
        assert_eq!(r.grid_fraction_reached, 1.0);
        assert!(r.grid_distance_to_goal <= 1.0 + 1e-6);
        assert!(r.grid_dtwd.is_finite() && r.grid_dtwd >= 0.0);

        let r = grid_evaluate(&LinearField::zero(2), &set, &s, 16, None).unwrap();
        assert_eq!(r.grid_fraction_reached, 0.0);
        let starts = grid_starts(&set, 16, None).unwrap();
        let mean_norm = starts.iter().map(|x| x.norm()).sum::<f64>() / 16.0;
        assert_abs_diff_eq!(r.grid_distance_to_goal, mean_norm, epsilon = 1e-12);
        assert_eq!(r.grid_duration, None);
    }
}
