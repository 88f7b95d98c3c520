//! Dormand–Prince 4(5) with dense output and a goal-ball event.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::VectorField;
use crate::error::{check_dim, Error, Result};

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Continuous extension: `y(t + θh) = y + h Σ_i k_i Σ_p P[i][p] θ^(p+1)`.
const P: [[f64; 4]; 7] = [
    [
        1.0,
        -8048581381.0 / 2820520608.0,
        8663915743.0 / 2820520608.0,
        -12715105075.0 / 11282082432.0,
    ],
    [0.0; 4],
    [
        0.0,
        131558114200.0 / 32700410799.0,
        -68118460800.0 / 10900136933.0,
        87487479700.0 / 32700410799.0,
    ],
    [
        0.0,
        -1754552775.0 / 470086768.0,
        14199869525.0 / 1410260304.0,
        -10690763975.0 / 1880347072.0,
    ],
    [
        0.0,
        127303824393.0 / 49829197408.0,
        -318862633887.0 / 49829197408.0,
        701980252875.0 / 199316789632.0,
    ],
    [
        0.0,
        -282668133.0 / 205662961.0,
        2019193451.0 / 616988883.0,
        -1453857185.0 / 822651844.0,
    ],
    [
        0.0,
        40617522.0 / 29380423.0,
        -110615467.0 / 29380423.0,
        69997945.0 / 29380423.0,
    ],
];

const EVENT_TIME_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub goal_radius: f64,
    pub horizon: f64,
    /// Stop on first entry into the goal ball.
    pub detect_goal: bool,
    /// Take uncontrolled steps of this size instead of adapting.
    pub fixed_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            max_step: f64::INFINITY,
            goal_radius: 1.0,
            horizon: 10.0,
            detect_goal: true,
            fixed_step: None,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rel_tol, self.abs_tol, self.max_step, self.goal_radius];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "tolerances, max_step and goal_radius must be positive".into(),
            ));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad horizon {}", self.horizon)));
        }
        if let Some(h) = self.fixed_step {
            if !(h > 0.0) {
                return Err(Error::InvalidArgument(format!("bad fixed step {h}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub times: Vec<f64>,
    /// `T × n`.
    pub states: DMatrix<f64>,
    /// `f` at each stored state.
    pub velocities: DMatrix<f64>,
    pub reached_goal: bool,
    pub time_to_goal: Option<f64>,
    pub n_field_evals: usize,
}

impl RolloutResult {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> DVector<f64> {
        self.states.row(self.states.nrows() - 1).transpose()
    }
}

/// Integrates from `x0` until the horizon or the goal event, storing every
/// accepted step.
pub fn rollout<F: VectorField + ?Sized>(
    f: &F,
    x0: &DVector<f64>,
    s: &IntegratorSettings,
) -> Result<RolloutResult> {
    integrate(f, x0, s, None)
}

/// Integrates over `[times[0], times.last()]`, reporting the state exactly at
/// each requested time via dense output. `times` is relative to the start
/// and must be non-decreasing; the horizon in `s` is ignored.
pub fn rollout_sampled<F: VectorField + ?Sized>(
    f: &F,
    x0: &DVector<f64>,
    times: &[f64],
    s: &IntegratorSettings,
) -> Result<RolloutResult> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("no sample times".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times[0] < 0.0 {
        return Err(Error::InvalidArgument(
            "sample times must be non-negative and non-decreasing".into(),
        ));
    }
    let s = IntegratorSettings {
        horizon: *times.last().unwrap(),
        ..*s
    };
    integrate(f, x0, &s, Some(times))
}

struct Step {
    k: [DVector<f64>; 7],
    h: f64,
}

impl Step {
    fn dense(&self, y0: &DVector<f64>, theta: f64) -> DVector<f64> {
        let mut y = y0.clone();
        let powers = [theta, theta * theta, theta.powi(3), theta.powi(4)];
        for (ki, pi) in self.k.iter().zip(P.iter()) {
            let w: f64 = pi.iter().zip(powers.iter()).map(|(a, b)| a * b).sum();
            if w != 0.0 {
                y.axpy(self.h * w, ki, 1.0);
            }
        }
        y
    }
}

struct Recorder<'a> {
    requested: Option<&'a [f64]>,
    next: usize,
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, x: DVector<f64>) {
        self.times.push(t);
        self.states.push(x);
    }

    /// Records requested samples in `(t0, t1]`, or the step end.
    fn on_step(&mut self, t0: f64, t1: f64, y0: &DVector<f64>, step: &Step, y1: &DVector<f64>) {
        match self.requested {
            None => self.push(t1, y1.clone()),
            Some(req) => {
                while self.next < req.len() && req[self.next] <= t1 {
                    let t = req[self.next];
                    let y = if t >= t1 {
                        y1.clone()
                    } else {
                        step.dense(y0, ((t - t0) / step.h).clamp(0.0, 1.0))
                    };
                    self.push(t, y);
                    self.next += 1;
                }
            }
        }
    }
}

fn weighted_rms(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, s: &IntegratorSettings) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = (0..err.len())
        .map(|i| {
            let sc = s.abs_tol + s.rel_tol * y0[i].abs().max(y1[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F: VectorField + ?Sized>(
    f: &F,
    x0: &DVector<f64>,
    f0: &DVector<f64>,
    s: &IntegratorSettings,
    evals: &mut usize,
) -> f64 {
    let scale = x0.map(|v| s.abs_tol + s.rel_tol * v.abs());
    let d0 = x0.component_div(&scale).norm() / (x0.len() as f64).sqrt();
    let d1 = f0.component_div(&scale).norm() / (x0.len() as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let x1 = x0 + f0 * h0;
    let f1 = f.eval(&x1);
    *evals += 1;
    let d2 = (f1 - f0).component_div(&scale).norm() / (x0.len() as f64).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(s.max_step)
}

fn integrate<F: VectorField + ?Sized>(
    f: &F,
    x0: &DVector<f64>,
    s: &IntegratorSettings,
    requested: Option<&[f64]>,
) -> Result<RolloutResult> {
    s.validate()?;
    check_dim(f.dim(), x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state is not finite".into()));
    }

    let mut rec = Recorder {
        requested,
        next: 0,
        times: Vec::new(),
        states: Vec::new(),
    };
    let horizon = s.horizon;
    let mut t = requested.map_or(0.0, |r| r[0]);
    let mut y = x0.clone();
    match requested {
        None => rec.push(0.0, y.clone()),
        Some(req) => {
            while rec.next < req.len() && req[rec.next] <= t {
                rec.push(req[rec.next], y.clone());
                rec.next += 1;
            }
        }
    }

    let mut evals = 0usize;
    let mut reached = false;
    let mut time_to_goal = None;
    if s.detect_goal && y.norm() <= s.goal_radius {
        reached = true;
        time_to_goal = Some(t);
    }

    let mut k0 = f.eval(&y);
    evals += 1;
    let mut h = match s.fixed_step {
        Some(h) => h,
        None => initial_step(f, &y, &k0, s, &mut evals),
    };
    let mut steps = 0usize;

    while !reached && t < horizon {
        steps += 1;
        if steps > s.max_steps {
            return Err(Error::Integration {
                t,
                last_state: y,
                message: format!("exceeded {} steps", s.max_steps),
            });
        }
        let remaining = horizon - t;
        let mut hs = h.min(remaining).min(s.max_step);
        // avoid a sliver of a final step
        if remaining - hs < 1e-12 * horizon.max(1.0) {
            hs = remaining;
        }
        if hs <= 1e-12 * t.abs().max(1.0) && s.fixed_step.is_none() {
            return Err(Error::Integration {
                t,
                last_state: y,
                message: "step size underflow".into(),
            });
        }

        let mut k: [DVector<f64>; 7] = std::array::from_fn(|_| DVector::zeros(0));
        k[0] = k0.clone();
        for i in 1..7 {
            let mut yi = y.clone();
            for (j, a) in A[i].iter().enumerate().take(i) {
                if *a != 0.0 {
                    yi.axpy(hs * a, &k[j], 1.0);
                }
            }
            k[i] = f.eval(&yi);
        }
        evals += 6;
        // the last stage is evaluated at the fifth-order solution
        let mut y1 = y.clone();
        for (j, a) in A[6].iter().enumerate() {
            if *a != 0.0 {
                y1.axpy(hs * a, &k[j], 1.0);
            }
        }

        if s.fixed_step.is_none() {
            let mut err = DVector::zeros(y.len());
            for (ki, e) in k.iter().zip(E.iter()) {
                if *e != 0.0 {
                    err.axpy(hs * e, ki, 1.0);
                }
            }
            let en = weighted_rms(&err, &y, &y1, s);
            if !en.is_finite() || y1.iter().any(|v| !v.is_finite()) {
                h = hs * 0.2;
                continue;
            }
            let factor = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            if en > 1.0 {
                h = hs * factor.min(1.0);
                continue;
            }
            h = hs * factor;
        } else if y1.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t,
                last_state: y,
                message: "state became non-finite".into(),
            });
        }

        let step = Step { k, h: hs };
        if s.detect_goal && y1.norm() <= s.goal_radius {
            // bisect on the dense output for the first crossing
            let (mut lo, mut hi) = (0.0, 1.0);
            while (hi - lo) * hs > EVENT_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                if step.dense(&y, mid).norm() <= s.goal_radius {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let t_event = t + hi * hs;
            let y_event = if hi >= 1.0 { y1.clone() } else { step.dense(&y, hi) };
            match rec.requested {
                Some(req) => {
                    while rec.next < req.len() && req[rec.next] <= t_event {
                        let tr = req[rec.next];
                        rec.push(tr, step.dense(&y, ((tr - t) / hs).clamp(0.0, 1.0)));
                        rec.next += 1;
                    }
                }
                None => rec.push(t_event, y_event),
            }
            reached = true;
            time_to_goal = Some(t_event);
            break;
        }

        let t1 = if hs == remaining { horizon } else { t + hs };
        rec.on_step(t, t1, &y, &step, &y1);
        t = t1;
        k0 = step.k[6].clone();
        y = y1;
    }

    let n = x0.len();
    let mut velocities = DMatrix::zeros(rec.states.len(), n);
    for (i, st) in rec.states.iter().enumerate() {
        velocities.set_row(i, &f.eval(st).transpose());
    }
    let states = DMatrix::from_fn(rec.states.len(), n, |i, k| rec.states[i][k]);
    Ok(RolloutResult {
        times: rec.times,
        states,
        velocities,
        reached_goal: reached,
        time_to_goal,
        n_field_evals: evals,
    })
}
