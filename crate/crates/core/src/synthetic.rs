//! Synthetic demonstration sets for tests, examples and benchmarks.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Demonstration;
use crate::error::{Error, Result};

/// Shape and sampling of the "S"-like handwriting motion.
///
/// The nominal path is a letter S made of two stacked elliptic arcs with
/// horizontal radius `width` and total height `height`. It starts at the
/// upper right tip, ends at the lower left tip (the origin) and is traversed
/// according to `profile`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SShapeParams {
    pub width: f64,
    pub height: f64,
    pub duration: f64,
    pub samples: usize,
    /// Relative spread of width, height and duration across demos.
    pub variation: f64,
    /// Standard deviation of the start offset, mm.
    pub start_jitter: f64,
    /// Standard deviation of additive position noise, mm.
    pub noise: f64,
    pub profile: SpeedProfile,
}

/// Timing of the motion along the nominal path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedProfile {
    /// Starts and ends at rest, like a hand-drawn stroke.
    MinimumJerk,
    /// Fastest at the start, slowing exponentially with the given rate.
    Decelerating(f64),
}

impl SpeedProfile {
    /// Path parameter `u(r)` and `du/dr` for normalised time `r ∈ [0, 1]`.
    fn warp(self, r: f64) -> (f64, f64) {
        match self {
            Self::MinimumJerk => (
                r * r * r * (10.0 - 15.0 * r + 6.0 * r * r),
                30.0 * r * r * (1.0 - r) * (1.0 - r),
            ),
            Self::Decelerating(a) => {
                let norm = 1.0 - (-a).exp();
                ((1.0 - (-a * r).exp()) / norm, a * (-a * r).exp() / norm)
            }
        }
    }
}

impl Default for SShapeParams {
    fn default() -> Self {
        Self {
            width: 12.0,
            height: 40.0,
            duration: 4.0,
            samples: 1000,
            variation: 0.05,
            start_jitter: 1.0,
            noise: 0.02,
            profile: SpeedProfile::Decelerating(3.0),
        }
    }
}

/// Where each arc of the letter starts and stops short of a full half turn.
const TIP: f64 = 20.0 * std::f64::consts::PI / 180.0;
const ARC: f64 = 1.5 * std::f64::consts::PI - TIP;

/// Point and derivative w.r.t. `u` of the S path, before translation.
fn s_path(u: f64, w: f64, h: f64) -> ([f64; 2], [f64; 2]) {
    let r = h / 4.0;
    let phi = u * 2.0 * ARC;
    let dphi = 2.0 * ARC;
    if phi <= ARC {
        let a = TIP + phi;
        ([w * a.cos(), 3.0 * r + r * a.sin()], [-w * a.sin() * dphi, r * a.cos() * dphi])
    } else {
        let b = FRAC_PI_2 - (phi - ARC);
        ([w * b.cos(), r + r * b.sin()], [w * b.sin() * dphi, -r * b.cos() * dphi])
    }
}

/// `count` noisy S-shaped demonstrations ending at the origin, with exact
/// velocities of the noise-free motion.
pub fn s_shape_demos(count: usize, seed: u64, p: &SShapeParams) -> Result<Vec<Demonstration>> {
    if p.samples < 2 || count == 0 {
        return Err(Error::InvalidArgument(
            "need at least one demo of two samples".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, p.noise.max(0.0))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let jitter = Normal::new(0.0, p.start_jitter.max(0.0))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    (0..count)
        .map(|_| {
            let mut spread = || 1.0 + p.variation * rng.random_range(-1.0..1.0);
            let (w, h, dur) = (p.width * spread(), p.height * spread(), p.duration * spread());
            let (ox, oy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
            let len = p.samples;
            let (end, _) = s_path(1.0, w, h);
            let mut times = Vec::with_capacity(len);
            let mut pos = DMatrix::zeros(len, 2);
            let mut vel = DMatrix::zeros(len, 2);
            for i in 0..len {
                let r = i as f64 / (len - 1) as f64;
                let (u, du) = p.profile.warp(r);
                let fade = 1.0 - u;
                times.push(r * dur);
                let ([px, py], [dx, dy]) = s_path(u, w, h);
                // start offset fades out so every demo ends at the origin
                pos[(i, 0)] = px - end[0] + ox * fade;
                pos[(i, 1)] = py - end[1] + oy * fade;
                let dudt = du / dur;
                vel[(i, 0)] = (dx - ox) * dudt;
                vel[(i, 1)] = (dy - oy) * dudt;
                if i + 1 < len {
                    pos[(i, 0)] += noise.sample(&mut rng);
                    pos[(i, 1)] += noise.sample(&mut rng);
                }
            }
            Demonstration::new(times, pos, Some(vel))
        })
        .collect()
}

/// Exact samples of `ẋ = -x` from each start, over `duration` seconds.
pub fn exponential_decay_demos(
    starts: &[Vec<f64>],
    duration: f64,
    samples: usize,
) -> Result<Vec<Demonstration>> {
    if samples < 2 || !(duration > 0.0) {
        return Err(Error::InvalidArgument("need samples >= 2 and duration > 0".into()));
    }
    starts
        .iter()
        .map(|x0| {
            let n = x0.len();
            let times: Vec<f64> = (0..samples)
                .map(|i| duration * i as f64 / (samples - 1) as f64)
                .collect();
            let pos = DMatrix::from_fn(samples, n, |i, k| x0[k] * (-times[i]).exp());
            let vel = -&pos;
            Demonstration::new(times, pos, Some(vel))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_shape_is_reproducible_and_ends_at_origin() {
        let p = SShapeParams::default();
        let a = s_shape_demos(7, 3, &p).unwrap();
        let b = s_shape_demos(7, 3, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s_shape_demos(7, 4, &p).unwrap());
        for d in &a {
            assert_eq!(d.len(), p.samples);
            let last = d.positions.row(d.len() - 1);
            assert!(last.norm() <= 1e-9);
            assert!(d.start().norm() > 30.0);
        }
    }

    #[test]
    fn s_shape_velocities_match_positions() {
        let p = SShapeParams {
            noise: 0.0,
            ..SShapeParams::default()
        };
        let d = &s_shape_demos(1, 0, &p).unwrap()[0];
        let v = d.velocities.as_ref().unwrap();
        for i in [100, 400, 800] {
            let dt = d.times[i + 1] - d.times[i - 1];
            for k in 0..2 {
                let fd = (d.positions[(i + 1, k)] - d.positions[(i - 1, k)]) / dt;
                assert!((fd - v[(i, k)]).abs() <= 1e-3 * (1.0 + v[(i, k)].abs()));
            }
        }
    }

    #[test]
    fn exponential_decay_is_exact() {
        let d = &exponential_decay_demos(&[vec![2.0, -1.0]], 3.0, 31).unwrap()[0];
        assert!((d.positions[(30, 0)] - 2.0 * (-3f64).exp()).abs() <= 1e-15);
        assert_eq!(d.velocities.as_ref().unwrap()[(0, 1)], 1.0);
    }
}
