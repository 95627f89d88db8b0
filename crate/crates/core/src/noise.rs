//! Bounded noise realizations in the closed unit disk.
//!
//! The main generator is Brownian motion `du = σ dW₁, dv = σ dW₂` discretized
//! with Euler–Maruyama and kept in the disk by specular reflection. All
//! randomness comes from [`ChaCha8Rng`] seeded through `seed_from_u64`, so a
//! path is a pure function of `(kind, σ, dt, n_steps, seed)` on every
//! platform.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::NoiseSample;

pub type NoiseRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> NoiseRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("sigma must be finite and >= 0, got {0}")]
    InvalidSigma(f64),
    #[error("time step must be finite and > 0, got {0}")]
    InvalidStep(f64),
    #[error("a noise path needs at least one step")]
    EmptyPath,
    #[error("unknown noise kind `{0}` (expected reflected-brownian, frozen, extremal-upper or extremal-lower)")]
    UnknownKind(String),
    #[error("initial noise state ({u}, {v}) lies outside the unit disk")]
    StateOutOfDisk { u: f64, v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Upper,
    Lower,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Upper => 1.0,
            Side::Lower => -1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Upper => "upper",
            Side::Lower => "lower",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    ReflectedBrownian,
    /// A single value drawn uniformly from the disk and held for all time.
    Frozen,
    /// Extremal radial noise co-rotating with the unperturbed flow,
    /// `±(cos t, sin t)`.
    ExtremalRadial(Side),
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::ReflectedBrownian => f.write_str("reflected-brownian"),
            NoiseKind::Frozen => f.write_str("frozen"),
            NoiseKind::ExtremalRadial(side) => write!(f, "extremal-{side}"),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reflected-brownian" => Ok(NoiseKind::ReflectedBrownian),
            "frozen" => Ok(NoiseKind::Frozen),
            "extremal-upper" => Ok(NoiseKind::ExtremalRadial(Side::Upper)),
            "extremal-lower" => Ok(NoiseKind::ExtremalRadial(Side::Lower)),
            other => Err(NoiseError::UnknownKind(other.to_string())),
        }
    }
}

/// A discretized noise realization: `samples[k]` is the value at `t = k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub dt: f64,
    pub samples: Vec<NoiseSample>,
    pub seed: u64,
    pub kind: NoiseKind,
    pub sigma: f64,
}

impl NoisePath {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Drops the first `steps` samples, the time-shift `θ^t` of the realization.
    pub fn shifted(&self, steps: usize) -> NoisePath {
        NoisePath {
            samples: self.samples[steps.min(self.samples.len())..].to_vec(),
            ..self.clone()
        }
    }

    /// Writes `t,u,v`, one row per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,u,v")?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(w, "{},{},{}", k as f64 * self.dt, s.u, s.v)?;
        }
        Ok(())
    }
}

/// Outcome of folding one displacement back into the disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflection {
    pub end: NoiseSample,
    /// Total length of the broken path actually travelled.
    pub path_length: f64,
    pub bounces: usize,
}

const MAX_BOUNCES: usize = 10_000;

/// Moves `start` by `(du, dv)`, reflecting specularly off the unit circle.
///
/// Each time the segment leaves the disk the remaining displacement is
/// mirrored across the tangent line at the exit point.
pub fn reflect_in_disk(start: NoiseSample, du: f64, dv: f64) -> Reflection {
    let (mut x, mut y) = (start.u, start.v);
    let (mut dx, mut dy) = (du, dv);
    let mut path_length = 0.0;
    let mut bounces = 0;
    loop {
        let (ex, ey) = (x + dx, y + dy);
        let d2 = dx * dx + dy * dy;
        if ex * ex + ey * ey <= 1.0 || d2 == 0.0 || bounces == MAX_BOUNCES {
            path_length += d2.sqrt();
            x = ex;
            y = ey;
            break;
        }
        // exit parameter: larger root of |p + t d|² = 1
        let pd = x * dx + y * dy;
        let c = x * x + y * y - 1.0;
        let disc = (pd * pd - d2 * c).max(0.0);
        let t = ((-pd + disc.sqrt()) / d2).clamp(0.0, 1.0);
        let (mut qx, mut qy) = (x + t * dx, y + t * dy);
        let qn = qx.hypot(qy);
        qx /= qn;
        qy /= qn;
        path_length += t * d2.sqrt();
        // remaining displacement, mirrored across the tangent at q
        let (rx, ry) = ((1.0 - t) * dx, (1.0 - t) * dy);
        let rn = rx * qx + ry * qy;
        dx = rx - 2.0 * rn * qx;
        dy = ry - 2.0 * rn * qy;
        x = qx;
        y = qy;
        bounces += 1;
    }
    Reflection {
        end: clamp_to_disk(NoiseSample::new(x, y)),
        path_length,
        bounces,
    }
}

/// Pulls a point that rounding left marginally outside back onto the disk.
fn clamp_to_disk(mut s: NoiseSample) -> NoiseSample {
    let n2 = s.norm_sq();
    if n2 > 1.0 {
        let scale = 1.0 / n2.sqrt();
        s.u *= scale;
        s.v *= scale;
        while s.norm_sq() > 1.0 {
            s.u *= 1.0 - f64::EPSILON;
            s.v *= 1.0 - f64::EPSILON;
        }
    }
    s
}

fn check_step(sigma: f64, dt: f64) -> Result<(), NoiseError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(NoiseError::InvalidSigma(sigma));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(NoiseError::InvalidStep(dt));
    }
    Ok(())
}

/// One Euler–Maruyama step of reflected Brownian motion in the unit disk.
pub fn step_reflected_brownian<R: Rng + ?Sized>(
    state: NoiseSample,
    sigma: f64,
    dt: f64,
    rng: &mut R,
) -> Result<NoiseSample, NoiseError> {
    check_step(sigma, dt)?;
    if state.norm_sq() > 1.0 {
        return Err(NoiseError::StateOutOfDisk {
            u: state.u,
            v: state.v,
        });
    }
    Ok(brownian_increment(state, sigma * dt.sqrt(), rng))
}

#[inline]
fn brownian_increment<R: Rng + ?Sized>(state: NoiseSample, scale: f64, rng: &mut R) -> NoiseSample {
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    if scale == 0.0 {
        return state;
    }
    reflect_in_disk(state, scale * g1, scale * g2).end
}

/// Extremal radial noise for the symmetric model: `±(cos θ, sin θ)`.
pub fn extremal_radial_noise(side: Side, theta: f64) -> NoiseSample {
    let (s, c) = theta.sin_cos();
    let k = side.sign();
    NoiseSample::new(k * c, k * s)
}

/// Uniform draw from the closed unit disk by rejection.
pub fn uniform_in_disk<R: Rng + ?Sized>(rng: &mut R) -> NoiseSample {
    loop {
        let u: f64 = rng.random_range(-1.0..=1.0);
        let v: f64 = rng.random_range(-1.0..=1.0);
        if u * u + v * v <= 1.0 {
            return NoiseSample::new(u, v);
        }
    }
}

/// Streaming reflected Brownian motion; yields the current state and then
/// advances, so the first item is the initial value.
#[derive(Debug, Clone)]
pub struct ReflectedBrownian {
    state: NoiseSample,
    scale: f64,
    rng: NoiseRng,
}

impl ReflectedBrownian {
    pub fn new(initial: NoiseSample, sigma: f64, dt: f64, rng: NoiseRng) -> Result<Self, NoiseError> {
        check_step(sigma, dt)?;
        if initial.norm_sq() > 1.0 {
            return Err(NoiseError::StateOutOfDisk {
                u: initial.u,
                v: initial.v,
            });
        }
        Ok(Self {
            state: initial,
            scale: sigma * dt.sqrt(),
            rng,
        })
    }

    /// Initial value drawn uniformly from the disk with the same generator.
    pub fn from_seed(sigma: f64, dt: f64, seed: u64) -> Result<Self, NoiseError> {
        let mut rng = rng_from_seed(seed);
        let initial = uniform_in_disk(&mut rng);
        Self::new(initial, sigma, dt, rng)
    }

    pub fn state(&self) -> NoiseSample {
        self.state
    }
}

impl Iterator for ReflectedBrownian {
    type Item = NoiseSample;

    #[inline]
    fn next(&mut self) -> Option<NoiseSample> {
        let current = self.state;
        self.state = brownian_increment(current, self.scale, &mut self.rng);
        Some(current)
    }
}

pub fn make_path(
    kind: NoiseKind,
    sigma: f64,
    dt: f64,
    n_steps: usize,
    seed: u64,
) -> Result<NoisePath, NoiseError> {
    check_step(sigma, dt)?;
    if n_steps == 0 {
        return Err(NoiseError::EmptyPath);
    }
    let samples = match kind {
        NoiseKind::ReflectedBrownian => ReflectedBrownian::from_seed(sigma, dt, seed)?
            .take(n_steps)
            .collect(),
        NoiseKind::Frozen => {
            let w = uniform_in_disk(&mut rng_from_seed(seed));
            vec![w; n_steps]
        }
        NoiseKind::ExtremalRadial(side) => (0..n_steps)
            .map(|k| extremal_radial_noise(side, (k as f64 * dt) % TAU))
            .collect(),
    };
    Ok(NoisePath {
        dt,
        samples,
        seed,
        kind,
        sigma,
    })
}

/// A path holding one given value, for frozen-noise diagnostics.
pub fn constant_path(value: NoiseSample, dt: f64, n_steps: usize) -> Result<NoisePath, NoiseError> {
    check_step(0.0, dt)?;
    if n_steps == 0 {
        return Err(NoiseError::EmptyPath);
    }
    if value.norm_sq() > 1.0 {
        return Err(NoiseError::StateOutOfDisk {
            u: value.u,
            v: value.v,
        });
    }
    Ok(NoisePath {
        dt,
        samples: vec![value; n_steps],
        seed: 0,
        kind: NoiseKind::Frozen,
        sigma: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_keeps_state() {
        let mut rng = rng_from_seed(3);
        let mut s = NoiseSample::new(0.3, -0.4);
        for _ in 0..100 {
            s = step_reflected_brownian(s, 0.0, 1e-3, &mut rng).unwrap();
        }
        assert_eq!(s, NoiseSample::new(0.3, -0.4));
    }

    #[test]
    fn radial_overshoot_is_folded_inward() {
        let r = reflect_in_disk(NoiseSample::new(0.5, 0.0), 0.7, 0.0);
        assert!((r.end.u - 0.8).abs() < 1e-15 && r.end.v == 0.0);
        assert_eq!(r.bounces, 1);
        assert!((r.path_length - 0.7).abs() < 1e-15);
    }

    #[test]
    fn reflection_from_the_boundary() {
        // sitting on the circle and pushed tangentially
        let r = reflect_in_disk(NoiseSample::new(1.0, 0.0), 0.0, 0.1);
        assert!(r.end.norm_sq() <= 1.0);
        assert!((r.path_length - 0.1).abs() < 1e-12);
        // huge step bounces many times and still ends inside
        let r = reflect_in_disk(NoiseSample::new(0.1, 0.2), 37.0, -11.0);
        assert!(r.end.norm_sq() <= 1.0);
        assert!(r.bounces > 10);
        assert!((r.path_length - 37f64.hypot(11.0)).abs() < 1e-9);
    }

    #[test]
    fn invalid_arguments() {
        let mut rng = rng_from_seed(0);
        let s = NoiseSample::default();
        assert_eq!(
            step_reflected_brownian(s, -1.0, 1e-3, &mut rng),
            Err(NoiseError::InvalidSigma(-1.0))
        );
        assert_eq!(
            step_reflected_brownian(s, 1.0, 0.0, &mut rng),
            Err(NoiseError::InvalidStep(0.0))
        );
        assert_eq!(make_path(NoiseKind::Frozen, 1.0, 1e-3, 0, 1), Err(NoiseError::EmptyPath));
        assert!(matches!("pink".parse::<NoiseKind>(), Err(NoiseError::UnknownKind(_))));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [
            NoiseKind::ReflectedBrownian,
            NoiseKind::Frozen,
            NoiseKind::ExtremalRadial(Side::Upper),
            NoiseKind::ExtremalRadial(Side::Lower),
        ] {
            assert_eq!(kind.to_string().parse::<NoiseKind>().unwrap(), kind);
        }
    }

    #[test]
    fn extremal_noise_values() {
        assert_eq!(extremal_radial_noise(Side::Upper, 0.0), NoiseSample::new(1.0, 0.0));
        let l = extremal_radial_noise(Side::Lower, std::f64::consts::FRAC_PI_2);
        assert!(l.u.abs() < 1e-16 && l.v == -1.0);
        for k in 0..50 {
            let theta = k as f64 * 0.37;
            for side in [Side::Upper, Side::Lower] {
                let n = extremal_radial_noise(side, theta);
                let alpha = n.u * theta.cos() + n.v * theta.sin();
                let beta = -n.u * theta.sin() + n.v * theta.cos();
                assert!((alpha - side.sign()).abs() < 1e-15);
                assert!(beta.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn frozen_path_is_constant() {
        let path = make_path(NoiseKind::Frozen, 1.0, 1e-3, 100, 42).unwrap();
        assert!(path.samples.iter().all(|s| *s == path.samples[0]));
        assert!(path.samples[0].norm_sq() <= 1.0);
    }

    #[test]
    fn same_seed_same_path() {
        let a = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-3, 5000, 7).unwrap();
        let b = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-3, 5000, 7).unwrap();
        let c = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-3, 5000, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn slow_noise_barely_moves() {
        let sigma = 1e-5;
        let n = 100_000;
        let dt = 1e-3;
        let path = make_path(NoiseKind::ReflectedBrownian, sigma, dt, n, 11).unwrap();
        let first = path.samples[0];
        let last = path.samples[n - 1];
        let disp = (last.u - first.u).hypot(last.v - first.v);
        // E|ΔW| over T = 100 in 2D is σ √(πT/2) ≈ 1.25e−4
        let scale = sigma * (n as f64 * dt).sqrt();
        assert!(disp < 5.0 * scale, "displacement {disp} vs scale {scale}");
    }

    #[test]
    fn csv_dump_format() {
        let path = constant_path(NoiseSample::new(0.5, 0.25), 0.5, 2).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,u,v\n0,0.5,0.25\n0.5,0.5,0.25\n");
    }
}
