//! The radially symmetric Hopf normal form driven by bounded additive noise.
//!
//! In cartesian coordinates
//!
//! ```text
//! ẋ = λx − y − x(x² + y²) + ε a u
//! ẏ = x + λy − y(x² + y²) + ε b v
//! ```
//!
//! with `(u, v)` in the closed unit disk. The noise image is the ellipse with
//! semi-axes `(ε a, ε b)`; the symmetric model is `a = b = 1`. In polar
//! coordinates
//!
//! ```text
//! ṙ = λr − r³ + ε α,        α = a u cos θ + b v sin θ
//! θ̇ = 1 + (ε / r) β,        β = −a u sin θ + b v cos θ
//! ```

use std::f64::consts::TAU;

use thiserror::Error;

use crate::roots;

/// Slack allowed on `u² + v² ≤ 1` before a sample is rejected.
pub const NOISE_BOUND_SLACK: f64 = 1e-9;

/// Default radius below which the polar form is refused.
pub const R_MIN_POLAR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParams(String),
    #[error("noise sample ({u}, {v}) lies outside the unit disk")]
    NoiseOutOfBounds { u: f64, v: f64 },
    #[error("polar coordinates are singular at r = {r} (cutoff {cutoff})")]
    PolarSingularity { r: f64, cutoff: f64 },
    #[error("equilibrium radius requires epsilon > 0, got {0}")]
    NoNoise(f64),
}

/// One instance of the random differential equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Bifurcation parameter.
    pub lambda: f64,
    /// Noise amplitude.
    pub epsilon: f64,
    /// Rapidity of the reflected Brownian noise.
    pub sigma: f64,
    /// Major semi-axis of the noise ellipse.
    pub a: f64,
    /// Minor semi-axis of the noise ellipse.
    pub b: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, epsilon: f64, sigma: f64, a: f64, b: f64) -> Result<Self, ModelError> {
        let p = Self {
            lambda,
            epsilon,
            sigma,
            a,
            b,
        };
        p.validate()?;
        Ok(p)
    }

    /// The radially symmetric model (`a = b = 1`).
    pub fn symmetric(lambda: f64, epsilon: f64, sigma: f64) -> Result<Self, ModelError> {
        Self::new(lambda, epsilon, sigma, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParams(msg));
        if !self.lambda.is_finite() {
            return bad(format!("lambda must be finite, got {}", self.lambda));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.b.is_finite() && self.b > 0.0 && self.a.is_finite() && self.a >= self.b) {
            return bad(format!(
                "noise axes must satisfy a >= b > 0, got a = {}, b = {}",
                self.a, self.b
            ));
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn is_symmetric(&self) -> bool {
        self.a == self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarState {
    pub x: f64,
    pub y: f64,
}

impl PlanarState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_polar(self) -> PolarState {
        PolarState {
            r: self.radius(),
            theta: self.y.atan2(self.x).rem_euclid(TAU),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarState {
    pub r: f64,
    /// Angle in `[0, 2π)`.
    pub theta: f64,
}

impl PolarState {
    pub fn new(r: f64, theta: f64) -> Self {
        let mut theta = theta.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        if theta >= TAU {
            theta = 0.0;
        }
        Self { r, theta }
    }

    pub fn to_planar(self) -> PlanarState {
        let (s, c) = self.theta.sin_cos();
        PlanarState {
            x: self.r * c,
            y: self.r * s,
        }
    }
}

/// A value of the bounded noise process, `u² + v² ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSample {
    pub u: f64,
    pub v: f64,
}

impl NoiseSample {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn norm_sq(&self) -> f64 {
        self.u * self.u + self.v * self.v
    }

    pub fn check_bound(&self) -> Result<(), ModelError> {
        if self.norm_sq() > 1.0 + NOISE_BOUND_SLACK || !self.norm_sq().is_finite() {
            return Err(ModelError::NoiseOutOfBounds {
                u: self.u,
                v: self.v,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Velocity {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarVelocity {
    pub dr: f64,
    pub dtheta: f64,
}

/// Cartesian vector field without the noise-bound check. Hot loops call
/// this after validating the noise path once.
#[inline]
pub fn cartesian_field(p: &ModelParams, s: PlanarState, n: NoiseSample) -> Velocity {
    let r2 = s.x * s.x + s.y * s.y;
    Velocity {
        dx: p.lambda * s.x - s.y - s.x * r2 + p.epsilon * p.a * n.u,
        dy: s.x + p.lambda * s.y - s.y * r2 + p.epsilon * p.b * n.v,
    }
}

pub fn vector_field_cartesian(
    p: &ModelParams,
    s: PlanarState,
    n: NoiseSample,
) -> Result<Velocity, ModelError> {
    n.check_bound()?;
    Ok(cartesian_field(p, s, n))
}

/// Radial and angular components `α`, `β` of the scaled noise at angle `theta`.
#[inline]
pub fn noise_projections(p: &ModelParams, theta: f64, n: NoiseSample) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    let au = p.a * n.u;
    let bv = p.b * n.v;
    (au * c + bv * s, -au * s + bv * c)
}

pub fn vector_field_polar(
    p: &ModelParams,
    s: PolarState,
    n: NoiseSample,
) -> Result<PolarVelocity, ModelError> {
    vector_field_polar_with_cutoff(p, s, n, R_MIN_POLAR)
}

pub fn vector_field_polar_with_cutoff(
    p: &ModelParams,
    s: PolarState,
    n: NoiseSample,
    cutoff: f64,
) -> Result<PolarVelocity, ModelError> {
    n.check_bound()?;
    if !(s.r > cutoff) {
        return Err(ModelError::PolarSingularity { r: s.r, cutoff });
    }
    let (alpha, beta) = noise_projections(p, s.theta, n);
    Ok(PolarVelocity {
        dr: p.lambda * s.r - s.r.powi(3) + p.epsilon * alpha,
        dtheta: 1.0 + p.epsilon / s.r * beta,
    })
}

/// Squared speed of the noise-free field at radius `r`, minus `ε²`.
///
/// A frozen noise value `w` makes `x` an equilibrium iff `f(x) = −ε w`; the
/// noise-free field has radial part `λr − r³` and tangential part `r`.
fn equilibrium_condition(lambda: f64, epsilon: f64, r: f64) -> f64 {
    let d = lambda - r * r;
    (d * d + 1.0) * r * r - epsilon * epsilon
}

/// Radius of the disk of frozen-noise equilibria: the smallest positive root
/// of `((λ − r²)² + 1) r² = ε²`.
///
/// Uses the unit-disk noise bound; the ellipse axes are ignored.
pub fn equilibrium_radius(p: &ModelParams) -> Result<f64, ModelError> {
    if !(p.epsilon > 0.0) {
        return Err(ModelError::NoNoise(p.epsilon));
    }
    let f = |r: f64| equilibrium_condition(p.lambda, p.epsilon, r);
    // f(0) = −ε² < 0 and f(ε) ≥ 0, so the scan always finds a crossing.
    let (lo, hi) = roots::first_crossing(f, 0.0, p.epsilon, 256).expect("sign change on [0, eps]");
    let r = roots::bisect(f, lo, hi, 1e-15);
    let df = |r: f64| {
        let d = p.lambda - r * r;
        2.0 * r * (d * d + 1.0) - 4.0 * r.powi(3) * d
    };
    Ok(roots::polish(f, df, r, lo, hi, 2))
}

/// Smallest positive root of `(1 − 2λ) r⁶ + (1 + λ²) r² − ε² = 0`, the
/// alternative form of the equilibrium polynomial. Coincides with
/// [`equilibrium_radius`] at `λ = 0`; kept for comparison only.
pub fn equilibrium_radius_alt(p: &ModelParams) -> Option<f64> {
    if !(p.epsilon > 0.0) {
        return None;
    }
    let l = p.lambda;
    let e2 = p.epsilon * p.epsilon;
    let f = |r: f64| (1.0 - 2.0 * l) * r.powi(6) + (1.0 + l * l) * r * r - e2;
    // (1 + λ²) r² alone reaches ε² at r = ε / √(1 + λ²) ≤ ε; scan a bit
    // further to cover any r⁶ contribution.
    let hi = 4.0 * p.epsilon.max(1.0);
    let (lo, hi) = roots::first_crossing(f, 0.0, hi, 4096)?;
    Some(roots::bisect(f, lo, hi, 1e-15))
}
