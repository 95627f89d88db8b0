//! Boundaries of the minimal forward invariant set from the extremal fields.
//!
//! At each point the noise value that pushes the radius hardest outward
//! (upper field) or inward (lower field) is
//! `±(a cos θ, b sin θ) / m(θ)`, `m(θ) = √(a² cos²θ + b² sin²θ)`, giving
//!
//! ```text
//! dr/dθ = (λr − r³ ± ε m(θ)) / (1 ± (ε/r)(b² − a²) sin θ cos θ / m(θ))
//! ```
//!
//! Periodic orbits of these scalar equations are fixed points of the return
//! map over one revolution. The outer orbit always exists; the inner one is
//! born in a saddle-node, which is where the invariant disk turns into an
//! annulus.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::averaged::{self, AveragedError, AveragedPrediction};
use crate::model::{ModelParams, NoiseSample};
pub use crate::noise::Side;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtremalError {
    #[error("{side} extremal orbit collapsed at theta = {theta}, r = {r}")]
    Collapse { side: Side, theta: f64, r: f64 },
    #[error("{side} extremal orbit escaped to r = {r}")]
    Escape { side: Side, r: f64 },
    #[error("initial radius must be positive and finite, got {0}")]
    InvalidStart(f64),
    #[error("fixed-point search did not converge after {iterations} iterations; bracket [{lo}, {hi}]")]
    NoConvergence { iterations: usize, lo: f64, hi: f64 },
    #[error("invalid fold bracket [{lo}, {hi}]: {reason}")]
    InvalidBracket { lo: f64, hi: f64, reason: String },
    #[error("inner and outer boundary grids differ")]
    GridMismatch,
    #[error(transparent)]
    Averaged(#[from] AveragedError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremalConfig {
    /// RK4 steps per revolution.
    pub steps: usize,
    /// Radius at which an orbit is declared collapsed onto the origin.
    pub collapse_radius: f64,
    /// Angular rates below this are treated as a collapse as well.
    pub min_angular_rate: f64,
    /// Slack on the return-map displacement when deciding whether the inner
    /// orbit exists.
    pub existence_tol: f64,
    pub max_iterations: usize,
}

impl Default for ExtremalConfig {
    fn default() -> Self {
        Self {
            steps: 4096,
            collapse_radius: 1e-6,
            min_angular_rate: 0.05,
            existence_tol: 1e-12,
            max_iterations: 200,
        }
    }
}

const ESCAPE_RADIUS: f64 = 1e3;

/// `m(θ) = √(a² cos²θ + b² sin²θ)`.
pub fn extremal_amplitude(a: f64, b: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    (a * a * c * c + b * b * s * s).sqrt()
}

/// Noise value realising the extremal radial velocity at angle `theta`.
pub fn extremal_noise(side: Side, p: &ModelParams, theta: f64) -> NoiseSample {
    let (s, c) = theta.sin_cos();
    let m = extremal_amplitude(p.a, p.b, theta);
    let k = side.sign() / m;
    NoiseSample::new(k * p.a * c, k * p.b * s)
}

/// `dr/dθ` and its derivative in `r`, or `None` where the angular rate
/// degenerates.
#[inline]
fn field_with_derivative(
    side: Side,
    p: &ModelParams,
    r: f64,
    theta: f64,
    min_rate: f64,
) -> Option<(f64, f64)> {
    let (s, c) = theta.sin_cos();
    let m = (p.a * p.a * c * c + p.b * p.b * s * s).sqrt();
    let k = side.sign();
    let shear = k * p.epsilon * (p.b * p.b - p.a * p.a) * s * c / m;
    let omega = 1.0 + shear / r;
    if !(omega >= min_rate) {
        return None;
    }
    let radial = p.lambda * r - r * r * r + k * p.epsilon * m;
    let d_radial = p.lambda - 3.0 * r * r;
    let d_omega = -shear / (r * r);
    let f = radial / omega;
    let df = (d_radial * omega - radial * d_omega) / (omega * omega);
    Some((f, df))
}

/// Extremal field per unit angle, `dr/dθ`.
pub fn extremal_field(side: Side, p: &ModelParams, r: f64, theta: f64) -> Result<f64, ExtremalError> {
    let cfg = ExtremalConfig::default();
    if !(r > cfg.collapse_radius) {
        return Err(ExtremalError::Collapse { side, theta, r });
    }
    field_with_derivative(side, p, r, theta, cfg.min_angular_rate)
        .map(|(f, _)| f)
        .ok_or(ExtremalError::Collapse { side, theta, r })
}

/// Result of one revolution: the image radius and `dΠ/dr₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnValue {
    pub r: f64,
    pub derivative: f64,
}

/// Integrates the extremal field and its variational equation over one
/// revolution. When `profile` is given it receives `r` at every grid angle
/// `2πk/steps`, `k = 0..steps`.
fn revolve(
    side: Side,
    p: &ModelParams,
    r0: f64,
    cfg: &ExtremalConfig,
    mut profile: Option<&mut Vec<f64>>,
) -> Result<ReturnValue, ExtremalError> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(ExtremalError::InvalidStart(r0));
    }
    let h = TAU / cfg.steps as f64;
    let mut r = r0;
    let mut q = 1.0;
    let eval = |r: f64, theta: f64| -> Result<(f64, f64), ExtremalError> {
        if !(r > cfg.collapse_radius) {
            return Err(ExtremalError::Collapse { side, theta, r });
        }
        if r > ESCAPE_RADIUS {
            return Err(ExtremalError::Escape { side, r });
        }
        field_with_derivative(side, p, r, theta, cfg.min_angular_rate)
            .ok_or(ExtremalError::Collapse { side, theta, r })
    };
    for k in 0..cfg.steps {
        if let Some(out) = profile.as_deref_mut() {
            out.push(r);
        }
        let theta = k as f64 * h;
        let (f1, d1) = eval(r, theta)?;
        let (f2, d2) = eval(r + 0.5 * h * f1, theta + 0.5 * h)?;
        let (f3, d3) = eval(r + 0.5 * h * f2, theta + 0.5 * h)?;
        let (f4, d4) = eval(r + h * f3, theta + h)?;
        let q1 = d1 * q;
        let q2 = d2 * (q + 0.5 * h * q1);
        let q3 = d3 * (q + 0.5 * h * q2);
        let q4 = d4 * (q + h * q3);
        r += h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
        q += h / 6.0 * (q1 + 2.0 * q2 + 2.0 * q3 + q4);
    }
    if !(r > cfg.collapse_radius) {
        return Err(ExtremalError::Collapse { side, theta: TAU, r });
    }
    Ok(ReturnValue { r, derivative: q })
}

/// Return map on the section `θ = 0` with the default resolution.
pub fn return_map(side: Side, p: &ModelParams, r0: f64) -> Result<f64, ExtremalError> {
    return_map_with(side, p, r0, &ExtremalConfig::default()).map(|v| v.r)
}

pub fn return_map_with(
    side: Side,
    p: &ModelParams,
    r0: f64,
    cfg: &ExtremalConfig,
) -> Result<ReturnValue, ExtremalError> {
    revolve(side, p, r0, cfg, None)
}

/// A periodic orbit of an extremal field, sampled on the uniform θ-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOrbit {
    pub side: Side,
    /// `radii[k]` is the radius at `θ = 2πk / radii.len()`.
    pub radii: Vec<f64>,
    /// `|Π(r₀) − r₀|` at the returned fixed point.
    pub residual: f64,
}

impl BoundaryOrbit {
    /// Radius on the section `θ = 0`.
    pub fn section_radius(&self) -> f64 {
        self.radii[0]
    }

    /// Periodic linear interpolation of the profile.
    pub fn radius_at(&self, theta: f64) -> f64 {
        interpolate_periodic(&self.radii, theta)
    }

    pub fn min_radius(&self) -> f64 {
        self.radii.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn theta(&self, k: usize) -> f64 {
        TAU * k as f64 / self.radii.len() as f64
    }
}

pub(crate) fn interpolate_periodic(values: &[f64], theta: f64) -> f64 {
    let n = values.len();
    let x = theta.rem_euclid(TAU) / TAU * n as f64;
    let i = (x.floor() as usize).min(n - 1);
    let frac = x - i as f64;
    let j = (i + 1) % n;
    values[i] * (1.0 - frac) + values[j] * frac
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrbitSearch {
    Found(BoundaryOrbit),
    /// The field has no periodic orbit above the collapse radius;
    /// `max_displacement` is the largest `Π(r) − r` seen (negative).
    FoldAbsent { max_displacement: f64 },
}

impl OrbitSearch {
    pub fn orbit(&self) -> Option<&BoundaryOrbit> {
        match self {
            OrbitSearch::Found(o) => Some(o),
            OrbitSearch::FoldAbsent { .. } => None,
        }
    }

    pub fn into_orbit(self) -> Option<BoundaryOrbit> {
        match self {
            OrbitSearch::Found(o) => Some(o),
            OrbitSearch::FoldAbsent { .. } => None,
        }
    }
}

/// Return-map displacement `Π(r) − r`; a collapsed orbit counts as `Π = 0`.
fn displacement(side: Side, p: &ModelParams, r: f64, cfg: &ExtremalConfig) -> Result<(f64, f64), ExtremalError> {
    match revolve(side, p, r, cfg, None) {
        Ok(v) => Ok((v.r - r, v.derivative - 1.0)),
        Err(ExtremalError::Collapse { .. }) => Ok((-r, -1.0)),
        Err(e) => Err(e),
    }
}

/// Safeguarded Newton for the attracting fixed point in `[lo, hi]`, where
/// `Π(lo) > lo` and `Π(hi) < hi`.
fn attracting_fixed_point(
    side: Side,
    p: &ModelParams,
    mut lo: f64,
    mut hi: f64,
    seed: f64,
    cfg: &ExtremalConfig,
) -> Result<f64, ExtremalError> {
    let mut x = if seed > lo && seed < hi { seed } else { 0.5 * (lo + hi) };
    for _ in 0..cfg.max_iterations {
        let (f, df) = displacement(side, p, x, cfg)?;
        if f.abs() < 1e-14 {
            return Ok(x);
        }
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-15 * hi.max(1.0) {
            return Ok(x);
        }
        let newton = x - f / df;
        let next = if df < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        // Newton stalls once the step is below round-off
        if (next - x).abs() < 1e-16 * x {
            return Ok(x);
        }
        x = next;
    }
    Err(ExtremalError::NoConvergence {
        iterations: cfg.max_iterations,
        lo,
        hi,
    })
}

/// Largest value of `Π(r) − r` on `[lo, hi]`: coarse scan, then golden
/// section around the best sample.
fn max_displacement(
    side: Side,
    p: &ModelParams,
    lo: f64,
    hi: f64,
    cfg: &ExtremalConfig,
) -> Result<(f64, f64), ExtremalError> {
    const SCAN: usize = 64;
    let h = (hi - lo) / SCAN as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    let mut best_i = 0;
    for i in 0..=SCAN {
        let r = lo + i as f64 * h;
        let (f, _) = displacement(side, p, r, cfg)?;
        if f > best.1 {
            best = (r, f);
            best_i = i;
        }
    }
    let mut a = lo + best_i.saturating_sub(1) as f64 * h;
    let mut b = (lo + (best_i + 1) as f64 * h).min(hi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = displacement(side, p, x1, cfg)?.0;
    let mut f2 = displacement(side, p, x2, cfg)?.0;
    for _ in 0..80 {
        if b - a < 1e-12 {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = displacement(side, p, x2, cfg)?.0;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = displacement(side, p, x1, cfg)?.0;
        }
    }
    for (x, f) in [(x1, f1), (x2, f2)] {
        if f > best.1 {
            best = (x, f);
        }
    }
    Ok(best)
}

fn build_orbit(side: Side, p: &ModelParams, r0: f64, cfg: &ExtremalConfig) -> Result<BoundaryOrbit, ExtremalError> {
    let mut radii = Vec::with_capacity(cfg.steps);
    let v = revolve(side, p, r0, cfg, Some(&mut radii))?;
    Ok(BoundaryOrbit {
        side,
        radii,
        residual: (v.r - r0).abs(),
    })
}

/// Upper end of a bracket on which the displacement is negative.
fn outer_bracket(side: Side, p: &ModelParams, start: f64, cfg: &ExtremalConfig) -> Result<f64, ExtremalError> {
    let mut hi = start;
    for _ in 0..12 {
        if displacement(side, p, hi, cfg)?.0 < 0.0 {
            return Ok(hi);
        }
        hi *= 1.5;
    }
    Err(ExtremalError::Escape { side, r: hi })
}

pub fn find_orbit(side: Side, p: &ModelParams) -> Result<OrbitSearch, ExtremalError> {
    find_orbit_with(side, p, &ExtremalConfig::default())
}

/// Attracting periodic orbit of one extremal field, seeded at the averaged
/// prediction.
pub fn find_orbit_with(side: Side, p: &ModelParams, cfg: &ExtremalConfig) -> Result<OrbitSearch, ExtremalError> {
    if p.epsilon == 0.0 {
        // both fields are the noise-free radial equation
        return if p.lambda > 0.0 {
            let r = p.lambda.sqrt();
            Ok(OrbitSearch::Found(build_orbit(side, p, r, cfg)?))
        } else {
            Ok(OrbitSearch::FoldAbsent {
                max_displacement: 0.0,
            })
        };
    }
    let pred = AveragedPrediction::for_params(p)?;
    let hi = outer_bracket(side, p, 1.5 * pred.rho_plus + 0.1, cfg)?;
    match side {
        Side::Upper => {
            let seed = pred.rho_plus;
            let mut lo = 0.5 * seed;
            while displacement(side, p, lo, cfg)?.0 <= 0.0 {
                lo *= 0.5;
                if lo < 1e-4 {
                    return Err(ExtremalError::InvalidBracket {
                        lo,
                        hi,
                        reason: "upper field has no outward displacement".into(),
                    });
                }
            }
            let r = attracting_fixed_point(side, p, lo, hi, seed, cfg)?;
            Ok(OrbitSearch::Found(build_orbit(side, p, r, cfg)?))
        }
        Side::Lower => {
            if let Some(seed) = pred.rho_minus {
                if displacement(side, p, seed, cfg)?.0 > cfg.existence_tol {
                    let r = attracting_fixed_point(side, p, seed, hi, seed, cfg)?;
                    return Ok(OrbitSearch::Found(build_orbit(side, p, r, cfg)?));
                }
            }
            let lo = (10.0 * cfg.collapse_radius).max(1e-3);
            let (r_max, f_max) = max_displacement(side, p, lo, hi, cfg)?;
            if f_max < -cfg.existence_tol {
                return Ok(OrbitSearch::FoldAbsent {
                    max_displacement: f_max,
                });
            }
            let r = if f_max <= cfg.existence_tol {
                // tangency: the saddle and the node coincide
                r_max
            } else {
                attracting_fixed_point(side, p, r_max, hi, r_max, cfg)?
            };
            Ok(OrbitSearch::Found(build_orbit(side, p, r, cfg)?))
        }
    }
}

fn inner_orbit_exists(p: &ModelParams, cfg: &ExtremalConfig) -> Result<bool, ExtremalError> {
    Ok(find_orbit_with(Side::Lower, p, cfg)?.orbit().is_some())
}

/// Bisects on existence of the inner orbit; `lo` must have none, `hi` one.
pub fn detect_fold(base: &ModelParams, lo: f64, hi: f64, tol: f64) -> Result<f64, ExtremalError> {
    detect_fold_with(base, lo, hi, tol, &ExtremalConfig::default())
}

pub fn detect_fold_with(
    base: &ModelParams,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    cfg: &ExtremalConfig,
) -> Result<f64, ExtremalError> {
    let invalid = |lo: f64, hi: f64, reason: &str| ExtremalError::InvalidBracket {
        lo,
        hi,
        reason: reason.into(),
    };
    if !(lo < hi) || !(tol > 0.0) {
        return Err(invalid(lo, hi, "need lo < hi and tol > 0"));
    }
    if inner_orbit_exists(&base.with_lambda(lo), cfg)? {
        return Err(invalid(lo, hi, "inner orbit already exists at lo"));
    }
    if !inner_orbit_exists(&base.with_lambda(hi), cfg)? {
        return Err(invalid(lo, hi, "no inner orbit at hi"));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if inner_orbit_exists(&base.with_lambda(mid), cfg)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Annulus,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Disk => "disk",
            Shape::Annulus => "annulus",
        })
    }
}

/// Discontinuous change of a minimal forward invariant set in the Hausdorff
/// metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BifurcationType {
    B2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfiDescription {
    pub shape: Shape,
    pub outer: BoundaryOrbit,
    pub inner: Option<BoundaryOrbit>,
    pub lambda: f64,
    pub params: ModelParams,
    /// Set on the first annulus that follows a disk in a λ-sweep.
    pub bifurcation_type: Option<BifurcationType>,
}

impl MfiDescription {
    /// Inner boundary radius at `theta`, zero for a disk.
    pub fn inner_radius_at(&self, theta: f64) -> f64 {
        self.inner.as_ref().map_or(0.0, |o| o.radius_at(theta))
    }

    pub fn outer_radius_at(&self, theta: f64) -> f64 {
        self.outer.radius_at(theta)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let r = x.hypot(y);
        let theta = y.atan2(x);
        r <= self.outer_radius_at(theta) && r >= self.inner_radius_at(theta)
    }
}

pub fn classify_mfi(p: &ModelParams) -> Result<MfiDescription, ExtremalError> {
    classify_mfi_with(p, &ExtremalConfig::default())
}

pub fn classify_mfi_with(p: &ModelParams, cfg: &ExtremalConfig) -> Result<MfiDescription, ExtremalError> {
    let outer = find_orbit_with(Side::Upper, p, cfg)?
        .into_orbit()
        .ok_or(ExtremalError::InvalidBracket {
            lo: 0.0,
            hi: 0.0,
            reason: "no outer orbit".into(),
        })?;
    let inner = if p.epsilon == 0.0 {
        None
    } else {
        find_orbit_with(Side::Lower, p, cfg)?.into_orbit()
    };
    if let Some(inner) = &inner {
        if inner.radii.len() != outer.radii.len() {
            return Err(ExtremalError::GridMismatch);
        }
    }
    Ok(MfiDescription {
        shape: if inner.is_some() { Shape::Annulus } else { Shape::Disk },
        outer,
        inner,
        lambda: p.lambda,
        params: *p,
        bifurcation_type: None,
    })
}

/// Classifies every `λ` in `lambdas` (in parallel, results in grid order)
/// and marks the disk-to-annulus transition.
pub fn classify_sweep(base: &ModelParams, lambdas: &[f64]) -> Result<Vec<MfiDescription>, ExtremalError> {
    let mut out = lambdas
        .par_iter()
        .map(|&l| classify_mfi(&base.with_lambda(l)))
        .collect::<Result<Vec<_>, _>>()?;
    for i in 1..out.len() {
        if out[i - 1].shape == Shape::Disk && out[i].shape == Shape::Annulus {
            out[i].bifurcation_type = Some(BifurcationType::B2);
        }
    }
    Ok(out)
}

/// Writes `lambda,shape,rho_minus,rho_plus,residual_inner,residual_outer`,
/// radii taken on the section `θ = 0`.
pub fn write_sweep_csv<W: Write>(rows: &[MfiDescription], mut w: W) -> io::Result<()> {
    writeln!(w, "lambda,shape,rho_minus,rho_plus,residual_inner,residual_outer")?;
    for d in rows {
        let (rm, ri) = match &d.inner {
            Some(o) => (o.section_radius().to_string(), o.residual.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            d.lambda,
            d.shape,
            rm,
            d.outer.section_radius(),
            ri,
            d.outer.residual
        )?;
    }
    Ok(())
}

/// Sample resolution used by [`hausdorff_distance`].
const HAUSDORFF_ANGLES: usize = 720;
const HAUSDORFF_LAYERS: usize = 48;

/// Hausdorff distance between the closures of two invariant sets.
///
/// Each region `{r_in(θ) ≤ r ≤ r_out(θ)}` is sampled on a polar grid that
/// includes both boundaries (and the origin for a disk). Distances to the
/// other region are zero inside it and otherwise taken to its sampled
/// boundary curves.
pub fn hausdorff_distance(a: &MfiDescription, b: &MfiDescription) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

fn boundary_points(d: &MfiDescription) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(2 * HAUSDORFF_ANGLES);
    for i in 0..HAUSDORFF_ANGLES {
        let theta = TAU * i as f64 / HAUSDORFF_ANGLES as f64;
        let (s, c) = theta.sin_cos();
        let ro = d.outer_radius_at(theta);
        pts.push((ro * c, ro * s));
        if d.inner.is_some() {
            let ri = d.inner_radius_at(theta);
            pts.push((ri * c, ri * s));
        }
    }
    pts
}

fn directed_hausdorff(from: &MfiDescription, to: &MfiDescription) -> f64 {
    let targets = boundary_points(to);
    let dist_to = |x: f64, y: f64| -> f64 {
        if to.contains(x, y) {
            return 0.0;
        }
        targets
            .iter()
            .map(|&(tx, ty)| (x - tx).hypot(y - ty))
            .fold(f64::INFINITY, f64::min)
    };
    let mut worst: f64 = 0.0;
    for i in 0..HAUSDORFF_ANGLES {
        let theta = TAU * i as f64 / HAUSDORFF_ANGLES as f64;
        let (s, c) = theta.sin_cos();
        let r_in = from.inner_radius_at(theta);
        let r_out = from.outer_radius_at(theta);
        for j in 0..=HAUSDORFF_LAYERS {
            let r = r_in + (r_out - r_in) * j as f64 / HAUSDORFF_LAYERS as f64;
            worst = worst.max(dist_to(r * c, r * s));
        }
    }
    worst
}

/// Averaged-theory circle radius for comparison with an orbit profile.
pub fn averaged_radius(side: Side, p: &ModelParams) -> Result<Option<f64>, ExtremalError> {
    let c = averaged::effective_amplitude(p)?;
    let radii = averaged::mfi_radii(p.lambda, c)?;
    Ok(match side {
        Side::Upper => Some(radii.rho_plus),
        Side::Lower => radii.rho_minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaged::{bifurcation_point, mfi_radii};

    fn sym(lambda: f64, epsilon: f64) -> ModelParams {
        ModelParams::symmetric(lambda, epsilon, 1.0).unwrap()
    }

    #[test]
    fn symmetric_field_vanishes_on_outer_circle() {
        let p = sym(0.3, 0.1);
        let rho = mfi_radii(0.3, 0.1).unwrap().rho_plus;
        for k in 0..16 {
            let f = extremal_field(Side::Upper, &p, rho, k as f64 * 0.4).unwrap();
            assert!(f.abs() < 1e-15);
        }
    }

    #[test]
    fn extremal_amplitudes() {
        for k in 0..10 {
            assert!((extremal_amplitude(1.0, 1.0, k as f64) - 1.0).abs() < 1e-15);
        }
        let m = extremal_amplitude(1.0, 0.5, std::f64::consts::FRAC_PI_4);
        assert!((m - 0.625f64.sqrt()).abs() < 1e-15);
        let p = ModelParams::new(0.2, 0.1, 1.0, 1.0, 0.5).unwrap();
        let n = extremal_noise(Side::Upper, &p, 0.7);
        assert!(n.norm_sq() <= 1.0 + 1e-15);
        let alpha = p.a * n.u * 0.7f64.cos() + p.b * n.v * 0.7f64.sin();
        assert!((alpha - extremal_amplitude(1.0, 0.5, 0.7)).abs() < 1e-15);
    }

    #[test]
    fn circle_is_a_fixed_point() {
        let p = sym(0.3, 0.1);
        let rho = mfi_radii(0.3, 0.1).unwrap().rho_plus;
        assert!((return_map(Side::Upper, &p, rho).unwrap() - rho).abs() < 1e-10);
    }

    #[test]
    fn upper_field_attracts_from_below() {
        let p = sym(0.0, 0.1);
        assert!(return_map(Side::Upper, &p, 0.1).unwrap() > 0.1);
    }

    #[test]
    fn lower_field_collapses_below_fold() {
        let p = sym(0.3, 0.1);
        assert!(matches!(
            return_map(Side::Lower, &p, 0.2),
            Err(ExtremalError::Collapse { side: Side::Lower, .. })
        ));
        assert!(matches!(return_map(Side::Upper, &p, 0.0), Err(ExtremalError::InvalidStart(_))));
    }

    #[test]
    fn variational_derivative_matches_finite_difference() {
        let p = ModelParams::new(0.5, 0.1, 1.0, 1.0, 0.8).unwrap();
        let cfg = ExtremalConfig::default();
        for side in [Side::Upper, Side::Lower] {
            let r0 = 0.6;
            let v = return_map_with(side, &p, r0, &cfg).unwrap();
            let h = 1e-6;
            let fd = (return_map(side, &p, r0 + h).unwrap() - return_map(side, &p, r0 - h).unwrap()) / (2.0 * h);
            assert!((v.derivative - fd).abs() < 1e-7, "{side}: {} vs {fd}", v.derivative);
        }
    }

    #[test]
    fn lower_orbit_above_fold_is_the_cubic_root() {
        let p = sym(0.5, 0.1);
        let orbit = find_orbit(Side::Lower, &p).unwrap().into_orbit().unwrap();
        let rho = mfi_radii(0.5, 0.1).unwrap().rho_minus.unwrap();
        assert!(orbit.max_radius() - orbit.min_radius() < 1e-8);
        assert!((orbit.section_radius() - rho).abs() < 1e-8);
        assert!(orbit.residual < 1e-9);
    }

    #[test]
    fn lower_orbit_absent_below_fold() {
        let p = sym(0.3, 0.1);
        match find_orbit(Side::Lower, &p).unwrap() {
            OrbitSearch::FoldAbsent { max_displacement } => assert!(max_displacement < 0.0),
            other => panic!("expected fold-absent, got {other:?}"),
        }
    }

    #[test]
    fn upper_orbit_always_exists() {
        for lambda in [-0.5, -0.1, 0.0, 0.2, 0.45, 1.0] {
            for (a, b) in [(1.0, 1.0), (1.0, 0.8)] {
                let p = ModelParams::new(lambda, 0.1, 1.0, a, b).unwrap();
                let o = find_orbit(Side::Upper, &p).unwrap().into_orbit().unwrap();
                assert!(o.residual < 1e-9 && o.min_radius() > 0.0);
            }
        }
    }

    #[test]
    fn tangency_is_an_annulus_with_inner_radius_r_star() {
        let bif = bifurcation_point(0.1).unwrap();
        let d = classify_mfi(&sym(bif.lambda_bif, 0.1)).unwrap();
        assert_eq!(d.shape, Shape::Annulus);
        assert!((d.inner.unwrap().section_radius() - bif.r_star).abs() < 1e-6);
    }

    #[test]
    fn classify_disk_and_annulus() {
        let d = classify_mfi(&sym(0.2, 0.1)).unwrap();
        assert_eq!(d.shape, Shape::Disk);
        let rho = mfi_radii(0.2, 0.1).unwrap().rho_plus;
        assert!((d.outer.section_radius() - rho).abs() < 1e-8);
        let d = classify_mfi(&sym(0.45, 0.1)).unwrap();
        assert_eq!(d.shape, Shape::Annulus);
        let inner = d.inner.as_ref().unwrap();
        assert!(inner.radii.iter().zip(&d.outer.radii).all(|(i, o)| i < o));
    }

    #[test]
    fn sweep_marks_the_transition() {
        let p = sym(0.0, 0.1);
        let rows = classify_sweep(&p, &[0.3, 0.4, 0.41, 0.5]).unwrap();
        let marks: Vec<_> = rows.iter().map(|d| d.bifurcation_type).collect();
        assert_eq!(marks, vec![None, None, Some(BifurcationType::B2), None]);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda,shape,rho_minus,rho_plus,residual_inner,residual_outer\n0.3,disk,,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn fold_bracket_validation() {
        let p = sym(0.0, 0.1);
        assert!(matches!(detect_fold(&p, 0.45, 0.6, 1e-4), Err(ExtremalError::InvalidBracket { .. })));
        assert!(matches!(detect_fold(&p, 0.1, 0.3, 1e-4), Err(ExtremalError::InvalidBracket { .. })));
        assert!(matches!(detect_fold(&p, 0.5, 0.3, 1e-4), Err(ExtremalError::InvalidBracket { .. })));
    }

    #[test]
    fn hausdorff_of_concentric_sets() {
        let a = classify_mfi(&sym(0.2, 0.1)).unwrap();
        assert_eq!(hausdorff_distance(&a, &a), 0.0);
        let b = classify_mfi(&sym(0.5, 0.1)).unwrap();
        // concentric circles: max(inner radius of b, gap between outer radii)
        let expect = b.inner.as_ref().unwrap().section_radius().max(
            (a.outer.section_radius() - b.outer.section_radius()).abs(),
        );
        assert!((hausdorff_distance(&a, &b) - expect).abs() < 1e-3);
    }

    #[test]
    fn resolution_doubling_is_stable() {
        let p = sym(0.45, 0.1);
        let coarse = ExtremalConfig::default();
        let fine = ExtremalConfig {
            steps: 2 * coarse.steps,
            ..coarse
        };
        for side in [Side::Upper, Side::Lower] {
            let a = find_orbit_with(side, &p, &coarse).unwrap().into_orbit().unwrap();
            let b = find_orbit_with(side, &p, &fine).unwrap().into_orbit().unwrap();
            assert!((a.section_radius() - b.section_radius()).abs() < 1e-10);
        }
    }
}
