//! Random fixed points of the section return map and random cycles as
//! pullback limits of a graph transform.
//!
//! Trajectories are integrated on the angle clock: the flow is
//! reparameterized so that `θ` advances at unit rate, and the noise path is
//! read against that clock. One revolution then consumes exactly
//! `steps_per_rev` noise samples for every trajectory, the radius obeys a
//! scalar non-autonomous equation
//!
//! ```text
//! dr/dτ = (λr − r³ + ε α(θ, w)) / (1 + (ε/r) β(θ, w)),    dθ/dτ = 1
//! ```
//!
//! and ordering of radii along a ray is preserved. Inside the band
//! `[R−, R+]` the radial equation contracts, so all seeds driven by the
//! same realization collapse onto one trajectory.

use std::f64::consts::TAU;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::averaged::{self, AveragedError};
use crate::extremal::interpolate_periodic;
use crate::model::{ModelParams, NoiseSample, PlanarState};
use crate::noise::NoisePath;
use crate::roots;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CycleError {
    #[error("lambda = {lambda} is not above the bifurcation value {lambda_bif}; no invariant band")]
    BelowBifurcation { lambda: f64, lambda_bif: f64 },
    #[error("band [{r_minus}, {r_plus}] is not invariant under extremal noise")]
    BandNotInvariant { r_minus: f64, r_plus: f64 },
    #[error("seed radius {0} lies outside the band")]
    SeedOutsideBand(f64),
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("noise path covers {have} revolutions, {need} needed")]
    PathTooShort { have: usize, need: usize },
    #[error("seed spread {final_spread} still above tolerance after {revolutions} revolutions")]
    NoConvergence { final_spread: f64, revolutions: usize },
    #[error("graph left the band: r = {r} at revolution {revolution}")]
    LeftBand { r: f64, revolution: usize },
    #[error("angular rate degenerated at r = {r}")]
    AngularDegenerate { r: f64 },
    #[error("graph needs at least 2 grid points and a window of at least 2 revolutions")]
    InvalidGraphSpec,
    #[error(transparent)]
    Averaged(#[from] AveragedError),
}

/// Convergence tolerance for section radii.
pub const POINT_TOL: f64 = 1e-8;
/// Convergence tolerance for graphs, in the sup norm.
pub const GRAPH_TOL: f64 = 1e-6;
pub const DEFAULT_GRID_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub r_minus: f64,
    pub r_plus: f64,
}

impl Band {
    pub fn contains(&self, r: f64) -> bool {
        r >= self.r_minus && r <= self.r_plus
    }
}

/// An annulus `R− < r < R+` that the flow maps into itself for every noise
/// realization, containing the attracting random cycle.
pub fn band(p: &ModelParams) -> Result<Band, CycleError> {
    if p.epsilon == 0.0 {
        if !(p.lambda > 0.0) {
            return Err(CycleError::BelowBifurcation {
                lambda: p.lambda,
                lambda_bif: 0.0,
            });
        }
        let r = p.lambda.sqrt();
        return Ok(Band {
            r_minus: 0.5 * r,
            r_plus: 1.5 * r,
        });
    }
    let c = averaged::effective_amplitude(p)?;
    let bif = averaged::bifurcation_point(c)?;
    if !(p.lambda > bif.lambda_bif) {
        return Err(CycleError::BelowBifurcation {
            lambda: p.lambda,
            lambda_bif: bif.lambda_bif,
        });
    }
    let radii = averaged::mfi_radii(p.lambda, c)?;
    let rho_minus = radii.rho_minus.expect("inner radius above the bifurcation");
    // unstable root of r³ − λr + c, below the cubic's minimum √(λ/3)
    let h = |r: f64| r * r * r - p.lambda * r + c;
    let unstable = roots::bisect(h, 0.0, (p.lambda / 3.0).sqrt(), 1e-14);
    let r_minus = (0.5 * (rho_minus + bif.r_star)).max(unstable * (1.0 + 1e-6));
    let r_plus = 1.5 * radii.rho_plus;
    // worst-case radial noise is ε·a
    let push = p.epsilon * p.a;
    let inward_at_top = p.lambda * r_plus - r_plus.powi(3) + push;
    let outward_at_bottom = p.lambda * r_minus - r_minus.powi(3) - push;
    if !(inward_at_top < 0.0 && outward_at_bottom > 0.0) {
        return Err(CycleError::BandNotInvariant { r_minus, r_plus });
    }
    Ok(Band { r_minus, r_plus })
}

const MIN_ANGULAR_RATE: f64 = 0.05;

/// Angle-clock integrator with trigonometric tables shared by all
/// trajectories.
struct Revolver {
    params: ModelParams,
    steps_per_rev: usize,
    dtau: f64,
    /// `(cos, sin)` of `kΔτ` and `(k + ½)Δτ`, `k = 0..=steps_per_rev`.
    at_step: Vec<(f64, f64)>,
    at_half: Vec<(f64, f64)>,
}

impl Revolver {
    fn new(params: ModelParams, noise_dt: f64) -> Self {
        let steps_per_rev = steps_per_revolution(noise_dt);
        let dtau = TAU / steps_per_rev as f64;
        let at_step = (0..=steps_per_rev)
            .map(|k| {
                let (s, c) = (k as f64 * dtau).sin_cos();
                (c, s)
            })
            .collect();
        let at_half = (0..steps_per_rev)
            .map(|k| {
                let (s, c) = ((k as f64 + 0.5) * dtau).sin_cos();
                (c, s)
            })
            .collect();
        Self {
            params,
            steps_per_rev,
            dtau,
            at_step,
            at_half,
        }
    }

    fn revolutions_in(&self, path: &NoisePath) -> usize {
        path.len() / self.steps_per_rev
    }

    #[inline]
    fn rate(&self, r: f64, cos: f64, sin: f64, w: NoiseSample) -> Result<f64, CycleError> {
        let p = &self.params;
        let au = p.a * w.u;
        let bv = p.b * w.v;
        let alpha = au * cos + bv * sin;
        let beta = -au * sin + bv * cos;
        let g = 1.0 + p.epsilon / r * beta;
        if !(g >= MIN_ANGULAR_RATE) {
            return Err(CycleError::AngularDegenerate { r });
        }
        Ok((p.lambda * r - r * r * r + p.epsilon * alpha) / g)
    }

    /// Advances radius `r` at starting angle `phi` (given as cos/sin) over
    /// one revolution of noise samples.
    fn revolve(&self, mut r: f64, phi: (f64, f64), noise: &[NoiseSample]) -> Result<f64, CycleError> {
        debug_assert_eq!(noise.len(), self.steps_per_rev);
        let (cp, sp) = phi;
        let rotate = |(ct, st): (f64, f64)| (cp * ct - sp * st, sp * ct + cp * st);
        let h = self.dtau;
        for (k, &w) in noise.iter().enumerate() {
            let (c0, s0) = rotate(self.at_step[k]);
            let (ch, sh) = rotate(self.at_half[k]);
            let (c1, s1) = rotate(self.at_step[k + 1]);
            let k1 = self.rate(r, c0, s0, w)?;
            let k2 = self.rate(r + 0.5 * h * k1, ch, sh, w)?;
            let k3 = self.rate(r + 0.5 * h * k2, ch, sh, w)?;
            let k4 = self.rate(r + h * k3, c1, s1, w)?;
            r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        Ok(r)
    }

    fn revolution<'a>(&self, path: &'a NoisePath, index: usize) -> &'a [NoiseSample] {
        let n = self.steps_per_rev;
        &path.samples[index * n..(index + 1) * n]
    }
}

/// Section radius of the attracting random fixed point for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFixedPoint {
    /// Common limit of the seeds on the section `θ = 0`.
    pub radius: f64,
    /// Revolutions iterated until the seed spread fell below tolerance.
    pub revolutions: usize,
    /// Seed spread after each revolution.
    pub spreads: Vec<f64>,
    pub steps_per_rev: usize,
}

impl RandomFixedPoint {
    /// Least-squares slope of `ln(spread)` per revolution.
    pub fn log_contraction_rate(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .spreads
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > 0.0)
            .map(|(k, s)| ((k + 1) as f64, s.ln()))
            .collect();
        least_squares_slope(&pts)
    }
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Iterates the noise-driven return map on `θ = 0` from every seed under the
/// same realization until their spread is below `tol`.
pub fn pullback_fixed_point(
    p: &ModelParams,
    path: &NoisePath,
    seeds: &[f64],
    k_max: usize,
) -> Result<RandomFixedPoint, CycleError> {
    pullback_fixed_point_with_tol(p, path, seeds, k_max, POINT_TOL)
}

pub fn pullback_fixed_point_with_tol(
    p: &ModelParams,
    path: &NoisePath,
    seeds: &[f64],
    k_max: usize,
    tol: f64,
) -> Result<RandomFixedPoint, CycleError> {
    let band = band(p)?;
    if seeds.is_empty() {
        return Err(CycleError::NoSeeds);
    }
    if let Some(&s) = seeds.iter().find(|s| !band.contains(**s)) {
        return Err(CycleError::SeedOutsideBand(s));
    }
    let rev = Revolver::new(*p, path.dt);
    let available = rev.revolutions_in(path);
    let mut radii = seeds.to_vec();
    let mut spreads = Vec::new();
    for k in 0..k_max {
        if k >= available {
            return Err(CycleError::PathTooShort {
                have: available,
                need: k + 1,
            });
        }
        let noise = rev.revolution(path, k);
        for r in radii.iter_mut() {
            *r = rev.revolve(*r, (1.0, 0.0), noise)?;
        }
        let (lo, hi) = min_max(&radii);
        let spread = hi - lo;
        spreads.push(spread);
        if spread < tol {
            return Ok(RandomFixedPoint {
                radius: 0.5 * (lo + hi),
                revolutions: k + 1,
                spreads,
                steps_per_rev: rev.steps_per_rev,
            });
        }
    }
    Err(CycleError::NoConvergence {
        final_spread: spreads.last().copied().unwrap_or(f64::INFINITY),
        revolutions: k_max,
    })
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Image of section radius `r` under the return map driven by revolution
/// `revolution` of `path`.
pub fn section_return(
    p: &ModelParams,
    path: &NoisePath,
    r: f64,
    revolution: usize,
) -> Result<f64, CycleError> {
    let rev = Revolver::new(*p, path.dt);
    let have = rev.revolutions_in(path);
    if revolution >= have {
        return Err(CycleError::PathTooShort {
            have,
            need: revolution + 1,
        });
    }
    rev.revolve(r, (1.0, 0.0), rev.revolution(path, revolution))
}

/// Sample of the random cycle at pullback time 0 as a graph over `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCircleGraph {
    pub theta_grid: Vec<f64>,
    pub radii: Vec<f64>,
    /// Revolutions of the path used, `[start, end)`; time 0 is `end`.
    pub noise_window: (usize, usize),
    pub steps_per_rev: usize,
    /// Sup-norm difference to the graph pulled back over one revolution less.
    pub sup_change: f64,
    pub converged: bool,
}

impl RandomCircleGraph {
    pub fn radius_at(&self, theta: f64) -> f64 {
        interpolate_periodic(&self.radii, theta)
    }

    pub fn sup_distance(&self, other: &RandomCircleGraph) -> f64 {
        self.radii
            .iter()
            .zip(&other.radii)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `theta,r`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "theta,r")?;
        for (t, r) in self.theta_grid.iter().zip(&self.radii) {
            writeln!(w, "{t},{r}")?;
        }
        Ok(())
    }
}

/// Outer radius the graph transform starts from.
fn initial_graph_radius(p: &ModelParams) -> Result<f64, CycleError> {
    if p.epsilon == 0.0 {
        return Ok(p.lambda.max(0.0).sqrt());
    }
    let c = averaged::effective_amplitude(p)?;
    Ok(averaged::mfi_radii(p.lambda, c)?.rho_plus)
}

/// Flows one graph point from revolution `from` to `to`, checking the band
/// after every revolution.
fn flow_point(
    rev: &Revolver,
    band: &Band,
    path: &NoisePath,
    mut r: f64,
    phi: (f64, f64),
    from: usize,
    to: usize,
) -> Result<f64, CycleError> {
    for k in from..to {
        r = rev.revolve(r, phi, rev.revolution(path, k))?;
        if !band.contains(r) {
            return Err(CycleError::LeftBand { r, revolution: k });
        }
    }
    Ok(r)
}

/// Pulls the constant graph `r ≡ ρ+` back over the last `window_revs`
/// revolutions of `path` and flows it forward to time 0 (the end of the
/// path's last full revolution).
///
/// On the angle clock every grid point returns to its own angle after each
/// revolution, so no re-interpolation is needed between revolutions.
pub fn graph_transform_cycle(
    p: &ModelParams,
    path: &NoisePath,
    theta_grid_size: usize,
    window_revs: usize,
) -> Result<RandomCircleGraph, CycleError> {
    if theta_grid_size < 2 || window_revs < 2 {
        return Err(CycleError::InvalidGraphSpec);
    }
    let band = band(p)?;
    let rev = Revolver::new(*p, path.dt);
    let end = rev.revolutions_in(path);
    if end < window_revs {
        return Err(CycleError::PathTooShort {
            have: end,
            need: window_revs,
        });
    }
    let start = end - window_revs;
    let r0 = initial_graph_radius(p)?;
    let theta_grid: Vec<f64> = (0..theta_grid_size)
        .map(|j| TAU * j as f64 / theta_grid_size as f64)
        .collect();
    let pairs = theta_grid
        .par_iter()
        .map(|&theta| {
            let phi = (theta.cos(), theta.sin());
            let long = flow_point(&rev, &band, path, r0, phi, start, end)?;
            let short = flow_point(&rev, &band, path, r0, phi, start + 1, end)?;
            Ok((long, (long - short).abs()))
        })
        .collect::<Result<Vec<_>, CycleError>>()?;
    let sup_change = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(RandomCircleGraph {
        theta_grid,
        radii: pairs.into_iter().map(|p| p.0).collect(),
        noise_window: (start, end),
        steps_per_rev: rev.steps_per_rev,
        sup_change,
        converged: sup_change < GRAPH_TOL,
    })
}

/// Distance between a trajectory and the random cycle, once per revolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayRecord {
    /// `(revolution, radial distance to the cycle along the trajectory's ray)`.
    pub distances: Vec<(usize, f64)>,
    pub final_distance: f64,
    /// First revolution with distance below [`GRAPH_TOL`], if any.
    pub below_tol_at: Option<usize>,
    /// Distances never grow again after they first drop below 1e−3.
    pub monotone_after_transient: bool,
}

impl DecayRecord {
    /// Least-squares decay rate per unit angle, `−d ln(distance)/dθ`,
    /// over records with distance in `(lo, hi)`.
    pub fn decay_rate(&self, lo: f64, hi: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .distances
            .iter()
            .filter(|(_, d)| *d > lo && *d < hi)
            .map(|&(k, d)| (k as f64 * TAU, d.ln()))
            .collect();
        -least_squares_slope(&pts)
    }

    /// Writes `revolution,distance`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "revolution,distance")?;
        for (k, d) in &self.distances {
            writeln!(w, "{k},{d}")?;
        }
        Ok(())
    }
}

/// Starts `x0` at time 0 (after a pullback window of `window_revs`
/// revolutions that places the cycle point on the ray of `x0`), then
/// follows both to the end of the path.
pub fn attraction_check(
    p: &ModelParams,
    path: &NoisePath,
    x0: PlanarState,
    window_revs: usize,
) -> Result<DecayRecord, CycleError> {
    let band = band(p)?;
    let rev = Revolver::new(*p, path.dt);
    let total = rev.revolutions_in(path);
    if total <= window_revs {
        return Err(CycleError::PathTooShort {
            have: total,
            need: window_revs + 1,
        });
    }
    let polar = x0.to_polar();
    let phi = (polar.theta.cos(), polar.theta.sin());
    let r0 = initial_graph_radius(p)?;
    let mut cycle = flow_point(&rev, &band, path, r0, phi, 0, window_revs)?;
    let mut r = polar.r;
    let mut distances = Vec::with_capacity(total - window_revs + 1);
    distances.push((0, (r - cycle).abs()));
    for k in window_revs..total {
        let noise = rev.revolution(path, k);
        cycle = rev.revolve(cycle, phi, noise)?;
        r = rev.revolve(r, phi, noise)?;
        distances.push((k + 1 - window_revs, (r - cycle).abs()));
    }
    let final_distance = distances.last().map_or(f64::NAN, |d| d.1);
    let below_tol_at = distances.iter().find(|d| d.1 < GRAPH_TOL).map(|d| d.0);
    let monotone_after_transient = match distances.iter().position(|d| d.1 < 1e-3) {
        // round-off floor: allow wiggle below 1e−13
        Some(i) => distances[i..].windows(2).all(|w| w[1].1 <= w[0].1 || w[1].1 < 1e-13),
        None => false,
    };
    Ok(DecayRecord {
        distances,
        final_distance,
        below_tol_at,
        monotone_after_transient,
    })
}

/// Number of noise samples per revolution for a path with step `dt`.
pub fn steps_per_revolution(dt: f64) -> usize {
    ((TAU / dt).round() as usize).max(8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{constant_path, make_path, NoiseKind};

    fn sym(lambda: f64, epsilon: f64) -> ModelParams {
        ModelParams::symmetric(lambda, epsilon, 1.0).unwrap()
    }

    #[test]
    fn band_sign_checks() {
        let p = sym(0.6, 0.1);
        let b = band(&p).unwrap();
        assert!(0.6 * b.r_plus - b.r_plus.powi(3) + 0.1 < 0.0);
        assert!(0.6 * b.r_minus - b.r_minus.powi(3) - 0.1 > 0.0);
        assert!(b.r_minus < b.r_plus);
    }

    #[test]
    fn band_requires_annulus() {
        assert!(matches!(band(&sym(0.3, 0.1)), Err(CycleError::BelowBifurcation { .. })));
        assert!(matches!(band(&sym(-0.1, 0.0)), Err(CycleError::BelowBifurcation { .. })));
        let b = band(&sym(0.25, 0.0)).unwrap();
        assert!(b.r_minus < 0.5 && 0.5 < b.r_plus);
    }

    #[test]
    fn deterministic_fixed_point_is_sqrt_lambda() {
        let p = sym(0.25, 0.0);
        let path = constant_path(NoiseSample::default(), 1e-2, 629 * 40).unwrap();
        let b = band(&p).unwrap();
        let fp = pullback_fixed_point(&p, &path, &[b.r_minus, b.r_plus], 40).unwrap();
        assert!((fp.radius - 0.5).abs() < 1e-8);
    }

    #[test]
    fn seeds_are_validated() {
        let p = sym(0.6, 0.1);
        let path = constant_path(NoiseSample::default(), 1e-2, 6300).unwrap();
        assert!(matches!(
            pullback_fixed_point(&p, &path, &[0.01], 5),
            Err(CycleError::SeedOutsideBand(_))
        ));
        assert!(matches!(pullback_fixed_point(&p, &path, &[], 5), Err(CycleError::NoSeeds)));
    }

    #[test]
    fn short_path_is_reported() {
        let p = sym(0.6, 0.1);
        let path = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-2, 700, 1).unwrap();
        let b = band(&p).unwrap();
        assert!(matches!(
            pullback_fixed_point(&p, &path, &[b.r_minus, b.r_plus], 50),
            Err(CycleError::PathTooShort { have: 1, .. })
        ));
    }

    #[test]
    fn deterministic_graph_is_the_circle() {
        let p = sym(0.25, 0.0);
        let path = constant_path(NoiseSample::default(), 1e-2, 629 * 4).unwrap();
        let g = graph_transform_cycle(&p, &path, 64, 4).unwrap();
        assert!(g.radii.iter().all(|r| (r - 0.5).abs() < 1e-12));
        assert!(g.converged);
    }

    #[test]
    fn graph_csv_header() {
        let p = sym(0.25, 0.0);
        let path = constant_path(NoiseSample::default(), 1e-2, 629 * 2).unwrap();
        let g = graph_transform_cycle(&p, &path, 4, 2).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,r\n0,0.5\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn point_on_cycle_stays_on_cycle() {
        let p = sym(0.6, 0.1);
        let path = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-2, 629 * 12, 9).unwrap();
        let head = NoisePath {
            samples: path.samples[..629 * 6].to_vec(),
            ..path.clone()
        };
        let g = graph_transform_cycle(&p, &head, 8, 6).unwrap();
        let x0 = PlanarState::new(g.radii[0], 0.0);
        let rec = attraction_check(&p, &path, x0, 6).unwrap();
        assert!(rec.distances.iter().all(|d| d.1 == 0.0));
    }
}
