//! Closed-form predictions from the averaged extremal equations
//!
//! ```text
//! ṙ± = λ r± − r±³ ± c
//! ```
//!
//! where `c` is the angular mean of the extremal noise amplitude. The lower
//! equation has a saddle-node at `λ_bif = 3 c^(2/3) / 4^(1/3)`, where the
//! double root sits at `r* = (c/2)^(1/3)`.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::model::{self, ModelParams};
use crate::roots;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AveragedError {
    #[error("elliptic modulus must lie in [0, 1], got {0}")]
    ModulusOutOfRange(f64),
    #[error("noise axes must satisfy a >= b >= 0 and a > 0, got a = {a}, b = {b}")]
    AxisOrder { a: f64, b: f64 },
    #[error("averaged amplitude must be positive, got {0}")]
    NonPositiveAmplitude(f64),
    #[error("lambda grid is not monotone at index {0}")]
    NonMonotoneGrid(usize),
    #[error(transparent)]
    Model(#[from] model::ModelError),
}

/// Complete elliptic integral of the second kind,
/// `E(k) = ∫₀^{π/2} √(1 − k² sin²θ) dθ`, by the arithmetic-geometric mean.
pub fn elliptic_e(k: f64) -> Result<f64, AveragedError> {
    if !(0.0..=1.0).contains(&k) {
        return Err(AveragedError::ModulusOutOfRange(k));
    }
    if k == 1.0 {
        return Ok(1.0);
    }
    if k == 0.0 {
        return Ok(FRAC_PI_2);
    }
    // E = K (1 − Σ 2^(n−1) c_n²), K = π / (2 AGM(1, k')), c_0 = k
    let mut a = 1.0_f64;
    let mut b = (1.0 - k * k).sqrt();
    let mut sum = 0.5 * k * k;
    let mut pow = 0.5;
    for _ in 0..40 {
        let c = 0.5 * (a - b);
        let a_next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = a_next;
        pow *= 2.0;
        sum += pow * c * c;
        if c.abs() <= 1e-17 * a {
            break;
        }
    }
    Ok(PI / (2.0 * a) * (1.0 - sum))
}

/// Angular mean `(1/2π) ∫₀^{2π} √(a² cos²θ + b² sin²θ) dθ = (2a/π) E(√(1 − b²/a²))`.
///
/// Equals 1 for the unit disk and `2a/π` in the degenerate limit `b = 0`.
pub fn averaging_constant(a: f64, b: f64) -> Result<f64, AveragedError> {
    if !(a > 0.0 && b >= 0.0 && a >= b && a.is_finite()) {
        return Err(AveragedError::AxisOrder { a, b });
    }
    let ratio = b / a;
    let k = (1.0 - ratio * ratio).max(0.0).sqrt();
    Ok(2.0 * a / PI * elliptic_e(k)?)
}

/// Effective averaged amplitude `ε · c(a, b)` in the original coordinates.
pub fn effective_amplitude(p: &ModelParams) -> Result<f64, AveragedError> {
    Ok(p.epsilon * averaging_constant(p.a, p.b)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationPoint {
    pub lambda_bif: f64,
    pub r_star: f64,
}

pub fn bifurcation_point(c: f64) -> Result<BifurcationPoint, AveragedError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(AveragedError::NonPositiveAmplitude(c));
    }
    Ok(BifurcationPoint {
        lambda_bif: 3.0 * c.powf(2.0 / 3.0) / 4f64.cbrt(),
        r_star: (0.5 * c).cbrt(),
    })
}

/// Radii of the circles bounding the averaged minimal forward invariant set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfiRadii {
    pub rho_plus: f64,
    /// Present iff `λ ≥ λ_bif`.
    pub rho_minus: Option<f64>,
}

const ROOT_TOL: f64 = 1e-13;

/// Unique positive root of `r³ − λr − c`.
fn upper_root(lambda: f64, c: f64) -> f64 {
    let f = |r: f64| r * r * r - lambda * r - c;
    let df = |r: f64| 3.0 * r * r - lambda;
    // Cauchy bound on the roots of a monic cubic
    let hi = 1.0 + lambda.abs() + c;
    let r = roots::bisect(f, 0.0, hi, ROOT_TOL);
    roots::polish(f, df, r, 0.0, hi, 2)
}

/// Largest positive root of `r³ − λr + c`, assuming `λ ≥ λ_bif(c)`.
///
/// The root lies between the cubic's local minimum `√(λ/3)` and `√λ`, where
/// the cubic equals `c > 0`. At tangency the minimum itself is returned.
fn lower_root(lambda: f64, c: f64) -> f64 {
    let f = |r: f64| r * r * r - lambda * r + c;
    let df = |r: f64| 3.0 * r * r - lambda;
    let lo = (lambda / 3.0).sqrt();
    let hi = lambda.sqrt();
    if f(lo) >= 0.0 {
        return lo;
    }
    let r = roots::bisect(f, lo, hi, ROOT_TOL);
    roots::polish(f, df, r, lo, hi, 2)
}

pub fn mfi_radii(lambda: f64, c: f64) -> Result<MfiRadii, AveragedError> {
    let bif = bifurcation_point(c)?;
    let rho_minus = (lambda >= bif.lambda_bif).then(|| lower_root(lambda, c));
    Ok(MfiRadii {
        rho_plus: upper_root(lambda, c),
        rho_minus,
    })
}

/// Everything the averaged theory predicts for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedPrediction {
    pub c: f64,
    pub lambda_bif: f64,
    pub r_star: f64,
    pub rho_plus: f64,
    pub rho_minus: Option<f64>,
}

impl AveragedPrediction {
    pub fn for_params(p: &ModelParams) -> Result<Self, AveragedError> {
        let c = effective_amplitude(p)?;
        let bif = bifurcation_point(c)?;
        let radii = mfi_radii(p.lambda, c)?;
        Ok(Self {
            c,
            lambda_bif: bif.lambda_bif,
            r_star: bif.r_star,
            rho_plus: radii.rho_plus,
            rho_minus: radii.rho_minus,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramRow {
    pub lambda: f64,
    pub rho_plus: f64,
    pub rho_minus: Option<f64>,
    pub r_s: f64,
    /// Root of the alternative equilibrium polynomial, see
    /// [`model::equilibrium_radius_alt`].
    pub r_s_alt: Option<f64>,
}

/// One row per `λ` of the bifurcation diagram of the averaged boundaries.
pub fn bifurcation_diagram(
    base: &ModelParams,
    lambda_grid: &[f64],
) -> Result<Vec<DiagramRow>, AveragedError> {
    if let Some(i) = lambda_grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(AveragedError::NonMonotoneGrid(i + 1));
    }
    let c = effective_amplitude(base)?;
    lambda_grid
        .iter()
        .map(|&lambda| {
            let p = base.with_lambda(lambda);
            let radii = mfi_radii(lambda, c)?;
            Ok(DiagramRow {
                lambda,
                rho_plus: radii.rho_plus,
                rho_minus: radii.rho_minus,
                r_s: model::equilibrium_radius(&p)?,
                r_s_alt: model::equilibrium_radius_alt(&p),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson on a smooth periodic-friendly integrand.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn elliptic_endpoints() {
        assert_eq!(elliptic_e(0.0).unwrap(), FRAC_PI_2);
        assert_eq!(elliptic_e(1.0).unwrap(), 1.0);
        assert!((elliptic_e(1.0 - 1e-15).unwrap() - 1.0).abs() < 1e-12);
        assert!((elliptic_e(1e-9).unwrap() - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn elliptic_half_modulus() {
        // arbitrary-precision quadrature reference
        assert!((elliptic_e(0.5).unwrap() - 1.467_462_209_339_427_2).abs() < 1e-14);
        let q = simpson(|t| (1.0 - 0.25 * t.sin().powi(2)).sqrt(), 0.0, FRAC_PI_2, 2000);
        assert!((elliptic_e(0.5).unwrap() - q).abs() < 1e-12);
    }

    #[test]
    fn elliptic_domain_error() {
        assert!(elliptic_e(-0.1).is_err());
        assert!(elliptic_e(1.1).is_err());
        assert!(elliptic_e(f64::NAN).is_err());
    }

    #[test]
    fn averaging_constant_cases() {
        assert!((averaging_constant(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((averaging_constant(1.0, 0.0).unwrap() - 2.0 / PI).abs() < 1e-15);
        assert!((averaging_constant(1.0, 0.5).unwrap() - 0.770_982_212_595_02).abs() < 1e-13);
        assert!((averaging_constant(2.0, 2.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(averaging_constant(0.5, 1.0), Err(AveragedError::AxisOrder { .. })));
    }

    #[test]
    fn bifurcation_point_reported_values() {
        let b = bifurcation_point(0.1).unwrap();
        assert!((b.lambda_bif - 0.407163).abs() < 1e-6);
        assert!((b.r_star - 0.368403).abs() < 1e-6);
        let b = bifurcation_point(0.05).unwrap();
        assert!((b.lambda_bif - 0.2565).abs() < 5e-5);
        assert!((b.r_star - 0.2924).abs() < 5e-5);
        let b = bifurcation_point(2.0).unwrap();
        assert!((b.lambda_bif - 3.0).abs() < 1e-14);
        assert!(bifurcation_point(0.0).is_err());
        assert!(bifurcation_point(-1.0).is_err());
    }

    #[test]
    fn radii_at_zero_lambda() {
        let r = mfi_radii(0.0, 0.1).unwrap();
        assert!((r.rho_plus - 0.1f64.cbrt()).abs() < 1e-13);
        assert!(r.rho_minus.is_none());
    }

    #[test]
    fn radii_at_tangency() {
        let bif = bifurcation_point(0.1).unwrap();
        let r = mfi_radii(bif.lambda_bif, 0.1).unwrap();
        let rm = r.rho_minus.expect("annulus at lambda_bif");
        assert!((rm - bif.r_star).abs() < 1e-7);
        // upper root is 2 r* at tangency (factorisation (r − 2r*)(r + r*)²)
        assert!((r.rho_plus - 2.0 * bif.r_star).abs() < 1e-12);
        // at the rounded value 0.407163 the frozen reference is 0.7368065153799487
        let r = mfi_radii(0.407163, 0.1).unwrap();
        assert!((r.rho_plus - 0.736_806_515_379_948_7).abs() < 1e-12);
        assert!((r.rho_minus.unwrap() - 0.368403).abs() < 1e-3);
    }

    #[test]
    fn radii_above_tangency() {
        let r = mfi_radii(1.1 * 0.407163, 0.1).unwrap();
        assert!((r.rho_minus.unwrap() - 0.496_427_080_228_122_5).abs() < 1e-12);
        assert!((r.rho_minus.unwrap() - 0.496).abs() < 1e-3);
    }

    #[test]
    fn diagram_single_row() {
        let p = ModelParams::symmetric(0.0, 0.1, 1.0).unwrap();
        let rows = bifurcation_diagram(&p, &[0.0]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].rho_plus - 0.4642).abs() < 1e-4);
        assert!(rows[0].rho_minus.is_none());
        assert!((rows[0].r_s - 0.099_995).abs() < 1e-5);
        assert_eq!(rows[0].r_s_alt.map(|x| (x - rows[0].r_s).abs() < 1e-12), Some(true));
    }

    #[test]
    fn diagram_rejects_unsorted_grid() {
        let p = ModelParams::symmetric(0.0, 0.1, 1.0).unwrap();
        assert_eq!(
            bifurcation_diagram(&p, &[0.0, 0.2, 0.1]),
            Err(AveragedError::NonMonotoneGrid(2))
        );
    }

    #[test]
    fn diagram_at_bifurcation_has_inner_radius_r_star() {
        let p = ModelParams::symmetric(0.0, 0.1, 1.0).unwrap();
        let bif = bifurcation_point(0.1).unwrap();
        let rows = bifurcation_diagram(&p, &[bif.lambda_bif]).unwrap();
        assert!((rows[0].rho_minus.unwrap() - bif.r_star).abs() < 1e-7);
    }
}
