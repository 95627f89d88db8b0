use std::f64::consts::PI;

use hopf_mfi::averaged::{effective_amplitude, mfi_radii};
use hopf_mfi::integrate::{drive, IntegratorConfig, Scheme, Stepper};
use hopf_mfi::model::{ModelParams, NoiseSample, PlanarState};
use hopf_mfi::noise::{reflect_in_disk, rng_from_seed, step_reflected_brownian, uniform_in_disk, ReflectedBrownian};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn reflection_keeps_step_length(
        r in 0.0..=1.0f64,
        t in 0.0..(2.0 * PI),
        du in -5.0..5.0f64,
        dv in -5.0..5.0f64,
    ) {
        let start = NoiseSample::new(r * t.cos(), r * t.sin());
        let out = reflect_in_disk(start, du, dv);
        prop_assert!(out.end.norm_sq() <= 1.0);
        prop_assert!((out.path_length - du.hypot(dv)).abs() < 1e-12);
    }
}

#[test]
fn million_steps_stay_in_the_disk() {
    let mut rng = rng_from_seed(4);
    let mut state = NoiseSample::new(1.0, 0.0);
    for k in 0..1_000_000u32 {
        // every 1000 steps, jump to an adversarial state on or just inside the circle
        if k % 1000 == 0 {
            let t: f64 = rng.random_range(0.0..2.0 * PI);
            let r = 1.0 - 10f64.powi(-rng.random_range(0..16));
            state = NoiseSample::new(r * t.cos(), r * t.sin());
        }
        let sigma = if k % 3 == 0 { 50.0 } else { 1.0 };
        state = step_reflected_brownian(state, sigma, 1e-3, &mut rng).unwrap();
        assert!(state.norm_sq() <= 1.0, "step {k}: {state:?}");
    }
}

fn radial_histogram(samples: impl Iterator<Item = NoiseSample>, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for s in samples {
        // r² is uniform under the stationary law
        let k = ((s.norm_sq() * bins as f64) as usize).min(bins - 1);
        h[k] += 1.0;
    }
    h
}

#[test]
fn generator_commutes_with_rotations() {
    let (n, thin, bins) = (40_000usize, 1000usize, 10usize);
    let phi = 1.1_f64;
    let (s, c) = phi.sin_cos();
    let rotate = |w: NoiseSample| NoiseSample::new(c * w.u - s * w.v, s * w.u + c * w.v);
    let w0 = NoiseSample::new(0.3, -0.5);
    let rotated_outputs = ReflectedBrownian::new(w0, 1.0, 1e-3, rng_from_seed(8))
        .unwrap()
        .step_by(thin)
        .take(n)
        .map(rotate);
    let rotated_start = ReflectedBrownian::new(rotate(w0), 1.0, 1e-3, rng_from_seed(9))
        .unwrap()
        .step_by(thin)
        .take(n);
    let a = radial_histogram(rotated_outputs, bins);
    let b = radial_histogram(rotated_start, bins);
    let p = 1.0 / bins as f64;
    let sd = (2.0 * n as f64 * p * (1.0 - p)).sqrt();
    for k in 0..bins {
        assert!((a[k] - b[k]).abs() < 3.0 * sd, "bin {k}: {} vs {}", a[k], b[k]);
    }
}

/// Exact deterministic solution: `r² = λ / (1 + (λ/r0² − 1) e^{−2λt})`, `θ = θ0 + t`.
fn exact(lambda: f64, r0: f64, t: f64) -> PlanarState {
    let r = (lambda / (1.0 + (lambda / (r0 * r0) - 1.0) * (-2.0 * lambda * t).exp())).sqrt();
    PlanarState::new(r * t.cos(), r * t.sin())
}

fn global_error(scheme: Scheme, dt: f64) -> f64 {
    let (lambda, r0, t_end) = (0.25, 0.8, 10.0);
    let p = ModelParams::symmetric(lambda, 0.0, 1.0).unwrap();
    let mut stepper = Stepper::new(p, dt, scheme);
    let n = (t_end / dt).round() as usize;
    let mut s = PlanarState::new(r0, 0.0);
    for _ in 0..n {
        s = stepper.step(s, NoiseSample::default()).unwrap();
    }
    let e = exact(lambda, r0, n as f64 * dt);
    (s.x - e.x).hypot(s.y - e.y)
}

fn observed_order(scheme: Scheme) -> f64 {
    let dts = [0.02, 0.01, 0.005, 0.0025];
    let errs: Vec<f64> = dts.iter().map(|&dt| global_error(scheme, dt)).collect();
    let slopes: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    slopes.iter().sum::<f64>() / slopes.len() as f64
}

#[test]
fn convergence_orders() {
    let ab2 = observed_order(Scheme::Ab2);
    let euler = observed_order(Scheme::Euler);
    assert!((ab2 - 2.0).abs() < 0.2, "ab2 slope {ab2}");
    assert!((euler - 1.0).abs() < 0.2, "euler slope {euler}");
}

#[test]
fn trajectories_stay_in_the_outer_disk() {
    let dt = 1e-3;
    let cfg = IntegratorConfig {
        dt,
        scheme: Scheme::Ab2,
        burn_in_steps: 0,
        thin: 1,
    };
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(1000 + seed);
        let lambda: f64 = rng.random_range(-0.1..0.1);
        let eps: f64 = rng.random_range(0.01..=0.2);
        let p = ModelParams::symmetric(lambda, eps, 1.0).unwrap();
        let rho = mfi_radii(lambda, effective_amplitude(&p).unwrap()).unwrap().rho_plus;
        let w = uniform_in_disk(&mut rng);
        let start = PlanarState::new(rho * w.u, rho * w.v);
        let noise = ReflectedBrownian::new(uniform_in_disk(&mut rng), 1.0, dt, rng).unwrap();
        let mut worst = 0.0f64;
        drive(&p, &cfg, start, noise, 50_000, |_, s| worst = worst.max(s.radius())).unwrap();
        assert!(worst <= rho + 5.0 * dt, "seed {seed}: {worst} > {rho}");
    }
}

#[test]
fn stable_focus_radius_decreases() {
    let p = ModelParams::symmetric(-0.3, 0.0, 1.0).unwrap();
    let mut stepper = Stepper::new(p, 1e-3, Scheme::Ab2);
    let mut s = PlanarState::new(0.9, 0.2);
    let mut r = s.radius();
    for _ in 0..20_000 {
        s = stepper.step(s, NoiseSample::default()).unwrap();
        assert!(s.radius() < r);
        r = s.radius();
    }
}
