//! Fixed-step time integration of the planar system driven by a noise path.
//!
//! Noise is piecewise constant over each step; step `k` uses `samples[k]`
//! and advances the state from `t = k·dt` to `t = (k+1)·dt`.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::model::{cartesian_field, ModelParams, NoiseSample, PlanarState, Velocity};
use crate::noise::NoisePath;

/// Radius beyond which a trajectory is treated as diverged.
pub const DIVERGENCE_RADIUS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("trajectory diverged at step {step}: ({x}, {y})")]
    Divergence { step: u64, x: f64, y: f64 },
    #[error("noise path has {have} samples but the run needs at least {need}")]
    PathTooShort { have: usize, need: usize },
    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),
    #[error("noise sample {index} lies outside the unit disk")]
    NoiseOutOfBounds { index: usize },
    #[error("unknown scheme `{0}` (expected euler or ab2)")]
    UnknownScheme(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Ab2,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Ab2 => "ab2",
        })
    }
}

impl FromStr for Scheme {
    type Err = IntegrateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "ab2" => Ok(Scheme::Ab2),
            other => Err(IntegrateError::UnknownScheme(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub burn_in_steps: usize,
    /// Record every `thin`-th state.
    pub thin: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::Ab2,
            burn_in_steps: 1000,
            thin: 5,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(IntegrateError::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.thin == 0 {
            return Err(IntegrateError::InvalidConfig("thin must be >= 1".into()));
        }
        Ok(())
    }
}

#[inline]
fn advance(s: PlanarState, dt: f64, v: Velocity) -> PlanarState {
    PlanarState::new(s.x + dt * v.dx, s.y + dt * v.dy)
}

/// One explicit Euler step; returns the new state and the field at `current`.
pub fn step_euler(
    p: &ModelParams,
    dt: f64,
    current: PlanarState,
    noise_now: NoiseSample,
) -> (PlanarState, Velocity) {
    let f = cartesian_field(p, current, noise_now);
    (advance(current, dt, f), f)
}

/// One second-order Adams–Bashforth step,
/// `x₊ = x + dt (3/2 f(x, w) − 1/2 f_prev)`.
///
/// Without a previous derivative the step falls back to Euler. The returned
/// derivative is the one to pass as `prev_deriv` next time.
pub fn step_ab2(
    p: &ModelParams,
    dt: f64,
    current: PlanarState,
    prev_deriv: Option<Velocity>,
    noise_now: NoiseSample,
) -> (PlanarState, Velocity) {
    let f = cartesian_field(p, current, noise_now);
    let next = match prev_deriv {
        None => advance(current, dt, f),
        Some(g) => advance(
            current,
            dt,
            Velocity {
                dx: 1.5 * f.dx - 0.5 * g.dx,
                dy: 1.5 * f.dy - 0.5 * g.dy,
            },
        ),
    };
    (next, f)
}

/// Stateful stepper carrying the multistep history and the step counter.
#[derive(Debug, Clone)]
pub struct Stepper {
    params: ModelParams,
    dt: f64,
    scheme: Scheme,
    prev: Option<Velocity>,
    step: u64,
}

impl Stepper {
    pub fn new(params: ModelParams, dt: f64, scheme: Scheme) -> Self {
        Self {
            params,
            dt,
            scheme,
            prev: None,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    #[inline]
    pub fn step(&mut self, current: PlanarState, noise: NoiseSample) -> Result<PlanarState, IntegrateError> {
        let next = match self.scheme {
            Scheme::Euler => step_euler(&self.params, self.dt, current, noise).0,
            Scheme::Ab2 => {
                let (next, f) = step_ab2(&self.params, self.dt, current, self.prev, noise);
                self.prev = Some(f);
                next
            }
        };
        self.step += 1;
        let r2 = next.x * next.x + next.y * next.y;
        if !(r2 <= DIVERGENCE_RADIUS * DIVERGENCE_RADIUS) {
            return Err(IntegrateError::Divergence {
                step: self.step,
                x: next.x,
                y: next.y,
            });
        }
        Ok(next)
    }
}

/// Integrates over a noise stream, calling `record` on every retained state.
///
/// Runs until the stream is exhausted or `n_steps` steps are taken. The
/// state after step `k` is retained when `k > burn_in` and
/// `(k − burn_in) % thin == 0`. Returns the final state.
pub fn drive<I, F>(
    p: &ModelParams,
    cfg: &IntegratorConfig,
    start: PlanarState,
    noise: I,
    n_steps: usize,
    mut record: F,
) -> Result<PlanarState, IntegrateError>
where
    I: IntoIterator<Item = NoiseSample>,
    F: FnMut(usize, PlanarState),
{
    cfg.validate()?;
    let mut stepper = Stepper::new(*p, cfg.dt, cfg.scheme);
    let mut state = start;
    let mut taken = 0usize;
    for w in noise.into_iter().take(n_steps) {
        state = stepper.step(state, w)?;
        taken += 1;
        if taken > cfg.burn_in_steps && (taken - cfg.burn_in_steps).is_multiple_of(cfg.thin) {
            record(taken, state);
        }
    }
    if taken < n_steps {
        return Err(IntegrateError::PathTooShort {
            have: taken,
            need: n_steps,
        });
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<PlanarState>,
    /// Time between consecutive recorded states, `dt × thin`.
    pub dt_effective: f64,
    pub start: PlanarState,
    pub seed: u64,
    /// Time of the first recorded state.
    pub t0: f64,
}

impl Trajectory {
    /// Writes `t,x,y`, one row per recorded state.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,y")?;
        for (i, s) in self.states.iter().enumerate() {
            writeln!(w, "{},{},{}", self.t0 + i as f64 * self.dt_effective, s.x, s.y)?;
        }
        Ok(())
    }
}

/// Integrates one step per noise sample, with burn-in and thinning.
pub fn run_trajectory(
    p: &ModelParams,
    cfg: &IntegratorConfig,
    start: PlanarState,
    path: &NoisePath,
) -> Result<Trajectory, IntegrateError> {
    cfg.validate()?;
    let need = cfg.burn_in_steps + cfg.thin;
    if path.len() < need {
        return Err(IntegrateError::PathTooShort {
            have: path.len(),
            need,
        });
    }
    if let Some(index) = path.samples.iter().position(|s| s.norm_sq() > 1.0) {
        return Err(IntegrateError::NoiseOutOfBounds { index });
    }
    if (path.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(IntegrateError::InvalidConfig(format!(
            "noise step {} differs from integrator step {}",
            path.dt, cfg.dt
        )));
    }
    let mut states = Vec::with_capacity((path.len() - cfg.burn_in_steps) / cfg.thin);
    drive(p, cfg, start, path.samples.iter().copied(), path.len(), |_, s| {
        states.push(s)
    })?;
    Ok(Trajectory {
        states,
        dt_effective: cfg.dt * cfg.thin as f64,
        start,
        seed: path.seed,
        t0: (cfg.burn_in_steps + cfg.thin) as f64 * cfg.dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{constant_path, make_path, NoiseKind};

    fn sym(lambda: f64, epsilon: f64) -> ModelParams {
        ModelParams::symmetric(lambda, epsilon, 1.0).unwrap()
    }

    #[test]
    fn ab2_with_constant_history_is_euler() {
        let p = sym(0.3, 0.1);
        let s = PlanarState::new(0.4, -0.2);
        let w = NoiseSample::new(0.2, 0.1);
        let f = cartesian_field(&p, s, w);
        let (ab2, _) = step_ab2(&p, 0.01, s, Some(f), w);
        let (eu, _) = step_euler(&p, 0.01, s, w);
        assert!((ab2.x - eu.x).abs() < 1e-16 && (ab2.y - eu.y).abs() < 1e-16);
        let (boot, _) = step_ab2(&p, 0.01, s, None, w);
        assert_eq!(boot, eu);
    }

    #[test]
    fn stable_focus_spirals_in() {
        let p = sym(-1.0, 0.0);
        let cfg = IntegratorConfig {
            dt: 1e-3,
            scheme: Scheme::Ab2,
            burn_in_steps: 0,
            thin: 100,
        };
        let path = constant_path(NoiseSample::default(), 1e-3, 10_000).unwrap();
        let traj = run_trajectory(&p, &cfg, PlanarState::new(1.0, 0.0), &path).unwrap();
        let radii: Vec<f64> = traj.states.iter().map(|s| s.radius()).collect();
        assert!(radii.windows(2).all(|w| w[1] < w[0]));
        assert!(radii.last().unwrap() < &1e-4);
    }

    #[test]
    fn thin_one_records_every_step() {
        let p = sym(0.2, 0.1);
        let cfg = IntegratorConfig {
            dt: 1e-2,
            scheme: Scheme::Ab2,
            burn_in_steps: 0,
            thin: 1,
        };
        let path = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-2, 37, 3).unwrap();
        let traj = run_trajectory(&p, &cfg, PlanarState::new(0.1, 0.1), &path).unwrap();
        assert_eq!(traj.states.len(), 37);
    }

    #[test]
    fn recorded_length_rounds_down() {
        let p = sym(0.2, 0.1);
        let cfg = IntegratorConfig {
            dt: 1e-2,
            scheme: Scheme::Euler,
            burn_in_steps: 10,
            thin: 4,
        };
        let path = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-2, 33, 3).unwrap();
        let traj = run_trajectory(&p, &cfg, PlanarState::new(0.1, 0.1), &path).unwrap();
        assert_eq!(traj.states.len(), (33 - 10) / 4);
    }

    #[test]
    fn short_path_is_rejected() {
        let p = sym(0.2, 0.1);
        let cfg = IntegratorConfig::default();
        let path = make_path(NoiseKind::Frozen, 1.0, 1e-3, 100, 3).unwrap();
        assert!(matches!(
            run_trajectory(&p, &cfg, PlanarState::new(0.1, 0.1), &path),
            Err(IntegrateError::PathTooShort { .. })
        ));
    }

    #[test]
    fn divergence_names_the_step() {
        // λ huge and dt huge: explicit scheme blows up
        let p = sym(50.0, 0.0);
        let cfg = IntegratorConfig {
            dt: 0.5,
            scheme: Scheme::Euler,
            burn_in_steps: 0,
            thin: 1,
        };
        let path = constant_path(NoiseSample::default(), 0.5, 100).unwrap();
        match run_trajectory(&p, &cfg, PlanarState::new(1.0, 0.0), &path) {
            Err(IntegrateError::Divergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn scheme_names() {
        assert_eq!("ab2".parse::<Scheme>().unwrap(), Scheme::Ab2);
        assert_eq!("euler".parse::<Scheme>().unwrap(), Scheme::Euler);
        assert!("rk4".parse::<Scheme>().is_err());
    }

    #[test]
    fn deterministic_replay() {
        let p = sym(0.0, 0.1);
        let cfg = IntegratorConfig::default();
        let path = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-3, 20_000, 5).unwrap();
        let a = run_trajectory(&p, &cfg, PlanarState::new(0.2, 0.0), &path).unwrap();
        let path2 = make_path(NoiseKind::ReflectedBrownian, 1.0, 1e-3, 20_000, 5).unwrap();
        let b = run_trajectory(&p, &cfg, PlanarState::new(0.2, 0.0), &path2).unwrap();
        assert_eq!(a, b);
    }
}
