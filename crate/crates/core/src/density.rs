//! Monte Carlo invariant densities: ensembles of noisy trajectories binned
//! into an integer 2D histogram, with support diagnostics against the
//! predicted minimal forward invariant set.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::averaged::{self, AveragedError};
use crate::extremal::MfiDescription;
use crate::integrate::{self, IntegrateError, IntegratorConfig};
use crate::model::{ModelParams, PlanarState};
use crate::noise::{rng_from_seed, uniform_in_disk, NoiseError, ReflectedBrownian};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("invalid sampling protocol: {0}")]
    InvalidProtocol(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("trajectory from start {start} failed: {source}")]
    Integrate {
        start: usize,
        #[source]
        source: IntegrateError,
    },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Averaged(#[from] AveragedError),
    #[error("density grid and MFI were computed for different parameters")]
    ParamMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingProtocol {
    pub n_starts: usize,
    /// Steps discarded before recording.
    pub burn_in: usize,
    /// Steps per start after the burn-in.
    pub record_steps: usize,
    pub thin: usize,
    pub seed_base: u64,
}

impl SamplingProtocol {
    /// 100 starts, 10⁴ recorded points each.
    pub fn desk(seed_base: u64) -> Self {
        Self {
            n_starts: 100,
            burn_in: DEFAULT_BURN_IN,
            record_steps: 50_000,
            thin: 5,
            seed_base,
        }
    }

    /// 100 starts, 10⁵ recorded points each.
    pub fn full_scale(seed_base: u64) -> Self {
        Self {
            record_steps: 500_000,
            ..Self::desk(seed_base)
        }
    }

    pub fn per_start(&self) -> usize {
        self.record_steps / self.thin
    }

    pub fn recorded(&self) -> u64 {
        (self.n_starts * self.per_start()) as u64
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        if self.n_starts == 0 || self.record_steps == 0 || self.thin == 0 {
            return Err(DensityError::InvalidProtocol(format!(
                "n_starts, record_steps and thin must be positive: {self:?}"
            )));
        }
        if self.record_steps < self.thin {
            return Err(DensityError::InvalidProtocol(format!(
                "record_steps {} < thin {}",
                self.record_steps, self.thin
            )));
        }
        Ok(())
    }
}

/// Burn-in in steps; twenty time units at the default step 1e−3.
pub const DEFAULT_BURN_IN: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Half-width of the square grid as a multiple of `ρ+`.
    pub extent_factor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 512,
            ny: 512,
            extent_factor: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub nx: usize,
    pub ny: usize,
    /// `(x_min, x_max, y_min, y_max)`.
    pub extent: (f64, f64, f64, f64),
    /// Row-major, `counts[iy * nx + ix]`.
    pub counts: Vec<u64>,
    /// Samples binned into the grid.
    pub total: u64,
    /// Recorded samples that fell outside the extent.
    pub outside_extent: u64,
    pub params: ModelParams,
    pub protocol: SamplingProtocol,
    pub integrator: IntegratorConfig,
}

/// Radius of the outer MFI boundary used to size grids and draw starts.
pub fn reference_radius(p: &ModelParams) -> Result<f64, DensityError> {
    let c = averaged::effective_amplitude(p)?;
    if c > 0.0 {
        return Ok(averaged::mfi_radii(p.lambda, c)?.rho_plus);
    }
    if p.lambda > 0.0 {
        Ok(p.lambda.sqrt())
    } else {
        Err(DensityError::InvalidGrid(
            "no noise and λ ≤ 0: every trajectory collapses to the origin".into(),
        ))
    }
}

struct Binner {
    nx: usize,
    ny: usize,
    x_min: f64,
    y_min: f64,
    inv_dx: f64,
    inv_dy: f64,
}

impl Binner {
    fn index(&self, s: PlanarState) -> Option<usize> {
        let fx = (s.x - self.x_min) * self.inv_dx;
        let fy = (s.y - self.y_min) * self.inv_dy;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then_some(iy * self.nx + ix)
    }
}

struct Partial {
    counts: Vec<u64>,
    outside: u64,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.outside += other.outside;
        self
    }
}

/// Runs the ensemble in parallel. Start `i` uses seed `seed_base + i` for
/// its initial state (uniform in the disk of radius `extent_factor · ρ+`),
/// its initial noise value (uniform in the unit disk) and its noise path.
///
/// Burn-in and thinning come from `proto`; `cfg` supplies the step and
/// scheme, and its step is also the noise clock.
pub fn estimate_density(
    p: &ModelParams,
    proto: &SamplingProtocol,
    cfg: &IntegratorConfig,
    grid: &GridSpec,
) -> Result<DensityGrid, DensityError> {
    proto.validate()?;
    if grid.nx == 0 || grid.ny == 0 || !(grid.extent_factor > 0.0) {
        return Err(DensityError::InvalidGrid(format!("{grid:?}")));
    }
    let half = grid.extent_factor * reference_radius(p)?;
    let run_cfg = IntegratorConfig {
        burn_in_steps: proto.burn_in,
        thin: proto.thin,
        ..*cfg
    };
    run_cfg
        .validate()
        .map_err(|source| DensityError::Integrate { start: 0, source })?;
    let binner = Binner {
        nx: grid.nx,
        ny: grid.ny,
        x_min: -half,
        y_min: -half,
        inv_dx: grid.nx as f64 / (2.0 * half),
        inv_dy: grid.ny as f64 / (2.0 * half),
    };
    let cells = grid.nx * grid.ny;
    let n_steps = proto.burn_in + proto.per_start() * proto.thin;
    let empty = || Partial {
        counts: vec![0; cells],
        outside: 0,
    };
    let merged = (0..proto.n_starts)
        .into_par_iter()
        .try_fold(empty, |mut acc, i| {
            let mut rng = rng_from_seed(proto.seed_base.wrapping_add(i as u64));
            let start = uniform_start(&mut rng, half);
            let w0 = uniform_in_disk(&mut rng);
            let noise = ReflectedBrownian::new(w0, p.sigma, cfg.dt, rng)?;
            integrate::drive(p, &run_cfg, start, noise, n_steps, |_, s| match binner.index(s) {
                Some(k) => acc.counts[k] += 1,
                None => acc.outside += 1,
            })
            .map_err(|source| DensityError::Integrate { start: i, source })?;
            Ok::<_, DensityError>(acc)
        })
        .try_reduce(empty, |a, b| Ok(a.merge(b)))?;
    let total = merged.counts.iter().sum();
    Ok(DensityGrid {
        nx: grid.nx,
        ny: grid.ny,
        extent: (-half, half, -half, half),
        counts: merged.counts,
        total,
        outside_extent: merged.outside,
        params: *p,
        protocol: *proto,
        integrator: run_cfg,
    })
}

impl DensityGrid {
    pub fn dx(&self) -> f64 {
        (self.extent.1 - self.extent.0) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.extent.3 - self.extent.2) / self.ny as f64
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.extent.0 + (ix as f64 + 0.5) * self.dx(),
            self.extent.2 + (iy as f64 + 0.5) * self.dy(),
        )
    }

    fn cells(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        (0..self.ny).flat_map(move |iy| {
            (0..self.nx).map(move |ix| {
                let (x, y) = self.cell_center(ix, iy);
                (x, y, self.counts[iy * self.nx + ix])
            })
        })
    }

    /// Fraction of binned samples whose cell centre satisfies `pred(r)`.
    pub fn fraction_where<F: Fn(f64) -> bool>(&self, pred: F) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let hits: u64 = self
            .cells()
            .filter(|(x, y, _)| pred(x.hypot(*y)))
            .map(|c| c.2)
            .sum();
        hits as f64 / self.total as f64
    }

    /// Counts per angular sector, sectors starting at `θ = 0`.
    pub fn angular_marginal(&self, n_sectors: usize) -> Vec<u64> {
        let mut out = vec![0; n_sectors.max(1)];
        for (x, y, c) in self.cells() {
            let theta = y.atan2(x).rem_euclid(2.0 * PI);
            let k = ((theta / (2.0 * PI) * out.len() as f64) as usize).min(out.len() - 1);
            out[k] += c;
        }
        out
    }

    /// Writes the `#`-prefixed header block, then `ix,iy,count` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let (x0, x1, y0, y1) = self.extent;
        let p = &self.params;
        writeln!(w, "# nx,ny,x_min,x_max,y_min,y_max,total,lambda,epsilon,sigma")?;
        writeln!(
            w,
            "# {},{},{x0},{x1},{y0},{y1},{},{},{},{}",
            self.nx, self.ny, self.total, p.lambda, p.epsilon, p.sigma
        )?;
        writeln!(w, "ix,iy,count")?;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                writeln!(w, "{ix},{iy},{}", self.counts[iy * self.nx + ix])?;
            }
        }
        Ok(())
    }

    /// 16-bit binary PGM, counts scaled linearly so the maximum is 65535.
    /// The top row is `y_max`. `comments` go into the header as `#` lines.
    pub fn write_pgm<W: Write>(&self, mut w: W, comments: &[String]) -> io::Result<()> {
        writeln!(w, "P5")?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{} {}", self.nx, self.ny)?;
        writeln!(w, "65535")?;
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let mut row = Vec::with_capacity(2 * self.nx);
        for iy in (0..self.ny).rev() {
            row.clear();
            for ix in 0..self.nx {
                let c = self.counts[iy * self.nx + ix] as f64;
                let v = (c / max * 65535.0).round() as u16;
                row.extend_from_slice(&v.to_be_bytes());
            }
            w.write_all(&row)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    /// Bin edges, `n + 1` values from 0 to the grid half-width.
    pub edges: Vec<f64>,
    /// Samples per unit area divided by the total, per bin; 0 for bins
    /// without cells.
    pub density: Vec<f64>,
    pub counts: Vec<u64>,
}

impl RadialProfile {
    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1]))
    }

    pub fn peak(&self) -> (f64, f64) {
        self.centers()
            .zip(self.density.iter().copied())
            .fold((0.0, f64::NEG_INFINITY), |best, (r, d)| if d > best.1 { (r, d) } else { best })
    }
}

/// Collapses the grid by cell-centre radius over the inscribed disk and
/// divides by the area of the cells in each bin.
pub fn radial_marginal(g: &DensityGrid, n_radial_bins: usize) -> RadialProfile {
    let n = n_radial_bins.max(1);
    let r_max = 0.5 * (g.extent.1 - g.extent.0).min(g.extent.3 - g.extent.2);
    let edges: Vec<f64> = (0..=n).map(|k| r_max * k as f64 / n as f64).collect();
    let mut counts = vec![0u64; n];
    let mut cells = vec![0u64; n];
    for (x, y, c) in g.cells() {
        let r = x.hypot(y);
        if r >= r_max {
            continue;
        }
        let k = ((r / r_max * n as f64) as usize).min(n - 1);
        counts[k] += c;
        cells[k] += 1;
    }
    let cell_area = g.dx() * g.dy();
    let total = g.total.max(1) as f64;
    let density = counts
        .iter()
        .zip(&cells)
        .map(|(&c, &m)| if m == 0 { 0.0 } else { c as f64 / (m as f64 * cell_area * total) })
        .collect();
    RadialProfile {
        edges,
        density,
        counts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportReport {
    /// Fraction of samples more than two bins outside the MFI closure,
    /// beyond the outer boundary or inside the hole.
    pub outside_fraction: f64,
    /// Fraction of samples more than two bins inside the inner boundary;
    /// absent for a disk.
    pub hole_fraction: Option<f64>,
    pub peak_radius: f64,
}

pub fn support_report(g: &DensityGrid, mfi: &MfiDescription) -> Result<SupportReport, DensityError> {
    if g.params != mfi.params {
        return Err(DensityError::ParamMismatch);
    }
    let ring = 2.0 * g.dx().max(g.dy());
    let mut beyond = 0u64;
    let mut hole = 0u64;
    for (x, y, c) in g.cells() {
        if c == 0 {
            continue;
        }
        let r = x.hypot(y);
        let theta = y.atan2(x);
        if r > mfi.outer_radius_at(theta) + ring {
            beyond += c;
        } else if mfi.inner.is_some() && r < mfi.inner_radius_at(theta) - ring {
            hole += c;
        }
    }
    let total = g.total.max(1) as f64;
    let profile = radial_marginal(g, (g.nx / 4).max(1));
    Ok(SupportReport {
        outside_fraction: (beyond + hole) as f64 / total,
        hole_fraction: mfi.inner.as_ref().map(|_| hole as f64 / total),
        peak_radius: profile.peak().0,
    })
}

/// Draws a point uniformly from the disk of radius `radius`.
pub fn uniform_start<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> PlanarState {
    let s = uniform_in_disk(rng);
    PlanarState::new(radius * s.u, radius * s.v)
}
