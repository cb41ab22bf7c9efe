//! Monte Carlo reflected Brownian motion: Euler steps with specular
//! reflection, first-exit times for registered regions, kernel histograms,
//! epsilon-strip boundary local time, and the spectrally computed local-Kato
//! modulus.
//!
//! Determinism: path `i` draws from ChaCha stream `i` of the run seed, and
//! per-path results are reduced in path order, so outputs are bitwise
//! independent of the worker count.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::geometry::{DomainSpec, Grid, Point, SubdomainMask};
use crate::spectral::SpectralDecomposition;
use crate::{Error, Result};

/// A region whose first exit time is recorded along each path.
#[derive(Clone, Debug)]
pub enum Region {
    /// `B(center, radius)` intersected with the closed domain. Exit is
    /// detected on the pre-reflection proposal or the post-step position.
    Ball { center: Point, radius: f64 },
    /// The union of the mask's grid cells. Exit is detected on the post-step
    /// position (proposals may leave the closure, where cell membership is
    /// undefined).
    Cells { mask: SubdomainMask },
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub horizon: f64,
    pub step: f64,
    pub paths: usize,
    pub seed: u64,
    /// Recorded observation times; snapped to the step grid.
    pub checkpoints: Vec<f64>,
    pub regions: Vec<Region>,
    /// Strip widths for the boundary local-time accumulators.
    pub strip_widths: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub start: Point,
    pub step: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Snapped checkpoint times.
    pub checkpoint_times: Vec<f64>,
    /// `[checkpoint][path]` positions.
    pub positions: Vec<Vec<Point>>,
    /// `[region][path]` exit times; `INFINITY` when not exited by the horizon.
    pub exit_times: Vec<Vec<f64>>,
    /// `[strip][path]` local-time accumulators `(1/eps) * occupation(E_eps)`.
    pub local_times: Vec<Vec<f64>>,
    /// Per strip: resolution warning `step >= eps^2`.
    pub strip_resolution_warning: Vec<bool>,
}

struct PathOutput {
    positions: Vec<Point>,
    exits: Vec<f64>,
    local: Vec<f64>,
}

/// Simulates reflected Euler paths. Gaussian increments have per-coordinate
/// variance `step` (generator Laplacian/2); the boundary is handled by
/// `DomainSpec::reflect_step`. `grid` is required for `Region::Cells`.
pub fn sample_paths(
    domain: &DomainSpec,
    grid: Option<&Grid>,
    x0: Point,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    if !domain.contains_closed(x0) {
        return Err(Error::Simulation(format!("start ({}, {}) outside the closure", x0.x, x0.y)));
    }
    if cfg.paths == 0 {
        return Err(Error::Simulation("need at least one path".into()));
    }
    if !(cfg.step > 0.0) || cfg.step > cfg.horizon.max(f64::MIN_POSITIVE) {
        if cfg.horizon > 0.0 {
            return Err(Error::Simulation(format!(
                "step {} must be positive and at most the horizon {}",
                cfg.step, cfg.horizon
            )));
        }
    }
    for r in &cfg.regions {
        if matches!(r, Region::Cells { .. }) && grid.is_none() {
            return Err(Error::Simulation("cell-mask regions need the grid".into()));
        }
    }

    let n_steps = if cfg.horizon <= 0.0 { 0 } else { (cfg.horizon / cfg.step).round() as u64 };
    let mut checkpoint_steps: Vec<u64> = cfg
        .checkpoints
        .iter()
        .map(|&t| (t / cfg.step).round().clamp(0.0, n_steps as f64) as u64)
        .collect();
    checkpoint_steps.sort_unstable();
    checkpoint_steps.dedup();
    let checkpoint_times: Vec<f64> = checkpoint_steps.iter().map(|&k| k as f64 * cfg.step).collect();

    let track_anything_to_horizon = !cfg.strip_widths.is_empty() || !checkpoint_steps.is_empty();
    let outputs: Vec<PathOutput> = (0..cfg.paths)
        .into_par_iter()
        .map(|path_idx| {
            run_path(
                domain,
                grid,
                x0,
                cfg,
                n_steps,
                &checkpoint_steps,
                track_anything_to_horizon,
                path_idx,
            )
        })
        .collect();

    // fixed path-index order reduction
    let mut positions = vec![Vec::with_capacity(cfg.paths); checkpoint_steps.len()];
    let mut exit_times = vec![Vec::with_capacity(cfg.paths); cfg.regions.len()];
    let mut local_times = vec![Vec::with_capacity(cfg.paths); cfg.strip_widths.len()];
    for out in outputs {
        for (c, p) in out.positions.into_iter().enumerate() {
            positions[c].push(p);
        }
        for (r, e) in out.exits.into_iter().enumerate() {
            exit_times[r].push(e);
        }
        for (s, l) in out.local.into_iter().enumerate() {
            local_times[s].push(l);
        }
    }
    let strip_resolution_warning =
        cfg.strip_widths.iter().map(|&e| cfg.step >= e * e).collect();
    Ok(PathEnsemble {
        start: x0,
        step: cfg.step,
        horizon: cfg.horizon,
        seed: cfg.seed,
        checkpoint_times,
        positions,
        exit_times,
        local_times,
        strip_resolution_warning,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    domain: &DomainSpec,
    grid: Option<&Grid>,
    x0: Point,
    cfg: &SimConfig,
    n_steps: u64,
    checkpoint_steps: &[u64],
    track_to_horizon: bool,
    path_idx: usize,
) -> PathOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path_idx as u64 + 1);
    let sqrt_dt = cfg.step.sqrt();
    let inv_eps: Vec<f64> = cfg.strip_widths.iter().map(|&e| 1.0 / e).collect();

    let mut positions = Vec::with_capacity(checkpoint_steps.len());
    let mut exits = vec![f64::INFINITY; cfg.regions.len()];
    let mut local = vec![0.0f64; cfg.strip_widths.len()];
    let mut unexited = cfg.regions.len();
    let mut next_checkpoint = 0usize;
    let mut pos = x0;

    // checkpoint at step 0 if requested
    while next_checkpoint < checkpoint_steps.len() && checkpoint_steps[next_checkpoint] == 0 {
        positions.push(pos);
        next_checkpoint += 1;
    }

    for k in 0..n_steps {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let proposal = pos + Point::new(z1, z2) * sqrt_dt;
        let newpos = domain.reflect_step(pos, proposal);
        let t_now = (k + 1) as f64 * cfg.step;

        if unexited > 0 {
            for (r, region) in cfg.regions.iter().enumerate() {
                if exits[r].is_finite() {
                    continue;
                }
                let exited = match region {
                    Region::Ball { center, radius } => {
                        proposal.dist(*center) >= *radius || newpos.dist(*center) >= *radius
                    }
                    Region::Cells { mask } => {
                        let g = grid.expect("grid checked");
                        match g.locate(newpos) {
                            Some(cell) => !mask.bits[cell],
                            None => true,
                        }
                    }
                };
                if exited {
                    exits[r] = t_now;
                    unexited -= 1;
                }
            }
        }

        if !inv_eps.is_empty() {
            let dist = domain.distance_to_boundary(newpos);
            for (s, &eps) in cfg.strip_widths.iter().enumerate() {
                if dist < eps {
                    local[s] += cfg.step * inv_eps[s];
                }
            }
        }

        pos = newpos;
        while next_checkpoint < checkpoint_steps.len() && checkpoint_steps[next_checkpoint] == k + 1
        {
            positions.push(pos);
            next_checkpoint += 1;
        }

        if !track_to_horizon && unexited == 0 {
            break;
        }
    }
    PathOutput { positions, exits, local }
}

impl PathEnsemble {
    pub fn path_count(&self) -> usize {
        if let Some(v) = self.exit_times.first() {
            v.len()
        } else if let Some(v) = self.positions.first() {
            v.len()
        } else if let Some(v) = self.local_times.first() {
            v.len()
        } else {
            0
        }
    }

    /// Empirical exit fraction `P(tau <= t)` for a region, with its binomial
    /// standard error.
    pub fn exit_tail(&self, region: usize, t: f64) -> (f64, f64) {
        let v = &self.exit_times[region];
        let n = v.len() as f64;
        let hits = v.iter().filter(|&&e| e <= t).count() as f64;
        let p = hits / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    /// Mean exit time of the paths that exited, with its standard error.
    pub fn mean_exit_time(&self, region: usize) -> (f64, f64) {
        let v: Vec<f64> = self.exit_times[region].iter().copied().filter(|e| e.is_finite()).collect();
        mean_se(&v)
    }

    /// Fraction of paths displaced at least `r` from the start at the given
    /// checkpoint, with binomial standard error.
    pub fn displacement_tail(&self, checkpoint: usize, r: f64) -> (f64, f64) {
        let v = &self.positions[checkpoint];
        let n = v.len() as f64;
        let hits = v.iter().filter(|p| p.dist(self.start) >= r).count() as f64;
        let p = hits / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    /// Mean and standard error of the strip local-time accumulator.
    pub fn local_time_stats(&self, strip: usize) -> (f64, f64) {
        mean_se(&self.local_times[strip])
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug)]
pub struct TailPoint {
    pub t: f64,
    pub p_hat: f64,
    pub stderr: f64,
}

/// Exit-tail estimates `P_x(tau_{B(x,r) & D} <= t)` at the listed times.
pub fn mc_exit_tail(
    domain: &DomainSpec,
    x0: Point,
    r: f64,
    times: &[f64],
    step: f64,
    paths: usize,
    seed: u64,
) -> Result<Vec<TailPoint>> {
    if !(r > 0.0) {
        return Err(Error::Simulation(format!("ball radius must be positive, got {r}")));
    }
    let horizon = times.iter().cloned().fold(0.0f64, f64::max);
    let cfg = SimConfig {
        horizon,
        step,
        paths,
        seed,
        checkpoints: vec![],
        regions: vec![Region::Ball { center: x0, radius: r }],
        strip_widths: vec![],
    };
    let ens = sample_paths(domain, None, x0, &cfg)?;
    Ok(times
        .iter()
        .map(|&t| {
            let (p, se) = ens.exit_tail(0, t);
            TailPoint { t, p_hat: p, stderr: se }
        })
        .collect())
}

/// Exit-tail estimates for leaving a cell-mask region.
pub fn mc_region_exit_tail(
    domain: &DomainSpec,
    grid: &Grid,
    mask: &SubdomainMask,
    x0: Point,
    times: &[f64],
    step: f64,
    paths: usize,
    seed: u64,
) -> Result<Vec<TailPoint>> {
    let horizon = times.iter().cloned().fold(0.0f64, f64::max);
    let cfg = SimConfig {
        horizon,
        step,
        paths,
        seed,
        checkpoints: vec![],
        regions: vec![Region::Cells { mask: mask.clone() }],
        strip_widths: vec![],
    };
    let ens = sample_paths(domain, Some(grid), x0, &cfg)?;
    Ok(times
        .iter()
        .map(|&t| {
            let (p, se) = ens.exit_tail(0, t);
            TailPoint { t, p_hat: p, stderr: se }
        })
        .collect())
}

/// Histogram kernel estimate: per-cell density `count / (N * measure)` at a
/// single time; integrates to one exactly by construction.
#[derive(Clone, Debug)]
pub struct McKernel {
    pub t: f64,
    pub densities: Array1<f64>,
    pub counts: Vec<u64>,
    pub paths: usize,
}

pub fn mc_kernel(
    domain: &DomainSpec,
    grid: &Grid,
    x0: Point,
    t: f64,
    step: f64,
    paths: usize,
    seed: u64,
) -> Result<McKernel> {
    if t < 10.0 * step {
        return Err(Error::Simulation(format!(
            "histogram time {t} under-resolved by step {step} (need t >= 10 step)"
        )));
    }
    let cfg = SimConfig {
        horizon: t,
        step,
        paths,
        seed,
        checkpoints: vec![t],
        regions: vec![],
        strip_widths: vec![],
    };
    let ens = sample_paths(domain, Some(grid), x0, &cfg)?;
    let mut counts = vec![0u64; grid.cell_count()];
    for p in &ens.positions[0] {
        let cell = grid
            .locate(*p)
            .ok_or_else(|| Error::Simulation(format!("position ({}, {}) not locatable", p.x, p.y)))?;
        counts[cell] += 1;
    }
    let n = paths as f64;
    let densities = Array1::from_iter(
        counts.iter().zip(grid.cells.iter()).map(|(&c, cell)| c as f64 / (n * cell.measure)),
    );
    Ok(McKernel { t, densities, counts, paths })
}

/// Boundary local-time estimates at strip widths `eps` and `eps/2`, plus the
/// Richardson extrapolation `2 L(eps/2) - L(eps)` that removes the strip
/// estimator's first-order bias.
#[derive(Clone, Debug)]
pub struct LocalTimeEstimate {
    pub horizon: f64,
    pub eps: f64,
    pub mean: f64,
    pub stderr: f64,
    pub mean_half: f64,
    pub stderr_half: f64,
    pub extrapolated: f64,
    pub extrapolated_stderr: f64,
    pub resolution_warning: bool,
}

pub fn mc_local_time(
    domain: &DomainSpec,
    x0: Point,
    horizon: f64,
    eps: f64,
    step: f64,
    paths: usize,
    seed: u64,
) -> Result<LocalTimeEstimate> {
    if !(eps > 0.0) {
        return Err(Error::Simulation(format!("strip width must be positive, got {eps}")));
    }
    let cfg = SimConfig {
        horizon,
        step,
        paths,
        seed,
        checkpoints: vec![],
        regions: vec![],
        strip_widths: vec![eps, eps / 2.0],
    };
    let ens = sample_paths(domain, None, x0, &cfg)?;
    let (mean, stderr) = ens.local_time_stats(0);
    let (mean_half, stderr_half) = ens.local_time_stats(1);
    let extrap: Vec<f64> = ens.local_times[1]
        .iter()
        .zip(&ens.local_times[0])
        .map(|(h, f)| 2.0 * h - f)
        .collect();
    let (extrapolated, extrapolated_stderr) = mean_se(&extrap);
    Ok(LocalTimeEstimate {
        horizon,
        eps,
        mean,
        stderr,
        mean_half,
        stderr_half,
        extrapolated,
        extrapolated_stderr,
        resolution_warning: ens.strip_resolution_warning.iter().any(|w| *w),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ModulusPoint {
    pub t: f64,
    pub value: f64,
    /// Set when `t` lies below the decomposition's reliability floor.
    pub flagged: bool,
}

/// Local-Kato modulus `max_x int_0^t sum_{faces in K} p_s(x, c_f) w_f ds`,
/// computed spectrally with the exact eigenmode time integral
/// `(1 - e^{-lambda t}) / lambda`.
pub fn kato_modulus(
    sd: &SpectralDecomposition,
    grid: &Grid,
    mask: &SubdomainMask,
    times: &[f64],
) -> Result<Vec<ModulusPoint>> {
    let k = sd.count();
    let n = sd.dim();
    // boundary-face weights of the mask, aggregated per eigenmode
    let mut u = vec![0.0f64; k];
    let mut any_face = false;
    for f in &grid.boundary_faces {
        if !mask.bits[f.cell] {
            continue;
        }
        let Some(row) = sd.row_of_cell(f.cell) else { continue };
        any_face = true;
        for j in 0..k {
            u[j] += f.length * sd.eigenvectors[(row, j)];
        }
    }
    // full spectrum represents the discrete semigroup exactly at every t > 0
    let floor = if k == n { 0.0 } else { sd.t_min };
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(t > 0.0) {
            return Err(Error::Simulation(format!("modulus time must be positive, got {t}")));
        }
        let value = if any_face {
            let mut coeff = Array1::zeros(k);
            for j in 0..k {
                let lam = sd.eigenvalues[j];
                let g = if lam <= 0.0 { t } else { (1.0 - (-lam * t).exp()) / lam };
                coeff[j] = u[j] * g;
            }
            let v = sd.eigenvectors.dot(&coeff);
            v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)).max(0.0)
        } else {
            0.0
        };
        out.push(ModulusPoint { t, value, flagged: t < floor });
    }
    Ok(out)
}
