//! Command implementations. Each command writes its artifacts under the
//! output directory (atomically, via a temp file and rename) and registers
//! them for the summary report. Reruns of an identical config produce
//! byte-identical payloads: no timestamps, fixed iteration orders, and path
//! simulations that are independent of the worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context as _};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use rbmlab::discretize::{assemble_neumann, Operator};
use rbmlab::exhaust::{build_ladder, ExhaustionLadder};
use rbmlab::geometry::{DomainSpec, Grid, Point, TruncationScheme};
use rbmlab::simulate::{
    kato_modulus, mc_exit_tail, mc_kernel, mc_local_time, sample_paths, SimConfig,
};
use rbmlab::spectral::{eigensolve, SpectralDecomposition};
use rbmlab::verify::{
    fit_exit_bound, fit_gaussian_bound, fit_kato_rate, quarter_time, sobolev_scan,
    DisplacementSample, ExitSample, KernelSample, Window,
};

use crate::config::RunConfig;

pub struct Context {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    domain: DomainSpec,
    grid: Option<Arc<Grid>>,
    neumann: Option<Arc<Operator>>,
    sd: Option<Arc<SpectralDecomposition>>,
    ladder: Option<Arc<ExhaustionLadder>>,
    pub written: Vec<PathBuf>,
}

impl Context {
    pub fn new(cfg: RunConfig, out_dir: PathBuf) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(&cfg.domain)
            .with_context(|| format!("reading domain file {}", cfg.domain.display()))?;
        let domain = DomainSpec::parse(&text)?;
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Self {
            cfg,
            out_dir,
            domain,
            grid: None,
            neumann: None,
            sd: None,
            ladder: None,
            written: Vec::new(),
        })
    }

    fn grid(&mut self) -> anyhow::Result<Arc<Grid>> {
        if self.grid.is_none() {
            let g = Grid::build(&self.domain, self.cfg.grid.h)?;
            self.grid = Some(Arc::new(g));
        }
        Ok(self.grid.clone().unwrap())
    }

    fn neumann(&mut self) -> anyhow::Result<Arc<Operator>> {
        if self.neumann.is_none() {
            let grid = self.grid()?;
            self.neumann = Some(Arc::new(assemble_neumann(&grid)?));
        }
        Ok(self.neumann.clone().unwrap())
    }

    fn sd(&mut self) -> anyhow::Result<Arc<SpectralDecomposition>> {
        if self.sd.is_none() {
            let op = self.neumann()?;
            let k = self.cfg.spectral.count.min(op.dim());
            self.sd = Some(Arc::new(eigensolve(&op, k)?));
        }
        Ok(self.sd.clone().unwrap())
    }

    fn ladder(&mut self) -> anyhow::Result<Arc<ExhaustionLadder>> {
        if self.ladder.is_none() {
            let grid = self.grid()?;
            let scheme = match self.cfg.exhaust.scheme.as_deref() {
                Some("ball-radii") => TruncationScheme::BallRadii(self.cfg.exhaust.values.clone()),
                Some("horn-cuts") => TruncationScheme::HornCuts(self.cfg.exhaust.values.clone()),
                _ => bail!("exhaust.scheme missing"),
            };
            let ladder = build_ladder(
                &grid,
                &scheme,
                self.cfg.window.r,
                self.cfg.window.eps,
                self.cfg.spectral.count,
            )?;
            self.ladder = Some(Arc::new(ladder));
        }
        Ok(self.ladder.clone().unwrap())
    }

    fn mc_seed(&self) -> anyhow::Result<u64> {
        self.cfg.mc.seed.ok_or_else(|| anyhow!("mc.seed missing"))
    }

    fn mc_start(&mut self) -> anyhow::Result<Point> {
        if let Some([x, y]) = self.cfg.mc.start {
            return Ok(Point::new(x, y));
        }
        // default: the center cell of the grid's bounding box that lies inside
        let grid = self.grid()?;
        let bb = self.domain.bounding_box();
        let mid = Point::new(0.5 * (bb.x0 + bb.x1), 0.5 * (bb.y0 + bb.y1));
        let cell = grid
            .locate(mid)
            .ok_or_else(|| anyhow!("no default start cell; set mc.start"))?;
        Ok(grid.cells[cell].center)
    }

    fn write_file(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.out_dir.join(name);
        let tmp = self.out_dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &path).with_context(|| format!("renaming into {}", path.display()))?;
        if !self.written.contains(&path) {
            self.written.push(path);
        }
        Ok(())
    }

    fn read_csv(&self, name: &str) -> anyhow::Result<Vec<Vec<String>>> {
        let path = self.out_dir.join(name);
        let mut rdr = csv::Reader::from_path(&path)
            .with_context(|| format!("reading {} (run the producing command first)", path.display()))?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(|s| s.to_string()).collect());
        }
        Ok(rows)
    }
}

pub fn run_command(ctx: &mut Context, command: &str) -> anyhow::Result<()> {
    match command {
        "grid" => cmd_grid(ctx),
        "eig" => cmd_eig(ctx),
        "kernel" => cmd_kernel(ctx),
        "part" => cmd_part(ctx),
        "exhaust" => cmd_exhaust(ctx),
        "simulate" => cmd_simulate(ctx),
        "local-time" => cmd_local_time(ctx),
        "kato" => cmd_kato(ctx),
        "verify-gaussian" => cmd_verify_gaussian(ctx),
        "verify-exit" => cmd_verify_exit(ctx),
        "verify-quarter" => cmd_verify_quarter(ctx),
        "verify-kato" => cmd_verify_kato(ctx),
        "verify-sobolev" => cmd_verify_sobolev(ctx),
        "report" => cmd_report(ctx),
        other => bail!("unknown command {other:?}"),
    }
}

fn cmd_grid(ctx: &mut Context) -> anyhow::Result<()> {
    let grid = ctx.grid()?;
    let mut csv = String::from("cell,ix,iy,cx,cy,measure\n");
    for (i, c) in grid.cells.iter().enumerate() {
        writeln!(csv, "{i},{},{},{},{},{}", c.ix, c.iy, c.center.x, c.center.y, c.measure)?;
    }
    ctx.write_file("grid_cells.csv", csv.as_bytes())?;

    let mut csv = String::from("cell,length,mx,my\n");
    for f in &grid.boundary_faces {
        writeln!(csv, "{},{},{},{}", f.cell, f.length, f.midpoint.x, f.midpoint.y)?;
    }
    ctx.write_file("grid_boundary.csv", csv.as_bytes())?;

    if ctx.cfg.grid.dump_matrix {
        let op = ctx.neumann()?;
        let mut coo = String::from("row,col,value\n");
        for i in 0..op.matrix.n {
            for k in op.matrix.row_ptr[i]..op.matrix.row_ptr[i + 1] {
                writeln!(coo, "{i},{},{}", op.matrix.cols[k], op.matrix.vals[k])?;
            }
        }
        ctx.write_file("matrix_coo.csv", coo.as_bytes())?;
        let mut mass = String::from("cell,measure\n");
        for (i, m) in op.mass.iter().enumerate() {
            writeln!(mass, "{i},{m}")?;
        }
        ctx.write_file("mass.csv", mass.as_bytes())?;
    }
    Ok(())
}

fn cmd_eig(ctx: &mut Context) -> anyhow::Result<()> {
    let sd = ctx.sd()?;
    let mut csv = String::from("k,lambda\n");
    for (k, lam) in sd.eigenvalues.iter().enumerate() {
        writeln!(csv, "{},{lam}", k + 1)?;
    }
    ctx.write_file("eigenpairs.csv", csv.as_bytes())?;
    if ctx.cfg.spectral.dump_vectors {
        let mut csv = String::from("cell");
        for k in 1..=sd.count() {
            write!(csv, ",phi_{k}")?;
        }
        csv.push('\n');
        for i in 0..sd.dim() {
            write!(csv, "{i}")?;
            for k in 0..sd.count() {
                write!(csv, ",{}", sd.eigenvectors[(i, k)])?;
            }
            csv.push('\n');
        }
        ctx.write_file("eigenvectors.csv", csv.as_bytes())?;
    }
    Ok(())
}

fn kernel_eval_points(ctx: &mut Context) -> anyhow::Result<Vec<(usize, usize)>> {
    let grid = ctx.grid()?;
    let mut pairs = Vec::new();
    for &[x1, y1, x2, y2] in &ctx.cfg.kernel.pairs {
        let a = grid
            .locate(Point::new(x1, y1))
            .ok_or_else(|| anyhow!("kernel pair point ({x1}, {y1}) outside the grid"))?;
        let b = grid
            .locate(Point::new(x2, y2))
            .ok_or_else(|| anyhow!("kernel pair point ({x2}, {y2}) outside the grid"))?;
        pairs.push((a, b));
    }
    if ctx.cfg.kernel.random_pairs > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.kernel.sample_seed);
        for _ in 0..ctx.cfg.kernel.random_pairs {
            let a = rng.random_range(0..grid.cell_count());
            let b = rng.random_range(0..grid.cell_count());
            pairs.push((a, b));
        }
    }
    if pairs.is_empty() {
        bail!("no kernel pairs configured (kernel.pairs or kernel.random_pairs)");
    }
    Ok(pairs)
}

fn cmd_kernel(ctx: &mut Context) -> anyhow::Result<()> {
    let pairs = kernel_eval_points(ctx)?;
    let times = if ctx.cfg.kernel.times.is_empty() {
        vec![0.1]
    } else {
        ctx.cfg.kernel.times.clone()
    };
    let sd = ctx.sd()?;
    let grid = ctx.grid()?;
    let mut csv = String::from("t,i,j,x1,y1,x2,y2,value,tail\n");
    for &t in &times {
        for &(i, j) in &pairs {
            let est = sd.heat_kernel(t.max(sd.t_min), i, j)?;
            let a = grid.cells[i].center;
            let b = grid.cells[j].center;
            writeln!(
                csv,
                "{},{i},{j},{},{},{},{},{},{}",
                est.time, a.x, a.y, b.x, b.y, est.value, est.tail_bound
            )?;
        }
    }
    ctx.write_file("kernel.csv", csv.as_bytes())?;
    Ok(())
}

fn cmd_part(ctx: &mut Context) -> anyhow::Result<()> {
    let grid = ctx.grid()?;
    let mask = match ctx.cfg.part.kind.as_deref() {
        Some("ball") => {
            let [cx, cy] = ctx.cfg.part.center;
            grid.ball_mask("part", Point::new(cx, cy), ctx.cfg.part.radius)
        }
        Some("xcut") => grid.xcut_mask("part", ctx.cfg.part.x_cut),
        _ => bail!("part.kind missing"),
    };
    let op = rbmlab::discretize::assemble_part(&grid, &mask)?;
    let k = ctx.cfg.spectral.count.min(op.dim());
    let sd = eigensolve(&op, k)?;
    let pairs = kernel_eval_points(ctx)?;
    let times = if ctx.cfg.kernel.times.is_empty() {
        vec![0.1]
    } else {
        ctx.cfg.kernel.times.clone()
    };
    let mut csv = String::from("t,i,j,value,tail\n");
    for &t in &times {
        for &(i, j) in &pairs {
            let (Some(ri), Some(rj)) = (sd.row_of_cell(i), sd.row_of_cell(j)) else {
                continue; // pair outside the mask
            };
            let est = sd.heat_kernel(t.max(sd.t_min), ri, rj)?;
            writeln!(csv, "{},{i},{j},{},{}", est.time, est.value, est.tail_bound)?;
        }
    }
    ctx.write_file("part_kernel.csv", csv.as_bytes())?;
    Ok(())
}

fn cmd_exhaust(ctx: &mut Context) -> anyhow::Result<()> {
    let ladder = ctx.ladder()?;
    let grid = ctx.grid()?;
    let tol = ctx.cfg.exhaust.tol;
    let [t_lo, t_hi] = ctx.cfg.exhaust.t_range;
    let t_floor = ladder.levels.iter().map(|l| l.sd.t_min).fold(0.0f64, f64::max);

    // sample source cells from the first level, targets from the window
    let lvl1: Vec<usize> =
        (0..grid.cell_count()).filter(|&c| ladder.levels[0].mask.bits[c]).collect();
    let window: Vec<usize> =
        (0..grid.cell_count()).filter(|&c| ladder.window_mask.bits[c]).collect();
    if window.is_empty() {
        bail!("evaluation window D_eps_R is empty; shrink window.eps or window.r");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.exhaust.sample_seed);
    let mut csv = String::from("n,t,x,y,value,certificate,c_hat,n_used\n");
    for _ in 0..ctx.cfg.exhaust.samples {
        let t = (t_lo + rng.random::<f64>() * (t_hi - t_lo)).max(t_floor);
        let x = lvl1[rng.random_range(0..lvl1.len())];
        let y = window[rng.random_range(0..window.len())];
        let limit = ladder.limit_kernel(t, x, y, tol)?;
        for n in 1..=ladder.levels.len() {
            let ck = ladder.certified_kernel(n, t, x, y)?;
            writeln!(
                csv,
                "{n},{t},{x},{y},{},{},{},{}",
                ck.value, ck.certificate, ck.c_hat, limit.level_used
            )?;
        }
    }
    ctx.write_file("exhaust.csv", csv.as_bytes())?;
    Ok(())
}

fn cmd_simulate(ctx: &mut Context) -> anyhow::Result<()> {
    let seed = ctx.mc_seed()?;
    let start = ctx.mc_start()?;
    let domain = ctx.domain.clone();
    let mc = ctx.cfg.mc.clone();

    if mc.ball_radius > 0.0 && !mc.exit_times.is_empty() {
        let tails =
            mc_exit_tail(&domain, start, mc.ball_radius, &mc.exit_times, mc.delta, mc.paths, seed)?;
        let mut csv = String::from("r,t,p_hat,stderr\n");
        for tp in tails {
            writeln!(csv, "{},{},{},{}", mc.ball_radius, tp.t, tp.p_hat, tp.stderr)?;
        }
        ctx.write_file("exit_tails.csv", csv.as_bytes())?;
    }

    if !mc.displacement_radii.is_empty() && !mc.checkpoint_times.is_empty() {
        let cfg = SimConfig {
            horizon: mc.checkpoint_times.iter().cloned().fold(0.0, f64::max),
            step: mc.delta,
            paths: mc.paths,
            seed,
            checkpoints: mc.checkpoint_times.clone(),
            regions: vec![],
            strip_widths: vec![],
        };
        let ens = sample_paths(&domain, None, start, &cfg)?;
        let mut csv = String::from("r,t,p_hat,stderr\n");
        for (c, &t) in ens.checkpoint_times.iter().enumerate() {
            for &r in &mc.displacement_radii {
                let (p, se) = ens.displacement_tail(c, r);
                writeln!(csv, "{r},{t},{p},{se}")?;
            }
        }
        ctx.write_file("displacement_tails.csv", csv.as_bytes())?;
    }

    if let Some(t_hist) = mc.kernel_time {
        let grid = ctx.grid()?;
        let mk = mc_kernel(&domain, &grid, start, t_hist, mc.delta, mc.paths, seed)?;
        let mut csv = String::from("cell,density\n");
        for (i, d) in mk.densities.iter().enumerate() {
            writeln!(csv, "{i},{d}")?;
        }
        ctx.write_file("mc_kernel.csv", csv.as_bytes())?;
    }
    Ok(())
}

fn cmd_local_time(ctx: &mut Context) -> anyhow::Result<()> {
    let seed = ctx.mc_seed()?;
    let start = ctx.mc_start()?;
    let horizon = if ctx.cfg.mc.horizon > 0.0 {
        ctx.cfg.mc.horizon
    } else {
        bail!("mc.horizon required for local-time")
    };
    let eps_list =
        if ctx.cfg.mc.eps_list.is_empty() { vec![0.02] } else { ctx.cfg.mc.eps_list.clone() };
    let mut csv = String::from("eps,kind,mean,stderr,resolution_warning\n");
    for &eps in &eps_list {
        let est = mc_local_time(
            &ctx.domain.clone(),
            start,
            horizon,
            eps,
            ctx.cfg.mc.delta,
            ctx.cfg.mc.paths,
            seed,
        )?;
        writeln!(csv, "{eps},strip,{},{},{}", est.mean, est.stderr, est.resolution_warning)?;
        writeln!(
            csv,
            "{},strip,{},{},{}",
            eps / 2.0,
            est.mean_half,
            est.stderr_half,
            est.resolution_warning
        )?;
        writeln!(
            csv,
            "{eps},extrapolated,{},{},{}",
            est.extrapolated, est.extrapolated_stderr, est.resolution_warning
        )?;
    }
    ctx.write_file("local_time.csv", csv.as_bytes())?;
    Ok(())
}

fn cmd_kato(ctx: &mut Context) -> anyhow::Result<()> {
    let times = if ctx.cfg.kato.times.is_empty() {
        (0..13).map(|i| 1e-3 * 10f64.powf(i as f64 / 6.0)).collect()
    } else {
        ctx.cfg.kato.times.clone()
    };
    let grid = ctx.grid()?;
    let sd = if ctx.cfg.kato.full_spectrum && grid.cell_count() <= rbmlab::spectral::DENSE_CELL_LIMIT
    {
        let op = ctx.neumann()?;
        Arc::new(eigensolve(&op, op.dim())?)
    } else {
        ctx.sd()?
    };
    let mask = grid.all_mask();
    let curve = kato_modulus(&sd, &grid, &mask, &times)?;
    let mut csv = String::from("t,modulus,flagged\n");
    for p in &curve {
        writeln!(csv, "{},{},{}", p.t, p.value, p.flagged)?;
    }
    ctx.write_file("kato_modulus.csv", csv.as_bytes())?;
    Ok(())
}

fn parse_f64(s: &str) -> anyhow::Result<f64> {
    s.parse::<f64>().map_err(|e| anyhow!("bad number {s:?}: {e}"))
}

fn cmd_verify_gaussian(ctx: &mut Context) -> anyhow::Result<()> {
    let rows = ctx.read_csv("kernel.csv")?;
    let mut samples = Vec::new();
    let (mut t_lo, mut t_hi) = (f64::INFINITY, 0.0f64);
    for row in rows {
        // t,i,j,x1,y1,x2,y2,value,tail
        let t = parse_f64(&row[0])?;
        let (x1, y1) = (parse_f64(&row[3])?, parse_f64(&row[4])?);
        let (x2, y2) = (parse_f64(&row[5])?, parse_f64(&row[6])?);
        let value = parse_f64(&row[7])?;
        let dist_sq = (x1 - x2).powi(2) + (y1 - y2).powi(2);
        t_lo = t_lo.min(t);
        t_hi = t_hi.max(t);
        samples.push(KernelSample { t, dist_sq, value });
    }
    let window = Window { r: ctx.cfg.window.r, eps: ctx.cfg.window.eps, t_lo, t_hi };
    let fit = fit_gaussian_bound(&samples, window)?;
    ctx.write_file("gaussian_fit.json", serde_json::to_string_pretty(&fit)?.as_bytes())?;
    Ok(())
}

fn cmd_verify_exit(ctx: &mut Context) -> anyhow::Result<()> {
    let rows = ctx.read_csv("exit_tails.csv")?;
    let mut tails = Vec::new();
    for row in rows {
        tails.push(ExitSample {
            r: parse_f64(&row[0])?,
            t: parse_f64(&row[1])?,
            p_hat: parse_f64(&row[2])?,
            stderr: parse_f64(&row[3])?,
        });
    }
    let fit = fit_exit_bound(&tails)?;
    ctx.write_file("exit_fit.json", serde_json::to_string_pretty(&fit)?.as_bytes())?;
    Ok(())
}

fn cmd_verify_quarter(ctx: &mut Context) -> anyhow::Result<()> {
    let rows = ctx.read_csv("displacement_tails.csv")?;
    let mut samples = Vec::new();
    for row in rows {
        samples.push(DisplacementSample {
            r: parse_f64(&row[0])?,
            t: parse_f64(&row[1])?,
            p_hat: parse_f64(&row[2])?,
            stderr: parse_f64(&row[3])?,
        });
    }
    let fit = quarter_time(&samples)?;
    ctx.write_file("quarter_fit.json", serde_json::to_string_pretty(&fit)?.as_bytes())?;
    Ok(())
}

fn cmd_verify_kato(ctx: &mut Context) -> anyhow::Result<()> {
    let rows = ctx.read_csv("kato_modulus.csv")?;
    let mut curve = Vec::new();
    for row in rows {
        if row[2] == "true" {
            continue; // below the reliability floor
        }
        curve.push((parse_f64(&row[0])?, parse_f64(&row[1])?));
    }
    let fit = fit_kato_rate(&curve)?;
    ctx.write_file("kato_fit.json", serde_json::to_string_pretty(&fit)?.as_bytes())?;
    Ok(())
}

fn cmd_verify_sobolev(ctx: &mut Context) -> anyhow::Result<()> {
    let sob = ctx.cfg.sobolev.clone();
    let fit = sobolev_scan(
        &ctx.domain.clone(),
        &sob.truncations,
        sob.p,
        ctx.cfg.grid.h,
        sob.iters,
        sob.seed,
    )?;
    ctx.write_file("sobolev_fit.json", serde_json::to_string_pretty(&fit)?.as_bytes())?;
    if let Some(h_fine) = sob.h_fine {
        let fit_fine =
            sobolev_scan(&ctx.domain.clone(), &sob.truncations, sob.p, h_fine, sob.iters, sob.seed)?;
        ctx.write_file(
            "sobolev_fit_fine.json",
            serde_json::to_string_pretty(&fit_fine)?.as_bytes(),
        )?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct ReportEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(serde::Serialize)]
struct Report {
    domain: String,
    files: Vec<ReportEntry>,
}

fn cmd_report(ctx: &mut Context) -> anyhow::Result<()> {
    let mut names: Vec<String> = std::fs::read_dir(&ctx.out_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .filter(|n| n != "summary.json" && !n.starts_with('.'))
        .collect();
    names.sort();
    let mut files = Vec::new();
    for name in names {
        let bytes = std::fs::read(ctx.out_dir.join(&name))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        files.push(ReportEntry { file: name, bytes: bytes.len(), sha256: hex });
    }
    let report = Report { domain: ctx.domain.name.clone(), files };
    ctx.write_file("summary.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(())
}

/// Runs the configured commands sequentially, isolating failures: each
/// command either writes its complete artifacts or reports an error without
/// touching the others' outputs.
pub fn run_all(ctx: &mut Context, commands: &[String]) -> Vec<(String, Result<(), String>)> {
    let mut results = Vec::new();
    for c in commands {
        let r = run_command(ctx, c).map_err(|e| format!("{e:#}"));
        results.push((c.clone(), r));
    }
    results
}

pub fn relative_display(path: &Path) -> String {
    path.display().to_string()
}
