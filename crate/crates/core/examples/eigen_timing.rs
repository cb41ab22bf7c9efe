//! Timing probe: Krylov eigensolve on a horn truncation at production scale.

use std::time::Instant;

use rbmlab::discretize::{assemble_neumann, assemble_part};
use rbmlab::geometry::{DomainSpec, Grid, TruncationScheme};
use rbmlab::spectral::eigensolve;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let h: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let k: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let cut: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32.0);
    let kind = args.get(4).map(String::as_str).unwrap_or("horn");

    let t0 = Instant::now();
    let domain = match kind {
        "square" => DomainSpec::rectangle(1.0, 1.0).unwrap(),
        _ => DomainSpec::horn(1.0, 1.0, 32.0).unwrap(),
    };
    let grid = Grid::build(&domain, h).unwrap();
    println!("grid: {} cells in {:?}", grid.cell_count(), t0.elapsed());

    let t0 = Instant::now();
    let scheme = TruncationScheme::HornCuts(vec![cut]);
    let mask = grid.truncate(&scheme, 0).unwrap();
    let op = if mask.is_all() {
        assemble_neumann(&grid).unwrap()
    } else {
        assemble_part(&grid, &mask).unwrap()
    };
    println!(
        "operator: dim {} nnz {} bandwidth {} in {:?}",
        op.dim(),
        op.matrix.nnz(),
        op.matrix.bandwidth(),
        t0.elapsed()
    );

    let t0 = Instant::now();
    let sd = eigensolve(&op, k).unwrap();
    println!(
        "eigensolve K={k}: lambda_1={:.6e} lambda_K={:.4} t_min={:.4} in {:?}",
        sd.eigenvalues[0],
        sd.lambda_top(),
        sd.t_min,
        t0.elapsed()
    );
}
