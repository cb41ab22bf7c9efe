//! Cut-cell lattice grids: cell measures by exact polygon clipping, face
//! transmissibilities, boundary-face surface weights, and named subdomain
//! masks (ball truncations, horn cuts, evaluation windows, strips).

use std::collections::HashMap;

use ndarray::Array1;

use super::clip::{clip_polygon_to_rect, signed_area, Rect};
use super::domain::DomainSpec;
use super::Point;
use crate::{Error, Result};

/// Hard cap on occupied cells; finer grids need a coarser `h`.
pub const MAX_CELLS: usize = 1_500_000;

/// Cells with clipped area below this fraction of `h^2` are merged into a
/// neighbor to keep the mass matrix well conditioned.
const SLIVER_FRACTION: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Cell {
    /// Lattice-cell center (not the centroid of the clipped region).
    pub center: Point,
    /// Clipped area; exact for the polygonal realization.
    pub measure: f64,
    pub ix: u32,
    pub iy: u32,
}

#[derive(Clone, Debug)]
pub struct InteriorFace {
    pub a: usize,
    pub b: usize,
    /// Cross-sectional length of the shared lattice edge inside the domain.
    pub length: f64,
    /// length / center distance; the two-point flux weight.
    pub transmissibility: f64,
}

#[derive(Clone, Debug)]
pub struct BoundaryFace {
    pub cell: usize,
    /// Euclidean length of the boundary piece inside the cell: the surface
    /// measure weight of this face.
    pub length: f64,
    pub midpoint: Point,
}

/// Bit mask over grid cells naming a subdomain.
#[derive(Clone, Debug)]
pub struct SubdomainMask {
    pub name: String,
    pub bits: Vec<bool>,
    pub predicate: String,
}

impl SubdomainMask {
    pub fn cardinality(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_all(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    pub fn is_subset_of(&self, other: &SubdomainMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn same_cells(&self, other: &SubdomainMask) -> bool {
        self.bits == other.bits
    }
}

/// Exhaustion truncation schedules: balls `B(R_n)` about the origin or horn
/// cuts `{x < X_n}`, strictly increasing.
#[derive(Clone, Debug)]
pub enum TruncationScheme {
    BallRadii(Vec<f64>),
    HornCuts(Vec<f64>),
}

impl TruncationScheme {
    pub fn len(&self) -> usize {
        match self {
            TruncationScheme::BallRadii(v) | TruncationScheme::HornCuts(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let v = match self {
            TruncationScheme::BallRadii(v) | TruncationScheme::HornCuts(v) => v,
        };
        if v.is_empty() {
            return Err(Error::Grid("empty truncation schedule".into()));
        }
        if v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Grid("truncation schedule must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub domain: DomainSpec,
    pub spacing: f64,
    pub cells: Vec<Cell>,
    pub interior_faces: Vec<InteriorFace>,
    pub boundary_faces: Vec<BoundaryFace>,
    origin: Point,
    nx: usize,
    ny: usize,
    lattice_to_cell: Vec<u32>,
}

const NO_CELL: u32 = u32::MAX;

impl Grid {
    pub fn build(domain: &DomainSpec, h: f64) -> Result<Grid> {
        if !(h > 0.0) {
            return Err(Error::Grid(format!("spacing must be positive, got {h}")));
        }
        let bbox = domain.bounding_box();
        let nx = ((bbox.width() / h) - 1e-9).ceil().max(1.0) as usize;
        let ny = ((bbox.height() / h) - 1e-9).ceil().max(1.0) as usize;
        if nx.saturating_mul(ny) > 64 * MAX_CELLS {
            return Err(Error::Grid(format!(
                "lattice {nx} x {ny} too fine; increase spacing h (currently {h})"
            )));
        }
        let origin = Point::new(bbox.x0, bbox.y0);
        let boundary = domain.boundary();

        // Bucket boundary segments by lattice column so cell classification
        // only looks at local geometry.
        let nseg = boundary.len();
        let mut col_segments: Vec<Vec<u32>> = vec![Vec::new(); nx];
        for s in 0..nseg {
            let a = boundary[s];
            let b = boundary[(s + 1) % nseg];
            let lo = (((a.x.min(b.x) - origin.x) / h).floor() as i64 - 1).max(0) as usize;
            let hi = ((((a.x.max(b.x) - origin.x) / h).ceil() as i64) + 1).min(nx as i64) as usize;
            for col in lo..hi.min(nx) {
                col_segments[col].push(s as u32);
            }
        }

        let mut cells: Vec<Cell> = Vec::new();
        let mut lattice_to_cell = vec![NO_CELL; nx * ny];
        // Column-major order keeps the operator bandwidth at the column height.
        for ix in 0..nx {
            for iy in 0..ny {
                let rect = Rect {
                    x0: origin.x + ix as f64 * h,
                    x1: origin.x + (ix + 1) as f64 * h,
                    y0: origin.y + iy as f64 * h,
                    y1: origin.y + (iy + 1) as f64 * h,
                };
                let center = Point::new(0.5 * (rect.x0 + rect.x1), 0.5 * (rect.y0 + rect.y1));
                let local = &col_segments[ix];
                let crossed = local.iter().any(|&s| {
                    let a = boundary[s as usize];
                    let b = boundary[(s as usize + 1) % nseg];
                    segment_touches_rect(a, b, &rect)
                });
                let measure = if crossed {
                    let clipped = clip_polygon_to_rect(boundary, &rect);
                    signed_area(&clipped)
                } else if domain.contains(center) {
                    h * h
                } else {
                    0.0
                };
                if measure > 0.0 {
                    if cells.len() >= MAX_CELLS {
                        return Err(Error::Grid(format!(
                            "cell count exceeds maximum {MAX_CELLS}; increase spacing h"
                        )));
                    }
                    lattice_to_cell[ix * ny + iy] = cells.len() as u32;
                    cells.push(Cell { center, measure, ix: ix as u32, iy: iy as u32 });
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Grid("no cells: spacing larger than the domain?".into()));
        }

        let mut grid = Grid {
            domain: domain.clone(),
            spacing: h,
            cells,
            interior_faces: Vec::new(),
            boundary_faces: Vec::new(),
            origin,
            nx,
            ny,
            lattice_to_cell,
        };
        grid.build_interior_faces(&col_segments)?;
        grid.build_boundary_faces();
        grid.merge_slivers();
        Ok(grid)
    }

    fn cell_at(&self, ix: i64, iy: i64) -> Option<usize> {
        if ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
            return None;
        }
        let c = self.lattice_to_cell[ix as usize * self.ny + iy as usize];
        (c != NO_CELL).then_some(c as usize)
    }

    fn build_interior_faces(&mut self, col_segments: &[Vec<u32>]) -> Result<()> {
        let h = self.spacing;
        let boundary = self.domain.boundary();
        let nseg = boundary.len();
        let mut faces = Vec::new();
        for idx in 0..self.cells.len() {
            let (ix, iy) = (self.cells[idx].ix as i64, self.cells[idx].iy as i64);
            // right neighbor and top neighbor only, to visit each face once
            for (jx, jy, vertical) in [(ix + 1, iy, true), (ix, iy + 1, false)] {
                let Some(jdx) = self.cell_at(jx, jy) else { continue };
                // Shared lattice edge between cell (ix,iy) and its neighbor.
                let (e0, e1) = if vertical {
                    let x = self.origin.x + (ix + 1) as f64 * h;
                    let y = self.origin.y + iy as f64 * h;
                    (Point::new(x, y), Point::new(x, y + h))
                } else {
                    let x = self.origin.x + ix as f64 * h;
                    let y = self.origin.y + (iy + 1) as f64 * h;
                    (Point::new(x, y), Point::new(x + h, y))
                };
                let col = ix.min(self.nx as i64 - 1).max(0) as usize;
                let mut candidates: Vec<u32> = col_segments[col].clone();
                if vertical && (ix + 1) < self.nx as i64 {
                    candidates.extend_from_slice(&col_segments[(ix + 1) as usize]);
                }
                candidates.sort_unstable();
                candidates.dedup();
                let inside_len = inside_length(&self.domain, boundary, nseg, &candidates, e0, e1);
                if inside_len > 1e-12 * h {
                    faces.push(InteriorFace {
                        a: idx,
                        b: jdx,
                        length: inside_len,
                        transmissibility: inside_len / h,
                    });
                }
            }
        }
        self.interior_faces = faces;
        Ok(())
    }

    /// Splits each boundary segment at lattice lines and attaches each piece
    /// to the cell on its interior side (ccw boundary: interior on the left).
    fn build_boundary_faces(&mut self) {
        let h = self.spacing;
        let boundary = self.domain.boundary();
        let nseg = boundary.len();
        let mut faces = Vec::new();
        for s in 0..nseg {
            let a = boundary[s];
            let b = boundary[(s + 1) % nseg];
            let len = a.dist(b);
            if len == 0.0 {
                continue;
            }
            let mut ts = vec![0.0, 1.0];
            // crossings with vertical lattice lines
            let d = b - a;
            if d.x != 0.0 {
                let ilo = (((a.x.min(b.x) - self.origin.x) / h).ceil()) as i64;
                let ihi = (((a.x.max(b.x) - self.origin.x) / h).floor()) as i64;
                for i in ilo..=ihi {
                    let t = (self.origin.x + i as f64 * h - a.x) / d.x;
                    if t > 0.0 && t < 1.0 {
                        ts.push(t);
                    }
                }
            }
            if d.y != 0.0 {
                let jlo = (((a.y.min(b.y) - self.origin.y) / h).ceil()) as i64;
                let jhi = (((a.y.max(b.y) - self.origin.y) / h).floor()) as i64;
                for j in jlo..=jhi {
                    let t = (self.origin.y + j as f64 * h - a.y) / d.y;
                    if t > 0.0 && t < 1.0 {
                        ts.push(t);
                    }
                }
            }
            ts.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
            let inward = Point::new(-d.y / len, d.x / len);
            for w in ts.windows(2) {
                let (t0, t1) = (w[0], w[1]);
                if t1 - t0 <= 1e-14 {
                    continue;
                }
                let piece_len = (t1 - t0) * len;
                let mid = a + d * (0.5 * (t0 + t1));
                // Nudge toward the interior so pieces on lattice lines land in
                // the inside cell, never the outside one.
                let probe = mid + inward * (1e-6 * h);
                if let Some(cell) = self.locate_raw(probe) {
                    faces.push(BoundaryFace { cell, length: piece_len, midpoint: mid });
                }
            }
        }
        self.boundary_faces = faces;
    }

    fn merge_slivers(&mut self) {
        let h = self.spacing;
        let threshold = SLIVER_FRACTION * h * h;
        let n = self.cells.len();
        let slivers: Vec<bool> = self.cells.iter().map(|c| c.measure < threshold).collect();
        if !slivers.iter().any(|s| *s) {
            return;
        }
        // neighbor lists from faces
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for f in &self.interior_faces {
            neighbors[f.a].push(f.b);
            neighbors[f.b].push(f.a);
        }
        // union-find: sliver joins its largest-measure neighbor
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for i in 0..n {
            if slivers[i] {
                let host = neighbors[i]
                    .iter()
                    .copied()
                    .max_by(|&p, &q| {
                        self.cells[p]
                            .measure
                            .partial_cmp(&self.cells[q].measure)
                            .unwrap()
                            .then(q.cmp(&p))
                    });
                if let Some(host) = host {
                    let r = find(&mut parent, host);
                    parent[i] = r;
                }
                // isolated slivers keep their own index and survive as cells
            }
        }
        // new compressed indices for roots
        let mut new_index = vec![usize::MAX; n];
        let mut new_cells: Vec<Cell> = Vec::new();
        for i in 0..n {
            if find(&mut parent, i) == i {
                new_index[i] = new_cells.len();
                new_cells.push(self.cells[i].clone());
            }
        }
        for i in 0..n {
            let r = find(&mut parent, i);
            if r != i {
                new_cells[new_index[r]].measure += self.cells[i].measure;
            }
        }
        // remap faces
        let mut face_acc: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
        for f in &self.interior_faces {
            let ra = new_index[find(&mut parent, f.a)];
            let rb = new_index[find(&mut parent, f.b)];
            if ra == rb {
                continue;
            }
            let key = (ra.min(rb), ra.max(rb));
            let e = face_acc.entry(key).or_insert((0.0, 0.0));
            e.0 += f.length;
            e.1 += f.transmissibility;
        }
        let mut merged_faces: Vec<InteriorFace> = face_acc
            .into_iter()
            .map(|((a, b), (length, transmissibility))| InteriorFace { a, b, length, transmissibility })
            .collect();
        merged_faces.sort_unstable_by_key(|f| (f.a, f.b));
        for f in &mut self.boundary_faces {
            f.cell = new_index[find(&mut parent, f.cell)];
        }
        for slot in self.lattice_to_cell.iter_mut() {
            if *slot != NO_CELL {
                *slot = new_index[find(&mut parent, *slot as usize)] as u32;
            }
        }
        self.cells = new_cells;
        self.interior_faces = merged_faces;
    }

    fn locate_raw(&self, p: Point) -> Option<usize> {
        let ix = ((p.x - self.origin.x) / self.spacing).floor() as i64;
        let iy = ((p.y - self.origin.y) / self.spacing).floor() as i64;
        self.cell_at(ix, iy)
    }

    /// Cell containing `p`; for points of the closure on empty lattice slots
    /// (corner touches) the nearest occupied neighbor slot within one ring.
    pub fn locate(&self, p: Point) -> Option<usize> {
        if let Some(c) = self.locate_raw(p) {
            return Some(c);
        }
        let ix = ((p.x - self.origin.x) / self.spacing).floor() as i64;
        let iy = ((p.y - self.origin.y) / self.spacing).floor() as i64;
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                if let Some(c) = self.cell_at(ix + dx, iy + dy) {
                    let d = self.cells[c].center.dist(p);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, c));
                    }
                }
            }
        }
        best.map(|(_, c)| c)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn measures(&self) -> Array1<f64> {
        Array1::from_iter(self.cells.iter().map(|c| c.measure))
    }

    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    pub fn boundary_length(&self) -> f64 {
        self.boundary_faces.iter().map(|f| f.length).sum()
    }

    pub fn mask_from_predicate(
        &self,
        name: &str,
        predicate_desc: &str,
        pred: impl Fn(Point) -> bool,
    ) -> SubdomainMask {
        SubdomainMask {
            name: name.to_string(),
            bits: self.cells.iter().map(|c| pred(c.center)).collect(),
            predicate: predicate_desc.to_string(),
        }
    }

    /// Cells with centers in the ball `B(center, r)`.
    pub fn ball_mask(&self, name: &str, center: Point, r: f64) -> SubdomainMask {
        self.mask_from_predicate(name, &format!("|x - ({}, {})| < {r}", center.x, center.y), |c| {
            c.dist(center) < r
        })
    }

    /// Cells with centers `x < x_cut`.
    pub fn xcut_mask(&self, name: &str, x_cut: f64) -> SubdomainMask {
        self.mask_from_predicate(name, &format!("x < {x_cut}"), |c| c.x < x_cut)
    }

    pub fn all_mask(&self) -> SubdomainMask {
        self.mask_from_predicate("all", "true", |_| true)
    }

    /// Exhaustion truncation mask for level `n` (0-based) of the scheme.
    pub fn truncate(&self, scheme: &TruncationScheme, n: usize) -> Result<SubdomainMask> {
        scheme.validate()?;
        match scheme {
            TruncationScheme::BallRadii(radii) => {
                let r = *radii
                    .get(n)
                    .ok_or_else(|| Error::Grid(format!("level {n} out of schedule range")))?;
                Ok(self.ball_mask(&format!("K{}", n + 1), Point::new(0.0, 0.0), r))
            }
            TruncationScheme::HornCuts(cuts) => {
                let x = *cuts
                    .get(n)
                    .ok_or_else(|| Error::Grid(format!("level {n} out of schedule range")))?;
                Ok(self.xcut_mask(&format!("K{}", n + 1), x))
            }
        }
    }

    /// The pair of evaluation-window masks: `D_R` (centers inside `B(R)`) and
    /// `D_{eps,R}` (centers farther than `eps*R` from every cell of the
    /// complement of `B(R)`).
    pub fn window_masks(&self, r: f64, eps: f64) -> (SubdomainMask, SubdomainMask) {
        let origin = Point::new(0.0, 0.0);
        let d_r = self.ball_mask("D_R", origin, r);
        let outside: Vec<Point> = self
            .cells
            .iter()
            .filter(|c| c.center.dist(origin) >= r)
            .map(|c| c.center)
            .collect();
        let radius = eps * r;
        let bits: Vec<bool> = if outside.is_empty() {
            vec![true; self.cells.len()]
        } else {
            // bucket outside centers for range queries of radius eps*R
            let bs = radius.max(self.spacing);
            let key = |p: Point| ((p.x / bs).floor() as i64, (p.y / bs).floor() as i64);
            let mut buckets: HashMap<(i64, i64), Vec<Point>> = HashMap::new();
            for p in &outside {
                buckets.entry(key(*p)).or_default().push(*p);
            }
            let reach = (radius / bs).ceil() as i64 + 1;
            self.cells
                .iter()
                .map(|c| {
                    let (kx, ky) = key(c.center);
                    for dx in -reach..=reach {
                        for dy in -reach..=reach {
                            if let Some(v) = buckets.get(&(kx + dx, ky + dy)) {
                                if v.iter().any(|p| p.dist(c.center) <= radius) {
                                    return false;
                                }
                            }
                        }
                    }
                    true
                })
                .collect()
        };
        let d_eps_r = SubdomainMask {
            name: "D_eps_R".into(),
            bits,
            predicate: format!("dist to complement of B({r}) > {radius}"),
        };
        (d_r, d_eps_r)
    }

    /// Measure of the cells selected by a mask.
    pub fn mask_measure(&self, mask: &SubdomainMask) -> f64 {
        self.cells
            .iter()
            .zip(&mask.bits)
            .filter_map(|(c, b)| b.then_some(c.measure))
            .sum()
    }
}

fn segment_touches_rect(a: Point, b: Point, r: &Rect) -> bool {
    let (lox, hix) = (a.x.min(b.x), a.x.max(b.x));
    let (loy, hiy) = (a.y.min(b.y), a.y.max(b.y));
    hix >= r.x0 && lox <= r.x1 && hiy >= r.y0 && loy <= r.y1
}

/// Length of the part of segment `e0->e1` inside the closed domain, by
/// splitting at boundary crossings and testing midpoints.
fn inside_length(
    domain: &DomainSpec,
    boundary: &[Point],
    nseg: usize,
    candidates: &[u32],
    e0: Point,
    e1: Point,
) -> f64 {
    let mut ts = vec![0.0, 1.0];
    for &s in candidates {
        let a = boundary[s as usize];
        let b = boundary[(s as usize + 1) % nseg];
        if let Some((t, _)) = super::clip::segment_intersection(e0, e1, a, b) {
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    let len = e0.dist(e1);
    let mut acc = 0.0;
    for w in ts.windows(2) {
        if w[1] - w[0] <= 1e-14 {
            continue;
        }
        let mid = e0 + (e1 - e0) * (0.5 * (w[0] + w[1]));
        if domain.contains(mid) {
            acc += (w[1] - w[0]) * len;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_exact_cells() {
        let d = DomainSpec::rectangle(1.0, 1.0).unwrap();
        let g = Grid::build(&d, 0.25).unwrap();
        assert_eq!(g.cell_count(), 16);
        assert!((g.total_measure() - 1.0).abs() < 1e-14);
        assert!((g.boundary_length() - 4.0).abs() < 1e-12);
        // interior faces: 2 * 4 * 3 = 24, all with transmissibility 1
        assert_eq!(g.interior_faces.len(), 24);
        for f in &g.interior_faces {
            assert!((f.transmissibility - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn square_boundary_sum_various_h() {
        let d = DomainSpec::rectangle(1.0, 1.0).unwrap();
        for h in [0.25, 0.125, 0.0625] {
            let g = Grid::build(&d, h).unwrap();
            assert!((g.boundary_length() - 4.0).abs() < 1e-10, "h={h}");
            assert!((g.total_measure() - 1.0).abs() < 1e-12, "h={h}");
        }
    }

    #[test]
    fn pentagon_measure_matches_polygon_area() {
        // convex pentagon
        let d = DomainSpec::polygon(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.1),
            Point::new(1.3, 0.9),
            Point::new(0.5, 1.4),
            Point::new(-0.3, 0.8),
        ])
        .unwrap();
        let area = d.area();
        let perim = d.perimeter();
        let mut prev_perim = f64::INFINITY;
        for h in [0.2, 0.1, 0.05] {
            let g = Grid::build(&d, h).unwrap();
            // cell measures sum to the clipped polygon area to ~exact precision
            assert!(
                (g.total_measure() - area).abs() < 1e-10 * area.max(1.0),
                "h={h}: {} vs {}",
                g.total_measure(),
                area
            );
            let bl = g.boundary_length();
            assert!((bl - perim).abs() < 1e-9, "h={h}: boundary {bl} vs perimeter {perim}");
            assert!(bl <= prev_perim + 1e-9);
            prev_perim = bl;
        }
    }

    #[test]
    fn horn_measure_near_analytic() {
        let d = DomainSpec::horn(1.0, 1.0, std::f64::consts::E).unwrap();
        let g = Grid::build(&d, 0.01).unwrap();
        assert!((g.total_measure() - 2.0).abs() < 0.02, "measure {}", g.total_measure());
        // and exactly the polygon realization area
        assert!((g.total_measure() - d.area()).abs() < 1e-9);
    }

    #[test]
    fn truncation_masks_nested_and_cover() {
        let d = DomainSpec::horn(1.0, 1.0, 16.0).unwrap();
        let g = Grid::build(&d, 0.05).unwrap();
        let scheme = TruncationScheme::HornCuts(vec![2.0, 4.0, 8.0, 16.0]);
        let mut prev: Option<SubdomainMask> = None;
        for n in 0..scheme.len() {
            let m = g.truncate(&scheme, n).unwrap();
            if let Some(p) = &prev {
                assert!(p.is_subset_of(&m), "masks not nested at level {n}");
            }
            prev = Some(m);
        }
        assert!(prev.unwrap().is_all(), "final cut must cover the grid");
        // mask measure growth ~ 2 ln X_n for p = 1
        for (n, x) in [(1usize, 4.0f64), (2, 8.0), (3, 16.0)] {
            let m = g.truncate(&scheme, n).unwrap();
            let measured = g.mask_measure(&m);
            let expect = 2.0 * x.ln();
            assert!(
                (measured - expect).abs() < 0.12,
                "cut {x}: measure {measured} vs 2 ln X = {expect}"
            );
        }
    }

    #[test]
    fn ball_schedule_saturates_on_bounded_domain() {
        let d = DomainSpec::rectangle(1.0, 1.0).unwrap();
        let g = Grid::build(&d, 0.125).unwrap();
        let m = g.truncate(&TruncationScheme::BallRadii(vec![5.0]), 0).unwrap();
        assert!(m.is_all());
    }

    #[test]
    fn window_masks_ordering() {
        let d = DomainSpec::horn(1.0, 1.0, 8.0).unwrap();
        let g = Grid::build(&d, 0.05).unwrap();
        let (d_r, d_eps_r) = g.window_masks(3.0, 0.2);
        assert!(d_eps_r.cardinality() > 0);
        assert!(d_eps_r.is_subset_of(&d_r));
        assert!(d_r.cardinality() < g.cell_count());
    }

    #[test]
    fn increasing_schedule_required() {
        let d = DomainSpec::rectangle(1.0, 1.0).unwrap();
        let g = Grid::build(&d, 0.25).unwrap();
        assert!(g.truncate(&TruncationScheme::BallRadii(vec![2.0, 2.0]), 0).is_err());
    }

    #[test]
    fn locate_positions() {
        let d = DomainSpec::rectangle(1.0, 1.0).unwrap();
        let g = Grid::build(&d, 0.25).unwrap();
        let c = g.locate(Point::new(0.55, 0.1)).unwrap();
        assert_eq!(g.cells[c].ix, 2);
        assert_eq!(g.cells[c].iy, 0);
        assert!(g.locate(Point::new(0.999999, 0.999999)).is_some());
        assert!(g.locate(Point::new(5.0, 5.0)).is_none());
    }
}
