//! Domain descriptions: rectangles, simple polygons, and horn-shaped domains
//! `{(x, y) : 1 < x < x_max, |y| < c x^{-p}}`.
//!
//! Every domain is realized internally as a single counterclockwise simple
//! polygon (the horn profile is sampled to a fine polyline whose vertices lie
//! on the exact curve). All measure, containment, reflection, and clipping
//! queries are answered against that one realization so they agree with each
//! other exactly.

use serde::Deserialize;

use super::clip::{
    closest_point_on_segment, point_in_polygon, segment_intersection, segments_properly_intersect,
    signed_area, Rect,
};
use super::Point;
use crate::{Error, Result};

/// Number of profile samples per horn wall; the chord error is O((dx)^2) and
/// stays far below any grid spacing used at desk scale.
const HORN_WALL_SEGMENTS: usize = 8192;

/// Iteration cap for specular reflection before the projection fallback.
const REFLECT_MAX_BOUNCES: usize = 4;

/// Containment slack for "in the closure" tests, relative to domain scale.
const CLOSURE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum DomainKind {
    Rectangle { width: f64, height: f64 },
    Polygon { vertices: Vec<Point> },
    Horn { exponent: f64, scale: f64, x_max: f64 },
}

/// A validated domain with its polygonal realization.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub name: String,
    kind: DomainKind,
    /// Closed ccw polygon realizing the domain boundary.
    boundary: Vec<Point>,
    bbox: Rect,
    scale: f64,
}

#[derive(Deserialize)]
struct DomainFile {
    name: Option<String>,
    kind: String,
    #[serde(default)]
    params: DomainParams,
}

#[derive(Deserialize, Default)]
struct DomainParams {
    width: Option<f64>,
    height: Option<f64>,
    vertices: Option<Vec<[f64; 2]>>,
    exponent: Option<f64>,
    scale: Option<f64>,
    x_max: Option<f64>,
}

impl DomainSpec {
    pub fn rectangle(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0) || !(height > 0.0) {
            return Err(Error::DomainSpec(format!(
                "rectangle sides must be positive, got {width} x {height}"
            )));
        }
        let boundary = vec![
            Point::new(0.0, 0.0),
            Point::new(width, 0.0),
            Point::new(width, height),
            Point::new(0.0, height),
        ];
        Ok(Self::from_parts("rectangle".into(), DomainKind::Rectangle { width, height }, boundary))
    }

    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DomainSpec("polygon needs at least 3 vertices".into()));
        }
        let area = signed_area(&vertices);
        if area <= 0.0 {
            return Err(Error::DomainSpec(format!(
                "polygon must be counterclockwise with positive area, signed area {area}"
            )));
        }
        let n = vertices.len();
        for i in 0..n {
            let (a0, a1) = (vertices[i], vertices[(i + 1) % n]);
            if a0.dist(a1) == 0.0 {
                return Err(Error::DomainSpec(format!("degenerate zero-length edge at vertex {i}")));
            }
            for j in i + 1..n {
                let (b0, b1) = (vertices[j], vertices[(j + 1) % n]);
                if segments_properly_intersect(a0, a1, b0, b1) {
                    return Err(Error::DomainSpec(format!(
                        "self-intersection between edges {i} and {j}"
                    )));
                }
            }
        }
        Ok(Self::from_parts(
            "polygon".into(),
            DomainKind::Polygon { vertices: vertices.clone() },
            vertices,
        ))
    }

    pub fn horn(exponent: f64, scale: f64, x_max: f64) -> Result<Self> {
        if !(exponent > 0.0) {
            return Err(Error::DomainSpec(format!("horn exponent must be > 0, got {exponent}")));
        }
        if !(scale > 0.0) {
            return Err(Error::DomainSpec(format!("horn scale must be > 0, got {scale}")));
        }
        if !(x_max > 1.0) {
            return Err(Error::DomainSpec(format!("horn x_max must exceed 1, got {x_max}")));
        }
        let profile = |x: f64| scale * x.powf(-exponent);
        let n = HORN_WALL_SEGMENTS;
        let dx = (x_max - 1.0) / n as f64;
        // ccw: lower wall left to right, right cap up, upper wall right to left.
        let mut boundary = Vec::with_capacity(2 * n + 2);
        for i in 0..=n {
            let x = 1.0 + dx * i as f64;
            boundary.push(Point::new(x, -profile(x)));
        }
        for i in (0..=n).rev() {
            let x = 1.0 + dx * i as f64;
            boundary.push(Point::new(x, profile(x)));
        }
        Ok(Self::from_parts(
            "horn".into(),
            DomainKind::Horn { exponent, scale, x_max },
            boundary,
        ))
    }

    /// Parses the structured-text domain file (TOML with `kind`, `params`,
    /// optional `name`).
    pub fn parse(text: &str) -> Result<Self> {
        let file: DomainFile =
            toml::from_str(text).map_err(|e| Error::DomainSpec(format!("parse failure: {e}")))?;
        let mut spec = match file.kind.as_str() {
            "rectangle" => {
                let w = file.params.width.ok_or_else(|| miss("width"))?;
                let h = file.params.height.ok_or_else(|| miss("height"))?;
                Self::rectangle(w, h)?
            }
            "polygon" => {
                let verts = file.params.vertices.ok_or_else(|| miss("vertices"))?;
                Self::polygon(verts.into_iter().map(|v| Point::new(v[0], v[1])).collect())?
            }
            "horn" => {
                let p = file.params.exponent.ok_or_else(|| miss("exponent"))?;
                let c = file.params.scale.ok_or_else(|| miss("scale"))?;
                let x_max = file.params.x_max.ok_or_else(|| miss("x_max"))?;
                Self::horn(p, c, x_max)?
            }
            other => {
                return Err(Error::DomainSpec(format!(
                    "unknown kind {other:?}; expected rectangle, polygon, or horn"
                )))
            }
        };
        if let Some(name) = file.name {
            spec.name = name;
        }
        Ok(spec)
    }

    fn from_parts(name: String, kind: DomainKind, boundary: Vec<Point>) -> Self {
        let mut bbox = Rect { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for p in &boundary {
            bbox.x0 = bbox.x0.min(p.x);
            bbox.x1 = bbox.x1.max(p.x);
            bbox.y0 = bbox.y0.min(p.y);
            bbox.y1 = bbox.y1.max(p.y);
        }
        let scale = bbox.width().max(bbox.height());
        Self { name, kind, boundary, bbox, scale }
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    /// The polygonal boundary realization, counterclockwise.
    pub fn boundary(&self) -> &[Point] {
        &self.boundary
    }

    pub fn bounding_box(&self) -> Rect {
        self.bbox
    }

    /// Area of the polygonal realization.
    pub fn area(&self) -> f64 {
        signed_area(&self.boundary)
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.boundary.len();
        (0..n).map(|i| self.boundary[i].dist(self.boundary[(i + 1) % n])).sum()
    }

    /// True iff `p` lies in the open domain.
    pub fn contains(&self, p: Point) -> bool {
        match &self.kind {
            DomainKind::Rectangle { width, height } => {
                p.x > 0.0 && p.x < *width && p.y > 0.0 && p.y < *height
            }
            DomainKind::Horn { .. } => {
                if p.x <= 1.0 || p.x >= self.bbox.x1 {
                    return false;
                }
                p.y.abs() < self.horn_chord(p.x)
            }
            DomainKind::Polygon { .. } => {
                self.bbox.contains(p) && point_in_polygon(&self.boundary, p)
            }
        }
    }

    /// True iff `p` lies in the closed domain, up to a relative tolerance.
    pub fn contains_closed(&self, p: Point) -> bool {
        self.contains(p) || self.distance_to_boundary(p) <= CLOSURE_TOL * self.scale
    }

    /// Chord height of the polygonalized horn wall at abscissa `x in (1, x_max)`.
    fn horn_chord(&self, x: f64) -> f64 {
        let x_max = self.bbox.x1;
        let n = HORN_WALL_SEGMENTS;
        let dx = (x_max - 1.0) / n as f64;
        let fi = ((x - 1.0) / dx).floor();
        let i = (fi as usize).min(n - 1);
        // lower wall vertices are boundary[0..=n] at x = 1 + dx*i with y = -H
        let a = self.boundary[i];
        let b = self.boundary[i + 1];
        let t = ((x - a.x) / (b.x - a.x)).clamp(0.0, 1.0);
        -(a.y + (b.y - a.y) * t)
    }

    /// Distance from `p` to the boundary realization.
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        match &self.kind {
            DomainKind::Rectangle { width, height } => {
                if self.contains(p) {
                    (p.x.min(width - p.x)).min(p.y.min(height - p.y))
                } else {
                    let q = Point::new(p.x.clamp(0.0, *width), p.y.clamp(0.0, *height));
                    let to_rect = p.dist(q);
                    if to_rect > 0.0 {
                        to_rect
                    } else {
                        0.0
                    }
                }
            }
            _ => self.project_to_boundary(p).1,
        }
    }

    /// Closest boundary point and its distance.
    pub fn project_to_boundary(&self, p: Point) -> (Point, f64) {
        fn consider(best: &mut (Point, f64), p: Point, a: Point, b: Point) {
            let q = closest_point_on_segment(p, a, b);
            let d = p.dist(q);
            if d < best.1 {
                *best = (q, d);
            }
        }
        let mut best = (self.boundary[0], f64::INFINITY);
        match &self.kind {
            DomainKind::Horn { .. } => {
                // Walls are uniformly sampled in x: walk columns outward from
                // p.x and stop once the x-gap alone exceeds the current best.
                let n = HORN_WALL_SEGMENTS;
                let x_max = self.bbox.x1;
                let dx = (x_max - 1.0) / n as f64;
                let m = self.boundary.len();
                let ic = (((p.x - 1.0) / dx).floor() as i64).clamp(0, n as i64 - 1);
                for off in 0..n as i64 {
                    let mut any = false;
                    for i in [ic - off, ic + off] {
                        if i < 0 || i >= n as i64 || (off > 0 && i == ic) {
                            continue;
                        }
                        any = true;
                        let i = i as usize;
                        // lower wall segment i, upper wall mirrored
                        consider(&mut best, p, self.boundary[i], self.boundary[i + 1]);
                        consider(&mut best, p, self.boundary[m - 2 - i], self.boundary[m - 1 - i]);
                    }
                    let xgap = (off.max(0) as f64 - 1.0).max(0.0) * dx;
                    if !any || xgap > best.1 {
                        break;
                    }
                }
                // end caps
                consider(&mut best, p, self.boundary[n], self.boundary[n + 1]); // right cap
                consider(&mut best, p, self.boundary[m - 1], self.boundary[0]); // mouth
            }
            _ => {
                let n = self.boundary.len();
                for i in 0..n {
                    consider(&mut best, p, self.boundary[i], self.boundary[(i + 1) % n]);
                }
            }
        }
        best
    }

    /// One Euler reflection step: if `to` left the closure, bounce the
    /// overshoot across the first crossed boundary segment, up to four times,
    /// then fall back to projecting onto the closure.
    pub fn reflect_step(&self, from: Point, to: Point) -> Point {
        if let DomainKind::Rectangle { width, height } = self.kind {
            // Iterated specular reflection in a box is coordinate-wise folding.
            return Point::new(fold(to.x, width), fold(to.y, height));
        }
        if self.contains_closed(to) {
            return to;
        }
        let mut cur = from;
        let mut target = to;
        for _ in 0..REFLECT_MAX_BOUNCES {
            match self.first_boundary_crossing(cur, target) {
                Some((hit, a, b)) => {
                    target = mirror_across_line(target, a, b);
                    cur = hit;
                    if self.contains_closed(target) {
                        return target;
                    }
                }
                None => break,
            }
        }
        self.project_to_boundary(target).0
    }

    /// First crossing of segment `from->to` with the boundary, ignoring
    /// crossings at the start point. Returns the hit point and the segment.
    fn first_boundary_crossing(&self, from: Point, to: Point) -> Option<(Point, Point, Point)> {
        let mut best: Option<(f64, Point, Point, Point)> = None;
        let mut consider = |a: Point, b: Point| {
            if let Some((t, p)) = segment_intersection(from, to, a, b) {
                if t > 1e-12 && best.as_ref().map_or(true, |(bt, ..)| t < *bt) {
                    best = Some((t, p, a, b));
                }
            }
        };
        match &self.kind {
            DomainKind::Horn { .. } => {
                let n = HORN_WALL_SEGMENTS;
                let x_max = self.bbox.x1;
                let dx = (x_max - 1.0) / n as f64;
                let lo = (((from.x.min(to.x) - 1.0) / dx).floor() as i64 - 1).max(0) as usize;
                let hi = (((from.x.max(to.x) - 1.0) / dx).ceil() as i64 + 1).min(n as i64) as usize;
                for i in lo..hi.min(n) {
                    consider(self.boundary[i], self.boundary[i + 1]);
                    let m = self.boundary.len();
                    consider(self.boundary[m - 2 - i], self.boundary[m - 1 - i]);
                }
                let m = self.boundary.len();
                consider(self.boundary[n], self.boundary[n + 1]);
                consider(self.boundary[m - 1], self.boundary[0]);
            }
            _ => {
                let n = self.boundary.len();
                for i in 0..n {
                    consider(self.boundary[i], self.boundary[(i + 1) % n]);
                }
            }
        }
        best.map(|(_, p, a, b)| (p, a, b))
    }
}

fn miss(field: &str) -> Error {
    Error::DomainSpec(format!("missing parameter {field:?}"))
}

/// Folds `x` into `[0, w]` by repeated mirroring at 0 and `w`.
fn fold(mut x: f64, w: f64) -> f64 {
    if x >= 0.0 && x <= w {
        return x;
    }
    let period = 2.0 * w;
    x = x.rem_euclid(period);
    if x > w {
        x = period - x;
    }
    x
}

fn mirror_across_line(p: Point, a: Point, b: Point) -> Point {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return p;
    }
    let t = (p - a).dot(d) / len2;
    let foot = a + d * t;
    foot + (foot - p)
}
