//! Exact polygon primitives: shoelace areas, Sutherland–Hodgman clipping
//! against axis-aligned rectangles, point-in-polygon tests, and segment
//! intersections. These back the cut-cell grid and the reflection step.

use super::Point;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Signed area of a polygon by the shoelace formula. Positive when the
/// vertices run counterclockwise.
pub fn signed_area(pts: &[Point]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Clips a polygon against one half-plane `keep(p) >= 0` where `keep` is an
/// affine function; the Sutherland–Hodgman step.
fn clip_halfplane(pts: &[Point], keep: impl Fn(Point) -> f64, out: &mut Vec<Point>) {
    out.clear();
    let n = pts.len();
    if n == 0 {
        return;
    }
    for i in 0..n {
        let cur = pts[i];
        let nxt = pts[(i + 1) % n];
        let dc = keep(cur);
        let dn = keep(nxt);
        if dc >= 0.0 {
            out.push(cur);
            if dn < 0.0 {
                let t = dc / (dc - dn);
                out.push(lerp(cur, nxt, t));
            }
        } else if dn >= 0.0 {
            let t = dc / (dc - dn);
            out.push(lerp(cur, nxt, t));
        }
    }
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)
}

/// Clips `poly` to the rectangle `r`. The subject polygon may be non-convex;
/// the output can contain coincident bridge edges, which cancel in the
/// shoelace area, so `signed_area` of the result is the exact clipped area.
pub fn clip_polygon_to_rect(poly: &[Point], r: &Rect) -> Vec<Point> {
    let mut a = poly.to_vec();
    let mut b = Vec::with_capacity(poly.len() + 4);
    clip_halfplane(&a, |p| p.x - r.x0, &mut b);
    clip_halfplane(&b, |p| r.x1 - p.x, &mut a);
    clip_halfplane(&a, |p| p.y - r.y0, &mut b);
    clip_halfplane(&b, |p| r.y1 - p.y, &mut a);
    a
}

/// Even-odd crossing test. Points exactly on the boundary may land on either
/// side; callers that care use distance tests instead.
pub fn point_in_polygon(pts: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = pts.len();
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Intersection of segments `a0->a1` and `b0->b1`. Returns the parameter `t`
/// along `a` and the intersection point. Parallel or degenerate pairs return
/// `None`.
pub fn segment_intersection(a0: Point, a1: Point, b0: Point, b1: Point) -> Option<(f64, Point)> {
    let r = a1 - a0;
    let s = b1 - b0;
    let denom = r.cross(s);
    if denom == 0.0 {
        return None;
    }
    let qp = b0 - a0;
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some((t, lerp(a0, a1, t)))
    } else {
        None
    }
}

/// True when the open interiors of the two segments cross (shared endpoints
/// do not count). Used for polygon simplicity validation.
pub fn segments_properly_intersect(a0: Point, a1: Point, b0: Point, b1: Point) -> bool {
    match segment_intersection(a0, a1, b0, b1) {
        Some((t, p)) => {
            let eps = 1e-12;
            let endpoint = |q: Point| {
                (q - b0).norm() < eps || (q - b1).norm() < eps || (q - a0).norm() < eps || (q - a1).norm() < eps
            };
            t > eps && t < 1.0 - eps && !endpoint(p)
        }
        None => false,
    }
}

/// Closest point on segment `a->b` to `p`.
pub fn closest_point_on_segment(p: Point, a: Point, b: Point) -> Point {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    lerp(a, b, t)
}

/// Length of segment `a->b` clipped to rectangle `r` (Liang–Barsky), together
/// with the clipped endpoints. Returns `None` when the segment misses `r`.
pub fn clip_segment_to_rect(a: Point, b: Point, r: &Rect) -> Option<(Point, Point)> {
    let d = b - a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let checks = [
        (-d.x, a.x - r.x0),
        (d.x, r.x1 - a.x),
        (-d.y, a.y - r.y0),
        (d.y, r.y1 - a.y),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                if t > t1 {
                    return None;
                }
                if t > t0 {
                    t0 = t;
                }
            } else {
                if t < t0 {
                    return None;
                }
                if t < t1 {
                    t1 = t;
                }
            }
        }
    }
    Some((lerp(a, b, t0), lerp(a, b, t1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Point> {
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ]
    }

    #[test]
    fn shoelace_unit_square() {
        assert_eq!(signed_area(&square()), 1.0);
    }

    #[test]
    fn clip_square_to_quarter() {
        let r = Rect { x0: 0.0, x1: 0.5, y0: 0.0, y1: 0.5 };
        let clipped = clip_polygon_to_rect(&square(), &r);
        assert!((signed_area(&clipped) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn clip_triangle_partial() {
        // Hypotenuse x + y = 1 cuts the cell [0,1]^2 in half.
        let tri = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        let r = Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        let clipped = clip_polygon_to_rect(&tri, &r);
        assert!((signed_area(&clipped) - 0.5).abs() < 1e-15);
        // Cell strictly inside the triangle keeps its full area.
        let r2 = Rect { x0: 0.1, x1: 0.3, y0: 0.1, y1: 0.3 };
        let clipped2 = clip_polygon_to_rect(&tri, &r2);
        assert!((signed_area(&clipped2) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn nonconvex_subject_area_is_exact() {
        // L-shape of area 0.75 clipped to a window covering it all.
        let l = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 0.5),
            Point::new(0.5, 0.5),
            Point::new(0.5, 1.0),
            Point::new(0.0, 1.0),
        ];
        let r = Rect { x0: -1.0, x1: 2.0, y0: -1.0, y1: 2.0 };
        let clipped = clip_polygon_to_rect(&l, &r);
        assert!((signed_area(&clipped) - 0.75).abs() < 1e-15);
        // window straddling the notch
        let r2 = Rect { x0: 0.25, x1: 0.75, y0: 0.25, y1: 0.75 };
        let clipped2 = clip_polygon_to_rect(&l, &r2);
        // inside the window the L covers everything except [0.5,0.75]x[0.5,0.75]
        assert!((signed_area(&clipped2) - (0.25 * 0.25 * 4.0 - 0.0625)).abs() < 1e-15);
    }

    #[test]
    fn point_in_polygon_basics() {
        let l = square();
        assert!(point_in_polygon(&l, Point::new(0.5, 0.5)));
        assert!(!point_in_polygon(&l, Point::new(1.5, 0.5)));
    }

    #[test]
    fn segment_intersection_basic() {
        let (t, p) = segment_intersection(
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 0.0),
        )
        .unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        assert!((p.x - 0.5).abs() < 1e-15 && (p.y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn liang_barsky_lengths() {
        let r = Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        let (a, b) = clip_segment_to_rect(Point::new(-1.0, 0.5), Point::new(2.0, 0.5), &r).unwrap();
        assert!(((b - a).norm() - 1.0).abs() < 1e-15);
        assert!(clip_segment_to_rect(Point::new(-1.0, 2.0), Point::new(2.0, 2.0), &r).is_none());
    }
}
