//! Triangle–triangle intersection with a fixed tolerance.
//!
//! Touching contacts (a shared point, or segments meeting end to end within
//! [`EPS`]) are reported as non-intersecting.

use nalgebra::{Vector2, Vector3};

/// Length tolerance on the unit-sphere-normalized mesh.
pub const EPS: f64 = 1e-10;

type Tri = [Vector3<f64>; 3];

fn unit_normal(t: &Tri) -> Option<Vector3<f64>> {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let len = n.norm();
    (len > 0.0).then(|| n / len)
}

fn snap(d: f64) -> f64 {
    if d.abs() <= EPS {
        0.0
    } else {
        d
    }
}

/// Interval swept on the line direction `dir` by the part of `t` lying in the
/// other triangle's plane, given signed distances `d` of `t`'s corners to it.
fn plane_interval(t: &Tri, d: [f64; 3], dir: &Vector3<f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut push = |p: Vector3<f64>| {
        let s = dir.dot(&p);
        lo = lo.min(s);
        hi = hi.max(s);
    };
    for i in 0..3 {
        if d[i] == 0.0 {
            push(t[i]);
        }
        let j = (i + 1) % 3;
        if d[i] * d[j] < 0.0 {
            push(t[i] + (t[j] - t[i]) * (d[i] / (d[i] - d[j])));
        }
    }
    (lo <= hi).then_some((lo, hi))
}

pub fn triangles_intersect(a: &Tri, b: &Tri) -> bool {
    let (Some(na), Some(nb)) = (unit_normal(a), unit_normal(b)) else {
        return false;
    };
    let db = [0, 1, 2].map(|i| snap(na.dot(&(b[i] - a[0]))));
    if db.iter().all(|&d| d > 0.0) || db.iter().all(|&d| d < 0.0) {
        return false;
    }
    let da = [0, 1, 2].map(|i| snap(nb.dot(&(a[i] - b[0]))));
    if da.iter().all(|&d| d > 0.0) || da.iter().all(|&d| d < 0.0) {
        return false;
    }
    if db.iter().all(|&d| d == 0.0) && da.iter().all(|&d| d == 0.0) {
        return coplanar_intersect(a, b, &na);
    }
    let dir = na.cross(&nb);
    let len = dir.norm();
    if len <= EPS {
        // parallel planes within tolerance but not both coplanar: treat as coplanar
        return coplanar_intersect(a, b, &na);
    }
    let dir = dir / len;
    let (Some(ia), Some(ib)) = (plane_interval(a, da, &dir), plane_interval(b, db, &dir)) else {
        return false;
    };
    ia.1.min(ib.1) - ia.0.max(ib.0) > EPS
}

fn project(t: &Tri, drop_axis: usize) -> [Vector2<f64>; 3] {
    let (u, v) = match drop_axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    t.map(|p| Vector2::new(p[u], p[v]))
}

/// Signed distance of `p` from the line through `a` and `b`.
fn side(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    let e = b - a;
    let len = e.norm();
    if len == 0.0 {
        return 0.0;
    }
    (e.x * (p.y - a.y) - e.y * (p.x - a.x)) / len
}

fn strictly_inside(t: &[Vector2<f64>; 3], p: &Vector2<f64>) -> bool {
    let s = [side(&t[0], &t[1], p), side(&t[1], &t[2], p), side(&t[2], &t[0], p)];
    s.iter().all(|&x| x > EPS) || s.iter().all(|&x| x < -EPS)
}

fn segments_cross(p1: &Vector2<f64>, p2: &Vector2<f64>, q1: &Vector2<f64>, q2: &Vector2<f64>) -> bool {
    let d1 = side(q1, q2, p1);
    let d2 = side(q1, q2, p2);
    let d3 = side(p1, p2, q1);
    let d4 = side(p1, p2, q2);
    let opposite = |x: f64, y: f64| (x > EPS && y < -EPS) || (x < -EPS && y > EPS);
    opposite(d1, d2) && opposite(d3, d4)
}

fn coplanar_intersect(a: &Tri, b: &Tri, n: &Vector3<f64>) -> bool {
    let drop_axis = n.iamax();
    let (pa, pb) = (project(a, drop_axis), project(b, drop_axis));
    for i in 0..3 {
        for j in 0..3 {
            if segments_cross(&pa[i], &pa[(i + 1) % 3], &pb[j], &pb[(j + 1) % 3]) {
                return true;
            }
        }
    }
    let ca = (pa[0] + pa[1] + pa[2]) / 3.0;
    let cb = (pb[0] + pb[1] + pb[2]) / 3.0;
    pa.iter().chain(std::iter::once(&ca)).any(|p| strictly_inside(&pb, p))
        || pb.iter().chain(std::iter::once(&cb)).any(|p| strictly_inside(&pa, p))
}
