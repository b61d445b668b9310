//! Ray and segment queries against a triangle mesh (Möller–Trumbore).

use nalgebra::{Point3, Vector3};

use crate::mesh::TriangleMesh;

/// Ray parameter `t` of the hit with triangle `(a, b, c)`, two-sided.
pub fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<f64> {
    ray_triangle_tolerant(origin, dir, a, b, c, 0.0)
}

/// As [`ray_triangle`], accepting barycentric coordinates down to `-slack`.
pub fn ray_triangle_tolerant(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
    slack: f64,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 * e1.norm() * e2.norm() * dir.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if u < -slack || u > 1.0 + slack {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -slack || u + v > 1.0 + slack {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// True when some face blocks the open segment `from -> to`.
///
/// Hits closer than `end_slack` to either endpoint are ignored. With
/// `backface_culling`, faces whose front side points away from `from` are
/// transparent.
pub fn segment_blocked(
    mesh: &TriangleMesh,
    from: &Point3<f64>,
    to: &Point3<f64>,
    end_slack: f64,
    backface_culling: bool,
) -> bool {
    let dir = to - from;
    let len = dir.norm();
    if len <= 2.0 * end_slack {
        return false;
    }
    let unit = dir / len;
    (0..mesh.face_count()).any(|f| {
        if mesh.is_degenerate(f) {
            return false;
        }
        if backface_culling && mesh.face_cross(f).dot(&unit) > 0.0 {
            return false;
        }
        let [a, b, c] = mesh.face_positions(f);
        matches!(ray_triangle(from, &unit, &a, &b, &c), Some(t) if t > end_slack && t < len - end_slack)
    })
}

/// Nearest hit along a ray, as `(t, face)`.
pub fn first_hit(
    mesh: &TriangleMesh,
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    backface_culling: bool,
) -> Option<(f64, u32)> {
    let mut best: Option<(f64, u32)> = None;
    for f in 0..mesh.face_count() {
        if mesh.is_degenerate(f) || (backface_culling && mesh.face_cross(f).dot(dir) > 0.0) {
            continue;
        }
        let [a, b, c] = mesh.face_positions(f);
        if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
            if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, f as u32));
            }
        }
    }
    best
}
