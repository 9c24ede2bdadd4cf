//! Primitive intersection and distance tests.

use crate::geometry::Vec3;

pub type Triangle = [Vec3; 3];

/// Two-sided Moller-Trumbore. Returns `(t, u, v)` with barycentrics `u, v`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &Triangle) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some((e2.dot(&q) * inv, u, v))
}

fn project(tri: &Triangle, axis: &Vec3) -> (f64, f64) {
    let a = tri[0].dot(axis);
    let b = tri[1].dot(axis);
    let c = tri[2].dot(axis);
    (a.min(b).min(c), a.max(b).max(c))
}

fn separated_on(a: &Triangle, b: &Triangle, axis: &Vec3) -> bool {
    let (amin, amax) = project(a, axis);
    let (bmin, bmax) = project(b, axis);
    amax < bmin || bmax < amin
}

/// Separating-axis triangle/triangle overlap test. Touching counts as overlap.
pub fn triangles_intersect(a: &Triangle, b: &Triangle) -> bool {
    let ea = [a[1] - a[0], a[2] - a[1], a[0] - a[2]];
    let eb = [b[1] - b[0], b[2] - b[1], b[0] - b[2]];
    let na = ea[0].cross(&ea[1]);
    let nb = eb[0].cross(&eb[1]);
    if separated_on(a, b, &na) || separated_on(a, b, &nb) {
        return false;
    }
    let scale = na.norm() * nb.norm();
    let parallel = na.cross(&nb).norm_squared() <= 1e-24 * scale * scale;
    if parallel {
        // coplanar: in-plane edge normals of both triangles
        for e in ea.iter().chain(eb.iter()) {
            let axis = na.cross(e);
            if axis.norm_squared() > 0.0 && separated_on(a, b, &axis) {
                return false;
            }
        }
        return true;
    }
    for e1 in &ea {
        for e2 in &eb {
            let axis = e1.cross(e2);
            if axis.norm_squared() <= 1e-30 * e1.norm_squared() * e2.norm_squared() {
                continue;
            }
            if separated_on(a, b, &axis) {
                return false;
            }
        }
    }
    true
}

/// Triangle vs axis-aligned box (center, half extents), 13-axis SAT.
pub fn triangle_box_intersect(tri: &Triangle, center: &Vec3, half: &Vec3) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    for k in 0..3 {
        let lo = v[0][k].min(v[1][k]).min(v[2][k]);
        let hi = v[0][k].max(v[1][k]).max(v[2][k]);
        if lo > half[k] || hi < -half[k] {
            return false;
        }
    }
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let box_radius = |axis: &Vec3| half.x * axis.x.abs() + half.y * axis.y.abs() + half.z * axis.z.abs();
    let tri_sep = |axis: &Vec3| {
        let p0 = v[0].dot(axis);
        let p1 = v[1].dot(axis);
        let p2 = v[2].dot(axis);
        let r = box_radius(axis);
        p0.min(p1).min(p2) > r || p0.max(p1).max(p2) < -r
    };
    let n = e[0].cross(&e[1]);
    if tri_sep(&n) {
        return false;
    }
    let units = [Vec3::x(), Vec3::y(), Vec3::z()];
    for u in &units {
        for edge in &e {
            let axis = u.cross(edge);
            if axis.norm_squared() < 1e-30 {
                continue;
            }
            if tri_sep(&axis) {
                return false;
            }
        }
    }
    true
}

/// Closest point on a triangle to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, tri: &Triangle) -> Vec3 {
    let (a, b, c) = (tri[0], tri[1], tri[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn triangle_area(tri: &Triangle) -> f64 {
    0.5 * (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm()
}
