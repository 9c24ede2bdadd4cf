//! Parametric meshes centered on the origin.

use std::f64::consts::PI;

use crate::geometry::Vec3;

use super::TriangleMesh;

/// Axis-aligned box with the given full extents, outward winding.
pub fn cuboid(size: Vec3) -> TriangleMesh {
    let h = size * 0.5;
    let v: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let t = vec![
        [0, 2, 1], [1, 2, 3], // -z
        [4, 5, 6], [5, 7, 6], // +z
        [0, 1, 4], [1, 5, 4], // -y
        [2, 6, 3], [3, 6, 7], // +y
        [0, 4, 2], [2, 4, 6], // -x
        [1, 3, 5], [3, 7, 5], // +x
    ];
    TriangleMesh::new(v, t).expect("box is valid")
}

/// Closed cylinder along z with `segments` facets around the axis.
pub fn cylinder(radius: f64, length: f64, segments: usize) -> TriangleMesh {
    let segments = segments.max(3);
    let hz = length * 0.5;
    let mut v = Vec::with_capacity(2 * segments + 2);
    for i in 0..segments {
        let a = 2.0 * PI * i as f64 / segments as f64;
        let (s, c) = a.sin_cos();
        v.push(Vec3::new(radius * c, radius * s, -hz));
        v.push(Vec3::new(radius * c, radius * s, hz));
    }
    let bottom = v.len() as u32;
    v.push(Vec3::new(0.0, 0.0, -hz));
    let top = v.len() as u32;
    v.push(Vec3::new(0.0, 0.0, hz));
    let mut t = Vec::with_capacity(4 * segments);
    for i in 0..segments as u32 {
        let j = (i + 1) % segments as u32;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        t.push([b0, b1, t1]);
        t.push([b0, t1, t0]);
        t.push([bottom, b1, b0]);
        t.push([top, t0, t1]);
    }
    TriangleMesh::new(v, t).expect("cylinder is valid")
}

/// Icosphere with `subdivisions` refinement steps.
pub fn sphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        [-1.0, p, 0.0], [1.0, p, 0.0], [-1.0, -p, 0.0], [1.0, -p, 0.0],
        [0.0, -1.0, p], [0.0, 1.0, p], [0.0, -1.0, -p], [0.0, 1.0, -p],
        [p, 0.0, -1.0], [p, 0.0, 1.0], [-p, 0.0, -1.0], [-p, 0.0, 1.0],
    ]
    .iter()
    .map(|a| Vec3::from(*a).normalize())
    .collect();
    let mut t: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mids = std::collections::HashMap::new();
        let mut mid = |a: u32, b: u32, v: &mut Vec<Vec3>| -> u32 {
            *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a as usize] + v[b as usize]) * 0.5).normalize());
                (v.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(t.len() * 4);
        for [a, b, c] in t {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        t = next;
    }
    let v = v.into_iter().map(|x| x * radius).collect();
    TriangleMesh::new(v, t).expect("sphere is valid")
}

/// Rectangle in the z = 0 plane facing +z.
pub fn rectangle(size_x: f64, size_y: f64) -> TriangleMesh {
    let (hx, hy) = (size_x * 0.5, size_y * 0.5);
    let v = vec![Vec3::new(-hx, -hy, 0.0), Vec3::new(hx, -hy, 0.0), Vec3::new(hx, hy, 0.0), Vec3::new(-hx, hy, 0.0)];
    TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).expect("rectangle is valid")
}

/// An L-shaped bracket: two plates joined along an edge. Not convex.
pub fn bracket(leg: f64, width: f64, thickness: f64) -> TriangleMesh {
    // extrude the L profile in the x-z plane along y
    let profile = [
        (0.0, 0.0),
        (leg, 0.0),
        (leg, thickness),
        (thickness, thickness),
        (thickness, leg),
        (0.0, leg),
    ];
    let hy = width * 0.5;
    let c = (leg + thickness) / 4.0;
    let mut v = Vec::new();
    for &(x, z) in &profile {
        v.push(Vec3::new(x - c, -hy, z - c));
        v.push(Vec3::new(x - c, hy, z - c));
    }
    let n = profile.len() as u32;
    let mut t = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        // profile runs counter-clockwise seen from -y
        t.push([2 * i, 2 * j + 1, 2 * j]);
        t.push([2 * i, 2 * i + 1, 2 * j + 1]);
    }
    // caps: split the L into two convex quads
    let quads = [[0u32, 1, 2, 3], [0, 3, 4, 5]];
    for q in quads {
        t.push([2 * q[0], 2 * q[1], 2 * q[2]]);
        t.push([2 * q[0], 2 * q[2], 2 * q[3]]);
        t.push([2 * q[0] + 1, 2 * q[2] + 1, 2 * q[1] + 1]);
        t.push([2 * q[0] + 1, 2 * q[3] + 1, 2 * q[2] + 1]);
    }
    TriangleMesh::new(v, t).expect("bracket is valid")
}
