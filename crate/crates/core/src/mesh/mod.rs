//! Triangle meshes: loading, BVH-accelerated ray casts, distance queries,
//! surface sampling and mesh/mesh intersection.

mod bvh;
pub mod intersect;
mod io;
pub mod shapes;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{Pose, Vec3};

pub use bvh::{Aabb, Bvh};
pub use intersect::Triangle;
pub use io::{load_mesh, parse_obj, parse_stl, write_stl_ascii, write_stl_binary, MeshFormat};

/// Ray hits closer than this to the origin are ignored, so rays launched from a
/// surface do not report the launch triangle.
pub const EPSILON_RAY: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("mesh has no valid triangles")]
    EmptyMesh,
    #[error("triangle {triangle} references vertex {index} but only {count} vertices exist")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("unknown mesh format `{0}`")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub triangle: usize,
    pub point: Vec3,
    /// Normal of the hit triangle (flat shading).
    pub normal: Vec3,
}

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    areas: Vec<f64>,
    bvh: Bvh,
    closed: bool,
}

fn key(v: &Vec3) -> [u64; 3] {
    // +0.0 and -0.0 weld together
    [(v.x + 0.0).to_bits(), (v.y + 0.0).to_bits(), (v.z + 0.0).to_bits()]
}

impl TriangleMesh {
    /// Builds a mesh, welding bit-identical vertices and dropping zero-area and
    /// duplicate triangles. Normals follow the vertex winding.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        for (i, t) in triangles.iter().enumerate() {
            for &idx in t {
                if idx as usize >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange { triangle: i, index: idx, count: vertices.len() });
                }
            }
        }
        let mut welded: Vec<Vec3> = Vec::with_capacity(vertices.len());
        let mut lookup: HashMap<[u64; 3], u32> = HashMap::new();
        let remap: Vec<u32> = vertices
            .iter()
            .map(|v| {
                *lookup.entry(key(v)).or_insert_with(|| {
                    welded.push(*v);
                    (welded.len() - 1) as u32
                })
            })
            .collect();

        let mut seen = std::collections::HashSet::new();
        let mut tris = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let t = [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]];
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                continue;
            }
            let (a, b, c) = (welded[t[0] as usize], welded[t[1] as usize], welded[t[2] as usize]);
            let n = (b - a).cross(&(c - a));
            let scale = (b - a).norm_squared().max((c - a).norm_squared());
            if !(n.norm() > 1e-12 * scale) {
                continue;
            }
            let mut sorted = t;
            sorted.sort_unstable();
            if !seen.insert(sorted) {
                continue;
            }
            tris.push(t);
        }
        if tris.is_empty() {
            return Err(MeshError::EmptyMesh);
        }

        // drop vertices no longer referenced
        let mut used = vec![u32::MAX; welded.len()];
        let mut verts = Vec::new();
        for t in tris.iter_mut() {
            for idx in t.iter_mut() {
                if used[*idx as usize] == u32::MAX {
                    used[*idx as usize] = verts.len() as u32;
                    verts.push(welded[*idx as usize]);
                }
                *idx = used[*idx as usize];
            }
        }
        Ok(Self::from_clean(verts, tris))
    }

    fn from_clean(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        let mut normals = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        let mut boxes = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let (a, b, c) = (vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]);
            let n = (b - a).cross(&(c - a));
            let len = n.norm();
            normals.push(n / len);
            areas.push(0.5 * len);
            boxes.push(Aabb::from_points([&a, &b, &c]));
        }
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                // directed edge count: +1 one way, -1 the other
                let e = if a < b { ((a, b), 1) } else { ((b, a), -1) };
                *edges.entry(e.0).or_insert(0) += e.1;
            }
        }
        let mut undirected: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *undirected.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let closed = undirected.values().all(|&c| c == 2) && edges.values().all(|&c| c == 0);
        TriangleMesh { bvh: Bvh::build(&boxes), vertices, triangles, normals, areas, closed }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Every edge shared by exactly two consistently wound triangles.
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn triangle(&self, i: usize) -> Triangle {
        let t = self.triangles[i];
        [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        self.areas[i]
    }

    pub fn surface_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Bounding box of the mesh placed at `pose` (box of the posed local box).
    pub fn posed_aabb(&self, pose: &Pose) -> Aabb {
        let b = self.aabb();
        let mut out = Aabb::empty();
        for i in 0..8 {
            let c = Vec3::new(
                if i & 1 == 0 { b.min.x } else { b.max.x },
                if i & 2 == 0 { b.min.y } else { b.max.y },
                if i & 4 == 0 { b.min.z } else { b.max.z },
            );
            out.grow(&pose.transform_point(&c));
        }
        out
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Volume centroid for closed meshes, area centroid otherwise.
    pub fn geometric_center(&self) -> Vec3 {
        if self.closed {
            let mut vol = 0.0;
            let mut acc = Vec3::zeros();
            for i in 0..self.len() {
                let [a, b, c] = self.triangle(i);
                let v = a.dot(&b.cross(&c)) / 6.0;
                vol += v;
                acc += (a + b + c) * (v / 4.0);
            }
            if vol.abs() > 1e-18 {
                return acc / vol;
            }
        }
        let mut acc = Vec3::zeros();
        for i in 0..self.len() {
            let [a, b, c] = self.triangle(i);
            acc += (a + b + c) * (self.areas[i] / 3.0);
        }
        acc / self.surface_area()
    }

    pub fn transformed(&self, pose: &Pose) -> TriangleMesh {
        let verts = self.vertices.iter().map(|v| pose.transform_point(v)).collect();
        Self::from_clean(verts, self.triangles.clone())
    }

    pub fn scaled(&self, s: f64) -> TriangleMesh {
        Self::from_clean(self.vertices.iter().map(|v| v * s).collect(), self.triangles.clone())
    }

    /// Concatenates posed meshes into one. Returns the merged mesh and, per
    /// merged triangle, the index of the source mesh.
    pub fn merge<'a>(parts: impl IntoIterator<Item = (&'a TriangleMesh, Pose)>) -> Option<(TriangleMesh, Vec<u32>)> {
        let mut verts = Vec::new();
        let mut tris = Vec::new();
        let mut owner = Vec::new();
        for (k, (m, pose)) in parts.into_iter().enumerate() {
            let base = verts.len() as u32;
            verts.extend(m.vertices.iter().map(|v| pose.transform_point(v)));
            tris.extend(m.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
            owner.extend(std::iter::repeat(k as u32).take(m.len()));
        }
        if tris.is_empty() {
            return None;
        }
        Some((Self::from_clean(verts, tris), owner))
    }

    /// Nearest hit with distance in `(EPSILON_RAY, inf)`.
    pub fn raycast(&self, origin: &Vec3, direction: &Vec3) -> Option<RayHit> {
        self.raycast_within(origin, direction, EPSILON_RAY, f64::INFINITY)
    }

    /// Nearest hit with distance in `(t_min, t_max)`; `direction` need not be unit.
    pub fn raycast_within(&self, origin: &Vec3, direction: &Vec3, t_min: f64, t_max: f64) -> Option<RayHit> {
        let dir = direction.normalize();
        let mut best: Option<(f64, usize)> = None;
        self.bvh.traverse_ray(origin, &dir, t_max, |i, limit| {
            let (t, _, _) = intersect::ray_triangle(origin, &dir, &self.triangle(i))?;
            if t > t_min && t <= limit {
                let better = match best {
                    None => true,
                    Some((bt, bi)) => t < bt || (t == bt && i < bi),
                };
                if better {
                    best = Some((t, i));
                }
                return Some(t);
            }
            None
        });
        best.map(|(t, i)| RayHit { distance: t, triangle: i, point: origin + dir * t, normal: self.normals[i] })
    }

    /// Distances of every crossing along a ray, sorted, with coincident hits
    /// (shared edges) merged.
    pub fn ray_crossings(&self, origin: &Vec3, direction: &Vec3) -> Vec<f64> {
        let dir = direction.normalize();
        let mut ts = Vec::new();
        self.bvh.traverse_ray(origin, &dir, f64::INFINITY, |i, _| {
            if let Some((t, _, _)) = intersect::ray_triangle(origin, &dir, &self.triangle(i)) {
                if t > 0.0 {
                    ts.push(t);
                }
            }
            None
        });
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        ts
    }

    /// Parity test along a fixed skew direction. Meaningful for closed meshes.
    pub fn contains_point(&self, p: &Vec3) -> bool {
        if !self.aabb().contains(p) {
            return false;
        }
        let dir = Vec3::new(0.5773502691896258, 0.5773502691896257, 0.5773502691896259) + Vec3::new(0.0123, -0.0311, 0.0071);
        self.ray_crossings(p, &dir).len() % 2 == 1
    }

    /// Closest surface point and its squared distance, if within `max_d2`.
    pub fn closest_point(&self, p: &Vec3, max_d2: f64) -> Option<(Vec3, f64)> {
        let (tri, d2) = self.bvh.nearest(p, max_d2, |i| {
            (intersect::closest_point_on_triangle(p, &self.triangle(i)) - p).norm_squared()
        })?;
        Some((intersect::closest_point_on_triangle(p, &self.triangle(tri)), d2))
    }

    /// Whether any surface point lies within `dist` of `p`.
    pub fn within_distance(&self, p: &Vec3, dist: f64) -> bool {
        let d2 = dist * dist;
        let q = Aabb { min: p - Vec3::repeat(dist), max: p + Vec3::repeat(dist) };
        self.bvh.any_overlap(&q, |i| (intersect::closest_point_on_triangle(p, &self.triangle(i)) - p).norm_squared() <= d2)
    }

    /// Whether any triangle touches the axis-aligned box.
    pub fn intersects_box(&self, center: &Vec3, half: &Vec3) -> bool {
        let q = Aabb { min: center - half, max: center + half };
        self.bvh.any_overlap(&q, |i| intersect::triangle_box_intersect(&self.triangle(i), center, half))
    }

    /// Area-weighted surface samples `(point, normal)`, deterministic per seed.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Vec<(Vec3, Vec3)> {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for a in &self.areas {
            acc += a;
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let r = rng.random::<f64>() * acc;
                let i = cdf.partition_point(|c| *c < r).min(self.len() - 1);
                let [a, b, c] = self.triangle(i);
                let s: f64 = rng.random::<f64>().sqrt();
                let t: f64 = rng.random();
                let p = a * (1.0 - s) + b * (s * (1.0 - t)) + c * (s * t);
                (p, self.normals[i])
            })
            .collect()
    }
}

/// Whether two posed meshes intersect: any triangle pair overlaps, or one
/// closed mesh contains the other (single parity ray per direction).
pub fn meshes_intersect(a: &TriangleMesh, pose_a: &Pose, b: &TriangleMesh, pose_b: &Pose) -> bool {
    // express the smaller mesh in the frame of the larger
    let (big, big_pose, small, small_pose) = if a.len() >= b.len() { (a, pose_a, b, pose_b) } else { (b, pose_b, a, pose_a) };
    let rel = big_pose.inverse().compose(small_pose);
    let verts: Vec<Vec3> = small.vertices.iter().map(|v| rel.transform_point(v)).collect();
    let small_box = Aabb::from_points(verts.iter());
    if !small_box.overlaps(&big.bvh.bounds()) {
        return false;
    }
    for t in &small.triangles {
        let tri = [verts[t[0] as usize], verts[t[1] as usize], verts[t[2] as usize]];
        let q = Aabb::from_points(tri.iter());
        if big.bvh.any_overlap(&q, |i| intersect::triangles_intersect(&tri, &big.triangle(i))) {
            return true;
        }
    }
    if big.closed && big.contains_point(&verts[0]) {
        return true;
    }
    if small.closed {
        let inv = rel.inverse();
        if small.contains_point(&inv.transform_point(&big.vertices[0])) {
            return true;
        }
    }
    false
}
