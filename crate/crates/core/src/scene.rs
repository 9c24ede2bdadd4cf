//! World model for planning: validated targets, static geometry and voxels
//! occupied by depth points no known surface explains.

use std::io::{Read, Write};
use std::sync::Arc;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::mesh::intersect::triangle_box_intersect;
use crate::mesh::{Aabb, Bvh, Triangle, TriangleMesh};
use crate::object::ObjectModel;
use crate::perception::{CameraIntrinsics, DepthImage};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error("malformed voxel dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    /// meters per voxel edge
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Smallest grid at `resolution` covering `bounds`.
    pub fn covering(bounds: &Aabb, resolution: f64) -> Self {
        let e = bounds.extents();
        let dims = [0, 1, 2].map(|k| ((e[k] / resolution).ceil() as usize).max(1));
        GridSpec { origin: bounds.min, resolution, dims }
    }
}

/// Axis-aligned occupancy grid; voxel `(i, j, k)` spans
/// `origin + [i, i+1) * resolution` on each axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    occupancy: BitVec,
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    origin: Vec3,
    resolution: f64,
    dims: [usize; 3],
    encoding: String,
    runs: usize,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec) -> Result<Self, SceneError> {
        if !(spec.resolution > 0.0) || spec.dims.contains(&0) {
            return Err(SceneError::InvalidGrid(format!("resolution {} dims {:?}", spec.resolution, spec.dims)));
        }
        let n = spec.dims.iter().product();
        Ok(VoxelGrid { spec, occupancy: bitvec![0; n] })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn resolution(&self) -> f64 {
        self.spec.resolution
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn index(&self, v: [usize; 3]) -> usize {
        let d = self.spec.dims;
        (v[2] * d[1] + v[1]) * d[0] + v[0]
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let d = self.spec.dims;
        [index % d[0], (index / d[0]) % d[1], index / (d[0] * d[1])]
    }

    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for k in 0..3 {
            let f = ((p[k] - self.spec.origin[k]) / self.spec.resolution).floor();
            if !(f >= 0.0 && f < self.spec.dims[k] as f64) {
                return None;
            }
            out[k] = f as usize;
        }
        Some(out)
    }

    pub fn get(&self, v: [usize; 3]) -> bool {
        self.occupancy[self.index(v)]
    }

    pub fn set(&mut self, v: [usize; 3], occupied: bool) {
        let i = self.index(v);
        self.occupancy.set(i, occupied);
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.count_ones()
    }

    pub fn occupied(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.occupancy.iter_ones().map(|i| self.coords(i))
    }

    /// `(center, half extents)` of a voxel.
    pub fn voxel_box(&self, v: [usize; 3]) -> (Vec3, Vec3) {
        let r = self.spec.resolution;
        let min = self.spec.origin + Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64) * r;
        (min + Vec3::repeat(r * 0.5), Vec3::repeat(r * 0.5))
    }

    /// Index range of voxels overlapping `b`, clamped to the grid.
    fn range(&self, b: &Aabb) -> Option<[std::ops::RangeInclusive<usize>; 3]> {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            let a = ((b.min[k] - self.spec.origin[k]) / self.spec.resolution).floor();
            let z = ((b.max[k] - self.spec.origin[k]) / self.spec.resolution).floor();
            if z < 0.0 || a >= self.spec.dims[k] as f64 {
                return None;
            }
            lo[k] = a.max(0.0) as usize;
            hi[k] = (z as usize).min(self.spec.dims[k] - 1);
        }
        Some([lo[0]..=hi[0], lo[1]..=hi[1], lo[2]..=hi[2]])
    }

    /// Occupied voxels whose boxes overlap `b`.
    pub fn occupied_in(&self, b: &Aabb) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        if self.occupancy.not_any() {
            return out;
        }
        let Some([ri, rj, rk]) = self.range(b) else { return out };
        for k in rk {
            for j in rj.clone() {
                for i in ri.clone() {
                    if self.get([i, j, k]) {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }

    /// Run-length dump: JSON header line, then little-endian `u32` run lengths
    /// alternating empty/occupied, starting with empty.
    pub fn write_dump(&self, mut out: impl Write) -> Result<(), SceneError> {
        let mut runs: Vec<u32> = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for b in self.occupancy.iter().by_vals() {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        let header = DumpHeader {
            origin: self.spec.origin,
            resolution: self.spec.resolution,
            dims: self.spec.dims,
            encoding: "rle-u32le".into(),
            runs: runs.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for r in runs {
            out.write_all(&r.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump(mut input: impl Read) -> Result<Self, SceneError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| SceneError::Dump("missing header".into()))?;
        let header: DumpHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.encoding != "rle-u32le" {
            return Err(SceneError::Dump(format!("unknown encoding {}", header.encoding)));
        }
        let body = &bytes[nl + 1..];
        if body.len() != header.runs * 4 {
            return Err(SceneError::Dump(format!("expected {} runs, found {} bytes", header.runs, body.len())));
        }
        let mut grid = VoxelGrid::new(GridSpec { origin: header.origin, resolution: header.resolution, dims: header.dims })?;
        let mut pos = 0usize;
        for (n, chunk) in body.chunks_exact(4).enumerate() {
            let len = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
            if pos + len > grid.len() {
                return Err(SceneError::Dump("runs exceed grid size".into()));
            }
            if n % 2 == 1 {
                grid.occupancy[pos..pos + len].fill(true);
            }
            pos += len;
        }
        if pos != grid.len() {
            return Err(SceneError::Dump("runs do not cover the grid".into()));
        }
        Ok(grid)
    }
}

/// Back-projects every valid pixel into the world frame.
pub fn depth_to_points(depth: &DepthImage, intr: &CameraIntrinsics, camera: &Pose) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(depth.valid_count());
    for y in 0..depth.height {
        for x in 0..depth.width {
            let z = depth.get(x, y);
            if z > 0.0 {
                out.push(camera.transform_point(&intr.backproject(x as f64, y as f64, z)));
            }
        }
    }
    out
}

/// A validated object with its fused world pose.
#[derive(Clone, Debug)]
pub struct Target {
    pub track_id: u64,
    pub model: Arc<ObjectModel>,
    pub pose: Pose,
    pub confidence: f64,
}

/// Fixed geometry: bin and table.
#[derive(Clone, Debug)]
pub struct StaticBody {
    pub name: String,
    pub mesh: Arc<TriangleMesh>,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarveConfig {
    /// meters
    pub assoc_tolerance: f64,
    pub min_points_per_voxel: usize,
}

impl Default for CarveConfig {
    fn default() -> Self {
        CarveConfig { assoc_tolerance: 0.008, min_points_per_voxel: 2 }
    }
}

/// Surfaces that explain depth points, indexed by posed bounding boxes.
struct Explainers<'a> {
    bodies: Vec<(&'a TriangleMesh, Pose)>,
    bvh: Bvh,
}

impl<'a> Explainers<'a> {
    fn new(targets: &'a [Target], statics: &'a [StaticBody], tol: f64) -> Self {
        let bodies: Vec<(&TriangleMesh, Pose)> =
            statics.iter().map(|s| (&*s.mesh, s.pose)).chain(targets.iter().map(|t| (&*t.model.mesh, t.pose))).collect();
        let boxes: Vec<Aabb> = bodies.iter().map(|(m, p)| m.posed_aabb(p).expanded(tol)).collect();
        Explainers { bvh: Bvh::build(&boxes), bodies }
    }

    fn explains(&self, p: &Vec3, tol: f64) -> bool {
        let q = Aabb { min: *p, max: *p };
        self.bvh.any_overlap(&q, |i| {
            let (m, pose) = self.bodies[i];
            m.within_distance(&pose.inverse().transform_point(p), tol)
        })
    }
}

/// Marks voxels holding at least `min_points_per_voxel` points farther than
/// `assoc_tolerance` from every target and static surface.
pub fn classify_and_carve(points: &[Vec3], targets: &[Target], statics: &[StaticBody], config: &CarveConfig, grid: &GridSpec) -> Result<VoxelGrid, SceneError> {
    let mut out = VoxelGrid::new(*grid)?;
    let explain = Explainers::new(targets, statics, config.assoc_tolerance);
    let mut counts = vec![0u32; out.len()];
    for p in points {
        let Some(v) = out.voxel_of(p) else { continue };
        if !explain.explains(p, config.assoc_tolerance) {
            counts[out.index(v)] += 1;
        }
    }
    let min = config.min_points_per_voxel.max(1) as u32;
    for (i, c) in counts.iter().enumerate() {
        if *c >= min {
            out.occupancy.set(i, true);
        }
    }
    Ok(out)
}

/// World-frame triangles of a posed mesh with a BVH over them.
pub struct PosedTriangles {
    tris: Vec<Triangle>,
    bvh: Bvh,
    bounds: Aabb,
    /// local-frame mesh for containment queries when closed
    mesh: Option<(Arc<TriangleMesh>, Pose)>,
}

impl PosedTriangles {
    pub fn new(mesh: &TriangleMesh, pose: &Pose) -> Self {
        let tris: Vec<Triangle> = (0..mesh.len()).map(|i| mesh.triangle(i).map(|v| pose.transform_point(&v))).collect();
        let boxes: Vec<Aabb> = tris.iter().map(|t| Aabb::from_points(t.iter())).collect();
        let bounds = boxes.iter().fold(Aabb::empty(), |a, b| a.union(b));
        PosedTriangles { bvh: Bvh::build(&boxes), tris, bounds, mesh: None }
    }

    /// Also detects voxels lying entirely inside a closed mesh.
    pub fn with_solid(mesh: Arc<TriangleMesh>, pose: &Pose) -> Self {
        let mut p = PosedTriangles::new(&mesh, pose);
        if mesh.is_closed() {
            p.mesh = Some((mesh, *pose));
        }
        p
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn touches_box(&self, center: &Vec3, half: &Vec3) -> bool {
        let q = Aabb { min: center - half, max: center + half };
        if !q.overlaps(&self.bounds) {
            return false;
        }
        if self.bvh.any_overlap(&q, |i| triangle_box_intersect(&self.tris[i], center, half)) {
            return true;
        }
        match &self.mesh {
            Some((m, pose)) => m.contains_point(&pose.inverse().transform_point(center)),
            None => false,
        }
    }
}

/// Occupied voxels touched by the posed shape.
pub fn colliding_voxels(grid: &VoxelGrid, shape: &PosedTriangles) -> Vec<[usize; 3]> {
    grid.occupied_in(shape.bounds())
        .into_iter()
        .filter(|v| {
            let (c, h) = grid.voxel_box(*v);
            shape.touches_box(&c, &h)
        })
        .collect()
}

/// Whether any occupied voxel box touches the posed mesh surface or, for
/// a closed mesh, lies inside it.
pub fn voxels_collide(grid: &VoxelGrid, mesh: &Arc<TriangleMesh>, pose: &Pose) -> bool {
    if grid.occupied_count() == 0 {
        return false;
    }
    let shape = PosedTriangles::with_solid(mesh.clone(), pose);
    grid.occupied_in(shape.bounds()).into_iter().any(|v| {
        let (c, h) = grid.voxel_box(v);
        shape.touches_box(&c, &h)
    })
}

/// Planner world model for one iteration.
#[derive(Clone, Debug)]
pub struct SceneState {
    pub targets: Vec<Target>,
    pub statics: Vec<StaticBody>,
    pub voxels: VoxelGrid,
    pub iteration: u64,
}
