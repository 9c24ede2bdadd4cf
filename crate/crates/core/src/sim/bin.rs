//! Bin geometry and synthetic fills by sequential settle-by-lowering.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Rotation, Vec3};
use crate::mesh::{meshes_intersect, shapes, Aabb};
use crate::object::ObjectModel;
use crate::perception::Instance;
use crate::scene::StaticBody;

/// Open box resting on a table. The bin frame has its origin at the center
/// of the interior floor, `x` along the long edge and `z` up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinSpec {
    /// interior extents, meters
    pub interior: [f64; 3],
    pub wall: f64,
    /// bin frame to world
    pub pose: Pose,
    pub table_size: [f64; 2],
    pub table_thickness: f64,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec { interior: [0.40, 0.30, 0.12], wall: 0.01, pose: Pose::identity(), table_size: [1.2, 1.0], table_thickness: 0.03 }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<(), String> {
        let extra = [self.wall, self.table_thickness];
        if self.interior.iter().chain(&self.table_size).chain(&extra).any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err("bin and table dimensions must be positive".into());
        }
        Ok(())
    }

    pub fn floor_z(&self) -> f64 {
        self.pose.translation.z
    }

    /// Interior volume in the bin frame.
    pub fn interior_box(&self) -> Aabb {
        let [x, y, z] = self.interior;
        Aabb { min: Vec3::new(-x * 0.5, -y * 0.5, 0.0), max: Vec3::new(x * 0.5, y * 0.5, z) }
    }

    /// Floor, four walls and the table, each a closed box. The `y` walls fit
    /// between the `x` walls so no two boxes overlap.
    pub fn statics(&self) -> Vec<StaticBody> {
        let [ix, iy, iz] = self.interior;
        let w = self.wall;
        let boxes = [
            ("bin_floor", Vec3::new(ix + 2.0 * w, iy + 2.0 * w, w), Vec3::new(0.0, 0.0, -w * 0.5)),
            ("bin_wall_px", Vec3::new(w, iy + 2.0 * w, iz), Vec3::new((ix + w) * 0.5, 0.0, iz * 0.5)),
            ("bin_wall_nx", Vec3::new(w, iy + 2.0 * w, iz), Vec3::new(-(ix + w) * 0.5, 0.0, iz * 0.5)),
            ("bin_wall_py", Vec3::new(ix, w, iz), Vec3::new(0.0, (iy + w) * 0.5, iz * 0.5)),
            ("bin_wall_ny", Vec3::new(ix, w, iz), Vec3::new(0.0, -(iy + w) * 0.5, iz * 0.5)),
            (
                "table",
                Vec3::new(self.table_size[0], self.table_size[1], self.table_thickness),
                Vec3::new(0.0, 0.0, -w - self.table_thickness * 0.5),
            ),
        ];
        boxes
            .iter()
            .map(|(name, size, c)| StaticBody {
                name: name.to_string(),
                mesh: Arc::new(shapes::cuboid(*size)),
                pose: self.pose.compose(&Pose::from_translation(*c)),
            })
            .collect()
    }
}

/// A placed object with a persistent identity.
#[derive(Clone, Debug)]
pub struct PlacedObject {
    pub id: u64,
    pub instance: Instance,
}

/// Ground-truth bin contents.
#[derive(Clone, Debug)]
pub struct BinScene {
    pub spec: BinSpec,
    pub statics: Vec<StaticBody>,
    pub objects: Vec<PlacedObject>,
    pub requested: usize,
    /// set when fewer than `requested` objects could be placed
    pub fill_failure: bool,
}

impl BinScene {
    pub fn instances(&self) -> Vec<Instance> {
        self.objects.iter().map(|o| o.instance.clone()).collect()
    }

    pub fn remove(&mut self, id: u64) -> Option<PlacedObject> {
        let i = self.objects.iter().position(|o| o.id == id)?;
        Some(self.objects.remove(i))
    }

    /// Lowers unsupported objects, bottom-up, in `step` increments until they
    /// rest on something. Returns the ids that moved.
    pub fn settle(&mut self, step: f64) -> Vec<u64> {
        let mut order: Vec<usize> = (0..self.objects.len()).collect();
        order.sort_by(|&a, &b| self.objects[a].instance.pose.translation.z.total_cmp(&self.objects[b].instance.pose.translation.z));
        let mut moved = Vec::new();
        for i in order {
            let (id, model, start) = {
                let o = &self.objects[i];
                (o.id, o.instance.model.clone(), o.instance.pose)
            };
            let mut pose = start;
            loop {
                let mut next = pose;
                next.translation.z -= step;
                if self.collides(&model, &next, Some(id)) {
                    break;
                }
                pose = next;
            }
            if pose != start {
                self.objects[i].instance.pose = pose;
                moved.push(id);
            }
        }
        moved
    }

    /// Whether `mesh` at `pose` would intersect a static or an object other than `skip`.
    pub fn collides(&self, model: &ObjectModel, pose: &Pose, skip: Option<u64>) -> bool {
        let b = model.mesh.posed_aabb(pose);
        self.statics.iter().any(|s| s.mesh.posed_aabb(&s.pose).overlaps(&b) && meshes_intersect(&model.mesh, pose, &s.mesh, &s.pose))
            || self.objects.iter().any(|o| {
                Some(o.id) != skip
                    && o.instance.model.mesh.posed_aabb(&o.instance.pose).overlaps(&b)
                    && meshes_intersect(&model.mesh, pose, &o.instance.model.mesh, &o.instance.pose)
            })
    }
}

/// Tuning of the settle procedure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FillConfig {
    /// heightmap cell size, meters
    pub cell: f64,
    pub surface_samples: usize,
    /// placement attempts per requested object
    pub attempts_per_object: usize,
    /// clearance added above the heightmap rest height
    pub gap: f64,
    /// lift increment while resolving residual contact
    pub lift_step: f64,
    pub max_lifts: usize,
}

impl Default for FillConfig {
    fn default() -> Self {
        FillConfig { cell: 0.002, surface_samples: 1500, attempts_per_object: 20, gap: 0.0002, lift_step: 0.0005, max_lifts: 40 }
    }
}

struct Heightmap {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    h: Vec<f64>,
}

impl Heightmap {
    fn cell_of(&self, x: f64, y: f64) -> usize {
        let i = (((x - self.origin[0]) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let j = (((y - self.origin[1]) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        j * self.nx + i
    }
}

/// Drops `count` objects one at a time: random `(x, y, yaw)` and stable
/// orientation, lowered onto the current heightmap, lifted until clear of
/// every mesh, rejected if it would stick out of the bin.
pub fn generate_bin(model: &Arc<ObjectModel>, count: usize, spec: &BinSpec, fill: &FillConfig, seed: u64) -> BinScene {
    let mut scene = BinScene { spec: spec.clone(), statics: spec.statics(), objects: Vec::new(), requested: count, fill_failure: false };
    if count == 0 {
        return scene;
    }
    let inner = spec.interior_box();
    let cell = fill.cell.max(1e-4);
    let nx = ((inner.max.x - inner.min.x) / cell).ceil().max(1.0) as usize;
    let ny = ((inner.max.y - inner.min.y) / cell).ceil().max(1.0) as usize;
    let mut hm = Heightmap { origin: [inner.min.x, inner.min.y], cell, nx, ny, h: vec![0.0; nx * ny] };
    let mut samples: Vec<Vec3> = model.mesh.vertices().to_vec();
    samples.extend(model.mesh.sample_surface(fill.surface_samples, seed ^ 0x5eed).into_iter().map(|(p, _)| p));
    let stable = if model.stable_rotations.is_empty() { vec![Rotation::identity()] } else { model.stable_rotations.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 0.001;
    let mut attempts = 0;
    let budget = count * fill.attempts_per_object.max(1);
    while scene.objects.len() < count && attempts < budget {
        attempts += 1;
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let rot = Rotation::from_axis_angle(&Vec3::z(), yaw) * stable[rng.random_range(0..stable.len())];
        let local: Vec<Vec3> = samples.iter().map(|p| rot.rotate(p)).collect();
        let b = Aabb::from_points(local.iter());
        let (xlo, xhi) = (inner.min.x + margin - b.min.x, inner.max.x - margin - b.max.x);
        let (ylo, yhi) = (inner.min.y + margin - b.min.y, inner.max.y - margin - b.max.y);
        let x = if xlo < xhi { rng.random_range(xlo..xhi) } else { continue };
        let y = if ylo < yhi { rng.random_range(ylo..yhi) } else { continue };
        let mut z = -b.min.z;
        for p in &local {
            z = z.max(hm.h[hm.cell_of(x + p.x, y + p.y)] - p.z);
        }
        z += fill.gap;
        let mut pose_bin = Pose::new(rot, Vec3::new(x, y, z));
        let mut clear = false;
        for _ in 0..=fill.max_lifts {
            let world = spec.pose.compose(&pose_bin);
            if !scene.collides(model, &world, None) {
                clear = true;
                break;
            }
            pose_bin.translation.z += fill.lift_step;
        }
        if !clear || pose_bin.translation.z + b.max.z > inner.max.z {
            continue;
        }
        for p in &local {
            let c = hm.cell_of(x + p.x, y + p.y);
            hm.h[c] = hm.h[c].max(pose_bin.translation.z + p.z);
        }
        let id = scene.objects.len() as u64;
        scene.objects.push(PlacedObject { id, instance: Instance { model: model.clone(), pose: spec.pose.compose(&pose_bin) } });
    }
    scene.fill_failure = scene.objects.len() < count;
    scene
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object::ObjectSpec;

    fn cylinder() -> Arc<ObjectModel> {
        Arc::new(ObjectSpec::default().build(0).unwrap())
    }

    #[test]
    fn empty_fill() {
        let s = generate_bin(&cylinder(), 0, &BinSpec::default(), &FillConfig::default(), 1);
        assert!(s.objects.is_empty());
        assert!(!s.fill_failure);
        assert_eq!(s.statics.len(), 6);
    }

    #[test]
    fn single_object_rests_on_floor() {
        let m = cylinder();
        let s = generate_bin(&m, 1, &BinSpec::default(), &FillConfig::default(), 3);
        let o = &s.objects[0].instance;
        let lowest = m.mesh.vertices().iter().map(|v| o.pose.transform_point(v).z).fold(f64::INFINITY, f64::min);
        assert!(lowest >= 0.0 && lowest < 0.001, "lowest {lowest}");
    }

    #[test]
    fn deterministic_per_seed() {
        let m = cylinder();
        let a = generate_bin(&m, 20, &BinSpec::default(), &FillConfig::default(), 9);
        let b = generate_bin(&m, 20, &BinSpec::default(), &FillConfig::default(), 9);
        let pa: Vec<[f64; 7]> = a.objects.iter().map(|o| o.instance.pose.to_array()).collect();
        let pb: Vec<[f64; 7]> = b.objects.iter().map(|o| o.instance.pose.to_array()).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn overfull_bin_flags_failure() {
        let big = Arc::new(ObjectSpec::Cuboid { size: [0.1, 0.1, 0.1] }.build(0).unwrap());
        let s = generate_bin(&big, 50, &BinSpec::default(), &FillConfig { attempts_per_object: 2, ..Default::default() }, 0);
        assert!(s.fill_failure);
        assert!(s.objects.len() < 50);
    }
}
