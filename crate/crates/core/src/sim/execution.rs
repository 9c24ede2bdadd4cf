//! Grasp execution against the ground truth with the two proprioceptive
//! checks: fingers closing on nothing, and the object slipping on lift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Rotation, Vec3};
use crate::grasp_plan::{GraspTrajectory, RankedGrasp};
use crate::gripper::GripperModel;
use crate::mesh::Aabb;

use super::bin::BinScene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationConfig {
    /// finger gap below which the fingers closed on nothing, meters
    pub epsilon: f64,
    /// friction-cone half-angle, radians
    pub cone_half_angle: f64,
    /// surface within this distance of the extreme contact forms the contact patch
    pub contact_band: f64,
    /// bounded disturbance of an object after a slipped grasp
    pub max_shift: f64,
    pub max_yaw: f64,
    /// drop increment when objects settle after a change, meters
    pub settle_step: f64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            epsilon: 1e-4,
            cone_half_angle: 15f64.to_radians(),
            contact_band: 5e-4,
            max_shift: 0.01,
            max_yaw: 15f64.to_radians(),
            settle_step: 0.001,
        }
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.settle_step > 0.0) {
            return Err(format!("settle_step must be positive, got {}", self.settle_step));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspResult {
    Success,
    Empty,
    Slip,
}

/// One finger's stop: the object it pressed on and the angle between the
/// patch normal and the finger's closing direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerContact {
    pub object: u64,
    pub deviation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Closure {
    /// final gap between the pads; zero when nothing was enclosed
    pub d_fingers: f64,
    /// contact of the `+y` and `-y` finger
    pub contacts: Option<(FingerContact, FingerContact)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub result: GraspResult,
    pub closure: Closure,
    pub removed: Option<u64>,
    pub perturbed: Option<u64>,
    /// objects that dropped after the scene changed
    pub settled: Vec<u64>,
}

/// Sutherland-Hodgman clip of a convex polygon to `lo <= p[axis] <= hi`.
fn clip_axis(poly: Vec<Vec3>, axis: usize, lo: f64, hi: f64) -> Vec<Vec3> {
    let mut p = poly;
    for (bound, keep_below) in [(hi, true), (lo, false)] {
        if p.is_empty() {
            break;
        }
        let inside = |v: &Vec3| if keep_below { v[axis] <= bound } else { v[axis] >= bound };
        let mut out = Vec::with_capacity(p.len() + 2);
        for i in 0..p.len() {
            let a = p[i];
            let b = p[(i + 1) % p.len()];
            let (ia, ib) = (inside(&a), inside(&b));
            if ia {
                out.push(a);
            }
            if ia != ib {
                let t = (bound - a[axis]) / (b[axis] - a[axis]);
                out.push(a + (b - a) * t);
            }
        }
        p = out;
    }
    p
}

/// Part of a triangle inside an axis-aligned box.
pub fn clip_to_box(tri: &[Vec3; 3], b: &Aabb) -> Vec<Vec3> {
    let mut p = tri.to_vec();
    for axis in 0..3 {
        p = clip_axis(p, axis, b.min[axis], b.max[axis]);
    }
    p
}

fn polygon_area(p: &[Vec3]) -> f64 {
    (1..p.len().saturating_sub(1)).map(|i| (p[i] - p[0]).cross(&(p[i + 1] - p[0])).norm() * 0.5).sum()
}

struct Patch {
    object: u64,
    normal: Vec3,
    poly: Vec<Vec3>,
    lo: f64,
    hi: f64,
}

/// Closes the fingers from `opening` at end-effector pose `ee` against the
/// true object surfaces inside the closing region.
pub fn finger_closure(ee: &Pose, opening: f64, gripper: &GripperModel, scene: &BinScene, band: f64) -> Closure {
    let region = gripper.closing_region(opening);
    let rbox = Aabb { min: region.center - region.half, max: region.center + region.half };
    let world_box = region.mesh().posed_aabb(ee);
    let to_ee = ee.inverse();
    let mut patches = Vec::new();
    for o in &scene.objects {
        let inst = &o.instance;
        if !inst.model.mesh.posed_aabb(&inst.pose).overlaps(&world_box) {
            continue;
        }
        let rel = to_ee.compose(&inst.pose);
        for i in 0..inst.model.mesh.len() {
            let tri = inst.model.mesh.triangle(i).map(|v| rel.transform_point(&v));
            let poly = clip_to_box(&tri, &rbox);
            if poly.is_empty() {
                continue;
            }
            let (lo, hi) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v.y), h.max(v.y)));
            if lo > hi {
                continue;
            }
            patches.push(Patch {
                object: o.id,
                normal: rel.rotation.rotate(&inst.model.mesh.normals()[i]),
                poly,
                lo,
                hi,
            });
        }
    }
    if patches.is_empty() {
        return Closure { d_fingers: 0.0, contacts: None };
    }
    let y_max = patches.iter().map(|p| p.hi).fold(f64::NEG_INFINITY, f64::max);
    let y_min = patches.iter().map(|p| p.lo).fold(f64::INFINITY, f64::min);
    let contact = |sign: f64| {
        let extreme = if sign > 0.0 { y_max } else { y_min };
        let touching: Vec<&Patch> =
            patches.iter().filter(|p| if sign > 0.0 { p.hi >= extreme - band } else { p.lo <= extreme + band }).collect();
        // the patch reaching the extreme owns the contact
        let owner = touching
            .iter()
            .find(|p| if sign > 0.0 { p.hi == extreme } else { p.lo == extreme })
            .map(|p| p.object)
            .unwrap_or(touching[0].object);
        // weight by the surface lying inside the band so large faces merely
        // touching the extreme do not swamp the patch
        let (lo, hi) = if sign > 0.0 { (extreme - band, extreme) } else { (extreme, extreme + band) };
        let n: Vec3 = touching
            .iter()
            .filter(|p| p.object == owner)
            .map(|p| p.normal * (polygon_area(&clip_axis(p.poly.clone(), 1, lo, hi)) + 1e-12))
            .sum();
        let dir = GripperModel::STROKE_AXIS * sign;
        let deviation = if n.norm() > 0.0 { n.normalize().dot(&dir).clamp(-1.0, 1.0).acos() } else { std::f64::consts::PI };
        FingerContact { object: owner, deviation }
    };
    Closure { d_fingers: (y_max - y_min).max(0.0), contacts: Some((contact(1.0), contact(-1.0))) }
}

/// Decides the grasp outcome from the finger closure at the grasp waypoint.
pub fn classify_closure(c: &Closure, config: &VerificationConfig) -> GraspResult {
    match c.contacts {
        _ if c.d_fingers < config.epsilon => GraspResult::Empty,
        None => GraspResult::Empty,
        Some((a, b)) if a.object != b.object => GraspResult::Slip,
        Some((a, b)) if a.deviation.max(b.deviation) > config.cone_half_angle => GraspResult::Slip,
        Some(_) => GraspResult::Success,
    }
}

/// Executes the grasp on the true scene: success removes the object, a slip
/// nudges the touched object by a bounded planar offset when that leaves it
/// free of collisions.
pub fn simulate_grasp_execution(
    trajectory: &GraspTrajectory,
    grasp: &RankedGrasp,
    opening: f64,
    gripper: &GripperModel,
    scene: &mut BinScene,
    config: &VerificationConfig,
    seed: u64,
) -> ExecutionReport {
    let ee = trajectory.waypoints.get(1).copied().unwrap_or(grasp.world_pose);
    let closure = finger_closure(&ee, opening, gripper, scene, config.contact_band);
    let result = classify_closure(&closure, config);
    let mut report = ExecutionReport { result, closure, removed: None, perturbed: None, settled: Vec::new() };
    match (result, closure.contacts) {
        (GraspResult::Success, Some((a, _))) => {
            scene.remove(a.object);
            report.removed = Some(a.object);
            report.settled = scene.settle(config.settle_step);
        }
        (GraspResult::Slip, Some((a, _))) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = config.max_shift * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let yaw = config.max_yaw * (2.0 * rng.random::<f64>() - 1.0);
            if let Some(i) = scene.objects.iter().position(|o| o.id == a.object) {
                let inst = &scene.objects[i].instance;
                let shifted = Pose::new(
                    Rotation::from_axis_angle(&Vec3::z(), yaw) * inst.pose.rotation,
                    inst.pose.translation + Vec3::new(r * phi.cos(), r * phi.sin(), 0.0),
                );
                let model = inst.model.clone();
                if !scene.collides(&model, &shifted, Some(a.object)) {
                    scene.objects[i].instance.pose = shifted;
                    report.perturbed = Some(a.object);
                    report.settled = scene.settle(config.settle_step);
                }
            }
        }
        _ => {}
    }
    report
}
