//! Offline antipodal grasp generation and the versioned grasp database.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{any_orthogonal, Pose, Rotation, Vec3};
use crate::gripper::{GripperModel, GripperSpec, FRAME_CONVENTION};
use crate::mesh::{meshes_intersect, TriangleMesh};
use crate::object::ObjectModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraspGenError {
    #[error("contact points coincide")]
    DegeneratePair,
    #[error("cannot parse grasp database: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("grasp database version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspGenConfig {
    /// target number of antipodal pairs
    pub n_target: usize,
    /// radians
    pub antipodal_tolerance: f64,
    pub approach_samples: usize,
    pub seed: u64,
    /// surface samples drawn at most: `budget_factor * n_target`
    pub budget_factor: usize,
    /// per-finger clearance added to the width during collision filtering, meters
    pub finger_clearance: f64,
}

impl Default for GraspGenConfig {
    fn default() -> Self {
        GraspGenConfig {
            n_target: 100,
            antipodal_tolerance: 10f64.to_radians(),
            approach_samples: 8,
            seed: 0,
            budget_factor: 50,
            finger_clearance: 0.002,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntipodalPair {
    pub c1: Vec3,
    pub n1: Vec3,
    pub c2: Vec3,
    pub n2: Vec3,
}

impl AntipodalPair {
    pub fn width(&self) -> f64 {
        (self.c2 - self.c1).norm()
    }

    /// Larger of the normal opposition error and the axis-to-normal error.
    pub fn antipodal_error(&self) -> f64 {
        let opp = angle(&self.n1, &-self.n2);
        let d = self.c2 - self.c1;
        let axis = if d.norm() > 0.0 { angle(&d, &-self.n1) } else { 0.0 };
        opp.max(axis)
    }
}

fn angle(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSampling {
    pub pairs: Vec<AntipodalPair>,
    /// fewer than `n_target` pairs were found within the sample budget
    pub budget_exhausted: bool,
    pub samples_used: usize,
}

/// Casts from each surface sample along the inward normal; the exit hit
/// becomes the second contact.
pub fn sample_antipodal_pairs(mesh: &TriangleMesh, gripper: &GripperModel, config: &GraspGenConfig) -> PairSampling {
    let budget = config.budget_factor.max(1) * config.n_target.max(1);
    let samples = mesh.sample_surface(budget, config.seed);
    let mut pairs = Vec::new();
    let mut used = 0;
    for (c1, n1) in samples {
        if pairs.len() >= config.n_target {
            break;
        }
        used += 1;
        let Some(hit) = mesh.raycast(&c1, &-n1) else { continue };
        let pair = AntipodalPair { c1, n1, c2: hit.point, n2: hit.normal };
        if pair.width() > gripper.max_opening() || pair.width() <= 0.0 {
            continue;
        }
        if angle(&pair.n1, &-pair.n2) <= config.antipodal_tolerance && angle(&(pair.c2 - pair.c1), &-pair.n1) <= config.antipodal_tolerance {
            pairs.push(pair);
        }
    }
    if pairs.len() < config.n_target {
        log::warn!("antipodal sampling found {} of {} pairs in {} samples", pairs.len(), config.n_target, budget);
    }
    PairSampling { budget_exhausted: pairs.len() < config.n_target, pairs, samples_used: used }
}

/// End-effector pose in the object frame plus its contact data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub pose: Pose,
    pub c1: Vec3,
    pub c2: Vec3,
    pub width: f64,
    pub antipodal_error: f64,
}

impl GraspCandidate {
    pub fn closing_axis(&self) -> Vec3 {
        self.pose.rotation.rotate(&GripperModel::STROKE_AXIS)
    }

    pub fn approach_axis(&self) -> Vec3 {
        self.pose.rotation.rotate(&GripperModel::APPROACH_AXIS)
    }

    /// Width and closing-axis invariants.
    pub fn check(&self, max_opening: f64) -> Result<(), String> {
        let w = (self.c2 - self.c1).norm();
        if (w - self.width).abs() > 1e-9 || self.width > max_opening {
            return Err(format!("width {} vs contacts {} (max {})", self.width, w, max_opening));
        }
        let axis = (self.c2 - self.c1) / w;
        if (axis - self.closing_axis()).norm() > 1e-6 {
            return Err("closing axis differs from the stroke axis".into());
        }
        Ok(())
    }
}

/// Frames at `approach_samples` angles about the closing axis whose approach
/// vector `a` points away from `center`. A midpoint on the center keeps all.
pub fn define_frames(pair: &AntipodalPair, center: &Vec3, approach_samples: usize) -> Result<Vec<GraspCandidate>, GraspGenError> {
    let w = pair.width();
    if !(w > 0.0) {
        return Err(GraspGenError::DegeneratePair);
    }
    let y = (pair.c2 - pair.c1) / w;
    let mid = (pair.c1 + pair.c2) * 0.5;
    let u = any_orthogonal(&y);
    let v = y.cross(&u);
    let offset = mid - center;
    let n = approach_samples.max(1);
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let theta = std::f64::consts::TAU * j as f64 / n as f64;
        let a = u * theta.cos() + v * theta.sin();
        if a.dot(&offset) < -1e-12 {
            continue;
        }
        let z = -a;
        let x = y.cross(&z);
        out.push(GraspCandidate {
            pose: Pose::new(Rotation::from_basis(&x, &y, &z), mid),
            c1: pair.c1,
            c2: pair.c2,
            width: w,
            antipodal_error: pair.antipodal_error(),
        });
    }
    Ok(out)
}

/// Pad opening used when checking a candidate against its own object.
pub fn filter_opening(width: f64, clearance: f64, gripper: &GripperModel) -> f64 {
    (width + 2.0 * clearance).min(gripper.max_opening())
}

/// Whether any gripper part at the given opening intersects the object.
pub fn gripper_hits_object(candidate: &GraspCandidate, mesh: &TriangleMesh, gripper: &GripperModel, opening: f64) -> bool {
    gripper.parts(opening).iter().any(|p| meshes_intersect(&p.mesh(), &candidate.pose, mesh, &Pose::identity()))
}

pub fn filter_gripper_collisions(candidates: Vec<GraspCandidate>, mesh: &TriangleMesh, gripper: &GripperModel, clearance: f64) -> Vec<GraspCandidate> {
    candidates
        .into_iter()
        .filter(|c| !gripper_hits_object(c, mesh, gripper, filter_opening(c.width, clearance, gripper)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspDatabase {
    pub format_version: u32,
    pub class_id: u32,
    pub object_name: String,
    pub frame_convention: String,
    pub gripper: GripperSpec,
    pub config: GraspGenConfig,
    pub budget_exhausted: bool,
    pub candidates: Vec<GraspCandidate>,
}

pub fn generate_database(model: &ObjectModel, gripper: &GripperModel, config: &GraspGenConfig) -> GraspDatabase {
    let sampling = sample_antipodal_pairs(&model.mesh, gripper, config);
    let mut frames = Vec::new();
    for pair in &sampling.pairs {
        if let Ok(f) = define_frames(pair, &model.center, config.approach_samples) {
            frames.extend(f);
        }
    }
    let candidates = filter_gripper_collisions(frames, &model.mesh, gripper, config.finger_clearance);
    GraspDatabase {
        format_version: FORMAT_VERSION,
        class_id: model.class_id,
        object_name: model.name.clone(),
        frame_convention: FRAME_CONVENTION.to_string(),
        gripper: gripper.spec.clone(),
        config: config.clone(),
        budget_exhausted: sampling.budget_exhausted,
        candidates,
    }
}

impl GraspDatabase {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraspGenError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != FORMAT_VERSION as u64 {
            return Err(GraspGenError::VersionMismatch { found, expected: FORMAT_VERSION });
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn write_db(db: &GraspDatabase, path: &Path) -> Result<(), GraspGenError> {
    std::fs::write(path, db.to_json())?;
    Ok(())
}

pub fn read_db(path: &Path) -> Result<GraspDatabase, GraspGenError> {
    GraspDatabase::from_json(&std::fs::read_to_string(path)?)
}
