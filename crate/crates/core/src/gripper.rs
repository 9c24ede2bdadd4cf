//! Parallel-jaw gripper built from boxes in the end-effector frame.
//!
//! Frame convention: origin at the midpoint between the finger pads, `y` is
//! the closing (stroke) axis, `z` the approach axis pointing from the gripper
//! toward the object, `x = y × z` the lateral axis.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::mesh::{shapes, TriangleMesh};

pub const FRAME_CONVENTION: &str = "origin=contact_midpoint;y=closing;z=approach_toward_object;x=y_cross_z";

#[derive(Debug, Error)]
pub enum GripperError {
    #[error("invalid gripper: {0}")]
    Invalid(String),
    #[error("cannot parse gripper file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperSpec {
    /// meters between finger pads when fully open
    pub max_opening: f64,
    /// along the closing axis
    pub finger_thickness: f64,
    /// along the lateral axis
    pub finger_width: f64,
    /// along the approach axis
    pub finger_length: f64,
    /// fingertip position beyond the frame origin along +z
    pub tip_depth: f64,
    /// `[x, y, z]` full extents
    pub palm: [f64; 3],
    pub wrist: [f64; 3],
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec {
            max_opening: 0.06,
            finger_thickness: 0.008,
            finger_width: 0.016,
            finger_length: 0.045,
            tip_depth: 0.005,
            palm: [0.03, 0.08, 0.02],
            wrist: [0.05, 0.05, 0.10],
        }
    }
}

impl GripperSpec {
    pub fn validate(&self) -> Result<(), GripperError> {
        let dims = [self.max_opening, self.finger_thickness, self.finger_width, self.finger_length]
            .into_iter()
            .chain(self.palm)
            .chain(self.wrist);
        if dims.into_iter().any(|d| !(d > 0.0 && d.is_finite())) {
            return Err(GripperError::Invalid("all dimensions must be positive".into()));
        }
        if self.tip_depth >= self.finger_length {
            return Err(GripperError::Invalid("tip_depth must be shorter than the fingers".into()));
        }
        Ok(())
    }

    /// Reads TOML or JSON by extension.
    pub fn load(path: &Path) -> Result<Self, GripperError> {
        let text = std::fs::read_to_string(path)?;
        let spec: GripperSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| GripperError::Parse(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| GripperError::Parse(e.to_string()))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Finger,
    Palm,
    Wrist,
}

/// Box in the end-effector frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartBox {
    pub kind: PartKind,
    pub center: Vec3,
    pub half: Vec3,
}

impl PartBox {
    pub fn mesh(&self) -> TriangleMesh {
        shapes::cuboid(self.half * 2.0).transformed(&Pose::from_translation(self.center))
    }

    /// Shrunk by `d` per side, never below `min_half`.
    pub fn eroded(&self, d: f64, min_half: f64) -> PartBox {
        PartBox { half: self.half.map(|h| (h - d).max(min_half)), ..*self }
    }
}

#[derive(Clone, Debug)]
pub struct GripperModel {
    pub spec: GripperSpec,
    /// +y finger at zero opening
    pub finger_mesh: Arc<TriangleMesh>,
}

impl GripperModel {
    pub const STROKE_AXIS: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const APPROACH_AXIS: Vec3 = Vec3::new(0.0, 0.0, 1.0);
    pub const LATERAL_AXIS: Vec3 = Vec3::new(1.0, 0.0, 0.0);

    pub fn new(spec: GripperSpec) -> Result<Self, GripperError> {
        spec.validate()?;
        let finger = Self::parts_for(&spec, 0.0)[0];
        Ok(GripperModel { finger_mesh: Arc::new(finger.mesh()), spec })
    }

    pub fn max_opening(&self) -> f64 {
        self.spec.max_opening
    }

    fn parts_for(s: &GripperSpec, opening: f64) -> [PartBox; 4] {
        let (t, w, l) = (s.finger_thickness, s.finger_width, s.finger_length);
        let fz = s.tip_depth - l * 0.5;
        let finger_half = Vec3::new(w * 0.5, t * 0.5, l * 0.5);
        let fy = opening * 0.5 + t * 0.5;
        let palm_z = s.tip_depth - l - s.palm[2] * 0.5;
        let wrist_z = s.tip_depth - l - s.palm[2] - s.wrist[2] * 0.5;
        [
            PartBox { kind: PartKind::Finger, center: Vec3::new(0.0, fy, fz), half: finger_half },
            PartBox { kind: PartKind::Finger, center: Vec3::new(0.0, -fy, fz), half: finger_half },
            PartBox { kind: PartKind::Palm, center: Vec3::new(0.0, 0.0, palm_z), half: Vec3::from(s.palm) * 0.5 },
            PartBox { kind: PartKind::Wrist, center: Vec3::new(0.0, 0.0, wrist_z), half: Vec3::from(s.wrist) * 0.5 },
        ]
    }

    /// Fingers (two), palm and wrist with the pads `opening` apart.
    pub fn parts(&self, opening: f64) -> [PartBox; 4] {
        Self::parts_for(&self.spec, opening.clamp(0.0, self.spec.max_opening))
    }

    /// Region swept by the finger pads while closing from `opening`.
    pub fn closing_region(&self, opening: f64) -> PartBox {
        let s = &self.spec;
        PartBox {
            kind: PartKind::Finger,
            center: Vec3::new(0.0, 0.0, s.tip_depth - s.finger_length * 0.5),
            half: Vec3::new(s.finger_width * 0.5, opening.clamp(0.0, s.max_opening) * 0.5, s.finger_length * 0.5),
        }
    }

    /// Distance from the frame origin back to the rear face of the wrist.
    pub fn depth_behind_origin(&self) -> f64 {
        self.spec.finger_length - self.spec.tip_depth + self.spec.palm[2] + self.spec.wrist[2]
    }
}
