//! Object models: a mesh centered on its geometric center, its symmetry group
//! and a set of stable resting orientations used when filling a bin.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{Rotation, Vec3};
use crate::mesh::{self, shapes, MeshError, MeshFormat, TriangleMesh};
use crate::pose_buffer::SymmetryGroup;

#[derive(Clone, Debug)]
pub struct ObjectModel {
    pub class_id: u32,
    pub name: String,
    pub mesh: Arc<TriangleMesh>,
    pub symmetry: SymmetryGroup,
    pub center: Vec3,
    /// Orientations (object to world) the object can rest in on a flat surface.
    pub stable_rotations: Vec<Rotation>,
}

/// Serializable description of an object model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ObjectSpec {
    Cylinder { radius: f64, length: f64, #[serde(default = "default_segments")] segments: usize },
    Cuboid { size: [f64; 3] },
    Bracket { leg: f64, width: f64, thickness: f64 },
    Mesh {
        path: PathBuf,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        symmetry: Option<SymmetryGroup>,
    },
}

fn default_segments() -> usize {
    24
}

fn default_scale() -> f64 {
    1.0
}

impl Default for ObjectSpec {
    fn default() -> Self {
        ObjectSpec::Cylinder { radius: 0.012, length: 0.04, segments: 24 }
    }
}

fn half_turn(axis: Vec3) -> Rotation {
    Rotation::from_axis_angle(&axis, std::f64::consts::PI)
}

fn quarter_turn(axis: Vec3) -> Rotation {
    Rotation::from_axis_angle(&axis, std::f64::consts::FRAC_PI_2)
}

impl ObjectSpec {
    pub fn build(&self, class_id: u32) -> Result<ObjectModel, MeshError> {
        let (name, mesh, symmetry, stable) = match self {
            ObjectSpec::Cylinder { radius, length, segments } => (
                "cylinder".to_string(),
                shapes::cylinder(*radius, *length, *segments),
                SymmetryGroup::cylinder(),
                // lying on its side (axis along world x) and standing
                vec![quarter_turn(Vec3::y()), Rotation::identity()],
            ),
            ObjectSpec::Cuboid { size } => {
                let s = Vec3::from(*size);
                let cube = (s.x - s.y).abs() < 1e-12 && (s.y - s.z).abs() < 1e-12;
                let group = if cube { SymmetryGroup::cube() } else { SymmetryGroup::cuboid() };
                (
                    "cuboid".to_string(),
                    shapes::cuboid(s),
                    group,
                    vec![Rotation::identity(), quarter_turn(Vec3::x()), quarter_turn(Vec3::y())],
                )
            }
            ObjectSpec::Bracket { leg, width, thickness } => (
                "bracket".to_string(),
                shapes::bracket(*leg, *width, *thickness),
                SymmetryGroup::new(
                    vec![Rotation::identity(), half_turn(Vec3::new(1.0, 0.0, 1.0))],
                    vec![],
                )
                .expect("bracket group is closed"),
                vec![Rotation::identity(), quarter_turn(Vec3::x())],
            ),
            ObjectSpec::Mesh { path, scale, symmetry } => {
                let format = MeshFormat::from_path(path).ok_or_else(|| MeshError::UnknownFormat(path.display().to_string()))?;
                let m = mesh::load_mesh(path, format)?.scaled(*scale);
                (
                    path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string(),
                    m,
                    symmetry.clone().unwrap_or_else(SymmetryGroup::trivial),
                    vec![Rotation::identity()],
                )
            }
        };
        Ok(ObjectModel::new(class_id, name, mesh, symmetry, stable))
    }
}

impl ObjectModel {
    /// Recenters the mesh on its geometric center.
    pub fn new(class_id: u32, name: String, mesh: TriangleMesh, symmetry: SymmetryGroup, stable_rotations: Vec<Rotation>) -> Self {
        let c = mesh.geometric_center();
        let mesh = if c.norm() > 1e-12 { mesh.transformed(&crate::geometry::Pose::from_translation(-c)) } else { mesh };
        ObjectModel { class_id, name, mesh: Arc::new(mesh), symmetry, center: Vec3::zeros(), stable_rotations }
    }
}
