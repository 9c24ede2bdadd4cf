use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angular_distance, Pose, Rotation, Vec3};

/// Tolerance used to check that the discrete part of a group is closed.
pub const CLOSURE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymmetryError {
    #[error("symmetry group does not contain the identity")]
    MissingIdentity,
    #[error("symmetry group is not closed: element {0} * element {1} is not a member")]
    NotClosed(usize, usize),
    #[error("continuous symmetry axis has zero length")]
    ZeroAxis,
}

/// Rotations about the object origin that leave the object's appearance
/// unchanged: a finite set plus full revolutions about continuous axes.
///
/// Elements act on the right of an object pose: `R` and `R * S` look the same.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymmetryGroupRaw", into = "SymmetryGroupRaw")]
pub struct SymmetryGroup {
    discrete: Vec<Rotation>,
    continuous_axes: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
struct SymmetryGroupRaw {
    /// `[w, x, y, z]` per element
    discrete: Vec<[f64; 4]>,
    #[serde(default)]
    continuous_axes: Vec<[f64; 3]>,
}

impl TryFrom<SymmetryGroupRaw> for SymmetryGroup {
    type Error = SymmetryError;
    fn try_from(raw: SymmetryGroupRaw) -> Result<Self, Self::Error> {
        let discrete = raw
            .discrete
            .iter()
            .map(|q| Rotation::from_wxyz(q[0], q[1], q[2], q[3]).map_err(|_| SymmetryError::MissingIdentity))
            .collect::<Result<Vec<_>, _>>()?;
        SymmetryGroup::new(discrete, raw.continuous_axes.iter().map(|a| Vec3::from(*a)).collect())
    }
}

impl From<SymmetryGroup> for SymmetryGroupRaw {
    fn from(g: SymmetryGroup) -> Self {
        SymmetryGroupRaw {
            discrete: g.discrete.iter().map(|r| r.canonical_wxyz()).collect(),
            continuous_axes: g.continuous_axes.iter().map(|a| [a.x, a.y, a.z]).collect(),
        }
    }
}

fn contains(set: &[Rotation], r: &Rotation) -> bool {
    set.iter().any(|s| angular_distance(s, r) < CLOSURE_TOLERANCE)
}

impl SymmetryGroup {
    pub fn new(discrete: Vec<Rotation>, continuous_axes: Vec<Vec3>) -> Result<Self, SymmetryError> {
        if !contains(&discrete, &Rotation::identity()) {
            return Err(SymmetryError::MissingIdentity);
        }
        for (i, a) in discrete.iter().enumerate() {
            for (j, b) in discrete.iter().enumerate() {
                if !contains(&discrete, &(*a * *b)) {
                    return Err(SymmetryError::NotClosed(i, j));
                }
            }
        }
        let mut axes = Vec::with_capacity(continuous_axes.len());
        for a in continuous_axes {
            let n = a.norm();
            if !(n > 1e-12) {
                return Err(SymmetryError::ZeroAxis);
            }
            axes.push(a / n);
        }
        Ok(SymmetryGroup { discrete, continuous_axes: axes })
    }

    /// The trivial group `{I}`.
    pub fn trivial() -> Self {
        SymmetryGroup { discrete: vec![Rotation::identity()], continuous_axes: vec![] }
    }

    /// Closure of a set of generators under composition.
    pub fn generate(generators: &[Rotation], continuous_axes: Vec<Vec3>) -> Result<Self, SymmetryError> {
        let mut elems = vec![Rotation::identity()];
        let mut frontier = elems.clone();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for e in &frontier {
                for g in generators {
                    let c = *e * *g;
                    if !contains(&elems, &c) {
                        elems.push(c);
                        next.push(c);
                    }
                }
            }
            frontier = next;
            if elems.len() > 1000 {
                break;
            }
        }
        SymmetryGroup::new(elems, continuous_axes)
    }

    /// The 24 proper rotations of a cube.
    pub fn cube() -> Self {
        let h = std::f64::consts::FRAC_PI_2;
        Self::generate(&[Rotation::from_axis_angle(&Vec3::x(), h), Rotation::from_axis_angle(&Vec3::z(), h)], vec![]).unwrap()
    }

    /// Box with three distinct side lengths: half turns about each axis.
    pub fn cuboid() -> Self {
        let p = std::f64::consts::PI;
        Self::generate(&[Rotation::from_axis_angle(&Vec3::x(), p), Rotation::from_axis_angle(&Vec3::z(), p)], vec![]).unwrap()
    }

    /// Cylinder along z: any rotation about z, plus the end-over-end flip.
    pub fn cylinder() -> Self {
        SymmetryGroup::new(
            vec![Rotation::identity(), Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::PI)],
            vec![Vec3::z()],
        )
        .unwrap()
    }

    pub fn discrete(&self) -> &[Rotation] {
        &self.discrete
    }

    pub fn continuous_axes(&self) -> &[Vec3] {
        &self.continuous_axes
    }

    /// Whether two or more independent continuous axes make every rotation a symmetry.
    fn is_full_rotation_group(&self) -> bool {
        self.continuous_axes
            .iter()
            .enumerate()
            .any(|(i, a)| self.continuous_axes[i + 1..].iter().any(|b| a.cross(b).norm() > 1e-9))
    }

    /// Group element `S` minimizing the angle between `rotation * S` and
    /// `reference`. Continuous axes are solved in closed form.
    pub fn closest_element(&self, rotation: &Rotation, reference: &Rotation) -> Rotation {
        if self.is_full_rotation_group() {
            return rotation.inverse() * *reference;
        }
        let mut best = (f64::INFINITY, Rotation::identity());
        for d in &self.discrete {
            let mut s = *d;
            if let Some(axis) = self.continuous_axes.first() {
                // relative rotation q_rel = ref^-1 * R * D; maximize |w| of q_rel * exp(theta/2 * axis)
                let rel = (reference.inverse() * *rotation * *d).wxyz();
                let dot = rel[1] * axis.x + rel[2] * axis.y + rel[3] * axis.z;
                let theta = 2.0 * (-dot).atan2(rel[0]);
                s = *d * Rotation::from_axis_angle(axis, theta);
            }
            let err = angular_distance(&(*rotation * s), reference);
            if err < best.0 - 1e-12 {
                best = (err, s);
            }
        }
        best.1
    }

    /// `pose * S` for the element bringing its rotation closest to `reference`.
    pub fn canonicalize(&self, pose: &Pose, reference: &Rotation) -> Pose {
        let s = self.closest_element(&pose.rotation, reference);
        Pose::new(pose.rotation * s, pose.translation)
    }

    /// A random group element from a uniform draw over the discrete part and,
    /// for a continuous axis, an angle in `[0, 2pi)`.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> Rotation {
        let d = self.discrete[rng.random_range(0..self.discrete.len())];
        match self.continuous_axes.first() {
            Some(axis) => d * Rotation::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::TAU)),
            None => d,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_group_has_24_elements() {
        assert_eq!(SymmetryGroup::cube().discrete().len(), 24);
        assert_eq!(SymmetryGroup::cuboid().discrete().len(), 4);
    }

    #[test]
    fn rejects_open_sets() {
        let q = Rotation::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
        assert_eq!(SymmetryGroup::new(vec![Rotation::identity(), q], vec![]).unwrap_err(), SymmetryError::NotClosed(1, 1));
        assert_eq!(SymmetryGroup::new(vec![q], vec![]).unwrap_err(), SymmetryError::MissingIdentity);
    }

    #[test]
    fn cylinder_spin_canonicalizes_to_reference() {
        let g = SymmetryGroup::cylinder();
        let reference = Rotation::from_axis_angle(&Vec3::new(0.3, 1.0, -0.2), 0.9);
        let rotated = reference * Rotation::from_axis_angle(&Vec3::z(), 137f64.to_radians());
        let p = g.canonicalize(&Pose::new(rotated, Vec3::new(1.0, 2.0, 3.0)), &reference);
        assert!(angular_distance(&p.rotation, &reference) < 1e-9);
        assert_eq!(p.translation, Vec3::new(1.0, 2.0, 3.0));

        let flipped = reference * Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::PI) * Rotation::from_axis_angle(&Vec3::z(), 0.4);
        assert!(angular_distance(&g.canonicalize(&Pose::new(flipped, Vec3::zeros()), &reference).rotation, &reference) < 1e-9);
    }

    #[test]
    fn trivial_group_is_identity_map() {
        let g = SymmetryGroup::trivial();
        let p = Pose::new(Rotation::from_axis_angle(&Vec3::y(), 2.0), Vec3::x());
        assert_eq!(g.canonicalize(&p, &Rotation::identity()), p);
    }

    #[test]
    fn serde_roundtrip_validates() {
        let g = SymmetryGroup::cylinder();
        let s = serde_json::to_string(&g).unwrap();
        let back: SymmetryGroup = serde_json::from_str(&s).unwrap();
        assert_eq!(back.discrete().len(), 2);
        assert!(serde_json::from_str::<SymmetryGroup>(r#"{"discrete":[[0.7071,0,0,0.7071]]}"#).is_err());
    }
}
