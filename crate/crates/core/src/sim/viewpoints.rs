//! Camera viewpoints on a hemisphere over the bin, ordered so that each new
//! view is as far as possible from the ones already used.

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Rotation, Vec3};
use crate::grasp_plan::ReachModel;

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewpointConfig {
    /// sensor distance to the bin center, meters
    pub radius: f64,
    pub n_samples: usize,
    /// largest angle from the vertical, radians
    pub max_polar: f64,
}

impl Default for ViewpointConfig {
    fn default() -> Self {
        ViewpointConfig { radius: 0.50, n_samples: 24, max_polar: 35f64.to_radians() }
    }
}

/// Camera poses in visiting order, cycled when exhausted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewpointPlan {
    pub poses: Vec<Pose>,
}

impl ViewpointPlan {
    pub fn get(&self, i: usize) -> Pose {
        self.poses[i % self.poses.len()]
    }
}

/// Camera at `eye` with `+z` toward `target`. The image `x` axis follows the
/// world `x` axis as closely as possible.
pub fn look_at(eye: &Vec3, target: &Vec3) -> Pose {
    let z = (target - eye).normalize();
    let mut x = Vec3::x() - z * z.x;
    if x.norm() < 1e-6 {
        x = Vec3::y() - z * z.y;
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Pose::new(Rotation::from_basis(&x, &y, &z), *eye)
}

/// Fibonacci lattice on the upper unit hemisphere.
pub fn fibonacci_hemisphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Vec3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

fn geodesic(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Greedy farthest-point order from `start`: each pick maximizes its
/// smallest geodesic distance to those already picked; ties keep the lower index.
pub fn farthest_point_order(dirs: &[Vec3], start: usize) -> Vec<usize> {
    let mut order = vec![start];
    let mut gap: Vec<f64> = dirs.iter().map(|d| geodesic(d, &dirs[start])).collect();
    let mut used = vec![false; dirs.len()];
    used[start] = true;
    while order.len() < dirs.len() {
        let mut best = None;
        for (i, g) in gap.iter().enumerate() {
            if !used[i] && best.is_none_or(|b: usize| *g > gap[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("an unused direction remains");
        used[b] = true;
        order.push(b);
        for (i, g) in gap.iter_mut().enumerate() {
            *g = g.min(geodesic(&dirs[i], &dirs[b]));
        }
    }
    order
}

/// Top-down view first, then hemisphere samples within `max_polar` whose
/// camera position the robot can reach.
pub fn plan_viewpoints(bin_pose: &Pose, config: &ViewpointConfig, reach: &ReachModel) -> Result<ViewpointPlan, SimError> {
    if !(config.radius > 0.0) {
        return Err(SimError::Config(format!("viewpoint radius must be positive, got {}", config.radius)));
    }
    let center = bin_pose.translation;
    let mut dirs = vec![Vec3::z()];
    dirs.extend(fibonacci_hemisphere(config.n_samples).into_iter().filter(|d| {
        let polar = d.z.clamp(-1.0, 1.0).acos();
        polar <= config.max_polar && polar > 1e-3
    }));
    let world: Vec<Vec3> = dirs.iter().map(|d| bin_pose.rotation.rotate(d)).collect();
    let keep: Vec<Vec3> = world.into_iter().filter(|d| reach.position_reachable(&(center + d * config.radius))).collect();
    if keep.is_empty() {
        return Err(SimError::NoReachableViewpoint);
    }
    // the top-down view leads when reachable; otherwise the first kept sample does
    let order = farthest_point_order(&keep, 0);
    let poses = order.into_iter().map(|i| look_at(&(center + keep[i] * config.radius), &center)).collect();
    Ok(ViewpointPlan { poses })
}
