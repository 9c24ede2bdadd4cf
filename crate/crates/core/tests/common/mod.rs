//! Brute-force oracles shared by the integration suites. None of them use the
//! library's acceleration structures or intersection primitives.

#![allow(dead_code)]

use binpick_core::geometry::{Pose, Rotation, Vec3};
use binpick_core::grasp_plan::{BinFrame, PlannerConfig, RankedGrasp};
use binpick_core::gripper::{GripperModel, PartBox};
use binpick_core::scene::{GridSpec, SceneState, Target, VoxelGrid};
use binpick_core::sim::{generate_bin, BinSpec, FillConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use binpick_core::mesh::TriangleMesh;
use rand::Rng;

pub type Tri = [Vec3; 3];

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn random_rotation(rng: &mut impl Rng) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2: f64 = q.iter().map(|c| c * c).sum();
        if n2 > 1e-3 && n2 <= 1.0 {
            return Rotation::from_wxyz(q[0], q[1], q[2], q[3]).unwrap();
        }
    }
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn posed_triangles(mesh: &TriangleMesh, pose: &Pose) -> Vec<Tri> {
    (0..mesh.len()).map(|i| mesh.triangle(i).map(|v| pose.transform_point(&v))).collect()
}

/// Two-sided Moller-Trumbore; distance along a unit `dir`.
pub fn ray_tri(o: &Vec3, dir: &Vec3, t: &Tri) -> Option<f64> {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let s = o - t[0];
    let u = s.dot(&p) / det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) / det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    Some(e2.dot(&q) / det)
}

/// Nearest hit beyond `t_min` over every triangle.
pub fn brute_raycast(tris: &[Tri], o: &Vec3, dir: &Vec3, t_min: f64) -> Option<f64> {
    let d = dir.normalize();
    tris.iter().filter_map(|t| ray_tri(o, &d, t)).filter(|t| *t > t_min).min_by(|a, b| a.total_cmp(b))
}

fn segment_hits(p: &Vec3, q: &Vec3, t: &Tri) -> bool {
    let d = q - p;
    let len = d.norm();
    if len == 0.0 {
        return false;
    }
    ray_tri(p, &(d / len), t).is_some_and(|s| (0.0..=len).contains(&s))
}

/// Transversal test: some edge of one triangle pierces the other. Sound for
/// triangles in general position, which random poses give almost surely.
pub fn triangles_touch(a: &Tri, b: &Tri) -> bool {
    (0..3).any(|i| segment_hits(&a[i], &a[(i + 1) % 3], b) || segment_hits(&b[i], &b[(i + 1) % 3], a))
}

/// Odd number of crossings along a fixed skew ray.
pub fn inside(tris: &[Tri], p: &Vec3) -> bool {
    let d = Vec3::new(0.31, -0.77, 0.557).normalize();
    tris.iter().filter(|t| ray_tri(p, &d, t).is_some_and(|s| s > 0.0)).count() % 2 == 1
}

/// All-pairs surface test plus containment of either mesh in the other.
pub fn brute_meshes_intersect(a: &TriangleMesh, pa: &Pose, b: &TriangleMesh, pb: &Pose) -> bool {
    let ta = posed_triangles(a, pa);
    let tb = posed_triangles(b, pb);
    if ta.iter().any(|x| tb.iter().any(|y| triangles_touch(x, y))) {
        return true;
    }
    (b.is_closed() && inside(&tb, &ta[0][0])) || (a.is_closed() && inside(&ta, &tb[0][0]))
}

pub fn point_triangle_distance(p: &Vec3, t: &Tri) -> f64 {
    // inside the prism over the triangle: plane distance; otherwise nearest edge
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let nn = n.norm();
    let n = n / nn;
    let proj = p - n * (p - t[0]).dot(&n);
    let inside = (0..3).all(|i| (t[(i + 1) % 3] - t[i]).cross(&(proj - t[i])).dot(&n) >= 0.0);
    if inside {
        return (p - proj).norm();
    }
    (0..3)
        .map(|i| {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            let ab = b - a;
            let s = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            (p - (a + ab * s)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn mesh_distance(tris: &[Tri], p: &Vec3) -> f64 {
    tris.iter().map(|t| point_triangle_distance(p, t)).fold(f64::INFINITY, f64::min)
}

/// Separating-axis triangle against axis-aligned box.
pub fn triangle_box(t: &Tri, center: &Vec3, half: &Vec3) -> bool {
    let v: Vec<Vec3> = t.iter().map(|p| p - center).collect();
    let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let mut axes: Vec<Vec3> = vec![Vec3::x(), Vec3::y(), Vec3::z(), edges[0].cross(&edges[1])];
    for e in &edges {
        for a in [Vec3::x(), Vec3::y(), Vec3::z()] {
            axes.push(a.cross(e));
        }
    }
    for ax in axes {
        if ax.norm_squared() < 1e-24 {
            continue;
        }
        let p: Vec<f64> = v.iter().map(|x| x.dot(&ax)).collect();
        let r = half.x * ax.x.abs() + half.y * ax.y.abs() + half.z * ax.z.abs();
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo > r || hi < -r {
            return false;
        }
    }
    true
}

/// Corners and faces of a posed box, written out by hand.
pub fn box_triangles(part: &PartBox, pose: &Pose) -> Vec<Tri> {
    let h = part.half;
    let corner = |i: usize| {
        let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
        pose.transform_point(&(part.center + Vec3::new(s(1) * h.x, s(2) * h.y, s(4) * h.z)))
    };
    let faces = [[0, 1, 3, 2], [4, 5, 7, 6], [0, 1, 5, 4], [2, 3, 7, 6], [0, 2, 6, 4], [1, 3, 7, 5]];
    faces.iter().flat_map(|f| [[corner(f[0]), corner(f[1]), corner(f[2])], [corner(f[0]), corner(f[2]), corner(f[3])]]).collect()
}

pub fn in_box(part: &PartBox, pose: &Pose, p: &Vec3) -> bool {
    let local = pose.inverse().transform_point(p) - part.center;
    (0..3).all(|k| local[k].abs() <= part.half[k])
}

/// Box surface crossing a closed triangle soup, or either one inside the other.
pub fn box_collides(part: &PartBox, pose: &Pose, tris: &[Tri]) -> bool {
    let b = box_triangles(part, pose);
    b.iter().any(|x| tris.iter().any(|y| triangles_touch(x, y))) || in_box(part, pose, &tris[0][0]) || inside(tris, &b[0][0])
}

/// Scene flattened to world-frame triangle soups and voxel boxes.
pub struct FlatScene {
    pub statics: Vec<Vec<Tri>>,
    pub targets: Vec<(u64, Vec<Tri>)>,
    pub voxels: Vec<(Vec3, Vec3)>,
}

impl FlatScene {
    pub fn new(scene: &SceneState) -> Self {
        FlatScene {
            statics: scene.statics.iter().map(|s| posed_triangles(&s.mesh, &s.pose)).collect(),
            targets: scene.targets.iter().map(|t| (t.track_id, posed_triangles(&t.model.mesh, &t.pose))).collect(),
            voxels: scene.voxels.occupied().map(|v| scene.voxels.voxel_box(v)).collect(),
        }
    }
}

fn bounds(points: impl IntoIterator<Item = Vec3>) -> (Vec3, Vec3) {
    points.into_iter().fold((Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)), |(lo, hi), p| (lo.inf(&p), hi.sup(&p)))
}

fn overlap(a: &(Vec3, Vec3), b: &(Vec3, Vec3)) -> bool {
    (0..3).all(|k| a.0[k] <= b.1[k] && b.0[k] <= a.1[k])
}

/// Box against a soup, skipped when the bounds are apart.
fn box_hits(part: &PartBox, pose: &Pose, tris: &[Tri]) -> bool {
    let bb = bounds(box_triangles(part, pose).into_iter().flatten());
    let tb = bounds(tris.iter().flatten().copied());
    overlap(&bb, &tb) && box_collides(part, pose, tris)
}

/// Voxels whose cube meets any of the boxes, counted once each.
pub fn voxel_contacts(parts: &[PartBox], pose: &Pose, voxels: &[(Vec3, Vec3)]) -> usize {
    let boxes: Vec<_> = parts
        .iter()
        .map(|p| {
            let tris = box_triangles(p, pose);
            (bounds(tris.iter().flatten().copied()), tris, p)
        })
        .collect();
    voxels
        .iter()
        .filter(|(c, h)| {
            boxes.iter().any(|(bb, tris, p)| overlap(bb, &(c - h, c + h)) && (tris.iter().any(|t| triangle_box(t, c, h)) || in_box(p, pose, c)))
        })
        .count()
}

fn grown(parts: &[PartBox], margin: f64) -> Vec<PartBox> {
    parts.iter().map(|p| PartBox { half: p.half.add_scalar(margin), ..*p }).collect()
}

fn reachable(cfg: &PlannerConfig, pose: &Pose) -> bool {
    let r = (pose.translation - cfg.reach.base).norm();
    let z = pose.rotation.matrix().column(2).into_owned();
    r >= cfg.reach.r_min && r <= cfg.reach.r_max && -z.z >= cfg.reach.max_tilt.cos() - 1e-12
}

/// Straight-line sweep: `n = ceil(d / step)` samples ending on `b`, with
/// rounding noise on exact multiples ignored.
fn sweep(a: &Pose, b: &Pose, step: f64) -> Vec<Pose> {
    let d = b.translation - a.translation;
    let n = ((d.norm() / step - 1e-9).ceil() as usize).max(1);
    (1..=n).map(|i| Pose::new(a.rotation, a.translation + d * (i as f64 / n as f64))).collect()
}

/// Both planner stages recomputed with exhaustive collision tests and boxes
/// grown by `margin`. On success returns the swept (pose, opening, relaxed) samples.
pub fn feasible_oracle(
    g: &RankedGrasp,
    scene: &SceneState,
    flat: &FlatScene,
    gripper: &GripperModel,
    bin: &BinFrame,
    cfg: &PlannerConfig,
    margin: f64,
) -> Result<Vec<(Pose, f64, bool)>, String> {
    let w = g.world_pose;
    if !reachable(cfg, &w) {
        return Err("unreachable".into());
    }
    let open = (g.candidate.width + 2.0 * cfg.opening_margin).min(gripper.max_opening());
    let parts = grown(&gripper.parts(open), margin);
    let others: Vec<&Vec<Tri>> = flat.targets.iter().filter(|(id, _)| *id != g.track_id).map(|(_, t)| t).collect();
    let hits = |parts: &[PartBox], pose: &Pose, soups: &[&Vec<Tri>]| parts.iter().any(|p| soups.iter().any(|s| box_hits(p, pose, s)));
    let statics: Vec<&Vec<Tri>> = flat.statics.iter().collect();
    if hits(&parts, &w, &statics) {
        return Err("static at grasp".into());
    }
    if hits(&parts, &w, &others) {
        return Err("object at grasp".into());
    }
    if voxel_contacts(&parts, &w, &flat.voxels) > 0 {
        return Err("voxel at grasp".into());
    }
    let z = w.rotation.matrix().column(2).into_owned();
    let pre = Pose::new(w.rotation, w.translation - z * cfg.motion.pre_grasp_offset);
    let lift_z = (bin.pose.translation.z + cfg.motion.lift_height).max(w.translation.z);
    let lift = Pose::new(w.rotation, Vec3::new(w.translation.x, w.translation.y, lift_z));
    let retreat = Pose::new(w.rotation, Vec3::new(bin.pose.translation.x, bin.pose.translation.y, lift_z));
    let step = cfg.motion.max_step.min(scene.voxels.resolution()).max(1e-4);
    let mut samples = vec![(pre, open, true)];
    samples.extend(sweep(&pre, &w, step).into_iter().map(|p| (p, open, true)));
    samples.extend(sweep(&w, &lift, step).into_iter().map(|p| (p, g.candidate.width, true)));
    samples.extend(sweep(&lift, &retreat, step).into_iter().map(|p| (p, g.candidate.width, false)));
    for (i, (pose, opening, relaxed)) in samples.iter().enumerate() {
        let r = (pose.translation - cfg.reach.base).norm();
        if r < cfg.reach.r_min || r > cfg.reach.r_max {
            return Err(format!("unreachable sample {i}"));
        }
        let full = grown(&gripper.parts(*opening), margin);
        if hits(&full, pose, &statics) {
            return Err(format!("static at sample {i}"));
        }
        if *relaxed {
            let eroded: Vec<PartBox> = gripper
                .parts(*opening)
                .iter()
                .map(|p| PartBox { half: p.half.map(|h| (h - cfg.relax.erosion).max(cfg.relax.min_half) + margin), ..*p })
                .collect();
            if hits(&eroded, pose, &others) {
                return Err(format!("neighbor at sample {i}"));
            }
            if voxel_contacts(&eroded, pose, &flat.voxels) > cfg.relax.voxel_budget {
                return Err(format!("voxel budget at sample {i}"));
            }
        }
    }
    Ok(samples)
}

fn cylinder_model() -> std::sync::Arc<binpick_core::object::ObjectModel> {
    std::sync::Arc::new(binpick_core::object::ObjectSpec::default().build(0).unwrap())
}

/// Five known objects from a filled bin; a sixth is left unknown and shows up
/// only as voxels on its surface.
pub fn five_object_scene(seed: u64) -> (SceneState, BinFrame) {
    let spec = BinSpec { interior: [0.2, 0.15, 0.1], ..Default::default() };
    let bin = generate_bin(&cylinder_model(), 6, &spec, &FillConfig::default(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<Target> = bin.objects[..5]
        .iter()
        .map(|o| Target { track_id: o.id, model: o.instance.model.clone(), pose: o.instance.pose, confidence: rng.random_range(0.4..1.0) })
        .collect();
    let mut voxels = VoxelGrid::new(GridSpec::covering(&spec.interior_box(), 0.005)).unwrap();
    if let Some(hidden) = bin.objects.get(5) {
        for (p, _) in hidden.instance.model.mesh.sample_surface(400, seed) {
            if let Some(v) = voxels.voxel_of(&hidden.instance.pose.transform_point(&p)) {
                voxels.set(v, true);
            }
        }
    }
    (SceneState { targets, statics: bin.statics.clone(), voxels, iteration: 0 }, BinFrame { pose: spec.pose, rim_height: spec.interior[2] })
}

/// Score terms recomputed from the rotation matrix.
pub fn oracle_score(g: &RankedGrasp, target: &Target, targets: &[Target], bin: &BinFrame, w: [f64; 4]) -> f64 {
    let r = target.pose.rotation.matrix() * g.candidate.pose.rotation.matrix();
    let align = (1.0 - r[(2, 2)]) / 2.0;
    let yaw = (1.0 + r.column(0).dot(&bin.x_axis()).abs()) / 2.0;
    let max_c = targets.iter().map(|t| t.confidence).fold(0.0, f64::max);
    let top = targets.iter().map(|t| t.pose.translation.z).fold(f64::NEG_INFINITY, f64::max);
    let floor = bin.pose.translation.z;
    let height = if top - floor > 1e-12 { ((target.pose.translation.z - floor) / (top - floor)).clamp(0.0, 1.0) } else { 1.0 };
    let terms = [align, yaw, target.confidence / max_c, height];
    terms.iter().zip(w).map(|(t, w)| t * w).sum::<f64>() / w.iter().sum::<f64>()
}
