mod common;

use binpick_core::geometry::{Pose, Vec3};
use binpick_core::grasp_gen::{
    define_frames, filter_gripper_collisions, filter_opening, generate_database, sample_antipodal_pairs, GraspCandidate, GraspGenConfig,
};
use binpick_core::gripper::{GripperModel, GripperSpec, PartBox};
use binpick_core::mesh::TriangleMesh;
use binpick_core::object::{ObjectModel, ObjectSpec};
use common::*;
use proptest::prelude::*;

fn gripper() -> GripperModel {
    GripperModel::new(GripperSpec::default()).unwrap()
}

fn u_channel_model() -> ObjectModel {
    ObjectSpec::Mesh { path: fixture("u_channel.obj"), scale: 1.0, symmetry: None }.build(7).unwrap()
}

fn test_models() -> Vec<ObjectModel> {
    vec![
        ObjectSpec::Cuboid { size: [0.03, 0.03, 0.03] }.build(0).unwrap(),
        ObjectSpec::default().build(1).unwrap(),
        u_channel_model(),
    ]
}

fn angle(a: &Vec3, b: &Vec3) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos()
}

/// Any gripper box, grown by `margin` per side, touching or containing the
/// object or buried inside it.
fn gripper_collides_oracle(c: &GraspCandidate, mesh: &TriangleMesh, opening: f64, margin: f64) -> bool {
    let obj = posed_triangles(mesh, &Pose::identity());
    gripper().parts(opening).iter().any(|part| box_collides(&PartBox { half: part.half.add_scalar(margin), ..*part }, &c.pose, &obj))
}

fn all_frames(model: &ObjectModel, cfg: &GraspGenConfig) -> Vec<GraspCandidate> {
    let pairs = sample_antipodal_pairs(&model.mesh, &gripper(), cfg).pairs;
    pairs.iter().flat_map(|p| define_frames(p, &model.center, cfg.approach_samples).unwrap()).collect()
}

#[test]
fn collision_filter_keeps_exactly_the_oracle_survivors() {
    let cfg = GraspGenConfig { n_target: 40, seed: 3, ..Default::default() };
    let mut rejected = 0;
    for model in test_models() {
        let frames = all_frames(&model, &cfg);
        let got = filter_gripper_collisions(frames.clone(), &model.mesh, &gripper(), cfg.finger_clearance);
        let mut decided = 0;
        for c in &frames {
            let opening = filter_opening(c.width, cfg.finger_clearance, &gripper());
            // faces flush with the object within a micron could go either way
            let (shrunk, grown) = (gripper_collides_oracle(c, &model.mesh, opening, -1e-7), gripper_collides_oracle(c, &model.mesh, opening, 1e-7));
            if shrunk == grown {
                decided += 1;
                assert_eq!(got.contains(c), !shrunk, "{}: {c:?}", model.name);
            }
        }
        // the channel's slot is exactly as wide as a finger plus clearance
        assert!(decided * 2 >= frames.len(), "{}: {decided} of {}", model.name, frames.len());
        assert!(!got.is_empty(), "{}", model.name);
        rejected += frames.len() - got.len();
    }
    assert!(rejected > 0);
}

#[test]
fn database_candidates_are_sound() {
    let g = gripper();
    for model in test_models() {
        let cfg = GraspGenConfig { n_target: 60, seed: 11, ..Default::default() };
        let db = generate_database(&model, &g, &cfg);
        assert!(!db.candidates.is_empty(), "{}", model.name);
        let tris = posed_triangles(&model.mesh, &Pose::identity());
        for c in &db.candidates {
            c.check(g.max_opening()).unwrap();
            // contacts on the surface, normals opposed within tolerance
            assert!(mesh_distance(&tris, &c.c1) < 1e-9 && mesh_distance(&tris, &c.c2) < 1e-9);
            assert!(c.antipodal_error <= cfg.antipodal_tolerance + 1e-12);
            let m = c.pose.rotation.matrix();
            assert!((m.determinant() - 1.0).abs() < 1e-9);
            assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-9);
            assert!((c.pose.translation - (c.c1 + c.c2) * 0.5).norm() < 1e-12);
            // the open hand clears the object at the database's own opening
            assert!(!gripper_collides_oracle(c, &model.mesh, filter_opening(c.width, cfg.finger_clearance, &g), -1e-7));
        }
    }
}

#[test]
fn cylinder_pairs_span_the_diameter_or_the_length() {
    let (r, len, seg) = (0.012, 0.04, 32);
    let model = ObjectSpec::Cylinder { radius: r, length: len, segments: seg }.build(0).unwrap();
    let cfg = GraspGenConfig { n_target: 200, seed: 4, ..Default::default() };
    let pairs = sample_antipodal_pairs(&model.mesh, &gripper(), &cfg).pairs;
    assert_eq!(pairs.len(), 200);
    let flat = 2.0 * r * (std::f64::consts::PI / seg as f64).cos();
    let mut side = 0;
    for p in &pairs {
        let w = p.width();
        let across = w >= flat - 1e-9 && w <= 2.0 * r + 1e-9;
        assert!(across || (w - len).abs() < 1e-9, "width {w}");
        side += across as usize;
        // both errors recomputed from raw contacts and normals
        let err = angle(&p.n1, &-p.n2).max(angle(&(p.c2 - p.c1), &-p.n1));
        assert!((err - p.antipodal_error()).abs() < 1e-12 && err <= cfg.antipodal_tolerance);
    }
    // curved side carries most of the area
    assert!(side > pairs.len() / 2);
}

#[test]
fn u_channel_candidates_avoid_the_slot_without_reaching_inside() {
    let model = u_channel_model();
    let db = generate_database(&model, &gripper(), &GraspGenConfig { n_target: 80, seed: 2, ..Default::default() });
    assert!(!db.candidates.is_empty());
    for c in &db.candidates {
        // grasping from one contact to the other never crosses empty space across the slot
        let mid = (c.c1 + c.c2) * 0.5;
        assert!(model.mesh.contains_point(&mid), "midpoint {mid:?} outside the solid");
    }
}

#[test]
fn budget_exhaustion_is_reported() {
    // nothing fits a 1 mm opening
    let spec = GripperSpec { max_opening: 0.001, ..Default::default() };
    let g = GripperModel::new(spec).unwrap();
    let model = ObjectSpec::Cuboid { size: [0.03, 0.03, 0.03] }.build(0).unwrap();
    let out = sample_antipodal_pairs(&model.mesh, &g, &GraspGenConfig { n_target: 10, budget_factor: 5, ..Default::default() });
    assert!(out.pairs.is_empty() && out.budget_exhausted);
    assert_eq!(out.samples_used, 50);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frames_are_right_handed_with_stroke_along_the_contacts(seed in any::<u64>(), k in 1usize..12) {
        let model = ObjectSpec::Cuboid { size: [0.04, 0.03, 0.02] }.build(0).unwrap();
        let cfg = GraspGenConfig { n_target: 5, seed, approach_samples: k, ..Default::default() };
        for pair in sample_antipodal_pairs(&model.mesh, &gripper(), &cfg).pairs {
            let frames = define_frames(&pair, &model.center, k).unwrap();
            prop_assert!(frames.len() <= k);
            for f in &frames {
                let m = f.pose.rotation.matrix();
                prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
                let y = m.column(1).into_owned();
                prop_assert!((y - (pair.c2 - pair.c1).normalize()).norm() < 1e-9);
                // approach points away from the object center
                let a = -m.column(2).into_owned();
                prop_assert!(a.dot(&(f.pose.translation - model.center)) >= -1e-12);
            }
        }
    }
}
