use std::hint::black_box;

use binpick_core::geometry::{Pose, Rotation, Vec3};
use binpick_core::mesh::TriangleMesh;
use binpick_core::perception::{render, SceneGeometry};
use binpick_core::pose_buffer::{PoseBuffer, WorldEstimate};
use binpick_core::scene::{classify_and_carve, depth_to_points};
use binpick_core::sim::{plan_viewpoints, IterationReport, SimConfig, Simulator};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default 100-object bin after a few iterations, so the buffer has confirmed targets.
fn warmed() -> (Simulator, IterationReport) {
    let mut sim = Simulator::new(SimConfig::default()).unwrap();
    let mut last = None;
    for _ in 0..3 {
        last = sim.step();
    }
    (sim, last.unwrap())
}

fn pipeline(c: &mut Criterion) {
    let (sim, report) = warmed();
    let cfg = sim.config().clone();
    let intr = cfg.camera.intrinsics();
    let camera = plan_viewpoints(&cfg.bin.pose, &cfg.viewpoints, &cfg.planner.reach).unwrap().get(report.event.viewpoint);
    let statics: Vec<(&TriangleMesh, Pose)> = sim.bin().statics.iter().map(|s| (&*s.mesh, s.pose)).collect();
    let objects: Vec<(&TriangleMesh, Pose)> = sim.bin().objects.iter().map(|o| (&*o.instance.model.mesh, o.instance.pose)).collect();

    c.bench_function("render bin view", |b| {
        b.iter(|| {
            let geometry = SceneGeometry::new(&statics, &objects);
            black_box(render(&geometry, &camera, &intr))
        })
    });

    let points = depth_to_points(&report.depth, &intr, &camera);
    c.bench_function("classify and carve", |b| {
        b.iter(|| black_box(classify_and_carve(&points, &report.scene.targets, &sim.bin().statics, &cfg.carve, report.scene.voxels.spec()).unwrap()))
    });

    c.bench_function("plan", |b| {
        b.iter(|| black_box(binpick_core::plan(&report.scene, sim.databases(), sim.gripper(), sim.bin_frame(), &cfg.planner)))
    });

    // ten noisy views of every object in the bin
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames: Vec<Vec<WorldEstimate>> = (0..10)
        .map(|_| {
            sim.bin()
                .objects
                .iter()
                .map(|o| {
                    let jitter = Rotation::from_scaled_axis(&Vec3::from_fn(|_, _| rng.random_range(-0.05..0.05)));
                    let shift = Vec3::from_fn(|_, _| rng.random_range(-0.002..0.002));
                    let pose = Pose::new(o.instance.pose.rotation * jitter, o.instance.pose.translation + shift);
                    WorldEstimate { class_id: o.instance.model.class_id, pose, confidence: 0.9, source: Some(o.id as usize) }
                })
                .collect()
        })
        .collect();
    c.bench_function("ingest 10 frames", |b| {
        b.iter(|| {
            let mut buffer = PoseBuffer::new(cfg.buffer, std::slice::from_ref(sim.model()));
            for (k, f) in frames.iter().enumerate() {
                buffer.ingest(f, k as u64);
            }
            black_box(buffer.tracks().len())
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = pipeline
}
criterion_main!(benches);
