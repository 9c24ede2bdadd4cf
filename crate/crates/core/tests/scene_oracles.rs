mod common;

use std::sync::Arc;

use binpick_core::geometry::{Pose, Rotation, Vec3};
use binpick_core::mesh::{shapes, Aabb, TriangleMesh};
use binpick_core::object::ObjectSpec;
use binpick_core::perception::{corrupt_depth, render, CameraIntrinsics, DepthNoisePreset, SceneGeometry};
use binpick_core::scene::{classify_and_carve, depth_to_points, voxels_collide, CarveConfig, GridSpec, StaticBody, Target, VoxelGrid};
use binpick_core::sim::{generate_bin, BinScene, BinSpec, FillConfig};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn overhead() -> (Pose, CameraIntrinsics) {
    let down = Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::PI);
    (Pose::new(down, Vec3::new(0.01, -0.02, 0.5)), CameraIntrinsics::from_fov(160, 120, 70f64.to_radians()))
}

fn small_bin(seed: u64) -> BinScene {
    let model = Arc::new(ObjectSpec::default().build(0).unwrap());
    let spec = BinSpec { interior: [0.16, 0.12, 0.08], ..Default::default() };
    generate_bin(&model, 10, &spec, &FillConfig::default(), seed)
}

/// Corrupted world points of the bin from above.
fn bin_points(bin: &BinScene, seed: u64) -> Vec<Vec3> {
    let (camera, intr) = overhead();
    let statics: Vec<_> = bin.statics.iter().map(|s| (&*s.mesh, s.pose)).collect();
    let objects: Vec<_> = bin.objects.iter().map(|o| (&*o.instance.model.mesh, o.instance.pose)).collect();
    let truth = render(&SceneGeometry::new(&statics, &objects), &camera, &intr);
    let depth = corrupt_depth(&truth.depth, &truth.normals, &DepthNoisePreset::raw(), seed).unwrap();
    depth_to_points(&depth, &intr, &camera)
}

fn grid_for(bin: &BinScene) -> GridSpec {
    let b = bin.spec.interior_box();
    GridSpec::covering(&Aabb { min: b.min, max: b.max + Vec3::new(0.0, 0.0, 0.05) }, 0.005)
}

/// Occupancy from exhaustive point-to-triangle distances.
fn carve_oracle(points: &[Vec3], targets: &[Target], statics: &[StaticBody], cfg: &CarveConfig, grid: &GridSpec) -> Vec<bool> {
    let mut meshes: Vec<Vec<Tri>> = statics.iter().map(|s| posed_triangles(&s.mesh, &s.pose)).collect();
    meshes.extend(targets.iter().map(|t| posed_triangles(&t.model.mesh, &t.pose)));
    let [nx, ny, nz] = grid.dims;
    let mut counts = vec![0usize; nx * ny * nz];
    for p in points {
        let rel = (p - grid.origin) / grid.resolution;
        let idx = [rel.x.floor(), rel.y.floor(), rel.z.floor()];
        if idx.iter().zip(grid.dims).any(|(i, n)| *i < 0.0 || *i >= n as f64) {
            continue;
        }
        let explained = meshes.iter().any(|m| mesh_distance(m, p) <= cfg.assoc_tolerance);
        if !explained {
            counts[idx[0] as usize + nx * (idx[1] as usize + ny * idx[2] as usize)] += 1;
        }
    }
    counts.into_iter().map(|c| c >= cfg.min_points_per_voxel.max(1)).collect()
}

fn occupancy(g: &VoxelGrid) -> Vec<bool> {
    (0..g.len()).map(|i| g.get(g.coords(i))).collect()
}

fn targets_from(bin: &BinScene, every: usize) -> Vec<Target> {
    bin.objects
        .iter()
        .step_by(every)
        .map(|o| Target { track_id: o.id, model: o.instance.model.clone(), pose: o.instance.pose, confidence: 0.9 })
        .collect()
}

#[test]
fn cluttered_carve_matches_exhaustive_oracle() {
    for seed in 0..3 {
        let bin = small_bin(seed);
        let points = bin_points(&bin, seed);
        // only half the objects are known: the rest must show up as voxels
        let targets = targets_from(&bin, 2);
        let cfg = CarveConfig::default();
        let grid = grid_for(&bin);
        let got = classify_and_carve(&points, &targets, &bin.statics, &cfg, &grid).unwrap();
        let want = carve_oracle(&points, &targets, &bin.statics, &cfg, &grid);
        assert_eq!(occupancy(&got), want, "seed {seed}");
        assert!(got.occupied_count() > 0);
    }
}

#[test]
fn surface_points_of_known_objects_are_explained() {
    let bin = small_bin(4);
    let points = {
        let (camera, intr) = overhead();
        let statics: Vec<_> = bin.statics.iter().map(|s| (&*s.mesh, s.pose)).collect();
        let objects: Vec<_> = bin.objects.iter().map(|o| (&*o.instance.model.mesh, o.instance.pose)).collect();
        depth_to_points(&render(&SceneGeometry::new(&statics, &objects), &camera, &intr).depth, &intr, &camera)
    };
    let grid = grid_for(&bin);
    let all = classify_and_carve(&points, &targets_from(&bin, 1), &bin.statics, &CarveConfig::default(), &grid).unwrap();
    assert_eq!(all.occupied_count(), 0);
    let none = classify_and_carve(&[], &targets_from(&bin, 1), &bin.statics, &CarveConfig::default(), &grid).unwrap();
    assert_eq!(none.occupied_count(), 0);
}

#[test]
fn rendered_cube_points_lie_on_the_cube() {
    let cube = shapes::cuboid(Vec3::repeat(0.05));
    let pose = Pose::new(Rotation::from_axis_angle(&Vec3::new(1.0, 1.0, 0.2), 0.7), Vec3::new(0.0, 0.0, 0.03));
    let (camera, intr) = overhead();
    let depth = render(&SceneGeometry::new(&[], &[(&cube, pose)]), &camera, &intr).depth;
    let points = depth_to_points(&depth, &intr, &camera);
    assert!(points.len() > 100);
    let tris = posed_triangles(&cube, &pose);
    for p in &points {
        assert!(mesh_distance(&tris, p) < 0.005);
    }
}

/// Exhaustive voxel-by-triangle test, plus voxels buried inside a closed mesh.
fn collide_oracle(grid: &VoxelGrid, mesh: &TriangleMesh, pose: &Pose) -> bool {
    let tris = posed_triangles(mesh, pose);
    grid.occupied().any(|v| {
        let (c, h) = grid.voxel_box(v);
        tris.iter().any(|t| triangle_box(t, &c, &h)) || (mesh.is_closed() && inside(&tris, &c))
    })
}

fn random_grid(rng: &mut impl Rng, origin: Vec3, res: f64, fill: f64) -> VoxelGrid {
    let mut g = VoxelGrid::new(GridSpec { origin, resolution: res, dims: [12, 10, 8] }).unwrap();
    for i in 0..g.len() {
        if rng.random::<f64>() < fill {
            g.set(g.coords(i), true);
        }
    }
    g
}

#[test]
fn voxel_collision_matches_exhaustive_oracle() {
    let meshes = [shapes::cylinder(0.01, 0.04, 12), shapes::cuboid(Vec3::new(0.03, 0.01, 0.02)), shapes::bracket(0.03, 0.015, 0.004)];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut hits, mut misses) = (0, 0);
    for _ in 0..400 {
        let fill = [0.0, 0.002, 0.01, 0.05][rng.random_range(0..4)];
        let grid = random_grid(&mut rng, Vec3::zeros(), 0.005, fill);
        let m = &meshes[rng.random_range(0..meshes.len())];
        let pose = Pose::new(random_rotation(&mut rng), Vec3::new(rng.random_range(0.0..0.06), rng.random_range(0.0..0.05), rng.random_range(0.0..0.04)));
        let got = voxels_collide(&grid, &Arc::new(m.clone()), &pose);
        assert_eq!(got, collide_oracle(&grid, m, &pose));
        if got {
            hits += 1;
        } else {
            misses += 1;
        }
    }
    assert!(hits > 50 && misses > 50, "{hits} / {misses}");
}

#[test]
fn voxel_inside_a_solid_collides() {
    let m = Arc::new(shapes::cuboid(Vec3::repeat(0.1)));
    let mut g = VoxelGrid::new(GridSpec { origin: Vec3::repeat(-0.05), resolution: 0.01, dims: [10, 10, 10] }).unwrap();
    assert!(!voxels_collide(&g, &m, &Pose::identity()));
    g.set([5, 5, 5], true);
    assert!(voxels_collide(&g, &m, &Pose::identity()));
    assert!(!voxels_collide(&g, &m, &Pose::from_translation(Vec3::new(0.3, 0.0, 0.0))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn larger_tolerance_never_adds_voxels(seed in 0u64..1000, a in 0.0f64..0.02, b in 0.0f64..0.02) {
        let bin = small_bin(seed % 4);
        let points = bin_points(&bin, seed);
        let targets = targets_from(&bin, 3);
        let grid = grid_for(&bin);
        let (lo, hi) = (a.min(b), a.max(b));
        let tight = classify_and_carve(&points, &targets, &bin.statics, &CarveConfig { assoc_tolerance: lo, ..Default::default() }, &grid).unwrap();
        let loose = classify_and_carve(&points, &targets, &bin.statics, &CarveConfig { assoc_tolerance: hi, ..Default::default() }, &grid).unwrap();
        for v in loose.occupied() {
            prop_assert!(tight.get(v));
        }
    }

    #[test]
    fn collision_is_invariant_under_joint_voxel_shifts(seed in any::<u64>(), sx in -5i32..5, sy in -5i32..5, sz in -5i32..5) {
        // dyadic resolution keeps the shifted coordinates exact
        let res = 1.0 / 256.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, Vec3::zeros(), res, 0.02);
        let m = Arc::new(shapes::cuboid(Vec3::new(0.02, 0.012, 0.01)));
        let pose = Pose::new(random_rotation(&mut rng), Vec3::new(0.02, 0.02, 0.015));
        let shift = Vec3::new(sx as f64, sy as f64, sz as f64) * res;
        let mut moved = VoxelGrid::new(GridSpec { origin: grid.spec().origin + shift, ..*grid.spec() }).unwrap();
        for v in grid.occupied() {
            moved.set(v, true);
        }
        let moved_pose = Pose::new(pose.rotation, pose.translation + shift);
        prop_assert_eq!(voxels_collide(&grid, &m, &pose), voxels_collide(&moved, &m, &moved_pose));
    }
}
