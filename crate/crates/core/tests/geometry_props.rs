use binpick_core::geometry::{angular_distance, average_rotations, average_translations, Pose, Rotation, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rotation() -> impl Strategy<Value = Rotation> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("nonzero quaternion", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| Rotation::from_wxyz(w, x, y, z).unwrap())
}

fn translation() -> impl Strategy<Value = Vec3> {
    (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), translation()).prop_map(|(r, t)| Pose::new(r, t))
}

/// Angle of the residual rotation from its quaternion scalar part.
fn residual_angle(a: &Rotation, b: &Rotation) -> f64 {
    let [w, ..] = (*a * b.inverse()).wxyz();
    2.0 * w.abs().min(1.0).acos()
}

proptest! {
    #[test]
    fn quaternion_stays_unit(a in rotation(), b in rotation()) {
        let q = (a * b).wxyz();
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn distance_is_a_metric(a in rotation(), b in rotation(), c in rotation()) {
        let ab = angular_distance(&a, &b);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&ab));
        prop_assert!((ab - angular_distance(&b, &a)).abs() < 1e-9);
        prop_assert!(ab <= angular_distance(&a, &c) + angular_distance(&c, &b) + 1e-9);
        prop_assert!(angular_distance(&a, &a) < 1e-7);
    }

    #[test]
    fn distance_matches_residual_angle(a in rotation(), b in rotation()) {
        prop_assert!((angular_distance(&a, &b) - residual_angle(&a, &b)).abs() < 1e-7);
    }

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        let (dr, dt) = l.distance(&r);
        prop_assert!(dr < 1e-7 && dt < 1e-9);
    }

    #[test]
    fn inverse_cancels(p in pose()) {
        for q in [p.compose(&p.inverse()), p.inverse().compose(&p)] {
            prop_assert!(q.rotation.angle() < 1e-7);
            prop_assert!(q.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn transform_matches_matrix_form(p in pose(), v in translation()) {
        let m = p.rotation.matrix() * v + p.translation;
        prop_assert!((p.transform_point(&v) - m).norm() < 1e-12);
    }

    #[test]
    fn serialization_round_trips(p in pose()) {
        let a = p.to_array();
        prop_assert!(a[0] >= 0.0);
        let back = Pose::from_array(a).unwrap();
        prop_assert!(back.rotation.approx_eq(&p.rotation, 1e-12));
        prop_assert!((back.translation - p.translation).norm() == 0.0);
    }

    #[test]
    fn average_of_copies_is_the_copy(q in rotation(), n in 1usize..12) {
        let avg = average_rotations(&vec![q; n], &vec![1.0; n]).unwrap();
        prop_assert!(angular_distance(&avg, &q) < 1e-9);
    }

    #[test]
    fn average_ignores_quaternion_signs(qs in prop::collection::vec(rotation(), 1..8), flips in prop::collection::vec(any::<bool>(), 8)) {
        // keep the samples within a hemisphere so the mean is well defined
        let base = qs[0];
        let near: Vec<Rotation> = qs.iter().map(|q| base * Rotation::from_scaled_axis(&(q.scaled_axis() * 0.2))).collect();
        let flipped: Vec<Rotation> = near.iter().zip(&flips).map(|(q, f)| if *f { q.negated() } else { *q }).collect();
        let w = vec![1.0; near.len()];
        let a = average_rotations(&near, &w).unwrap();
        let b = average_rotations(&flipped, &w).unwrap();
        prop_assert!(angular_distance(&a, &b) < 1e-9);
    }

    #[test]
    fn translation_average_is_componentwise_mean(vs in prop::collection::vec(translation(), 1..20)) {
        let got = average_translations(&vs, &vec![1.0; vs.len()]).unwrap();
        let n = vs.len() as f64;
        for k in 0..3 {
            let mut s = 0.0;
            for v in &vs {
                s += v[k];
            }
            prop_assert!((got[k] - s / n).abs() < 1e-12);
        }
    }
}

/// Geodesic mean by tangent-space averaging iterated to convergence.
fn geodesic_mean(samples: &[Rotation]) -> Rotation {
    let mut m = samples[0];
    for _ in 0..100 {
        let mut step = Vec3::zeros();
        for s in samples {
            step += (m.inverse() * *s).scaled_axis();
        }
        step /= samples.len() as f64;
        m = m * Rotation::from_scaled_axis(&step);
        if step.norm() < 1e-13 {
            break;
        }
    }
    m
}

#[test]
fn chordal_mean_close_to_geodesic_mean_over_seeds() {
    let sigma = 5f64.to_radians();
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<Rotation> = (0..20)
            .map(|_| Rotation::from_scaled_axis(&Vec3::from_fn(|_, _| rng.sample(normal))))
            .collect();
        let chordal = average_rotations(&samples, &[1.0; 20]).unwrap();
        assert!(angular_distance(&chordal, &geodesic_mean(&samples)) < 2f64.to_radians(), "seed {seed}");
    }
}

#[test]
fn distance_against_axis_angle_over_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let mut draw = || {
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            Rotation::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI))
        };
        let (a, b) = (draw(), draw());
        let rel = (a * b.inverse()).scaled_axis().norm();
        assert!((angular_distance(&a, &b) - rel).abs() < 1e-7);
    }
}
