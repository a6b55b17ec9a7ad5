use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seabed::dubins::{dubins_word_path, normalize_angle, shortest_dubins, DubinsPath, Pose2};

fn random_pose(rng: &mut ChaCha8Rng) -> Pose2 {
    Pose2::new(
        rng.gen_range(-50.0..50.0),
        rng.gen_range(-50.0..50.0),
        rng.gen_range(-PI..PI),
    )
}

fn chord_length(path: &DubinsPath, spacing: f64) -> f64 {
    let s = path.sample(spacing);
    s.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Integrates the unicycle kinematics driven only by the segment lengths and
/// each segment's curvature, in exact arc steps of at most `h`.
fn integrate_curvature(path: &DubinsPath, h: f64) -> Pose2 {
    let (mut x, mut y, mut psi) = (path.start.x, path.start.y, path.start.heading);
    let mut s0 = 0.0;
    for len in path.segment_lengths() {
        let kappa = path.curvature_at(s0 + len / 2.0);
        let n = (len / h).ceil() as usize;
        for _ in 0..n {
            let step = len / n as f64;
            if kappa == 0.0 {
                x += step * psi.cos();
                y += step * psi.sin();
            } else {
                let dpsi = kappa * step;
                x += ((psi + dpsi).sin() - psi.sin()) / kappa;
                y -= ((psi + dpsi).cos() - psi.cos()) / kappa;
                psi += dpsi;
            }
        }
        s0 += len;
    }
    Pose2::new(x, y, psi)
}

#[test]
fn thousand_random_pairs_match_integrated_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let rho = rng.gen_range(1.0..15.0);
        let path = shortest_dubins(a, b, rho);
        assert!((chord_length(&path, 0.01) - path.length).abs() < 0.02);
        let end = path.end_pose();
        assert!(end.distance(&b) < 1e-6);
        assert!(normalize_angle(end.heading - b.heading).abs() < 1e-6);
        let integrated = integrate_curvature(&path, 0.01);
        assert!(integrated.distance(&b) < 1e-6, "{integrated:?} vs {b:?}");
    }
}

#[test]
fn shortest_word_is_minimum_over_all_words() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let path = shortest_dubins(a, b, 5.0);
        for w in seabed::DubinsWord::ALL {
            if let Some(p) = dubins_word_path(a, b, 5.0, w) {
                assert!(path.length <= p.length + 1e-12);
            }
        }
    }
}

#[test]
fn straight_and_semicircle_are_exact() {
    let p = shortest_dubins(Pose2::new(0.0, 0.0, 0.0), Pose2::new(10.0, 0.0, 0.0), 1.0);
    assert!((p.length - 10.0).abs() < 1e-12);
    let p = shortest_dubins(Pose2::new(0.0, 0.0, 0.0), Pose2::new(0.0, 2.0, PI), 1.0);
    assert!((p.length - PI).abs() < 1e-12);
    let mid = p.pose_at(PI / 2.0);
    assert!(mid.distance(&Pose2::new(1.0, 1.0, 0.0)) < 1e-12);
    assert!((mid.heading - PI / 2.0).abs() < 1e-12);
}

fn pose() -> impl Strategy<Value = Pose2> {
    (-40.0..40.0f64, -40.0..40.0f64, -PI..PI).prop_map(|(x, y, h)| Pose2::new(x, y, h))
}

proptest! {
    #[test]
    fn length_is_invariant_under_rigid_motion(a in pose(), b in pose(), th in -PI..PI, tx in -30.0..30.0f64, ty in -30.0..30.0f64) {
        let (s, c) = th.sin_cos();
        let mv = |p: Pose2| Pose2::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.heading + th);
        let l0 = shortest_dubins(a, b, 3.0).length;
        let l1 = shortest_dubins(mv(a), mv(b), 3.0).length;
        prop_assert!((l0 - l1).abs() < 1e-9 * (1.0 + l0));
    }

    #[test]
    fn mirroring_swaps_turn_directions(a in pose(), b in pose()) {
        let m = |p: Pose2| Pose2::new(p.x, -p.y, -p.heading);
        let p0 = shortest_dubins(a, b, 3.0);
        let p1 = shortest_dubins(m(a), m(b), 3.0);
        prop_assert!((p0.length - p1.length).abs() < 1e-9 * (1.0 + p0.length));
        let twin = dubins_word_path(m(a), m(b), 3.0, p0.word.mirrored()).unwrap();
        prop_assert!((twin.length - p0.length).abs() < 1e-9 * (1.0 + p0.length));
    }

    #[test]
    fn shrinking_turn_radius_never_lengthens(a in pose(), b in pose()) {
        let l4 = shortest_dubins(a, b, 4.0).length;
        let l2 = shortest_dubins(a, b, 2.0).length;
        let l1 = shortest_dubins(a, b, 1.0).length;
        prop_assert!(l2 <= l4 + 1e-9 && l1 <= l2 + 1e-9);
    }

    #[test]
    fn samples_include_the_goal_and_respect_spacing(a in pose(), b in pose(), spacing in 0.1..5.0f64) {
        let p = shortest_dubins(a, b, 2.0);
        let s = p.sample(spacing);
        prop_assert!(s.last().unwrap().distance(&b) < 1e-9);
        for w in s.windows(2) {
            prop_assert!(w[0].distance(&w[1]) <= spacing + 1e-9);
        }
    }
}
