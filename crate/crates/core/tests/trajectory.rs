use glam::{DQuat, DVec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splat4d_core::trajectory::{slerp, CameraPose, InterpolationMode, Keyframe, Trajectory};

fn random_unit_quat(rng: &mut ChaCha8Rng) -> DQuat {
    loop {
        let q = DQuat::from_xyzw(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if q.length() > 0.1 {
            return q.normalize();
        }
    }
}

fn random_trajectory(rng: &mut ChaCha8Rng, n: usize, mode: InterpolationMode) -> Trajectory {
    let mut time = rng.gen_range(0.0..2.0);
    let keyframes = (0..n)
        .map(|_| {
            let mut pose = CameraPose::new(
                DVec3::new(
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                ),
                random_unit_quat(rng),
            );
            pose.vfov = rng.gen_range(0.3..2.0);
            let k = Keyframe { pose, time };
            time += rng.gen_range(0.01..3.0);
            k
        })
        .collect();
    Trajectory::new(keyframes, mode).unwrap()
}

#[test]
fn knots_are_reproduced_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mode in [InterpolationMode::Linear, InterpolationMode::CatmullRom] {
        for n in 1..12 {
            let traj = random_trajectory(&mut rng, n, mode);
            for k in traj.keyframes() {
                assert_eq!(traj.interpolate(k.time), k.pose);
            }
        }
    }
}

#[test]
fn half_way_quarter_turn_about_z() {
    let q = slerp(
        DQuat::IDENTITY,
        DQuat::from_rotation_z(std::f64::consts::FRAC_PI_2),
        0.5,
    );
    let expected = [0.9238795, 0.0, 0.0, 0.3826834];
    for (got, want) in [q.w, q.x, q.y, q.z].into_iter().zip(expected) {
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

#[test]
fn interpolated_orientations_stay_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut worst = 0f64;
    for mode in [InterpolationMode::Linear, InterpolationMode::CatmullRom] {
        let traj = random_trajectory(&mut rng, 25, mode);
        for _ in 0..5_000 {
            let t = rng.gen_range(traj.start()..=traj.end());
            let pose = traj.interpolate(t);
            worst = worst.max((pose.orientation.length() - 1.0).abs());
            assert!(pose.position.is_finite());
        }
    }
    assert!(worst <= 1e-6, "{worst}");
}

proptest! {
    #[test]
    fn coaxial_slerp_interpolates_the_angle(axis in prop::array::uniform3(-1.0f64..1.0), a in -3.0f64..3.0, b in -3.0f64..3.0, t in 0.0f64..=1.0) {
        let axis = DVec3::from_array(axis);
        prop_assume!(axis.length() > 0.1 && (a - b).abs() < 3.1);
        let axis = axis.normalize();
        let got = slerp(DQuat::from_axis_angle(axis, a), DQuat::from_axis_angle(axis, b), t);
        let want = DQuat::from_axis_angle(axis, a + (b - a) * t);
        prop_assert!(got.dot(want).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn slerp_takes_the_shorter_arc(seed: u64, t in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_unit_quat(&mut rng), random_unit_quat(&mut rng));
        let q = slerp(a, b, t);
        let total = a.angle_between(b);
        prop_assert!(a.angle_between(q) <= total + 1e-9);
        prop_assert!((a.angle_between(q) + q.angle_between(b) - total).abs() <= 1e-6);
    }

    #[test]
    fn sample_count_follows_floor_law(duration in 0.0f64..30.0, fps in 1.0f64..120.0) {
        let pose = CameraPose::new(DVec3::ZERO, DQuat::IDENTITY);
        let frames = if duration == 0.0 {
            vec![Keyframe { pose, time: 0.0 }]
        } else {
            vec![Keyframe { pose, time: 0.0 }, Keyframe { pose, time: duration }]
        };
        let traj = Trajectory::new(frames, InterpolationMode::Linear).unwrap();
        let times = traj.sample_times(fps).unwrap();
        prop_assert_eq!(times.len(), (duration * fps).floor() as usize + 1);
        prop_assert_eq!(times[0], 0.0);
        prop_assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn json_round_trip(seed: u64, n in 1usize..8, catmull: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if catmull { InterpolationMode::CatmullRom } else { InterpolationMode::Linear };
        let traj = random_trajectory(&mut rng, n, mode);
        let back = Trajectory::from_json(&traj.to_json()).unwrap();
        prop_assert_eq!(back.mode(), traj.mode());
        prop_assert_eq!(back.keyframes().len(), n);
        for (a, b) in back.keyframes().iter().zip(traj.keyframes()) {
            prop_assert_eq!(a.time, b.time);
            prop_assert_eq!(a.pose.position, b.pose.position);
            prop_assert!(a.pose.orientation.abs_diff_eq(b.pose.orientation, 1e-12));
            prop_assert!((a.pose.vfov - b.pose.vfov).abs() < 1e-12);
        }
    }
}
