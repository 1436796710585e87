use proptest::prelude::*;

use terraforge::elevation::{extract_local, ElevationGrid, LocalMapSpec};
use terraforge::fusion::{
    max_position_error, predict, run_fusion, update_pose, zero_order_hold_max_error, CovarianceHealth, FusionConfig,
    FusionState,
};
use terraforge::geometry::{Pose, Quaternion, Vec3};
use terraforge::sensors::{imu_stream, odometry_stream, ImuSample, NoiseConfig, TrajectorySpec};
use terraforge::terrain::{generate, Heightfield, Robot, TerrainSpec, TerrainType};

fn robot() -> impl Strategy<Value = Robot> {
    prop_oneof![Just(Robot::Lite3), Just(Robot::X30)]
}

fn terrain_type() -> impl Strategy<Value = TerrainType> {
    (0usize..5).prop_map(|k| TerrainType::ALL[k])
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generate_is_pure(robot in robot(), tau in terrain_type(), level in 0u8..=9, seed in any::<u64>()) {
        let mut spec = TerrainSpec::new(robot, tau, level);
        spec.seed = seed;
        prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn stones_follow_the_seed(robot in robot(), level in 1u8..=9, a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        let mut spec = TerrainSpec::new(robot, TerrainType::DiscreteStones, level);
        spec.seed = a;
        let first = generate(&spec).unwrap();
        spec.seed = b;
        prop_assert_ne!(first, generate(&spec).unwrap());
    }

    #[test]
    fn streams_repeat_per_seed(seed in any::<u64>(), speed in 0.2..1.5f64) {
        let traj = TrajectorySpec::straight(speed, 2.0, 0.5);
        let noise = NoiseConfig::randomized();
        prop_assert_eq!(imu_stream(&traj, 200, &noise, seed).unwrap(), imu_stream(&traj, 200, &noise, seed).unwrap());
        prop_assert_eq!(
            odometry_stream(&traj, 10, &noise, seed).unwrap(),
            odometry_stream(&traj, 10, &noise, seed).unwrap()
        );
    }

    #[test]
    fn covariance_stays_healthy(
        readings in prop::collection::vec((vec3(2.0), vec3(3.0), 1u64..20), 1..150),
        updates in prop::collection::vec((vec3(0.2), -0.2..0.2f64), 1..10),
    ) {
        let cfg = FusionConfig::default();
        let mut state = FusionState::from_pose(&Pose::identity(0), &cfg).unwrap();
        let mut t = 0u64;
        let every = readings.len().div_ceil(updates.len());
        for (k, (w, f, dt_ms)) in readings.iter().enumerate() {
            t += dt_ms * 1_000_000;
            let imu = ImuSample {
                timestamp_ns: t,
                angular_velocity: *w,
                linear_acceleration: f + Vec3::new(0.0, 0.0, 9.81),
            };
            state = predict(&state, &imu, &cfg).unwrap();
            prop_assert!(CovarianceHealth::of(&state.covariance).is_healthy());
            prop_assert!((state.orientation.norm() - 1.0).abs() <= 1e-9);
            if k % every == 0 {
                let (dp, yaw) = updates[k / every];
                let m = Pose::new(state.position + dp, Quaternion::from_yaw(state.orientation.yaw() + yaw), t);
                state = update_pose(&state, &m, &cfg).unwrap();
                prop_assert!(CovarianceHealth::of(&state.covariance).is_healthy());
                prop_assert!((state.orientation.norm() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn exact_measurements_pin_the_position(offset in vec3(1.0), yaw in -3.0..3.0f64) {
        let cfg = FusionConfig { odom_position_std: 1e-9, ..FusionConfig::default() };
        let state = FusionState::from_pose(&Pose::identity(0), &cfg).unwrap();
        let m = Pose::new(offset, Quaternion::from_yaw(yaw), 0);
        let post = update_pose(&state, &m, &cfg).unwrap();
        prop_assert!((post.position - offset).norm() < 1e-6);
    }

    #[test]
    fn extraction_is_translation_consistent(
        seed in any::<u64>(),
        shift in (-20i32..20, -20i32..20),
        dz in -1.0..1.0f64,
        yaw in -3.1..3.1f64,
    ) {
        let (w, h, res) = (60usize, 60usize, 0.05);
        let mut hf = Heightfield::flat(w, h, res, [-1.5, -1.5]);
        let mut s = seed;
        for j in 0..h {
            for i in 0..w {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                hf.set(i, j, (s >> 40) as f64 / (1u64 << 24) as f64 * 0.3);
            }
        }
        let (dx, dy) = (shift.0 as f64 * res, shift.1 as f64 * res);
        let mut moved = hf.clone();
        moved.origin = [hf.origin[0] + dx, hf.origin[1] + dy];
        moved.cells.iter_mut().for_each(|c| *c += dz);

        let spec = LocalMapSpec::default();
        let pose = Pose::new(Vec3::new(0.03, -0.02, 0.4), Quaternion::from_yaw(yaw), 0);
        let pose_moved = Pose::new(pose.position + Vec3::new(dx, dy, dz), pose.orientation, 0);
        let a = extract_local(&ElevationGrid::from_heightfield(&hf, None).unwrap(), &pose, &spec).unwrap();
        let b = extract_local(&ElevationGrid::from_heightfield(&moved, None).unwrap(), &pose_moved, &spec).unwrap();
        prop_assert_eq!(&a.known, &b.known);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fusion_beats_zero_order_hold(speed in 0.3..1.5f64, radius in 1.0..4.0f64, circle in any::<bool>()) {
        let traj = if circle {
            TrajectorySpec::circle(radius, speed, 10.0, 0.5)
        } else {
            TrajectorySpec::straight(speed, 10.0, 0.5)
        };
        let imu = imu_stream(&traj, 200, &NoiseConfig::noise_free(), 0).unwrap();
        let odom = odometry_stream(&traj, 10, &NoiseConfig::noise_free(), 0).unwrap();
        let v0 = traj.true_state(0.0).unwrap().velocity;
        let cfg = FusionConfig { initial_velocity: [v0.x, v0.y, v0.z], ..FusionConfig::default() };
        let out = run_fusion(&imu, &odom, &cfg).unwrap();
        let times: Vec<u64> = imu.iter().map(|s| s.timestamp_ns).collect();
        let fused = max_position_error(&out.poses, &traj).unwrap();
        let zoh = zero_order_hold_max_error(&odom, &traj, &times).unwrap();
        prop_assert!(fused < zoh, "fused {} vs hold {}", fused, zoh);
    }
}
