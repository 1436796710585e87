//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use terraforge::config::PipelineConfig;
use terraforge::elevation::{extract_local, ElevationGrid, LocalMap, LocalMapSpec, VirtualEdit};
use terraforge::fusion::{
    max_position_error, run_fusion, zero_order_hold_max_error, CovarianceHealth, FusionConfig, FusionReplay,
};
use terraforge::geometry::{Pose, Quaternion, Vec3};
use terraforge::obs::{kl_divergence, loss_cenet, loss_est, loss_terrain, loss_vae};
use terraforge::pipeline;
use terraforge::reward::{
    compute_rewards, fit_plane, guided_direction, PlaneFit, RewardConfig, RewardInput, RewardTerm, RewardWeights,
    JOINTS, LEGS,
};
use terraforge::sensors::{
    apply_delay, apply_random_delay, imu_stream, lidar_scan, odometry_stream, Delivered, NoiseConfig, ScanPattern,
    TrajectorySpec,
};
use terraforge::terrain::{generate, terrain_parameter, Heightfield, Robot, TerrainType};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within_time(start: Instant, limit_s: f64) -> Result<f64, String> {
    let t = start.elapsed().as_secs_f64();
    ensure(t < limit_s, || format!("took {t:.2} s, limit {limit_s} s"))?;
    Ok(t)
}

// 1. curriculum table
fn curriculum_table() -> Check {
    let start = Instant::now();
    // (robot, terrain, base, per-level step) in metres
    let table: [(Robot, TerrainType, f64, f64); 10] = [
        (Robot::Lite3, TerrainType::Slope, 0.0, 0.05),
        (Robot::Lite3, TerrainType::DiscreteStones, 0.05, 0.025),
        (Robot::Lite3, TerrainType::Stairs, 0.05, 0.013),
        (Robot::Lite3, TerrainType::Gap, 0.2, 0.035),
        (Robot::Lite3, TerrainType::HighPlatform, 0.1, 0.05),
        (Robot::X30, TerrainType::Slope, 0.0, 0.05),
        (Robot::X30, TerrainType::DiscreteStones, 0.05, 0.035),
        (Robot::X30, TerrainType::Stairs, 0.05, 0.018),
        (Robot::X30, TerrainType::Gap, 0.2, 0.06),
        (Robot::X30, TerrainType::HighPlatform, 0.1, 0.07),
    ];
    let mut checked = 0;
    for (robot, tau, base, step) in table {
        for level in 0..=9u8 {
            let expected = if base == 0.0 { step * level as f64 } else { base + step * level as f64 };
            let got = ok(terrain_parameter(robot, tau, level))?;
            ensure(got == expected, || format!("{robot} {tau} L{level}: {got} != {expected}"))?;
            checked += 1;
        }
    }
    let p = ok(terrain_parameter(Robot::Lite3, TerrainType::HighPlatform, 9))?;
    ensure(p == 0.55, || format!("Lite3 tau5 L9 = {p}"))?;
    ensure(terrain_parameter(Robot::X30, TerrainType::Gap, 10).is_err(), || "level 10 accepted".into())?;
    let t = within_time(start, 1.0)?;
    Ok(format!("{checked} values exact, Lite3 tau5 L9 = {p:.3} m ({t:.3} s)"))
}

// 2. zero-order hold vs fused odometry
fn zoh_vs_fusion() -> Check {
    let start = Instant::now();
    let traj = TrajectorySpec::straight(1.0, 10.0, 0.5);
    let imu = ok(imu_stream(&traj, 200, &NoiseConfig::noise_free(), 1))?;
    let times: Vec<u64> = imu.iter().map(|s| s.timestamp_ns).collect();

    let clean = ok(odometry_stream(&traj, 10, &NoiseConfig::noise_free(), 2))?;
    let zoh = ok(zero_order_hold_max_error(&clean, &traj, &times))?;
    ensure((zoh - 0.100).abs() <= 0.005, || format!("ZOH max error {zoh:.4} m"))?;

    let noisy_cfg = NoiseConfig {
        odom_pos_std: 0.01,
        ..NoiseConfig::noise_free()
    };
    let noisy = ok(odometry_stream(&traj, 10, &noisy_cfg, 2))?;
    let fusion_cfg = FusionConfig {
        initial_velocity: [1.0, 0.0, 0.0],
        ..FusionConfig::default()
    };
    let out = ok(run_fusion(&imu, &noisy, &fusion_cfg))?;
    ensure(out.poses.len() == imu.len(), || format!("{} fused poses", out.poses.len()))?;
    let fused = ok(max_position_error(&out.poses, &traj))?;
    ensure(fused < 0.02, || format!("fused max error {fused:.4} m"))?;
    let t = within_time(start, 10.0)?;
    Ok(format!("ZOH {zoh:.4} m, fused {fused:.4} m ({t:.2} s)"))
}

// 3. plane fit and guided direction
fn plane_fit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_clean: f64 = 0.0;
    let mut worst_noisy_deg: f64 = 0.0;
    let noise = Normal::new(0.0, 0.01).unwrap();
    for _ in 0..200 {
        let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let truth = Vec3::new(-a, -b, 1.0).normalize();
        let patch: Vec<(f64, f64)> = (0..60)
            .map(|_| (rng.random_range(-0.55..1.05), rng.random_range(-0.5..0.5)))
            .collect();
        let clean: Vec<Vec3> = patch.iter().map(|&(x, y)| Vec3::new(x, y, a * x + b * y + c)).collect();
        let fit = ok(fit_plane(&clean, 10))?;
        worst_clean = worst_clean.max((fit.normal - truth).norm());

        let noisy: Vec<Vec3> = clean.iter().map(|p| p + Vec3::new(0.0, 0.0, noise.sample(&mut rng))).collect();
        let fit = ok(fit_plane(&noisy, 10))?;
        let angle = fit.normal.dot(&truth).clamp(-1.0, 1.0).acos().to_degrees();
        worst_noisy_deg = worst_noisy_deg.max(angle);
    }
    ensure(worst_clean < 1e-9, || format!("noise-free normal error {worst_clean:e}"))?;
    ensure(worst_noisy_deg < 2.0, || format!("noisy angular error {worst_noisy_deg:.3} deg"))?;

    let mut worst_dir: f64 = 0.0;
    for k in 0..=180 {
        let s = -0.9 + 0.01 * k as f64;
        let fit = PlaneFit {
            normal: Vec3::new(s, 0.0, (1.0 - s * s).sqrt()),
            centroid: Vec3::zeros(),
            rms_residual: 0.0,
        };
        let d = ok(guided_direction(&fit))?;
        worst_dir = worst_dir.max((d - Vec3::new((1.0 - s * s).sqrt(), 0.0, s)).amax());
    }
    ensure(worst_dir <= 1e-12, || format!("guided direction error {worst_dir:e}"))?;
    Ok(format!(
        "clean {worst_clean:.1e}, noisy {worst_noisy_deg:.3} deg, guided {worst_dir:.1e}"
    ))
}

// 4. elevation map fidelity on a staircase
fn map_fidelity() -> Check {
    let start = Instant::now();
    let hf = ok(generate(&terraforge::terrain::TerrainSpec::new(Robot::X30, TerrainType::Stairs, 9)))?;
    let mut traj = TrajectorySpec::straight(1.0, 7.0, 2.5);
    traj.start = [-3.5, 0.0];
    let mut grid = ok(ElevationGrid::centered(8.0, 0.05, 0.0, 0.0))?;
    let pattern = ScanPattern::default();
    let mut scans = 0;
    for k in 0..=28 {
        let pose = ok(traj.true_state(0.25 * k as f64))?.pose;
        let scan = ok(lidar_scan(&hf, &pose, &pattern, &NoiseConfig::noise_free(), k))?;
        ok(grid.integrate_scan(&scan, &pose))?;
        scans += 1;
    }
    let (rms, n) = grid.rms_error(&hf);
    ensure(n > 1000, || format!("only {n} valid cells"))?;
    ensure(rms <= 0.025, || format!("RMS {rms:.4} m over {n} cells"))?;
    let t = within_time(start, 30.0)?;
    Ok(format!("RMS {rms:.4} m over {n} cells after {scans} scans ({t:.2} s)"))
}

fn reward_oracle(input: &RewardInput, fit: &PlaneFit, edge_feet: usize) -> f64 {
    let tau = input.terrain_type;
    let platform = tau == TerrainType::HighPlatform;
    let gap_or_platform = matches!(tau, TerrainType::Gap | TerrainType::HighPlatform);
    let [cx, cy, cyaw] = input.command;
    let s = fit.normal.x;
    let guided = Vec3::new((1.0 - s * s).sqrt(), 0.0, s);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let smooth: f64 = (0..JOINTS)
        .map(|k| (input.action[k] - 2.0 * input.prev_action[k] + input.prev_action2[k]).powi(2))
        .sum();
    let stumbles = input
        .foot_contact_forces
        .iter()
        .filter(|f| (f.x * f.x + f.y * f.y).sqrt() > 2.0 * f.z.abs())
        .count() as f64;
    let mut total = 0.0;
    if platform {
        total += 3.0 * input.v_world.dot(&guided).min(cx);
        total += -1.0 * -(input.yaw * input.yaw);
    } else {
        let d2 = (cx - input.v_body_xy[0]).powi(2) + (cy - input.v_body_xy[1]).powi(2);
        total += 3.0 * 2.0 * (-4.0 * d2).exp();
        total += -2.0 * -(input.v_z * input.v_z);
    }
    total += 0.5 * 0.5 * (-4.0 * (cyaw - input.omega.z).powi(2)).exp();
    total += -0.05 * -(input.omega.x * input.omega.x);
    total += -10.0 * -(input.gravity_body.x - fit.normal.x).powi(2);
    total += -2.5e-7 * -input.joint_acc.iter().map(|a| a * a).sum::<f64>();
    total += -10.0 * -(input.desired_height - input.body_height).powi(2);
    total += -0.04 * -sq(&input.action, &input.prev_action);
    total += -0.03 * -smooth;
    total += -1.0 * -sq(&input.hip_angles_des, &input.hip_angles);
    if gap_or_platform {
        let w = if platform { -1.0 } else { -10.0 };
        total += w * edge_feet as f64 + w * stumbles;
    }
    total
}

// flat ground with a 1 m step up past x = 0.025
fn step_field() -> Heightfield {
    let mut hf = Heightfield::flat(81, 81, 0.05, [-2.0, -2.0]);
    for j in 0..81 {
        for i in 41..81 {
            hf.set(i, j, 1.0);
        }
    }
    hf
}

fn random_frame(rng: &mut ChaCha8Rng, tau: TerrainType) -> (RewardInput, PlaneFit, usize) {
    let mut input = RewardInput::at_rest(tau, 0.3);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    input.v_world = Vec3::new(u(-2.0, 2.0), u(-1.0, 1.0), u(-1.0, 1.0));
    input.v_body_xy = [u(-1.5, 1.5), u(-1.5, 1.5)];
    input.v_z = u(-1.0, 1.0);
    input.omega = Vec3::new(u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0));
    input.gravity_body = Vec3::new(u(-0.5, 0.5), u(-0.5, 0.5), -1.0).normalize();
    input.yaw = u(-1.0, 1.0);
    input.body_height = u(0.1, 0.5);
    input.command = [u(-1.2, 1.2), u(-1.2, 1.2), u(-2.0, 2.0)];
    for k in 0..JOINTS {
        input.joint_acc[k] = u(-500.0, 500.0);
        input.action[k] = u(-1.0, 1.0);
        input.prev_action[k] = u(-1.0, 1.0);
        input.prev_action2[k] = u(-1.0, 1.0);
    }
    let mut edge_feet = 0;
    for k in 0..LEGS {
        input.hip_angles[k] = u(-0.5, 0.5);
        input.hip_angles_des[k] = u(-0.5, 0.5);
        let near_edge = u(0.0, 1.0) < 0.5;
        let x = if near_edge { u(-0.06, 0.11) } else { u(0.4, 1.5) * if u(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 } };
        input.foot_positions[k] = Vec3::new(x, u(-1.0, 1.0), 0.0);
        let contact = u(0.0, 1.0) < 0.7;
        input.foot_contact_forces[k] = if contact {
            Vec3::new(u(-40.0, 40.0), u(-40.0, 40.0), u(5.0, 60.0))
        } else {
            Vec3::zeros()
        };
        if contact && near_edge {
            edge_feet += 1;
        }
    }
    let n = Vec3::new(u(-0.6, 0.6), u(-0.3, 0.3), 1.0).normalize();
    let fit = PlaneFit {
        normal: n,
        centroid: Vec3::zeros(),
        rms_residual: 0.0,
    };
    (input, fit, edge_feet)
}

// 5. reward exactness
fn reward_exactness() -> Check {
    let w = RewardWeights::default();
    let table = [
        (w.terrain_linear_tracking, 3.0),
        (w.linear_tracking, 3.0),
        (w.angular_tracking, 0.5),
        (w.vertical_velocity, -2.0),
        (w.roll_rate, -0.05),
        (w.roll, -10.0),
        (w.yaw, -1.0),
        (w.joint_acc, -2.5e-7),
        (w.body_height, -10.0),
        (w.action_rate, -0.04),
        (w.smoothness, -0.03),
        (w.hip_angle, -1.0),
        (w.feet_edge_gap, -10.0),
        (w.feet_edge_platform, -1.0),
        (w.feet_stumble_gap, -10.0),
        (w.feet_stumble_platform, -1.0),
    ];
    ensure(table.iter().all(|(a, b)| a == b), || format!("default weights {w:?}"))?;

    let cfg = RewardConfig::default();
    let flat = PlaneFit {
        normal: Vec3::z(),
        centroid: Vec3::zeros(),
        rms_residual: 0.0,
    };
    let mut perfect = RewardInput::at_rest(TerrainType::Slope, 0.3);
    perfect.command = [0.7, -0.2, 0.4];
    perfect.v_body_xy = [0.7, -0.2];
    perfect.omega = Vec3::new(0.0, 0.0, 0.4);
    let b = ok(compute_rewards(&perfect, &flat, &cfg, None))?;
    let (l, a) = (b.raw(RewardTerm::LinearTracking), b.raw(RewardTerm::AngularTracking));
    ensure(l == 2.0 && a == 0.5, || format!("tracking maxima L {l} A {a}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut clamp_violations = 0;
    for _ in 0..100_000 {
        let (mut input, fit, _) = random_frame(&mut rng, TerrainType::HighPlatform);
        input.foot_contact_forces = [Vec3::zeros(); LEGS];
        let b = ok(compute_rewards(&input, &fit, &cfg, None))?;
        if b.raw(RewardTerm::TerrainLinearTracking) > input.command[0] {
            clamp_violations += 1;
        }
    }
    ensure(clamp_violations == 0, || format!("{clamp_violations} T-L values above v_cmd_x"))?;

    let grid = step_field();
    let mut worst: f64 = 0.0;
    for k in 0..5_000 {
        let tau = TerrainType::ALL[k % 5];
        let (input, fit, edge_feet) = random_frame(&mut rng, tau);
        let b = ok(compute_rewards(&input, &fit, &cfg, Some(&grid)))?;
        let oracle = reward_oracle(&input, &fit, edge_feet);
        let summed: f64 = b.terms.iter().map(|t| t.raw * t.weight).sum();
        worst = worst.max((b.total - oracle).abs()).max((b.total - summed).abs());
    }
    ensure(worst <= 1e-12, || format!("total vs oracle {worst:e}"))?;
    Ok(format!("maxima 2.0/0.5, 0 clamp violations in 1e5 frames, oracle diff {worst:.1e}"))
}

// 6. loss formulas
fn losses() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (mu, logvar): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let closed = ok(kl_divergence(&[mu], &[logvar]))?;
        let sigma = (0.5 * logvar).exp();
        // log q(z) - log p(z) for z ~ q, drawn in antithetic pairs
        let log_ratio = |eps: f64| {
            let z = mu + sigma * eps;
            -0.5 * logvar - 0.5 * eps * eps + 0.5 * z * z
        };
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n / 2 {
            let eps: f64 = std_normal.sample(&mut rng);
            acc += log_ratio(eps) + log_ratio(-eps);
        }
        let mc = acc / n as f64;
        worst = worst.max((mc - closed).abs());
    }
    ensure(worst < 1e-2, || format!("KL vs Monte Carlo {worst:.4}"))?;

    let v = [0.3, -0.1, 0.2];
    let o: Vec<f64> = (0..45).map(|k| k as f64 * 0.01).collect();
    let zeros = [0.0; 16];
    let map = LocalMap::new(17, 11, 0.1, (0..187).map(|k| k as f64 * 1e-3).collect());
    let zero_at_match = [
        ok(loss_est(&v, &v))?,
        ok(kl_divergence(&zeros, &zeros))?,
        ok(loss_vae(&o, &o, &zeros, &zeros, 1.0))?,
        ok(loss_cenet(0.0, 0.0))?,
        ok(loss_terrain(&[map.clone(), map.clone()], &[map.clone(), map]))?,
    ];
    ensure(zero_at_match.iter().all(|&x| x == 0.0), || format!("match losses {zero_at_match:?}"))?;
    Ok(format!("KL vs Monte Carlo max diff {worst:.4}, all losses 0 at match"))
}

// 7. filter health on a noisy run with injected stale measurements
fn filter_health() -> Check {
    let traj = TrajectorySpec::straight(1.0, 10.0, 0.5);
    let noise = NoiseConfig::randomized();
    let imu = ok(imu_stream(&traj, 200, &noise, 71))?;
    let odom = ok(odometry_stream(&traj, 10, &noise, 72))?;
    let (delay_ms, imu_d) = ok(apply_random_delay(&imu, [0.0, 0.0], 73))?;
    let (odom_delay_ms, mut odom_d) = ok(apply_random_delay(&odom, noise.system_delay_range, 74))?;
    let _ = delay_ms;

    // replay every tenth measurement again, 250 ms late
    let late: Vec<Delivered<_>> = ok(apply_delay(&odom, 0.0))?
        .into_iter()
        .step_by(10)
        .map(|d| Delivered {
            delivery_ns: d.delivery_ns + 250_000_000,
            ..d
        })
        .collect();
    let end_ns = imu_d.last().map(|d| d.delivery_ns).unwrap_or_default();
    // replays due after the last IMU sample never reach the filter
    let injected = late.iter().filter(|d| d.delivery_ns <= end_ns).count();
    odom_d.extend(late);
    odom_d.sort_by_key(|d| d.delivery_ns);

    let cfg = FusionConfig {
        initial_velocity: [1.0, 0.0, 0.0],
        ..FusionConfig::default()
    };
    let mut replay = ok(FusionReplay::new(&odom_d, &cfg))?;
    let mut steps = 0;
    let mut worst_asym: f64 = 0.0;
    let mut worst_eig: f64 = f64::INFINITY;
    let mut worst_norm: f64 = 0.0;
    let mut poses = Vec::new();
    for s in &imu_d {
        if let Some(p) = ok(replay.step(s))? {
            poses.push(p);
            let state = replay.fusion().state().expect("initialized");
            let h = CovarianceHealth::of(&state.covariance);
            worst_asym = worst_asym.max(h.max_asymmetry);
            worst_eig = worst_eig.min(h.min_eigenvalue);
            worst_norm = worst_norm.max((state.orientation.norm() - 1.0).abs());
            ensure(h.is_healthy(), || format!("unhealthy covariance at step {steps}: {h:?}"))?;
            steps += 1;
        }
    }
    ensure(worst_norm <= 1e-9, || format!("quaternion norm error {worst_norm:e}"))?;
    ensure(replay.rejected == injected, || {
        format!("{} rejections, {injected} injected", replay.rejected)
    })?;
    let err = ok(max_position_error(&poses, &traj))?;
    Ok(format!(
        "{steps} steps, asym {worst_asym:.1e}, min eig {worst_eig:.1e}, |q| err {worst_norm:.1e}, \
         {injected}/{injected} injected rejected, odom delay {odom_delay_ms:.1} ms, max pos err {err:.3} m"
    ))
}

// 8. throughput
fn throughput() -> Check {
    let cfg = PipelineConfig::default();
    let report = ok(pipeline::bench(&cfg, 10_000))?;
    let tick = &report.tick;
    ensure(report.stages.len() == 4, || format!("{} stages", report.stages.len()))?;
    ensure(tick.p99_us < 5_000.0, || format!("tick p99 {:.1} us", tick.p99_us))?;
    let per_stage: Vec<String> = report.stages.iter().map(|s| format!("{} {:.1}", s.name, s.p99_us)).collect();
    Ok(format!(
        "tick p50 {:.1} us, p99 {:.1} us over {} ticks; stage p99 us: {}",
        tick.p50_us,
        tick.p99_us,
        tick.samples,
        per_stage.join(", ")
    ))
}

// 9. determinism
fn determinism() -> Check {
    let cfg = PipelineConfig {
        noise: NoiseConfig::randomized(),
        seed: 2024,
        ..PipelineConfig::default()
    };
    let a = ok(tempfile::tempdir())?;
    let b = ok(tempfile::tempdir())?;
    ok(pipeline::run(&cfg, a.path()))?;
    ok(pipeline::run(&cfg, b.path()))?;
    let mut names: Vec<_> = ok(fs::read_dir(a.path()))?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut bytes = 0;
    for name in &names {
        let x = ok(fs::read(a.path().join(name)))?;
        let y = ok(fs::read(b.path().join(name)))?;
        ensure(x == y, || format!("{name:?} differs"))?;
        bytes += x.len();
    }
    Ok(format!("{} files, {bytes} bytes identical", names.len()))
}

// 10. virtual edit survives scanning
fn virtual_edit() -> Check {
    let hf = Heightfield::flat(161, 161, 0.05, [-4.0, -4.0]);
    let mut grid = ok(ElevationGrid::centered(8.0, 0.05, 0.0, 0.0))?;
    let pattern = ScanPattern::default();
    let scan_pose = |k: u64| {
        let t = k * 10_000_000;
        Pose::new(Vec3::new(0.002 * k as f64 - 0.1, 0.0, 0.5), Quaternion::from_yaw(0.3), t)
    };
    let scan = |k: u64| lidar_scan(&hf, &scan_pose(k), &pattern, &NoiseConfig::noise_free(), k);
    ok(grid.integrate_scan(&ok(scan(0))?, &scan_pose(0)))?;

    let region = [0.3, -0.25, 0.8, 0.25];
    let depth = -1.0;
    let edited = ok(grid.apply_edit(&VirtualEdit::trench(region, depth)))?;
    ensure(edited == 100, || format!("{edited} cells edited"))?;
    for k in 1..=100 {
        ok(grid.integrate_scan(&ok(scan(k))?, &scan_pose(k)))?;
    }
    let mut survived = 0;
    for c in grid.cells() {
        if c.pinned {
            ensure(c.valid && c.height == depth, || format!("pinned cell drifted to {}", c.height))?;
            survived += 1;
        }
    }
    ensure(survived == edited, || format!("{survived} of {edited} pinned cells remain"))?;

    let body = Pose::new(Vec3::new(0.1, 0.05, 0.45), Quaternion::from_yaw(0.3), 0);
    let spec = LocalMapSpec::default();
    let local = ok(extract_local(&grid, &body, &spec))?;
    let (sin, cos) = 0.3f64.sin_cos();
    let (mut inside, mut outside) = (0, 0);
    let margin = 0.05 + 1e-9;
    for r in 0..local.rows {
        for c in 0..local.cols {
            let (dx, dy) = (-1.6 / 3.0 + 0.1 * r as f64, -0.5 + 0.1 * c as f64);
            let (x, y) = (0.1 + cos * dx - sin * dy, 0.05 + sin * dx + cos * dy);
            let deep = x > region[0] + margin && x < region[2] - margin && y > region[1] + margin && y < region[3] - margin;
            let clear = x < region[0] - margin || x > region[2] + margin || y < region[1] - margin || y > region[3] + margin;
            let h = local.get(r, c);
            if deep {
                ensure((h - (depth - 0.45)).abs() < 1e-9, || format!("trench sample ({r},{c}) = {h}"))?;
                inside += 1;
            } else if clear && local.known[r * local.cols + c] {
                ensure((h + 0.45).abs() < 1e-9, || format!("ground sample ({r},{c}) = {h}"))?;
                outside += 1;
            }
        }
    }
    ensure(inside >= 10, || format!("only {inside} local samples inside the trench"))?;
    Ok(format!(
        "{edited} cells pinned through 100 scans; {inside} local samples at {:.2} m, {outside} at -0.45 m",
        depth - 0.45
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("curriculum table", curriculum_table),
        ("zero-order hold vs fusion", zoh_vs_fusion),
        ("plane fit and guided direction", plane_fit),
        ("elevation map fidelity", map_fidelity),
        ("reward exactness", reward_exactness),
        ("loss formulas", losses),
        ("filter health", filter_health),
        ("throughput", throughput),
        ("determinism", determinism),
        ("virtual edit semantics", virtual_edit),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
