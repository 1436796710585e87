//! Virtual-time replay: sensors, fusion, mapping and reward scoring, plus the
//! real-time stage benchmark.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::elevation::{extract_local, inject_map_noise, sample_positions, ElevationGrid, LocalMap, SharedMap};
use crate::error::{Error, Result};
use crate::fusion::{CovarianceHealth, FusionReplay, FusionState};
use crate::geometry::{ns_to_secs, Pose, Quaternion, Vec3};
use crate::grid::HeightGrid;
use crate::obs::{ObservationFrame, TrajectoryRecord};
use crate::reward::{compute_rewards, fit_plane, PlaneFit, RewardBreakdown, RewardInput, JOINTS, LEGS};
use crate::sensors::{
    apply_delay, apply_random_delay, imu_stream, lidar_scan, odometry_stream, ImuSample, LidarScan,
    TrajectorySpec, GRAVITY,
};
use crate::telemetry::{fragment_local_map, TelemetryMessage, UdpSender};
use crate::terrain::{generate, Heightfield};

pub const FUSED_POSES: &str = "fused_poses.jsonl";
pub const LOCAL_MAPS: &str = "local_maps.bin";
pub const REWARDS: &str = "rewards.jsonl";
pub const TRAJECTORY: &str = "trajectory.jsonl";
pub const MAP_HEIGHTS: &str = "map.hfld";
pub const MAP_VALIDITY: &str = "map.hvld";
pub const SUMMARY: &str = "summary.json";

/// Minimum clearance between the sensor and the highest terrain cell (m).
pub const SENSOR_CLEARANCE: f64 = 0.05;
/// Per-tick latency budget at 200 Hz (µs).
pub const TICK_BUDGET_US: f64 = 5000.0;

const MIN_PLANE_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub timestamp_ns: u64,
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub imu_samples: usize,
    pub fused_poses: usize,
    pub policy_ticks: usize,
    pub scans: usize,
    pub rejected_measurements: usize,
    pub skipped_before_init: usize,
    pub odometry_delay_ms: f64,
    pub map_recenters: usize,
    pub max_position_error: f64,
    pub max_fill_ratio: f64,
    pub telemetry_sent: usize,
    pub telemetry_dropped: usize,
}

/// Reward-side products of one policy tick.
#[derive(Debug, Clone)]
pub struct PolicyTick {
    pub fit: PlaneFit,
    pub input: RewardInput,
    pub observation: ObservationFrame,
    pub rewards: RewardBreakdown,
}

fn ground_at<G: HeightGrid + ?Sized>(map: &G, x: f64, y: f64) -> f64 {
    map.cell_containing(x, y)
        .and_then(|(i, j)| map.height_at(i, j))
        .unwrap_or(0.0)
}

/// Policy-input copy of the local map, with map noise injected when configured.
pub fn perturb_stage(local: &LocalMap, cfg: &PipelineConfig, tick_seed: u64) -> Result<LocalMap> {
    if cfg.noise.map_noise_ratio > 0.0 {
        inject_map_noise(local, cfg.noise.map_noise_ratio, cfg.noise.map_noise_magnitude_range, tick_seed)
    } else {
        Ok(local.clone())
    }
}

/// Plane through the known samples of the clean local map. Patches with too
/// little map data count as level ground under the body.
pub fn patch_plane(local: &LocalMap, pose: &Pose, cfg: &PipelineConfig) -> Result<PlaneFit> {
    let points: Vec<Vec3> = sample_positions(pose, &cfg.local_map)?
        .into_iter()
        .zip(local.cells.iter().zip(&local.known))
        .filter(|(_, (_, known))| **known)
        .map(|([x, y], (h, _))| Vec3::new(x, y, h + pose.position.z))
        .collect();
    if points.len() < MIN_PLANE_POINTS {
        return Ok(PlaneFit {
            normal: Vec3::z(),
            centroid: pose.position,
            rms_residual: 0.0,
        });
    }
    fit_plane(&points, MIN_PLANE_POINTS).map_err(|e| Error::Invariant(format!("plane fit: {e}")))
}

/// Plane fit over the clean local patch, reward input assembly and reward terms.
pub fn reward_stage(
    map: &ElevationGrid,
    local: &LocalMap,
    state: &FusionState,
    imu: &ImuSample,
    cfg: &PipelineConfig,
) -> Result<PolicyTick> {
    let pose = state.pose();
    let q = pose.orientation;
    let fit = patch_plane(local, &pose, cfg)?;

    let v_body = q.inverse_rotate(&state.velocity);
    let omega = imu.angular_velocity - state.gyro_bias;
    let gravity_body = q.inverse_rotate(&Vec3::new(0.0, 0.0, -1.0)).normalize();
    let yaw = q.yaw();
    let heading = Quaternion::from_yaw(yaw);
    let st = &cfg.stance;
    let foot_force = Vec3::new(0.0, 0.0, st.body_mass * GRAVITY / LEGS as f64);
    let foot_positions: [Vec3; LEGS] = std::array::from_fn(|k| {
        let sx = if k < 2 { 1.0 } else { -1.0 };
        let sy = if k % 2 == 0 { 1.0 } else { -1.0 };
        let p = pose.position + heading.rotate(&Vec3::new(sx * st.half_length, sy * st.half_width, 0.0));
        Vec3::new(p.x, p.y, ground_at(map, p.x, p.y))
    });
    let command = cfg.command();
    let input = RewardInput {
        v_world: state.velocity,
        v_body_xy: [v_body.x, v_body.y],
        v_z: state.velocity.z,
        omega,
        gravity_body,
        yaw,
        joint_acc: [0.0; JOINTS],
        body_height: pose.position.z - ground_at(map, pose.position.x, pose.position.y),
        desired_height: st.desired_height,
        action: [0.0; JOINTS],
        prev_action: [0.0; JOINTS],
        prev_action2: [0.0; JOINTS],
        hip_angles: [0.0; LEGS],
        hip_angles_des: [0.0; LEGS],
        foot_positions,
        foot_contact_forces: [foot_force; LEGS],
        command,
        terrain_type: cfg.terrain.terrain_type,
    };
    let rewards = compute_rewards(&input, &fit, &cfg.reward, Some(map as &dyn HeightGrid))?;
    let observation = ObservationFrame {
        omega,
        gravity: gravity_body,
        command,
        joint_angles: [0.0; JOINTS],
        joint_velocities: [0.0; JOINTS],
        prev_action: [0.0; JOINTS],
    };
    Ok(PolicyTick {
        fit,
        input,
        observation,
        rewards,
    })
}

fn check_state(state: &FusionState) -> Result<()> {
    let drift = (state.orientation.norm() - 1.0).abs();
    if drift > 1e-9 {
        return Err(Error::Invariant(format!("quaternion norm drifted by {drift:e}")));
    }
    let health = CovarianceHealth::of(&state.covariance);
    if !health.is_healthy() {
        return Err(Error::Invariant(format!(
            "covariance unhealthy at {} ns: asymmetry {:e}, min eigenvalue {:e}",
            state.timestamp_ns, health.max_asymmetry, health.min_eigenvalue
        )));
    }
    Ok(())
}

fn check_clearance(traj: &TrajectorySpec, hf: &Heightfield) -> Result<()> {
    let top = hf.max_height();
    if traj.height_above_ground < top + SENSOR_CLEARANCE {
        return Err(Error::Config(format!(
            "trajectory height {} m does not clear the terrain top {top:.3} m",
            traj.height_above_ground
        )));
    }
    Ok(())
}

fn scan_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1000 + k as u64)
}

fn tick_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).wrapping_add(k as u64)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Replays the configured scenario and writes every log into `out_dir`.
pub fn run(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let hf = generate(&cfg.terrain)?;
    let traj = &cfg.trajectory;
    check_clearance(traj, &hf)?;
    std::fs::create_dir_all(out_dir)?;

    let rates = cfg.rates;
    let imu = imu_stream(traj, rates.imu_hz, &cfg.noise, cfg.seed)?;
    let odom = odometry_stream(traj, rates.odom_hz, &cfg.noise, cfg.seed.wrapping_add(1))?;
    let (delay_ms, odom) = apply_random_delay(&odom, cfg.noise.system_delay_range, cfg.seed.wrapping_add(2))?;
    let imu = apply_delay(&imu, 0.0)?;
    log::info!(
        "replaying {} imu samples, {} pose measurements delayed {delay_ms:.2} ms",
        imu.len(),
        odom.len()
    );

    let start = traj.true_state(0.0)?.pose.position;
    let map = SharedMap::new(ElevationGrid::centered(cfg.map.size, cfg.map.resolution, start.x, start.y)?);
    let mut replay = FusionReplay::new(&odom, &cfg.fusion)?;
    let mut udp = match &cfg.output.udp_endpoint {
        Some(ep) => Some(UdpSender::connect(ep)?),
        None => None,
    };

    let mut poses_out = create(out_dir, FUSED_POSES)?;
    let mut maps_out = create(out_dir, LOCAL_MAPS)?;
    let mut rewards_out = create(out_dir, REWARDS)?;
    let mut traj_out = create(out_dir, TRAJECTORY)?;

    let mut summary = RunSummary {
        imu_samples: imu.len(),
        fused_poses: 0,
        policy_ticks: 0,
        scans: 0,
        rejected_measurements: 0,
        skipped_before_init: 0,
        odometry_delay_ms: delay_ms,
        map_recenters: 0,
        max_position_error: 0.0,
        max_fill_ratio: 0.0,
        telemetry_sent: 0,
        telemetry_dropped: 0,
    };
    let policy_stride = rates.policy_stride();
    let scan_stride = rates.scan_stride();

    for (k, sample) in imu.iter().enumerate() {
        let Some(pose) = replay.step(sample)? else {
            continue;
        };
        let state = replay.fusion().state().expect("initialized once a pose is emitted");
        check_state(state)?;
        let t = ns_to_secs(pose.timestamp_ns).min(traj.duration);
        let truth = traj.true_state(t)?;
        summary.max_position_error = summary.max_position_error.max((pose.position - truth.pose.position).norm());
        write_json_line(&mut poses_out, &pose)?;
        if let Some(tx) = udp.as_mut() {
            tx.send(&TelemetryMessage::pose(&pose));
        }
        let fused_index = summary.fused_poses;
        summary.fused_poses += 1;

        if k % scan_stride == 0 {
            let scan = lidar_scan(&hf, &truth.pose, &cfg.scan, &cfg.noise, scan_seed(cfg.seed, summary.scans))?;
            let recenter = cfg.map.recenter_distance;
            let shifted = map.update(|m| -> Result<bool> {
                let c = m.center();
                let moved = (pose.position.x - c[0]).hypot(pose.position.y - c[1]) > recenter;
                if moved {
                    m.recenter(pose.position.x, pose.position.y);
                }
                m.integrate_scan(&scan, &pose)?;
                Ok(moved)
            })?;
            summary.map_recenters += shifted as usize;
            summary.scans += 1;
        }

        if fused_index.is_multiple_of(policy_stride) {
            let snapshot = map.snapshot();
            let local = extract_local(&*snapshot, &pose, &cfg.local_map)?;
            let e_t = perturb_stage(&local, cfg, tick_seed(cfg.seed, summary.policy_ticks))?;
            let tick = reward_stage(&snapshot, &local, state, &sample.item, cfg)?;
            summary.max_fill_ratio = summary.max_fill_ratio.max(local.fill_ratio());
            maps_out.write_all(&pose.timestamp_ns.to_le_bytes())?;
            maps_out.write_all(&e_t.to_blob())?;
            write_json_line(
                &mut rewards_out,
                &RewardRecord {
                    timestamp_ns: pose.timestamp_ns,
                    breakdown: tick.rewards.clone(),
                },
            )?;
            write_json_line(
                &mut traj_out,
                &TrajectoryRecord {
                    timestamp_ns: pose.timestamp_ns,
                    observation: tick.observation,
                    reward_input: tick.input,
                },
            )?;
            if let Some(tx) = udp.as_mut() {
                for frag in fragment_local_map(pose.timestamp_ns, &e_t)? {
                    tx.send(&frag);
                }
                let terms: Vec<f64> = tick.rewards.terms.iter().map(|t| t.weighted).collect();
                tx.send(&TelemetryMessage::reward(pose.timestamp_ns, &terms)?);
            }
            summary.policy_ticks += 1;
        }
    }
    summary.rejected_measurements = replay.rejected;
    summary.skipped_before_init = replay.skipped_before_init;
    if let Some(tx) = &udp {
        summary.telemetry_sent = tx.stats.sent;
        summary.telemetry_dropped = tx.stats.dropped;
    }

    for w in [&mut poses_out, &mut maps_out, &mut rewards_out, &mut traj_out] {
        w.flush()?;
    }
    let grid = map.snapshot();
    grid.to_heightfield().write_hfld(create(out_dir, MAP_HEIGHTS)?)?;
    grid.validity_mask().write_hvld(create(out_dir, MAP_VALIDITY)?)?;
    let mut s = create(out_dir, SUMMARY)?;
    serde_json::to_writer_pretty(&mut s, &summary)?;
    s.write_all(b"\n")?;
    s.flush()?;
    Ok(summary)
}

/// Rebuilds telemetry messages from the logs of a finished run, in timestamp order.
pub fn read_logs(dir: &Path) -> Result<Vec<TelemetryMessage>> {
    let mut msgs = Vec::new();
    for line in BufReader::new(File::open(dir.join(FUSED_POSES))?).lines() {
        let pose: Pose = serde_json::from_str(&line?)?;
        msgs.push(TelemetryMessage::pose(&pose));
    }
    let mut raw = Vec::new();
    File::open(dir.join(LOCAL_MAPS))?.read_to_end(&mut raw)?;
    let mut rest = &raw[..];
    while !rest.is_empty() {
        if rest.len() < 8 + 16 {
            return Err(Error::Format("truncated local map record".into()));
        }
        let ts = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
        let rows = u16::from_le_bytes([rest[8], rest[9]]) as usize;
        let cols = u16::from_le_bytes([rest[10], rest[11]]) as usize;
        let len = 16 + 4 * rows * cols;
        if rest.len() < 8 + len {
            return Err(Error::Format("truncated local map record".into()));
        }
        let local = LocalMap::from_blob(&rest[8..8 + len])?;
        msgs.extend(fragment_local_map(ts, &local)?);
        rest = &rest[8 + len..];
    }
    for line in BufReader::new(File::open(dir.join(REWARDS))?).lines() {
        let rec: RewardRecord = serde_json::from_str(&line?)?;
        let terms: Vec<f64> = rec.breakdown.terms.iter().map(|t| t.weighted).collect();
        msgs.push(TelemetryMessage::reward(rec.timestamp_ns, &terms)?);
    }
    msgs.sort_by_key(|m| m.timestamp_ns());
    Ok(msgs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub name: String,
    pub samples: usize,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl StageStats {
    pub fn from_samples(name: &str, samples_us: &[f64]) -> Self {
        let mut s = samples_us.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            name: name.to_string(),
            samples: s.len(),
            p50_us: percentile(&s, 0.50),
            p99_us: percentile(&s, 0.99),
            max_us: s.last().copied().unwrap_or(0.0),
        }
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub stages: Vec<StageStats>,
    /// Fusion step + extraction + reward + scan integration spread over the
    /// fusion ticks between scans.
    pub tick: StageStats,
    pub budget_us: f64,
}

impl BenchReport {
    pub fn within_budget(&self) -> bool {
        self.tick.p99_us <= self.budget_us
    }

    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<20} {:>8} {:>10} {:>10} {:>10}\n", "stage", "samples", "p50_us", "p99_us", "max_us");
        for s in self.stages.iter().chain(std::iter::once(&self.tick)) {
            out.push_str(&format!(
                "{:<20} {:>8} {:>10.1} {:>10.1} {:>10.1}\n",
                s.name, s.samples, s.p50_us, s.p99_us, s.max_us
            ));
        }
        out.push_str(&format!(
            "budget {:.0} us per tick: {}\n",
            self.budget_us,
            if self.within_budget() { "ok" } else { "exceeded" }
        ));
        out
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t0 = Instant::now();
    let v = f()?;
    Ok((v, t0.elapsed().as_secs_f64() * 1e6))
}

/// Times each stage over `iterations` fusion ticks on a looping circle over
/// the configured terrain, with the configured rolling map.
pub fn bench(cfg: &PipelineConfig, iterations: usize) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("bench needs at least one iteration".into()));
    }
    cfg.validate()?;
    let hf = generate(&cfg.terrain)?;
    let rates = cfg.rates;
    let height = cfg.trajectory.height_above_ground.max(hf.max_height() + 0.3);
    // long enough for the timed samples and one full lap of scan poses
    let duration = (iterations as f64 / rates.imu_hz as f64 + 1.0).max(std::f64::consts::TAU * 1.5);
    let mut traj = TrajectorySpec::circle(1.5, 1.0, duration, height);
    traj.start = [0.0, -1.5];
    let imu = apply_delay(&imu_stream(&traj, rates.imu_hz, &cfg.noise, cfg.seed)?, 0.0)?;
    let odom = apply_delay(&odometry_stream(&traj, rates.odom_hz, &cfg.noise, cfg.seed + 1)?, 0.0)?;

    let scan_stride = rates.scan_stride();
    let scan_count = scan_stride.min(iterations);
    let scans: Vec<(LidarScan, Pose)> = (0..scan_count)
        .map(|k| {
            let t = k as f64 * std::f64::consts::TAU * 1.5 / scan_count as f64;
            let pose = traj.true_state(t)?.pose;
            Ok((lidar_scan(&hf, &pose, &cfg.scan, &cfg.noise, scan_seed(cfg.seed, k))?, pose))
        })
        .collect::<Result<_>>()?;

    let map = SharedMap::new(ElevationGrid::centered(cfg.map.size, cfg.map.resolution, 0.0, 0.0)?);
    for (scan, pose) in &scans {
        map.update(|m| m.integrate_scan(scan, pose))?;
    }
    let mut replay = FusionReplay::new(&odom, &cfg.fusion)?;
    // seed the filter so every timed step is a full one
    replay.step(&imu[0])?;

    let mut scan_us = Vec::with_capacity(iterations);
    let mut fusion_us = Vec::with_capacity(iterations);
    let mut extract_us = Vec::with_capacity(iterations);
    let mut reward_us = Vec::with_capacity(iterations);
    let mut tick_us = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let sample = &imu[1 + i];
        let (scan, scan_pose) = &scans[i % scans.len()];
        let ((), ts) = timed(|| map.update(|m| m.integrate_scan(scan, scan_pose)).map(|_| ()))?;
        let (pose, tf) = timed(|| replay.step(sample))?;
        let pose = pose.ok_or_else(|| Error::Invariant("filter lost initialization".into()))?;
        let snapshot = map.snapshot();
        let ((local, _e_t), te) = timed(|| {
            let local = extract_local(&*snapshot, &pose, &cfg.local_map)?;
            let e_t = perturb_stage(&local, cfg, tick_seed(cfg.seed, i))?;
            Ok((local, e_t))
        })?;
        let state = replay.fusion().state().expect("initialized");
        let (_, tr) = timed(|| reward_stage(&snapshot, &local, state, &sample.item, cfg))?;
        drop(snapshot);
        scan_us.push(ts);
        fusion_us.push(tf);
        extract_us.push(te);
        reward_us.push(tr);
        tick_us.push(tf + te + tr + ts / scan_stride as f64);
    }
    Ok(BenchReport {
        iterations,
        stages: vec![
            StageStats::from_samples("scan_integration", &scan_us),
            StageStats::from_samples("fusion_step", &fusion_us),
            StageStats::from_samples("local_extraction", &extract_us),
            StageStats::from_samples("reward_eval", &reward_us),
        ],
        tick: StageStats::from_samples("tick_total", &tick_us),
        budget_us: TICK_BUDGET_US,
    })
}
