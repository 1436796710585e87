use std::fs;
use std::path::Path;

use terraforge::config::PipelineConfig;
use terraforge::geometry::{Pose, Quaternion};
use terraforge::pipeline::{self, RewardRecord, FUSED_POSES, LOCAL_MAPS, REWARDS};
use terraforge::reward::RewardTerm;
use terraforge::sensors::{NoiseConfig, TrajectorySpec};
use terraforge::telemetry::TelemetryMessage;
use terraforge::terrain::{Robot, TerrainSpec, TerrainType};
use terraforge::Error;

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn static_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        terrain: TerrainSpec::new(Robot::Lite3, TerrainType::Slope, 0),
        trajectory: TrajectorySpec::stationary(2.0, 0.5),
        ..PipelineConfig::default()
    };
    cfg.fusion.initial_velocity = [0.0; 3];
    cfg
}

#[test]
fn platform_run_clamps_terrain_tracking() {
    let cfg = PipelineConfig::default();
    assert_eq!(cfg.terrain.terrain_type, TerrainType::HighPlatform);
    assert_eq!(cfg.terrain.level, 9);
    let dir = tempfile::tempdir().unwrap();
    let summary = pipeline::run(&cfg, dir.path()).unwrap();
    assert_eq!(summary.fused_poses, 1001);
    assert_eq!(summary.policy_ticks, 251);

    let poses: Vec<Pose> = read_lines(&dir.path().join(FUSED_POSES));
    let rewards: Vec<RewardRecord> = read_lines(&dir.path().join(REWARDS));
    assert_eq!(rewards.len(), summary.policy_ticks);
    for (k, r) in rewards.iter().enumerate() {
        // every fourth fused pose drives a policy tick
        assert_eq!(r.timestamp_ns, poses[4 * k].timestamp_ns);
        assert!(r.breakdown.raw(RewardTerm::TerrainLinearTracking) <= 1.2);
        assert_eq!(r.breakdown.raw(RewardTerm::LinearTracking), 0.0);
    }
    let blobs = fs::metadata(dir.path().join(LOCAL_MAPS)).unwrap().len();
    assert_eq!(blobs as usize, summary.policy_ticks * (8 + 16 + 187 * 4));
}

#[test]
fn static_run_holds_identity() {
    let cfg = static_config();
    let dir = tempfile::tempdir().unwrap();
    let summary = pipeline::run(&cfg, dir.path()).unwrap();
    assert!(summary.max_position_error < 1e-9);
    let poses: Vec<Pose> = read_lines(&dir.path().join(FUSED_POSES));
    for p in &poses {
        assert!(p.position.xy().norm() < 1e-9);
        assert!((p.position.z - 0.5).abs() < 1e-9);
        assert!(p.orientation.orientation_eq(&Quaternion::identity(), 1e-9));
    }
    let rewards: Vec<RewardRecord> = read_lines(&dir.path().join(REWARDS));
    for r in &rewards {
        assert_eq!(r.breakdown.raw(RewardTerm::LinearTracking), 2.0);
        assert_eq!(r.breakdown.raw(RewardTerm::AngularTracking), 0.5);
    }
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let mut cfg = PipelineConfig {
        noise: NoiseConfig::randomized(),
        seed: 17,
        ..PipelineConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline::run(&cfg, a.path()).unwrap();
    pipeline::run(&cfg, b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }

    cfg.seed = 18;
    let c = tempfile::tempdir().unwrap();
    pipeline::run(&cfg, c.path()).unwrap();
    assert_ne!(fs::read(a.path().join(REWARDS)).unwrap(), fs::read(c.path().join(REWARDS)).unwrap());
}

#[test]
fn noisy_run_stays_close() {
    let cfg = PipelineConfig {
        noise: NoiseConfig::randomized(),
        seed: 3,
        ..PipelineConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let s = pipeline::run(&cfg, dir.path()).unwrap();
    assert_eq!(s.rejected_measurements, 0);
    assert!(s.odometry_delay_ms <= 15.0);
    assert!(s.max_position_error < 0.05, "{}", s.max_position_error);
}

#[test]
fn misaligned_rates_are_invariant_violations() {
    let mut cfg = PipelineConfig::default();
    cfg.rates.policy_hz = 30;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(pipeline::run(&cfg, dir.path()), Err(Error::Invariant(_))));
}

#[test]
fn logs_replay_as_telemetry() {
    let cfg = static_config();
    let dir = tempfile::tempdir().unwrap();
    let s = pipeline::run(&cfg, dir.path()).unwrap();
    let msgs = pipeline::read_logs(dir.path()).unwrap();
    let count = |tag: u8| msgs.iter().filter(|m| m.encode()[0] == tag).count();
    assert_eq!(count(1), s.fused_poses);
    assert_eq!(count(2), s.policy_ticks);
    assert_eq!(count(3), s.policy_ticks);
    assert!(msgs.windows(2).all(|w| w[0].timestamp_ns() <= w[1].timestamp_ns()));
    assert!(msgs.iter().all(|m| TelemetryMessage::decode(&m.encode()).unwrap() == *m));
}

#[test]
fn bench_reports_every_stage() {
    let cfg = PipelineConfig::default();
    let report = pipeline::bench(&cfg, 100).unwrap();
    for name in ["scan_integration", "fusion_step", "local_extraction", "reward_eval"] {
        assert_eq!(report.stage(name).unwrap().samples, 100, "{name}");
    }
    assert_eq!(report.tick.samples, 100);
    assert!(report.to_text().contains("tick_total"));
}
