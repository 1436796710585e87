//! End-to-end run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elevation::LocalMapSpec;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::obs::LatentDims;
use crate::reward::RewardConfig;
use crate::sensors::{NoiseConfig, ScanPattern, TrajectoryKind, TrajectorySpec};
use crate::terrain::{Robot, TerrainSpec, TerrainType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub imu_hz: u32,
    pub odom_hz: u32,
    pub policy_hz: u32,
    pub scan_hz: u32,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            imu_hz: 200,
            odom_hz: 10,
            policy_hz: 50,
            scan_hz: 10,
        }
    }
}

impl Rates {
    /// Fusion ticks per policy tick.
    pub fn policy_stride(&self) -> usize {
        (self.imu_hz / self.policy_hz) as usize
    }

    /// Fusion ticks per scan.
    pub fn scan_stride(&self) -> usize {
        (self.imu_hz / self.scan_hz) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.odom_hz == 0 || self.policy_hz == 0 || self.scan_hz == 0 {
            return Err(Error::Invariant("rates must be positive".into()));
        }
        for (name, hz) in [("policy", self.policy_hz), ("odometry", self.odom_hz), ("scan", self.scan_hz)] {
            if hz > self.imu_hz || !self.imu_hz.is_multiple_of(hz) {
                return Err(Error::Invariant(format!(
                    "imu rate {} Hz is not a multiple of the {name} rate {hz} Hz",
                    self.imu_hz
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalMapConfig {
    /// Side of the square rolling map (m).
    pub size: f64,
    pub resolution: f64,
    /// Re-anchor once the body is this far from the map centre (m).
    pub recenter_distance: f64,
}

impl Default for GlobalMapConfig {
    fn default() -> Self {
        Self {
            size: 20.0,
            resolution: 0.05,
            recenter_distance: 1.0,
        }
    }
}

/// Nominal stance used to place feet for the contact-based reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StanceConfig {
    /// Hip-to-body-centre distance along x (m).
    pub half_length: f64,
    /// Hip-to-body-centre distance along y (m).
    pub half_width: f64,
    /// kg.
    pub body_mass: f64,
    /// Body height the policy should hold (m).
    pub desired_height: f64,
}

impl Default for StanceConfig {
    fn default() -> Self {
        Self {
            half_length: 0.2,
            half_width: 0.12,
            body_mass: 12.0,
            desired_height: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Optional `host:port` for live telemetry during `run`.
    pub udp_endpoint: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            udp_endpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Fixed `(v_x, v_y, ω_z)` command; the trajectory's own speed and turn
    /// rate when absent.
    pub command: Option<[f64; 3]>,
    pub terrain: TerrainSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseConfig,
    pub fusion: FusionConfig,
    pub scan: ScanPattern,
    pub map: GlobalMapConfig,
    pub local_map: LocalMapSpec,
    pub reward: RewardConfig,
    pub stance: StanceConfig,
    pub latent: LatentDims,
    pub rates: Rates,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let trajectory = TrajectorySpec {
            kind: TrajectoryKind::ConstantVelocity,
            speed: 1.0,
            duration: 5.0,
            height_above_ground: 1.0,
            start: [-3.0, 0.0],
            ..TrajectorySpec::default()
        };
        let fusion = FusionConfig {
            initial_velocity: [trajectory.speed, 0.0, 0.0],
            ..FusionConfig::default()
        };
        Self {
            seed: 0,
            command: None,
            terrain: TerrainSpec::new(Robot::Lite3, TerrainType::HighPlatform, 9),
            trajectory,
            noise: NoiseConfig::noise_free(),
            fusion,
            scan: ScanPattern::default(),
            map: GlobalMapConfig::default(),
            local_map: LocalMapSpec::default(),
            reward: RewardConfig::default(),
            stance: StanceConfig::default(),
            latent: LatentDims::default(),
            rates: Rates::default(),
            output: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    /// Parameter checks that do not need the generated terrain. Rate
    /// alignment failures come back as invariant violations.
    pub fn validate(&self) -> Result<()> {
        self.terrain.cells_per_side()?;
        self.trajectory
            .validate()
            .map_err(|e| Error::Config(format!("trajectory: {e}")))?;
        self.noise.validate().map_err(|e| Error::Config(format!("noise: {e}")))?;
        self.fusion.validate().map_err(|e| Error::Config(format!("fusion: {e}")))?;
        self.local_map
            .shape()
            .map_err(|e| Error::Config(format!("local map: {e}")))?;
        if !(100..=1000).contains(&self.rates.imu_hz) {
            return Err(Error::Config(format!("imu rate {} Hz outside [100, 1000]", self.rates.imu_hz)));
        }
        if !(self.map.recenter_distance > 0.0) {
            return Err(Error::Config("map recenter distance must be positive".into()));
        }
        if let Some(c) = self.command {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::Config("command must be finite".into()));
            }
        }
        self.rates.validate()
    }

    pub fn command(&self) -> [f64; 3] {
        self.command.unwrap_or_else(|| {
            let (v, w) = self.trajectory.nominal_command();
            [v, 0.0, w]
        })
    }
}

/// Commented reference configuration listing every default.
pub fn reference_config() -> String {
    let body = PipelineConfig::default().to_toml();
    let mut out = String::from(
        "# terraforge run configuration. Every key is optional; values shown are the defaults.\n\
         #\n\
         # seed             base seed for every random stream\n\
         # command          optional fixed [v_x, v_y, yaw_rate] command\n\
         # [terrain]        terrain_type tau1..tau5, level 0..9, robot lite3|x30, tile_size m, resolution m\n\
         # [trajectory]     kind static|constant_velocity|circle|sinusoid; height_above_ground is the\n\
         #                  constant sensor z over the z = 0 datum and must clear the terrain\n\
         # [noise]          sensor noise std devs, map noise ratio/magnitude, system delay range (ms)\n\
         # [fusion]         filter noise densities and initial uncertainty\n\
         # [scan]           lidar ray pattern\n\
         # [map]            rolling global map size, resolution and re-anchor distance (m)\n\
         # [local_map]      robot-centric window: length_x, length_y, resolution, fill_value\n\
         # [reward]         term weights and feet edge/stumble thresholds\n\
         # [stance]         nominal foot placement, body mass and desired height\n\
         # [latent]         encoder latent sizes (recorded only)\n\
         # [rates]          imu_hz must be a multiple of odom_hz, policy_hz and scan_hz\n\
         # [output]         log directory and optional UDP endpoint\n\n",
    );
    out.push_str(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml(&reference_config()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_and_unknown_keys() {
        let cfg = PipelineConfig::from_toml("seed = 9\n[rates]\npolicy_hz = 40\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.rates.imu_hz, 200);
        assert_eq!(cfg.rates.policy_stride(), 5);
        assert!(PipelineConfig::from_toml("[rates]\nimu = 3\n").is_err());
    }

    #[test]
    fn rate_misalignment_is_an_invariant_violation() {
        let mut cfg = PipelineConfig::default();
        cfg.rates.policy_hz = 60;
        assert!(matches!(cfg.validate(), Err(Error::Invariant(_))));
        assert_eq!(Rates::default().policy_stride(), 4);
        assert_eq!(Rates::default().scan_stride(), 20);
    }
}
