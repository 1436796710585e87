//! Observation assembly, domain randomization, PD law and estimator losses.

use std::collections::VecDeque;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elevation::LocalMap;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::reward::{RewardInput, JOINTS};
use crate::terrain::{Robot, TerrainType};

/// Past frames kept besides the current one.
pub const HISTORY: usize = 5;
pub const FRAME_LEN: usize = 3 + 3 + 3 + 3 * JOINTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub omega: Vec3,
    /// Unit gravity direction in the body frame.
    pub gravity: Vec3,
    /// `(v_cmd_x, v_cmd_y, ω_cmd_z)`.
    pub command: [f64; 3],
    pub joint_angles: [f64; JOINTS],
    pub joint_velocities: [f64; JOINTS],
    pub prev_action: [f64; JOINTS],
}

impl ObservationFrame {
    pub fn zeros() -> Self {
        Self {
            omega: Vec3::zeros(),
            gravity: Vec3::zeros(),
            command: [0.0; 3],
            joint_angles: [0.0; JOINTS],
            joint_velocities: [0.0; JOINTS],
            prev_action: [0.0; JOINTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.gravity.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "gravity direction has norm {}",
                self.gravity.norm()
            )));
        }
        if !self.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FRAME_LEN);
        v.extend(self.omega.iter());
        v.extend(self.gravity.iter());
        v.extend(self.command);
        v.extend(self.joint_angles);
        v.extend(self.joint_velocities);
        v.extend(self.prev_action);
        v
    }
}

/// Current frame followed by the `HISTORY` previous ones, newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationHistory {
    frames: VecDeque<ObservationFrame>,
}

impl Default for ObservationHistory {
    fn default() -> Self {
        Self {
            frames: std::iter::repeat_n(ObservationFrame::zeros(), HISTORY + 1).collect(),
        }
    }
}

impl ObservationHistory {
    pub fn frames(&self) -> impl Iterator<Item = &ObservationFrame> {
        self.frames.iter()
    }

    pub fn frame(&self, k: usize) -> &ObservationFrame {
        &self.frames[k]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Prepends `o` and drops the oldest frame.
    pub fn push(&mut self, o: ObservationFrame) {
        self.frames.pop_back();
        self.frames.push_front(o);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.flatten()).collect()
    }
}

/// Value-network input: observation plus quantities only a simulator knows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivilegedState {
    pub observation: ObservationFrame,
    pub body_velocity: Vec3,
    pub disturbance: Vec3,
    pub elevation: Vec<f64>,
}

impl PrivilegedState {
    pub fn new(observation: ObservationFrame, body_velocity: Vec3, disturbance: Vec3, elevation: &LocalMap) -> Result<Self> {
        let s = Self {
            observation,
            body_velocity,
            disturbance,
            elevation: elevation.cells.clone(),
        };
        if !s.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("privileged state"));
        }
        Ok(s)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.observation.flatten();
        v.extend(self.body_velocity.iter());
        v.extend(self.disturbance.iter());
        v.extend(&self.elevation);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    /// Nm/rad.
    pub kp: f64,
    /// Nms/rad.
    pub kd: f64,
}

impl PdGains {
    pub fn new(kp: f64, kd: f64) -> Result<Self> {
        if !(kp > 0.0 && kd > 0.0) || !kp.is_finite() || !kd.is_finite() {
            return Err(Error::InvalidArgument(format!("PD gains must be positive, got kp={kp} kd={kd}")));
        }
        Ok(Self { kp, kd })
    }

    pub fn for_robot(robot: Robot) -> Self {
        match robot {
            Robot::Lite3 => Self { kp: 30.0, kd: 1.0 },
            Robot::X30 => Self { kp: 120.0, kd: 3.0 },
        }
    }
}

fn arity(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch(format!("{name} has {got} entries, expected {want}")));
    }
    Ok(())
}

/// Stand pose offset by the action.
pub fn joint_targets(action: &[f64], theta_stand: &[f64]) -> Result<[f64; JOINTS]> {
    arity("action", action.len(), JOINTS)?;
    arity("stand pose", theta_stand.len(), JOINTS)?;
    Ok(std::array::from_fn(|k| theta_stand[k] + action[k]))
}

pub fn pd_torque(
    theta_des: &[f64; JOINTS],
    theta: &[f64; JOINTS],
    theta_dot: &[f64; JOINTS],
    gains: &PdGains,
) -> [f64; JOINTS] {
    std::array::from_fn(|k| gains.kp * (theta_des[k] - theta[k]) - gains.kd * theta_dot[k])
}

fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    Uniform::new_inclusive(lo, hi).expect("static range is valid")
}

/// Velocity command for a terrain. Gaps and platforms drive straight ahead.
pub fn draw_command<R: Rng + ?Sized>(tau: TerrainType, rng: &mut R) -> [f64; 3] {
    match tau {
        TerrainType::Gap | TerrainType::HighPlatform => [uniform(0.3, 1.2).sample(rng), 0.0, 0.0],
        _ => [
            uniform(-1.2, 1.2).sample(rng),
            uniform(-1.2, 1.2).sample(rng),
            uniform(-2.0, 2.0).sample(rng),
        ],
    }
}

pub fn sample_command(tau: TerrainType, seed: u64) -> [f64; 3] {
    draw_command(tau, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDraw {
    /// kg.
    pub payload: f64,
    pub kp_factor: f64,
    pub kd_factor: f64,
    pub motor_strength_factor: f64,
    /// mm, per body axis.
    pub com_shift: [f64; 3],
    pub friction: f64,
    /// ms.
    pub system_delay: f64,
    pub map_noise_ratio: f64,
    /// m; per-cell perturbations are drawn from the full range.
    pub map_noise_magnitude: f64,
}

impl RandomizationDraw {
    pub const PAYLOAD: [f64; 2] = [-1.0, 2.0];
    pub const GAIN_FACTOR: [f64; 2] = [0.9, 1.1];
    pub const COM_SHIFT: [f64; 2] = [-50.0, 50.0];
    pub const FRICTION: [f64; 2] = [0.2, 1.25];
    pub const SYSTEM_DELAY: [f64; 2] = [0.0, 15.0];
    pub const MAP_NOISE_RATIO: [f64; 2] = [0.0, 0.1];
    pub const MAP_NOISE_MAGNITUDE: [f64; 2] = [-1.0, 2.0];

    pub fn in_range(&self) -> bool {
        let within = |v: f64, r: [f64; 2]| r[0] <= v && v <= r[1];
        within(self.payload, Self::PAYLOAD)
            && within(self.kp_factor, Self::GAIN_FACTOR)
            && within(self.kd_factor, Self::GAIN_FACTOR)
            && within(self.motor_strength_factor, Self::GAIN_FACTOR)
            && self.com_shift.iter().all(|&c| within(c, Self::COM_SHIFT))
            && within(self.friction, Self::FRICTION)
            && within(self.system_delay, Self::SYSTEM_DELAY)
            && within(self.map_noise_ratio, Self::MAP_NOISE_RATIO)
            && within(self.map_noise_magnitude, Self::MAP_NOISE_MAGNITUDE)
    }
}

pub fn draw_randomization<R: Rng + ?Sized>(rng: &mut R) -> RandomizationDraw {
    let u = |r: [f64; 2]| uniform(r[0], r[1]);
    let gain = u(RandomizationDraw::GAIN_FACTOR);
    let com = u(RandomizationDraw::COM_SHIFT);
    RandomizationDraw {
        payload: u(RandomizationDraw::PAYLOAD).sample(rng),
        kp_factor: gain.sample(rng),
        kd_factor: gain.sample(rng),
        motor_strength_factor: gain.sample(rng),
        com_shift: [com.sample(rng), com.sample(rng), com.sample(rng)],
        friction: u(RandomizationDraw::FRICTION).sample(rng),
        system_delay: u(RandomizationDraw::SYSTEM_DELAY).sample(rng),
        map_noise_ratio: u(RandomizationDraw::MAP_NOISE_RATIO).sample(rng),
        map_noise_magnitude: u(RandomizationDraw::MAP_NOISE_MAGNITUDE).sample(rng),
    }
}

pub fn sample_randomization(seed: u64) -> RandomizationDraw {
    draw_randomization(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Latent sizes of the proprioceptive and terrain encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentDims {
    pub proprio: usize,
    pub terrain: usize,
}

impl Default for LatentDims {
    fn default() -> Self {
        Self {
            proprio: 16,
            terrain: 32,
        }
    }
}

fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    arity("prediction", a.len(), b.len())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Body velocity estimation loss.
pub fn loss_est(v_est: &[f64], v_true: &[f64]) -> Result<f64> {
    mse(v_est, v_true)
}

/// KL divergence of a diagonal Gaussian from the standard normal.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    arity("logvar", logvar.len(), mu.len())?;
    Ok(mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum())
}

/// Reconstruction MSE plus `beta`-weighted KL.
pub fn loss_vae(o_next_recon: &[f64], o_next: &[f64], mu: &[f64], logvar: &[f64], beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta {beta} must be non-negative")));
    }
    Ok(mse(o_next_recon, o_next)? + beta * kl_divergence(mu, logvar)?)
}

pub fn loss_cenet(est_part: f64, vae_part: f64) -> Result<f64> {
    if !est_part.is_finite() || !vae_part.is_finite() {
        return Err(Error::NonFinite("loss component"));
    }
    Ok(est_part + vae_part)
}

/// MSE over every cell of every history slot.
pub fn loss_terrain(recon: &[LocalMap], truth: &[LocalMap]) -> Result<f64> {
    arity("terrain history", recon.len(), truth.len())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, t) in recon.iter().zip(truth) {
        if (r.rows, r.cols) != (t.rows, t.cols) || r.cells.len() != t.cells.len() {
            return Err(Error::ShapeMismatch(format!(
                "terrain grid {}x{} vs {}x{}",
                r.rows, r.cols, t.rows, t.cols
            )));
        }
        sum += r.cells.iter().zip(&t.cells).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += r.cells.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// One 50 Hz trajectory log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub timestamp_ns: u64,
    pub observation: ObservationFrame,
    pub reward_input: RewardInput,
}
