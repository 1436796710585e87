//! Synthetic IMU, odometry and LiDAR streams generated from analytic
//! trajectories over a [`Heightfield`].

use std::io::{Read, Write};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ns_to_secs, Pose, Quaternion, Vec3};
use crate::terrain::Heightfield;

pub const GRAVITY: f64 = 9.81;

/// Anything carrying a measurement timestamp.
pub trait Timestamped {
    fn timestamp_ns(&self) -> u64;
}

impl Timestamped for Pose {
    fn timestamp_ns(&self) -> u64 {
        self.timestamp_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Static,
    /// Straight line along world +x.
    ConstantVelocity,
    /// Counter-clockwise circle starting along +x.
    Circle,
    /// Constant +x speed with a lateral sine weave.
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// m/s
    pub speed: f64,
    /// m (circle)
    pub radius: f64,
    /// m (sinusoid lateral amplitude)
    pub amplitude: f64,
    /// Hz (sinusoid)
    pub frequency: f64,
    /// s
    pub duration: f64,
    /// Constant body z above the z = 0 datum (m).
    pub height_above_ground: f64,
    /// World x-y at t = 0.
    pub start: [f64; 2],
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Static,
            speed: 0.0,
            radius: 1.0,
            amplitude: 0.0,
            frequency: 0.0,
            duration: 10.0,
            height_above_ground: 0.5,
            start: [0.0, 0.0],
        }
    }
}

/// Exact kinematic state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueState {
    pub pose: Pose,
    /// World-frame linear velocity.
    pub velocity: Vec3,
    /// Body-frame angular velocity.
    pub angular_velocity: Vec3,
    /// World-frame linear acceleration (gravity excluded).
    pub acceleration: Vec3,
}

impl TrajectorySpec {
    pub fn stationary(duration: f64, height: f64) -> Self {
        Self {
            duration,
            height_above_ground: height,
            ..Self::default()
        }
    }

    pub fn straight(speed: f64, duration: f64, height: f64) -> Self {
        Self {
            kind: TrajectoryKind::ConstantVelocity,
            speed,
            duration,
            height_above_ground: height,
            ..Self::default()
        }
    }

    pub fn circle(radius: f64, speed: f64, duration: f64, height: f64) -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            speed,
            radius,
            duration,
            height_above_ground: height,
            ..Self::default()
        }
    }

    pub fn sinusoid(speed: f64, amplitude: f64, frequency: f64, duration: f64, height: f64) -> Self {
        Self {
            kind: TrajectoryKind::Sinusoid,
            speed,
            amplitude,
            frequency,
            duration,
            height_above_ground: height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.speed,
            self.radius,
            self.amplitude,
            self.frequency,
            self.duration,
            self.height_above_ground,
            self.start[0],
            self.start[1],
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("trajectory parameters"));
        }
        if self.duration <= 0.0 {
            return Err(Error::InvalidArgument("trajectory duration must be positive".into()));
        }
        if !(0.0..=3.0).contains(&self.speed) {
            return Err(Error::InvalidArgument(format!(
                "speed {} m/s outside [0, 3]",
                self.speed
            )));
        }
        match self.kind {
            TrajectoryKind::Circle if self.radius <= 0.0 => {
                Err(Error::InvalidArgument("circle radius must be positive".into()))
            }
            TrajectoryKind::Sinusoid if self.speed <= 0.0 => {
                Err(Error::InvalidArgument("sinusoid needs a positive forward speed".into()))
            }
            _ => Ok(()),
        }
    }

    /// Nominal forward speed and yaw rate, as a locomotion command would state them.
    pub fn nominal_command(&self) -> (f64, f64) {
        match self.kind {
            TrajectoryKind::Static => (0.0, 0.0),
            TrajectoryKind::ConstantVelocity | TrajectoryKind::Sinusoid => (self.speed, 0.0),
            TrajectoryKind::Circle => (self.speed, self.speed / self.radius),
        }
    }

    /// Closed-form state at time `t` (s).
    pub fn true_state(&self, t: f64) -> Result<TrueState> {
        self.validate()?;
        if !(0.0..=self.duration + 1e-12).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                duration: self.duration,
            });
        }
        let [x0, y0] = self.start;
        let z = self.height_above_ground;
        let stamp = crate::geometry::secs_to_ns(t);
        let (pos, vel, acc, yaw, yaw_rate) = match self.kind {
            TrajectoryKind::Static => (Vec3::new(x0, y0, z), Vec3::zeros(), Vec3::zeros(), 0.0, 0.0),
            TrajectoryKind::ConstantVelocity => (
                Vec3::new(x0 + self.speed * t, y0, z),
                Vec3::new(self.speed, 0.0, 0.0),
                Vec3::zeros(),
                0.0,
                0.0,
            ),
            TrajectoryKind::Circle => {
                let r = self.radius;
                let w = self.speed / r;
                let (s, c) = (w * t).sin_cos();
                (
                    Vec3::new(x0 + r * s, y0 + r * (1.0 - c), z),
                    Vec3::new(self.speed * c, self.speed * s, 0.0),
                    Vec3::new(-r * w * w * s, r * w * w * c, 0.0),
                    w * t,
                    w,
                )
            }
            TrajectoryKind::Sinusoid => {
                let om = 2.0 * std::f64::consts::PI * self.frequency;
                let a = self.amplitude;
                let (s, c) = (om * t).sin_cos();
                let vy = a * om * c;
                let ay = -a * om * om * s;
                let v = self.speed;
                (
                    Vec3::new(x0 + v * t, y0 + a * s, z),
                    Vec3::new(v, vy, 0.0),
                    Vec3::new(0.0, ay, 0.0),
                    vy.atan2(v),
                    v * ay / (v * v + vy * vy),
                )
            }
        };
        Ok(TrueState {
            pose: Pose::new(pos, Quaternion::from_yaw(yaw), stamp),
            velocity: vel,
            angular_velocity: Vec3::new(0.0, 0.0, yaw_rate),
            acceleration: acc,
        })
    }
}

/// One inertial measurement in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp_ns: u64,
    /// rad/s
    pub angular_velocity: Vec3,
    /// Specific force, m/s²; reads `+g` upward at rest.
    pub linear_acceleration: Vec3,
}

impl Timestamped for ImuSample {
    fn timestamp_ns(&self) -> u64 {
        self.timestamp_ns
    }
}

/// Noise and randomization magnitudes for the simulated sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// rad/s per sample
    pub gyro_std: f64,
    /// m/s² per sample
    pub accel_std: f64,
    pub odom_pos_std: f64,
    pub odom_yaw_std: f64,
    pub lidar_range_std: f64,
    pub map_noise_ratio: f64,
    pub map_noise_magnitude_range: [f64; 2],
    /// ms
    pub system_delay_range: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::noise_free()
    }
}

impl NoiseConfig {
    pub fn noise_free() -> Self {
        Self {
            gyro_std: 0.0,
            accel_std: 0.0,
            odom_pos_std: 0.0,
            odom_yaw_std: 0.0,
            lidar_range_std: 0.0,
            map_noise_ratio: 0.0,
            map_noise_magnitude_range: [-1.0, 2.0],
            system_delay_range: [0.0, 0.0],
        }
    }

    /// Every noise source active at magnitudes typical of the deployment.
    pub fn randomized() -> Self {
        Self {
            gyro_std: 2e-3,
            accel_std: 2e-2,
            odom_pos_std: 0.01,
            odom_yaw_std: 0.5f64.to_radians(),
            lidar_range_std: 0.01,
            map_noise_ratio: 0.1,
            map_noise_magnitude_range: [-1.0, 2.0],
            system_delay_range: [0.0, 15.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.gyro_std,
            self.accel_std,
            self.odom_pos_std,
            self.odom_yaw_std,
            self.lidar_range_std,
        ];
        if stds.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument("noise std must be finite and >= 0".into()));
        }
        if !(0.0..=0.1).contains(&self.map_noise_ratio) {
            return Err(Error::InvalidArgument(format!(
                "map noise ratio {} outside [0, 0.1]",
                self.map_noise_ratio
            )));
        }
        let [lo, hi] = self.map_noise_magnitude_range;
        if !(lo <= hi) || lo < -1.0 || hi > 2.0 {
            return Err(Error::InvalidArgument("map noise magnitude must lie in [-1, 2] m".into()));
        }
        let [dlo, dhi] = self.system_delay_range;
        if !(dlo <= dhi) || dlo < 0.0 || dhi > 15.0 {
            return Err(Error::InvalidArgument("system delay must lie in [0, 15] ms".into()));
        }
        Ok(())
    }
}

fn gaussian(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std validated as finite and non-negative")
}

fn gaussian_vec(dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(dist.sample(rng), dist.sample(rng), dist.sample(rng))
}

/// Sample instants `k / rate` covering `[0, duration]`, as integer nanoseconds.
pub fn sample_times(duration: f64, rate_hz: u32) -> Vec<u64> {
    let count = (duration * rate_hz as f64 + 1e-9).floor() as u64 + 1;
    (0..count)
        .map(|k| k * 1_000_000_000 / rate_hz as u64)
        .collect()
}

pub fn imu_stream(
    traj: &TrajectorySpec,
    rate_hz: u32,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<ImuSample>> {
    if !(100..=1000).contains(&rate_hz) {
        return Err(Error::InvalidArgument(format!(
            "IMU rate {rate_hz} Hz outside [100, 1000]"
        )));
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gyro = gaussian(noise.gyro_std);
    let accel = gaussian(noise.accel_std);
    sample_times(traj.duration, rate_hz)
        .into_iter()
        .map(|ts| {
            let st = traj.true_state(ns_to_secs(ts).min(traj.duration))?;
            let specific = st.acceleration + Vec3::new(0.0, 0.0, GRAVITY);
            let f_body = st.pose.orientation.inverse_rotate(&specific);
            Ok(ImuSample {
                timestamp_ns: ts,
                angular_velocity: st.angular_velocity + gaussian_vec(&gyro, &mut rng),
                linear_acceleration: f_body + gaussian_vec(&accel, &mut rng),
            })
        })
        .collect()
}

/// Low-rate pose measurements: truth plus Gaussian position and yaw error.
pub fn odometry_stream(
    traj: &TrajectorySpec,
    rate_hz: u32,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<Pose>> {
    if rate_hz == 0 {
        return Err(Error::InvalidArgument("odometry rate must be >= 1 Hz".into()));
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = gaussian(noise.odom_pos_std);
    let yaw = gaussian(noise.odom_yaw_std);
    sample_times(traj.duration, rate_hz)
        .into_iter()
        .map(|ts| {
            let st = traj.true_state(ns_to_secs(ts).min(traj.duration))?;
            let dp = gaussian_vec(&pos, &mut rng);
            let dyaw = yaw.sample(&mut rng);
            Ok(Pose::new(
                st.pose.position + dp,
                (Quaternion::from_yaw(dyaw) * st.pose.orientation).normalize()?,
                ts,
            ))
        })
        .collect()
}

/// Ray layout of the simulated range sensor, in the sensor (body) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanPattern {
    pub azimuth_count: usize,
    pub elevation_count: usize,
    /// degrees
    pub elevation_min_deg: f64,
    /// degrees
    pub elevation_max_deg: f64,
    pub max_range: f64,
    /// Ray-march step (m).
    pub ray_step: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self {
            azimuth_count: 64,
            elevation_count: 32,
            elevation_min_deg: -90.0,
            elevation_max_deg: -10.0,
            max_range: 20.0,
            ray_step: 0.01,
        }
    }
}

impl ScanPattern {
    pub fn empty() -> Self {
        Self {
            azimuth_count: 0,
            elevation_count: 0,
            ..Self::default()
        }
    }

    /// Unit ray directions in the sensor frame.
    pub fn directions(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.azimuth_count * self.elevation_count);
        for e in 0..self.elevation_count {
            let el = if self.elevation_count == 1 {
                self.elevation_min_deg
            } else {
                self.elevation_min_deg
                    + (self.elevation_max_deg - self.elevation_min_deg) * e as f64
                        / (self.elevation_count - 1) as f64
            }
            .to_radians();
            for a in 0..self.azimuth_count {
                let az = 2.0 * std::f64::consts::PI * a as f64 / self.azimuth_count as f64;
                out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub timestamp_ns: u64,
    /// Sensor-frame points (m).
    pub points: Vec<Vec3>,
}

impl Timestamped for LidarScan {
    fn timestamp_ns(&self) -> u64 {
        self.timestamp_ns
    }
}

impl LidarScan {
    const MAGIC: &'static [u8; 4] = b"PCLD";

    pub fn write_pcld<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.points.len() * 12);
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&self.timestamp_ns.to_le_bytes());
        buf.extend_from_slice(&(self.points.len() as u32).to_le_bytes());
        for p in &self.points {
            for c in [p.x, p.y, p.z] {
                buf.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_pcld<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("bad PCLD magic".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let timestamp_ns = u64::from_le_bytes(b8);
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut raw = vec![0u8; count * 12];
        r.read_exact(&mut raw)?;
        let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        let points = raw
            .chunks_exact(12)
            .map(|c| Vec3::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12])))
            .collect();
        Ok(Self {
            timestamp_ns,
            points,
        })
    }
}

/// Ray-casts `pattern` from `pose` against `hf`. Rays leaving the field or
/// exceeding the maximum range are dropped.
pub fn lidar_scan(
    hf: &Heightfield,
    pose: &Pose,
    pattern: &ScanPattern,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<LidarScan> {
    let origin = pose.position;
    if !origin.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("sensor pose"));
    }
    let surface = hf.sample_height(origin.x, origin.y)?;
    if origin.z <= surface {
        return Err(Error::SensorUnderground {
            sensor_z: origin.z,
            surface_z: surface,
        });
    }
    if !(pattern.ray_step > 0.0) {
        return Err(Error::InvalidArgument("ray step must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range_noise = gaussian(noise.lidar_range_std);
    let top = hf.max_height();
    let mut points = Vec::new();

    for d_body in pattern.directions() {
        let d = pose.orientation.rotate(&d_body);
        if d.z >= -1e-9 {
            continue;
        }
        // nothing can be hit above the highest cell
        let mut prev = ((origin.z - top) / -d.z - pattern.ray_step).max(0.0);
        let mut s = prev;
        let hit = loop {
            if s > pattern.max_range {
                break None;
            }
            let p = origin + d * s;
            if !hf.contains(p.x, p.y) {
                break None;
            }
            if p.z <= hf.sample_height(p.x, p.y)? {
                break Some(refine_hit(hf, &origin, &d, prev, s)?);
            }
            prev = s;
            s += pattern.ray_step;
        };
        if let Some(range) = hit {
            let noisy = range + range_noise.sample(&mut rng);
            points.push(d_body * noisy);
        }
    }
    Ok(LidarScan {
        timestamp_ns: pose.timestamp_ns,
        points,
    })
}

fn refine_hit(hf: &Heightfield, origin: &Vec3, d: &Vec3, mut above: f64, mut below: f64) -> Result<f64> {
    for _ in 0..30 {
        let mid = 0.5 * (above + below);
        let p = origin + d * mid;
        if p.z <= hf.sample_height(p.x, p.y)? {
            below = mid;
        } else {
            above = mid;
        }
    }
    Ok(0.5 * (above + below))
}

/// A stream item paired with the virtual time it reaches its consumer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivered<T> {
    pub item: T,
    pub delivery_ns: u64,
}

/// Delays delivery of every item by `delay_ms`; measurement timestamps are untouched.
pub fn apply_delay<T: Timestamped + Clone>(stream: &[T], delay_ms: f64) -> Result<Vec<Delivered<T>>> {
    if !(0.0..=15.0).contains(&delay_ms) {
        return Err(Error::InvalidArgument(format!(
            "delay {delay_ms} ms outside [0, 15]"
        )));
    }
    let delay_ns = (delay_ms * 1e6).round() as u64;
    Ok(stream
        .iter()
        .map(|item| Delivered {
            delivery_ns: item.timestamp_ns() + delay_ns,
            item: item.clone(),
        })
        .collect())
}

/// Draws one delay uniformly from `range_ms` and applies it to the whole stream.
pub fn apply_random_delay<T: Timestamped + Clone>(
    stream: &[T],
    range_ms: [f64; 2],
    seed: u64,
) -> Result<(f64, Vec<Delivered<T>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delay = if range_ms[0] == range_ms[1] {
        range_ms[0]
    } else {
        Uniform::new_inclusive(range_ms[0], range_ms[1])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(&mut rng)
    };
    Ok((delay, apply_delay(stream, delay)?))
}
