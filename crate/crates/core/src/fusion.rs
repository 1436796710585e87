//! Error-state Kalman filter fusing low-rate pose odometry with high-rate IMU.
//!
//! The nominal state carries position, velocity, body-to-world orientation and
//! IMU biases. The 15-dimensional error state is ordered
//! `[δp, δv, δθ, δb_g, δb_a]`, with orientation error defined on the right:
//! `q_true = q ⊗ Exp(δθ)`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{skew, Mat3, Pose, Quaternion, Vec3};
use crate::sensors::{Delivered, ImuSample, TrajectorySpec, GRAVITY};

pub type Covariance = SMatrix<f64, 15, 15>;
type ErrorVector = SVector<f64, 15>;
type Jacobian = SMatrix<f64, 6, 15>;

/// Longest accepted propagation step and measurement age.
pub const MAX_STEP_NS: u64 = 50_000_000;

const P: usize = 0;
const V: usize = 3;
const TH: usize = 6;
const BG: usize = 9;
const BA: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s²/√Hz
    pub gyro_bias_walk: f64,
    /// m/s³/√Hz
    pub accel_bias_walk: f64,
    /// m
    pub odom_position_std: f64,
    /// rad
    pub odom_orientation_std: f64,
    pub initial_position_std: f64,
    pub initial_velocity_std: f64,
    pub initial_orientation_std: f64,
    pub initial_gyro_bias_std: f64,
    pub initial_accel_bias_std: f64,
    /// World-frame velocity assumed when the filter is seeded.
    pub initial_velocity: [f64; 3],
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            gyro_noise_density: 1e-3,
            accel_noise_density: 1e-2,
            gyro_bias_walk: 1e-5,
            accel_bias_walk: 1e-4,
            odom_position_std: 0.01,
            odom_orientation_std: 0.5f64.to_radians(),
            initial_position_std: 0.01,
            initial_velocity_std: 0.05,
            initial_orientation_std: 1f64.to_radians(),
            initial_gyro_bias_std: 1e-3,
            initial_accel_bias_std: 1e-2,
            initial_velocity: [0.0; 3],
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_walk,
            self.accel_bias_walk,
            self.odom_position_std,
            self.odom_orientation_std,
            self.initial_position_std,
            self.initial_velocity_std,
            self.initial_orientation_std,
            self.initial_gyro_bias_std,
            self.initial_accel_bias_std,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(
                "fusion noise parameters must be finite and > 0".into(),
            ));
        }
        if !self.initial_velocity.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("initial velocity"));
        }
        Ok(())
    }

    fn initial_covariance(&self) -> Covariance {
        let mut p = Covariance::zeros();
        let blocks = [
            (P, self.initial_position_std),
            (V, self.initial_velocity_std),
            (TH, self.initial_orientation_std),
            (BG, self.initial_gyro_bias_std),
            (BA, self.initial_accel_bias_std),
        ];
        for (at, std) in blocks {
            for k in 0..3 {
                p[(at + k, at + k)] = std * std;
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub orientation: Quaternion,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    pub covariance: Covariance,
    pub timestamp_ns: u64,
    /// IMU reading valid at `timestamp_ns`, used for trapezoidal propagation.
    pub last_imu: Option<ImuSample>,
}

impl FusionState {
    /// Seeds the filter from a pose measurement.
    pub fn from_pose(pose: &Pose, cfg: &FusionConfig) -> Result<Self> {
        cfg.validate()?;
        let v = cfg.initial_velocity;
        Ok(Self {
            position: pose.position,
            velocity: Vec3::new(v[0], v[1], v[2]),
            orientation: pose.orientation.normalize()?,
            gyro_bias: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
            covariance: cfg.initial_covariance(),
            timestamp_ns: pose.timestamp_ns,
            last_imu: None,
        })
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.orientation, self.timestamp_ns)
    }

    pub fn position_trace(&self) -> f64 {
        (0..3).map(|k| self.covariance[(P + k, P + k)]).sum()
    }
}

/// Symmetry defect and smallest eigenvalue of a covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceHealth {
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
}

impl CovarianceHealth {
    pub fn of(p: &Covariance) -> Self {
        let max_asymmetry = (p - p.transpose()).abs().max();
        let sym = (p + p.transpose()) * 0.5;
        let min_eigenvalue = sym.symmetric_eigenvalues().min();
        Self {
            max_asymmetry,
            min_eigenvalue,
        }
    }

    pub fn is_healthy(&self) -> bool {
        self.max_asymmetry <= 1e-9 && self.min_eigenvalue >= -1e-9
    }
}

fn symmetrize(p: &Covariance) -> Covariance {
    (p + p.transpose()) * 0.5
}

fn gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -GRAVITY)
}

fn set_block(m: &mut Covariance, r: usize, c: usize, b: &Mat3) {
    m.fixed_view_mut::<3, 3>(r, c).copy_from(b);
}

/// Strapdown propagation to `imu.timestamp_ns`.
pub fn predict(state: &FusionState, imu: &ImuSample, cfg: &FusionConfig) -> Result<FusionState> {
    if imu.timestamp_ns <= state.timestamp_ns {
        return Err(Error::TimeRegression {
            current_ns: state.timestamp_ns,
            new_ns: imu.timestamp_ns,
        });
    }
    let step_ns = imu.timestamp_ns - state.timestamp_ns;
    if step_ns > MAX_STEP_NS {
        return Err(Error::StepTooLarge {
            dt_ms: step_ns as f64 * 1e-6,
        });
    }
    if !imu.angular_velocity.iter().chain(imu.linear_acceleration.iter()).all(|c| c.is_finite()) {
        return Err(Error::NonFinite("IMU sample"));
    }
    let dt = step_ns as f64 * 1e-9;
    let prev = state.last_imu.unwrap_or(*imu);

    let w0 = prev.angular_velocity - state.gyro_bias;
    let w1 = imu.angular_velocity - state.gyro_bias;
    let w_mean = (w0 + w1) * 0.5;
    let f0 = prev.linear_acceleration - state.accel_bias;
    let f1 = imu.linear_acceleration - state.accel_bias;

    let q0 = state.orientation;
    let q1 = (q0 * Quaternion::from_rotation_vector(&(w_mean * dt))).normalize()?;
    let a0 = q0.rotate(&f0) + gravity();
    let a1 = q1.rotate(&f1) + gravity();
    let a_mean = (a0 + a1) * 0.5;

    let position = state.position + state.velocity * dt + a_mean * (0.5 * dt * dt);
    let velocity = state.velocity + a_mean * dt;

    // linearized error dynamics
    let r_mid = (q0 * Quaternion::from_rotation_vector(&(w_mean * (0.5 * dt)))).to_rotation_matrix();
    let f_mean = (f0 + f1) * 0.5;
    let mut f = Covariance::identity();
    set_block(&mut f, P, V, &(Mat3::identity() * dt));
    set_block(&mut f, V, TH, &(-r_mid * skew(&f_mean) * dt));
    set_block(&mut f, V, BA, &(-r_mid * dt));
    set_block(
        &mut f,
        TH,
        TH,
        &Quaternion::from_rotation_vector(&(-w_mean * dt)).to_rotation_matrix(),
    );
    set_block(&mut f, TH, BG, &(-Mat3::identity() * dt));

    let mut q = Covariance::zeros();
    let densities = [
        (V, cfg.accel_noise_density),
        (TH, cfg.gyro_noise_density),
        (BG, cfg.gyro_bias_walk),
        (BA, cfg.accel_bias_walk),
    ];
    for (at, density) in densities {
        for k in 0..3 {
            q[(at + k, at + k)] = density * density * dt;
        }
    }
    let covariance = symmetrize(&(f * state.covariance * f.transpose() + q));

    Ok(FusionState {
        position,
        velocity,
        orientation: q1,
        gyro_bias: state.gyro_bias,
        accel_bias: state.accel_bias,
        covariance,
        timestamp_ns: imu.timestamp_ns,
        last_imu: Some(*imu),
    })
}

/// EKF correction with a full pose measurement.
pub fn update_pose(state: &FusionState, odom: &Pose, cfg: &FusionConfig) -> Result<FusionState> {
    if odom.timestamp_ns + MAX_STEP_NS < state.timestamp_ns {
        return Err(Error::StaleMeasurement {
            age_ms: (state.timestamp_ns - odom.timestamp_ns) as f64 * 1e-6,
        });
    }
    if odom.timestamp_ns > state.timestamp_ns + MAX_STEP_NS {
        return Err(Error::MeasurementAhead {
            ahead_ms: (odom.timestamp_ns - state.timestamp_ns) as f64 * 1e-6,
        });
    }
    if !odom.position.iter().all(|c| c.is_finite()) || !odom.orientation.is_finite() {
        return Err(Error::NonFinite("pose measurement"));
    }
    let measured_q = odom.orientation.normalize()?;
    let r_pos = odom.position - state.position;
    let r_rot = (state.orientation.conjugate() * measured_q).to_rotation_vector();
    let mut residual = SVector::<f64, 6>::zeros();
    residual.fixed_rows_mut::<3>(0).copy_from(&r_pos);
    residual.fixed_rows_mut::<3>(3).copy_from(&r_rot);

    let mut h = Jacobian::zeros();
    for k in 0..3 {
        h[(k, P + k)] = 1.0;
        h[(3 + k, TH + k)] = 1.0;
    }
    let mut r = SMatrix::<f64, 6, 6>::zeros();
    for k in 0..3 {
        r[(k, k)] = cfg.odom_position_std.powi(2);
        r[(3 + k, 3 + k)] = cfg.odom_orientation_std.powi(2);
    }

    let pcov = &state.covariance;
    let s = h * pcov * h.transpose() + r;
    let s_inv = s
        .cholesky()
        .ok_or(Error::SingularInnovation)?
        .inverse();
    let k = pcov * h.transpose() * s_inv;
    let dx: ErrorVector = k * residual;

    let i_kh = Covariance::identity() - k * h;
    let covariance = symmetrize(&(i_kh * pcov * i_kh.transpose() + k * r * k.transpose()));

    let d = |at: usize| Vec3::new(dx[at], dx[at + 1], dx[at + 2]);
    let orientation = (state.orientation * Quaternion::from_rotation_vector(&d(TH))).normalize()?;

    Ok(FusionState {
        position: state.position + d(P),
        velocity: state.velocity + d(V),
        orientation,
        gyro_bias: state.gyro_bias + d(BG),
        accel_bias: state.accel_bias + d(BA),
        covariance,
        timestamp_ns: state.timestamp_ns,
        last_imu: state.last_imu,
    })
}

/// Why a measurement was not applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// Older than the last applied measurement.
    OutOfOrder,
    /// Older than the state by more than the allowed age.
    Stale,
}

/// Sequential filter driver: feed time-ordered IMU samples and pose
/// measurements, read a pose per IMU sample.
#[derive(Debug, Clone)]
pub struct Fusion {
    cfg: FusionConfig,
    state: Option<FusionState>,
    last_odom_ns: Option<u64>,
}

impl Fusion {
    pub fn new(cfg: FusionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: None,
            last_odom_ns: None,
        })
    }

    pub fn state(&self) -> Option<&FusionState> {
        self.state.as_ref()
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    /// Propagates to the IMU timestamp and returns the fused pose, or `None`
    /// before the first pose measurement has seeded the filter.
    pub fn process_imu(&mut self, imu: &ImuSample) -> Result<Option<Pose>> {
        let Some(state) = self.state.as_mut() else {
            return Ok(None);
        };
        if imu.timestamp_ns == state.timestamp_ns {
            state.last_imu = Some(*imu);
        } else {
            *state = predict(state, imu, &self.cfg)?;
        }
        Ok(Some(state.pose()))
    }

    /// Applies a pose measurement. Out-of-order or stale measurements are
    /// rejected without touching the state.
    pub fn process_odometry(&mut self, odom: &Pose) -> Result<std::result::Result<(), Rejection>> {
        if let Some(last) = self.last_odom_ns {
            if odom.timestamp_ns <= last {
                return Ok(Err(Rejection::OutOfOrder));
            }
        }
        match self.state.as_mut() {
            None => {
                self.state = Some(FusionState::from_pose(odom, &self.cfg)?);
            }
            Some(state) => match update_pose(state, odom, &self.cfg) {
                Ok(next) => *state = next,
                Err(Error::StaleMeasurement { .. }) => return Ok(Err(Rejection::Stale)),
                Err(e) => return Err(e),
            },
        }
        self.last_odom_ns = Some(odom.timestamp_ns);
        Ok(Ok(()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionOutput {
    /// One pose per IMU sample at or after initialization.
    pub poses: Vec<Pose>,
    pub rejected: usize,
    /// IMU samples delivered before the first pose measurement.
    pub skipped_before_init: usize,
}

/// Runs the filter over undelayed streams.
pub fn run_fusion(imu: &[ImuSample], odom: &[Pose], cfg: &FusionConfig) -> Result<FusionOutput> {
    let imu: Vec<_> = imu
        .iter()
        .map(|s| Delivered {
            item: *s,
            delivery_ns: s.timestamp_ns,
        })
        .collect();
    let odom: Vec<_> = odom
        .iter()
        .map(|p| Delivered {
            item: *p,
            delivery_ns: p.timestamp_ns,
        })
        .collect();
    run_fusion_delivered(&imu, &odom, cfg)
}

/// Steps a filter through delivered IMU samples, applying pose measurements
/// as they arrive. At equal delivery times an IMU sample is propagated before
/// pending measurements are applied, and its pose is emitted after them.
#[derive(Debug, Clone)]
pub struct FusionReplay<'a> {
    fusion: Fusion,
    odom: &'a [Delivered<Pose>],
    next_odom: usize,
    pub rejected: usize,
    pub skipped_before_init: usize,
}

impl<'a> FusionReplay<'a> {
    pub fn new(odom: &'a [Delivered<Pose>], cfg: &FusionConfig) -> Result<Self> {
        Ok(Self {
            fusion: Fusion::new(*cfg)?,
            odom,
            next_odom: 0,
            rejected: 0,
            skipped_before_init: 0,
        })
    }

    pub fn fusion(&self) -> &Fusion {
        &self.fusion
    }

    /// Pose at the sample's timestamp, or `None` before initialization.
    pub fn step(&mut self, sample: &Delivered<ImuSample>) -> Result<Option<Pose>> {
        let fusion = &mut self.fusion;
        let mut pose = fusion.process_imu(&sample.item)?;
        while self.next_odom < self.odom.len() && self.odom[self.next_odom].delivery_ns <= sample.delivery_ns {
            let initializing = fusion.state().is_none();
            if fusion.process_odometry(&self.odom[self.next_odom].item)?.is_err() {
                self.rejected += 1;
            }
            if initializing && fusion.state().is_some() {
                let seeded = fusion.state().map(|s| s.timestamp_ns).unwrap_or_default();
                if seeded < sample.item.timestamp_ns {
                    fusion.process_imu(&sample.item)?;
                }
            }
            self.next_odom += 1;
            pose = fusion.state().map(|s| s.pose());
        }
        match pose {
            Some(mut p) => {
                p.timestamp_ns = sample.item.timestamp_ns;
                Ok(Some(p))
            }
            None => {
                self.skipped_before_init += 1;
                Ok(None)
            }
        }
    }
}

/// Runs the filter in delivery order.
pub fn run_fusion_delivered(
    imu: &[Delivered<ImuSample>],
    odom: &[Delivered<Pose>],
    cfg: &FusionConfig,
) -> Result<FusionOutput> {
    let mut replay = FusionReplay::new(odom, cfg)?;
    let mut poses = Vec::with_capacity(imu.len());
    for sample in imu {
        if let Some(p) = replay.step(sample)? {
            poses.push(p);
        }
    }
    Ok(FusionOutput {
        poses,
        rejected: replay.rejected,
        skipped_before_init: replay.skipped_before_init,
    })
}

/// Latest measurement at or before each query time (`None` before the first).
pub fn zero_order_hold(odom: &[Pose], times_ns: &[u64]) -> Vec<Option<Pose>> {
    let mut k = 0;
    let mut held = None;
    times_ns
        .iter()
        .map(|&t| {
            while k < odom.len() && odom[k].timestamp_ns <= t {
                held = Some(odom[k]);
                k += 1;
            }
            held
        })
        .collect()
}

/// Largest position error of a zero-order hold of `odom` against `traj`,
/// checked at every query time and at the left limit of every measurement
/// arrival, where the previous measurement is still held.
pub fn zero_order_hold_max_error(odom: &[Pose], traj: &TrajectorySpec, times_ns: &[u64]) -> Result<f64> {
    let truth = |ns: u64| -> Result<Vec3> {
        Ok(traj
            .true_state((ns as f64 * 1e-9).min(traj.duration))?
            .pose
            .position)
    };
    let mut worst: f64 = 0.0;
    for (t, held) in times_ns.iter().zip(zero_order_hold(odom, times_ns)) {
        if let Some(h) = held {
            worst = worst.max((truth(*t)? - h.position).norm());
        }
    }
    for w in odom.windows(2) {
        worst = worst.max((truth(w[1].timestamp_ns)? - w[0].position).norm());
    }
    Ok(worst)
}

/// Largest position error of a pose sequence against `traj`.
pub fn max_position_error(poses: &[Pose], traj: &TrajectorySpec) -> Result<f64> {
    poses.iter().try_fold(0.0f64, |acc, p| {
        let t = (p.timestamp_ns as f64 * 1e-9).min(traj.duration);
        Ok(acc.max((traj.true_state(t)?.pose.position - p.position).norm()))
    })
}
