//! Reward terms, terrain-guided velocity direction and plane fitting.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::grid::HeightGrid;
use crate::terrain::TerrainType;

pub const JOINTS: usize = 12;
pub const LEGS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardInput {
    /// Body velocity in the world frame.
    pub v_world: Vec3,
    pub v_body_xy: [f64; 2],
    pub v_z: f64,
    /// Body angular rate; `x` is roll rate, `z` is yaw rate.
    pub omega: Vec3,
    /// Unit gravity direction in the body frame.
    pub gravity_body: Vec3,
    /// Heading relative to the tile's traverse axis (+x).
    pub yaw: f64,
    pub joint_acc: [f64; JOINTS],
    pub body_height: f64,
    pub desired_height: f64,
    pub action: [f64; JOINTS],
    pub prev_action: [f64; JOINTS],
    pub prev_action2: [f64; JOINTS],
    pub hip_angles: [f64; LEGS],
    pub hip_angles_des: [f64; LEGS],
    pub foot_positions: [Vec3; LEGS],
    pub foot_contact_forces: [Vec3; LEGS],
    /// `(v_cmd_x, v_cmd_y, ω_cmd_yaw)`.
    pub command: [f64; 3],
    pub terrain_type: TerrainType,
}

impl RewardInput {
    /// Standing still at the desired height with gravity straight down.
    pub fn at_rest(terrain_type: TerrainType, height: f64) -> Self {
        Self {
            v_world: Vec3::zeros(),
            v_body_xy: [0.0; 2],
            v_z: 0.0,
            omega: Vec3::zeros(),
            gravity_body: Vec3::new(0.0, 0.0, -1.0),
            yaw: 0.0,
            joint_acc: [0.0; JOINTS],
            body_height: height,
            desired_height: height,
            action: [0.0; JOINTS],
            prev_action: [0.0; JOINTS],
            prev_action2: [0.0; JOINTS],
            hip_angles: [0.0; LEGS],
            hip_angles_des: [0.0; LEGS],
            foot_positions: [Vec3::zeros(); LEGS],
            foot_contact_forces: [Vec3::zeros(); LEGS],
            command: [0.0; 3],
            terrain_type,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [self.v_z, self.yaw, self.body_height, self.desired_height];
        let finite = self.v_world.iter().all(|v| v.is_finite())
            && self.omega.iter().all(|v| v.is_finite())
            && self.gravity_body.iter().all(|v| v.is_finite())
            && self.v_body_xy.iter().all(|v| v.is_finite())
            && scalars.iter().all(|v| v.is_finite())
            && self.joint_acc.iter().all(|v| v.is_finite())
            && self.action.iter().all(|v| v.is_finite())
            && self.prev_action.iter().all(|v| v.is_finite())
            && self.prev_action2.iter().all(|v| v.is_finite())
            && self.hip_angles.iter().all(|v| v.is_finite())
            && self.hip_angles_des.iter().all(|v| v.is_finite())
            && self.command.iter().all(|v| v.is_finite())
            && self.foot_positions.iter().flatten().all(|v| v.is_finite())
            && self.foot_contact_forces.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("reward input"));
        }
        if (self.gravity_body.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "gravity direction has norm {}",
                self.gravity_body.norm()
            )));
        }
        Ok(())
    }
}

/// Central difference of joint velocities sampled `dt` apart around the frame.
pub fn joint_acceleration(prev: &[f64; JOINTS], next: &[f64; JOINTS], dt: f64) -> [f64; JOINTS] {
    std::array::from_fn(|k| (next[k] - prev[k]) / (2.0 * dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub normal: Vec3,
    pub centroid: Vec3,
    pub rms_residual: f64,
}

/// Least-squares plane through `points`, normal pointing up.
pub fn fit_plane(points: &[Vec3], min_count: usize) -> Result<PlaneFit> {
    let required = min_count.max(3);
    if points.len() < required {
        return Err(Error::TooFewPoints {
            got: points.len(),
            required,
        });
    }
    if !points.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("plane points"));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (small, mid, large) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    // collinear or coincident points leave the plane undetermined
    if large <= 1e-18 || mid <= 1e-12 * large {
        return Err(Error::DegeneratePointSet);
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if normal.z.abs() < 1e-12 {
        return Err(Error::DegeneratePointSet);
    }
    if normal.z < 0.0 {
        normal = -normal;
    }
    Ok(PlaneFit {
        normal,
        centroid,
        rms_residual: small.max(0.0).sqrt(),
    })
}

/// Direction through the terrain: the body x axis pitched by
/// `−arcsin(n̂_t.x)`, i.e. `(√(1−s²), 0, s)` with `s = n̂_t.x`.
pub fn guided_direction(fit: &PlaneFit) -> Result<Vec3> {
    let s = fit.normal.x;
    if !s.is_finite() || s.abs() > 1.0 {
        return Err(Error::InvalidArgument(format!("normal x-component {s} outside [-1, 1]")));
    }
    let pitch = -s.asin();
    let r = Mat3::new(
        pitch.cos(), 0.0, pitch.sin(),
        0.0, 1.0, 0.0,
        -pitch.sin(), 0.0, pitch.cos(),
    );
    Ok(r * Vec3::x())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTerm {
    TerrainLinearTracking,
    LinearTracking,
    AngularTracking,
    VerticalVelocity,
    RollRate,
    Roll,
    Yaw,
    JointAcc,
    BodyHeight,
    ActionRate,
    Smoothness,
    HipAngle,
    FeetEdge,
    FeetStumble,
}

impl RewardTerm {
    pub const ALL: [RewardTerm; 14] = [
        RewardTerm::TerrainLinearTracking,
        RewardTerm::LinearTracking,
        RewardTerm::AngularTracking,
        RewardTerm::VerticalVelocity,
        RewardTerm::RollRate,
        RewardTerm::Roll,
        RewardTerm::Yaw,
        RewardTerm::JointAcc,
        RewardTerm::BodyHeight,
        RewardTerm::ActionRate,
        RewardTerm::Smoothness,
        RewardTerm::HipAngle,
        RewardTerm::FeetEdge,
        RewardTerm::FeetStumble,
    ];

    pub fn applies_to(self, tau: TerrainType) -> bool {
        use TerrainType::*;
        match self {
            RewardTerm::TerrainLinearTracking | RewardTerm::Yaw => tau == HighPlatform,
            RewardTerm::LinearTracking | RewardTerm::VerticalVelocity => tau != HighPlatform,
            RewardTerm::FeetEdge | RewardTerm::FeetStumble => matches!(tau, Gap | HighPlatform),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub terrain_linear_tracking: f64,
    pub linear_tracking: f64,
    pub angular_tracking: f64,
    pub vertical_velocity: f64,
    pub roll_rate: f64,
    pub roll: f64,
    pub yaw: f64,
    pub joint_acc: f64,
    pub body_height: f64,
    pub action_rate: f64,
    pub smoothness: f64,
    pub hip_angle: f64,
    pub feet_edge_gap: f64,
    pub feet_edge_platform: f64,
    pub feet_stumble_gap: f64,
    pub feet_stumble_platform: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            terrain_linear_tracking: 3.0,
            linear_tracking: 3.0,
            angular_tracking: 0.5,
            vertical_velocity: -2.0,
            roll_rate: -0.05,
            roll: -10.0,
            yaw: -1.0,
            joint_acc: -2.5e-7,
            body_height: -10.0,
            action_rate: -0.04,
            smoothness: -0.03,
            hip_angle: -1.0,
            feet_edge_gap: -10.0,
            feet_edge_platform: -1.0,
            feet_stumble_gap: -10.0,
            feet_stumble_platform: -1.0,
        }
    }
}

impl RewardWeights {
    pub fn weight(&self, term: RewardTerm, tau: TerrainType) -> f64 {
        let platform = tau == TerrainType::HighPlatform;
        match term {
            RewardTerm::TerrainLinearTracking => self.terrain_linear_tracking,
            RewardTerm::LinearTracking => self.linear_tracking,
            RewardTerm::AngularTracking => self.angular_tracking,
            RewardTerm::VerticalVelocity => self.vertical_velocity,
            RewardTerm::RollRate => self.roll_rate,
            RewardTerm::Roll => self.roll,
            RewardTerm::Yaw => self.yaw,
            RewardTerm::JointAcc => self.joint_acc,
            RewardTerm::BodyHeight => self.body_height,
            RewardTerm::ActionRate => self.action_rate,
            RewardTerm::Smoothness => self.smoothness,
            RewardTerm::HipAngle => self.hip_angle,
            RewardTerm::FeetEdge if platform => self.feet_edge_platform,
            RewardTerm::FeetEdge => self.feet_edge_gap,
            RewardTerm::FeetStumble if platform => self.feet_stumble_platform,
            RewardTerm::FeetStumble => self.feet_stumble_gap,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            terrain_linear_tracking: self.terrain_linear_tracking * c,
            linear_tracking: self.linear_tracking * c,
            angular_tracking: self.angular_tracking * c,
            vertical_velocity: self.vertical_velocity * c,
            roll_rate: self.roll_rate * c,
            roll: self.roll * c,
            yaw: self.yaw * c,
            joint_acc: self.joint_acc * c,
            body_height: self.body_height * c,
            action_rate: self.action_rate * c,
            smoothness: self.smoothness * c,
            hip_angle: self.hip_angle * c,
            feet_edge_gap: self.feet_edge_gap * c,
            feet_edge_platform: self.feet_edge_platform * c,
            feet_stumble_gap: self.feet_stumble_gap * c,
            feet_stumble_platform: self.feet_stumble_platform * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    /// Distance from a foot to an edge cell that still counts (m).
    pub edge_margin: f64,
    /// Height step to a neighbour that makes a cell an edge (m).
    pub edge_step_threshold: f64,
    /// Force magnitude above which a foot is in contact (N).
    pub contact_force_threshold: f64,
    /// A foot stumbles when horizontal force exceeds this multiple of vertical force.
    pub stumble_factor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            edge_margin: 0.05,
            edge_step_threshold: 0.5,
            contact_force_threshold: 1.0,
            stumble_factor: 2.0,
        }
    }
}

impl RewardConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reward config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermValue {
    pub term: RewardTerm,
    pub raw: f64,
    pub weight: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub terms: Vec<TermValue>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn get(&self, term: RewardTerm) -> &TermValue {
        self.terms.iter().find(|t| t.term == term).expect("every term present")
    }

    pub fn raw(&self, term: RewardTerm) -> f64 {
        self.get(term).raw
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("breakdown serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EdgeContacts {
    pub flags: [bool; LEGS],
    pub count: usize,
}

fn in_contact(force: &Vec3, threshold: f64) -> bool {
    force.norm() > threshold
}

/// Feet in contact within `edge_margin` of an edge cell of `grid`.
pub fn feet_edge_penalty<G: HeightGrid + ?Sized>(
    foot_positions: &[Vec3; LEGS],
    contact_forces: &[Vec3; LEGS],
    grid: &G,
    cfg: &RewardConfig,
) -> EdgeContacts {
    let mut out = EdgeContacts::default();
    let res = grid.resolution();
    let o = grid.origin();
    let (w, h) = grid.dims();
    let half = 0.5 * res;
    let reach = cfg.edge_margin + half;
    for (k, (p, f)) in foot_positions.iter().zip(contact_forces).enumerate() {
        if !in_contact(f, cfg.contact_force_threshold) || !p.iter().all(|v| v.is_finite()) {
            continue;
        }
        let lo_i = ((p.x - reach - o[0]) / res).floor().max(0.0) as usize;
        let hi_i = ((p.x + reach - o[0]) / res).ceil().min(w as f64 - 1.0);
        let lo_j = ((p.y - reach - o[1]) / res).floor().max(0.0) as usize;
        let hi_j = ((p.y + reach - o[1]) / res).ceil().min(h as f64 - 1.0);
        if hi_i < 0.0 || hi_j < 0.0 {
            continue;
        }
        'cells: for j in lo_j..=hi_j as usize {
            for i in lo_i..=hi_i as usize {
                let [cx, cy] = grid.cell_center(i, j);
                // distance from the foot to the cell footprint
                let dx = ((p.x - cx).abs() - half).max(0.0);
                let dy = ((p.y - cy).abs() - half).max(0.0);
                if dx.hypot(dy) > cfg.edge_margin {
                    continue;
                }
                if grid.neighbour_step(i, j).is_some_and(|s| s > cfg.edge_step_threshold) {
                    out.flags[k] = true;
                    out.count += 1;
                    break 'cells;
                }
            }
        }
    }
    out
}

/// Feet whose horizontal contact force exceeds `stumble_factor` × |vertical|.
pub fn feet_stumble_penalty(contact_forces: &[Vec3; LEGS], stumble_factor: f64) -> usize {
    contact_forces
        .iter()
        .filter(|f| f.x.hypot(f.y) > stumble_factor * f.z.abs())
        .count()
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Raw value of one term. Feet edge reads 0 without a height grid.
pub fn raw_term(
    term: RewardTerm,
    input: &RewardInput,
    fit: &PlaneFit,
    cfg: &RewardConfig,
    terrain: Option<&dyn HeightGrid>,
) -> Result<f64> {
    let [cmd_x, cmd_y, cmd_yaw] = input.command;
    Ok(match term {
        RewardTerm::TerrainLinearTracking => input.v_world.dot(&guided_direction(fit)?).min(cmd_x),
        RewardTerm::LinearTracking => {
            let d2 = (cmd_x - input.v_body_xy[0]).powi(2) + (cmd_y - input.v_body_xy[1]).powi(2);
            2.0 * (-4.0 * d2).exp()
        }
        RewardTerm::AngularTracking => 0.5 * (-4.0 * (cmd_yaw - input.omega.z).powi(2)).exp(),
        RewardTerm::VerticalVelocity => -input.v_z.powi(2),
        RewardTerm::RollRate => -input.omega.x.powi(2),
        RewardTerm::Roll => -(input.gravity_body.x - fit.normal.x).powi(2),
        RewardTerm::Yaw => -input.yaw.powi(2),
        RewardTerm::JointAcc => -input.joint_acc.iter().map(|a| a * a).sum::<f64>(),
        RewardTerm::BodyHeight => -(input.desired_height - input.body_height).powi(2),
        RewardTerm::ActionRate => -sq_diff(&input.action, &input.prev_action),
        RewardTerm::Smoothness => -input
            .action
            .iter()
            .zip(&input.prev_action)
            .zip(&input.prev_action2)
            .map(|((a0, a1), a2)| (a0 - 2.0 * a1 + a2).powi(2))
            .sum::<f64>(),
        RewardTerm::HipAngle => -sq_diff(&input.hip_angles_des, &input.hip_angles),
        RewardTerm::FeetEdge => match terrain {
            Some(g) => feet_edge_penalty(&input.foot_positions, &input.foot_contact_forces, g, cfg).count as f64,
            None => 0.0,
        },
        RewardTerm::FeetStumble => feet_stumble_penalty(&input.foot_contact_forces, cfg.stumble_factor) as f64,
    })
}

/// Every term for one frame; rows that do not apply to the terrain type are 0.
/// The total is the sum of weighted terms in [`RewardTerm::ALL`] order.
pub fn compute_rewards(
    input: &RewardInput,
    fit: &PlaneFit,
    cfg: &RewardConfig,
    terrain: Option<&dyn HeightGrid>,
) -> Result<RewardBreakdown> {
    input.validate()?;
    if !fit.normal.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("plane normal"));
    }
    let tau = input.terrain_type;
    let mut terms = Vec::with_capacity(RewardTerm::ALL.len());
    let mut total = 0.0;
    for term in RewardTerm::ALL {
        let weight = cfg.weights.weight(term, tau);
        let raw = if term.applies_to(tau) {
            raw_term(term, input, fit, cfg, terrain)?
        } else {
            0.0
        };
        let weighted = raw * weight;
        total += weighted;
        terms.push(TermValue {
            term,
            raw,
            weight,
            weighted,
        });
    }
    Ok(RewardBreakdown { terms, total })
}
