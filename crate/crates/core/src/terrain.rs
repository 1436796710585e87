//! Curriculum terrain generation.
//!
//! Each terrain type has one governing dimension that scales linearly with the
//! curriculum level. Tiles are square, centred on the world origin, and laid
//! out so a straight +x traverse crosses the feature.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::HeightGrid;

pub const MAX_LEVEL: u8 = 9;

/// Depth written into gap cells.
pub const GAP_DEPTH: f64 = -1.0;
pub const STAIR_RUN: f64 = 0.30;
pub const MAX_STAIR_STEPS: usize = 6;
pub const STONE_SIZE: f64 = 0.5;
pub const STONE_PITCH: f64 = 1.0;
pub const STONE_JITTER: f64 = 0.15;
/// Flat run-up kept in front of stairs and around gaps.
pub const APPROACH_LENGTH: f64 = 1.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Robot {
    Lite3,
    X30,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerrainType {
    /// τ1
    #[serde(rename = "tau1")]
    Slope,
    /// τ2
    #[serde(rename = "tau2")]
    DiscreteStones,
    /// τ3
    #[serde(rename = "tau3")]
    Stairs,
    /// τ4
    #[serde(rename = "tau4")]
    Gap,
    /// τ5
    #[serde(rename = "tau5")]
    HighPlatform,
}

impl TerrainType {
    pub const ALL: [TerrainType; 5] = [
        TerrainType::Slope,
        TerrainType::DiscreteStones,
        TerrainType::Stairs,
        TerrainType::Gap,
        TerrainType::HighPlatform,
    ];

    /// 1-based τ index.
    pub fn index(self) -> u8 {
        match self {
            TerrainType::Slope => 1,
            TerrainType::DiscreteStones => 2,
            TerrainType::Stairs => 3,
            TerrainType::Gap => 4,
            TerrainType::HighPlatform => 5,
        }
    }

    pub fn parameter_name(self) -> &'static str {
        match self {
            TerrainType::Slope => "slope_height_difference",
            TerrainType::DiscreteStones => "stone_height",
            TerrainType::Stairs => "stair_height",
            TerrainType::Gap => "gap_width",
            TerrainType::HighPlatform => "platform_height",
        }
    }
}

impl fmt::Display for TerrainType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tau{}", self.index())
    }
}

impl FromStr for TerrainType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tau1" | "slope" => Ok(TerrainType::Slope),
            "tau2" | "stones" | "discrete_stones" => Ok(TerrainType::DiscreteStones),
            "tau3" | "stairs" => Ok(TerrainType::Stairs),
            "tau4" | "gap" => Ok(TerrainType::Gap),
            "tau5" | "platform" | "high_platform" => Ok(TerrainType::HighPlatform),
            other => Err(Error::InvalidArgument(format!("unknown terrain '{other}'"))),
        }
    }
}

impl fmt::Display for Robot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Robot::Lite3 => f.write_str("lite3"),
            Robot::X30 => f.write_str("x30"),
        }
    }
}

impl FromStr for Robot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lite3" => Ok(Robot::Lite3),
            "x30" => Ok(Robot::X30),
            other => Err(Error::InvalidArgument(format!("unknown robot '{other}'"))),
        }
    }
}

/// Governing parameter (m) for a robot, terrain type and curriculum level.
pub fn terrain_parameter(robot: Robot, terrain: TerrainType, level: u8) -> Result<f64> {
    if level > MAX_LEVEL {
        return Err(Error::LevelOutOfRange(level));
    }
    let l = level as f64;
    let value = match (robot, terrain) {
        (_, TerrainType::Slope) => 0.05 * l,
        (Robot::Lite3, TerrainType::DiscreteStones) => 0.05 + 0.025 * l,
        (Robot::Lite3, TerrainType::Stairs) => 0.05 + 0.013 * l,
        (Robot::Lite3, TerrainType::Gap) => 0.2 + 0.035 * l,
        (Robot::Lite3, TerrainType::HighPlatform) => 0.1 + 0.05 * l,
        (Robot::X30, TerrainType::DiscreteStones) => 0.05 + 0.035 * l,
        (Robot::X30, TerrainType::Stairs) => 0.05 + 0.018 * l,
        (Robot::X30, TerrainType::Gap) => 0.2 + 0.06 * l,
        (Robot::X30, TerrainType::HighPlatform) => 0.1 + 0.07 * l,
    };
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainSpec {
    pub terrain_type: TerrainType,
    pub level: u8,
    pub robot: Robot,
    /// Side of the square tile (m).
    pub tile_size: f64,
    /// m/cell.
    pub resolution: f64,
    pub seed: u64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self::new(Robot::Lite3, TerrainType::Slope, 0)
    }
}

impl TerrainSpec {
    pub fn new(robot: Robot, terrain_type: TerrainType, level: u8) -> Self {
        Self {
            terrain_type,
            level,
            robot,
            tile_size: 8.0,
            resolution: 0.05,
            seed: 0,
        }
    }

    /// Cells per tile side.
    pub fn cells_per_side(&self) -> Result<usize> {
        if self.level > MAX_LEVEL {
            return Err(Error::LevelOutOfRange(self.level));
        }
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        if !(self.tile_size > 0.0) || !self.tile_size.is_finite() {
            return Err(Error::InvalidArgument("tile size must be positive".into()));
        }
        let n = self.tile_size / self.resolution;
        if (n - n.round()).abs() > 1e-6 || n.round() < 2.0 {
            return Err(Error::InvalidArgument(format!(
                "tile size {} is not a whole number of {} m cells",
                self.tile_size, self.resolution
            )));
        }
        Ok(n.round() as usize)
    }

    pub fn parameter(&self) -> Result<f64> {
        terrain_parameter(self.robot, self.terrain_type, self.level)
    }
}

/// Ground-truth terrain surface sampled on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    pub cells: Vec<f64>,
}

impl Heightfield {
    pub fn flat(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Self {
        Self {
            width,
            height,
            resolution,
            origin,
            cells: vec![0.0; width * height],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, h: f64) {
        self.cells[j * self.width + i] = h;
    }

    pub fn min_height(&self) -> f64 {
        self.cells.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_height(&self) -> f64 {
        self.cells.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// World extent `[x_min, x_max, y_min, y_max]` covered by cell centres.
    pub fn bounds(&self) -> [f64; 4] {
        [
            self.origin[0],
            self.origin[0] + (self.width - 1) as f64 * self.resolution,
            self.origin[1],
            self.origin[1] + (self.height - 1) as f64 * self.resolution,
        ]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let b = self.bounds();
        x >= b[0] - EPS && x <= b[1] + EPS && y >= b[2] - EPS && y <= b[3] + EPS
    }

    /// Bilinear interpolation between the four surrounding cell centres.
    pub fn sample_height(&self, x: f64, y: f64) -> Result<f64> {
        if !x.is_finite() || !y.is_finite() || !self.contains(x, y) {
            return Err(Error::OutsideHeightfield { x, y });
        }
        let fx = ((x - self.origin[0]) / self.resolution).max(0.0);
        let fy = ((y - self.origin[1]) / self.resolution).max(0.0);
        let i0 = (fx.floor() as usize).min(self.width.saturating_sub(2));
        let j0 = (fy.floor() as usize).min(self.height.saturating_sub(2));
        let tx = (fx - i0 as f64).clamp(0.0, 1.0);
        let ty = (fy - j0 as f64).clamp(0.0, 1.0);
        let i1 = (i0 + 1).min(self.width - 1);
        let j1 = (j0 + 1).min(self.height - 1);
        let h00 = self.get(i0, j0);
        let h10 = self.get(i1, j0);
        let h01 = self.get(i0, j1);
        let h11 = self.get(i1, j1);
        Ok(h00 * (1.0 - tx) * (1.0 - ty) + h10 * tx * (1.0 - ty) + h01 * (1.0 - tx) * ty + h11 * tx * ty)
    }

    const MAGIC: &'static [u8; 4] = b"HFLD";
    const VERSION: u16 = 1;

    /// Little-endian "HFLD" v1 encoding with f32 cells.
    pub fn write_hfld<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&self.resolution.to_le_bytes())?;
        w.write_all(&self.origin[0].to_le_bytes())?;
        w.write_all(&self.origin[1].to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.cells.len() * 4);
        for &c in &self.cells {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_hfld<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("bad HFLD magic".into()));
        }
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != Self::VERSION {
            return Err(Error::Format(format!("unsupported HFLD version {version}")));
        }
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let resolution = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let ox = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let oy = f64::from_le_bytes(b8);
        if width == 0 || height == 0 || !(resolution > 0.0) {
            return Err(Error::Format("bad HFLD header".into()));
        }
        let mut raw = vec![0u8; width * height * 4];
        r.read_exact(&mut raw)?;
        let cells = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Self {
            width,
            height,
            resolution,
            origin: [ox, oy],
            cells,
        })
    }

    /// One line per grid row (y index), comma-separated heights.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.cells.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|h| format!("{h:.4}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

impl HeightGrid for Heightfield {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn origin(&self) -> [f64; 2] {
        self.origin
    }

    fn height_at(&self, i: usize, j: usize) -> Option<f64> {
        (i < self.width && j < self.height).then(|| self.get(i, j))
    }
}

/// Builds the ground-truth heightfield for `spec`.
pub fn generate(spec: &TerrainSpec) -> Result<Heightfield> {
    let n = spec.cells_per_side()?;
    let param = spec.parameter()?;
    let res = spec.resolution;
    let half = 0.5 * spec.tile_size;
    let mut hf = Heightfield::flat(n, n, res, [-half, -half]);
    let x_of = |i: usize| -half + i as f64 * res;

    match spec.terrain_type {
        TerrainType::Slope => {
            for i in 0..n {
                let h = param * (1.0 - x_of(i).abs() / half).max(0.0);
                for j in 0..n {
                    hf.set(i, j, h);
                }
            }
        }
        TerrainType::DiscreteStones => {
            if spec.tile_size < STONE_PITCH + STONE_SIZE {
                return Err(Error::FeatureExceedsTile(format!(
                    "stone lattice needs {} m, tile is {} m",
                    STONE_PITCH + STONE_SIZE,
                    spec.tile_size
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let count = ((spec.tile_size - STONE_SIZE) / STONE_PITCH).floor() as usize;
            let first = -half + 0.5 * STONE_PITCH;
            let hs = 0.5 * STONE_SIZE;
            for a in 0..count {
                for b in 0..count {
                    let cx = first + a as f64 * STONE_PITCH + rng.random_range(-STONE_JITTER..STONE_JITTER);
                    let cy = first + b as f64 * STONE_PITCH + rng.random_range(-STONE_JITTER..STONE_JITTER);
                    for j in 0..n {
                        let y = x_of(j);
                        if y < cy - hs - EPS || y >= cy + hs - EPS {
                            continue;
                        }
                        for i in 0..n {
                            let x = x_of(i);
                            if x >= cx - hs - EPS && x < cx + hs - EPS {
                                hf.set(i, j, param);
                            }
                        }
                    }
                }
            }
        }
        TerrainType::Stairs => {
            let steps = (((half - APPROACH_LENGTH) / STAIR_RUN + EPS).floor().max(0.0) as usize)
                .min(MAX_STAIR_STEPS);
            if steps == 0 {
                return Err(Error::FeatureExceedsTile(format!(
                    "a {STAIR_RUN} m stair run after a {APPROACH_LENGTH} m approach does not fit in {} m",
                    spec.tile_size
                )));
            }
            let start = -half + APPROACH_LENGTH;
            // ascending towards the tile centre, mirrored on the far side
            let level_at = |x: f64| -> usize {
                let u = (-x.abs() - start) / STAIR_RUN + EPS;
                if u < 0.0 {
                    0
                } else {
                    (u.floor() as usize + 1).min(steps)
                }
            };
            for i in 0..n {
                let h = param * level_at(x_of(i)) as f64;
                for j in 0..n {
                    hf.set(i, j, h);
                }
            }
        }
        TerrainType::Gap => {
            if param + 2.0 * 0.5 * APPROACH_LENGTH > spec.tile_size {
                return Err(Error::FeatureExceedsTile(format!(
                    "gap of {param:.3} m with landings does not fit in {} m",
                    spec.tile_size
                )));
            }
            let hw = 0.5 * param;
            for i in 0..n {
                let x = x_of(i);
                if x >= -hw - EPS && x < hw - EPS {
                    for j in 0..n {
                        hf.set(i, j, GAP_DEPTH);
                    }
                }
            }
        }
        TerrainType::HighPlatform => {
            if spec.tile_size < 2.0 * APPROACH_LENGTH {
                return Err(Error::FeatureExceedsTile(format!(
                    "platform needs a {APPROACH_LENGTH} m approach on a {} m tile",
                    spec.tile_size
                )));
            }
            for i in 0..n {
                if x_of(i) >= -EPS {
                    for j in 0..n {
                        hf.set(i, j, param);
                    }
                }
            }
        }
    }
    Ok(hf)
}
