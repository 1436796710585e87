//! Global 2.5D elevation map, robot-centric local extraction and virtual edits.

use std::io::{Read, Write};
use std::sync::{Arc, RwLock};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Quaternion, Vec3};
use crate::grid::HeightGrid;
use crate::sensors::LidarScan;
use crate::terrain::Heightfield;

/// Largest accepted pose/scan timestamp offset.
pub const MAX_SCAN_OFFSET_NS: u64 = 100_000_000;
/// Valid cell heights are confined to ±this bound (m).
pub const HEIGHT_LIMIT: f64 = 5.0;

const EPS: f64 = 1e-9;

/// Range-dependent measurement variance of one point.
pub fn point_variance(range: f64) -> f64 {
    let sigma = 0.01 + 0.001 * range;
    sigma * sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Cell {
    pub height: f64,
    pub variance: f64,
    pub valid: bool,
    /// Set by virtual edits; scans no longer change the cell.
    pub pinned: bool,
    pub last_update_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    cells: Vec<Cell>,
}

impl ElevationGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Result<Self> {
        if width == 0 || height == 0 || !(resolution > 0.0) {
            return Err(Error::InvalidArgument("empty elevation grid".into()));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells: vec![Cell::default(); width * height],
        })
    }

    /// Square map of side `size` metres whose centre cell contains `(x, y)`.
    /// The origin is snapped to the world lattice of `resolution`.
    pub fn centered(size: f64, resolution: f64, x: f64, y: f64) -> Result<Self> {
        let n = size / resolution;
        if !(n > 0.0) || (n - n.round()).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "map size {size} is not a whole number of {resolution} m cells"
            )));
        }
        let n = n.round() as usize;
        let half = (n / 2) as f64;
        let origin = [
            ((x / resolution).round() - half) * resolution,
            ((y / resolution).round() - half) * resolution,
        ];
        Self::new(n, n, resolution, origin)
    }

    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[j * self.width + i]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    fn cell_mut(&mut self, i: usize, j: usize) -> &mut Cell {
        &mut self.cells[j * self.width + i]
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.valid).count()
    }

    /// World position of the cell centre nearest the grid centre.
    pub fn center(&self) -> [f64; 2] {
        self.cell_center(self.width / 2, self.height / 2)
    }

    /// Shifts the grid window by whole cells so `(x, y)` falls in the centre
    /// cell. Cells keep their world identity; cells leaving the window are
    /// dropped and cells entering it start invalid. Returns the shift in cells.
    pub fn recenter(&mut self, x: f64, y: f64) -> (i64, i64) {
        let target_i = ((x - self.origin[0]) / self.resolution).round() as i64;
        let target_j = ((y - self.origin[1]) / self.resolution).round() as i64;
        let di = target_i - (self.width / 2) as i64;
        let dj = target_j - (self.height / 2) as i64;
        if di == 0 && dj == 0 {
            return (0, 0);
        }
        let mut shifted = vec![Cell::default(); self.cells.len()];
        for j in 0..self.height as i64 {
            let sj = j + dj;
            if sj < 0 || sj >= self.height as i64 {
                continue;
            }
            for i in 0..self.width as i64 {
                let si = i + di;
                if si < 0 || si >= self.width as i64 {
                    continue;
                }
                shifted[(j as usize) * self.width + i as usize] =
                    self.cells[(sj as usize) * self.width + si as usize];
            }
        }
        self.cells = shifted;
        self.origin[0] += di as f64 * self.resolution;
        self.origin[1] += dj as f64 * self.resolution;
        (di, dj)
    }

    /// Fuses one scan taken at `pose` into the map by per-cell scalar Kalman
    /// updates. Returns the number of points fused.
    pub fn integrate_scan(&mut self, scan: &LidarScan, pose: &Pose) -> Result<usize> {
        let offset = scan.timestamp_ns.abs_diff(pose.timestamp_ns);
        if offset > MAX_SCAN_OFFSET_NS {
            return Err(Error::PoseScanDesync {
                offset_ms: offset as f64 * 1e-6,
            });
        }
        let mut fused = 0;
        for p in &scan.points {
            let range = p.norm();
            let w = pose.transform_point(p);
            if !w.iter().all(|c| c.is_finite()) || w.z.abs() > HEIGHT_LIMIT {
                continue;
            }
            let Some((i, j)) = self.cell_containing(w.x, w.y) else {
                continue;
            };
            let meas_var = point_variance(range);
            let cell = self.cell_mut(i, j);
            if cell.pinned {
                continue;
            }
            if cell.valid {
                let gain = cell.variance / (cell.variance + meas_var);
                cell.height += gain * (w.z - cell.height);
                cell.variance *= 1.0 - gain;
            } else {
                cell.height = w.z;
                cell.variance = meas_var;
                cell.valid = true;
            }
            cell.last_update_ns = scan.timestamp_ns;
            fused += 1;
        }
        Ok(fused)
    }

    /// Overrides every cell whose centre lies in the edit rectangle and pins
    /// it. Returns the number of cells written.
    pub fn apply_edit(&mut self, edit: &VirtualEdit) -> Result<usize> {
        edit.validate()?;
        let [x0, y0, x1, y1] = edit.region;
        let mut count = 0;
        for j in 0..self.height {
            for i in 0..self.width {
                let [cx, cy] = self.cell_center(i, j);
                if cx >= x0 - EPS && cx < x1 - EPS && cy >= y0 - EPS && cy < y1 - EPS {
                    let cell = self.cell_mut(i, j);
                    match edit.mode {
                        EditMode::Override => {
                            cell.height = edit.height;
                            cell.variance = 0.0;
                            cell.valid = true;
                            cell.pinned = true;
                        }
                    }
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::EditOutsideMap);
        }
        Ok(count)
    }

    /// RMS difference to `truth` over valid cells that `truth` covers,
    /// with the number of cells compared.
    pub fn rms_error(&self, truth: &Heightfield) -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0;
        for j in 0..self.height {
            for i in 0..self.width {
                let c = self.cell(i, j);
                if !c.valid {
                    continue;
                }
                let [x, y] = self.cell_center(i, j);
                if let Ok(h) = truth.sample_height(x, y) {
                    sum += (c.height - h).powi(2);
                    n += 1;
                }
            }
        }
        if n == 0 {
            (0.0, 0)
        } else {
            ((sum / n as f64).sqrt(), n)
        }
    }

    /// Heights with invalid cells as NaN, for "HFLD" export.
    pub fn to_heightfield(&self) -> Heightfield {
        Heightfield {
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            origin: self.origin,
            cells: self
                .cells
                .iter()
                .map(|c| if c.valid { c.height } else { f64::NAN })
                .collect(),
        }
    }

    /// Rebuilds a map from an exported heightfield and optional validity mask.
    /// Without a mask, finite cells are valid.
    pub fn from_heightfield(hf: &Heightfield, validity: Option<&ValidityMask>) -> Result<Self> {
        if let Some(m) = validity {
            if m.width != hf.width || m.height != hf.height {
                return Err(Error::ShapeMismatch(format!(
                    "validity {}x{} vs heights {}x{}",
                    m.width, m.height, hf.width, hf.height
                )));
            }
        }
        let mut grid = Self::new(hf.width, hf.height, hf.resolution, hf.origin)?;
        for j in 0..hf.height {
            for i in 0..hf.width {
                let h = hf.get(i, j);
                let valid = match validity {
                    Some(m) => m.get(i, j) && h.is_finite(),
                    None => h.is_finite(),
                };
                if valid {
                    let c = grid.cell_mut(i, j);
                    c.height = h;
                    c.valid = true;
                }
            }
        }
        Ok(grid)
    }

    pub fn validity_mask(&self) -> ValidityMask {
        ValidityMask {
            width: self.width,
            height: self.height,
            bits: self.cells.iter().map(|c| c.valid).collect(),
        }
    }
}

impl HeightGrid for ElevationGrid {
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
        if i >= self.width || j >= self.height {
            return None;
        }
        let c = self.cell(i, j);
        c.valid.then_some(c.height)
    }
}

/// Per-cell validity, stored as "HVLD": magic, u32 width, u32 height, then
/// rows of `ceil(width / 8)` bytes, least-significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl ValidityMask {
    const MAGIC: &'static [u8; 4] = b"HVLD";

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.width + i]
    }

    pub fn write_hvld<W: Write>(&self, mut w: W) -> Result<()> {
        let row_bytes = self.width.div_ceil(8);
        let mut buf = Vec::with_capacity(12 + row_bytes * self.height);
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for row in self.bits.chunks(self.width) {
            let mut packed = vec![0u8; row_bytes];
            for (i, &b) in row.iter().enumerate() {
                if b {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            buf.extend_from_slice(&packed);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_hvld<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != Self::MAGIC {
            return Err(Error::Format("bad HVLD magic".into()));
        }
        let width = u32::from_le_bytes([head[4], head[5], head[6], head[7]]) as usize;
        let height = u32::from_le_bytes([head[8], head[9], head[10], head[11]]) as usize;
        let row_bytes = width.div_ceil(8);
        let mut raw = vec![0u8; row_bytes * height];
        r.read_exact(&mut raw)?;
        let mut bits = Vec::with_capacity(width * height);
        for row in raw.chunks(row_bytes.max(1)).take(height) {
            for i in 0..width {
                bits.push(row[i / 8] & (1 << (i % 8)) != 0);
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    Override,
}

/// Axis-aligned world rectangle `[x_min, y_min, x_max, y_max]` forced to a height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualEdit {
    pub region: [f64; 4],
    pub height: f64,
    pub mode: EditMode,
}

impl VirtualEdit {
    pub fn trench(region: [f64; 4], depth: f64) -> Self {
        Self {
            region,
            height: depth,
            mode: EditMode::Override,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.region;
        if !self.region.iter().all(|v| v.is_finite()) || !self.height.is_finite() {
            return Err(Error::NonFinite("edit region"));
        }
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidArgument("edit region has zero area".into()));
        }
        if self.height.abs() > HEIGHT_LIMIT {
            return Err(Error::InvalidArgument(format!(
                "edit height {} outside ±{HEIGHT_LIMIT} m",
                self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalFrame {
    /// Follows the body heading only.
    YawAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalMapSpec {
    /// Forward extent (m).
    pub length_x: f64,
    /// Lateral extent (m).
    pub length_y: f64,
    pub resolution: f64,
    pub frame: LocalFrame,
    /// Relative height written into cells with no map data.
    pub fill_value: f64,
}

impl Default for LocalMapSpec {
    fn default() -> Self {
        Self {
            length_x: 1.6,
            length_y: 1.0,
            resolution: 0.1,
            frame: LocalFrame::YawAligned,
            fill_value: 0.0,
        }
    }
}

impl LocalMapSpec {
    /// `(rows, cols)`: samples along x and along y, both ends included.
    pub fn shape(&self) -> Result<(usize, usize)> {
        let count = |len: f64| -> Result<usize> {
            let n = len / self.resolution;
            if !(n > 0.0) || (n - n.round()).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "local map length {len} is not a whole number of {} m cells",
                    self.resolution
                )));
            }
            Ok(n.round() as usize + 1)
        };
        Ok((count(self.length_x)?, count(self.length_y)?))
    }

    /// Body-frame x-y offsets of every sample, row-major. Two thirds of the
    /// forward extent lie ahead of the body origin.
    pub fn sample_offsets(&self) -> Result<Vec<[f64; 2]>> {
        let (rows, cols) = self.shape()?;
        let x0 = -self.length_x / 3.0;
        let y0 = -0.5 * self.length_y;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push([x0 + r as f64 * self.resolution, y0 + c as f64 * self.resolution]);
            }
        }
        Ok(out)
    }
}

/// Robot-centric height samples relative to the body z (e_t).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    pub rows: usize,
    pub cols: usize,
    pub resolution: f64,
    pub cells: Vec<f64>,
    /// False where the sample had no map data and took the fill value.
    pub known: Vec<bool>,
}

impl LocalMap {
    /// Grid with every sample known.
    pub fn new(rows: usize, cols: usize, resolution: f64, cells: Vec<f64>) -> Self {
        let known = vec![true; cells.len()];
        Self {
            rows,
            cols,
            resolution,
            cells,
            known,
        }
    }

    pub fn filled(&self) -> usize {
        self.known.iter().filter(|k| !**k).count()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.cols + col]
    }

    pub fn fill_ratio(&self) -> f64 {
        self.filled() as f64 / self.cells.len().max(1) as f64
    }

    /// 16-byte header (rows u16, cols u16, resolution f32, 8 reserved bytes)
    /// followed by row-major f32 cells, little-endian.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.cells.len() * 4);
        buf.extend_from_slice(&(self.rows as u16).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u16).to_le_bytes());
        buf.extend_from_slice(&(self.resolution as f32).to_le_bytes());
        buf.extend_from_slice(&[0u8; 8]);
        for &c in &self.cells {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        buf
    }

    pub fn from_blob(buf: &[u8]) -> Result<Self> {
        if buf.len() < 16 {
            return Err(Error::Format("local map blob shorter than header".into()));
        }
        let rows = u16::from_le_bytes([buf[0], buf[1]]) as usize;
        let cols = u16::from_le_bytes([buf[2], buf[3]]) as usize;
        let resolution = f32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]) as f64;
        let body = &buf[16..];
        if body.len() != rows * cols * 4 {
            return Err(Error::Format(format!(
                "local map blob holds {} bytes, expected {}",
                body.len(),
                rows * cols * 4
            )));
        }
        let cells = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Self::new(rows, cols, resolution, cells))
    }
}

fn bilinear<G: HeightGrid + ?Sized>(map: &G, x: f64, y: f64) -> Option<f64> {
    let o = map.origin();
    let r = map.resolution();
    let (w, h) = map.dims();
    let fx = (x - o[0]) / r;
    let fy = (y - o[1]) / r;
    if fx < 0.0 || fy < 0.0 || fx > (w - 1) as f64 || fy > (h - 1) as f64 {
        return None;
    }
    let i0 = (fx.floor() as usize).min(w.saturating_sub(2));
    let j0 = (fy.floor() as usize).min(h.saturating_sub(2));
    let tx = fx - i0 as f64;
    let ty = fy - j0 as f64;
    let (i1, j1) = ((i0 + 1).min(w - 1), (j0 + 1).min(h - 1));
    let h00 = map.height_at(i0, j0)?;
    let h10 = map.height_at(i1, j0)?;
    let h01 = map.height_at(i0, j1)?;
    let h11 = map.height_at(i1, j1)?;
    Some(h00 * (1.0 - tx) * (1.0 - ty) + h10 * tx * (1.0 - ty) + h01 * (1.0 - tx) * ty + h11 * tx * ty)
}

/// World x-y of every local sample for a body pose.
pub fn sample_positions(pose: &Pose, spec: &LocalMapSpec) -> Result<Vec<[f64; 2]>> {
    let heading = Quaternion::from_yaw(pose.orientation.yaw());
    Ok(spec
        .sample_offsets()?
        .into_iter()
        .map(|[dx, dy]| {
            let w = heading.rotate(&Vec3::new(dx, dy, 0.0));
            [pose.position.x + w.x, pose.position.y + w.y]
        })
        .collect())
}

/// Samples a yaw-aligned window around `pose`. Heights are relative to the
/// body z; samples without map data take `spec.fill_value`.
pub fn extract_local<G: HeightGrid + ?Sized>(map: &G, pose: &Pose, spec: &LocalMapSpec) -> Result<LocalMap> {
    let (rows, cols) = spec.shape()?;
    let mut cells = Vec::with_capacity(rows * cols);
    let mut known = Vec::with_capacity(rows * cols);
    for [x, y] in sample_positions(pose, spec)? {
        let h = bilinear(map, x, y).or_else(|| {
            let (i, j) = map.cell_containing(x, y)?;
            map.height_at(i, j)
        });
        match h {
            Some(h) => cells.push(h - pose.position.z),
            None => cells.push(spec.fill_value),
        }
        known.push(h.is_some());
    }
    Ok(LocalMap {
        rows,
        cols,
        resolution: spec.resolution,
        cells,
        known,
    })
}

/// Perturbs exactly `⌊ratio · cells⌋` distinct cells by uniform draws from
/// `magnitude_range`.
pub fn inject_map_noise(local: &LocalMap, ratio: f64, magnitude_range: [f64; 2], seed: u64) -> Result<LocalMap> {
    if !(0.0..=0.1).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("noise ratio {ratio} outside [0, 0.1]")));
    }
    let [lo, hi] = magnitude_range;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument("bad noise magnitude range".into()));
    }
    let mut out = local.clone();
    let n = out.cells.len();
    let count = ((ratio * n as f64) + 1e-9).floor() as usize;
    if count == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for idx in rand::seq::index::sample(&mut rng, n, count) {
        out.cells[idx] += dist.sample(&mut rng);
    }
    Ok(out)
}

/// Single-writer, many-reader map. Readers get immutable snapshots, so an
/// extraction never observes a half-integrated scan.
#[derive(Debug)]
pub struct SharedMap {
    inner: RwLock<Arc<ElevationGrid>>,
}

impl SharedMap {
    pub fn new(grid: ElevationGrid) -> Self {
        Self {
            inner: RwLock::new(Arc::new(grid)),
        }
    }

    pub fn snapshot(&self) -> Arc<ElevationGrid> {
        Arc::clone(&self.inner.read().expect("map lock poisoned"))
    }

    /// Applies `f` to the map. Snapshots taken earlier are unaffected.
    pub fn update<R>(&self, f: impl FnOnce(&mut ElevationGrid) -> R) -> R {
        let mut guard = self.inner.write().expect("map lock poisoned");
        f(Arc::make_mut(&mut guard))
    }
}
