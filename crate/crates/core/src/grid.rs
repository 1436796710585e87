//! Common view over regular 2.5D height grids.
//!
//! Cell `(i, j)` is centred on `origin + (i·res, j·res)`; `i` runs along world x
//! (columns) and `j` along world y (rows). Storage is row-major.

/// Read access shared by ground-truth heightfields and elevation maps.
pub trait HeightGrid {
    /// `(width, height)` in cells.
    fn dims(&self) -> (usize, usize);
    fn resolution(&self) -> f64;
    fn origin(&self) -> [f64; 2];
    /// `None` for cells without a height.
    fn height_at(&self, i: usize, j: usize) -> Option<f64>;

    fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let o = self.origin();
        let r = self.resolution();
        [o[0] + i as f64 * r, o[1] + j as f64 * r]
    }

    /// Cell whose footprint contains `(x, y)`.
    fn cell_containing(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let o = self.origin();
        let r = self.resolution();
        let fi = ((x - o[0]) / r).round();
        let fj = ((y - o[1]) / r).round();
        let (w, h) = self.dims();
        if fi < 0.0 || fj < 0.0 || fi >= w as f64 || fj >= h as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    /// Largest absolute height difference between a valid cell and its valid
    /// 4-neighbours.
    fn neighbour_step(&self, i: usize, j: usize) -> Option<f64> {
        let h0 = self.height_at(i, j)?;
        let (w, h) = self.dims();
        let mut best: f64 = 0.0;
        let mut visit = |ni: usize, nj: usize| {
            if let Some(hn) = self.height_at(ni, nj) {
                best = best.max((hn - h0).abs());
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < w {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < h {
            visit(i, j + 1);
        }
        Some(best)
    }
}
