//! Pixel-center rasterization with a half-open boundary rule.
//!
//! A pixel is set iff its center lies inside the polygon, where points on a
//! left or bottom edge count as inside and points on a right or top edge do
//! not. Abutting polygons that share an edge therefore never both claim a
//! pixel whose center sits on that edge.

use serde::{Deserialize, Serialize};

use super::{GeometryError, Point, Polygon, Result};
use crate::scalar::Real;

/// Row-major `height × width` grid of occupancy values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterMask {
    width: usize,
    height: usize,
    cells: Vec<f64>,
}

impl RasterMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, cells: vec![0.0; width * height] }
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(GeometryError::DimensionMismatch { a: (width, height), b: (cells.len(), 1) });
        }
        Ok(Self { width, height, cells })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn into_cells(self) -> Vec<f64> {
        self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.cells[row * self.width + col] = v;
    }

    /// Number of nonzero cells.
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.cells.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Sets the given flat indices to 1.
    pub fn fill(&mut self, pixels: &[usize]) {
        for &i in pixels {
            self.cells[i] = 1.0;
        }
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(GeometryError::DimensionMismatch { a: self.dims(), b: other.dims() });
        }
        Ok(())
    }

    /// Cellwise maximum.
    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(a, b)| a.max(*b)).collect();
        Ok(Self { width: self.width, height: self.height, cells })
    }

    /// Cellwise `max(self - other, 0)`.
    pub fn subtract(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(a, b)| (a - b).max(0.0)).collect();
        Ok(Self { width: self.width, height: self.height, cells })
    }

    /// Flat index of the largest cell; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.cells.iter().enumerate() {
            if v > self.cells[best] {
                best = i;
            }
        }
        best
    }
}

/// Canvas coordinates of the center of pixel `(row, col)`. Indices outside the
/// canvas map to points outside `[0,1]²`.
pub fn pixel_center<T: Real>(row: i64, col: i64, width: usize, height: usize) -> Point<T> {
    let half = T::lit(0.5);
    let x = (T::lit(col as f64) + half) / T::from_usize_lossy(width);
    let y = T::one() - (T::lit(row as f64) + half) / T::from_usize_lossy(height);
    Point::new(x, y)
}

/// `(row, col)` of the pixel containing `p` (unclamped).
pub fn pixel_containing<T: Real>(p: Point<T>, width: usize, height: usize) -> (i64, i64) {
    let col = (p.x * T::from_usize_lossy(width)).floor().to_f64_lossy() as i64;
    let row = ((T::one() - p.y) * T::from_usize_lossy(height)).floor().to_f64_lossy() as i64;
    (row, col)
}

/// `x` where edge `a→b` crosses the scanline `y = py` under the half-open
/// rule, or `None`. Endpoints are put in a canonical order first so that an
/// edge shared by two polygons (traversed in opposite directions) yields the
/// bit-identical crossing in both.
pub(crate) fn edge_crossing_x<T: Real>(a: Point<T>, b: Point<T>, py: T) -> Option<T> {
    let (lo, hi) = if (a.y, a.x) < (b.y, b.x) { (a, b) } else { (b, a) };
    if lo.y <= py && py < hi.y {
        Some(lo.x + (py - lo.y) * (hi.x - lo.x) / (hi.y - lo.y))
    } else {
        None
    }
}

/// Appends the flat indices of every canvas pixel covered by `poly`, in row
/// major order. Pixels outside the canvas are clipped.
pub fn raster_pixels<T: Real>(poly: &Polygon<T>, width: usize, height: usize, out: &mut Vec<usize>) {
    if width == 0 || height == 0 {
        return;
    }
    let (lo, hi) = poly.bounds();
    let hf = height as f64;
    // Rows whose center could fall in [lo.y, hi.y); exact tests follow.
    let r_first = (((1.0 - hi.y.to_f64_lossy()) * hf - 0.5).floor() as i64 - 1).max(0);
    let r_last = (((1.0 - lo.y.to_f64_lossy()) * hf - 0.5).ceil() as i64 + 1).min(height as i64 - 1);
    let mut xs: Vec<T> = Vec::with_capacity(poly.len());
    for row in r_first..=r_last {
        let py = pixel_center::<T>(row, 0, width, height).y;
        xs.clear();
        for i in 0..poly.len() {
            let (a, b) = poly.edge(i);
            if let Some(x) = edge_crossing_x(a, b, py) {
                xs.push(x);
            }
        }
        if xs.len() < 2 {
            continue;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
        for span in xs.chunks_exact(2) {
            let (c0, c1) = column_span(span[0], span[1], width);
            let base = row as usize * width;
            out.extend((c0..c1).map(|c| base + c as usize));
        }
    }
}

/// Columns `c` with `x0 <= center_x(c) < x1`, clipped to the canvas.
fn column_span<T: Real>(x0: T, x1: T, width: usize) -> (i64, i64) {
    let center = |c: i64| pixel_center::<T>(0, c, width, 1).x;
    let wf = width as f64;
    let mut c0 = (x0.to_f64_lossy() * wf - 0.5).ceil() as i64;
    while center(c0 - 1) >= x0 {
        c0 -= 1;
    }
    while center(c0) < x0 {
        c0 += 1;
    }
    let mut c1 = (x1.to_f64_lossy() * wf - 0.5).ceil() as i64;
    while center(c1 - 1) >= x1 {
        c1 -= 1;
    }
    while center(c1) < x1 {
        c1 += 1;
    }
    let w = width as i64;
    let c0 = c0.clamp(0, w);
    let c1 = c1.clamp(0, w);
    (c0, c1.max(c0))
}

pub fn rasterize<T: Real>(poly: &Polygon<T>, width: usize, height: usize) -> RasterMask {
    let mut mask = RasterMask::zeros(width, height);
    let mut px = Vec::new();
    raster_pixels(poly, width, height, &mut px);
    mask.fill(&px);
    mask
}

/// `(|a ∩ b|, |a ∪ b|)` counted over nonzero cells.
pub fn mask_overlap(a: &RasterMask, b: &RasterMask) -> Result<(usize, usize)> {
    a.check_dims(b)?;
    let mut inter = 0;
    let mut union = 0;
    for (&x, &y) in a.cells.iter().zip(&b.cells) {
        let (x, y) = (x != 0.0, y != 0.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok((inter, union))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon<f64> {
        Polygon::from_coords(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)]).unwrap()
    }

    #[test]
    fn full_canvas_square() {
        assert_eq!(rasterize(&rect(0.0, 0.0, 1.0, 1.0), 32, 32).count(), 1024);
    }

    #[test]
    fn left_half_rectangle() {
        assert_eq!(rasterize(&rect(0.0, 0.0, 0.5, 1.0), 32, 32).count(), 512);
    }

    #[test]
    fn boundary_through_pixel_centers_is_half_open() {
        // x = 0.5 + 0.5/32 passes through the centers of column 16.
        let x = 16.5 / 32.0;
        let left = rasterize(&rect(0.0, 0.0, x, 1.0), 32, 32);
        let right = rasterize(&rect(x, 0.0, 1.0, 1.0), 32, 32);
        let (inter, union) = mask_overlap(&left, &right).unwrap();
        assert_eq!(inter, 0);
        assert_eq!(union, 1024);
        // Column 16 belongs to the polygon whose left edge passes through it.
        assert_eq!(left.get(0, 16), 0.0);
        assert_eq!(right.get(0, 16), 1.0);
    }

    #[test]
    fn bottom_edge_inside_top_edge_outside() {
        // y = 1 - 16.5/32 is the center line of row 16.
        let y = 1.0 - 16.5 / 32.0;
        let below = rasterize(&rect(0.0, 0.0, 1.0, y), 32, 32);
        let above = rasterize(&rect(0.0, y, 1.0, 1.0), 32, 32);
        assert_eq!(above.get(16, 0), 1.0);
        assert_eq!(below.get(16, 0), 0.0);
        assert_eq!(mask_overlap(&below, &above).unwrap(), (0, 1024));
    }

    #[test]
    fn shared_diagonal_edge_partitions_pixels() {
        let a = Polygon::<f64>::from_coords(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        let b = Polygon::<f64>::from_coords(&[(1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap();
        for res in [7, 32, 33, 128] {
            let (inter, union) = mask_overlap(&rasterize(&a, res, res), &rasterize(&b, res, res)).unwrap();
            assert_eq!(inter, 0);
            assert_eq!(union, res * res);
        }
    }

    #[test]
    fn raster_matches_point_containment() {
        let p = Polygon::<f64>::from_coords(&[(0.1, 0.05), (0.9, 0.2), (0.7, 0.95), (0.3, 0.6), (0.05, 0.7)])
            .unwrap();
        let m = rasterize(&p, 29, 31);
        for r in 0..31 {
            for c in 0..29 {
                let inside = p.contains(pixel_center(r as i64, c as i64, 29, 31));
                assert_eq!(m.get(r, c) == 1.0, inside, "pixel ({r},{c})");
            }
        }
    }

    #[test]
    fn clipping_outside_canvas() {
        assert_eq!(rasterize(&rect(1.2, 1.2, 1.5, 1.5), 16, 16).count(), 0);
        assert_eq!(rasterize(&rect(-0.5, -0.5, 0.5, 0.5), 16, 16).count(), 64);
    }

    #[test]
    fn overlap_cases() {
        let a = rasterize(&rect(0.0, 0.0, 0.5, 0.5), 16, 16);
        let b = rasterize(&rect(0.5, 0.5, 1.0, 1.0), 16, 16);
        let big = rasterize(&rect(0.0, 0.0, 1.0, 0.5), 16, 16);
        assert_eq!(mask_overlap(&a, &a).unwrap(), (a.count(), a.count()));
        assert_eq!(mask_overlap(&a, &b).unwrap(), (0, a.count() + b.count()));
        assert_eq!(mask_overlap(&a, &big).unwrap(), (a.count(), big.count()));
        let other = RasterMask::zeros(8, 8);
        assert!(matches!(mask_overlap(&a, &other), Err(GeometryError::DimensionMismatch { .. })));
    }

    #[test]
    fn pixel_center_round_trip() {
        for (r, c) in [(0, 0), (5, 17), (31, 31)] {
            assert_eq!(pixel_containing(pixel_center::<f64>(r, c, 32, 32), 32, 32), (r, c));
        }
    }
}
