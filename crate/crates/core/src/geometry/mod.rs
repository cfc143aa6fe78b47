//! Polygon arithmetic on the normalized canvas `[0,1]²`.
//!
//! Canvas coordinates have `x` growing to the right and `y` growing upward
//! from the bottom edge. Raster rows are stored top to bottom, so row 0 is the
//! band just below `y = 1`.

mod cut;
mod raster;
mod transform;

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub use cut::{
    sample_cut, sample_cut_with_retries, split_polygon, CutAxis, CutLine, CutMode, CUT_T_MAX, CUT_T_MIN,
    DEFAULT_CUT_RETRIES,
};
pub use raster::{mask_overlap, pixel_center, pixel_containing, raster_pixels, rasterize, RasterMask};
pub use transform::{bin_rotation, place, rotate_about, transform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("rejected cut: {0}")]
    RejectedCut(String),
    #[error("no valid cut found after {0} attempts")]
    SamplerExhausted(usize),
    #[error("mask dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("malformed polygon text: {0}")]
    Parse(String),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn lerp(self, o: Self, t: T) -> Self {
        Self::new(self.x + t * (o.x - self.x), self.y + t * (o.y - self.y))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Real> Add for Point<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Point<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Point<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl<T: Real> Neg for Point<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Twice the signed area of an arbitrary vertex loop (positive when CCW).
fn twice_signed_area<T: Real>(pts: &[Point<T>]) -> T {
    let n = pts.len();
    let mut acc = T::zero();
    for i in 0..n {
        acc += pts[i].cross(pts[(i + 1) % n]);
    }
    acc
}

/// Shoelace area of a raw vertex loop. Fails if the loop is degenerate.
pub fn shoelace_area<T: Real>(pts: &[Point<T>]) -> Result<T> {
    if pts.len() < 3 {
        return Err(GeometryError::InvalidGeometry(format!(
            "{} vertices, need at least 3",
            pts.len()
        )));
    }
    let area = twice_signed_area(pts).abs() / T::lit(2.0);
    if area <= degenerate_area_floor(pts) {
        return Err(GeometryError::InvalidGeometry("zero-area (collinear) vertex loop".into()));
    }
    Ok(area)
}

fn degenerate_area_floor<T: Real>(pts: &[Point<T>]) -> T {
    let (mut lo, mut hi) = (pts[0], pts[0]);
    for p in pts {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    T::epsilon() * T::lit(64.0) * extent * extent
}

fn orient<T: Real>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    (b - a).cross(c - a)
}

fn on_segment<T: Real>(a: Point<T>, b: Point<T>, p: Point<T>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
pub(crate) fn segments_intersect<T: Real>(p1: Point<T>, p2: Point<T>, q1: Point<T>, q2: Point<T>) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    (d1 == z && on_segment(q1, q2, p1))
        || (d2 == z && on_segment(q1, q2, p2))
        || (d3 == z && on_segment(p1, p2, q1))
        || (d4 == z && on_segment(p1, p2, q2))
}

/// Simple, counter-clockwise polygon with at least three finite vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon<T> {
    vertices: Vec<Point<T>>,
}

impl<T: Real> Polygon<T> {
    /// Validates the loop and normalizes it to counter-clockwise order.
    pub fn new(mut vertices: Vec<Point<T>>) -> Result<Self> {
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::InvalidGeometry("non-finite vertex".into()));
        }
        shoelace_area(&vertices)?;
        if twice_signed_area(&vertices) < T::zero() {
            vertices.reverse();
        }
        check_simple(&vertices)?;
        Ok(Self { vertices })
    }

    pub fn from_coords(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Point::new(T::lit(x), T::lit(y))).collect())
    }

    /// Builds a polygon whose vertices are already known to satisfy the
    /// invariants (rigid motions of a valid polygon).
    pub(crate) fn from_trusted(vertices: Vec<Point<T>>) -> Self {
        debug_assert!(vertices.len() >= 3);
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edge `i` runs from vertex `i` to vertex `i + 1 (mod n)`.
    pub fn edge(&self, i: usize) -> (Point<T>, Point<T>) {
        let n = self.vertices.len();
        (self.vertices[i % n], self.vertices[(i + 1) % n])
    }

    pub fn area(&self) -> T {
        twice_signed_area(&self.vertices) / T::lit(2.0)
    }

    pub fn perimeter(&self) -> T {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                (b - a).norm()
            })
            .sum()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point<T> {
        let n = self.len();
        // Shift by the first vertex to keep the products small.
        let o = self.vertices[0];
        let (mut cx, mut cy, mut a2) = (T::zero(), T::zero(), T::zero());
        for i in 0..n {
            let p = self.vertices[i] - o;
            let q = self.vertices[(i + 1) % n] - o;
            let c = p.cross(q);
            a2 += c;
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        let six_a = a2 * T::lit(3.0);
        Point::new(cx / six_a, cy / six_a) + o
    }

    pub fn translate(&self, d: Point<T>) -> Self {
        Self::from_trusted(self.vertices.iter().map(|&p| p + d).collect())
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point<T>, Point<T>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for p in &self.vertices {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }

    /// True when every edge is exactly horizontal or vertical and the polygon
    /// is its own bounding box.
    pub fn is_axis_aligned_rectangle(&self) -> bool {
        let (lo, hi) = self.bounds();
        let edges_ok = (0..self.len()).all(|i| {
            let (a, b) = self.edge(i);
            a.x == b.x || a.y == b.y
        });
        let box_area = (hi.x - lo.x) * (hi.y - lo.y);
        edges_ok && (self.area() - box_area).abs() <= T::epsilon() * T::lit(16.0)
    }

    /// Even-odd containment with the half-open rule used by the rasterizer.
    pub fn contains(&self, p: Point<T>) -> bool {
        let mut inside = false;
        for i in 0..self.len() {
            let (a, b) = self.edge(i);
            if let Some(x) = raster::edge_crossing_x(a, b, p.y) {
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Whitespace separated `x,y` pairs with 9 significant digits.
    pub fn to_text(&self) -> String {
        let parts: Vec<String> = self
            .vertices
            .iter()
            .map(|p| format!("{},{}", fmt_sig9(p.x.to_f64_lossy()), fmt_sig9(p.y.to_f64_lossy())))
            .collect();
        parts.join(" ")
    }

    pub fn parse_text(line: &str) -> Result<Self> {
        let mut pts = Vec::new();
        for tok in line.split_whitespace() {
            let (xs, ys) = tok
                .split_once(',')
                .ok_or_else(|| GeometryError::Parse(format!("expected x,y got {tok:?}")))?;
            let x: f64 = xs.parse().map_err(|_| GeometryError::Parse(format!("bad number {xs:?}")))?;
            let y: f64 = ys.parse().map_err(|_| GeometryError::Parse(format!("bad number {ys:?}")))?;
            pts.push(Point::new(T::lit(x), T::lit(y)));
        }
        Self::new(pts)
    }
}

impl<T: Real> fmt::Display for Polygon<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn check_simple<T: Real>(v: &[Point<T>]) -> Result<()> {
    let n = v.len();
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        if a == b {
            return Err(GeometryError::InvalidGeometry(format!("repeated vertex at {i}")));
        }
        // Adjacent edges may only share their common vertex.
        let c = v[(i + 2) % n];
        if orient(a, b, c) == T::zero() && (b - a).dot(c - b) < T::zero() {
            return Err(GeometryError::InvalidGeometry(format!("edge fold-back at vertex {}", (i + 1) % n)));
        }
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, v[j], v[(j + 1) % n]) {
                return Err(GeometryError::InvalidGeometry(format!("edges {i} and {j} intersect")));
            }
        }
    }
    Ok(())
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros stripped.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { format!("{v}") };
    }
    let sci = format!("{:.8e}", v);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        strip_zeros(&s)
    } else {
        format!("{}e{}{:02}", strip_zeros(mant), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn strip_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(c: &[(f64, f64)]) -> Polygon<f64> {
        Polygon::from_coords(c).unwrap()
    }

    #[test]
    fn unit_square_and_triangle_areas() {
        assert_eq!(poly(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).area(), 1.0);
        assert_eq!(poly(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).area(), 0.5);
    }

    #[test]
    fn hexagon_area_matches_closed_form() {
        let r = 0.5;
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|k| {
                let a = std::f64::consts::PI / 3.0 * k as f64;
                (0.5 + r * a.cos(), 0.5 + r * a.sin())
            })
            .collect();
        let expected = 1.5 * 3f64.sqrt() * r * r;
        assert!((poly(&pts).area() - expected).abs() < 1e-9);
        assert!((expected - 0.6495).abs() < 1e-4);
    }

    #[test]
    fn collinear_loop_is_invalid() {
        let err = shoelace_area(&[Point::new(0.0, 0.0), Point::new(0.5, 0.5), Point::new(1.0, 1.0)]);
        assert!(matches!(err, Err(GeometryError::InvalidGeometry(_))));
        assert!(Polygon::<f64>::from_coords(&[(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn clockwise_input_is_normalized() {
        let p = poly(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]);
        assert!(p.area() > 0.0);
    }

    #[test]
    fn bowtie_rejected() {
        assert!(Polygon::<f64>::from_coords(&[(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Polygon::<f64>::from_coords(&[(0.0, 0.0), (f64::NAN, 0.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn centroid_of_rectangle() {
        let c = poly(&[(0.2, 0.1), (0.6, 0.1), (0.6, 0.3), (0.2, 0.3)]).centroid();
        assert!((c.x - 0.4).abs() < 1e-15 && (c.y - 0.2).abs() < 1e-15);
    }

    #[test]
    fn generic_over_f32() {
        let p = Polygon::<f32>::from_coords(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert_eq!(p.area(), 0.5f32);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.5), "0.5");
        assert_eq!(fmt_sig9(0.123456789123), "0.123456789");
        assert_eq!(fmt_sig9(-0.05), "-0.05");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-07");
    }

    #[test]
    fn text_round_trip_within_nine_digits() {
        let p = poly(&[(0.123456789123, 0.05), (0.95, 0.0512345678), (0.5, 0.9)]);
        let q = Polygon::<f64>::parse_text(&p.to_text()).unwrap();
        for (a, b) in p.vertices().iter().zip(q.vertices()) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
        assert!(Polygon::<f64>::parse_text("0,0 1;0").is_err());
    }
}
