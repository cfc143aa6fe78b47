//! Chord cuts: the binary partition step of the fragment generator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{segments_intersect, GeometryError, Point, Polygon, Result};
use crate::scalar::Real;

/// Entry points lie within ±25% of the edge length from the edge midpoint.
pub const CUT_T_MIN: f64 = 0.25;
pub const CUT_T_MAX: f64 = 0.75;
pub const DEFAULT_CUT_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutMode {
    Random,
    AxisAligned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutAxis {
    /// Segment with constant `x`.
    Vertical,
    /// Segment with constant `y`.
    Horizontal,
}

/// A chord crossing edge `edge_a` at parameter `t_a` and edge `edge_b` at `t_b`.
///
/// When `axis` is set the second endpoint shares the constant coordinate of
/// the first exactly, so axis-aligned partitions stay bit-exact rectilinear.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutLine<T> {
    pub edge_a: usize,
    pub edge_b: usize,
    pub t_a: T,
    pub t_b: T,
    pub axis: Option<CutAxis>,
}

pub(crate) fn edges_adjacent(i: usize, j: usize, n: usize) -> bool {
    i == j || (i + 1) % n == j || (j + 1) % n == i
}

impl<T: Real> CutLine<T> {
    pub fn new(edge_a: usize, t_a: T, edge_b: usize, t_b: T) -> Self {
        Self { edge_a, edge_b, t_a, t_b, axis: None }
    }

    /// Checks the two sampling constraints against `poly`.
    pub fn validate(&self, poly: &Polygon<T>) -> Result<()> {
        let n = poly.len();
        if self.edge_a >= n || self.edge_b >= n {
            return Err(GeometryError::RejectedCut(format!(
                "edge index out of range ({}, {}) for {n} edges",
                self.edge_a, self.edge_b
            )));
        }
        if edges_adjacent(self.edge_a, self.edge_b, n) {
            return Err(GeometryError::RejectedCut(format!(
                "edges {} and {} are adjacent",
                self.edge_a, self.edge_b
            )));
        }
        let (lo, hi) = (T::lit(CUT_T_MIN), T::lit(CUT_T_MAX));
        for t in [self.t_a, self.t_b] {
            if !(t >= lo && t <= hi) {
                return Err(GeometryError::RejectedCut(format!("split parameter {t} outside [0.25, 0.75]")));
            }
        }
        Ok(())
    }

    /// Chord endpoints on `poly`.
    pub fn endpoints(&self, poly: &Polygon<T>) -> (Point<T>, Point<T>) {
        let (a0, a1) = poly.edge(self.edge_a);
        let (b0, b1) = poly.edge(self.edge_b);
        let pa = a0.lerp(a1, self.t_a);
        let mut pb = b0.lerp(b1, self.t_b);
        match self.axis {
            Some(CutAxis::Vertical) => pb.x = pa.x,
            Some(CutAxis::Horizontal) => pb.y = pa.y,
            None => {}
        }
        (pa, pb)
    }
}

/// Splits `poly` along `cut` into two simple CCW polygons.
///
/// The first child holds the vertices strictly after the lower edge index up
/// to the higher one.
pub fn split_polygon<T: Real>(poly: &Polygon<T>, cut: &CutLine<T>) -> Result<(Polygon<T>, Polygon<T>)> {
    cut.validate(poly)?;
    let (pa, pb) = cut.endpoints(poly);
    let (a, b, pa, pb) = if cut.edge_a < cut.edge_b {
        (cut.edge_a, cut.edge_b, pa, pb)
    } else {
        (cut.edge_b, cut.edge_a, pb, pa)
    };
    check_chord_interior(poly, a, b, pa, pb)?;

    let v = poly.vertices();
    let n = v.len();
    let mut first = Vec::with_capacity(b - a + 2);
    first.push(pa);
    first.extend_from_slice(&v[a + 1..=b]);
    first.push(pb);

    let mut second = Vec::with_capacity(n - (b - a) + 2);
    second.push(pb);
    for k in (b + 1)..(n + a + 1) {
        second.push(v[k % n]);
    }
    second.push(pa);

    let reject = |e: GeometryError| GeometryError::RejectedCut(format!("child polygon invalid: {e}"));
    let c1 = Polygon::new(first).map_err(reject)?;
    let c2 = Polygon::new(second).map_err(reject)?;
    Ok((c1, c2))
}

fn check_chord_interior<T: Real>(poly: &Polygon<T>, a: usize, b: usize, pa: Point<T>, pb: Point<T>) -> Result<()> {
    if pa == pb {
        return Err(GeometryError::RejectedCut("zero-length chord".into()));
    }
    for k in 0..poly.len() {
        if k == a || k == b {
            continue;
        }
        let (q0, q1) = poly.edge(k);
        if segments_intersect(pa, pb, q0, q1) {
            return Err(GeometryError::RejectedCut(format!("chord crosses edge {k}")));
        }
    }
    let mid = pa.lerp(pb, T::lit(0.5));
    if !poly.contains(mid) {
        return Err(GeometryError::RejectedCut("chord leaves the polygon".into()));
    }
    Ok(())
}

/// Draws a cut satisfying both constraints, retrying up to
/// [`DEFAULT_CUT_RETRIES`] times.
pub fn sample_cut<T: Real, R: Rng + ?Sized>(poly: &Polygon<T>, mode: CutMode, rng: &mut R) -> Result<CutLine<T>> {
    sample_cut_with_retries(poly, mode, DEFAULT_CUT_RETRIES, rng)
}

pub fn sample_cut_with_retries<T: Real, R: Rng + ?Sized>(
    poly: &Polygon<T>,
    mode: CutMode,
    retries: usize,
    rng: &mut R,
) -> Result<CutLine<T>> {
    let n = poly.len();
    if n < 4 {
        return Err(GeometryError::SamplerExhausted(0));
    }
    for _ in 0..retries {
        let candidate = match mode {
            CutMode::Random => Some(propose_random(n, rng)),
            CutMode::AxisAligned => propose_axis_aligned(poly, rng),
        };
        let Some(cut) = candidate else { continue };
        if cut.validate(poly).is_ok() && split_polygon(poly, &cut).is_ok() {
            return Ok(cut);
        }
    }
    Err(GeometryError::SamplerExhausted(retries))
}

fn draw_t<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.gen_range(CUT_T_MIN..=CUT_T_MAX))
}

fn propose_random<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CutLine<T> {
    let a = rng.gen_range(0..n);
    // Non-adjacent partners are a+2 ..= a+n-2 (mod n).
    let b = (a + 2 + rng.gen_range(0..n - 3)) % n;
    CutLine::new(a, draw_t(rng), b, draw_t(rng))
}

fn propose_axis_aligned<T: Real, R: Rng + ?Sized>(poly: &Polygon<T>, rng: &mut R) -> Option<CutLine<T>> {
    let n = poly.len();
    let axis = if rng.gen_bool(0.5) { CutAxis::Vertical } else { CutAxis::Horizontal };
    // Coordinate held constant along the cut, and the one that varies.
    let fixed = |p: Point<T>| if axis == CutAxis::Vertical { p.x } else { p.y };
    let free = |p: Point<T>| if axis == CutAxis::Vertical { p.y } else { p.x };

    let eligible: Vec<usize> = (0..n)
        .filter(|&i| {
            let (p, q) = poly.edge(i);
            fixed(p) != fixed(q)
        })
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let a = eligible[rng.gen_range(0..eligible.len())];
    let t_a: T = draw_t(rng);
    let (a0, a1) = poly.edge(a);
    let pa = a0.lerp(a1, t_a);
    let c = fixed(pa);

    let mut best: Option<(usize, T, T)> = None;
    for k in 0..n {
        if k == a {
            continue;
        }
        let (p, q) = poly.edge(k);
        let (fp, fq) = (fixed(p), fixed(q));
        if (fp - c) * (fq - c) >= T::zero() {
            continue;
        }
        let t = (c - fp) / (fq - fp);
        let hit = free(p.lerp(q, t));
        let dist = (hit - free(pa)).abs();
        if best.map_or(true, |(_, _, d)| dist < d) {
            best = Some((k, t, dist));
        }
    }
    let (b, t_b, _) = best?;
    Some(CutLine { edge_a: a, edge_b: b, t_a, t_b, axis: Some(axis) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> Polygon<f64> {
        Polygon::from_coords(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn vertical_bisection_of_square() {
        // Edge 2 runs right to left, so t = 0.5 on both edges is x = 0.5.
        let (l, r) = split_polygon(&unit_square(), &CutLine::new(0, 0.5, 2, 0.5)).unwrap();
        assert!((l.area() - 0.5).abs() < 1e-15);
        assert!((r.area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quarter_split_of_square() {
        // Bottom edge at t = 0.25 is x = 0.25; the top edge runs from (1,1) to
        // (0,1), so the matching point x = 0.25 sits at t = 0.75.
        let (a, b) = split_polygon(&unit_square(), &CutLine::new(0, 0.25, 2, 0.75)).unwrap();
        let mut areas = [a.area(), b.area()];
        areas.sort_by(f64::total_cmp);
        assert!((areas[0] - 0.25).abs() < 1e-15);
        assert!((areas[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn adjacent_edges_rejected() {
        let err = split_polygon(&unit_square(), &CutLine::new(0, 0.5, 1, 0.5)).unwrap_err();
        assert!(matches!(err, GeometryError::RejectedCut(_)));
    }

    #[test]
    fn out_of_range_parameter_rejected() {
        assert!(split_polygon(&unit_square(), &CutLine::new(0, 0.1, 2, 0.5)).is_err());
    }

    #[test]
    fn chord_leaving_nonconvex_polygon_rejected() {
        // U shape: a chord from the bottom edge to the top of the right arm
        // passes through the notch.
        let u = Polygon::<f64>::from_coords(&[
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 1.0),
            (0.7, 1.0),
            (0.7, 0.3),
            (0.3, 0.3),
            (0.3, 1.0),
            (0.0, 1.0),
        ])
        .unwrap();
        // Edge 0 at x = 0.25 to edge 2 (right arm top, x from 1.0 to 0.7).
        let err = split_polygon(&u, &CutLine::new(0, 0.25, 2, 0.5)).unwrap_err();
        assert!(matches!(err, GeometryError::RejectedCut(_)), "{err}");
    }

    #[test]
    fn random_cuts_respect_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sq = unit_square();
        for _ in 0..200 {
            let cut = sample_cut(&sq, CutMode::Random, &mut rng).unwrap();
            assert!(cut.t_a >= 0.25 && cut.t_a <= 0.75 && cut.t_b >= 0.25 && cut.t_b <= 0.75);
            assert!(!edges_adjacent(cut.edge_a, cut.edge_b, 4));
        }
    }

    #[test]
    fn axis_aligned_cut_on_rectangle_shares_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rect = Polygon::<f64>::from_coords(&[(0.1, 0.2), (0.8, 0.2), (0.8, 0.6), (0.1, 0.6)]).unwrap();
        for _ in 0..100 {
            let cut = sample_cut(&rect, CutMode::AxisAligned, &mut rng).unwrap();
            let (pa, pb) = cut.endpoints(&rect);
            assert!(pa.x == pb.x || pa.y == pb.y);
            let (c1, c2) = split_polygon(&rect, &cut).unwrap();
            assert!(c1.is_axis_aligned_rectangle() && c2.is_axis_aligned_rectangle());
        }
    }

    #[test]
    fn triangle_has_no_valid_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tri = Polygon::<f64>::from_coords(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert!(matches!(
            sample_cut(&tri, CutMode::Random, &mut rng),
            Err(GeometryError::SamplerExhausted(_))
        ));
    }

    #[test]
    fn sampler_exhausts_when_no_cut_fits() {
        // Axis-aligned mode on a triangle-like quad whose only crossable
        // pairs are adjacent.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kite = Polygon::<f64>::from_coords(&[(0.5, 0.0), (1.0, 0.5), (0.5, 1.0), (0.0, 0.5)]).unwrap();
        let r = sample_cut_with_retries(&kite, CutMode::AxisAligned, 10, &mut rng);
        assert!(matches!(r, Err(GeometryError::SamplerExhausted(10))));
    }
}
