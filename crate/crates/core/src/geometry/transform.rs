//! Rigid motions with rotations quantized to `num_bins` equal steps.

use super::{Point, Polygon};
use crate::scalar::Real;

/// `(cos, sin)` of `2π·bin/num_bins`. Multiples of a quarter turn are exact.
pub fn bin_rotation<T: Real>(bin: usize, num_bins: usize) -> (T, T) {
    assert!(num_bins >= 1, "num_bins must be at least 1");
    let b = bin % num_bins;
    if b == 0 {
        return (T::one(), T::zero());
    }
    if (4 * b) % num_bins == 0 {
        return match 4 * b / num_bins {
            1 => (T::zero(), T::one()),
            2 => (-T::one(), T::zero()),
            _ => (T::zero(), -T::one()),
        };
    }
    let angle = T::TAU() * T::from_usize_lossy(b) / T::from_usize_lossy(num_bins);
    (angle.cos(), angle.sin())
}

fn rotate_point<T: Real>(p: Point<T>, pivot: Point<T>, (c, s): (T, T)) -> Point<T> {
    let d = p - pivot;
    Point::new(pivot.x + c * d.x - s * d.y, pivot.y + s * d.x + c * d.y)
}

/// Rotates `poly` about `pivot` by `bin` steps of `2π/num_bins`.
pub fn rotate_about<T: Real>(poly: &Polygon<T>, bin: usize, num_bins: usize, pivot: Point<T>) -> Polygon<T> {
    let cs = bin_rotation::<T>(bin, num_bins);
    if bin % num_bins == 0 {
        return poly.clone();
    }
    Polygon::from_trusted(poly.vertices().iter().map(|&p| rotate_point(p, pivot, cs)).collect())
}

/// Rotates about the centroid, then translates the centroid onto `center`.
pub fn transform<T: Real>(poly: &Polygon<T>, bin: usize, num_bins: usize, center: Point<T>) -> Polygon<T> {
    let c = poly.centroid();
    rotate_about(poly, bin, num_bins, c).translate(center - c)
}

/// Rotates about the local origin, then moves the origin onto `anchor`.
///
/// Fragments are stored relative to an anchor point near their centroid; this
/// is the inverse of that canonicalization and is what the environment uses
/// to put a fragment on the canvas.
pub fn place<T: Real>(poly: &Polygon<T>, bin: usize, num_bins: usize, anchor: Point<T>) -> Polygon<T> {
    let cs = bin_rotation::<T>(bin, num_bins);
    let origin = Point::new(T::zero(), T::zero());
    if bin % num_bins == 0 {
        return poly.translate(anchor);
    }
    Polygon::from_trusted(
        poly.vertices()
            .iter()
            .map(|&p| rotate_point(p, origin, cs) + anchor)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fragment() -> Polygon<f64> {
        Polygon::from_coords(&[(0.1, 0.1), (0.45, 0.12), (0.5, 0.4), (0.2, 0.33)]).unwrap()
    }

    #[test]
    fn single_bin_is_pure_translation() {
        let p = fragment();
        let q = transform(&p, 0, 1, Point::new(0.5, 0.5));
        let d = p.centroid() - Point::new(0.5, 0.5);
        for (a, b) in p.vertices().iter().zip(q.vertices()) {
            assert!(((*a - d) - *b).norm() < 1e-15);
        }
    }

    #[test]
    fn square_quarter_turn_preserves_vertex_set() {
        let sq = Polygon::<f64>::from_coords(&[(0.2, 0.2), (0.6, 0.2), (0.6, 0.6), (0.2, 0.6)]).unwrap();
        let r = transform(&sq, 1, 4, Point::new(0.4, 0.4));
        for v in sq.vertices() {
            assert!(r.vertices().iter().any(|w| (*v - *w).norm() < 1e-12));
        }
    }

    #[test]
    fn inverse_bins_compose_to_translation() {
        let p = fragment();
        for b in [3usize, 4, 7, 20] {
            for k in 0..b {
                let q = transform(&transform(&p, k, b, Point::new(0.3, 0.7)), b - k, b, Point::new(0.6, 0.2));
                let shift = Point::new(0.6, 0.2) - p.centroid();
                for (a, c) in p.vertices().iter().zip(q.vertices()) {
                    assert!(((*a + shift) - *c).norm() < 1e-9, "b={b} k={k}");
                }
            }
        }
    }

    #[test]
    fn rigid_motion_preserves_area() {
        let p = fragment();
        for k in 0..20 {
            let q = transform(&p, k, 20, Point::new(0.5, 0.5));
            assert!((q.area() - p.area()).abs() <= 1e-9);
            assert!(q.area() > 0.0);
        }
    }

    #[test]
    fn place_is_rotation_about_origin_plus_anchor() {
        let local = Polygon::<f64>::from_coords(&[(-0.1, -0.1), (0.1, -0.1), (0.1, 0.1), (-0.1, 0.1)]).unwrap();
        let q = place(&local, 2, 4, Point::new(0.5, 0.25));
        let (lo, hi) = q.bounds();
        assert_eq!((lo.x, lo.y, hi.x, hi.y), (0.4, 0.15, 0.6, 0.35));
    }
}
