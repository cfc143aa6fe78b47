use rand::Rng;
use serde::{Deserialize, Serialize};

use super::shapes::{Scenario, Split, TargetShape};
use super::Result;
use crate::geometry::{pixel_center, pixel_containing, place, sample_cut, split_polygon, CutMode, Point, Polygon};

/// One fragment as handed to a solver, plus the labels that restore it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFragment {
    /// Fragment in local coordinates: the original region translated so its
    /// anchor sits at the origin, then rotated by the scrambling bin.
    pub canonical: Polygon<f64>,
    /// `(row, col)` of the pixel containing the original centroid. Its center
    /// is the anchor.
    pub gt_center: (i64, i64),
    /// Rotation bin that undoes the scramble.
    pub gt_bin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    pub shape: TargetShape,
    pub resolution: usize,
    pub k: usize,
    pub num_bins: usize,
    pub mode: CutMode,
    pub scenario: Scenario,
    pub split: Split,
    /// Generation seed (before any degradation).
    pub seed: u64,
    pub target: Polygon<f64>,
    /// Ground-truth assembly order.
    pub fragments: Vec<EpisodeFragment>,
}

impl Episode {
    pub fn anchor(&self, i: usize) -> Point<f64> {
        let (r, c) = self.fragments[i].gt_center;
        pixel_center(r, c, self.resolution, self.resolution)
    }

    /// Fragment `i` at its ground-truth pose.
    pub fn gt_polygon(&self, i: usize) -> Polygon<f64> {
        let f = &self.fragments[i];
        place(&f.canonical, f.gt_bin, self.num_bins, self.anchor(i))
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }
}

/// Recursive binary partition: each of `k` levels splits every fragment of
/// the previous level once, giving `2^k` fragments in level order.
pub fn fragment_shape<R: Rng + ?Sized>(
    target: &Polygon<f64>,
    k: usize,
    mode: CutMode,
    rng: &mut R,
) -> Result<Vec<Polygon<f64>>> {
    let mut level = vec![target.clone()];
    for _ in 0..k {
        let mut next = Vec::with_capacity(level.len() * 2);
        for frag in &level {
            let cut = sample_cut(frag, mode, rng)?;
            let (a, b) = split_polygon(frag, &cut)?;
            next.push(a);
            next.push(b);
        }
        level = next;
    }
    Ok(level)
}

/// Permutation listing fragments bottom to top, then left to right, by
/// centroid. Ties keep the input order.
pub fn order_fragments(fragments: &[Polygon<f64>]) -> Vec<usize> {
    let centroids: Vec<Point<f64>> = fragments.iter().map(Polygon::centroid).collect();
    let mut idx: Vec<usize> = (0..fragments.len()).collect();
    idx.sort_by(|&a, &b| {
        centroids[a]
            .y
            .total_cmp(&centroids[b].y)
            .then(centroids[a].x.total_cmp(&centroids[b].x))
            .then(a.cmp(&b))
    });
    idx
}

/// Moves each fragment into local coordinates around its anchor and applies a
/// uniformly random rotation bin `r`; the stored label is `(b - r) mod b`.
pub fn scramble<R: Rng + ?Sized>(
    fragments: &[Polygon<f64>],
    num_bins: usize,
    resolution: usize,
    rng: &mut R,
) -> Vec<EpisodeFragment> {
    assert!(num_bins >= 1, "num_bins must be at least 1");
    let origin = Point::new(0.0, 0.0);
    fragments
        .iter()
        .map(|frag| {
            let (row, col) = pixel_containing(frag.centroid(), resolution, resolution);
            let row = row.clamp(0, resolution as i64 - 1);
            let col = col.clamp(0, resolution as i64 - 1);
            let anchor = pixel_center(row, col, resolution, resolution);
            let r = rng.gen_range(0..num_bins);
            let canonical = place(&frag.translate(-anchor), r, num_bins, origin);
            EpisodeFragment { canonical, gt_center: (row, col), gt_bin: (num_bins - r) % num_bins }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square() -> Polygon<f64> {
        TargetShape::Square.polygon()
    }

    #[test]
    fn zero_levels_returns_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frags = fragment_shape(&square(), 0, CutMode::Random, &mut rng).unwrap();
        assert_eq!(frags, vec![square()]);
    }

    #[test]
    fn fragment_counts_are_powers_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, n) in [(2, 4), (3, 8), (4, 16)] {
            let frags = fragment_shape(&square(), k, CutMode::Random, &mut rng).unwrap();
            assert_eq!(frags.len(), n);
            let total: f64 = frags.iter().map(Polygon::area).sum();
            assert!((total - 0.81).abs() < 1e-9);
        }
    }

    #[test]
    fn ordering_bottom_left_first() {
        let at = |x: f64, y: f64| {
            Polygon::<f64>::from_coords(&[(x - 0.05, y - 0.05), (x + 0.05, y - 0.05), (x + 0.05, y + 0.05), (x - 0.05, y + 0.05)])
                .unwrap()
        };
        assert_eq!(order_fragments(&[at(0.8, 0.8), at(0.2, 0.2)]), vec![1, 0]);
        assert_eq!(order_fragments(&[at(0.7, 0.5), at(0.3, 0.5)]), vec![1, 0]);
        // 2×2 grid listed TL, TR, BL, BR comes out BL, BR, TL, TR.
        let grid = [at(0.25, 0.75), at(0.75, 0.75), at(0.25, 0.25), at(0.75, 0.25)];
        assert_eq!(order_fragments(&grid), vec![2, 3, 0, 1]);
    }

    #[test]
    fn ordering_ties_keep_input_order() {
        let p = square();
        assert_eq!(order_fragments(&[p.clone(), p.clone(), p]), vec![0, 1, 2]);
    }

    #[test]
    fn single_bin_labels_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frags = fragment_shape(&square(), 3, CutMode::Random, &mut rng).unwrap();
        assert!(scramble(&frags, 1, 32, &mut rng).iter().all(|f| f.gt_bin == 0));
    }

    #[test]
    fn label_is_modular_inverse_of_applied_bin() {
        // Recover the applied bin from the canonical orientation of a square.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frag = Polygon::<f64>::from_coords(&[(0.2, 0.2), (0.5, 0.2), (0.5, 0.3), (0.2, 0.3)]).unwrap();
        for _ in 0..20 {
            let s = &scramble(std::slice::from_ref(&frag), 4, 32, &mut rng)[0];
            let (lo, hi) = s.canonical.bounds();
            let wide = hi.x - lo.x > hi.y - lo.y;
            // Applied bins 1 and 3 turn the wide rectangle tall.
            let applied_odd = !wide;
            assert_eq!(applied_odd, s.gt_bin % 2 == 1);
        }
    }

    #[test]
    fn scramble_round_trip_restores_vertices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for b in [1, 4, 20] {
            let frags = fragment_shape(&square(), 3, CutMode::Random, &mut rng).unwrap();
            let scr = scramble(&frags, b, 32, &mut rng);
            for (orig, s) in frags.iter().zip(&scr) {
                let anchor = pixel_center(s.gt_center.0, s.gt_center.1, 32, 32);
                let back = place(&s.canonical, s.gt_bin, b, anchor);
                for (p, q) in orig.vertices().iter().zip(back.vertices()) {
                    assert!((*p - *q).norm() < 1e-9);
                }
            }
        }
    }
}
