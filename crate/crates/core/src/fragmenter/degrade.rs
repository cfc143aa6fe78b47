use rand::seq::index::sample;
use rand::Rng;

use super::partition::{Episode, EpisodeFragment};
use super::shapes::Scenario;
use super::{FragmentError, Result};
use crate::geometry::{place, Point, Polygon};

/// Per-vertex fraction of the centroid distance removed by erosion.
pub const EROSION_FACTOR_RANGE: (f64, f64) = (0.02, 0.08);
/// Accepted area ratio of an eroded fragment to its original.
pub const EROSION_RATIO_RANGE: (f64, f64) = (0.7, 0.95);
/// Half-width of the uniform per-coordinate vertex jitter, in canvas units.
pub const DISTORTION_JITTER: f64 = 0.025;

const VICTIMS: usize = 4;
const FACTOR_ATTEMPTS: usize = 50;
const VICTIM_ATTEMPTS: usize = 20;

/// Applies an abnormal scenario to a normal episode. Surviving fragments keep
/// their labels; eroded and distorted fragments are perturbed at their
/// ground-truth pose and then re-expressed in the scrambled local frame.
pub fn degrade<R: Rng + ?Sized>(episode: &Episode, scenario: Scenario, rng: &mut R) -> Result<Episode> {
    let n = episode.fragments.len();
    let mut out = episode.clone();
    out.scenario = scenario;
    match scenario {
        Scenario::Normal => return Err(FragmentError::Degrade("normal is not a degradation".into())),
        Scenario::Missing => {
            if n < 2 {
                return Err(FragmentError::Degrade(format!("cannot drop a fragment from {n}")));
            }
            out.fragments.remove(rng.gen_range(0..n));
        }
        Scenario::Eroded | Scenario::Distorted => {
            if n < VICTIMS {
                return Err(FragmentError::Degrade(format!("need {VICTIMS} fragments, have {n}")));
            }
            'victims: for _ in 0..VICTIM_ATTEMPTS {
                let victims = sample(rng, n, VICTIMS).into_vec();
                let mut replaced = Vec::with_capacity(VICTIMS);
                for &v in &victims {
                    let gt = episode.gt_polygon(v);
                    let perturbed = match scenario {
                        Scenario::Eroded => erode(&gt, rng),
                        _ => distort(&gt, rng),
                    };
                    match perturbed {
                        Some(p) => replaced.push((v, recanonicalize(episode, v, &p))),
                        None => continue 'victims,
                    }
                }
                for (v, f) in replaced {
                    out.fragments[v] = f;
                }
                return Ok(out);
            }
            return Err(FragmentError::Degrade(format!("no acceptable {scenario} victim set")));
        }
    }
    Ok(out)
}

fn erode<R: Rng + ?Sized>(poly: &Polygon<f64>, rng: &mut R) -> Option<Polygon<f64>> {
    let c = poly.centroid();
    let area = poly.area();
    for _ in 0..FACTOR_ATTEMPTS {
        let pts = poly
            .vertices()
            .iter()
            .map(|&p| {
                let f = rng.gen_range(EROSION_FACTOR_RANGE.0..=EROSION_FACTOR_RANGE.1);
                p.lerp(c, f)
            })
            .collect();
        let Ok(q) = Polygon::new(pts) else { continue };
        let ratio = q.area() / area;
        if (EROSION_RATIO_RANGE.0..=EROSION_RATIO_RANGE.1).contains(&ratio) {
            return Some(q);
        }
    }
    None
}

fn distort<R: Rng + ?Sized>(poly: &Polygon<f64>, rng: &mut R) -> Option<Polygon<f64>> {
    let j = DISTORTION_JITTER;
    for _ in 0..FACTOR_ATTEMPTS {
        let pts = poly
            .vertices()
            .iter()
            .map(|&p| Point::new(p.x + rng.gen_range(-j..=j), p.y + rng.gen_range(-j..=j)))
            .collect();
        if let Ok(q) = Polygon::new(pts) {
            return Some(q);
        }
    }
    None
}

fn recanonicalize(episode: &Episode, i: usize, at_gt: &Polygon<f64>) -> EpisodeFragment {
    let f = &episode.fragments[i];
    let b = episode.num_bins;
    let applied = (b - f.gt_bin) % b;
    let canonical = place(&at_gt.translate(-episode.anchor(i)), applied, b, Point::new(0.0, 0.0));
    EpisodeFragment { canonical, ..f.clone() }
}
