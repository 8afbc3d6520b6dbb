//! One-dimensional k-means (k-means++ seeding, Lloyd iterations).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans1D {
    centers: Vec<f64>,
    boundaries: Vec<f64>,
}

impl KMeans1D {
    /// Fits at most `k` clusters; the effective count is clamped to the number
    /// of distinct values.
    pub fn fit(values: &[f64], k: usize, seed: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("k-means on empty input"));
        }
        if k == 0 {
            return Err(Error::invalid("k-means needs k >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("k-means input must be finite"));
        }
        let (distinct, counts) = distinct_with_counts(values);
        let k_eff = k.min(distinct.len());
        let centers = if k_eff == distinct.len() {
            // every distinct value is its own cluster: zero inertia, exact optimum
            distinct.clone()
        } else {
            lloyd(&distinct, &counts, k_eff, seed)
        };
        Ok(Self::from_centers(centers))
    }

    /// Builds a quantizer from centers (sorted and deduplicated here).
    pub fn from_centers(mut centers: Vec<f64>) -> Self {
        centers.sort_by(f64::total_cmp);
        centers.dedup();
        let boundaries = centers.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Self {
            centers,
            boundaries,
        }
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn n_bins(&self) -> usize {
        self.centers.len()
    }

    /// 0-based index of the nearest center; exact midpoints go to the lower center.
    pub fn assign(&self, v: f64) -> usize {
        self.boundaries.partition_point(|&b| b < v)
    }
}

fn distinct_with_counts(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for v in sorted {
        if distinct.last() == Some(&v) {
            *counts.last_mut().unwrap() += 1.0;
        } else {
            distinct.push(v);
            counts.push(1.0);
        }
    }
    (distinct, counts)
}

/// Lloyd's algorithm on weighted sorted distinct points. Because the data is
/// one-dimensional and sorted, each cluster is a contiguous run of points and
/// the assignment is fully described by the cut indices.
fn lloyd(xs: &[f64], w: &[f64], k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(xs, w, k, &mut rng);

    // prefix sums for O(1) cluster means
    let mut cw = vec![0.0; xs.len() + 1];
    let mut cwx = vec![0.0; xs.len() + 1];
    for i in 0..xs.len() {
        cw[i + 1] = cw[i] + w[i];
        cwx[i + 1] = cwx[i] + w[i] * xs[i];
    }

    let mut cuts: Vec<usize> = Vec::new();
    for _ in 0..MAX_ITER {
        centers.sort_by(f64::total_cmp);
        let new_cuts: Vec<usize> = centers
            .windows(2)
            .map(|c| {
                let mid = 0.5 * (c[0] + c[1]);
                xs.partition_point(|&x| x <= mid)
            })
            .collect();
        if new_cuts == cuts {
            break;
        }
        cuts = new_cuts;

        let mut empty = Vec::new();
        let mut lo = 0;
        for (j, center) in centers.iter_mut().enumerate() {
            let hi = if j < cuts.len() { cuts[j] } else { xs.len() };
            let mass = cw[hi] - cw[lo];
            if mass > 0.0 {
                *center = (cwx[hi] - cwx[lo]) / mass;
            } else {
                empty.push(j);
            }
            lo = hi.max(lo);
        }
        // relocate empty clusters onto the worst-fit points
        for j in empty {
            let far = farthest_point(xs, &centers);
            centers[j] = xs[far];
            cuts.clear();
        }
    }
    centers
}

fn kmeans_pp(xs: &[f64], w: &[f64], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut centers = vec![xs[pick_weighted(w, total, rng)]];
    let mut d2: Vec<f64> = xs.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let weights: Vec<f64> = d2.iter().zip(w).map(|(d, w)| d * w).collect();
        let sum: f64 = weights.iter().sum();
        let next = if sum > 0.0 {
            xs[pick_weighted(&weights, sum, rng)]
        } else {
            break;
        };
        centers.push(next);
        for (d, &x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - next).powi(2));
        }
    }
    centers
}

fn pick_weighted(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let mut dart = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            dart -= w;
            if dart < 0.0 {
                return i;
            }
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn farthest_point(xs: &[f64], centers: &[f64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in xs.iter().enumerate() {
        let d = centers
            .iter()
            .map(|c| (x - c).abs())
            .fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn two_clean_clusters() {
        let km = KMeans1D::fit(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0], 2, 0).unwrap();
        assert_eq!(km.centers(), &[0.0, 10.0]);
        assert_eq!(km.boundaries(), &[5.0]);
    }

    #[test]
    fn clamps_to_distinct_values() {
        let km = KMeans1D::fit(&[5.0], 10, 0).unwrap();
        assert_eq!(km.centers(), &[5.0]);
        assert_eq!(km.n_bins(), 1);
        assert!(KMeans1D::fit(&[], 3, 0).is_err());
    }

    #[test]
    fn midpoint_ties_go_low() {
        let km = KMeans1D::from_centers(vec![0.0, 10.0]);
        assert_eq!(km.assign(5.0), 0);
        assert_eq!(km.assign(5.000001), 1);
        assert_eq!(km.assign(10.0), 1);
    }

    /// Exhaustive optimal 2-means over sorted split points.
    fn best_two_means_split(sorted: &[f64]) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for cut in 1..sorted.len() {
            let (l, r) = sorted.split_at(cut);
            let ml = l.iter().sum::<f64>() / l.len() as f64;
            let mr = r.iter().sum::<f64>() / r.len() as f64;
            let sse: f64 = l.iter().map(|x| (x - ml).powi(2)).sum::<f64>()
                + r.iter().map(|x| (x - mr).powi(2)).sum::<f64>();
            if sse < best.0 {
                best = (sse, l[l.len() - 1], r[0]);
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn bimodal_boundary_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = Normal::new(0.0, 1.0).unwrap();
        let b = Normal::new(20.0, 1.0).unwrap();
        let mut xs: Vec<f64> = (0..500).map(|_| a.sample(&mut rng)).collect();
        xs.extend((0..500).map(|_| b.sample(&mut rng)));
        let km = KMeans1D::fit(&xs, 2, 7).unwrap();
        let boundary = km.boundaries()[0];
        assert!(boundary > 5.0 && boundary < 15.0, "boundary {boundary}");

        xs.sort_by(f64::total_cmp);
        let (last_left, first_right) = best_two_means_split(&xs);
        assert!(boundary >= last_left && boundary < first_right);
    }

    #[test]
    fn centers_strictly_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * 50.0).collect();
        let km = KMeans1D::fit(&xs, 10, 3).unwrap();
        assert_eq!(km.n_bins(), 10);
        assert!(km.centers().windows(2).all(|w| w[0] < w[1]));
        for (j, b) in km.boundaries().iter().enumerate() {
            assert_eq!(*b, 0.5 * (km.centers()[j] + km.centers()[j + 1]));
        }
    }
}
