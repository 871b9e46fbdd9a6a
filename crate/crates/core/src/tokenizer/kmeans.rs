//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

pub const MAX_ITERS: usize = 100;
pub const REL_TOL: f64 = 1e-6;

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.chunks(dim).enumerate() {
        let d = sq_dist(point, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: returns the indices of the chosen points.
pub fn kmeans_pp_indices<R: Rng>(points: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len() / dim;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(&points[i * dim..(i + 1) * dim], row(points, dim, chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // fall back to the last positive-weight point on rounding overshoot
            if d2[pick] <= 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        chosen.push(next);
        let c = row(points, dim, next).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = sq_dist(&points[i * dim..(i + 1) * dim], &c);
            if nd < *d {
                *d = nd;
            }
        }
    }
    chosen
}

fn row(points: &[f64], dim: usize, i: usize) -> &[f64] {
    &points[i * dim..(i + 1) * dim]
}

/// Lloyd iterations from the given initial centroids.
///
/// Stops after [`MAX_ITERS`] rounds, when assignments stop changing, or when
/// the objective improves by less than [`REL_TOL`] relative. Every round ends
/// with an update step, so returned centroids are means of their clusters
/// (an empty cluster is re-seeded at the point farthest from its centroid).
pub fn lloyd(points: &[f64], dim: usize, mut centroids: Vec<f64>) -> Vec<f64> {
    let n = points.len() / dim;
    let k = centroids.len() / dim;
    let mut assign = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut prev_obj = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for i in 0..n {
            let (c, d) = nearest(row(points, dim, i), &centroids, dim);
            if assign[i] != c {
                changed = true;
                assign[i] = c;
            }
            dists[i] = d;
        }
        if !changed {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(row(points, dim, i))
            {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            } else {
                // farthest point from its own centroid; ties to the lowest index
                let mut far = 0;
                for i in 1..n {
                    if dists[i] > dists[far] {
                        far = i;
                    }
                }
                centroids[c * dim..(c + 1) * dim].copy_from_slice(row(points, dim, far));
                dists[far] = 0.0;
            }
        }

        let obj: f64 = (0..n)
            .map(|i| sq_dist(row(points, dim, i), row(&centroids, dim, assign[i])))
            .sum::<f64>()
            / n as f64;
        if obj == 0.0 || (prev_obj.is_finite() && (prev_obj - obj) <= REL_TOL * prev_obj) {
            break;
        }
        prev_obj = obj;
    }
    centroids
}
