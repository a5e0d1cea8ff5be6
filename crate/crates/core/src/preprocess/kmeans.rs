use rand::Rng;

use super::sq_dist;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

const MAX_ITERS: usize = 300;

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(row, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ seeds; stops when assignments repeat or
/// after 300 iterations. Distance ties go to the lowest centroid index.
pub fn kmeans<R: AsRef<[f64]>>(rows: &[R], k: usize, seed: u64) -> Result<KMeans> {
    let n = rows.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means with k = {k} on {n} rows")));
    }
    let rows: Vec<&[f64]> = rows.iter().map(AsRef::as_ref).collect();
    let d = rows[0].len();
    let mut rng = stream(seed);
    let mut centroids = vec![rows[rng.random_range(0..n)].to_vec()];
    while centroids.len() < k {
        let w: Vec<f64> = rows.iter().map(|r| nearest(r, &centroids).1).collect();
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    idx = i;
                    break;
                }
                u -= wi;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(rows[pick].to_vec());
    }
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        iterations += 1;
        let next: Vec<usize> = rows.iter().map(|r| nearest(r, &centroids).0).collect();
        let stable = next == assignments;
        assignments = next;
        if stable {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &a) in rows.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(*r).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeans { centroids, assignments, iterations })
}

/// Mean silhouette over all rows; a row alone in its cluster scores 0.
pub fn silhouette<R: AsRef<[f64]>>(rows: &[R], assignments: &[usize]) -> Result<f64> {
    let n = rows.len();
    if n != assignments.len() || n == 0 {
        return Err(Error::invalid("silhouette needs one assignment per row"));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::invalid("silhouette needs at least two non-empty clusters"));
    }
    let rows: Vec<&[f64]> = rows.iter().map(AsRef::as_ref).collect();
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += sq_dist(rows[i], rows[j]).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}
