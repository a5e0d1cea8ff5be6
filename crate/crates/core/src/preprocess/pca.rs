use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::rng::stream;
use crate::{Error, Result};

/// Top-k principal axes of a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d`.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
}

/// Above this size the top axes come from block subspace iteration instead
/// of a full eigendecomposition.
const EXACT_MAX: usize = 600;
const SUBSPACE_ITERS: usize = 60;

fn centered<R: AsRef<[f64]>>(rows: &[R]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = rows.len();
    let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
    if n == 0 || d == 0 {
        return Err(Error::invalid("PCA on an empty matrix"));
    }
    if rows.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::Shape("PCA rows of different lengths".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r.as_ref()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j] - mean[j]);
    Ok((mean, x))
}

/// Eigenpairs sorted by decreasing eigenvalue (ties by index).
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Gram-Schmidt `v` against `basis`; `None` when nothing is left.
fn orthogonalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..2 {
        for b in basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 1e-10).then(|| v.into_iter().map(|x| x / norm).collect())
}

/// Fills `comps` up to `k` orthonormal rows with standard basis directions.
fn complete(mut comps: Vec<Vec<f64>>, k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut j = 0;
    while comps.len() < k && j < d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        if let Some(v) = orthogonalize(e, &comps) {
            comps.push(v);
        }
        j += 1;
    }
    comps
}

pub fn pca_fit<R: AsRef<[f64]>>(rows: &[R], k: usize) -> Result<PcaBasis> {
    let n = rows.len();
    let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
    if k == 0 || k > n.min(d) {
        return Err(Error::invalid(format!("PCA k = {k} outside 1..={}", n.min(d))));
    }
    let (mean, x) = centered(rows)?;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let (eigenvalues, components) = if n.min(d) > EXACT_MAX {
        subspace(&x, k, denom)
    } else if d <= n {
        let (vals, vecs) = sorted_eigen(x.transpose() * &x / denom);
        let comps = (0..k).map(|c| vecs.column(c).iter().copied().collect()).collect();
        (vals[..k].to_vec(), comps)
    } else {
        // Gram trick: eigenvectors u of X X^T map to X^T u.
        let (vals, vecs) = sorted_eigen(&x * x.transpose() / denom);
        let mut comps: Vec<Vec<f64>> = Vec::with_capacity(k);
        for c in 0..k {
            let v: Vec<f64> = (x.transpose() * vecs.column(c)).iter().copied().collect();
            match orthogonalize(v, &comps) {
                Some(v) if vals[c] > 1e-12 * vals[0].abs().max(1e-300) => comps.push(v),
                _ => break,
            }
        }
        (vals[..k].iter().map(|v| v.max(0.0)).collect(), complete(comps, k, d))
    };
    let mut eigenvalues: Vec<f64> = eigenvalues;
    for i in 1..eigenvalues.len() {
        eigenvalues[i] = eigenvalues[i].min(eigenvalues[i - 1]);
    }
    Ok(PcaBasis { mean, components, eigenvalues })
}

/// Block power iteration with a Rayleigh-Ritz finish, seeded deterministically.
fn subspace(x: &DMatrix<f64>, k: usize, denom: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = x.shape();
    let m = (k + 8).min(n.min(d));
    let mut rng = stream(0x5CA1_AB1E);
    let mut v = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0));
    for _ in 0..SUBSPACE_ITERS {
        let w = x.transpose() * (x * &v);
        v = w.qr().q();
    }
    let xv = x * &v;
    let (vals, rot) = sorted_eigen(xv.transpose() * &xv / denom);
    let basis = v * rot;
    let comps = (0..k).map(|c| basis.column(c).iter().copied().collect()).collect();
    (vals[..k].to_vec(), comps)
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = row.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.components.iter().map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            out.iter_mut().zip(c).for_each(|(o, v)| *o += w * v);
        }
        out
    }
}

pub fn pca_project<R: AsRef<[f64]>>(basis: &PcaBasis, rows: &[R]) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| {
            let r = r.as_ref();
            if r.len() != basis.mean.len() {
                return Err(Error::Shape(format!("PCA basis is {}-d, row {}", basis.mean.len(), r.len())));
            }
            Ok(basis.project(r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal_error(b: &PcaBasis) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in b.components.iter().enumerate() {
            for (j, c) in b.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
                worst = worst.max((dot - f64::from(u8::from(i == j))).abs());
            }
        }
        worst
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        let mut rng = stream(3);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let wide = pca_fit(&rows, 4).unwrap();
        assert!(orthonormal_error(&wide) < 1e-8);
        let (_, x) = centered(&rows).unwrap();
        let (vals, vecs) = sorted_eigen(x.transpose() * &x / 5.0);
        for c in 0..4 {
            assert!((wide.eigenvalues[c] - vals[c]).abs() < 1e-10);
            let dot: f64 = wide.components[c].iter().zip(vecs.column(c).iter()).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8);
        }
        assert!(wide.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn subspace_agrees_with_exact_top_axes() {
        let mut rng = stream(5);
        let scales = [9.0, 5.0, 3.0, 1.0];
        let rows: Vec<Vec<f64>> = (0..700)
            .map(|_| {
                let z: Vec<f64> = scales.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect();
                (0..650).map(|j| z[j % 4] * ((j / 4) as f64 * 0.01).cos() + 0.01 * rng.random_range(-1.0..1.0)).collect()
            })
            .collect();
        let approx = pca_fit(&rows, 3).unwrap();
        let (_, x) = centered(&rows).unwrap();
        let (vals, vecs) = sorted_eigen(x.transpose() * &x / 699.0);
        for c in 0..3 {
            assert!((approx.eigenvalues[c] - vals[c]).abs() < 1e-6 * vals[0]);
            let dot: f64 = approx.components[c].iter().zip(vecs.column(c).iter()).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6);
        }
        assert!(orthonormal_error(&approx) < 1e-8);
    }

    #[test]
    fn rank_deficient_wide_data_still_orthonormal() {
        let rows = vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0], vec![3.0, 6.0, 9.0, 12.0]];
        let b = pca_fit(&rows, 3).unwrap();
        assert!(orthonormal_error(&b) < 1e-8);
        assert!(b.eigenvalues[1].abs() < 1e-9);
        assert!(pca_fit(&rows, 4).is_err());
        assert!(pca_fit(&rows, 0).is_err());
    }
}
