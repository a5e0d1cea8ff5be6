use super::kernels::{centered_sq, dot, sum};

pub const BN_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

pub(crate) struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

/// Per-channel normalisation over `[batch, channels, h, w]`. In training mode
/// batch statistics are used and the running estimates are updated in place.
pub(crate) fn batchnorm_forward(
    x: &[f64],
    xs: [usize; 4],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    train: bool,
) -> (Vec<f64>, BatchNormCache) {
    let [b, c, h, w] = xs;
    let plane = h * w;
    let n = (b * plane) as f64;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let planes = (0..b).map(|bi| (bi * c + ch) * plane);
        let (mean, var) = if train {
            let mean = planes.clone().map(|o| sum(&x[o..o + plane])).sum::<f64>() / n;
            let var = planes.clone().map(|o| centered_sq(&x[o..o + plane], mean)).sum::<f64>() / n;
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            running_mean[ch] = (1.0 - BN_MOMENTUM) * running_mean[ch] + BN_MOMENTUM * mean;
            running_var[ch] = (1.0 - BN_MOMENTUM) * running_var[ch] + BN_MOMENTUM * unbiased;
            (mean, var)
        } else {
            (running_mean[ch], running_var[ch])
        };
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[ch] = is;
        let (g, bt) = (gamma[ch], beta[ch]);
        for o in planes {
            let xs = &x[o..o + plane];
            let zs = &mut xhat[o..o + plane];
            for (z, v) in zs.iter_mut().zip(xs) {
                *z = (v - mean) * is;
            }
            for (out, z) in y[o..o + plane].iter_mut().zip(zs.iter()) {
                *out = g * z + bt;
            }
        }
    }
    (y, BatchNormCache { xhat, inv_std, train })
}

pub(crate) fn batchnorm_backward(
    cache: &BatchNormCache,
    xs: [usize; 4],
    gamma: &[f64],
    gy: &[f64],
    mut grads: Option<(&mut [f64], &mut [f64])>,
    need_input: bool,
) -> Option<Vec<f64>> {
    let [b, c, h, w] = xs;
    let plane = h * w;
    let n = (b * plane) as f64;
    let mut gx = need_input.then(|| vec![0.0; gy.len()]);
    for ch in 0..c {
        let offsets: Vec<usize> = (0..b).map(|bi| (bi * c + ch) * plane).collect();
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for &o in &offsets {
            sum_g += sum(&gy[o..o + plane]);
            sum_gx += dot(&gy[o..o + plane], &cache.xhat[o..o + plane]);
        }
        if let Some((gg, gb)) = grads.as_mut() {
            gg[ch] += sum_gx;
            gb[ch] += sum_g;
        }
        if let Some(gx) = gx.as_deref_mut() {
            let k = gamma[ch] * cache.inv_std[ch];
            let (mg, mgx) = if cache.train { (sum_g / n, sum_gx / n) } else { (0.0, 0.0) };
            for &o in &offsets {
                let dst = &mut gx[o..o + plane];
                for ((d, g), xh) in dst.iter_mut().zip(&gy[o..o + plane]).zip(&cache.xhat[o..o + plane]) {
                    *d = k * (g - mg - xh * mgx);
                }
            }
        }
    }
    gx
}

pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalises each row of length `d`.
pub(crate) fn layernorm_forward(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let z = (row[j] - mean) * is;
            xhat[r * d + j] = z;
            y[r * d + j] = gamma[j] * z + beta[j];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layernorm_backward(
    cache: &LayerNormCache,
    d: usize,
    gamma: &[f64],
    gy: &[f64],
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let rows = gy.len() / d;
    let mut gx = vec![0.0; gy.len()];
    let mut gxhat = vec![0.0; d];
    for r in 0..rows {
        let g = &gy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        if let Some((gg, gb)) = grads.as_mut() {
            for j in 0..d {
                gg[j] += g[j] * xh[j];
                gb[j] += g[j];
            }
        }
        for j in 0..d {
            gxhat[j] = g[j] * gamma[j];
        }
        let s1: f64 = gxhat.iter().sum();
        let s2: f64 = gxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let k = cache.inv_std[r] / d as f64;
        for j in 0..d {
            gx[r * d + j] = k * (d as f64 * gxhat[j] - s1 - xh[j] * s2);
        }
    }
    gx
}
