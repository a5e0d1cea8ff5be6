use crate::{Result, TensorError};

/// Average pooling window over the last two axes (no padding).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolSpec {
    pub fn new(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        PoolSpec { kernel, stride }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(TensorError::InvalidSpec(format!("pooling with zero extent: {self:?}")));
        }
        if h < self.kernel.0 || w < self.kernel.1 {
            return Err(TensorError::InvalidSpec(format!(
                "pooling window {:?} larger than input {h}x{w}",
                self.kernel
            )));
        }
        Ok(((h - self.kernel.0) / self.stride.0 + 1, (w - self.kernel.1) / self.stride.1 + 1))
    }
}

pub(crate) fn forward(spec: &PoolSpec, x: &[f64], xs: [usize; 4]) -> (Vec<f64>, [usize; 4]) {
    let [b, c, h, w] = xs;
    let (oh, ow) = spec.output_hw(h, w).expect("pool geometry validated at construction");
    let (kh, kw) = spec.kernel;
    let scale = 1.0 / (kh * kw) as f64;
    let mut y = vec![0.0; b * c * oh * ow];
    for p in 0..b * c {
        let inp = &x[p * h * w..][..h * w];
        let out = &mut y[p * oh * ow..][..oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for di in 0..kh {
                    let row = &inp[(i * spec.stride.0 + di) * w..];
                    s += row[j * spec.stride.1..j * spec.stride.1 + kw].iter().sum::<f64>();
                }
                out[i * ow + j] = s * scale;
            }
        }
    }
    (y, [b, c, oh, ow])
}

pub(crate) fn backward(spec: &PoolSpec, xs: [usize; 4], gy: &[f64]) -> Vec<f64> {
    let [b, c, h, w] = xs;
    let (oh, ow) = spec.output_hw(h, w).expect("pool geometry validated at construction");
    let (kh, kw) = spec.kernel;
    let scale = 1.0 / (kh * kw) as f64;
    let mut gx = vec![0.0; b * c * h * w];
    for p in 0..b * c {
        let g = &gy[p * oh * ow..][..oh * ow];
        let out = &mut gx[p * h * w..][..h * w];
        for i in 0..oh {
            for j in 0..ow {
                let v = g[i * ow + j] * scale;
                for di in 0..kh {
                    let start = (i * spec.stride.0 + di) * w + j * spec.stride.1;
                    out[start..start + kw].iter_mut().for_each(|d| *d += v);
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_windows() {
        let spec = PoolSpec::new((1, 2), (1, 2));
        let (y, ys) = forward(&spec, &[1.0, 3.0, 5.0, 7.0, 9.0], [1, 1, 1, 5]);
        assert_eq!(ys, [1, 1, 1, 2]);
        assert_eq!(y, vec![2.0, 6.0]);
    }

    #[test]
    fn overlapping_extent() {
        // 200 samples, window 75 stride 15 -> 9 positions
        assert_eq!(PoolSpec::new((1, 75), (1, 15)).output_hw(1, 200).unwrap(), (1, 9));
    }
}
