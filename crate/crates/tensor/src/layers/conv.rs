use super::kernels::{dot, multiversion, sum};
use crate::{Result, TensorError};

/// Grouped 2-D cross-correlation over `[batch, channels, height, width]`.
///
/// Padding is zero padding given as `(before, after)` per axis so that even
/// "same" kernels can be expressed.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad_h: (usize, usize),
    pub pad_w: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            pad_h: (0, 0),
            pad_w: (0, 0),
            groups: 1,
            bias: true,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    /// "Same" padding along the time (width) axis; the extra sample of an
    /// even kernel goes after.
    pub fn same_time(mut self) -> Self {
        let total = self.kernel.1 - 1;
        self.pad_w = (total / 2, total - total / 2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TensorError::InvalidSpec(m));
        if self.groups == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad(format!("conv2d with zero channels or groups: {self:?}"));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return bad(format!(
                "conv2d groups {} must divide in {} and out {}",
                self.groups, self.in_channels, self.out_channels
            ));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return bad(format!("conv2d kernel and stride must be positive: {self:?}"));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + self.pad_h.0 + self.pad_h.1;
        let pw = w + self.pad_w.0 + self.pad_w.1;
        if ph < self.kernel.0 || pw < self.kernel.1 {
            return Err(TensorError::InvalidSpec(format!(
                "conv2d kernel {:?} larger than padded input {}x{}",
                self.kernel, ph, pw
            )));
        }
        Ok(((ph - self.kernel.0) / self.stride.0 + 1, (pw - self.kernel.1) / self.stride.1 + 1))
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels / self.groups, self.kernel.0, self.kernel.1]
    }
}

/// Output positions `o` in `[lo, hi)` for which `o*stride + tap - pad` is a
/// valid input index.
#[inline]
fn tap_range(out_len: usize, in_len: usize, stride: usize, pad: usize, tap: usize) -> (usize, usize) {
    let shift = tap as isize - pad as isize;
    let lo = if shift >= 0 { 0 } else { ((-shift) as usize).div_ceil(stride) };
    let limit = in_len as isize - shift;
    if limit <= 0 {
        return (0, 0);
    }
    let hi = (limit as usize).div_ceil(stride).min(out_len);
    (lo.min(hi), hi)
}

/// `out[o] += sum_k w[k] * pin[o + k]` over a zero-padded input row.
#[inline(always)]
fn corr_padded(out: &mut [f64], pin: &[f64], w: &[f64]) {
    const L: usize = 16;
    let kw = w.len();
    let mut o = 0;
    while o + L <= out.len() {
        let mut acc = [0.0; L];
        for (k, &wv) in w.iter().enumerate() {
            let src = &pin[o + k..o + k + L];
            for l in 0..L {
                acc[l] += wv * src[l];
            }
        }
        for l in 0..L {
            out[o + l] += acc[l];
        }
        o += L;
    }
    for (oo, d) in out.iter_mut().enumerate().skip(o) {
        let mut a = 0.0;
        for k in 0..kw {
            a += w[k] * pin[oo + k];
        }
        *d += a;
    }
}

/// `gw[k] += sum_o g[o] * pin[o + k]` over a zero-padded input row.
#[inline(always)]
fn corr_padded_weight(gw: &mut [f64], pin: &[f64], g: &[f64]) {
    const L: usize = 16;
    let mut k = 0;
    while k + L <= gw.len() {
        let mut acc = [0.0; L];
        for (o, &gv) in g.iter().enumerate() {
            let src = &pin[o + k..o + k + L];
            for l in 0..L {
                acc[l] += gv * src[l];
            }
        }
        for l in 0..L {
            gw[k + l] += acc[l];
        }
        k += L;
    }
    for (kk, d) in gw.iter_mut().enumerate().skip(k) {
        *d += dot(g, &pin[kk..kk + g.len()]);
    }
}

/// Copies `row` into `buf` with `before` / `after` zeros around it.
#[inline(always)]
fn pad_row<'a>(buf: &'a mut Vec<f64>, row: &[f64], before: usize, after: usize) -> &'a [f64] {
    buf.clear();
    buf.resize(before, 0.0);
    buf.extend_from_slice(row);
    buf.resize(before + row.len() + after, 0.0);
    buf
}

/// Stride-1 rows with kernels this wide go through the padded, tiled path.
const TILED_MIN_KW: usize = 8;

struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    cin_g: usize,
    cout_g: usize,
}

fn geometry(spec: &Conv2dSpec, xs: [usize; 4]) -> Geometry {
    let [batch, cin, h, w] = xs;
    let (oh, ow) = spec.output_hw(h, w).expect("conv geometry validated at construction");
    Geometry {
        batch,
        cin,
        h,
        w,
        oh,
        ow,
        cin_g: cin / spec.groups,
        cout_g: spec.out_channels / spec.groups,
    }
}

#[inline(always)]
fn forward_body(
    spec: &Conv2dSpec,
    x: &[f64],
    xs: [usize; 4],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> (Vec<f64>, [usize; 4]) {
    let g = geometry(spec, xs);
    let cout = spec.out_channels;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = (spec.pad_h.0, spec.pad_w.0);
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut y = vec![0.0; g.batch * cout * plane_out];
    let tiled = sw == 1 && kw >= TILED_MIN_KW;
    let mut scratch = Vec::new();

    for b in 0..g.batch {
        for oc in 0..cout {
            let group = oc / g.cout_g;
            let out = &mut y[(b * cout + oc) * plane_out..][..plane_out];
            if let Some(bias) = bias {
                out.fill(bias[oc]);
            }
            for icl in 0..g.cin_g {
                let ic = group * g.cin_g + icl;
                let inp = &x[(b * g.cin + ic) * plane_in..][..plane_in];
                for ki in 0..kh {
                    let (oh_lo, oh_hi) = tap_range(g.oh, g.h, sh, ph, ki);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * sh + ki - ph;
                        let in_row = &inp[ih * g.w..][..g.w];
                        let out_row = &mut out[oh * g.ow..][..g.ow];
                        if tiled {
                            let wrow = &weight[((oc * g.cin_g + icl) * kh + ki) * kw..][..kw];
                            let pin = pad_row(&mut scratch, in_row, pw, spec.pad_w.1);
                            corr_padded(out_row, pin, wrow);
                            continue;
                        }
                        for kj in 0..kw {
                            let wv = weight[((oc * g.cin_g + icl) * kh + ki) * kw + kj];
                            let (lo, hi) = tap_range(g.ow, g.w, sw, pw, kj);
                            if sw == 1 {
                                let off = lo + kj - pw;
                                for (o, i) in out_row[lo..hi].iter_mut().zip(&in_row[off..off + hi - lo]) {
                                    *o += wv * i;
                                }
                            } else {
                                for ow in lo..hi {
                                    out_row[ow] += wv * in_row[ow * sw + kj - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (y, [g.batch, cout, g.oh, g.ow])
}

/// Accumulates weight/bias gradients (when requested) and returns the input
/// gradient (when requested).
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn backward_body(
    spec: &Conv2dSpec,
    x: &[f64],
    xs: [usize; 4],
    weight: &[f64],
    gy: &[f64],
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
    need_input: bool,
) -> Option<Vec<f64>> {
    let g = geometry(spec, xs);
    let cout = spec.out_channels;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = (spec.pad_h.0, spec.pad_w.0);
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let (mut gw, mut gb) = (gw, gb);
    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    let tiled = sw == 1 && kw >= TILED_MIN_KW;
    let mut scratch = Vec::new();

    for b in 0..g.batch {
        for oc in 0..cout {
            let group = oc / g.cout_g;
            let gout = &gy[(b * cout + oc) * plane_out..][..plane_out];
            if let Some(gb) = gb.as_deref_mut() {
                gb[oc] += sum(gout);
            }
            for icl in 0..g.cin_g {
                let ic = group * g.cin_g + icl;
                let base = (b * g.cin + ic) * plane_in;
                let inp = &x[base..][..plane_in];
                for ki in 0..kh {
                    let (oh_lo, oh_hi) = tap_range(g.oh, g.h, sh, ph, ki);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * sh + ki - ph;
                        let in_row = &inp[ih * g.w..][..g.w];
                        let gout_row = &gout[oh * g.ow..][..g.ow];
                        if tiled {
                            if let Some(gw) = gw.as_deref_mut() {
                                let wbase = ((oc * g.cin_g + icl) * kh + ki) * kw;
                                let pin = pad_row(&mut scratch, in_row, pw, spec.pad_w.1);
                                corr_padded_weight(&mut gw[wbase..wbase + kw], pin, gout_row);
                            }
                        }
                        for kj in 0..kw {
                            let widx = ((oc * g.cin_g + icl) * kh + ki) * kw + kj;
                            let (lo, hi) = tap_range(g.ow, g.w, sw, pw, kj);
                            if lo >= hi {
                                continue;
                            }
                            if let (false, Some(gw)) = (tiled, gw.as_deref_mut()) {
                                let acc: f64 = if sw == 1 {
                                    let off = lo + kj - pw;
                                    dot(&gout_row[lo..hi], &in_row[off..off + hi - lo])
                                } else {
                                    (lo..hi).map(|ow| gout_row[ow] * in_row[ow * sw + kj - pw]).sum()
                                };
                                gw[widx] += acc;
                            }
                            if let Some(gx) = gx.as_deref_mut() {
                                let wv = weight[widx];
                                let gx_row = &mut gx[base + ih * g.w..][..g.w];
                                if sw == 1 {
                                    let off = lo + kj - pw;
                                    for (d, s) in gx_row[off..off + hi - lo].iter_mut().zip(&gout_row[lo..hi]) {
                                        *d += wv * s;
                                    }
                                } else {
                                    for ow in lo..hi {
                                        gx_row[ow * sw + kj - pw] += wv * gout_row[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

multiversion!(forward, (Vec<f64>, [usize; 4]), (spec: &Conv2dSpec, x: &[f64], xs: [usize; 4], weight: &[f64], bias: Option<&[f64]>), forward_body);

multiversion!(
    backward,
    Option<Vec<f64>>,
    (
        spec: &Conv2dSpec,
        x: &[f64],
        xs: [usize; 4],
        weight: &[f64],
        gy: &[f64],
        gw: Option<&mut [f64]>,
        gb: Option<&mut [f64]>,
        need_input: bool
    ),
    backward_body
);

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit zero padding.
    fn reference(spec: &Conv2dSpec, x: &[f64], xs: [usize; 4], w: &[f64]) -> Vec<f64> {
        let [b, cin, h, wd] = xs;
        let (oh, ow) = spec.output_hw(h, wd).unwrap();
        let (kh, kw) = spec.kernel;
        let (cin_g, cout_g) = (cin / spec.groups, spec.out_channels / spec.groups);
        let mut y = vec![0.0; b * spec.out_channels * oh * ow];
        for bi in 0..b {
            for oc in 0..spec.out_channels {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for icl in 0..cin_g {
                            let ic = oc / cout_g * cin_g + icl;
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let r = (i * spec.stride.0 + ki) as isize - spec.pad_h.0 as isize;
                                    let c = (j * spec.stride.1 + kj) as isize - spec.pad_w.0 as isize;
                                    if r < 0 || c < 0 || r >= h as isize || c >= wd as isize {
                                        continue;
                                    }
                                    acc += w[((oc * cin_g + icl) * kh + ki) * kw + kj]
                                        * x[((bi * cin + ic) * h + r as usize) * wd + c as usize];
                                }
                            }
                        }
                        y[((bi * spec.out_channels + oc) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn wide_kernels_match_reference() {
        for (kw, wd, same) in [(8, 8, true), (16, 40, true), (17, 33, false), (64, 200, true), (25, 60, false)] {
            let spec = Conv2dSpec::new(2, 4, (2, kw)).with_groups(2).with_bias(false);
            let spec = if same { spec.same_time() } else { spec };
            let xs = [2, 2, 3, wd];
            let x: Vec<f64> = (0..xs.iter().product()).map(|i| ((i * 7919) % 113) as f64 / 50.0 - 1.0).collect();
            let w: Vec<f64> = (0..spec.weight_shape().iter().product()).map(|i| ((i * 31) % 17) as f64 / 9.0 - 0.9).collect();
            let (y, _) = forward(&spec, &x, xs, &w, None);
            let r = reference(&spec, &x, xs, &w);
            for (a, b) in y.iter().zip(&r) {
                assert!((a - b).abs() < 1e-12, "kw {kw}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn hand_convolution() {
        // [1,2,3,4] * [1,1] -> [3,5,7]
        let spec = Conv2dSpec::new(1, 1, (1, 2)).with_bias(false);
        let (y, ys) = forward(&spec, &[1.0, 2.0, 3.0, 4.0], [1, 1, 1, 4], &[1.0, 1.0], None);
        assert_eq!(ys, [1, 1, 1, 3]);
        assert_eq!(y, vec![3.0, 5.0, 7.0]);
    }

    #[test]
    fn pointwise_identity() {
        let spec = Conv2dSpec::new(1, 1, (1, 1));
        let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let (y, ys) = forward(&spec, &x, [2, 1, 2, 3], &[1.0], Some(&[0.0]));
        assert_eq!(ys, [2, 1, 2, 3]);
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_keeps_time_extent() {
        for k in [1, 2, 3, 25, 64] {
            let spec = Conv2dSpec::new(1, 1, (1, k)).same_time();
            assert_eq!(spec.output_hw(4, 200).unwrap(), (4, 200), "kernel {k}");
        }
    }

    #[test]
    fn same_padding_matches_explicit_zero_pad() {
        // kernel 4: pad (1, 2)
        let spec = Conv2dSpec::new(1, 1, (1, 4)).with_bias(false).same_time();
        assert_eq!(spec.pad_w, (1, 2));
        let x = [1.0, 2.0, 3.0];
        let w = [1.0, 10.0, 100.0, 1000.0];
        let (y, _) = forward(&spec, &x, [1, 1, 1, 3], &w, None);
        // padded: [0,1,2,3,0,0]
        assert_eq!(y, vec![10.0 + 200.0 + 3000.0, 1.0 + 20.0 + 300.0, 2.0 + 30.0]);
    }

    #[test]
    fn depthwise_isolates_groups() {
        let spec = Conv2dSpec::new(3, 6, (1, 3)).with_groups(3).same_time();
        let mut x = vec![0.0; 3 * 5];
        for t in 0..5 {
            x[5 + t] = (t + 1) as f64; // only channel 1 non-zero
        }
        let w = vec![0.3; 6 * 3];
        let (y, _) = forward(&spec, &x, [1, 3, 1, 5], &w, Some(&[0.0; 6]));
        for oc in 0..6 {
            let nz = y[oc * 5..(oc + 1) * 5].iter().any(|v| *v != 0.0);
            assert_eq!(nz, oc / 2 == 1, "output channel {oc}");
        }
    }

    #[test]
    fn strided_output_extent() {
        let spec = Conv2dSpec::new(1, 1, (1, 3)).with_stride((1, 2));
        assert_eq!(spec.output_hw(1, 7).unwrap(), (1, 3));
        let (y, _) = forward(&spec, &[1., 2., 3., 4., 5., 6., 7.], [1, 1, 1, 7], &[1., 1., 1.], Some(&[0.0]));
        assert_eq!(y, vec![6.0, 12.0, 18.0]);
    }

    #[test]
    fn rejects_bad_groups_and_oversized_kernel() {
        assert!(Conv2dSpec::new(4, 6, (1, 3)).with_groups(4).validate().is_err());
        assert!(Conv2dSpec::new(1, 1, (3, 1)).output_hw(2, 5).is_err());
    }
}
