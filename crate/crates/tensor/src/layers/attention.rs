//! Pre-norm transformer encoder block without positional encoding:
//!
//! ```text
//! x2 = x  + Dropout(MHA(LN1(x)))
//! y  = x2 + Dropout(W2 · Dropout(GELU(W1 · LN2(x2))))
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::{linear, norm};
use crate::{Result, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSpec {
    pub dim: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub dropout: f64,
}

impl AttentionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim == 0 || self.ff_hidden == 0 {
            return Err(TensorError::InvalidSpec(format!("attention with zero extent: {self:?}")));
        }
        if self.dim % self.heads != 0 {
            return Err(TensorError::InvalidSpec(format!(
                "attention width {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TensorError::InvalidSpec(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Parameter names and shapes, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (d, f) = (self.dim, self.ff_hidden);
        vec![
            ("ln1.gamma", vec![d]),
            ("ln1.beta", vec![d]),
            ("q.weight", vec![d, d]),
            ("q.bias", vec![d]),
            ("k.weight", vec![d, d]),
            ("k.bias", vec![d]),
            ("v.weight", vec![d, d]),
            ("v.bias", vec![d]),
            ("out.weight", vec![d, d]),
            ("out.bias", vec![d]),
            ("ln2.gamma", vec![d]),
            ("ln2.beta", vec![d]),
            ("ff1.weight", vec![f, d]),
            ("ff1.bias", vec![f]),
            ("ff2.weight", vec![d, f]),
            ("ff2.bias", vec![d]),
        ]
    }
}

// Indices into the parameter list above.
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const WK: usize = 4;
const WV: usize = 6;
const WO: usize = 8;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const W2: usize = 14;

pub(crate) struct AttentionCache {
    batch: usize,
    tokens: usize,
    ln1: norm::LayerNormCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights, `[batch, heads, tokens, tokens]`.
    pub attn: Vec<f64>,
    ctx: Vec<f64>,
    mask1: Option<Vec<f64>>,
    ln2: norm::LayerNormCache,
    h2: Vec<f64>,
    f1: Vec<f64>,
    g: Vec<f64>,
    mask2: Option<Vec<f64>>,
    mask3: Option<Vec<f64>>,
}

impl AttentionCache {
    pub fn shape(&self, spec: &AttentionSpec) -> [usize; 4] {
        [self.batch, spec.heads, self.tokens, self.tokens]
    }
}

fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some((0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect())
}

fn apply_mask(v: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
    }
}

/// `rng` is `Some` only in training mode; dropout is the identity otherwise.
pub(crate) fn forward(
    spec: &AttentionSpec,
    params: &[&[f64]],
    x: &[f64],
    batch: usize,
    tokens: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Vec<f64>, AttentionCache) {
    let d = spec.dim;
    let (heads, dh) = (spec.heads, spec.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let n = tokens;

    let (h1, ln1) = norm::layernorm_forward(x, d, params[LN1_G], params[LN1_B]);
    let q = linear::forward(&h1, d, params[WQ], params[WQ + 1], d);
    let k = linear::forward(&h1, d, params[WK], params[WK + 1], d);
    let v = linear::forward(&h1, d, params[WV], params[WV + 1], d);

    let mut attn = vec![0.0; batch * heads * n * n];
    let mut ctx = vec![0.0; batch * n * d];
    for b in 0..batch {
        for hd in 0..heads {
            let a = &mut attn[(b * heads + hd) * n * n..][..n * n];
            let col = hd * dh;
            for i in 0..n {
                let qi = &q[(b * n + i) * d + col..][..dh];
                let row = &mut a[i * n..(i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[(b * n + j) * d + col..][..dh];
                    *s = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                }
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - m).exp();
                    z += *s;
                }
                row.iter_mut().for_each(|s| *s /= z);
                let out = &mut ctx[(b * n + i) * d + col..][..dh];
                for (j, &w) in row.iter().enumerate() {
                    let vj = &v[(b * n + j) * d + col..][..dh];
                    out.iter_mut().zip(vj).for_each(|(o, vv)| *o += w * vv);
                }
            }
        }
    }

    let mut proj = linear::forward(&ctx, d, params[WO], params[WO + 1], d);
    let mask1 = dropout_mask(proj.len(), spec.dropout, rng.as_deref_mut());
    apply_mask(&mut proj, &mask1);
    let x2: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();

    let (h2, ln2) = norm::layernorm_forward(&x2, d, params[LN2_G], params[LN2_B]);
    let f1 = linear::forward(&h2, d, params[W1], params[W1 + 1], spec.ff_hidden);
    let mut g: Vec<f64> = f1.iter().map(|&v| Activation::Gelu.apply(v)).collect();
    let mask2 = dropout_mask(g.len(), spec.dropout, rng.as_deref_mut());
    apply_mask(&mut g, &mask2);
    let mut f2 = linear::forward(&g, spec.ff_hidden, params[W2], params[W2 + 1], d);
    let mask3 = dropout_mask(f2.len(), spec.dropout, rng.as_deref_mut());
    apply_mask(&mut f2, &mask3);
    let y: Vec<f64> = x2.iter().zip(&f2).map(|(a, b)| a + b).collect();

    let cache = AttentionCache {
        batch,
        tokens,
        ln1,
        h1,
        q,
        k,
        v,
        attn,
        ctx,
        mask1,
        ln2,
        h2,
        f1,
        g,
        mask2,
        mask3,
    };
    (y, cache)
}

/// Returns the input gradient; parameter gradients go to `grads` (same
/// order as [`AttentionSpec::param_shapes`]) when given.
pub(crate) fn backward(
    spec: &AttentionSpec,
    params: &[&[f64]],
    cache: &AttentionCache,
    gy: &[f64],
    mut grads: Option<&mut [Vec<f64>]>,
) -> Vec<f64> {
    let d = spec.dim;
    let f = spec.ff_hidden;
    let (heads, dh) = (spec.heads, spec.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let (batch, n) = (cache.batch, cache.tokens);

    macro_rules! pair {
        ($i:expr) => {
            grads.as_deref_mut().map(|g| {
                let (a, b) = g.split_at_mut($i + 1);
                (a[$i].as_mut_slice(), b[0].as_mut_slice())
            })
        };
    }

    // feed-forward branch
    let mut gf2 = gy.to_vec();
    apply_mask(&mut gf2, &cache.mask3);
    let mut gg = linear::backward(&cache.g, f, params[W2], d, &gf2, pair!(W2), true).unwrap();
    apply_mask(&mut gg, &cache.mask2);
    let gf1: Vec<f64> = gg
        .iter()
        .zip(&cache.f1)
        .map(|(g, &z)| g * Activation::Gelu.derivative(z))
        .collect();
    let gh2 = linear::backward(&cache.h2, d, params[W1], f, &gf1, pair!(W1), true).unwrap();
    let gln2 = norm::layernorm_backward(&cache.ln2, d, params[LN2_G], &gh2, pair!(LN2_G));
    let gx2: Vec<f64> = gy.iter().zip(&gln2).map(|(a, b)| a + b).collect();

    // attention branch
    let mut gproj = gx2.clone();
    apply_mask(&mut gproj, &cache.mask1);
    let gctx = linear::backward(&cache.ctx, d, params[WO], d, &gproj, pair!(WO), true).unwrap();

    let mut gq = vec![0.0; batch * n * d];
    let mut gk = vec![0.0; batch * n * d];
    let mut gv = vec![0.0; batch * n * d];
    let mut ga = vec![0.0; n];
    for b in 0..batch {
        for hd in 0..heads {
            let a = &cache.attn[(b * heads + hd) * n * n..][..n * n];
            let col = hd * dh;
            for i in 0..n {
                let go = &gctx[(b * n + i) * d + col..][..dh];
                let arow = &a[i * n..(i + 1) * n];
                for j in 0..n {
                    let vj = &cache.v[(b * n + j) * d + col..][..dh];
                    ga[j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                    let gvj = &mut gv[(b * n + j) * d + col..][..dh];
                    gvj.iter_mut().zip(go).for_each(|(t, g)| *t += arow[j] * g);
                }
                let dot: f64 = arow.iter().zip(&ga).map(|(x, y)| x * y).sum();
                for j in 0..n {
                    let gs = arow[j] * (ga[j] - dot) * scale;
                    if gs == 0.0 {
                        continue;
                    }
                    let qi_off = (b * n + i) * d + col;
                    let kj_off = (b * n + j) * d + col;
                    for t in 0..dh {
                        gq[qi_off + t] += gs * cache.k[kj_off + t];
                        gk[kj_off + t] += gs * cache.q[qi_off + t];
                    }
                }
            }
        }
    }

    let mut gh1 = linear::backward(&cache.h1, d, params[WQ], d, &gq, pair!(WQ), true).unwrap();
    let gk_in = linear::backward(&cache.h1, d, params[WK], d, &gk, pair!(WK), true).unwrap();
    let gv_in = linear::backward(&cache.h1, d, params[WV], d, &gv, pair!(WV), true).unwrap();
    for ((a, b), c) in gh1.iter_mut().zip(&gk_in).zip(&gv_in) {
        *a += b + c;
    }
    let gln1 = norm::layernorm_backward(&cache.ln1, d, params[LN1_G], &gh1, pair!(LN1_G));
    gx2.iter().zip(&gln1).map(|(a, b)| a + b).collect()
}
