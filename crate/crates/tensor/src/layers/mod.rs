//! Layer descriptions and their forward/backward kernels.

mod activation;
mod attention;
mod conv;
mod kernels;
mod linear;
mod norm;
mod pool;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use activation::Activation;
pub use attention::AttentionSpec;
pub use conv::Conv2dSpec;
pub use norm::{BN_MOMENTUM, NORM_EPS};
pub use pool::PoolSpec;

pub(crate) use attention::AttentionCache;

use crate::{NamedTensor, Result, Tensor, TensorError};

/// One step of a sequential model. Shapes below exclude the batch axis.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// `[C, H, W] -> [C', H', W']`
    Conv2d(Conv2dSpec),
    /// Per-channel batch normalisation of `[C, H, W]`.
    BatchNorm { channels: usize },
    Activation(Activation),
    /// Average pooling of `[C, H, W]`.
    Pool(PoolSpec),
    Dropout { rate: f64 },
    /// `[in] -> [out]`
    Linear { inputs: usize, outputs: usize },
    /// `[N, D] -> [N, D]`
    AttentionEncoder(AttentionSpec),
    /// `[...] -> [prod]`
    Flatten,
    /// `[E, 1, W] -> [W, E]`: conv feature maps to a token sequence.
    Rearrange,
}

/// Layer kind names as used in configs and summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Activation,
    Pool,
    Dropout,
    Linear,
    AttentionEncoder,
    Flatten,
    Rearrange,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Activation => "activation",
            LayerKind::Pool => "pooling",
            LayerKind::Dropout => "dropout",
            LayerKind::Linear => "linear",
            LayerKind::AttentionEncoder => "attention-encoder",
            LayerKind::Flatten => "flatten",
            LayerKind::Rearrange => "rearrange",
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        const ALL: [LayerKind; 9] = [
            LayerKind::Conv2d,
            LayerKind::BatchNorm,
            LayerKind::Activation,
            LayerKind::Pool,
            LayerKind::Dropout,
            LayerKind::Linear,
            LayerKind::AttentionEncoder,
            LayerKind::Flatten,
            LayerKind::Rearrange,
        ];
        ALL.into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::InvalidSpec(format!("unknown layer kind `{s}`")))
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv2d(_) => LayerKind::Conv2d,
            LayerSpec::BatchNorm { .. } => LayerKind::BatchNorm,
            LayerSpec::Activation(_) => LayerKind::Activation,
            LayerSpec::Pool(_) => LayerKind::Pool,
            LayerSpec::Dropout { .. } => LayerKind::Dropout,
            LayerSpec::Linear { .. } => LayerKind::Linear,
            LayerSpec::AttentionEncoder(_) => LayerKind::AttentionEncoder,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::Rearrange => LayerKind::Rearrange,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let rank = |r: usize| -> Result<()> {
            if input.len() != r {
                return Err(TensorError::InvalidSpec(format!(
                    "{} expects rank-{r} samples, got shape {input:?}",
                    self.kind().name()
                )));
            }
            Ok(())
        };
        match self {
            LayerSpec::Conv2d(c) => {
                c.validate()?;
                rank(3)?;
                if input[0] != c.in_channels {
                    return Err(TensorError::shape("conv2d input channels", &[c.in_channels], &input[..1]));
                }
                let (h, w) = c.output_hw(input[1], input[2])?;
                Ok(vec![c.out_channels, h, w])
            }
            LayerSpec::BatchNorm { channels } => {
                rank(3)?;
                if input[0] != *channels {
                    return Err(TensorError::shape("batchnorm channels", &[*channels], &input[..1]));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Activation(_) => Ok(input.to_vec()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(TensorError::InvalidSpec(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Pool(p) => {
                rank(3)?;
                let (h, w) = p.output_hw(input[1], input[2])?;
                Ok(vec![input[0], h, w])
            }
            LayerSpec::Linear { inputs, outputs } => {
                rank(1)?;
                if input[0] != *inputs {
                    return Err(TensorError::shape("linear inputs", &[*inputs], input));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::AttentionEncoder(a) => {
                a.validate()?;
                rank(2)?;
                if input[1] != a.dim {
                    return Err(TensorError::shape("attention width", &[a.dim], &input[1..]));
                }
                if input[0] == 0 {
                    return Err(TensorError::InvalidSpec("attention over zero tokens".into()));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Rearrange => {
                rank(3)?;
                if input[1] != 1 {
                    return Err(TensorError::InvalidSpec(format!(
                        "rearrange needs a collapsed height axis, got {input:?}"
                    )));
                }
                Ok(vec![input[2], input[0]])
            }
        }
    }

    /// Trainable parameter names (relative to the layer) and shapes.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            LayerSpec::Conv2d(c) => {
                let mut v = vec![("weight".to_string(), c.weight_shape())];
                if c.bias {
                    v.push(("bias".into(), vec![c.out_channels]));
                }
                v
            }
            LayerSpec::BatchNorm { channels } => {
                vec![("gamma".into(), vec![*channels]), ("beta".into(), vec![*channels])]
            }
            LayerSpec::Linear { inputs, outputs } => {
                vec![("weight".into(), vec![*outputs, *inputs]), ("bias".into(), vec![*outputs])]
            }
            LayerSpec::AttentionEncoder(a) => {
                a.param_shapes().into_iter().map(|(n, s)| (n.to_string(), s)).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batchnorm running statistics).
    pub fn buffer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            LayerSpec::BatchNorm { channels } => vec![
                ("running_mean".into(), vec![*channels]),
                ("running_var".into(), vec![*channels]),
            ],
            _ => Vec::new(),
        }
    }

    /// Default initialisation: uniform(+-1/sqrt(fan_in)) for weights and
    /// biases, ones/zeros for normalisation scales/shifts.
    pub(crate) fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        let uniform = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape.to_vec(), data).expect("init shape")
        };
        match self {
            LayerSpec::Conv2d(c) => {
                let fan_in = c.in_channels / c.groups * c.kernel.0 * c.kernel.1;
                self.param_shapes().iter().map(|(_, s)| uniform(s, fan_in, rng)).collect()
            }
            LayerSpec::BatchNorm { channels } => {
                vec![Tensor::full(&[*channels], 1.0), Tensor::zeros(&[*channels])]
            }
            LayerSpec::Linear { inputs, .. } => {
                self.param_shapes().iter().map(|(_, s)| uniform(s, *inputs, rng)).collect()
            }
            LayerSpec::AttentionEncoder(a) => a
                .param_shapes()
                .into_iter()
                .map(|(name, shape)| {
                    if name.starts_with("ln") {
                        let v = if name.ends_with("gamma") { 1.0 } else { 0.0 };
                        Tensor::full(&shape, v)
                    } else {
                        let fan_in = if name.starts_with("ff2") { a.ff_hidden } else { a.dim };
                        uniform(&shape, fan_in, rng)
                    }
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    pub(crate) fn init_buffers(&self) -> Vec<Tensor> {
        match self {
            LayerSpec::BatchNorm { channels } => {
                vec![Tensor::zeros(&[*channels]), Tensor::full(&[*channels], 1.0)]
            }
            _ => Vec::new(),
        }
    }
}

/// Per-layer state recorded by a forward pass for use in backward.
pub(crate) enum Cache {
    Conv { input: Vec<f64>, shape: [usize; 4] },
    BatchNorm { inner: norm::BatchNormCache, shape: [usize; 4] },
    Activation { input: Vec<f64> },
    Pool { shape: [usize; 4] },
    Dropout { mask: Option<Vec<f64>> },
    Linear { input: Vec<f64> },
    Attention(Box<AttentionCache>),
    Flatten,
    Rearrange { shape: [usize; 4] },
}

fn as4(shape: &[usize]) -> [usize; 4] {
    [shape[0], shape[1], shape[2], shape[3]]
}

/// Runs one layer on a batched tensor. `rng` is `Some` in training mode.
pub(crate) fn forward(
    spec: &LayerSpec,
    x: &Tensor,
    params: &[NamedTensor],
    buffers: Option<&mut [NamedTensor]>,
    train: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, Cache)> {
    let xs = x.shape();
    let batch = xs[0];
    let p = |i: usize| params[i].tensor.data();
    let out = match spec {
        LayerSpec::Conv2d(c) => {
            let bias = c.bias.then(|| p(1));
            let (y, ys) = conv::forward(c, x.data(), as4(xs), p(0), bias);
            (Tensor::new(ys.to_vec(), y)?, Cache::Conv { input: x.data().to_vec(), shape: as4(xs) })
        }
        LayerSpec::BatchNorm { .. } => {
            let (y, inner) = match buffers {
                Some(buf) => {
                    let (rm, rv) = buf.split_at_mut(1);
                    norm::batchnorm_forward(
                        x.data(),
                        as4(xs),
                        p(0),
                        p(1),
                        rm[0].tensor.data_mut(),
                        rv[0].tensor.data_mut(),
                        train,
                    )
                }
                None => {
                    return Err(TensorError::InvalidArgument("batchnorm needs its running buffers".into()));
                }
            };
            (Tensor::new(xs.to_vec(), y)?, Cache::BatchNorm { inner, shape: as4(xs) })
        }
        LayerSpec::Activation(a) => {
            let y = x.data().iter().map(|&v| a.apply(v)).collect();
            (Tensor::new(xs.to_vec(), y)?, Cache::Activation { input: x.data().to_vec() })
        }
        LayerSpec::Pool(ps) => {
            let (y, ys) = pool::forward(ps, x.data(), as4(xs));
            (Tensor::new(ys.to_vec(), y)?, Cache::Pool { shape: as4(xs) })
        }
        LayerSpec::Dropout { rate } => match rng {
            Some(rng) if *rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> =
                    (0..x.numel()).map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep }).collect();
                let y = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                (Tensor::new(xs.to_vec(), y)?, Cache::Dropout { mask: Some(mask) })
            }
            _ => (x.detached(), Cache::Dropout { mask: None }),
        },
        LayerSpec::Linear { inputs, outputs } => {
            let y = linear::forward(x.data(), *inputs, p(0), p(1), *outputs);
            (Tensor::new(vec![batch, *outputs], y)?, Cache::Linear { input: x.data().to_vec() })
        }
        LayerSpec::AttentionEncoder(a) => {
            let ps: Vec<&[f64]> = params.iter().map(|t| t.tensor.data()).collect();
            let (y, cache) = attention::forward(a, &ps, x.data(), batch, xs[1], if train { rng } else { None });
            (Tensor::new(xs.to_vec(), y)?, Cache::Attention(Box::new(cache)))
        }
        LayerSpec::Flatten => {
            let n = x.numel() / batch.max(1);
            (x.detached().reshape(&[batch, n])?, Cache::Flatten)
        }
        LayerSpec::Rearrange => {
            let [b, e, _, w] = as4(xs);
            let mut y = vec![0.0; x.numel()];
            for bi in 0..b {
                for ei in 0..e {
                    for t in 0..w {
                        y[(bi * w + t) * e + ei] = x.data()[(bi * e + ei) * w + t];
                    }
                }
            }
            (Tensor::new(vec![b, w, e], y)?, Cache::Rearrange { shape: as4(xs) })
        }
    };
    Ok(out)
}

/// Backward through one layer. Parameter gradients are returned in
/// parameter order when `need_params`.
pub(crate) fn backward(
    spec: &LayerSpec,
    params: &[NamedTensor],
    cache: &Cache,
    input_shape: &[usize],
    gy: &[f64],
    need_params: bool,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<f64>> = if need_params {
        params.iter().map(|t| vec![0.0; t.tensor.numel()]).collect()
    } else {
        Vec::new()
    };
    let p = |i: usize| params[i].tensor.data();
    let gx = match (spec, cache) {
        (LayerSpec::Conv2d(c), Cache::Conv { input, shape }) => {
            let (gw, gb) = match grads.as_mut_slice() {
                [w] => (Some(w.as_mut_slice()), None),
                [w, b] => (Some(w.as_mut_slice()), Some(b.as_mut_slice())),
                _ => (None, None),
            };
            conv::backward(c, input, *shape, p(0), gy, gw, gb, need_input)
        }
        (LayerSpec::BatchNorm { .. }, Cache::BatchNorm { inner, shape }) => {
            let g = match grads.as_mut_slice() {
                [a, b] => Some((a.as_mut_slice(), b.as_mut_slice())),
                _ => None,
            };
            norm::batchnorm_backward(inner, *shape, p(0), gy, g, need_input)
        }
        (LayerSpec::Activation(a), Cache::Activation { input }) => {
            Some(gy.iter().zip(input).map(|(g, &x)| g * a.derivative(x)).collect())
        }
        (LayerSpec::Pool(ps), Cache::Pool { shape }) => Some(pool::backward(ps, *shape, gy)),
        (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => Some(match mask {
            Some(m) => gy.iter().zip(m).map(|(g, m)| g * m).collect(),
            None => gy.to_vec(),
        }),
        (LayerSpec::Linear { inputs, outputs }, Cache::Linear { input }) => {
            let g = match grads.as_mut_slice() {
                [a, b] => Some((a.as_mut_slice(), b.as_mut_slice())),
                _ => None,
            };
            linear::backward(input, *inputs, p(0), *outputs, gy, g, need_input)
        }
        (LayerSpec::AttentionEncoder(a), Cache::Attention(cache)) => {
            let ps: Vec<&[f64]> = params.iter().map(|t| t.tensor.data()).collect();
            let g = if need_params { Some(grads.as_mut_slice()) } else { None };
            Some(attention::backward(a, &ps, cache, gy, g))
        }
        (LayerSpec::Flatten, Cache::Flatten) => Some(gy.to_vec()),
        (LayerSpec::Rearrange, Cache::Rearrange { shape }) => {
            let [b, e, _, w] = *shape;
            let mut gx = vec![0.0; gy.len()];
            for bi in 0..b {
                for ei in 0..e {
                    for t in 0..w {
                        gx[(bi * e + ei) * w + t] = gy[(bi * w + t) * e + ei];
                    }
                }
            }
            Some(gx)
        }
        _ => unreachable!("cache does not match layer kind"),
    };
    debug_assert!(gx.as_ref().is_none_or(|g| g.len() % input_shape.iter().product::<usize>().max(1) == 0));
    (gx, grads)
}
