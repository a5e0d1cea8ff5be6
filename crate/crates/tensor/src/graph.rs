use std::collections::BTreeSet;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{self, Cache, LayerSpec};
use crate::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone)]
struct Layer {
    spec: LayerSpec,
    input_shape: Vec<usize>,
    params: Range<usize>,
    buffers: Range<usize>,
}

struct Tape {
    caches: Vec<Cache>,
    batch: usize,
}

/// Result of a backward pass beyond the parameter gradients.
#[derive(Debug, Default)]
pub struct BackwardOutput {
    /// Gradient with respect to the graph input, when requested.
    pub input_grad: Option<Tensor>,
    /// Gradient with respect to the output of the captured layer.
    pub captured_grad: Option<Tensor>,
}

/// A sequential model: validated layer chain, named parameters, running
/// buffers, a train/eval mode, a frozen-layer set and a seeded dropout stream.
pub struct ModelGraph {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    params: Vec<NamedTensor>,
    buffers: Vec<NamedTensor>,
    mode: Mode,
    frozen: BTreeSet<usize>,
    dropout_rng: ChaCha8Rng,
    tape: Option<Tape>,
}

impl Clone for ModelGraph {
    /// Clones everything except a pending forward record.
    fn clone(&self) -> Self {
        ModelGraph {
            layers: self.layers.clone(),
            input_shape: self.input_shape.clone(),
            output_shape: self.output_shape.clone(),
            params: self.params.clone(),
            buffers: self.buffers.clone(),
            mode: self.mode,
            frozen: self.frozen.clone(),
            dropout_rng: self.dropout_rng.clone(),
            tape: None,
        }
    }
}

impl std::fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGraph")
            .field("layers", &self.layers.iter().map(|l| l.spec.kind().name()).collect::<Vec<_>>())
            .field("input_shape", &self.input_shape)
            .field("output_shape", &self.output_shape)
            .field("num_params", &self.num_params())
            .field("mode", &self.mode)
            .field("frozen", &self.frozen)
            .finish()
    }
}

impl ModelGraph {
    /// Validates the shape chain for per-sample `input_shape` and initialises
    /// parameters from `seed`. The dropout stream is seeded from `seed` too.
    pub fn new(specs: Vec<LayerSpec>, input_shape: &[usize], seed: u64) -> Result<Self> {
        crate::alloc::retain_large_blocks();
        if specs.is_empty() {
            return Err(TensorError::InvalidSpec("empty layer list".into()));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for (idx, spec) in specs.into_iter().enumerate() {
            let out = spec
                .output_shape(&shape)
                .map_err(|e| TensorError::InvalidSpec(format!("layer {idx} ({}): {e}", spec.kind().name())))?;
            let p0 = params.len();
            for ((name, _), tensor) in spec.param_shapes().into_iter().zip(spec.init_params(&mut init_rng)) {
                params.push(NamedTensor { name: format!("{idx:02}.{}.{name}", spec.kind().name()), tensor });
            }
            let b0 = buffers.len();
            for ((name, _), tensor) in spec.buffer_shapes().into_iter().zip(spec.init_buffers()) {
                buffers.push(NamedTensor { name: format!("{idx:02}.{}.{name}", spec.kind().name()), tensor });
            }
            layers.push(Layer {
                spec,
                input_shape: shape.clone(),
                params: p0..params.len(),
                buffers: b0..buffers.len(),
            });
            shape = out;
        }
        Ok(ModelGraph {
            layers,
            input_shape: input_shape.to_vec(),
            output_shape: shape,
            params,
            buffers,
            mode: Mode::Train,
            frozen: BTreeSet::new(),
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xD50F_0D50_F0D5_0F0D),
            tape: None,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_spec(&self, idx: usize) -> Option<&LayerSpec> {
        self.layers.get(idx).map(|l| &l.spec)
    }

    pub fn layer_specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    /// Per-sample output shape of layer `idx`.
    pub fn layer_output_shape(&self, idx: usize) -> Option<Vec<usize>> {
        self.layers.get(idx + 1).map(|l| l.input_shape.clone()).or_else(|| {
            (idx + 1 == self.layers.len()).then(|| self.output_shape.clone())
        })
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[NamedTensor] {
        &self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    /// Parameter indices owned by layer `idx`.
    pub fn layer_param_range(&self, idx: usize) -> Range<usize> {
        self.layers[idx].params.clone()
    }

    /// Layer owning parameter `param_idx`.
    pub fn param_layer(&self, param_idx: usize) -> usize {
        self.layers.iter().position(|l| l.params.contains(&param_idx)).expect("parameter index in range")
    }

    pub fn is_param_frozen(&self, param_idx: usize) -> bool {
        self.frozen.contains(&self.param_layer(param_idx))
    }

    pub fn freeze(&mut self, layers: impl IntoIterator<Item = usize>) -> Result<()> {
        for idx in layers {
            if idx >= self.layers.len() {
                return Err(TensorError::InvalidArgument(format!("cannot freeze layer {idx}")));
            }
            self.frozen.insert(idx);
            for p in self.layers[idx].params.clone() {
                self.params[p].tensor.clear_grad();
            }
        }
        Ok(())
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn frozen(&self) -> &BTreeSet<usize> {
        &self.frozen
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    /// Parameters followed by buffers, as stored in checkpoints.
    pub fn state(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .chain(&self.buffers)
            .map(|n| NamedTensor { name: n.name.clone(), tensor: n.tensor.detached() })
            .collect()
    }

    /// Replaces every parameter and buffer; names and shapes must match exactly.
    pub fn load_state(&mut self, state: &[NamedTensor]) -> Result<()> {
        if state.len() != self.params.len() + self.buffers.len() {
            return Err(TensorError::InvalidArgument(format!(
                "state holds {} tensors, graph has {}",
                state.len(),
                self.params.len() + self.buffers.len()
            )));
        }
        for (slot, incoming) in self.params.iter_mut().chain(self.buffers.iter_mut()).zip(state) {
            if slot.name != incoming.name {
                return Err(TensorError::UnknownName(incoming.name.clone()));
            }
            if slot.tensor.shape() != incoming.tensor.shape() {
                return Err(TensorError::shape(&incoming.name, slot.tensor.shape(), incoming.tensor.shape()));
            }
            slot.tensor = incoming.tensor.detached();
        }
        self.tape = None;
        Ok(())
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] || s[0] == 0 {
            let mut expected = vec![0];
            expected.extend_from_slice(&self.input_shape);
            return Err(TensorError::shape("graph input (batch first)", &expected, s));
        }
        Ok(s[0])
    }

    /// Recorded forward pass in the current mode.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_impl(x, None)?.0)
    }

    /// Recorded forward pass that also returns the output of layer `capture`.
    pub fn forward_capture(&mut self, x: &Tensor, capture: usize) -> Result<(Tensor, Tensor)> {
        if capture >= self.layers.len() {
            return Err(TensorError::InvalidArgument(format!("no layer {capture}")));
        }
        let (y, c) = self.forward_impl(x, Some(capture))?;
        Ok((y, c.expect("captured layer output")))
    }

    fn forward_impl(&mut self, x: &Tensor, capture: Option<usize>) -> Result<(Tensor, Option<Tensor>)> {
        let batch = self.check_input(x)?;
        let train = self.mode == Mode::Train;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut captured = None;
        let mut cur = x.detached();
        for (idx, layer) in self.layers.iter().enumerate() {
            let bufs = if layer.buffers.is_empty() { None } else { Some(&mut self.buffers[layer.buffers.clone()]) };
            let rng = train.then_some(&mut self.dropout_rng);
            let (y, cache) = layers::forward(&layer.spec, &cur, &self.params[layer.params.clone()], bufs, train, rng)?;
            caches.push(cache);
            if capture == Some(idx) {
                captured = Some(y.clone());
            }
            cur = y;
        }
        self.tape = Some(Tape { caches, batch });
        Ok((cur, captured))
    }

    /// Unrecorded forward pass with eval-mode semantics regardless of
    /// [`ModelGraph::mode`]: dropout off, batchnorm on running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.detached();
        for layer in &self.layers {
            let mut bufs: Vec<NamedTensor> = self.buffers[layer.buffers.clone()].to_vec();
            let b = if bufs.is_empty() { None } else { Some(bufs.as_mut_slice()) };
            cur = layers::forward(&layer.spec, &cur, &self.params[layer.params.clone()], b, false, None)?.0;
        }
        Ok(cur)
    }

    /// Eval-mode softmax weights of every attention-encoder layer, each
    /// shaped `[batch, heads, tokens, tokens]`.
    pub fn attention_maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut maps = Vec::new();
        let mut cur = x.detached();
        for layer in &self.layers {
            let mut bufs: Vec<NamedTensor> = self.buffers[layer.buffers.clone()].to_vec();
            let b = if bufs.is_empty() { None } else { Some(bufs.as_mut_slice()) };
            let (y, cache) = layers::forward(&layer.spec, &cur, &self.params[layer.params.clone()], b, false, None)?;
            if let (LayerSpec::AttentionEncoder(spec), Cache::Attention(c)) = (&layer.spec, &cache) {
                maps.push(Tensor::new(c.shape(spec).to_vec(), c.attn.clone())?);
            }
            cur = y;
        }
        Ok(maps)
    }

    /// Accumulates parameter gradients of `sum(grad_out * output)` into every
    /// unfrozen parameter. Consumes the forward record.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<()> {
        self.backward_with(grad_out, false, None).map(|_| ())
    }

    /// Like [`ModelGraph::backward`], optionally also returning the input
    /// gradient and the gradient at the output of layer `capture`.
    pub fn backward_with(
        &mut self,
        grad_out: &Tensor,
        want_input: bool,
        capture: Option<usize>,
    ) -> Result<BackwardOutput> {
        let tape = self.tape.take().ok_or(TensorError::NoForward)?;
        let mut expected = vec![tape.batch];
        expected.extend_from_slice(&self.output_shape);
        if grad_out.shape() != expected.as_slice() {
            return Err(TensorError::shape("backward seed", &expected, grad_out.shape()));
        }
        let mut out = BackwardOutput::default();
        let mut g = grad_out.data().to_vec();
        for (idx, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            if capture == Some(idx) {
                let mut shape = vec![tape.batch];
                shape.extend(self.layer_output_shape(idx).expect("layer exists"));
                out.captured_grad = Some(Tensor::new(shape, g.clone())?);
            }
            let need_params = !layer.params.is_empty() && !self.frozen.contains(&idx);
            let need_input = idx > 0 || want_input;
            let (gx, grads) = layers::backward(
                &layer.spec,
                &self.params[layer.params.clone()],
                cache,
                &layer.input_shape,
                &g,
                need_params,
                need_input,
            );
            if need_params {
                for (p, gp) in self.params[layer.params.clone()].iter_mut().zip(grads) {
                    p.tensor.accumulate_grad(&gp);
                }
            }
            match gx {
                Some(gx) => g = gx,
                None => break,
            }
        }
        if want_input {
            let mut shape = vec![tape.batch];
            shape.extend_from_slice(&self.input_shape);
            out.input_grad = Some(Tensor::new(shape, g)?);
        }
        Ok(out)
    }
}
