//! Chain-structured convolutional network with a hand-written backward pass.
//!
//! Each layer computes `z_pre = conv(x, kernel) + bias + offset`, then a
//! channelwise function σ (a sequence of batchnorm / relu / dropout) and an
//! optional 2×2 max pool. The head is global average pooling followed by a
//! linear classifier, trained with mean cross-entropy.
//!
//! The backward pass also records, per layer and per sample, the gradient
//! `g` of that sample's own loss with respect to `z_pre`, and the gradient
//! with respect to the layer's (pooled) output. Those are what the morphism
//! estimator consumes.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{self, PoolIndices, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Descriptor for one element of a layer's channelwise function.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelOpSpec {
    Relu,
    BatchNorm,
    Dropout(f64),
}

/// Architecture descriptor for one convolutional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel_size: (usize, usize),
    pub channelwise: Vec<ChannelOpSpec>,
    pub followed_by_pool: bool,
}

impl LayerSpec {
    pub fn new(out_channels: usize, kernel: usize, channelwise: Vec<ChannelOpSpec>, pool: bool) -> Self {
        LayerSpec {
            out_channels,
            kernel_size: (kernel, kernel),
            channelwise,
            followed_by_pool: pool,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    fn eval_scale(&self, c: usize) -> f64 {
        self.gamma[c] / (self.running_var[c] + BN_EPS).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelOp {
    Relu,
    BatchNorm(BatchNorm),
    Dropout { rate: f64 },
}

impl ChannelOp {
    pub fn spec(&self) -> ChannelOpSpec {
        match self {
            ChannelOp::Relu => ChannelOpSpec::Relu,
            ChannelOp::BatchNorm(_) => ChannelOpSpec::BatchNorm,
            ChannelOp::Dropout { rate } => ChannelOpSpec::Dropout(*rate),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `(out, in, kh, kw)`; row `c` is channel `c`'s incoming kernel.
    pub kernel: Tensor,
    /// Present only when σ has no batchnorm.
    pub bias: Option<Vec<f64>>,
    /// Frozen additive map `(out, h, w)` left behind by pruning an input
    /// channel whose σ output is a nonzero constant.
    pub offset: Option<Tensor>,
    pub channelwise: Vec<ChannelOp>,
    pub pool: bool,
}

impl ConvLayer {
    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }

    /// "Same" padding for the odd kernel extents the network uses.
    pub fn padding(&self) -> usize {
        self.kernel.shape()[2] / 2
    }

    /// Slice of one channel's incoming kernel, `(in, kh, kw)` flattened.
    pub fn kernel_row(&self, c: usize) -> &[f64] {
        self.kernel.outer(c)
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = &BatchNorm> {
        self.channelwise.iter().filter_map(|op| match op {
            ChannelOp::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    /// σ learnables per channel (γ and β per batchnorm).
    pub fn sigma_params_per_channel(&self) -> usize {
        2 * self.batchnorms().count()
    }

    /// Eval-mode σ for channel `c` at a scalar pre-activation; returns
    /// `(value, derivative)`. Eval-mode σ is a pointwise per-channel map.
    pub fn sigma_eval(&self, c: usize, v: f64) -> (f64, f64) {
        let mut val = v;
        let mut der = 1.0;
        for op in &self.channelwise {
            match op {
                ChannelOp::Relu => {
                    if val <= 0.0 {
                        val = 0.0;
                        der = 0.0;
                    }
                }
                ChannelOp::BatchNorm(bn) => {
                    let s = bn.eval_scale(c);
                    val = s * (val - bn.running_mean[c]) + bn.beta[c];
                    der *= s;
                }
                ChannelOp::Dropout { .. } => {}
            }
        }
        (val, der)
    }

    /// True when train- and eval-mode σ differ.
    pub fn has_mode_dependent_sigma(&self) -> bool {
        self.channelwise
            .iter()
            .any(|op| !matches!(op, ChannelOp::Relu))
    }

    pub fn spec(&self) -> LayerSpec {
        let (kh, kw) = self.kernel_hw();
        LayerSpec {
            out_channels: self.out_channels(),
            kernel_size: (kh, kw),
            channelwise: self.channelwise.iter().map(ChannelOp::spec).collect(),
            followed_by_pool: self.pool,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// `(num_classes, channels)`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// The network being grown. Every mutation goes through a method that bumps
/// `revision`, so tapes can detect that they are stale.
#[derive(Debug)]
pub struct NetworkGraph {
    input_shape: [usize; 3],
    layers: Vec<ConvLayer>,
    head: Head,
    id: u64,
    revision: u64,
}

impl Clone for NetworkGraph {
    fn clone(&self) -> Self {
        NetworkGraph {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            head: self.head.clone(),
            id: fresh_id(),
            revision: 0,
        }
    }
}

impl PartialEq for NetworkGraph {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers && self.head == other.head
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Batch statistics for batchnorm; dropout masks drawn from the seed.
    Train { dropout_seed: u64 },
}

impl NetworkGraph {
    /// He-initialised network for inputs of shape `(channels, height, width)`.
    pub fn new(input_shape: [usize; 3], specs: &[LayerSpec], num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if num_classes < 1 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut in_ch = input_shape[0];
        let (mut h, mut w) = (input_shape[1], input_shape[2]);
        for (i, spec) in specs.iter().enumerate() {
            let (kh, kw) = spec.kernel_size;
            if spec.out_channels == 0 || kh % 2 == 0 || kw % 2 == 0 || kh != kw {
                return Err(Error::Config(format!(
                    "layer {i}: need positive width and square odd kernel, got {spec:?}"
                )));
            }
            let fan_in = (in_ch * kh * kw) as f64;
            let kernel = Tensor::randn(&[spec.out_channels, in_ch, kh, kw], (2.0 / fan_in).sqrt(), rng);
            let mut channelwise = Vec::new();
            for op in &spec.channelwise {
                channelwise.push(match op {
                    ChannelOpSpec::Relu => ChannelOp::Relu,
                    ChannelOpSpec::BatchNorm => ChannelOp::BatchNorm(BatchNorm::new(spec.out_channels)),
                    ChannelOpSpec::Dropout(rate) => {
                        if !(0.0..1.0).contains(rate) {
                            return Err(Error::Config(format!("layer {i}: dropout rate {rate} not in [0,1)")));
                        }
                        ChannelOp::Dropout { rate: *rate }
                    }
                });
            }
            let has_bn = channelwise.iter().any(|op| matches!(op, ChannelOp::BatchNorm(_)));
            if spec.followed_by_pool {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Config(format!("layer {i}: cannot pool odd extent {h}×{w}")));
                }
                h /= 2;
                w /= 2;
            }
            layers.push(ConvLayer {
                kernel,
                bias: (!has_bn).then(|| vec![0.0; spec.out_channels]),
                offset: None,
                channelwise,
                pool: spec.followed_by_pool,
            });
            in_ch = spec.out_channels;
        }
        let head = Head {
            weight: Tensor::randn(&[num_classes, in_ch], (1.0 / in_ch as f64).sqrt(), rng),
            bias: vec![0.0; num_classes],
        };
        Ok(NetworkGraph {
            input_shape,
            layers,
            head,
            id: fresh_id(),
            revision: 0,
        })
    }

    /// Assembles a network from explicit parameters, validating channel
    /// compatibility.
    pub fn from_parts(input_shape: [usize; 3], layers: Vec<ConvLayer>, head: Head) -> Result<Self> {
        let net = NetworkGraph {
            input_shape,
            layers,
            head,
            id: fresh_id(),
            revision: 0,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invariant("network has no layers".into()));
        }
        let mut in_ch = self.input_shape[0];
        let (mut h, mut w) = (self.input_shape[1], self.input_shape[2]);
        for (i, layer) in self.layers.iter().enumerate() {
            let (o, c, kh, kw) = layer.kernel.dims4()?;
            if c != in_ch {
                return Err(Error::Invariant(format!(
                    "layer {i} kernel expects {c} input channels, previous layer has {in_ch}"
                )));
            }
            if kh % 2 == 0 || kh != kw || o == 0 {
                return Err(Error::Invariant(format!("layer {i}: bad kernel shape {:?}", layer.kernel.shape())));
            }
            if let Some(b) = &layer.bias {
                if b.len() != o {
                    return Err(Error::Invariant(format!("layer {i}: bias length {} != {o}", b.len())));
                }
            }
            if let Some(off) = &layer.offset {
                if off.shape() != [o, h, w] {
                    return Err(Error::Invariant(format!(
                        "layer {i}: offset shape {:?} != {:?}",
                        off.shape(),
                        [o, h, w]
                    )));
                }
            }
            for bn in layer.batchnorms() {
                if [bn.gamma.len(), bn.beta.len(), bn.running_mean.len(), bn.running_var.len()] != [o; 4] {
                    return Err(Error::Invariant(format!("layer {i}: batchnorm vectors must have length {o}")));
                }
            }
            if layer.pool {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Invariant(format!("layer {i}: cannot pool odd extent {h}×{w}")));
                }
                h /= 2;
                w /= 2;
            }
            in_ch = o;
        }
        if self.head.weight.shape() != [self.head.bias.len(), in_ch] {
            return Err(Error::Invariant(format!(
                "head weight {:?} incompatible with {in_ch} channels and {} classes",
                self.head.weight.shape(),
                self.head.bias.len()
            )));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.head.bias.len()
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &ConvLayer {
        &self.layers[i]
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(ConvLayer::out_channels).collect()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(ConvLayer::spec).collect()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut ConvLayer {
        self.revision += 1;
        &mut self.layers[i]
    }

    pub fn head_mut(&mut self) -> &mut Head {
        self.revision += 1;
        &mut self.head
    }

    /// Spatial extent `(h, w)` of layer `i`'s input.
    pub fn layer_input_hw(&self, i: usize) -> (usize, usize) {
        let (mut h, mut w) = (self.input_shape[1], self.input_shape[2]);
        for layer in &self.layers[..i] {
            if layer.pool {
                h /= 2;
                w /= 2;
            }
        }
        (h, w)
    }

    /// Number of learnable scalars: kernels, biases, σ learnables, head.
    pub fn parameter_count(&self) -> usize {
        let convs: usize = self
            .layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.as_ref().map_or(0, Vec::len) + l.sigma_params_per_channel() * l.out_channels())
            .sum();
        convs + self.head.weight.len() + self.head.bias.len()
    }

    /// Mutable views of every learnable, in the canonical order shared with
    /// [`Gradients::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.revision += 1;
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.kernel.data_mut());
            if let Some(b) = &mut layer.bias {
                out.push(b);
            }
            for op in &mut layer.channelwise {
                if let ChannelOp::BatchNorm(bn) = op {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
            }
        }
        out.push(self.head.weight.data_mut());
        out.push(&mut self.head.bias);
        out
    }

    /// Flattened copy of every learnable.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.kernel.data());
            if let Some(b) = &layer.bias {
                out.extend_from_slice(b);
            }
            for bn in layer.batchnorms() {
                out.extend_from_slice(&bn.gamma);
                out.extend_from_slice(&bn.beta);
            }
        }
        out.extend_from_slice(self.head.weight.data());
        out.extend_from_slice(&self.head.bias);
        out
    }

    /// Fresh parameters for the same architecture; pruning offsets are dropped.
    pub fn reinitialize(&self, rng: &mut SeededRng) -> Result<Self> {
        NetworkGraph::new(self.input_shape, &self.specs(), self.num_classes(), rng)
    }

    /// Folds the batch statistics of a train-mode tape into the running
    /// batchnorm statistics.
    pub fn commit_running_stats(&mut self, tape: &Tape) -> Result<()> {
        tape.check_fresh(self)?;
        self.revision += 1;
        for (layer, lt) in self.layers.iter_mut().zip(&tape.layers) {
            for (op, cache) in layer.channelwise.iter_mut().zip(&lt.ops) {
                if let (ChannelOp::BatchNorm(bn), OpCache::BatchNormTrain { mean, var, count, .. }) = (op, cache) {
                    let unbias = if *count > 1 { *count as f64 / (*count as f64 - 1.0) } else { 1.0 };
                    for c in 0..mean.len() {
                        bn.running_mean[c] = (1.0 - BN_MOMENTUM) * bn.running_mean[c] + BN_MOMENTUM * mean[c];
                        bn.running_var[c] = (1.0 - BN_MOMENTUM) * bn.running_var[c] + BN_MOMENTUM * var[c] * unbias;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) enum OpCache {
    Relu { input: Tensor },
    BatchNormEval { input: Tensor },
    BatchNormTrain {
        xhat: Tensor,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        count: usize,
    },
    Dropout { mask: Option<Vec<f64>> },
}

#[derive(Clone, Debug)]
pub struct LayerTape {
    /// Layer input `x`.
    pub input: Tensor,
    /// Pre-σ convolution output.
    pub z_pre: Tensor,
    pub(crate) ops: Vec<OpCache>,
    /// Post-σ output, before pooling.
    pub post: Tensor,
    pub pool: Option<PoolIndices>,
    /// Layer output after pooling (next layer's input, or head input).
    pub output: Tensor,
    /// Per-sample `∂ℓ_s/∂z_pre`; filled by [`backward`].
    pub g: Option<Tensor>,
    /// Per-sample `∂ℓ_s/∂output`; filled by [`backward`].
    pub g_output: Option<Tensor>,
}

/// Activations of one forward pass, plus the gradients captured by
/// [`backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    pub layers: Vec<LayerTape>,
    /// Global-average-pooled features `(S, C)`.
    pub features: Tensor,
    /// `(S, K)`.
    pub logits: Tensor,
    pub probs: Tensor,
    pub labels: Vec<usize>,
    pub sample_losses: Vec<f64>,
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Per-sample `∂ℓ_s/∂logits`; filled by [`backward`].
    pub g_logits: Option<Tensor>,
    pub mode: Mode,
    net_id: u64,
    revision: u64,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    pub fn check_fresh(&self, net: &NetworkGraph) -> Result<()> {
        if self.net_id != net.id || self.revision != net.revision {
            return Err(Error::Invariant(
                "tape is stale: the network changed after the forward pass".into(),
            ));
        }
        Ok(())
    }

    pub fn is_backpropagated(&self) -> bool {
        self.g_logits.is_some()
    }

    pub fn correct(&self) -> usize {
        let k = self.logits.shape()[1];
        self.labels
            .iter()
            .enumerate()
            .filter(|(s, &y)| argmax(&self.logits.data()[s * k..(s + 1) * k]) == y)
            .count()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn per_channel(t: &Tensor) -> (usize, usize, usize) {
    let (n, c, h, w) = t.dims4().expect("activation tensors are 4-d");
    (n, c, h * w)
}

fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

fn batchnorm_eval(bn: &BatchNorm, x: &Tensor) -> Tensor {
    let (n, c, hw) = per_channel(x);
    let mut y = x.clone();
    for s in 0..n {
        for ch in 0..c {
            let scale = bn.eval_scale(ch);
            let (m, b) = (bn.running_mean[ch], bn.beta[ch]);
            for v in &mut y.data_mut()[(s * c + ch) * hw..][..hw] {
                *v = scale * (*v - m) + b;
            }
        }
    }
    y
}

fn batchnorm_train(bn: &BatchNorm, x: &Tensor) -> (Tensor, OpCache) {
    let (n, c, hw) = per_channel(x);
    let count = n * hw;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            mean[ch] += x.data()[(s * c + ch) * hw..][..hw].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    for s in 0..n {
        for ch in 0..c {
            var[ch] += x.data()[(s * c + ch) * hw..][..hw]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for s in 0..n {
        for ch in 0..c {
            let range = (s * c + ch) * hw..(s * c + ch + 1) * hw;
            for (xh, yv) in xhat.data_mut()[range.clone()].iter_mut().zip(&mut y.data_mut()[range]) {
                *xh = (*xh - mean[ch]) * inv_std[ch];
                *yv = bn.gamma[ch] * *xh + bn.beta[ch];
            }
        }
    }
    (
        y,
        OpCache::BatchNormTrain {
            xhat,
            inv_std,
            mean,
            var,
            count,
        },
    )
}

fn check_finite(t: &Tensor, layer: usize, what: &str) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Numeric(format!("non-finite {what} in layer {layer}")));
    }
    Ok(())
}

/// Adds the channel bias and any pruning offset to a convolution output.
pub(crate) fn add_bias_offset(layer: &ConvLayer, z: &mut Tensor) {
    let (n, c, hw) = per_channel(z);
    if let Some(b) = &layer.bias {
        for s in 0..n {
            for ch in 0..c {
                z.data_mut()[(s * c + ch) * hw..][..hw].iter_mut().for_each(|v| *v += b[ch]);
            }
        }
    }
    if let Some(off) = &layer.offset {
        for s in 0..n {
            for (v, o) in z.outer_mut(s).iter_mut().zip(off.data()) {
                *v += o;
            }
        }
    }
}

/// Mean cross-entropy forward pass; the tape keeps every activation needed
/// by [`backward`].
pub fn forward(net: &NetworkGraph, images: &Tensor, labels: &[usize], mode: Mode) -> Result<(f64, Tape)> {
    let (n, c, h, w) = images.dims4()?;
    if [c, h, w] != net.input_shape {
        return Err(Error::shape(format!(
            "images have shape {:?}, network expects {:?}",
            [c, h, w],
            net.input_shape
        )));
    }
    if labels.len() != n || n == 0 {
        return Err(Error::shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    let k = net.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Index(format!("label {bad} not in [0, {k})")));
    }
    let mut dropout_rng = match mode {
        Mode::Train { dropout_seed } => Some(SeededRng::new(dropout_seed)),
        Mode::Eval => None,
    };
    let mut x = images.clone();
    let mut tapes = Vec::with_capacity(net.layers.len());
    for (li, layer) in net.layers.iter().enumerate() {
        let mut z = tensor::conv2d(&x, &layer.kernel, 1, layer.padding())?;
        add_bias_offset(layer, &mut z);
        check_finite(&z, li, "pre-activation")?;
        let mut cur = z.clone();
        let mut ops = Vec::with_capacity(layer.channelwise.len());
        for op in &layer.channelwise {
            match op {
                ChannelOp::Relu => {
                    let y = relu_forward(&cur);
                    ops.push(OpCache::Relu { input: cur });
                    cur = y;
                }
                ChannelOp::BatchNorm(bn) => match mode {
                    Mode::Eval => {
                        let y = batchnorm_eval(bn, &cur);
                        ops.push(OpCache::BatchNormEval { input: cur });
                        cur = y;
                    }
                    Mode::Train { .. } => {
                        let (y, cache) = batchnorm_train(bn, &cur);
                        ops.push(cache);
                        cur = y;
                    }
                },
                ChannelOp::Dropout { rate } => match dropout_rng.as_mut() {
                    Some(rng) if *rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> = (0..cur.len())
                            .map(|_| if rng.uniform() < *rate { 0.0 } else { keep })
                            .collect();
                        cur.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        ops.push(OpCache::Dropout { mask: Some(mask) });
                    }
                    _ => ops.push(OpCache::Dropout { mask: None }),
                },
            }
        }
        check_finite(&cur, li, "activation")?;
        let (output, pool) = if layer.pool {
            let (y, idx) = tensor::maxpool2(&cur)?;
            (y, Some(idx))
        } else {
            (cur.clone(), None)
        };
        tapes.push(LayerTape {
            input: x,
            z_pre: z,
            ops,
            post: cur,
            pool,
            output: output.clone(),
            g: None,
            g_output: None,
        });
        x = output;
    }

    let (_, ch, fh, fw) = x.dims4()?;
    let hw = (fh * fw) as f64;
    let mut features = Tensor::zeros(&[n, ch]);
    for s in 0..n {
        for c in 0..ch {
            features.data_mut()[s * ch + c] = x.data()[(s * ch + c) * fh * fw..][..fh * fw].iter().sum::<f64>() / hw;
        }
    }
    let mut logits = Tensor::zeros(&[n, k]);
    let wt = net.head.weight.data();
    for s in 0..n {
        let f = &features.data()[s * ch..(s + 1) * ch];
        for j in 0..k {
            logits.data_mut()[s * k + j] = net.head.bias[j] + tensor::dot(&wt[j * ch..(j + 1) * ch], f);
        }
    }
    check_finite(&logits, net.layers.len(), "logits")?;
    let mut probs = Tensor::zeros(&[n, k]);
    let mut sample_losses = Vec::with_capacity(n);
    for s in 0..n {
        let row = &logits.data()[s * k..(s + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        for j in 0..k {
            probs.data_mut()[s * k + j] = (row[j] - lse).exp();
        }
        sample_losses.push(lse - row[labels[s]]);
    }
    let loss = sample_losses.iter().sum::<f64>() / n as f64;
    let tape = Tape {
        layers: tapes,
        features,
        logits,
        probs,
        labels: labels.to_vec(),
        sample_losses,
        loss,
        g_logits: None,
        mode,
        net_id: net.id,
        revision: net.revision,
    };
    Ok((loss, tape))
}

/// Gradients of the mean batch loss, laid out like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub head_weight: Tensor,
    pub head_bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub kernel: Tensor,
    pub bias: Option<Vec<f64>>,
    /// `(dγ, dβ)` per batchnorm op, in σ order.
    pub batchnorm: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    /// Views in the same order as [`NetworkGraph::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for lg in &self.layers {
            out.push(lg.kernel.data());
            if let Some(b) = &lg.bias {
                out.push(b);
            }
            for (gm, bt) in &lg.batchnorm {
                out.push(gm);
                out.push(bt);
            }
        }
        out.push(self.head_weight.data());
        out.push(&self.head_bias);
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

/// Backpropagates the tape's mean loss. Parameter gradients are of the batch
/// mean; the captured `g` tensors are per-sample losses, i.e. `S · ∂L̂/∂z`.
pub fn backward(net: &NetworkGraph, tape: &mut Tape) -> Result<Gradients> {
    tape.check_fresh(net)?;
    let n = tape.batch_size();
    let k = net.num_classes();
    let sf = n as f64;

    // ∂L̂/∂logits
    let mut dlogits = tape.probs.clone();
    for (s, &y) in tape.labels.iter().enumerate() {
        dlogits.data_mut()[s * k + y] -= 1.0;
    }
    tape.g_logits = Some(dlogits.clone());
    dlogits.data_mut().iter_mut().for_each(|v| *v /= sf);

    let ch = tape.features.shape()[1];
    let mut head_weight = Tensor::zeros(&[k, ch]);
    let mut head_bias = vec![0.0; k];
    let mut dfeat = Tensor::zeros(&[n, ch]);
    let wt = net.head.weight.data();
    for s in 0..n {
        let f = &tape.features.data()[s * ch..(s + 1) * ch];
        for j in 0..k {
            let d = dlogits.data()[s * k + j];
            head_bias[j] += d;
            for c in 0..ch {
                head_weight.data_mut()[j * ch + c] += d * f[c];
                dfeat.data_mut()[s * ch + c] += d * wt[j * ch + c];
            }
        }
    }

    let last_out = &tape.layers.last().expect("non-empty").output;
    let (_, _, fh, fw) = last_out.dims4()?;
    let area = (fh * fw) as f64;
    let mut up = Tensor::zeros(last_out.shape());
    for s in 0..n {
        for c in 0..ch {
            let v = dfeat.data()[s * ch + c] / area;
            up.data_mut()[(s * ch + c) * fh * fw..][..fh * fw].iter_mut().for_each(|u| *u = v);
        }
    }

    let mut layer_grads = Vec::with_capacity(net.layers.len());
    for li in (0..net.layers.len()).rev() {
        let layer = &net.layers[li];
        let lt = &mut tape.layers[li];
        lt.g_output = Some(up.scale(sf));
        if let Some(idx) = &lt.pool {
            up = tensor::maxpool2_backward(idx, &up)?;
        }
        let mut bn_grads = Vec::new();
        for (op, cache) in layer.channelwise.iter().zip(&lt.ops).rev() {
            up = match (op, cache) {
                (ChannelOp::Relu, OpCache::Relu { input }) => up.zip_with(input, "relu_backward", |u, x| if x > 0.0 { u } else { 0.0 })?,
                (ChannelOp::BatchNorm(bn), OpCache::BatchNormEval { input }) => {
                    let (n_, c, hw) = per_channel(&up);
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    let mut dx = up.clone();
                    for s in 0..n_ {
                        for chn in 0..c {
                            let scale = bn.eval_scale(chn);
                            let inv = 1.0 / (bn.running_var[chn] + BN_EPS).sqrt();
                            let off = (s * c + chn) * hw;
                            for t in off..off + hw {
                                let u = up.data()[t];
                                dg[chn] += u * (input.data()[t] - bn.running_mean[chn]) * inv;
                                db[chn] += u;
                                dx.data_mut()[t] = u * scale;
                            }
                        }
                    }
                    bn_grads.push((dg, db));
                    dx
                }
                (ChannelOp::BatchNorm(bn), OpCache::BatchNormTrain { xhat, inv_std, count, .. }) => {
                    let (n_, c, hw) = per_channel(&up);
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for s in 0..n_ {
                        for chn in 0..c {
                            let off = (s * c + chn) * hw;
                            for t in off..off + hw {
                                dg[chn] += up.data()[t] * xhat.data()[t];
                                db[chn] += up.data()[t];
                            }
                        }
                    }
                    let m = *count as f64;
                    let mut dx = up.clone();
                    for s in 0..n_ {
                        for chn in 0..c {
                            let off = (s * c + chn) * hw;
                            let coef = bn.gamma[chn] * inv_std[chn] / m;
                            for t in off..off + hw {
                                dx.data_mut()[t] = coef * (m * up.data()[t] - db[chn] - xhat.data()[t] * dg[chn]);
                            }
                        }
                    }
                    bn_grads.push((dg, db));
                    dx
                }
                (ChannelOp::Dropout { .. }, OpCache::Dropout { mask }) => match mask {
                    Some(mask) => {
                        let mut dx = up.clone();
                        dx.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                        dx
                    }
                    None => up,
                },
                _ => return Err(Error::Invariant(format!("layer {li}: tape does not match σ structure"))),
            };
        }
        bn_grads.reverse();
        lt.g = Some(up.scale(sf));
        let kernel = tensor::conv2d_kernel_grad(&lt.input, layer.kernel.shape(), &up, 1, layer.padding())?;
        let bias = layer.bias.as_ref().map(|_| {
            let (n_, c, hw) = per_channel(&up);
            let mut db = vec![0.0; c];
            for s in 0..n_ {
                for chn in 0..c {
                    db[chn] += up.data()[(s * c + chn) * hw..][..hw].iter().sum::<f64>();
                }
            }
            db
        });
        if li > 0 {
            up = tensor::conv2d_input_grad(lt.input.shape(), &layer.kernel, &up, 1, layer.padding())?;
        }
        layer_grads.push(LayerGrads {
            kernel,
            bias,
            batchnorm: bn_grads,
        });
    }
    layer_grads.reverse();
    Ok(Gradients {
        layers: layer_grads,
        head_weight,
        head_bias,
    })
}

/// Mean loss and accuracy over a dataset in eval mode.
pub fn evaluate(net: &NetworkGraph, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (images, labels) = data.batch(&idx);
        let (loss, tape) = forward(net, &images, &labels, Mode::Eval)?;
        total_loss += loss * (end - start) as f64;
        correct += tape.correct();
        start = end;
    }
    Ok((total_loss / n as f64, correct as f64 / n as f64))
}

/// Eval-mode class probabilities, one row per image.
pub fn predict(net: &NetworkGraph, images: &Tensor) -> Result<Tensor> {
    let n = images.shape().first().copied().unwrap_or(0);
    // labels only feed the loss, which is discarded
    let (_, tape) = forward(net, images, &vec![0; n], Mode::Eval)?;
    Ok(tape.probs)
}
