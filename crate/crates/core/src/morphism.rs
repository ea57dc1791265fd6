//! Channel-splitting and channel-pruning morphisms.
//!
//! A split replaces channel `y` (incoming kernel `w_in`, outgoing kernel
//! `w_out`) by two channels with incoming kernels `w_in ± θ`, each sending
//! `w_out / 2` downstream. At `θ = 0` the network function is unchanged. A
//! prune subtracts `θ = w_in`, leaving a channel whose output no longer
//! depends on the input, so it can be removed once its fixed response is
//! folded into the downstream layer.
//!
//! Both morphisms only change the downstream pre-activation `z`, so their
//! effect on a mini-batch can be replayed from a tape through the two-layer
//! subnetwork `x → y → z` without touching the rest of the network.

use crate::error::{Error, Result};
use crate::network::{ConvLayer, NetworkGraph, Tape};
use crate::rng::SeededRng;
use crate::tensor::{self, PoolIndices, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MorphismKind {
    Split,
    Prune,
}

impl MorphismKind {
    pub fn name(self) -> &'static str {
        match self {
            MorphismKind::Split => "split",
            MorphismKind::Prune => "prune",
        }
    }
}

/// Identifies a candidate by `(layer, channel, kind)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MorphismId {
    pub layer: usize,
    pub channel: usize,
    pub kind: MorphismKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitMorphism {
    pub layer: usize,
    pub channel: usize,
    /// Shaped like the channel's incoming kernel, `(in, kh, kw)`.
    pub theta: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PruneMorphism {
    pub layer: usize,
    pub channel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Morphism {
    Split(SplitMorphism),
    Prune(PruneMorphism),
}

#[derive(Clone, Copy, Debug)]
pub enum MorphismRef<'a> {
    Split(&'a SplitMorphism),
    Prune(&'a PruneMorphism),
}

impl Morphism {
    pub fn as_ref(&self) -> MorphismRef<'_> {
        match self {
            Morphism::Split(s) => MorphismRef::Split(s),
            Morphism::Prune(p) => MorphismRef::Prune(p),
        }
    }

    pub fn id(&self) -> MorphismId {
        self.as_ref().id()
    }
}

impl<'a> MorphismRef<'a> {
    pub fn id(self) -> MorphismId {
        match self {
            MorphismRef::Split(s) => MorphismId {
                layer: s.layer,
                channel: s.channel,
                kind: MorphismKind::Split,
            },
            MorphismRef::Prune(p) => MorphismId {
                layer: p.layer,
                channel: p.channel,
                kind: MorphismKind::Prune,
            },
        }
    }
}

impl<'a> From<&'a SplitMorphism> for MorphismRef<'a> {
    fn from(s: &'a SplitMorphism) -> Self {
        MorphismRef::Split(s)
    }
}

impl<'a> From<&'a PruneMorphism> for MorphismRef<'a> {
    fn from(p: &'a PruneMorphism) -> Self {
        MorphismRef::Prune(p)
    }
}

impl SplitMorphism {
    pub fn zero(net: &NetworkGraph, layer: usize, channel: usize) -> Result<Self> {
        check_channel(net, layer, channel)?;
        let l = net.layer(layer);
        let (kh, kw) = l.kernel_hw();
        Ok(SplitMorphism {
            layer,
            channel,
            theta: Tensor::zeros(&[l.in_channels(), kh, kw]),
        })
    }

    pub fn with_theta(net: &NetworkGraph, layer: usize, channel: usize, theta: Tensor) -> Result<Self> {
        let m = SplitMorphism { layer, channel, theta };
        m.check(net)?;
        Ok(m)
    }

    pub fn negated(&self) -> Self {
        SplitMorphism {
            layer: self.layer,
            channel: self.channel,
            theta: self.theta.scale(-1.0),
        }
    }

    fn check(&self, net: &NetworkGraph) -> Result<()> {
        check_channel(net, self.layer, self.channel)?;
        let l = net.layer(self.layer);
        let (kh, kw) = l.kernel_hw();
        if self.theta.shape() != [l.in_channels(), kh, kw] {
            return Err(Error::shape(format!(
                "θ has shape {:?}, incoming kernel of layer {} channel {} is {:?}",
                self.theta.shape(),
                self.layer,
                self.channel,
                [l.in_channels(), kh, kw]
            )));
        }
        Ok(())
    }
}

fn check_channel(net: &NetworkGraph, layer: usize, channel: usize) -> Result<()> {
    if layer >= net.num_layers() {
        return Err(Error::Index(format!("layer {layer} out of range ({} layers)", net.num_layers())));
    }
    let width = net.layer(layer).out_channels();
    if channel >= width {
        return Err(Error::Index(format!("channel {channel} out of range for layer {layer} of width {width}")));
    }
    Ok(())
}

/// One split and one prune candidate for every existing channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphismBank {
    splits: Vec<Vec<SplitMorphism>>,
    prunes: Vec<Vec<PruneMorphism>>,
    widths: Vec<usize>,
    in_channels: Vec<usize>,
}

impl MorphismBank {
    /// Candidates with θ drawn from `N(0, (init_scale · std(w_in))²)` per
    /// channel. `θ = 0` is a stationary point of the estimator, so a
    /// nonzero start is needed for θ to move.
    pub fn new(net: &NetworkGraph, init_scale: f64, rng: &mut SeededRng) -> Self {
        let mut splits = Vec::new();
        let mut prunes = Vec::new();
        for (li, layer) in net.layers().iter().enumerate() {
            let (kh, kw) = layer.kernel_hw();
            let mut ls = Vec::new();
            let mut lp = Vec::new();
            for c in 0..layer.out_channels() {
                let row = layer.kernel_row(c);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64).sqrt();
                ls.push(SplitMorphism {
                    layer: li,
                    channel: c,
                    theta: Tensor::randn(&[layer.in_channels(), kh, kw], init_scale * sd, rng),
                });
                lp.push(PruneMorphism { layer: li, channel: c });
            }
            splits.push(ls);
            prunes.push(lp);
        }
        MorphismBank {
            splits,
            prunes,
            widths: net.widths(),
            in_channels: net.layers().iter().map(ConvLayer::in_channels).collect(),
        }
    }

    pub fn check_matches(&self, net: &NetworkGraph) -> Result<()> {
        let ins: Vec<usize> = net.layers().iter().map(ConvLayer::in_channels).collect();
        if self.widths != net.widths() || self.in_channels != ins {
            return Err(Error::Invariant(format!(
                "morphism bank built for widths {:?} but network has {:?}",
                self.widths,
                net.widths()
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.splits.len()
    }

    pub fn splits(&self, layer: usize) -> &[SplitMorphism] {
        &self.splits[layer]
    }

    pub fn splits_mut(&mut self, layer: usize) -> &mut [SplitMorphism] {
        &mut self.splits[layer]
    }

    pub fn prunes(&self, layer: usize) -> &[PruneMorphism] {
        &self.prunes[layer]
    }

    pub fn split(&self, layer: usize, channel: usize) -> &SplitMorphism {
        &self.splits[layer][channel]
    }

    /// All candidates, layer-major, splits before prunes within a layer.
    pub fn iter(&self) -> impl Iterator<Item = MorphismRef<'_>> {
        (0..self.splits.len()).flat_map(move |l| {
            self.splits[l]
                .iter()
                .map(MorphismRef::Split)
                .chain(self.prunes[l].iter().map(MorphismRef::Prune))
        })
    }

    pub fn len(&self) -> usize {
        2 * self.widths.iter().sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// σ and pooling of one channel, evaluated on a pre-activation batch
/// `(S, 1, H, W)`.
struct Branch {
    out: Tensor,
    deriv: Vec<f64>,
    pool: Option<PoolIndices>,
}

fn channel_branch(layer: &ConvLayer, channel: usize, pre: &Tensor) -> Result<Branch> {
    let mut act = pre.clone();
    let mut deriv = vec![0.0; pre.len()];
    for (v, d) in act.data_mut().iter_mut().zip(&mut deriv) {
        let (y, dy) = layer.sigma_eval(channel, *v);
        *v = y;
        *d = dy;
    }
    if layer.pool {
        let (out, idx) = tensor::maxpool2(&act)?;
        Ok(Branch {
            out,
            deriv,
            pool: Some(idx),
        })
    } else {
        Ok(Branch {
            out: act,
            deriv,
            pool: None,
        })
    }
}

impl Branch {
    /// Pulls an upstream gradient on the branch output back to its
    /// pre-activation.
    fn pullback(&self, upstream: &Tensor) -> Result<Tensor> {
        let mut g = match &self.pool {
            Some(idx) => tensor::maxpool2_backward(idx, upstream)?,
            None => upstream.clone(),
        };
        g.data_mut().iter_mut().zip(&self.deriv).for_each(|(v, d)| *v *= d);
        Ok(g)
    }
}

/// Extracts channel `c` of a 4-d tensor as `(S, 1, H, W)`.
pub(crate) fn channel_slice(t: &Tensor, c: usize) -> Tensor {
    let (n, ch, h, w) = t.dims4().expect("4-d");
    let hw = h * w;
    let mut data = Vec::with_capacity(n * hw);
    for s in 0..n {
        data.extend_from_slice(&t.data()[(s * ch + c) * hw..][..hw]);
    }
    Tensor::from_vec(&[n, 1, h, w], data).expect("sizes agree")
}

fn check_replay_tape(net: &NetworkGraph, tape: &Tape, layer: usize) -> Result<()> {
    tape.check_fresh(net)?;
    if tape.mode != crate::network::Mode::Eval && net.layer(layer).has_mode_dependent_sigma() {
        return Err(Error::Invariant(
            "morphism replay needs an eval-mode tape when σ contains batchnorm or dropout".into(),
        ));
    }
    Ok(())
}

/// Input-independent pre-activation of a channel whose kernel is zero:
/// its bias plus any pruning offset, broadcast to `(1, 1, H, W)`.
fn zero_kernel_preactivation(net: &NetworkGraph, layer: usize, channel: usize) -> Tensor {
    let l = net.layer(layer);
    let (h, w) = net.layer_input_hw(layer);
    let b = l.bias.as_ref().map_or(0.0, |b| b[channel]);
    let mut t = Tensor::full(&[1, 1, h, w], b);
    if let Some(off) = &l.offset {
        t.data_mut()
            .iter_mut()
            .zip(off.outer(channel))
            .for_each(|(v, o)| *v += o);
    }
    t
}

/// Response map `(h', w')` of a zero-kernel channel after σ and pooling.
pub fn zero_kernel_response(net: &NetworkGraph, layer: usize, channel: usize) -> Result<Tensor> {
    check_channel(net, layer, channel)?;
    let pre = zero_kernel_preactivation(net, layer, channel);
    Ok(channel_branch(net.layer(layer), channel, &pre)?.out)
}

/// Per-sample change `(S, 1, h', w')` of the host channel's (pooled) output.
pub fn replay_output_delta(net: &NetworkGraph, tape: &Tape, m: MorphismRef<'_>) -> Result<Tensor> {
    match m {
        MorphismRef::Split(s) => Ok(split_replay(net, tape, s)?.delta),
        MorphismRef::Prune(p) => prune_output_delta(net, tape, p),
    }
}

struct SplitReplay {
    delta: Tensor,
    plus: Branch,
    minus: Branch,
}

fn split_replay(net: &NetworkGraph, tape: &Tape, m: &SplitMorphism) -> Result<SplitReplay> {
    m.check(net)?;
    check_replay_tape(net, tape, m.layer)?;
    let layer = net.layer(m.layer);
    let lt = &tape.layers[m.layer];
    let base_pre = channel_slice(&lt.z_pre, m.channel);
    let (c, kh, kw) = (layer.in_channels(), layer.kernel_hw().0, layer.kernel_hw().1);
    let theta = m.theta.clone().reshape(&[1, c, kh, kw])?;
    let t = tensor::conv2d(&lt.input, &theta, 1, layer.padding())?;
    let plus_pre = base_pre.add(&t)?;
    let minus_pre = base_pre.sub(&t)?;
    let base = channel_branch(layer, m.channel, &base_pre)?;
    let plus = channel_branch(layer, m.channel, &plus_pre)?;
    let minus = channel_branch(layer, m.channel, &minus_pre)?;
    let delta = plus
        .out
        .zip_with(&minus.out, "split", |a, b| 0.5 * a + 0.5 * b)?
        .sub(&base.out)?;
    Ok(SplitReplay { delta, plus, minus })
}

fn prune_output_delta(net: &NetworkGraph, tape: &Tape, m: &PruneMorphism) -> Result<Tensor> {
    check_channel(net, m.layer, m.channel)?;
    check_replay_tape(net, tape, m.layer)?;
    let layer = net.layer(m.layer);
    let base = channel_branch(layer, m.channel, &channel_slice(&tape.layers[m.layer].z_pre, m.channel))?;
    let fixed = zero_kernel_response(net, m.layer, m.channel)?;
    let mut delta = base.out.scale(-1.0);
    let per = fixed.len();
    for s in 0..delta.shape()[0] {
        delta.outer_mut(s).iter_mut().zip(fixed.data()).for_each(|(d, f)| *d += f);
    }
    debug_assert_eq!(delta.len() / delta.shape()[0], per);
    Ok(delta)
}

/// Per-sample change of the downstream pre-activation `z`: `(S, O, h, w)`
/// for a downstream convolution, `(S, K)` when the host feeds the head.
pub fn replay_delta_z(net: &NetworkGraph, tape: &Tape, m: MorphismRef<'_>) -> Result<Tensor> {
    let u = replay_output_delta(net, tape, m)?;
    let id = m.id();
    downstream_delta(net, id.layer, id.channel, &u)
}

fn downstream_delta(net: &NetworkGraph, layer: usize, channel: usize, u: &Tensor) -> Result<Tensor> {
    let (n, _, h, w) = u.dims4()?;
    if layer + 1 < net.num_layers() {
        let down = net.layer(layer + 1);
        let (o, _, kh, kw) = down.kernel.dims4()?;
        let mut col = Vec::with_capacity(o * kh * kw);
        for oi in 0..o {
            col.extend_from_slice(&down.kernel.outer(oi)[channel * kh * kw..(channel + 1) * kh * kw]);
        }
        let col = Tensor::from_vec(&[o, 1, kh, kw], col)?;
        tensor::conv2d(u, &col, 1, down.padding())
    } else {
        let head = net.head();
        let (k, ch) = (head.weight.shape()[0], head.weight.shape()[1]);
        let mut dz = Tensor::zeros(&[n, k]);
        for s in 0..n {
            let mean = u.outer(s).iter().sum::<f64>() / (h * w) as f64;
            for j in 0..k {
                dz.data_mut()[s * k + j] = head.weight.data()[j * ch + channel] * mean;
            }
        }
        Ok(dz)
    }
}

/// Per-sample `g` at the downstream pre-activation matching
/// [`replay_delta_z`]'s layout.
pub fn downstream_g(tape: &Tape, layer: usize) -> Result<&Tensor> {
    let g = if layer + 1 < tape.layers.len() {
        tape.layers[layer + 1].g.as_ref()
    } else {
        tape.g_logits.as_ref()
    };
    g.ok_or_else(|| Error::Invariant("tape has not been backpropagated".into()))
}

fn host_output_grad(tape: &Tape, layer: usize, channel: usize) -> Result<Tensor> {
    let g = tape.layers[layer]
        .g_output
        .as_ref()
        .ok_or_else(|| Error::Invariant("tape has not been backpropagated".into()))?;
    Ok(channel_slice(g, channel))
}

/// `d_s = ⟨Δz_s, g_s⟩` for every sample, computed through the adjoint of the
/// downstream map: `⟨w_out ⊛ u_s, g_s⟩ = ⟨u_s, ∂ℓ_s/∂y_s⟩`.
pub fn replay_inner_products(net: &NetworkGraph, tape: &Tape, m: MorphismRef<'_>) -> Result<Vec<f64>> {
    let id = m.id();
    let u = replay_output_delta(net, tape, m)?;
    let h = host_output_grad(tape, id.layer, id.channel)?;
    Ok((0..u.shape()[0]).map(|s| tensor::dot(u.outer(s), h.outer(s))).collect())
}

/// Split replay products `d_s` together with the vector-Jacobian product
/// `Σ_s weight(d)_s · ∂d_s/∂θ` for weights chosen from the products.
pub fn split_inner_products_vjp(
    net: &NetworkGraph,
    tape: &Tape,
    m: &SplitMorphism,
    weights: impl FnOnce(&[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, Tensor)> {
    let rep = split_replay(net, tape, m)?;
    let h = host_output_grad(tape, m.layer, m.channel)?;
    let n = h.shape()[0];
    let d: Vec<f64> = (0..n).map(|s| tensor::dot(rep.delta.outer(s), h.outer(s))).collect();
    let wts = weights(&d);
    assert_eq!(wts.len(), n, "one weight per sample");
    let mut hw = h;
    for (s, &w) in wts.iter().enumerate() {
        hw.outer_mut(s).iter_mut().for_each(|v| *v *= 0.5 * w);
    }
    // ∂d/∂t = ½ P₊ᵀ(h)σ'(a+t) − ½ P₋ᵀ(h)σ'(a−t), with t = x ⊛ θ
    let gp = rep.plus.pullback(&hw)?;
    let gm = rep.minus.pullback(&hw)?;
    let dt = gp.sub(&gm)?;
    let layer = net.layer(m.layer);
    let (kh, kw) = layer.kernel_hw();
    let c = layer.in_channels();
    let grad = tensor::conv2d_kernel_grad(&tape.layers[m.layer].input, &[1, c, kh, kw], &dt, 1, layer.padding())?;
    Ok((d, grad.reshape(&[c, kh, kw])?))
}

/// Signed change in learnable-parameter count.
pub fn param_delta(net: &NetworkGraph, m: MorphismRef<'_>) -> Result<i64> {
    let id = m.id();
    check_channel(net, id.layer, id.channel)?;
    let host = net.layer(id.layer);
    let (kh, kw) = host.kernel_hw();
    let incoming = host.in_channels() * kh * kw + usize::from(host.bias.is_some());
    let outgoing = if id.layer + 1 < net.num_layers() {
        let down = net.layer(id.layer + 1);
        let (dh, dw) = down.kernel_hw();
        down.out_channels() * dh * dw
    } else {
        net.num_classes()
    };
    let per_channel = (incoming + outgoing + host.sigma_params_per_channel()) as i64;
    Ok(match id.kind {
        MorphismKind::Split => per_channel,
        MorphismKind::Prune => -per_channel,
    })
}

/// Rebuilds `t` along `axis` from `(source index, scale)` entries.
fn rebuild_axis(t: &Tensor, axis: usize, plan: &[(usize, f64)]) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let len = shape[axis];
    let mut data = Vec::with_capacity(outer * plan.len() * inner);
    for o in 0..outer {
        for &(src, scale) in plan {
            let block = &t.data()[(o * len + src) * inner..][..inner];
            if scale == 1.0 {
                data.extend_from_slice(block);
            } else {
                data.extend(block.iter().map(|v| v * scale));
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = plan.len();
    Tensor::from_vec(&new_shape, data).expect("plan sizes agree")
}

fn rebuild_vec(v: &[f64], plan: &[(usize, f64)]) -> Vec<f64> {
    plan.iter().map(|&(i, s)| v[i] * s).collect()
}

fn split_plan(width: usize, channel: usize, scale: f64) -> Vec<(usize, f64)> {
    let mut plan: Vec<(usize, f64)> = (0..width).map(|i| (i, 1.0)).collect();
    plan[channel].1 = scale;
    plan.insert(channel + 1, (channel, scale));
    plan
}

fn prune_plan(width: usize, channel: usize) -> Vec<(usize, f64)> {
    (0..width).filter(|&i| i != channel).map(|i| (i, 1.0)).collect()
}

fn reshape_host_channels(layer: &mut ConvLayer, plan: &[(usize, f64)]) {
    layer.kernel = rebuild_axis(&layer.kernel, 0, plan);
    if let Some(b) = &mut layer.bias {
        *b = rebuild_vec(b, plan);
    }
    if let Some(off) = &mut layer.offset {
        *off = rebuild_axis(off, 0, plan);
    }
    for op in &mut layer.channelwise {
        if let crate::network::ChannelOp::BatchNorm(bn) = op {
            bn.gamma = rebuild_vec(&bn.gamma, plan);
            bn.beta = rebuild_vec(&bn.beta, plan);
            bn.running_mean = rebuild_vec(&bn.running_mean, plan);
            bn.running_var = rebuild_vec(&bn.running_var, plan);
        }
    }
}

fn reshape_downstream_inputs(net: &mut NetworkGraph, layer: usize, plan: &[(usize, f64)]) {
    if layer + 1 < net.num_layers() {
        let down = net.layer_mut(layer + 1);
        down.kernel = rebuild_axis(&down.kernel, 1, plan);
    } else {
        let head = net.head_mut();
        head.weight = rebuild_axis(&head.weight, 1, plan);
    }
}

/// Applies a split in place: rows `w_in ± θ` at `channel` and `channel + 1`,
/// downstream input slice duplicated at half weight, σ parameters copied.
pub fn split_in_place(net: &mut NetworkGraph, m: &SplitMorphism) -> Result<()> {
    m.check(net)?;
    let width = net.layer(m.layer).out_channels();
    let host_plan = split_plan(width, m.channel, 1.0);
    {
        let host = net.layer_mut(m.layer);
        reshape_host_channels(host, &host_plan);
        let th = m.theta.data();
        host.kernel.outer_mut(m.channel).iter_mut().zip(th).for_each(|(w, t)| *w += t);
        host.kernel.outer_mut(m.channel + 1).iter_mut().zip(th).for_each(|(w, t)| *w -= t);
    }
    reshape_downstream_inputs(net, m.layer, &split_plan(width, m.channel, 0.5));
    Ok(())
}

/// Removes a channel in place. Its zero-kernel response (input independent)
/// is folded into the downstream layer's offset map, or into the head bias,
/// so the result equals the `θ = w_in` morphism exactly.
pub fn prune_in_place(net: &mut NetworkGraph, m: &PruneMorphism) -> Result<()> {
    check_channel(net, m.layer, m.channel)?;
    let width = net.layer(m.layer).out_channels();
    if width < 2 {
        return Err(Error::Invariant(format!(
            "cannot prune the only channel of layer {}",
            m.layer
        )));
    }
    let fixed = zero_kernel_response(net, m.layer, m.channel)?;
    if fixed.data().iter().any(|&v| v != 0.0) {
        let contribution = downstream_delta(net, m.layer, m.channel, &fixed)?;
        if m.layer + 1 < net.num_layers() {
            let down = net.layer_mut(m.layer + 1);
            let shape = contribution.shape()[1..].to_vec();
            let contribution = contribution.reshape(&shape)?;
            down.offset = Some(match down.offset.take() {
                Some(off) => off.add(&contribution)?,
                None => contribution,
            });
        } else {
            let head = net.head_mut();
            head.bias
                .iter_mut()
                .zip(contribution.data())
                .for_each(|(b, c)| *b += c);
        }
    }
    reshape_host_channels(net.layer_mut(m.layer), &prune_plan(width, m.channel));
    reshape_downstream_inputs(net, m.layer, &prune_plan(width, m.channel));
    Ok(())
}

pub fn apply_split(net: &NetworkGraph, m: &SplitMorphism) -> Result<NetworkGraph> {
    let mut out = net.clone();
    split_in_place(&mut out, m)?;
    Ok(out)
}

pub fn apply_prune(net: &NetworkGraph, m: &PruneMorphism) -> Result<NetworkGraph> {
    let mut out = net.clone();
    prune_in_place(&mut out, m)?;
    Ok(out)
}

pub fn apply(net: &NetworkGraph, m: MorphismRef<'_>) -> Result<NetworkGraph> {
    match m {
        MorphismRef::Split(s) => apply_split(net, s),
        MorphismRef::Prune(p) => apply_prune(net, p),
    }
}
