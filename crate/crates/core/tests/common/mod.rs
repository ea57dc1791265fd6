#![allow(dead_code)]

use gngrow::network::{backward, forward, ChannelOpSpec, LayerSpec, Mode, NetworkGraph, Tape};
use gngrow::{SeededRng, Tensor};

pub fn bn_relu() -> Vec<ChannelOpSpec> {
    vec![ChannelOpSpec::BatchNorm, ChannelOpSpec::Relu]
}

/// Three layers on `in_ch × 8 × 8` inputs, pooling after the first.
pub fn small_net(seed: u64, widths: [usize; 3], in_ch: usize, ops: Vec<ChannelOpSpec>) -> NetworkGraph {
    let specs = vec![
        LayerSpec::new(widths[0], 3, ops.clone(), true),
        LayerSpec::new(widths[1], 3, ops.clone(), false),
        LayerSpec::new(widths[2], 3, ops, false),
    ];
    let mut net = NetworkGraph::new([in_ch, 8, 8], &specs, 3, &mut SeededRng::new(seed)).unwrap();
    randomize_sigma(&mut net, seed);
    net
}

/// Moves batchnorm parameters and running statistics off their defaults so
/// tests exercise every term, and gives biases nonzero values.
pub fn randomize_sigma(net: &mut NetworkGraph, seed: u64) {
    let mut rng = SeededRng::new(seed ^ 0x5eed);
    for l in 0..net.num_layers() {
        let layer = net.layer_mut(l);
        if let Some(b) = &mut layer.bias {
            b.iter_mut().for_each(|v| *v = 0.2 * rng.normal());
        }
        for op in &mut layer.channelwise {
            if let gngrow::network::ChannelOp::BatchNorm(bn) = op {
                for c in 0..bn.gamma.len() {
                    bn.gamma[c] = 1.0 + 0.3 * rng.normal();
                    bn.beta[c] = 0.3 * rng.normal();
                    bn.running_mean[c] = 0.2 * rng.normal();
                    bn.running_var[c] = 0.5 + rng.uniform();
                }
            }
        }
    }
}

pub fn batch(seed: u64, n: usize, in_ch: usize, classes: usize) -> (Tensor, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let x = Tensor::randn(&[n, in_ch, 8, 8], 1.0, &mut rng);
    let y = (0..n).map(|_| rng.below(classes)).collect();
    (x, y)
}

pub fn eval_tape(net: &NetworkGraph, x: &Tensor, y: &[usize]) -> Tape {
    let (_, mut tape) = forward(net, x, y, Mode::Eval).unwrap();
    backward(net, &mut tape).unwrap();
    tape
}

pub fn loss(net: &NetworkGraph, x: &Tensor, y: &[usize]) -> f64 {
    forward(net, x, y, Mode::Eval).unwrap().0
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}
