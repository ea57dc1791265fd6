//! Brute-force ground truth for morphism loss changes and the two
//! baselines that learn θ against the true expanded-network loss.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::morphism::{self, MorphismRef, SplitMorphism};
use crate::network::{backward, evaluate, forward, Mode, NetworkGraph};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

/// Mean eval-mode loss over a dataset.
pub fn dataset_loss(net: &NetworkGraph, data: &Dataset, batch: usize) -> Result<f64> {
    Ok(evaluate(net, data, batch)?.0)
}

/// Loss of the morphed network minus the loss of `net`, both in eval mode
/// over `data`.
pub fn true_delta_loss(net: &NetworkGraph, m: MorphismRef<'_>, data: &Dataset, batch: usize) -> Result<f64> {
    let base = dataset_loss(net, data, batch)?;
    true_delta_loss_from(net, m, data, batch, base)
}

/// As [`true_delta_loss`] with the original loss already known.
pub fn true_delta_loss_from(net: &NetworkGraph, m: MorphismRef<'_>, data: &Dataset, batch: usize, base_loss: f64) -> Result<f64> {
    let expanded = morphism::apply(net, m)?;
    Ok(dataset_loss(&expanded, data, batch)? - base_loss)
}

/// Loss of the split network at `m.theta` and its gradient with respect to
/// θ, by backpropagation through the expanded network.
pub fn expanded_loss_and_theta_grad(net: &NetworkGraph, m: &SplitMorphism, data: &Dataset, batch: usize) -> Result<(f64, Tensor)> {
    let expanded = morphism::apply_split(net, m)?;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(m.theta.shape());
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (images, labels) = data.batch(&idx);
        let (l, mut tape) = forward(&expanded, &images, &labels, Mode::Eval)?;
        let grads = backward(&expanded, &mut tape)?;
        let w = (end - start) as f64 / n as f64;
        loss += l * w;
        let k = &grads.layers[m.layer].kernel;
        // rows c and c+1 hold w_in + θ and w_in − θ
        for ((g, a), b) in grad
            .data_mut()
            .iter_mut()
            .zip(k.outer(m.channel))
            .zip(k.outer(m.channel + 1))
        {
            *g += w * (a - b);
        }
        start = end;
    }
    Ok((loss, grad))
}

/// Adam on θ against the true expanded-network loss, everything else
/// frozen. Returns the best iterate seen and its loss change.
pub fn optimize_expanded(
    net: &NetworkGraph,
    m: &SplitMorphism,
    data: &Dataset,
    steps: usize,
    adam: &AdamConfig,
    batch: usize,
) -> Result<(Tensor, f64)> {
    let base = dataset_loss(net, data, batch)?;
    let mut current = m.clone();
    let mut state = AdamState::new(adam.clone());
    let mut best: Option<(Tensor, f64)> = None;
    for step in 0..=steps {
        let (loss, grad) = if step < steps {
            expanded_loss_and_theta_grad(net, &current, data, batch)?
        } else {
            (dataset_loss(&morphism::apply_split(net, &current)?, data, batch)?, Tensor::zeros(&[0]))
        };
        let delta = loss - base;
        if best.as_ref().is_none_or(|(_, b)| delta < *b) {
            best = Some((current.theta.clone(), delta));
        }
        if step < steps {
            state.step(&mut [current.theta.data_mut()], &[grad.data()]);
        }
    }
    Ok(best.expect("at least one iterate"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchResult {
    pub theta: Tensor,
    pub delta_loss: f64,
    /// Scale of the winning point; `None` when the gradient vanished.
    pub scale: Option<f64>,
    pub zero_gradient: bool,
    /// `(scale, ΔL)` for every evaluated point.
    pub trace: Vec<(f64, f64)>,
}

/// `count` geometric scales from `lo` to `hi` inclusive.
pub fn geometric_scales(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let ratio = (hi / lo).ln() / (count - 1) as f64;
            (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
        }
    }
}

/// Evaluates the true loss change along the unit steepest-descent direction
/// taken at `m.theta` (a small symmetry-breaking start), at `num_scales`
/// geometric scales over `[1e-3, 10]`, and keeps the best.
pub fn steepest_line_search(
    net: &NetworkGraph,
    m: &SplitMorphism,
    data: &Dataset,
    num_scales: usize,
    batch: usize,
) -> Result<LineSearchResult> {
    if num_scales == 0 {
        return Err(Error::Config("line search needs at least one scale".into()));
    }
    let base = dataset_loss(net, data, batch)?;
    let (loss0, grad) = expanded_loss_and_theta_grad(net, m, data, batch)?;
    let norm = grad.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Ok(LineSearchResult {
            theta: m.theta.clone(),
            delta_loss: loss0 - base,
            scale: None,
            zero_gradient: true,
            trace: Vec::new(),
        });
    }
    let dir = grad.scale(-1.0 / norm);
    let mut best: Option<(f64, Tensor, f64)> = None;
    let mut trace = Vec::new();
    for s in geometric_scales(1e-3, 10.0, num_scales) {
        let cand = SplitMorphism {
            layer: m.layer,
            channel: m.channel,
            theta: dir.scale(s),
        };
        let delta = true_delta_loss_from(net, MorphismRef::Split(&cand), data, batch, base)?;
        trace.push((s, delta));
        if best.as_ref().is_none_or(|(_, _, b)| delta < *b) {
            best = Some((s, cand.theta, delta));
        }
    }
    let (s, theta, delta) = best.expect("at least one scale");
    Ok(LineSearchResult {
        theta,
        delta_loss: delta,
        scale: Some(s),
        zero_gradient: false,
        trace,
    })
}
