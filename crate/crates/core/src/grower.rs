//! Alternating train and morph phases, selection under the loss-resource
//! tradeoff, and growth.

use std::cmp::Ordering;

use crate::data::{self, Augment, Dataset};
use crate::error::{Error, Result};
use crate::gauss_newton::{self, EstimateRecord};
use crate::morphism::{self, Morphism, MorphismBank, MorphismId, MorphismKind, MorphismRef};
use crate::network::{backward, evaluate, forward, Mode, NetworkGraph};
use crate::optim::{AdamConfig, AdamState, SgdConfig, SgdState};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct GrowConfig {
    /// Epochs per train phase and per morph phase.
    pub n_phase: usize,
    pub total_phases: usize,
    pub lambda_p: f64,
    pub select_fraction: f64,
    /// `None` averages over roughly the last two epochs: `S / (2 N)`.
    pub ema_momentum: Option<f64>,
    pub sgd: SgdConfig,
    /// Fractions of the total training epochs at which the learning rate
    /// is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub theta_init_scale: f64,
    pub augment: Augment,
    pub augment_pad: usize,
    /// Training samples used to measure the loss across a growth step.
    pub probe_samples: usize,
    pub seed: u64,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig {
            n_phase: 20,
            total_phases: 30,
            lambda_p: 3e-7,
            select_fraction: 0.3,
            ema_momentum: None,
            sgd: SgdConfig::default(),
            lr_milestones: vec![0.5, 0.75],
            lr_decay: 0.1,
            adam: AdamConfig::default(),
            batch_size: 64,
            eval_batch_size: 500,
            theta_init_scale: 0.1,
            augment: Augment::None,
            augment_pad: 4,
            probe_samples: 1000,
            seed: 0,
        }
    }
}

impl GrowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.select_fraction > 0.0 && self.select_fraction <= 1.0) {
            return Err(Error::Config(format!("select_fraction must lie in (0, 1], got {}", self.select_fraction)));
        }
        if self.n_phase == 0 {
            return Err(Error::Config("n_phase must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.lambda_p.is_nan() || self.lambda_p < 0.0 {
            return Err(Error::Config(format!("lambda_p must be non-negative, got {}", self.lambda_p)));
        }
        if let Some(m) = self.ema_momentum {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::Config(format!("ema_momentum must lie in (0, 1), got {m}")));
            }
        }
        Ok(())
    }

    pub fn momentum_for(&self, train_len: usize) -> f64 {
        self.ema_momentum
            .unwrap_or_else(|| (self.batch_size as f64 / (2.0 * train_len.max(1) as f64)).min(0.5))
    }
}

/// Per-sample batch order for one epoch.
fn batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    rng.permutation(n).chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Mini-batch SGD on model parameters with a step learning-rate schedule.
#[derive(Clone, Debug)]
pub struct Trainer {
    sgd: SgdState,
    base_lr: f64,
    milestones: Vec<usize>,
    decay: f64,
    epoch: usize,
    batch_size: usize,
    augment: Augment,
    pad: usize,
    order_rng: SeededRng,
    augment_rng: SeededRng,
    dropout_rng: SeededRng,
}

impl Trainer {
    pub fn new(cfg: &GrowConfig, total_epochs: usize, rng: &SeededRng) -> Self {
        Trainer {
            sgd: SgdState::new(cfg.sgd.clone()),
            base_lr: cfg.sgd.lr,
            milestones: cfg
                .lr_milestones
                .iter()
                .map(|f| (f * total_epochs as f64).round() as usize)
                .collect(),
            decay: cfg.lr_decay,
            epoch: 0,
            batch_size: cfg.batch_size,
            augment: cfg.augment,
            pad: cfg.augment_pad,
            order_rng: rng.fork(1),
            augment_rng: rng.fork(2),
            dropout_rng: rng.fork(3),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base_lr * self.decay.powi(passed as i32)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Drops momentum buffers, needed after the architecture changes.
    pub fn reset_momentum(&mut self) {
        self.sgd = SgdState::new(self.sgd.config.clone());
    }

    /// One epoch; returns the mean training loss over its batches.
    pub fn run_epoch(&mut self, net: &mut NetworkGraph, data: &Dataset) -> Result<f64> {
        self.sgd.config.lr = self.lr_at(self.epoch);
        let mut total = 0.0;
        let order = batches(data.len(), self.batch_size, &mut self.order_rng);
        for (bi, idx) in order.iter().enumerate() {
            let (images, labels) = data.batch(idx);
            let images = data::augment(&images, self.augment, self.pad, &mut self.augment_rng);
            let mode = Mode::Train {
                dropout_seed: self.dropout_rng.next_u64(),
            };
            let (loss, mut tape) = forward(net, &images, &labels, mode)
                .map_err(|e| Error::Numeric(format!("epoch {} batch {bi}: {e}", self.epoch)))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("epoch {} batch {bi}: loss is {loss}", self.epoch)));
            }
            let grads = backward(net, &mut tape)?;
            net.commit_running_stats(&tape)?;
            let gs = grads.slices();
            self.sgd.step(&mut net.param_slices_mut(), &gs);
            total += loss * idx.len() as f64;
        }
        self.epoch += 1;
        Ok(total / data.len().max(1) as f64)
    }
}

/// Runs `epochs` epochs; returns the last epoch's mean loss, or `None` for
/// zero epochs.
pub fn run_train_phase(net: &mut NetworkGraph, data: &Dataset, trainer: &mut Trainer, epochs: usize) -> Result<Option<f64>> {
    let mut last = None;
    for _ in 0..epochs {
        last = Some(trainer.run_epoch(net, data)?);
    }
    Ok(last)
}

/// Candidates for the current architecture with their estimates and θ
/// optimizer states.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    pub bank: MorphismBank,
    pub split_records: Vec<Vec<EstimateRecord>>,
    pub prune_records: Vec<Vec<EstimateRecord>>,
    adam: Vec<Vec<AdamState>>,
    order_rng: SeededRng,
}

impl CandidatePool {
    pub fn new(net: &NetworkGraph, cfg: &GrowConfig, momentum: f64, rng: &mut SeededRng) -> Result<Self> {
        let bank = MorphismBank::new(net, cfg.theta_init_scale, rng);
        let mut split_records = Vec::new();
        let mut prune_records = Vec::new();
        let mut adam = Vec::new();
        for layer in 0..net.num_layers() {
            let mut sr = Vec::new();
            let mut pr = Vec::new();
            for s in bank.splits(layer) {
                sr.push(EstimateRecord::new(
                    MorphismRef::Split(s).id(),
                    momentum,
                    morphism::param_delta(net, MorphismRef::Split(s))?,
                ));
            }
            for p in bank.prunes(layer) {
                pr.push(EstimateRecord::new(
                    MorphismRef::Prune(p).id(),
                    momentum,
                    morphism::param_delta(net, MorphismRef::Prune(p))?,
                ));
            }
            adam.push(vec![AdamState::new(cfg.adam.clone()); sr.len()]);
            split_records.push(sr);
            prune_records.push(pr);
        }
        Ok(CandidatePool {
            bank,
            split_records,
            prune_records,
            adam,
            order_rng: SeededRng::new(rng.next_u64()),
        })
    }

    pub fn records(&self) -> impl Iterator<Item = &EstimateRecord> {
        self.split_records
            .iter()
            .zip(&self.prune_records)
            .flat_map(|(s, p)| s.iter().chain(p.iter()))
    }

    /// One morph step on a single batch with the model frozen.
    pub fn step_batch(&mut self, net: &NetworkGraph, images: &crate::Tensor, labels: &[usize]) -> Result<()> {
        self.bank.check_matches(net)?;
        let (loss, mut tape) = forward(net, images, labels, Mode::Eval)?;
        if !(loss > 0.0) {
            // perfectly fit batch: no curvature information
            return Ok(());
        }
        backward(net, &mut tape)?;
        for layer in 0..self.bank.num_layers() {
            for c in 0..self.split_records[layer].len() {
                let split = &self.bank.splits(layer)[c];
                let (est, grad) = gauss_newton::gn_theta_gradient(net, &tape, split, loss)?;
                if !est.is_finite() {
                    return Err(Error::Numeric(format!("estimate for layer {layer} channel {c} is {est}")));
                }
                self.split_records[layer][c].update(est);
                let theta = &mut self.bank.splits_mut(layer)[c].theta;
                self.adam[layer][c].step(&mut [theta.data_mut()], &[grad.data()]);
            }
            for c in 0..self.prune_records[layer].len() {
                let prune = &self.bank.prunes(layer)[c];
                let est = gauss_newton::gn_morphism_estimate(net, &tape, MorphismRef::Prune(prune))?;
                self.prune_records[layer][c].update(est);
            }
        }
        Ok(())
    }
}

/// `epochs` epochs of morphism learning over `data`, model frozen.
pub fn run_morph_phase(net: &NetworkGraph, pool: &mut CandidatePool, data: &Dataset, batch_size: usize, epochs: usize) -> Result<()> {
    pool.bank.check_matches(net)?;
    for _ in 0..epochs {
        for idx in batches(data.len(), batch_size, &mut pool.order_rng) {
            let (images, labels) = data.batch(&idx);
            pool.step_batch(net, &images, &labels)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selected {
    pub morphism: Morphism,
    pub ema_delta_loss: f64,
    pub resource_delta: i64,
    pub score: f64,
}

impl Selected {
    pub fn id(&self) -> MorphismId {
        self.morphism.id()
    }
}

fn by_score(a: &Selected, b: &Selected) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.id().channel.cmp(&b.id().channel))
        // prunes first among equals
        .then(b.id().kind.cmp(&a.id().kind))
}

/// Per layer: keep candidates with `−ema > λ_p ΔR_p`, rank by
/// `−ema − λ_p ΔR_p`, take the top `⌈fraction · positives⌉`, then drop the
/// weaker of a split and prune on the same channel (ties keep the prune).
/// Prunes that would empty a layer are dropped, weakest first.
pub fn select_morphisms(pool: &CandidatePool, net: &NetworkGraph, cfg: &GrowConfig) -> Vec<Selected> {
    let mut out = Vec::new();
    for layer in 0..pool.bank.num_layers() {
        let mut positive: Vec<Selected> = Vec::new();
        let candidates = pool.split_records[layer]
            .iter()
            .zip(pool.bank.splits(layer))
            .map(|(r, s)| (r, Morphism::Split(s.clone())))
            .chain(
                pool.prune_records[layer]
                    .iter()
                    .zip(pool.bank.prunes(layer))
                    .map(|(r, p)| (r, Morphism::Prune(*p))),
            );
        for (rec, m) in candidates {
            if !rec.initialized {
                continue;
            }
            let penalty = cfg.lambda_p * rec.resource_delta as f64;
            if -rec.ema_delta_loss > penalty {
                positive.push(Selected {
                    morphism: m,
                    ema_delta_loss: rec.ema_delta_loss,
                    resource_delta: rec.resource_delta,
                    score: -rec.ema_delta_loss - penalty,
                });
            }
        }
        if positive.is_empty() {
            continue;
        }
        positive.sort_by(by_score);
        let keep = (cfg.select_fraction * positive.len() as f64).ceil() as usize;
        positive.truncate(keep.min(positive.len()));
        // the list is sorted, so the first entry for a channel is the winner
        let mut seen = std::collections::BTreeSet::new();
        positive.retain(|s| seen.insert(s.id().channel));
        let width = net.layer(layer).out_channels();
        let mut prunes = positive.iter().filter(|s| s.id().kind == MorphismKind::Prune).count();
        while prunes >= width {
            let weakest = positive
                .iter()
                .rposition(|s| s.id().kind == MorphismKind::Prune)
                .expect("counted above");
            positive.remove(weakest);
            prunes -= 1;
        }
        out.extend(positive);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppliedMorphism {
    pub id: MorphismId,
    pub ema_delta_loss: f64,
    /// Parameter delta at selection time.
    pub resource_delta: i64,
    /// Parameter delta actually realised when applied; differs from
    /// `resource_delta` when neighbouring layers changed width first.
    pub applied_delta: i64,
    pub score: f64,
}

/// Applies in descending (layer, channel) order so pending indices and θ
/// shapes stay valid.
pub fn apply_selected(net: &mut NetworkGraph, selected: &[Selected]) -> Result<Vec<AppliedMorphism>> {
    let mut order: Vec<&Selected> = selected.iter().collect();
    order.sort_by_key(|s| std::cmp::Reverse((s.id().layer, s.id().channel)));
    let mut applied = Vec::with_capacity(order.len());
    for s in order {
        let delta = morphism::param_delta(net, s.morphism.as_ref())?;
        let before = net.parameter_count() as i64;
        match &s.morphism {
            Morphism::Split(m) => morphism::split_in_place(net, m)?,
            Morphism::Prune(m) => morphism::prune_in_place(net, m)?,
        }
        debug_assert_eq!(net.parameter_count() as i64 - before, delta);
        applied.push(AppliedMorphism {
            id: s.id(),
            ema_delta_loss: s.ema_delta_loss,
            resource_delta: s.resource_delta,
            applied_delta: delta,
            score: s.score,
        });
    }
    Ok(applied)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRecord {
    pub phase: usize,
    pub widths_before: Vec<usize>,
    pub widths_after: Vec<usize>,
    pub params_before: usize,
    /// Parameter count after this phase's growth step.
    pub params: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_acc: f64,
    /// Eval-mode loss on the probe samples just before and after growth.
    pub loss_before_growth: f64,
    pub loss_after_growth: f64,
    pub applied: Vec<AppliedMorphism>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PhaseHistory {
    pub seed_params: usize,
    pub phases: Vec<PhaseRecord>,
}

impl PhaseHistory {
    /// Checks that every phase's count equals the previous count plus the
    /// applied deltas.
    pub fn check_bookkeeping(&self) -> Result<()> {
        let mut prev = self.seed_params as i64;
        for p in &self.phases {
            let sum: i64 = p.applied.iter().map(|a| a.applied_delta).sum();
            if p.params_before as i64 != prev || p.params as i64 != prev + sum {
                return Err(Error::Invariant(format!(
                    "phase {}: expected {} + {} parameters, recorded {} → {}",
                    p.phase, prev, sum, p.params_before, p.params
                )));
            }
            prev = p.params as i64;
        }
        Ok(())
    }
}

fn probe_loss(net: &NetworkGraph, probe: &Dataset, batch: usize) -> Result<f64> {
    if probe.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(evaluate(net, probe, batch)?.0)
}

/// Runs the full grow loop, calling `observe` after each phase.
pub fn grow_observed(
    seed_net: &NetworkGraph,
    train: &Dataset,
    eval: &Dataset,
    cfg: &GrowConfig,
    mut observe: impl FnMut(&PhaseRecord),
) -> Result<(NetworkGraph, PhaseHistory)> {
    cfg.validate()?;
    let rng = SeededRng::new(cfg.seed);
    let mut theta_rng = rng.fork(5);
    let mut trainer = Trainer::new(cfg, cfg.n_phase * cfg.total_phases, &rng);
    let momentum = cfg.momentum_for(train.len());
    let probe = train.slice(0, cfg.probe_samples.min(train.len()));
    let mut net = seed_net.clone();
    let mut history = PhaseHistory {
        seed_params: net.parameter_count(),
        phases: Vec::new(),
    };
    for phase in 0..cfg.total_phases {
        let train_loss = run_train_phase(&mut net, train, &mut trainer, cfg.n_phase)?.unwrap_or(f64::NAN);
        let (eval_loss, eval_acc) = if eval.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            evaluate(&net, eval, cfg.eval_batch_size)?
        };
        let mut pool = CandidatePool::new(&net, cfg, momentum, &mut theta_rng)?;
        run_morph_phase(&net, &mut pool, train, cfg.batch_size, cfg.n_phase)?;
        let selected = select_morphisms(&pool, &net, cfg);
        let widths_before = net.widths();
        let params_before = net.parameter_count();
        let loss_before_growth = probe_loss(&net, &probe, cfg.eval_batch_size)?;
        let applied = apply_selected(&mut net, &selected)?;
        let loss_after_growth = probe_loss(&net, &probe, cfg.eval_batch_size)?;
        if !applied.is_empty() {
            trainer.reset_momentum();
        }
        let record = PhaseRecord {
            phase,
            widths_before,
            widths_after: net.widths(),
            params_before,
            params: net.parameter_count(),
            train_loss,
            eval_loss,
            eval_acc,
            loss_before_growth,
            loss_after_growth,
            applied,
        };
        observe(&record);
        history.phases.push(record);
    }
    Ok((net, history))
}

pub fn grow(seed_net: &NetworkGraph, train: &Dataset, eval: &Dataset, cfg: &GrowConfig) -> Result<(NetworkGraph, PhaseHistory)> {
    grow_observed(seed_net, train, eval, cfg, |_| {})
}

/// Plain training for `epochs` epochs with the configured schedule; returns
/// final eval `(loss, accuracy)`.
pub fn train_for(net: &mut NetworkGraph, train: &Dataset, eval: &Dataset, cfg: &GrowConfig, epochs: usize) -> Result<(f64, f64)> {
    cfg.validate()?;
    let rng = SeededRng::new(cfg.seed);
    let mut trainer = Trainer::new(cfg, epochs, &rng);
    run_train_phase(net, train, &mut trainer, epochs)?;
    evaluate(net, eval, cfg.eval_batch_size)
}
