mod common;

use common::*;
use gngrow::data::{synthetic, Dataset};
use gngrow::grower::*;
use gngrow::morphism::{MorphismKind, MorphismRef};
use gngrow::network::{evaluate, ChannelOpSpec, LayerSpec, NetworkGraph};
use gngrow::optim::SgdConfig;
use gngrow::oracle::true_delta_loss;
use gngrow::{SeededRng, Tensor};

fn data() -> (Dataset, Dataset) {
    (synthetic(4, 256, 1, 8, 3), synthetic(4, 128, 1, 8, 4))
}

fn seed_net(width: usize, seed: u64) -> NetworkGraph {
    let specs = vec![
        LayerSpec::new(width, 3, bn_relu(), true),
        LayerSpec::new(width, 3, bn_relu(), false),
        LayerSpec::new(width, 3, bn_relu(), false),
    ];
    NetworkGraph::new([1, 8, 8], &specs, 4, &mut SeededRng::new(seed)).unwrap()
}

fn cfg() -> GrowConfig {
    GrowConfig {
        n_phase: 1,
        total_phases: 3,
        lambda_p: 0.0,
        batch_size: 32,
        eval_batch_size: 128,
        probe_samples: 256,
        sgd: SgdConfig { lr: 0.05, ..SgdConfig::default() },
        seed: 7,
        ..GrowConfig::default()
    }
}

fn trained(epochs: usize) -> (NetworkGraph, Dataset, Dataset) {
    let (train, eval) = data();
    let mut net = seed_net(4, 1);
    let c = GrowConfig { lr_milestones: vec![], ..cfg() };
    train_for(&mut net, &train, &eval, &c, epochs).unwrap();
    (net, train, eval)
}

#[test]
fn zero_epochs_leave_the_net_unchanged() {
    let (train, _) = data();
    let mut net = seed_net(3, 2);
    let before = net.clone();
    let mut trainer = Trainer::new(&cfg(), 10, &SeededRng::new(0));
    assert_eq!(run_train_phase(&mut net, &train, &mut trainer, 0).unwrap(), None);
    assert_eq!(net.flat_params(), before.flat_params());
}

#[test]
fn one_epoch_on_a_separable_toy_set_reduces_loss() {
    let mut rng = SeededRng::new(3);
    let mut px = Vec::new();
    let mut labels = Vec::new();
    for i in 0..10 {
        let y = i % 2;
        let sign = if y == 0 { 1.0 } else { -1.0 };
        px.extend((0..64).map(|_| sign + 0.1 * rng.normal()));
        labels.push(y);
    }
    let toy = Dataset::new(Tensor::from_vec(&[10, 1, 8, 8], px).unwrap(), labels, 2).unwrap();
    let specs = vec![LayerSpec::new(2, 3, vec![ChannelOpSpec::Relu], true)];
    let mut net = NetworkGraph::new([1, 8, 8], &specs, 2, &mut SeededRng::new(4)).unwrap();
    let c = GrowConfig { batch_size: 2, sgd: SgdConfig { lr: 0.1, ..SgdConfig::default() }, ..cfg() };
    let mut trainer = Trainer::new(&c, 1, &SeededRng::new(5));
    let before = evaluate(&net, &toy, 10).unwrap().0;
    trainer.run_epoch(&mut net, &toy).unwrap();
    let after = evaluate(&net, &toy, 10).unwrap().0;
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn training_is_bit_reproducible() {
    let (a, ..) = trained(2);
    let (b, ..) = trained(2);
    assert_eq!(a.flat_params(), b.flat_params());
    assert_eq!(a, b);
}

#[test]
fn phases_touch_only_their_own_parameters() {
    let (mut net, train, _) = trained(1);
    let c = cfg();
    let mut pool = CandidatePool::new(&net, &c, 0.1, &mut SeededRng::new(9)).unwrap();
    let params = net.flat_params();
    run_morph_phase(&net, &mut pool, &train, 32, 1).unwrap();
    assert_eq!(net.flat_params(), params);
    assert!(pool.records().all(|r| r.initialized));
    let thetas: Vec<Tensor> = (0..3).flat_map(|l| pool.bank.splits(l).iter().map(|s| s.theta.clone()).collect::<Vec<_>>()).collect();
    let mut trainer = Trainer::new(&c, 3, &SeededRng::new(1));
    run_train_phase(&mut net, &train, &mut trainer, 1).unwrap();
    assert_ne!(net.flat_params(), params);
    let after: Vec<Tensor> = (0..3).flat_map(|l| pool.bank.splits(l).iter().map(|s| s.theta.clone()).collect::<Vec<_>>()).collect();
    assert_eq!(thetas, after);
    // the pool is now stale
    let mut grown = net.clone();
    gngrow::morphism::split_in_place(&mut grown, pool.bank.split(0, 0)).unwrap();
    assert!(matches!(run_morph_phase(&grown, &mut pool, &train, 32, 1), Err(gngrow::Error::Invariant(_))));
}

#[test]
fn zero_morph_epochs_select_nothing() {
    let (net, train, _) = trained(1);
    let mut pool = CandidatePool::new(&net, &cfg(), 0.1, &mut SeededRng::new(9)).unwrap();
    run_morph_phase(&net, &mut pool, &train, 32, 0).unwrap();
    assert!(pool.records().all(|r| !r.initialized));
    assert!(select_morphisms(&pool, &net, &cfg()).is_empty());
}

#[test]
fn last_layer_estimates_track_the_oracle() {
    let (net, train, _) = trained(5);
    let c = cfg();
    let mut pool = CandidatePool::new(&net, &c, c.momentum_for(train.len()), &mut SeededRng::new(11)).unwrap();
    run_morph_phase(&net, &mut pool, &train, 32, 5).unwrap();
    let last = net.num_layers() - 1;
    let mut misses = Vec::new();
    for (rec, split) in pool.split_records[last].iter().zip(pool.bank.splits(last)) {
        let truth = true_delta_loss(&net, MorphismRef::Split(split), &train, 256).unwrap();
        let ratio = rec.ema_delta_loss.abs() / truth.abs();
        if !(1.0 / 3.0..=3.0).contains(&ratio) {
            misses.push(format!("channel {}: ema {:e} true {truth:e}", rec.id.channel, rec.ema_delta_loss));
        }
    }
    assert!(misses.is_empty(), "{}", misses.join("; "));
}

#[test]
fn dead_channels_offer_no_improvement() {
    let (mut net, train, _) = trained(2);
    net.layer_mut(1).kernel.outer_mut(2).iter_mut().for_each(|w| *w = 0.0);
    let c = cfg();
    let mut pool = CandidatePool::new(&net, &c, 0.1, &mut SeededRng::new(12)).unwrap();
    run_morph_phase(&net, &mut pool, &train, 32, 2).unwrap();
    assert!(pool.split_records[1][2].ema_delta_loss.abs() <= 1e-12);
    assert!(pool.bank.split(1, 2).theta.data().iter().all(|&v| v == 0.0));
}

fn grow_with(lambda: f64, phases: usize) -> (NetworkGraph, PhaseHistory) {
    let (train, eval) = data();
    let c = GrowConfig { lambda_p: lambda, total_phases: phases, ..cfg() };
    grow(&seed_net(3, 5), &train, &eval, &c).unwrap()
}

#[test]
fn grow_history_is_consistent_and_sound() {
    let (net, h) = grow_with(0.0, 3);
    assert_eq!(h.phases.len(), 3);
    h.check_bookkeeping().unwrap();
    assert_eq!(h.phases.last().unwrap().params, net.parameter_count());
    assert_eq!(h.phases.last().unwrap().widths_after, net.widths());
    let mut expected = h.seed_params as i64;
    for p in &h.phases {
        assert_eq!(p.params_before as i64, expected);
        expected += p.applied.iter().map(|a| a.applied_delta).sum::<i64>();
        assert_eq!(p.params as i64, expected);
        for a in &p.applied {
            assert!(-a.ema_delta_loss > 0.0);
        }
    }
    assert!(h.phases.iter().any(|p| !p.applied.is_empty()));
}

#[test]
fn grow_is_deterministic() {
    let (a, ha) = grow_with(1e-5, 2);
    let (b, hb) = grow_with(1e-5, 2);
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn huge_resource_penalty_never_splits() {
    let (_, h) = grow_with(1e6, 2);
    for p in &h.phases {
        assert!(p.applied.iter().all(|a| a.id.kind == MorphismKind::Prune));
        for a in &p.applied {
            assert!(-a.ema_delta_loss > 1e6 * a.resource_delta as f64);
        }
    }
}

#[test]
fn larger_penalty_ends_no_larger() {
    let (small, _) = grow_with(3e-7, 3);
    let (large, _) = grow_with(1e-3, 3);
    assert!(large.parameter_count() <= small.parameter_count());
}

#[test]
fn lr_milestones_scale_with_the_run() {
    let t = Trainer::new(&GrowConfig::default(), 600, &SeededRng::new(0));
    assert_eq!(t.lr_at(0), 0.1);
    assert!((t.lr_at(300) - 0.01).abs() < 1e-15);
    assert!((t.lr_at(450) - 0.001).abs() < 1e-15);
    let t = Trainer::new(&GrowConfig::default(), 12, &SeededRng::new(0));
    assert_eq!(t.lr_at(5), 0.1);
    assert!((t.lr_at(6) - 0.01).abs() < 1e-15);
    assert!((t.lr_at(9) - 0.001).abs() < 1e-15);
}
