//! Acceptance criteria 1–9. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured values. Tests hold a shared lock so the wall
//! time of each criterion is measured alone.

mod common;

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use gngrow::commands::*;
use gngrow::config::RunConfig;
use gngrow::data::Dataset;
use gngrow::gauss_newton::*;
use gngrow::morphism::*;
use gngrow::network::{backward, forward, ChannelOpSpec, Mode, NetworkGraph};
use gngrow::oracle::true_delta_loss;
use gngrow::report::{pearson, read_csv};
use gngrow::tensor::{conv2d, conv2d_grads, finite_difference, maxpool2, maxpool2_backward};
use gngrow::{checkpoint, SeededRng, Tensor};

const PRESERVE_TOL: f64 = 1e-6;
const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const IDENTITY_TOL: f64 = 1e-10;
const SCALE_TOL: f64 = 1e-12;
const MIN_DECAY_EXPONENT: f64 = 1.9;
const MIN_LAST_LAYER_R: f64 = 0.8;
const TOP_DECILE_FACTOR: f64 = 3.0;
const MIN_TOP_DECILE_SHARE: f64 = 0.7;
const MIN_ACC_GAIN: f64 = 0.01;
const MAX_PARAM_RATIO: f64 = 2.0;
const EMA_MOMENTUM: f64 = 6.4e-4;
const EMA_TOL: f64 = 1e-6;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: usize, pass: bool, elapsed: Duration, limit: Option<Duration>, detail: &str) {
    let in_time = limit.is_none_or(|l| elapsed < l);
    let ok = pass && in_time;
    let limit = limit.map_or(String::new(), |l| format!(" < {} s", l.as_secs()));
    println!(
        "criterion {n}: {} ({detail}; {:.1} s{limit})",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(in_time, "criterion {n} exceeded its time limit");
}

fn config(name: &str) -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn quiet() -> impl FnMut(&str) {
    |_: &str| {}
}

#[test]
fn criterion_1_function_preservation() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = SeededRng::new(1001);
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let widths = [1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5)];
        let ops = match rng.below(3) {
            0 => bn_relu(),
            1 => vec![ChannelOpSpec::Relu],
            _ => vec![ChannelOpSpec::BatchNorm, ChannelOpSpec::Relu, ChannelOpSpec::Dropout(0.2)],
        };
        let in_ch = 1 + rng.below(3);
        let net = small_net(case, widths, in_ch, ops);
        let layer = rng.below(3);
        let channel = rng.below(widths[layer]);
        let (x, y) = batch(5000 + case, 4, in_ch, 3);
        let split = apply_split(&net, &SplitMorphism::zero(&net, layer, channel).unwrap()).unwrap();
        let a = forward(&net, &x, &y, Mode::Eval).unwrap().1.logits;
        let b = forward(&split, &x, &y, Mode::Eval).unwrap().1.logits;
        for (p, q) in a.data().iter().zip(b.data()) {
            worst = worst.max((p - q).abs());
        }
    }
    verdict(
        1,
        worst <= PRESERVE_TOL,
        start.elapsed(),
        Some(Duration::from_secs(60)),
        &format!("100 cases, max |Δoutput| {worst:.2e} ≤ {PRESERVE_TOL:e}"),
    );
}

fn fd_error(analytic: &[f64], numeric: &Tensor) -> f64 {
    vec_rel_err(analytic, numeric.data())
}

fn set_flat(net: &mut NetworkGraph, flat: &[f64]) {
    let mut i = 0;
    for s in net.param_slices_mut() {
        let n = s.len();
        s.copy_from_slice(&flat[i..i + n]);
        i += n;
    }
}

/// `∂ℓ_s/∂t` of the loss with `t·Δz_s` injected into the downstream
/// pre-activation of one sample.
fn injected_derivative(net: &NetworkGraph, tape: &gngrow::network::Tape, layer: usize, dz: &[f64], x: &Tensor, y: &[usize]) -> f64 {
    let f = |t: &Tensor| {
        let mut n = net.clone();
        let step: Vec<f64> = dz.iter().map(|v| t.data()[0] * v).collect();
        if layer + 1 < net.num_layers() {
            let shape = &tape.layers[layer + 1].z_pre.shape()[1..];
            n.layer_mut(layer + 1).offset = Some(Tensor::from_vec(shape, step).unwrap());
        } else {
            for (b, s) in n.head_mut().bias.iter_mut().zip(&step) {
                *b += s;
            }
        }
        loss(&n, x, y)
    };
    finite_difference(f, &Tensor::zeros(&[1]), FD_EPS).data()[0]
}

#[test]
fn criterion_2_gradient_suite() {
    let _g = serial();
    let start = Instant::now();
    let mut errs: Vec<(String, f64)> = Vec::new();
    let mut rng = SeededRng::new(2002);

    for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
        let x = Tensor::randn(&[2, 3, 6, 5], 1.0, &mut rng);
        let k = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
        let up = Tensor::randn(conv2d(&x, &k, stride, pad).unwrap().shape(), 1.0, &mut rng);
        let (gi, gk) = conv2d_grads(&x, &k, &up, stride, pad).unwrap();
        let fx = finite_difference(|p| conv2d(p, &k, stride, pad).unwrap().dot(&up).unwrap(), &x, FD_EPS);
        let fk = finite_difference(|p| conv2d(&x, p, stride, pad).unwrap().dot(&up).unwrap(), &k, FD_EPS);
        errs.push((format!("conv input s{stride}p{pad}"), fd_error(gi.data(), &fx)));
        errs.push((format!("conv kernel s{stride}p{pad}"), fd_error(gk.data(), &fk)));
    }

    let x = Tensor::randn(&[2, 3, 6, 8], 1.0, &mut rng);
    let (y, idx) = maxpool2(&x).unwrap();
    let up = Tensor::randn(y.shape(), 1.0, &mut rng);
    let g = maxpool2_backward(&idx, &up).unwrap();
    let fd = finite_difference(|p| maxpool2(p).unwrap().0.dot(&up).unwrap(), &x, FD_EPS);
    errs.push(("maxpool".into(), fd_error(g.data(), &fd)));

    // σ_β, head and everything between, through the full parameter gradient
    let net = small_net(21, [3, 4, 3], 2, bn_relu());
    assert!(net.parameter_count() <= 5000);
    let (x, y) = batch(22, 4, 2, 3);
    let mut worst_sigma = 0.0f64;
    for l in 0..3 {
        for c in 0..net.layer(l).out_channels() {
            for _ in 0..10 {
                let v = 2.0 * rng.normal();
                let layer = net.layer(l);
                let (_, dy) = layer.sigma_eval(c, v);
                let (lo, hi) = (layer.sigma_eval(c, v - FD_EPS).0, layer.sigma_eval(c, v + FD_EPS).0);
                let kink = (lo == 0.0) != (hi == 0.0);
                if !kink {
                    worst_sigma = worst_sigma.max(rel_err(dy, (hi - lo) / (2.0 * FD_EPS)));
                }
            }
        }
    }
    errs.push(("sigma".into(), worst_sigma));
    for (mode, what) in [(Mode::Eval, "network eval"), (Mode::Train { dropout_seed: 3 }, "network train")] {
        let (_, mut tape) = forward(&net, &x, &y, mode).unwrap();
        let analytic = backward(&net, &mut tape).unwrap().flat();
        let p0 = Tensor::from_vec(&[analytic.len()], net.flat_params()).unwrap();
        let fd = finite_difference(
            |p| {
                let mut n = net.clone();
                set_flat(&mut n, p.data());
                forward(&n, &x, &y, mode).unwrap().0
            },
            &p0,
            FD_EPS,
        );
        errs.push((what.into(), fd_error(&analytic, &fd)));
    }
    let (_, mut tape) = forward(&net, &x, &y, Mode::Eval).unwrap();
    backward(&net, &mut tape).unwrap();
    let b0 = Tensor::from_vec(&[3], net.head().bias.clone()).unwrap();
    let fd = finite_difference(
        |b| {
            let mut n = net.clone();
            n.head_mut().bias = b.data().to_vec();
            loss(&n, &x, &y) * x.shape()[0] as f64
        },
        &b0,
        FD_EPS,
    );
    let g_logits = tape.g_logits.as_ref().unwrap();
    let summed: Vec<f64> = (0..3).map(|k| (0..x.shape()[0]).map(|s| g_logits.outer(s)[k]).sum()).collect();
    errs.push(("head".into(), fd_error(&summed, &fd)));

    // replay: d_s equals the directional derivative along the replayed Δz_s
    let ds = Dataset::new(x.clone(), y.clone(), 3).unwrap();
    let mut worst_replay = 0.0f64;
    for layer in 0..3 {
        let theta = Tensor::randn(&[net.layer(layer).in_channels(), 3, 3], 0.3, &mut rng);
        let split = SplitMorphism::with_theta(&net, layer, 1, theta).unwrap();
        let prune = PruneMorphism { layer, channel: 0 };
        for m in [MorphismRef::Split(&split), MorphismRef::Prune(&prune)] {
            let dz = replay_delta_z(&net, &tape, m).unwrap();
            let d = replay_inner_products(&net, &tape, m).unwrap();
            for s in 0..x.shape()[0] {
                let (xs, ys) = ds.batch(&[s]);
                let fd = injected_derivative(&net, &tape, layer, dz.outer(s), &xs, &ys);
                worst_replay = worst_replay.max(rel_err(d[s], fd));
            }
        }
    }
    errs.push(("replay".into(), worst_replay));

    let mut worst_gn = 0.0f64;
    for layer in 0..3 {
        let theta = Tensor::randn(&[net.layer(layer).in_channels(), 3, 3], 0.3, &mut rng);
        let m = SplitMorphism::with_theta(&net, layer, 2, theta.clone()).unwrap();
        let (_, grad) = gn_theta_gradient(&net, &tape, &m, tape.loss).unwrap();
        let fd = finite_difference(
            |t| {
                let m = SplitMorphism::with_theta(&net, layer, 2, t.clone()).unwrap();
                gn_from_products(&replay_inner_products(&net, &tape, MorphismRef::Split(&m)).unwrap(), tape.loss).unwrap()
            },
            &theta,
            FD_EPS,
        );
        worst_gn = worst_gn.max(fd_error(grad.data(), &fd));
    }
    errs.push(("gn_theta_gradient".into(), worst_gn));

    let (name, worst) = errs.iter().fold(("", 0.0f64), |acc, (n, e)| if *e > acc.1 { (n, *e) } else { acc });
    verdict(
        2,
        errs.iter().all(|(_, e)| *e <= FD_TOL),
        start.elapsed(),
        Some(Duration::from_secs(300)),
        &format!("{} checks, worst rel. error {worst:.2e} ({name}) ≤ {FD_TOL:e}", errs.len()),
    );
}

#[test]
fn criterion_3_least_squares_identities() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = SeededRng::new(3003);
    let (mut worst_full, mut worst_rank1) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let cols = 2 + rng.below(15);
        let rows = 1 + rng.below(cols);
        let p = LeastSquaresProblem::random(rows, cols, &mut rng);
        let lambda = 2.0 * rng.normal();
        let dz: Vec<f64> = p.solution_direction().unwrap().iter().map(|v| lambda * v).collect();
        let (t, g) = ls_quadratic_pair(&p, &dz).unwrap();
        worst_full = worst_full.max(rel_err(t, g));

        let p1 = LeastSquaresProblem::random(1, cols, &mut rng);
        let dz: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
        let (t, g) = ls_quadratic_pair(&p1, &dz).unwrap();
        worst_rank1 = worst_rank1.max(rel_err(t, g));
    }
    let sweep = rank_sweep(16, &[1, 2, 4, 8, 16], 100, 100, &mut rng).unwrap();
    let monotone = sweep.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        3,
        worst_full <= IDENTITY_TOL && worst_rank1 <= IDENTITY_TOL && monotone,
        start.elapsed(),
        Some(Duration::from_secs(60)),
        &format!(
            "1000 instances: full-solution {worst_full:.1e}, rank-1 {worst_rank1:.1e} ≤ {IDENTITY_TOL:e}; rank sweep {} {:?}",
            if monotone { "non-decreasing" } else { "NOT monotone" },
            sweep.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        ),
    );
}

fn decay_exponent(errs: &[f64]) -> f64 {
    let n = errs.len() as f64;
    let ys: Vec<f64> = errs.iter().map(|e| e.log2()).collect();
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = ys.iter().enumerate().map(|(k, y)| (k as f64 - mx) * (y - my)).sum();
    let sxx: f64 = (0..errs.len()).map(|k| (k as f64 - mx).powi(2)).sum();
    -sxy / sxx
}

#[test]
fn criterion_4_estimator_behaviour() {
    let _g = serial();
    let start = Instant::now();
    let net = small_net(41, [3, 4, 3], 2, bn_relu());
    let mut rng = SeededRng::new(4004);
    let x = Tensor::randn(&[32, 2, 8, 8], 1.0, &mut rng);
    let y: Vec<usize> = (0..32).map(|_| rng.below(3)).collect();
    let data = Dataset::new(x.clone(), y.clone(), 3).unwrap();
    let tape = eval_tape(&net, &x, &y);

    let zero_ok = (0..3).all(|l| {
        let m = SplitMorphism::zero(&net, l, 0).unwrap();
        gn_morphism_estimate(&net, &tape, MorphismRef::Split(&m)).unwrap() == 0.0
    });

    let mut worst_scale = 0.0f64;
    for layer in 0..3 {
        let theta = Tensor::randn(&[net.layer(layer).in_channels(), 3, 3], 0.5, &mut rng);
        let m = SplitMorphism::with_theta(&net, layer, 1, theta).unwrap();
        let dz = replay_delta_z(&net, &tape, MorphismRef::Split(&m)).unwrap();
        let g = downstream_g(&tape, layer).unwrap();
        let base = gn_batch_estimate(&dz, g, tape.loss).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let scaled = gn_batch_estimate(&dz, &g.scale(c), c * tape.loss).unwrap();
            worst_scale = worst_scale.max(rel_err(scaled, c * base));
        }
    }

    // d = (1, −3) with L̂ = 1: per-sample 0.25, pooled −0.75
    let dz = Tensor::from_vec(&[2, 1], vec![1.0, -3.0]).unwrap();
    let ones = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
    let per_sample = gn_batch_estimate(&dz, &ones, 1.0).unwrap();
    let discriminates = (per_sample - 0.25).abs() <= 1e-15;

    let mut exponents = Vec::new();
    for layer in 0..3 {
        let base = Tensor::randn(&[net.layer(layer).in_channels(), 3, 3], 0.5, &mut SeededRng::new(90 + layer as u64));
        let errs: Vec<f64> = (0..6)
            .map(|k| {
                let m = SplitMorphism::with_theta(&net, layer, 1, base.scale(0.5f64.powi(k))).unwrap();
                let est = gn_morphism_estimate(&net, &tape, MorphismRef::Split(&m)).unwrap();
                let truth = true_delta_loss(&net, MorphismRef::Split(&m), &data, 32).unwrap();
                (est - truth).abs()
            })
            .collect();
        exponents.push(decay_exponent(&errs));
    }
    let min_exp = exponents.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        4,
        zero_ok && worst_scale <= SCALE_TOL && discriminates && min_exp >= MIN_DECAY_EXPONENT,
        start.elapsed(),
        Some(Duration::from_secs(120)),
        &format!(
            "θ=0 → 0: {zero_ok}; scale rel. {worst_scale:.1e} ≤ {SCALE_TOL:e}; per-sample estimate {per_sample} (pooled −0.75); decay exponents {:?} ≥ {MIN_DECAY_EXPONENT}",
            exponents.iter().map(|e| format!("{e:.2}")).collect::<Vec<_>>()
        ),
    );
}

struct Run<T> {
    value: T,
    bytes: Vec<Vec<u8>>,
    elapsed: Duration,
}

fn read_all(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

fn verify_run(tag: &str) -> Run<Vec<ScatterRow>> {
    let dir = scratch(&format!("verify-{tag}"));
    let start = Instant::now();
    let value = cmd_verify_gn(&config("verify_mnist.ini"), &dir, &mut quiet()).unwrap();
    let elapsed = start.elapsed();
    Run { value, bytes: read_all(&dir, &[SCATTER_FILE]), elapsed }
}

fn compare_run(tag: &str) -> Run<Vec<BaselineRow>> {
    let dir = scratch(&format!("compare-{tag}"));
    let start = Instant::now();
    let value = cmd_compare(&config("compare_mnist.ini"), &dir, &mut quiet()).unwrap();
    let elapsed = start.elapsed();
    Run { value, bytes: read_all(&dir, &[BASELINES_FILE]), elapsed }
}

const LAMBDAS: [f64; 2] = [1e-6, 1e-5];

fn grow_run(tag: &str) -> Run<Vec<(RunConfig, PathBuf, GrowOutcome)>> {
    let start = Instant::now();
    let mut value = Vec::new();
    let mut bytes = Vec::new();
    for lambda in LAMBDAS {
        let mut cfg = config("grow_mnist.ini");
        cfg.grow.lambda_p = lambda;
        let dir = scratch(&format!("grow-{lambda:e}-{tag}"));
        let out = cmd_grow(&cfg, &dir, &mut quiet()).unwrap();
        bytes.extend(read_all(&dir, &[HISTORY_FILE, CHECKPOINT_FILE, SVG_FILE]));
        value.push((cfg, dir, out));
    }
    Run { value, bytes, elapsed: start.elapsed() }
}

static VERIFY: OnceLock<Run<Vec<ScatterRow>>> = OnceLock::new();
static COMPARE: OnceLock<Run<Vec<BaselineRow>>> = OnceLock::new();
static GROW: OnceLock<Run<Vec<(RunConfig, PathBuf, GrowOutcome)>>> = OnceLock::new();

fn layer_r(rows: &[ScatterRow], layer: usize) -> f64 {
    let (ema, truth): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.layer == layer)
        .map(|r| (r.ema_delta_loss, r.true_delta_loss))
        .unzip();
    pearson(&ema, &truth).unwrap_or(f64::NAN)
}

#[test]
fn criterion_5_estimates_track_true_loss_changes() {
    let _g = serial();
    let run = VERIFY.get_or_init(|| verify_run("a"));
    let cfg = config("verify_mnist.ini");
    assert_eq!(cfg.layers.iter().map(|l| l.out_channels).collect::<Vec<_>>(), vec![8, 8, 8]);
    assert_eq!((cfg.verify.train_epochs, cfg.verify.morph_epochs), (5, 5));
    let last = cfg.layers.len() - 1;
    let r: Vec<f64> = (0..=last).map(|l| layer_r(&run.value, l)).collect();
    verdict(
        5,
        r[last] >= MIN_LAST_LAYER_R && r[0] <= r[last],
        run.elapsed,
        Some(Duration::from_secs(20 * 60)),
        &format!(
            "Pearson r per layer {:?}; last ≥ {MIN_LAST_LAYER_R}, first ≤ last",
            r.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    );
}

/// Channels ranked by the expanded baseline's loss decrease, top tenth
/// (at least one).
fn top_decile(rows: &[BaselineRow]) -> Vec<&BaselineRow> {
    let mut ranked: Vec<&BaselineRow> = rows.iter().collect();
    ranked.sort_by(|a, b| a.expanded_delta_loss.total_cmp(&b.expanded_delta_loss));
    ranked.truncate(rows.len().div_ceil(10));
    ranked
}

fn within_factor(r: &BaselineRow) -> bool {
    r.expanded_delta_loss >= 0.0 || -r.gn_delta_loss * TOP_DECILE_FACTOR >= -r.expanded_delta_loss
}

#[test]
fn criterion_6_learned_morphisms_against_baselines() {
    let _g = serial();
    let run = COMPARE.get_or_init(|| compare_run("a"));
    let rows = &run.value;
    let beats = rows.iter().filter(|r| r.gn_delta_loss < r.line_search_delta_loss).count();
    let top = top_decile(rows);
    let close = top.iter().filter(|r| within_factor(r)).count();
    let share = close as f64 / top.len() as f64;
    verdict(
        6,
        2 * beats > rows.len() && share >= MIN_TOP_DECILE_SHARE,
        run.elapsed,
        Some(Duration::from_secs(30 * 60)),
        &format!(
            "GN beats line search on {beats}/{} channels; within {TOP_DECILE_FACTOR}× of expanded on {close}/{} top-decile channels (need ≥ {MIN_TOP_DECILE_SHARE})",
            rows.len(),
            top.len()
        ),
    );
}

#[test]
fn criterion_7_end_to_end_growth() {
    let _g = serial();
    let run = GROW.get_or_init(|| grow_run("a"));
    let start = Instant::now();
    let (small_cfg, _, small) = &run.value[0];
    let (_, _, large) = &run.value[1];
    assert_eq!(small_cfg.grow.n_phase, 2);
    assert_eq!(small_cfg.grow.total_phases, 6);

    let a = large.net.parameter_count() <= small.net.parameter_count();

    let p = prepare(small_cfg).unwrap();
    let epochs = small_cfg.retrain_epochs();
    let seed = retrain_architecture(&p.seed_net, &p, small_cfg, epochs).unwrap();
    let grown = retrain_architecture(&small.net, &p, small_cfg, epochs).unwrap();
    let gain = grown.final_acc - seed.final_acc;
    let ratio = grown.params as f64 / seed.params as f64;
    let b = gain >= MIN_ACC_GAIN && ratio <= MAX_PARAM_RATIO;

    let mut c = true;
    for (_, dir, out) in &run.value {
        c &= out.history.check_bookkeeping().is_ok();
        let (_, rows) = read_csv(&dir.join(HISTORY_FILE)).unwrap();
        c &= rows.len() == out.history.phases.len();
        for (row, phase) in rows.iter().zip(&out.history.phases) {
            c &= row[1].parse::<usize>().ok() == Some(phase.params);
        }
        let ckpt = checkpoint::load(&dir.join(CHECKPOINT_FILE)).unwrap();
        let last = out.history.phases.last().unwrap();
        c &= ckpt.parameter_count() == last.params && ckpt.widths() == last.widths_after;
    }
    verdict(
        7,
        a && b && c,
        run.elapsed + start.elapsed(),
        Some(Duration::from_secs(45 * 60)),
        &format!(
            "(a) {}: params {} at λ {:e} vs {} at λ {:e}; (b) {}: retrained grown acc {:.4} vs seed {:.4} (gain {:+.4}, need ≥ {MIN_ACC_GAIN}) at {}/{} = {ratio:.2}× seed params (need ≤ {MAX_PARAM_RATIO}); (c) {}",
            if a { "ok" } else { "FAIL" },
            large.net.parameter_count(),
            LAMBDAS[1],
            small.net.parameter_count(),
            LAMBDAS[0],
            if b { "ok" } else { "FAIL" },
            grown.final_acc,
            seed.final_acc,
            gain,
            grown.params,
            seed.params,
            if c { "bookkeeping exact" } else { "bookkeeping MISMATCH" }
        ),
    );
}

#[test]
fn criterion_8_reruns_are_byte_identical() {
    let _g = serial();
    let first = (
        VERIFY.get_or_init(|| verify_run("a")),
        COMPARE.get_or_init(|| compare_run("a")),
        GROW.get_or_init(|| grow_run("a")),
    );
    let start = Instant::now();
    let verify = verify_run("b");
    let compare = compare_run("b");
    let grow = grow_run("b");
    let same = [
        ("gn_scatter.csv", first.0.bytes == verify.bytes),
        ("baselines.csv", first.1.bytes == compare.bytes),
        ("grow outputs", first.2.bytes == grow.bytes),
    ];
    let differing: Vec<&str> = same.iter().filter(|(_, s)| !s).map(|(n, _)| *n).collect();
    verdict(
        8,
        differing.is_empty(),
        start.elapsed(),
        None,
        &if differing.is_empty() {
            "verify, compare and both grow runs reproduce byte-identical CSV, checkpoint and SVG outputs".to_string()
        } else {
            format!("differing outputs: {differing:?}")
        },
    );
}

#[test]
fn criterion_9_ema_converges_on_a_constant_stream() {
    let _g = serial();
    let start = Instant::now();
    let budget = (10.0 / EMA_MOMENTUM).ceil() as u64;
    let mut worst_final = 0.0f64;
    let mut worst_steps = 0u64;
    for c in [-0.37, 0.0, 1e-3, 2.5] {
        let id = MorphismId { kind: MorphismKind::Split, layer: 0, channel: 0 };
        let mut rec = EstimateRecord::new(id, EMA_MOMENTUM, 1);
        let mut reached = None;
        for k in 1..=budget {
            rec.update(c);
            if reached.is_none() && (rec.ema_delta_loss - c).abs() < EMA_TOL {
                reached = Some(k);
            }
        }
        worst_steps = worst_steps.max(reached.unwrap_or(u64::MAX));
        worst_final = worst_final.max((rec.ema_delta_loss - c).abs());
    }
    verdict(
        9,
        worst_steps <= budget && worst_final < EMA_TOL,
        start.elapsed(),
        Some(Duration::from_secs(1)),
        &format!("m = {EMA_MOMENTUM}: |ema − c| < {EMA_TOL:e} after {worst_steps} of {budget} updates, final error {worst_final:.1e}"),
    );
}
