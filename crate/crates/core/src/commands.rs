//! The four experiment commands behind the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::grower::{self, CandidatePool, GrowConfig, PhaseHistory, Trainer};
use crate::morphism::{MorphismBank, MorphismRef};
use crate::network::{evaluate, NetworkGraph};
use crate::oracle;
use crate::report::{self, fmt_f64};
use crate::rng::SeededRng;

pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SVG_FILE: &str = "arch_evolution.svg";
pub const SCATTER_FILE: &str = "gn_scatter.csv";
pub const BASELINES_FILE: &str = "baselines.csv";
pub const METRICS_FILE: &str = "metrics.json";

const INIT_STREAM: u64 = 100;
const RETRAIN_STREAM: u64 = 200;
const MORPH_STREAM: u64 = 300;

pub struct Prepared {
    pub train: Dataset,
    pub eval: Dataset,
    pub seed_net: NetworkGraph,
}

/// Loads data and builds the seed network for a config.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (train, eval) = data::load_dataset(&cfg.data)?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut rng = SeededRng::new(cfg.seed).fork(INIT_STREAM);
    let seed_net = NetworkGraph::new(train.input_shape(), &cfg.layers, train.num_classes, &mut rng)?;
    Ok(Prepared { train, eval, seed_net })
}

/// Writes files in order; if any write fails the ones already written are
/// removed.
fn write_outputs(out: &Path, files: &[(&str, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = out.join(name);
        if let Err(e) = report::write_file(&path, bytes) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            let _ = std::fs::remove_file(&path);
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

pub struct GrowOutcome {
    pub net: NetworkGraph,
    pub history: PhaseHistory,
    pub files: Vec<PathBuf>,
}

pub fn cmd_grow(cfg: &RunConfig, out: &Path, progress: &mut dyn FnMut(&str)) -> Result<GrowOutcome> {
    let p = prepare(cfg)?;
    progress(&format!(
        "seed network {:?}: {} parameters, {} train / {} eval samples",
        p.seed_net.widths(),
        p.seed_net.parameter_count(),
        p.train.len(),
        p.eval.len()
    ));
    let (net, history) = grower::grow_observed(&p.seed_net, &p.train, &p.eval, &cfg.grow, |r| {
        progress(&format!(
            "phase {}: train loss {:.4}, eval acc {:.4}, applied {}, widths {:?}, params {}",
            r.phase + 1,
            r.train_loss,
            r.eval_acc,
            r.applied.len(),
            r.widths_after,
            r.params
        ))
    })?;
    history.check_bookkeeping()?;
    let files = write_outputs(
        out,
        &[
            (HISTORY_FILE, report::history_csv(&history)),
            (CHECKPOINT_FILE, checkpoint::to_bytes(&net)),
            (SVG_FILE, report::arch_evolution_svg(&history).into_bytes()),
        ],
    )?;
    Ok(GrowOutcome { net, history, files })
}

/// Trains the seed network on the configured schedule, then learns
/// morphism parameters with the model frozen. Returns the trained network,
/// the learned candidates, and the θ values they started from.
pub fn train_then_learn_morphisms(
    p: &Prepared,
    grow: &GrowConfig,
    train_epochs: usize,
    morph_epochs: usize,
    progress: &mut dyn FnMut(&str),
) -> Result<(NetworkGraph, CandidatePool, MorphismBank)> {
    grow.validate()?;
    let rng = SeededRng::new(grow.seed);
    let mut net = p.seed_net.clone();
    let mut trainer = Trainer::new(grow, train_epochs, &rng);
    for e in 0..train_epochs {
        let loss = trainer.run_epoch(&mut net, &p.train)?;
        progress(&format!("train epoch {}: loss {loss:.4}", e + 1));
    }
    if !p.eval.is_empty() {
        let (loss, acc) = evaluate(&net, &p.eval, grow.eval_batch_size)?;
        progress(&format!("trained network: eval loss {loss:.4}, eval acc {acc:.4}"));
    }
    let mut morph_rng = rng.fork(MORPH_STREAM);
    let mut pool = CandidatePool::new(&net, grow, grow.momentum_for(p.train.len()), &mut morph_rng)?;
    let initial = pool.bank.clone();
    for e in 0..morph_epochs {
        grower::run_morph_phase(&net, &mut pool, &p.train, grow.batch_size, 1)?;
        progress(&format!("morph epoch {} done", e + 1));
    }
    Ok((net, pool, initial))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterRow {
    pub layer: usize,
    pub channel: usize,
    pub ema_delta_loss: f64,
    pub true_delta_loss: f64,
}

pub const SCATTER_HEADER: [&str; 4] = ["layer", "channel", "ema_delta_loss", "true_delta_loss"];

/// One row per channel-splitting candidate: its moving-average estimate
/// and the brute-force loss change on held-out data.
pub fn cmd_verify_gn(cfg: &RunConfig, out: &Path, progress: &mut dyn FnMut(&str)) -> Result<Vec<ScatterRow>> {
    let p = prepare(cfg)?;
    let (net, pool, _) = train_then_learn_morphisms(&p, &cfg.grow, cfg.verify.train_epochs, cfg.verify.morph_epochs, progress)?;
    let oracle_set = p.eval.slice(0, cfg.verify.oracle_samples.min(p.eval.len()));
    if oracle_set.is_empty() {
        return Err(Error::Config("verify-gn needs a non-empty eval split".into()));
    }
    let batch = cfg.grow.eval_batch_size;
    let base = oracle::dataset_loss(&net, &oracle_set, batch)?;
    let mut rows = Vec::new();
    for layer in 0..net.num_layers() {
        for (split, rec) in pool.bank.splits(layer).iter().zip(&pool.split_records[layer]) {
            let truth = oracle::true_delta_loss_from(&net, MorphismRef::Split(split), &oracle_set, batch, base)?;
            rows.push(ScatterRow {
                layer,
                channel: split.channel,
                ema_delta_loss: rec.ema_delta_loss,
                true_delta_loss: truth,
            });
        }
        progress(&format!("oracle done for layer {layer}"));
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.layer.to_string(),
                r.channel.to_string(),
                fmt_f64(r.ema_delta_loss),
                fmt_f64(r.true_delta_loss),
            ]
        })
        .collect();
    write_outputs(out, &[(SCATTER_FILE, report::csv_bytes(&SCATTER_HEADER, &csv_rows))])?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRow {
    pub layer: usize,
    pub channel: usize,
    pub gn_delta_loss: f64,
    pub expanded_delta_loss: f64,
    pub line_search_delta_loss: f64,
    pub ema_delta_loss: f64,
    pub dead: bool,
}

pub const BASELINES_HEADER: [&str; 7] = [
    "layer",
    "channel",
    "gn_delta_loss",
    "expanded_delta_loss",
    "line_search_delta_loss",
    "ema_delta_loss",
    "dead",
];

/// True loss change per channel of one layer for θ learned three ways: the
/// Gauss-Newton estimate, direct optimization of the expanded network, and
/// a steepest-descent line search. The latter two start from the same θ as
/// the first.
pub fn cmd_compare(cfg: &RunConfig, out: &Path, progress: &mut dyn FnMut(&str)) -> Result<Vec<BaselineRow>> {
    let p = prepare(cfg)?;
    let layer = cfg.compare.layer;
    if layer >= p.seed_net.num_layers() {
        return Err(Error::Config(format!(
            "compare.layer {layer} but the network has {} layers",
            p.seed_net.num_layers()
        )));
    }
    let (net, pool, initial) =
        train_then_learn_morphisms(&p, &cfg.grow, cfg.compare.train_epochs, cfg.compare.morph_epochs, progress)?;
    let oracle_set = p.eval.slice(0, cfg.compare.oracle_samples.min(p.eval.len()));
    if oracle_set.is_empty() {
        return Err(Error::Config("compare needs a non-empty eval split".into()));
    }
    let batch = cfg.grow.eval_batch_size;
    let base = oracle::dataset_loss(&net, &oracle_set, batch)?;
    let mut rows = Vec::new();
    for (c, learned) in pool.bank.splits(layer).iter().enumerate() {
        let start = initial.split(layer, c);
        let gn = oracle::true_delta_loss_from(&net, MorphismRef::Split(learned), &oracle_set, batch, base)?;
        let (_, expanded) = oracle::optimize_expanded(&net, start, &oracle_set, cfg.compare.steps, &cfg.grow.adam, batch)?;
        let line = oracle::steepest_line_search(&net, start, &oracle_set, cfg.compare.scales, batch)?;
        let dead = net.layer(layer).kernel_row(c).iter().all(|&w| w == 0.0);
        progress(&format!(
            "channel {c}: gn {gn:.3e}, expanded {expanded:.3e}, line search {:.3e}",
            line.delta_loss
        ));
        rows.push(BaselineRow {
            layer,
            channel: c,
            gn_delta_loss: gn,
            expanded_delta_loss: expanded,
            line_search_delta_loss: line.delta_loss,
            ema_delta_loss: pool.split_records[layer][c].ema_delta_loss,
            dead,
        });
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.layer.to_string(),
                r.channel.to_string(),
                fmt_f64(r.gn_delta_loss),
                fmt_f64(r.expanded_delta_loss),
                fmt_f64(r.line_search_delta_loss),
                fmt_f64(r.ema_delta_loss),
                r.dead.to_string(),
            ]
        })
        .collect();
    write_outputs(out, &[(BASELINES_FILE, report::csv_bytes(&BASELINES_HEADER, &csv_rows))])?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub params: usize,
    pub epochs: usize,
    pub final_acc: f64,
    pub final_loss: f64,
    pub widths: Vec<usize>,
}

/// Fresh parameters for `arch`, trained for `epochs` with the configured
/// schedule.
pub fn retrain_architecture(arch: &NetworkGraph, p: &Prepared, cfg: &RunConfig, epochs: usize) -> Result<Metrics> {
    let mut net = arch.reinitialize(&mut SeededRng::new(cfg.seed).fork(RETRAIN_STREAM))?;
    let rng = SeededRng::new(cfg.seed);
    let mut trainer = Trainer::new(&cfg.grow, epochs, &rng);
    grower::run_train_phase(&mut net, &p.train, &mut trainer, epochs)?;
    let (final_loss, final_acc) = if p.eval.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        evaluate(&net, &p.eval, cfg.grow.eval_batch_size)?
    };
    Ok(Metrics {
        params: net.parameter_count(),
        epochs,
        final_acc,
        final_loss,
        widths: net.widths(),
    })
}

pub fn checkpoint_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.retrain
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}

pub fn cmd_retrain(cfg: &RunConfig, out: &Path, progress: &mut dyn FnMut(&str)) -> Result<Metrics> {
    let ckpt = checkpoint_path(cfg, out);
    let arch = checkpoint::load(&ckpt)?;
    let p = prepare(cfg)?;
    if arch.input_shape() != p.train.input_shape() || arch.num_classes() != p.train.num_classes {
        return Err(Error::Config(format!(
            "checkpoint expects input {:?} with {} classes, data has {:?} with {}",
            arch.input_shape(),
            arch.num_classes(),
            p.train.input_shape(),
            p.train.num_classes
        )));
    }
    let epochs = cfg.retrain_epochs();
    progress(&format!("retraining {:?} from scratch for {epochs} epochs", arch.widths()));
    let metrics = retrain_architecture(&arch, &p, cfg, epochs)?;
    let json = serde_json::to_vec_pretty(&metrics).expect("metrics serialize");
    write_outputs(out, &[(METRICS_FILE, json)])?;
    Ok(metrics)
}
