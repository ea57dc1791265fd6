//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers. `#` and `;` start comments.
//!
//! ```text
//! [run]
//! seed = 7
//!
//! [data]
//! source = idx
//! images = ../data/mnist10k/images-idx3-ubyte
//! labels = ../data/mnist10k/labels-idx1-ubyte
//! train_size = 5000
//! eval_size = 2000
//!
//! [network]
//! layers = 8:3:bn+relu:pool, 8:3:bn+relu:pool, 8:3:bn+relu
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{Augment, DatasetSource};
use crate::error::{Error, Result};
use crate::grower::GrowConfig;
use crate::network::{ChannelOpSpec, LayerSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub train_epochs: usize,
    pub morph_epochs: usize,
    /// Eval samples used by the brute-force oracle.
    pub oracle_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareConfig {
    pub layer: usize,
    pub train_epochs: usize,
    pub morph_epochs: usize,
    /// Adam steps for the expanded-network baseline.
    pub steps: usize,
    pub scales: usize,
    pub oracle_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrainConfig {
    /// Defaults to `n_phase × total_phases`.
    pub epochs: Option<usize>,
    /// Defaults to `model.ckpt` inside the output directory.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DatasetSource,
    pub layers: Vec<LayerSpec>,
    pub grow: GrowConfig,
    pub verify: VerifyConfig,
    pub compare: CompareConfig,
    pub retrain: RetrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ops = vec![ChannelOpSpec::BatchNorm, ChannelOpSpec::Relu];
        RunConfig {
            seed: 0,
            data: DatasetSource::Synthetic {
                classes: 4,
                train_size: 512,
                eval_size: 256,
                channels: 1,
                size: 8,
                seed: 0,
            },
            layers: vec![
                LayerSpec::new(4, 3, ops.clone(), true),
                LayerSpec::new(4, 3, ops.clone(), false),
                LayerSpec::new(4, 3, ops, false),
            ],
            grow: GrowConfig::default(),
            verify: VerifyConfig {
                train_epochs: 5,
                morph_epochs: 5,
                oracle_samples: 2000,
            },
            compare: CompareConfig {
                layer: 0,
                train_epochs: 5,
                morph_epochs: 5,
                steps: 30,
                scales: 16,
                oracle_samples: 1000,
            },
            retrain: RetrainConfig {
                epochs: None,
                checkpoint: None,
            },
        }
    }
}

fn cfg_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| cfg_err(line, format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s, line))
        .collect()
}

/// `width:kernel:ops[:pool]`, ops joined by `+` from `relu`, `bn`,
/// `dropout@rate`; `kernel` is `k` or `khxkw`.
pub fn parse_layer(desc: &str) -> Result<LayerSpec> {
    let err = |m: &str| Error::Config(format!("layer {desc:?}: {m}"));
    let parts: Vec<&str> = desc.split(':').map(str::trim).collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(err("expected width:kernel:ops[:pool]"));
    }
    let width: usize = parts[0].parse().map_err(|_| err("bad width"))?;
    let kernel_size = match parts[1].split_once('x') {
        Some((h, w)) => (
            h.parse().map_err(|_| err("bad kernel"))?,
            w.parse().map_err(|_| err("bad kernel"))?,
        ),
        None => {
            let k = parts[1].parse().map_err(|_| err("bad kernel"))?;
            (k, k)
        }
    };
    let mut channelwise = Vec::new();
    for op in parts[2].split('+').map(str::trim).filter(|s| !s.is_empty() && *s != "none") {
        channelwise.push(match op {
            "relu" => ChannelOpSpec::Relu,
            "bn" => ChannelOpSpec::BatchNorm,
            _ => match op.strip_prefix("dropout@") {
                Some(rate) => ChannelOpSpec::Dropout(rate.parse().map_err(|_| err("bad dropout rate"))?),
                None => return Err(err(&format!("unknown channelwise op {op:?}"))),
            },
        });
    }
    let followed_by_pool = match parts.get(3) {
        None => false,
        Some(&"pool") => true,
        Some(other) => return Err(err(&format!("expected \"pool\", got {other:?}"))),
    };
    Ok(LayerSpec {
        out_channels: width,
        kernel_size,
        channelwise,
        followed_by_pool,
    })
}

pub fn format_layer(l: &LayerSpec) -> String {
    let (kh, kw) = l.kernel_size;
    let kernel = if kh == kw { kh.to_string() } else { format!("{kh}x{kw}") };
    let ops: Vec<String> = l
        .channelwise
        .iter()
        .map(|op| match op {
            ChannelOpSpec::Relu => "relu".to_string(),
            ChannelOpSpec::BatchNorm => "bn".to_string(),
            ChannelOpSpec::Dropout(r) => format!("dropout@{r:?}"),
        })
        .collect();
    let ops = if ops.is_empty() { "none".to_string() } else { ops.join("+") };
    let pool = if l.followed_by_pool { ":pool" } else { "" };
    format!("{}:{kernel}:{ops}{pool}", l.out_channels)
}

type Sections = BTreeMap<String, BTreeMap<String, (String, usize)>>;

fn split_sections(text: &str) -> Result<Sections> {
    let mut out: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            out.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(line_no, format!("expected key = value, got {line:?}")))?;
        let section = current
            .as_ref()
            .ok_or_else(|| cfg_err(line_no, "key outside any [section]"))?;
        let k = k.trim().to_string();
        if out.get_mut(section).expect("section exists").insert(k.clone(), (v.trim().to_string(), line_no)).is_some() {
            return Err(cfg_err(line_no, format!("duplicate key {section}.{k}")));
        }
    }
    Ok(out)
}

struct Section {
    name: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, target: &mut T) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            *target = parse_num(key, &v, line)?;
        }
        Ok(())
    }

    fn required(&mut self, key: &str) -> Result<(String, usize)> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("[{}] is missing {key}", self.name)))
    }

    fn finish(self) -> Result<()> {
        if let Some((k, (_, line))) = self.entries.into_iter().next() {
            return Err(cfg_err(line, format!("unknown key {k:?} in [{}]", self.name)));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = split_sections(text)?;
        let mut cfg = RunConfig::default();
        let mut section = |name: &str| Section {
            name: name.to_string(),
            entries: sections.remove(name).unwrap_or_default(),
        };

        let mut run = section("run");
        run.num("seed", &mut cfg.seed)?;
        run.finish()?;

        let mut d = section("data");
        let source = d.take("source").map(|(v, _)| v).unwrap_or_else(|| "synthetic".into());
        let mut train_size = 512usize;
        let mut eval_size = 256usize;
        d.num("train_size", &mut train_size)?;
        d.num("eval_size", &mut eval_size)?;
        cfg.data = match source.as_str() {
            "idx" => DatasetSource::Idx {
                images: PathBuf::from(d.required("images")?.0),
                labels: PathBuf::from(d.required("labels")?.0),
                train_size,
                eval_size,
            },
            "cifar" => {
                let train = d
                    .required("train_files")?
                    .0
                    .split(',')
                    .map(|s| PathBuf::from(s.trim()))
                    .filter(|p| !p.as_os_str().is_empty())
                    .collect();
                DatasetSource::Cifar {
                    train,
                    eval: PathBuf::from(d.required("eval_file")?.0),
                    train_size,
                    eval_size,
                }
            }
            "synthetic" => {
                let (mut classes, mut channels, mut size, mut seed) = (4usize, 1usize, 8usize, 0u64);
                d.num("classes", &mut classes)?;
                d.num("channels", &mut channels)?;
                d.num("size", &mut size)?;
                d.num("data_seed", &mut seed)?;
                DatasetSource::Synthetic {
                    classes,
                    train_size,
                    eval_size,
                    channels,
                    size,
                    seed,
                }
            }
            other => return Err(Error::Config(format!("unknown data source {other:?}"))),
        };
        d.finish()?;

        let mut n = section("network");
        if let Some((v, _)) = n.take("layers") {
            cfg.layers = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse_layer).collect::<Result<_>>()?;
        }
        n.finish()?;

        let mut g = section("grow");
        let gc = &mut cfg.grow;
        g.num("n_phase", &mut gc.n_phase)?;
        g.num("total_phases", &mut gc.total_phases)?;
        g.num("lambda_p", &mut gc.lambda_p)?;
        g.num("select_fraction", &mut gc.select_fraction)?;
        if let Some((v, line)) = g.take("ema_momentum") {
            gc.ema_momentum = if v == "auto" { None } else { Some(parse_num("ema_momentum", &v, line)?) };
        }
        g.num("lr", &mut gc.sgd.lr)?;
        g.num("momentum", &mut gc.sgd.momentum)?;
        g.num("weight_decay", &mut gc.sgd.weight_decay)?;
        if let Some((v, line)) = g.take("lr_milestones") {
            gc.lr_milestones = parse_list("lr_milestones", &v, line)?;
        }
        g.num("lr_decay", &mut gc.lr_decay)?;
        g.num("theta_lr", &mut gc.adam.lr)?;
        g.num("adam_beta1", &mut gc.adam.beta1)?;
        g.num("adam_beta2", &mut gc.adam.beta2)?;
        g.num("adam_eps", &mut gc.adam.eps)?;
        g.num("batch_size", &mut gc.batch_size)?;
        g.num("eval_batch_size", &mut gc.eval_batch_size)?;
        g.num("theta_init_scale", &mut gc.theta_init_scale)?;
        if let Some((v, _)) = g.take("augment") {
            gc.augment = Augment::parse(&v)?;
        }
        g.num("augment_pad", &mut gc.augment_pad)?;
        g.num("probe_samples", &mut gc.probe_samples)?;
        g.finish()?;
        cfg.grow.seed = cfg.seed;

        let mut v = section("verify");
        v.num("train_epochs", &mut cfg.verify.train_epochs)?;
        v.num("morph_epochs", &mut cfg.verify.morph_epochs)?;
        v.num("oracle_samples", &mut cfg.verify.oracle_samples)?;
        v.finish()?;

        let mut c = section("compare");
        let cc = &mut cfg.compare;
        c.num("layer", &mut cc.layer)?;
        c.num("train_epochs", &mut cc.train_epochs)?;
        c.num("morph_epochs", &mut cc.morph_epochs)?;
        c.num("steps", &mut cc.steps)?;
        c.num("scales", &mut cc.scales)?;
        c.num("oracle_samples", &mut cc.oracle_samples)?;
        c.finish()?;

        let mut r = section("retrain");
        if let Some((v, line)) = r.take("epochs") {
            cfg.retrain.epochs = Some(parse_num("epochs", &v, line)?);
        }
        if let Some((v, _)) = r.take("checkpoint") {
            cfg.retrain.checkpoint = Some(PathBuf::from(v));
        }
        r.finish()?;

        if let Some(name) = sections.keys().next() {
            return Err(Error::Config(format!("unknown section [{name}]")));
        }
        if cfg.layers.is_empty() {
            return Err(Error::Config("[network] needs at least one layer".into()));
        }
        cfg.grow.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data and checkpoint paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.data {
            DatasetSource::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DatasetSource::Cifar { train, eval, .. } => {
                train.iter_mut().for_each(fix);
                fix(eval);
            }
            DatasetSource::Synthetic { .. } => {}
        }
        if let Some(p) = &mut cfg.retrain.checkpoint {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let f = |x: f64| format!("{x:?}");
        let _ = writeln!(s, "[run]\nseed = {}\n", self.seed);
        s.push_str("[data]\n");
        match &self.data {
            DatasetSource::Idx {
                images,
                labels,
                train_size,
                eval_size,
            } => {
                let _ = writeln!(
                    s,
                    "source = idx\nimages = {}\nlabels = {}\ntrain_size = {train_size}\neval_size = {eval_size}",
                    images.display(),
                    labels.display()
                );
            }
            DatasetSource::Cifar {
                train,
                eval,
                train_size,
                eval_size,
            } => {
                let files: Vec<String> = train.iter().map(|p| p.display().to_string()).collect();
                let _ = writeln!(
                    s,
                    "source = cifar\ntrain_files = {}\neval_file = {}\ntrain_size = {train_size}\neval_size = {eval_size}",
                    files.join(", "),
                    eval.display()
                );
            }
            DatasetSource::Synthetic {
                classes,
                train_size,
                eval_size,
                channels,
                size,
                seed,
            } => {
                let _ = writeln!(
                    s,
                    "source = synthetic\nclasses = {classes}\nchannels = {channels}\nsize = {size}\ndata_seed = {seed}\ntrain_size = {train_size}\neval_size = {eval_size}"
                );
            }
        }
        let layers: Vec<String> = self.layers.iter().map(format_layer).collect();
        let _ = writeln!(s, "\n[network]\nlayers = {}\n", layers.join(", "));
        let g = &self.grow;
        let milestones: Vec<String> = g.lr_milestones.iter().map(|&x| f(x)).collect();
        let _ = writeln!(
            s,
            "[grow]\nn_phase = {}\ntotal_phases = {}\nlambda_p = {}\nselect_fraction = {}\nema_momentum = {}\nlr = {}\nmomentum = {}\nweight_decay = {}\nlr_milestones = {}\nlr_decay = {}\ntheta_lr = {}\nadam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\nbatch_size = {}\neval_batch_size = {}\ntheta_init_scale = {}\naugment = {}\naugment_pad = {}\nprobe_samples = {}\n",
            g.n_phase,
            g.total_phases,
            f(g.lambda_p),
            f(g.select_fraction),
            g.ema_momentum.map_or("auto".to_string(), f),
            f(g.sgd.lr),
            f(g.sgd.momentum),
            f(g.sgd.weight_decay),
            milestones.join(", "),
            f(g.lr_decay),
            f(g.adam.lr),
            f(g.adam.beta1),
            f(g.adam.beta2),
            f(g.adam.eps),
            g.batch_size,
            g.eval_batch_size,
            f(g.theta_init_scale),
            g.augment.name(),
            g.augment_pad,
            g.probe_samples,
        );
        let v = &self.verify;
        let _ = writeln!(
            s,
            "[verify]\ntrain_epochs = {}\nmorph_epochs = {}\noracle_samples = {}\n",
            v.train_epochs, v.morph_epochs, v.oracle_samples
        );
        let c = &self.compare;
        let _ = writeln!(
            s,
            "[compare]\nlayer = {}\ntrain_epochs = {}\nmorph_epochs = {}\nsteps = {}\nscales = {}\noracle_samples = {}\n",
            c.layer, c.train_epochs, c.morph_epochs, c.steps, c.scales, c.oracle_samples
        );
        s.push_str("[retrain]\n");
        if let Some(e) = self.retrain.epochs {
            let _ = writeln!(s, "epochs = {e}");
        }
        if let Some(p) = &self.retrain.checkpoint {
            let _ = writeln!(s, "checkpoint = {}", p.display());
        }
        s
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.grow.seed = seed;
        self
    }

    pub fn retrain_epochs(&self) -> usize {
        self.retrain
            .epochs
            .unwrap_or(self.grow.n_phase * self.grow.total_phases)
    }
}
