//! Image classification datasets: IDX files, CIFAR binary batches, and a
//! synthetic generator, plus train-time augmentation.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3072;

/// Images `(N, C, H, W)` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, ..) = images.dims4()?;
        if n != labels.len() {
            return Err(Error::shape(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Index(format!("label {bad} not in [0, {num_classes})")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(channels, height, width)`.
    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let [c, h, w] = self.input_shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.images.outer(i));
            labels.push(self.labels[i]);
        }
        let images = Tensor::from_vec(&[indices.len(), c, h, w], data).expect("sizes agree");
        (images, labels)
    }

    /// Contiguous sub-range of samples.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let idx: Vec<usize> = (start..end.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Per-channel mean and standard deviation.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let [c, h, w] = self.input_shape();
        let hw = h * w;
        let count = (self.len() * hw) as f64;
        (0..c)
            .map(|ch| {
                let vals = (0..self.len()).flat_map(|s| self.images.outer(s)[ch * hw..(ch + 1) * hw].iter());
                let mean = vals.clone().sum::<f64>() / count;
                let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / count;
                (mean, var.sqrt().max(1e-12))
            })
            .collect()
    }

    pub fn normalize_with(&mut self, stats: &[(f64, f64)]) {
        let [c, h, w] = self.input_shape();
        let hw = h * w;
        for s in 0..self.len() {
            let img = self.images.outer_mut(s);
            for ch in 0..c {
                let (m, sd) = stats[ch];
                img[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v = (*v - m) / sd);
            }
        }
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        train_size: usize,
        eval_size: usize,
    },
    Cifar {
        train: Vec<PathBuf>,
        eval: PathBuf,
        train_size: usize,
        eval_size: usize,
    },
    Synthetic {
        classes: usize,
        train_size: usize,
        eval_size: usize,
        channels: usize,
        size: usize,
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augment {
    None,
    Crop,
    FlipCrop,
}

impl Augment {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augment::None),
            "crop" => Ok(Augment::Crop),
            "flip_crop" => Ok(Augment::FlipCrop),
            other => Err(Error::Config(format!("unknown augmentation {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Augment::None => "none",
            Augment::Crop => "crop",
            Augment::FlipCrop => "flip_crop",
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, offset as u64, "file truncated inside header"))
}

/// Parses an IDX image/label pair; pixel values are raw bytes.
pub fn parse_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path,
            0,
            format!("expected magic 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let need = n * rows * cols;
    if img.len() - 16 != need {
        return Err(Error::format(
            images_path,
            16,
            format!("expected {need} pixel bytes, found {}", img.len() - 16),
        ));
    }
    let lab = read_file(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            0,
            format!("expected magic 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let nl = be_u32(&lab, 4, labels_path)? as usize;
    if nl != n {
        return Err(Error::format(labels_path, 4, format!("{nl} labels for {n} images")));
    }
    if lab.len() - 8 != n {
        return Err(Error::format(
            labels_path,
            8,
            format!("expected {n} label bytes, found {}", lab.len() - 8),
        ));
    }
    let labels: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    let images = Tensor::from_vec(&[n, 1, rows, cols], img[16..].iter().map(|&b| b as f64).collect())?;
    Dataset::new(images, labels, num_classes)
}

/// Parses CIFAR-10 binary batch files (label byte + 3072 channel-planar
/// pixel bytes per record); pixel values are raw bytes.
pub fn parse_cifar(paths: &[PathBuf]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            let whole = bytes.len() / CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES;
            return Err(Error::format(
                path,
                whole as u64,
                format!(
                    "length {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record size",
                    bytes.len()
                ),
            ));
        }
        for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            if rec[0] >= 10 {
                return Err(Error::format(
                    path,
                    (r * CIFAR_RECORD_BYTES) as u64,
                    format!("label byte {} out of range for CIFAR-10", rec[0]),
                ));
            }
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| b as f64));
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::from_vec(&[n, 3, 32, 32], pixels)?, labels, 10)
}

/// Gaussian-blob classes: class `k` is a blob whose width and per-channel
/// polarity depend on `k`, placed at a random position over pixel noise.
/// Labels cycle through the classes, so counts are balanced.
pub fn synthetic(classes: usize, n: usize, channels: usize, size: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let mut proto = SeededRng::new(seed ^ 0x5eed_b10b);
    // per-class blob width and channel polarity
    let widths: Vec<f64> = (0..classes)
        .map(|k| size as f64 * (0.08 + 0.25 * k as f64 / classes.max(1) as f64))
        .collect();
    let polarity: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..channels).map(|_| if proto.uniform() < 0.5 { -1.0 } else { 1.0 }).collect())
        .collect();
    let per = channels * size * size;
    let mut data = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let cx = size as f64 * (0.25 + 0.5 * rng.uniform());
        let cy = size as f64 * (0.25 + 0.5 * rng.uniform());
        let w2 = 2.0 * widths[k] * widths[k];
        for ch in 0..channels {
            for y in 0..size {
                for x in 0..size {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    data.push(polarity[k][ch] * (-d2 / w2).exp() + 0.3 * rng.normal());
                }
            }
        }
        labels.push(k);
    }
    let images = Tensor::from_vec(&[n, channels, size, size], data).expect("sizes agree");
    Dataset {
        images,
        labels,
        num_classes: classes,
    }
}

/// Loads `(train, eval)` splits, normalised with per-channel statistics of
/// the train split.
pub fn load_dataset(source: &DatasetSource) -> Result<(Dataset, Dataset)> {
    let (mut train, mut eval) = match source {
        DatasetSource::Idx {
            images,
            labels,
            train_size,
            eval_size,
        } => {
            let all = parse_idx(images, labels)?;
            split(&all, *train_size, *eval_size)?
        }
        DatasetSource::Cifar {
            train,
            eval,
            train_size,
            eval_size,
        } => {
            let tr = parse_cifar(train)?;
            let ev = parse_cifar(std::slice::from_ref(eval))?;
            (tr.slice(0, *train_size), ev.slice(0, *eval_size))
        }
        DatasetSource::Synthetic {
            classes,
            train_size,
            eval_size,
            channels,
            size,
            seed,
        } => {
            let all = synthetic(*classes, train_size + eval_size, *channels, *size, *seed);
            split(&all, *train_size, *eval_size)?
        }
    };
    let stats = train.channel_stats();
    train.normalize_with(&stats);
    eval.normalize_with(&stats);
    Ok((train, eval))
}

fn split(all: &Dataset, train_size: usize, eval_size: usize) -> Result<(Dataset, Dataset)> {
    if train_size + eval_size > all.len() {
        return Err(Error::Config(format!(
            "requested {train_size} train + {eval_size} eval samples, source has {}",
            all.len()
        )));
    }
    Ok((all.slice(0, train_size), all.slice(train_size, train_size + eval_size)))
}

/// Random crop with zero padding `pad` and, for [`Augment::FlipCrop`],
/// random horizontal flips. Applied to training batches only.
pub fn augment(images: &Tensor, kind: Augment, pad: usize, rng: &mut SeededRng) -> Tensor {
    if kind == Augment::None {
        return images.clone();
    }
    let (n, c, h, w) = images.dims4().expect("4-d batch");
    let mut out = Tensor::zeros(images.shape());
    for s in 0..n {
        let dy = rng.below(2 * pad + 1) as isize - pad as isize;
        let dx = rng.below(2 * pad + 1) as isize - pad as isize;
        let flip = kind == Augment::FlipCrop && rng.uniform() < 0.5;
        let src = images.outer(s);
        let dst = out.outer_mut(s);
        for ch in 0..c {
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    out
}
