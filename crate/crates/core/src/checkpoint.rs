//! Versioned binary network checkpoints.
//!
//! Layout: the 8-byte magic `GNGROWCK`, a `u32` version, a header with the
//! input shape, class count and one table entry per layer, then every array
//! as little-endian `f64` in declaration order. Reloading is bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{BatchNorm, ChannelOp, ConvLayer, Head, NetworkGraph};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GNGROWCK";
pub const VERSION: u32 = 1;

const OP_RELU: u8 = 0;
const OP_BATCHNORM: u8 = 1;
const OP_DROPOUT: u8 = 2;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(net: &NetworkGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for &d in &net.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, net.num_classes());
    put_u32(&mut out, net.num_layers());
    for layer in net.layers() {
        let (o, c, kh, kw) = layer.kernel.dims4().expect("validated");
        for v in [o, c, kh, kw] {
            put_u32(&mut out, v);
        }
        out.push(u8::from(layer.pool));
        out.push(u8::from(layer.bias.is_some()));
        match &layer.offset {
            Some(off) => {
                out.push(1);
                put_u32(&mut out, off.shape()[1]);
                put_u32(&mut out, off.shape()[2]);
            }
            None => out.push(0),
        }
        put_u32(&mut out, layer.channelwise.len());
        for op in &layer.channelwise {
            match op {
                ChannelOp::Relu => out.push(OP_RELU),
                ChannelOp::BatchNorm(_) => out.push(OP_BATCHNORM),
                ChannelOp::Dropout { rate } => {
                    out.push(OP_DROPOUT);
                    put_f64s(&mut out, &[*rate]);
                }
            }
        }
    }
    for layer in net.layers() {
        put_f64s(&mut out, layer.kernel.data());
        if let Some(b) = &layer.bias {
            put_f64s(&mut out, b);
        }
        if let Some(off) = &layer.offset {
            put_f64s(&mut out, off.data());
        }
        for bn in layer.batchnorms() {
            put_f64s(&mut out, &bn.gamma);
            put_f64s(&mut out, &bn.beta);
            put_f64s(&mut out, &bn.running_mean);
            put_f64s(&mut out, &bn.running_var);
        }
    }
    put_f64s(&mut out, net.head().weight.data());
    put_f64s(&mut out, &net.head().bias);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, self.pos as u64, msg)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!("truncated: needed {n} more bytes, {} left", self.bytes.len() - self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.fail("array size overflows"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.fail(format!("{what} flag must be 0 or 1, got {v}"))),
        }
    }
}

// saturating, so corrupt sizes surface as truncation errors
fn prod(dims: &[usize]) -> usize {
    dims.iter().fold(1usize, |a, &d| a.saturating_mul(d))
}

struct LayerHeader {
    dims: [usize; 4],
    pool: bool,
    bias: bool,
    offset: Option<(usize, usize)>,
    ops: Vec<(u8, f64)>,
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<NetworkGraph> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, 0, "not a checkpoint: bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(
            path,
            8,
            format!("checkpoint version {version}, this build reads version {VERSION}"),
        ));
    }
    let input_shape = [r.u32()?, r.u32()?, r.u32()?];
    let classes = r.u32()?;
    let num_layers = r.u32()?;
    let mut headers = Vec::with_capacity(num_layers.min(1024));
    for _ in 0..num_layers {
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        let pool = r.flag("pool")?;
        let bias = r.flag("bias")?;
        let offset = if r.flag("offset")? { Some((r.u32()?, r.u32()?)) } else { None };
        let n_ops = r.u32()?;
        let mut ops = Vec::new();
        for _ in 0..n_ops {
            let tag = r.u8()?;
            let rate = match tag {
                OP_RELU | OP_BATCHNORM => 0.0,
                OP_DROPOUT => r.f64s(1)?[0],
                t => return Err(r.fail(format!("unknown channelwise op tag {t}"))),
            };
            ops.push((tag, rate));
        }
        headers.push(LayerHeader {
            dims,
            pool,
            bias,
            offset,
            ops,
        });
    }
    let mut layers = Vec::with_capacity(headers.len());
    for h in headers {
        let [o, c, kh, kw] = h.dims;
        let kernel = Tensor::from_vec(&h.dims, r.f64s(prod(&[o, c, kh, kw]))?)?;
        let bias = if h.bias { Some(r.f64s(o)?) } else { None };
        let offset = match h.offset {
            Some((hh, ww)) => Some(Tensor::from_vec(&[o, hh, ww], r.f64s(prod(&[o, hh, ww]))?)?),
            None => None,
        };
        let mut channelwise = Vec::new();
        for (tag, rate) in h.ops {
            channelwise.push(match tag {
                OP_RELU => ChannelOp::Relu,
                OP_BATCHNORM => ChannelOp::BatchNorm(BatchNorm {
                    gamma: r.f64s(o)?,
                    beta: r.f64s(o)?,
                    running_mean: r.f64s(o)?,
                    running_var: r.f64s(o)?,
                }),
                _ => ChannelOp::Dropout { rate },
            });
        }
        layers.push(ConvLayer {
            kernel,
            bias,
            offset,
            channelwise,
            pool: h.pool,
        });
    }
    let width = layers.last().map_or(0, |l| l.out_channels());
    let head = Head {
        weight: Tensor::from_vec(&[classes, width], r.f64s(prod(&[classes, width]))?)?,
        bias: r.f64s(classes)?,
    };
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    NetworkGraph::from_parts(input_shape, layers, head)
}

pub fn save(net: &NetworkGraph, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NetworkGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
