//! C interface to the grower: load checkpoints, query and run networks,
//! drive the CLI commands, and evaluate the loss-change estimator.
//!
//! Every function returns a [`GngrowStatus`]; on failure the message is
//! available from [`gngrow_last_error`] until the next call on the same
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gngrow::config::RunConfig;
use gngrow::network::{predict, NetworkGraph};
use gngrow::{checkpoint, commands, gauss_newton, Error, Tensor};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GngrowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numeric = 6,
    Config = 7,
    Invariant = 8,
    Index = 9,
    Panic = 10,
}

/// A loaded network. Create with [`gngrow_network_load`], release with
/// [`gngrow_network_free`].
pub struct GngrowNetwork {
    net: NetworkGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn status_of(e: &Error) -> GngrowStatus {
    match e {
        Error::Shape(_) => GngrowStatus::Shape,
        Error::Numeric(_) => GngrowStatus::Numeric,
        Error::Invariant(_) => GngrowStatus::Invariant,
        Error::Index(_) => GngrowStatus::Index,
        Error::Format { .. } => GngrowStatus::Format,
        Error::Config(_) => GngrowStatus::Config,
        Error::Io { .. } => GngrowStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GngrowStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (GngrowStatus::Ok, String::new()),
        Ok(Err(Failure::Null(what))) => (GngrowStatus::NullPointer, format!("{what} is null")),
        Ok(Err(Failure::Arg(msg))) => (GngrowStatus::InvalidArgument, msg),
        Ok(Err(Failure::Lib(e))) => (status_of(&e), e.to_string()),
        Err(_) => (GngrowStatus::Panic, "internal panic".to_string()),
    };
    set_error(&msg);
    status
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn net_arg<'a>(p: *const GngrowNetwork) -> Result<&'a NetworkGraph, Failure> {
    p.as_ref().map(|h| &h.net).ok_or(Failure::Null("network"))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gngrow_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gngrow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by the `grow` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gngrow_network_load(path: *const c_char, out: *mut *mut GngrowNetwork) -> GngrowStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let net = checkpoint::load(&PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(GngrowNetwork { net }));
        Ok(())
    })
}

/// Writes the network to a checkpoint file.
///
/// # Safety
/// `net` must come from [`gngrow_network_load`]; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gngrow_network_save(net: *const GngrowNetwork, path: *const c_char) -> GngrowStatus {
    guard(|| {
        let net = net_arg(net)?;
        let path = str_arg(path, "path")?;
        checkpoint::save(net, &PathBuf::from(path))?;
        Ok(())
    })
}

/// Releases a network. Null is accepted and ignored.
///
/// # Safety
/// `net` must come from [`gngrow_network_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gngrow_network_free(net: *mut GngrowNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of learnable parameters.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gngrow_network_param_count(net: *const GngrowNetwork, out: *mut usize) -> GngrowStatus {
    guard(|| {
        *out_arg(out, "out")? = net_arg(net)?.parameter_count();
        Ok(())
    })
}

/// Number of convolutional layers.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gngrow_network_num_layers(net: *const GngrowNetwork, out: *mut usize) -> GngrowStatus {
    guard(|| {
        *out_arg(out, "out")? = net_arg(net)?.num_layers();
        Ok(())
    })
}

/// Output channels of convolutional layer `layer`.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gngrow_network_layer_width(net: *const GngrowNetwork, layer: usize, out: *mut usize) -> GngrowStatus {
    guard(|| {
        let net = net_arg(net)?;
        let out = out_arg(out, "out")?;
        if layer >= net.num_layers() {
            return Err(Error::Index(format!("layer {layer} of {}", net.num_layers())).into());
        }
        *out = net.layer(layer).out_channels();
        Ok(())
    })
}

/// Input shape as `(channels, height, width)` and the class count.
///
/// # Safety
/// `net` must be a live handle; `shape_out` must hold 3 values and
/// `classes_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gngrow_network_shape(
    net: *const GngrowNetwork,
    shape_out: *mut usize,
    classes_out: *mut usize,
) -> GngrowStatus {
    guard(|| {
        let net = net_arg(net)?;
        if shape_out.is_null() {
            return Err(Failure::Null("shape_out"));
        }
        let classes_out = out_arg(classes_out, "classes_out")?;
        std::slice::from_raw_parts_mut(shape_out, 3).copy_from_slice(&net.input_shape());
        *classes_out = net.num_classes();
        Ok(())
    })
}

/// Eval-mode class probabilities for `n` images stored contiguously as
/// `n × C × H × W` doubles. `probs_out` receives `n × classes` values.
///
/// # Safety
/// `images` must hold `images_len` doubles and `probs_out` must hold
/// `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gngrow_network_predict(
    net: *const GngrowNetwork,
    images: *const f64,
    images_len: usize,
    n: usize,
    probs_out: *mut f64,
    probs_len: usize,
) -> GngrowStatus {
    guard(|| {
        let net = net_arg(net)?;
        let [c, h, w] = net.input_shape();
        let want = n
            .checked_mul(c * h * w)
            .ok_or_else(|| Failure::Arg("image count overflows".into()))?;
        if n == 0 || images_len != want {
            return Err(Failure::Arg(format!("expected {want} image values for {n} images, got {images_len}")));
        }
        if probs_len != n * net.num_classes() {
            return Err(Failure::Arg(format!(
                "probs_out holds {probs_len} values, need {}",
                n * net.num_classes()
            )));
        }
        if probs_out.is_null() {
            return Err(Failure::Null("probs_out"));
        }
        let x = Tensor::from_vec(&[n, c, h, w], slice_arg(images, images_len, "images")?.to_vec())?;
        let probs = predict(net, &x)?;
        std::slice::from_raw_parts_mut(probs_out, probs_len).copy_from_slice(probs.data());
        Ok(())
    })
}

/// Runs a CLI command (`grow`, `verify-gn`, `compare` or `retrain`) with a
/// config file, writing its outputs under `out_dir`.
///
/// # Safety
/// All three strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gngrow_run_command(
    command: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
) -> GngrowStatus {
    guard(|| {
        let command = str_arg(command, "command")?;
        let cfg = RunConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?))?;
        let out = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let mut quiet = |_: &str| {};
        match command {
            "grow" => commands::cmd_grow(&cfg, &out, &mut quiet).map(drop),
            "verify-gn" => commands::cmd_verify_gn(&cfg, &out, &mut quiet).map(drop),
            "compare" => commands::cmd_compare(&cfg, &out, &mut quiet).map(drop),
            "retrain" => commands::cmd_retrain(&cfg, &out, &mut quiet).map(drop),
            other => return Err(Failure::Arg(format!("unknown command {other:?}"))),
        }?;
        Ok(())
    })
}

/// Loss-change estimate for a batch of `samples` rows of `dim` values:
/// `(1/S) Σ_s (d_s + d_s²/(4 loss))` with `d_s = ⟨Δz_s, g_s⟩`.
///
/// # Safety
/// `delta_z` and `g` must each hold `samples × dim` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gngrow_gn_estimate(
    delta_z: *const f64,
    g: *const f64,
    samples: usize,
    dim: usize,
    loss: f64,
    out: *mut f64,
) -> GngrowStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let len = samples
            .checked_mul(dim)
            .ok_or_else(|| Failure::Arg("size overflows".into()))?;
        if samples == 0 || dim == 0 {
            return Err(Failure::Arg("samples and dim must be positive".into()));
        }
        let dz = Tensor::from_vec(&[samples, dim], slice_arg(delta_z, len, "delta_z")?.to_vec())?;
        let gt = Tensor::from_vec(&[samples, dim], slice_arg(g, len, "g")?.to_vec())?;
        *out = gauss_newton::gn_batch_estimate(&dz, &gt, loss)?;
        Ok(())
    })
}
