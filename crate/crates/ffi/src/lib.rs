// Copyright 2026 The rgbd-distill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! C ABI over the training configuration, the loss functions, the mIoU
//! metric and deployed modality networks.
//!
//! Every fallible function returns an [`RdStatus`]; on failure the message is
//! available from [`rd_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Arrays are
//! row-major, channel-last.

#![allow(clippy::missing_safety_doc)]

use rgbd_distill::baseline::load_modality_nets;
use rgbd_distill::checkpoint::Checkpoint;
use rgbd_distill::eval::{miou, ConfusionMatrix};
use rgbd_distill::losses::{contrastive_loss, orthogonality_loss, seg_loss, PooledEmbedding};
use rgbd_distill::model::ModalityNet;
use rgbd_distill::schedule::lr_at;
use rgbd_distill::{Error, LabelMap, Modality, Tensor, TrainConfig};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RdStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Shape = 3,
    InvalidArgument = 4,
    Data = 5,
    Checkpoint = 6,
    NonFinite = 7,
    Io = 8,
    Panic = 9,
}

/// Modality selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RdModality {
    Rgb = 0,
    Depth = 1,
}

impl From<RdModality> for Modality {
    fn from(m: RdModality) -> Self {
        match m {
            RdModality::Rgb => Modality::Rgb,
            RdModality::Depth => Modality::Depth,
        }
    }
}

/// Training configuration.
pub struct RdConfig(TrainConfig);

/// Confusion matrix accumulator.
pub struct RdConfusion(ConfusionMatrix);

/// Deployed modality networks loaded from a checkpoint.
pub struct RdModel(Vec<ModalityNet>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RdStatus {
    match e {
        Error::Config(_) => RdStatus::Config,
        Error::Shape(_) => RdStatus::Shape,
        Error::InvalidArgument(_) => RdStatus::InvalidArgument,
        Error::Data { .. } => RdStatus::Data,
        Error::Checkpoint(_) => RdStatus::Checkpoint,
        Error::NonFinite { .. } => RdStatus::NonFinite,
        Error::Io(_) => RdStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RdStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            RdStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn handle<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn tensor_f64(data: &[f64], dims: [usize; 4]) -> Result<Tensor<f64>, Failure> {
    Ok(Tensor::from_vec(dims, data.to_vec())?)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration holding the defaults.
#[no_mangle]
pub extern "C" fn rd_config_new() -> *mut RdConfig {
    Box::into_raw(Box::new(RdConfig(TrainConfig::default())))
}

#[no_mangle]
pub unsafe extern "C" fn rd_config_free(cfg: *mut RdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets one key from its textual value.
#[no_mangle]
pub unsafe extern "C" fn rd_config_set(cfg: *mut RdConfig, key: *const c_char, value: *const c_char) -> RdStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        cfg.0.set(str_arg(key, "key")?, str_arg(value, "value")?)?;
        Ok(())
    })
}

/// Copies the textual value of `key` into `buf` (NUL-terminated, truncated
/// to `len`); `needed` receives the full length including the NUL.
#[no_mangle]
pub unsafe extern "C" fn rd_config_get(
    cfg: *const RdConfig,
    key: *const c_char,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> RdStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or(Failure::Null("cfg"))?;
        let value = cfg.0.get(str_arg(key, "key")?)?;
        let bytes = value.as_bytes();
        *out_arg(needed, "needed")? = bytes.len() + 1;
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        Ok(())
    })
}

/// Checks every configuration bound.
#[no_mangle]
pub unsafe extern "C" fn rd_config_validate(cfg: *const RdConfig) -> RdStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or(Failure::Null("cfg"))?;
        cfg.0.clone().validate()?;
        Ok(())
    })
}

/// Learning rate at `epoch` under the configured warmup and decay.
#[no_mangle]
pub unsafe extern "C" fn rd_lr_at(cfg: *const RdConfig, epoch: f64, out: *mut f64) -> RdStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or(Failure::Null("cfg"))?;
        *out_arg(out, "out")? = lr_at(epoch, &cfg.0)?;
        Ok(())
    })
}

/// Mean of the cross entropies of two `b×h×w×c` logit arrays against one
/// `b×h×w` label array; `grad`/`grad_mix` may be null.
#[no_mangle]
pub unsafe extern "C" fn rd_seg_loss(
    logits: *const f64,
    logits_mix: *const f64,
    labels: *const u8,
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    ignore: u8,
    out: *mut f64,
    grad: *mut f64,
    grad_mix: *mut f64,
) -> RdStatus {
    guard(|| {
        let n = b * h * w;
        let dims = [b, h, w, c];
        let s = tensor_f64(slice_arg(logits, n * c, "logits")?, dims)?;
        let m = tensor_f64(slice_arg(logits_mix, n * c, "logits_mix")?, dims)?;
        let y = LabelMap::new([b, h, w], slice_arg(labels, n, "labels")?.to_vec())?;
        let (loss, g, gm) = seg_loss(&s, &m, &y, ignore)?;
        *out_arg(out, "out")? = loss;
        for (dst, src) in [(grad, g), (grad_mix, gm)] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.data().as_ptr(), dst, n * c);
            }
        }
        Ok(())
    })
}

/// Batch-averaged sum of signed cosines between two `b×h×w×d` arrays.
#[no_mangle]
pub unsafe extern "C" fn rd_orthogonality_loss(
    inv: *const f64,
    spc: *const f64,
    b: usize,
    h: usize,
    w: usize,
    d: usize,
    out: *mut f64,
) -> RdStatus {
    guard(|| {
        let len = b * h * w * d;
        let dims = [b, h, w, d];
        let i = tensor_f64(slice_arg(inv, len, "inv")?, dims)?;
        let s = tensor_f64(slice_arg(spc, len, "spc")?, dims)?;
        *out_arg(out, "out")? = orthogonality_loss(&i, &s)?.0;
        Ok(())
    })
}

/// Contrastive loss of `batch×dim` unit-norm anchor rows against the other
/// modality's rows.
#[no_mangle]
pub unsafe extern "C" fn rd_contrastive_loss(
    anchor: *const f64,
    other: *const f64,
    batch: usize,
    dim: usize,
    tau: f64,
    include_positive: bool,
    out: *mut f64,
) -> RdStatus {
    guard(|| {
        let n = batch * dim;
        let a = PooledEmbedding::from_rows(slice_arg(anchor, n, "anchor")?.to_vec(), batch, dim, Modality::Rgb)?;
        let o = PooledEmbedding::from_rows(slice_arg(other, n, "other")?.to_vec(), batch, dim, Modality::Depth)?;
        *out_arg(out, "out")? = contrastive_loss(&a, &o, tau, include_positive)?.0;
        Ok(())
    })
}

/// Empty confusion matrix over `classes` classes, or null for `classes == 0`.
#[no_mangle]
pub extern "C" fn rd_confusion_new(classes: usize) -> *mut RdConfusion {
    if classes == 0 {
        set_error("confusion matrix needs at least one class".into());
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(RdConfusion(ConfusionMatrix::new(classes))))
}

#[no_mangle]
pub unsafe extern "C" fn rd_confusion_free(cm: *mut RdConfusion) {
    if !cm.is_null() {
        drop(Box::from_raw(cm));
    }
}

/// Adds `n` aligned prediction/ground-truth pixels; pixels whose ground
/// truth equals `ignore` are skipped.
#[no_mangle]
pub unsafe extern "C" fn rd_confusion_accumulate(
    cm: *mut RdConfusion,
    pred: *const u8,
    gt: *const u8,
    n: usize,
    ignore: u8,
) -> RdStatus {
    guard(|| {
        let cm = handle(cm, "cm")?;
        let p = LabelMap::new([1, 1, n], slice_arg(pred, n, "pred")?.to_vec())?;
        let g = LabelMap::new([1, 1, n], slice_arg(gt, n, "gt")?.to_vec())?;
        cm.0.accumulate(&p, &g, ignore)?;
        Ok(())
    })
}

/// Mean IoU; `per_class` (may be null) receives `classes` values with NaN
/// for classes whose union is empty.
#[no_mangle]
pub unsafe extern "C" fn rd_confusion_miou(cm: *const RdConfusion, mean: *mut f64, per_class: *mut f64) -> RdStatus {
    guard(|| {
        let cm = cm.as_ref().ok_or(Failure::Null("cm"))?;
        let r = miou(&cm.0)?;
        *out_arg(mean, "mean")? = r.mean;
        if !per_class.is_null() {
            for (k, v) in r.per_class.iter().enumerate() {
                *per_class.add(k) = v.unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}

/// Loads every modality network stored in a checkpoint.
#[no_mangle]
pub unsafe extern "C" fn rd_model_load(path: *const c_char, out: *mut *mut RdModel) -> RdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ck = Checkpoint::load(str_arg(path, "path")?)?;
        let nets = load_modality_nets(&ck)?;
        if nets.is_empty() {
            return Err(Error::Checkpoint("checkpoint holds no modality network".into()).into());
        }
        *out = Box::into_raw(Box::new(RdModel(nets)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rd_model_free(model: *mut RdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Whether the model holds a network for `modality`.
#[no_mangle]
pub unsafe extern "C" fn rd_model_has(model: *const RdModel, modality: RdModality) -> bool {
    model
        .as_ref()
        .is_some_and(|m| m.0.iter().any(|n| n.modality == Modality::from(modality)))
}

/// Number of classes predicted by the model, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn rd_model_num_classes(model: *const RdModel) -> usize {
    model.as_ref().map_or(0, |m| m.0[0].num_classes())
}

/// Per-pixel class predictions for a `b×h×w×channels` input of the given
/// modality (3 channels for RGB, 1 for depth); writes `b·h·w` labels.
#[no_mangle]
pub unsafe extern "C" fn rd_model_predict(
    model: *mut RdModel,
    modality: RdModality,
    input: *const f32,
    b: usize,
    h: usize,
    w: usize,
    labels: *mut u8,
) -> RdStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let m = Modality::from(modality);
        let net = model
            .0
            .iter_mut()
            .find(|n| n.modality == m)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no {m} network")))?;
        let dims = [b, h, w, m.channels()];
        let x = Tensor::from_vec(dims, slice_arg(input, dims.iter().product(), "input")?.to_vec())?;
        let pred = net.predict(&x)?.predictions();
        if labels.is_null() {
            return Err(Failure::Null("labels"));
        }
        ptr::copy_nonoverlapping(pred.data().as_ptr(), labels, b * h * w);
        Ok(())
    })
}
