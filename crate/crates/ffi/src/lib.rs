//! C ABI for the `opticnet` crate.
//!
//! Every function returns an [`OptnStatus`]; values come back through out
//! pointers. After a non-`OPTN_OK` status, [`optn_last_error`] describes
//! the failure on the calling thread. Models are opaque [`OptnModel`]
//! handles released with [`optn_model_free`].
//!
//! Images are passed channels-last (`n × size × size × 3`, `f32`, values in
//! `[0, 1]`) and logits come back as `n × classes` row-major `f32`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use opticnet::checkpoint;
use opticnet::metrics::{default_oct2017_penalties, ConfusionMatrix, PenaltyMatrix};
use opticnet::opticnet::audit::{self, Census, MiddleKind};
use opticnet::opticnet::{Model, ModelConfig, Variant};
use opticnet::tensor::{Shape, Tensor};
use opticnet::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptnStatus {
    Ok = 0,
    /// A required pointer was null or a buffer was too small.
    NullArgument = 1,
    /// Bad configuration value, unknown variant or unreadable path.
    Config = 2,
    /// Malformed checkpoint or a checkpoint that does not fit the model.
    Checkpoint = 3,
    /// Tensor shapes or sizes disagree.
    Shape = 4,
    /// A metric is undefined for the given confusion matrix.
    Undefined = 5,
    /// Any other argument violation.
    Contract = 6,
    Io = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

/// Middle-convolution kinds of a residual unit.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptnMiddleKind {
    Regular = 0,
    Atrous = 1,
    Separable = 2,
    AtrousSeparable = 3,
    Branched = 4,
}

impl From<OptnMiddleKind> for MiddleKind {
    fn from(k: OptnMiddleKind) -> Self {
        match k {
            OptnMiddleKind::Regular => MiddleKind::Regular,
            OptnMiddleKind::Atrous => MiddleKind::Atrous,
            OptnMiddleKind::Separable => MiddleKind::Separable,
            OptnMiddleKind::AtrousSeparable => MiddleKind::AtrousSeparable,
            OptnMiddleKind::Branched => MiddleKind::Branched,
        }
    }
}

/// Summary metrics of a confusion matrix, fractions in `[0, 1]`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OptnMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Opaque model handle.
pub struct OptnModel {
    model: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> OptnStatus {
    match e {
        Error::Config(_) | Error::Dataset(_) | Error::Image { .. } => OptnStatus::Config,
        Error::Checkpoint(_) | Error::CheckpointMismatch { .. } => OptnStatus::Checkpoint,
        Error::ShapeMismatch { .. } | Error::Dimension { .. } => OptnStatus::Shape,
        Error::UndefinedClass { .. } => OptnStatus::Undefined,
        Error::Io(_) => OptnStatus::Io,
        _ => OptnStatus::Contract,
    }
}

struct Fail(OptnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OptnStatus::NullArgument, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OptnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            OptnStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal error: {msg}"));
            OptnStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(OptnStatus::Contract, format!("`{what}` is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const OptnModel) -> Result<&'a OptnModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn model_mut<'a>(m: *mut OptnModel) -> Result<&'a mut OptnModel, Fail> {
    m.as_mut().ok_or_else(|| null("model"))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn confusion(counts: *const u64, k: u32) -> Result<ConfusionMatrix, Fail> {
    if counts.is_null() {
        return Err(null("counts"));
    }
    let k = k as usize;
    let flat = std::slice::from_raw_parts(counts, k * k);
    let rows: Vec<Vec<u64>> = flat.chunks_exact(k.max(1)).map(<[u64]>::to_vec).collect();
    let labels = (0..k).map(|i| format!("class_{i}")).collect();
    Ok(ConfusionMatrix::from_rows(labels, &rows)?)
}

/// Message for the last failing call on this thread, or an empty string.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn optn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a freshly initialized model.
///
/// `variant` is `opticnet47`, `opticnet63` or `opticnet71`. `mid_kernel` is
/// the side of the middle kernel in residual convolution units (2 or 3).
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn optn_model_new(
    variant: *const c_char,
    input_size: u32,
    classes: u32,
    mid_kernel: u32,
    seed: u64,
    out: *mut *mut OptnModel,
) -> OptnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v: Variant = str_arg(variant, "variant")?.parse()?;
        let cfg = ModelConfig::variant_with_mid_kernel(
            v,
            input_size as usize,
            classes as usize,
            mid_kernel as usize,
        );
        cfg.validate()?;
        let model = Model::new(cfg, seed)?;
        out.write(Box::into_raw(Box::new(OptnModel { model })));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`optn_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn optn_model_free(model: *mut OptnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input side length and class count.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn optn_model_dims(
    model: *const OptnModel,
    input_size: *mut u32,
    classes: *mut u32,
) -> OptnStatus {
    guard(|| {
        let cfg = model_ref(model)?.model.cfg();
        write(input_size, cfg.input_size as u32, "input_size")?;
        write(classes, cfg.classes as u32, "classes")
    })
}

/// Bias-free convolution and dense weights, and all trainable parameters.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn optn_model_param_counts(
    model: *const OptnModel,
    weights: *mut u64,
    trainable: *mut u64,
) -> OptnStatus {
    guard(|| {
        let census = Census::of(&model_ref(model)?.model.net.trace()?);
        write(weights, census.weights, "weights")?;
        write(trainable, census.trainable(), "trainable")
    })
}

/// Inference-mode logits for `n` images.
///
/// `pixels` holds `n * size * size * 3` values; `logits` has room for
/// `logits_len >= n * classes` values.
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn optn_model_predict(
    model: *mut OptnModel,
    pixels: *const f32,
    n: u32,
    logits: *mut f32,
    logits_len: usize,
) -> OptnStatus {
    guard(|| {
        let m = &mut model_mut(model)?.model;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let (s, k, n) = (m.cfg().input_size, m.cfg().classes, n as usize);
        if n == 0 {
            return Err(Fail(
                OptnStatus::Contract,
                "batch must hold at least one image".into(),
            ));
        }
        if logits_len < n * k {
            return Err(Fail(
                OptnStatus::NullArgument,
                format!("logits buffer holds {logits_len}, need {}", n * k),
            ));
        }
        let shape = Shape::new(n, s, s, m.cfg().in_channels);
        let x = Tensor::from_vec(
            shape,
            std::slice::from_raw_parts(pixels, shape.numel()).to_vec(),
        )?;
        let out = m.predict(&x)?;
        std::slice::from_raw_parts_mut(logits, n * k).copy_from_slice(out.data());
        Ok(())
    })
}

/// Loads weights from a checkpoint file. The model is unchanged on error.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn optn_model_load(model: *mut OptnModel, path: *const c_char) -> OptnStatus {
    guard(|| {
        let m = model_mut(model)?;
        let p = str_arg(path, "path")?;
        checkpoint::load_store(&mut m.model.params, Path::new(p))?;
        Ok(())
    })
}

/// Writes the model's parameters to a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn optn_model_save(
    model: *const OptnModel,
    path: *const c_char,
) -> OptnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let p = str_arg(path, "path")?;
        checkpoint::save_store(&m.model.params, Path::new(p))?;
        Ok(())
    })
}

/// Accuracy and macro-averaged sensitivity and specificity of a `k × k`
/// confusion matrix given row-major with rows as true classes.
///
/// # Safety
/// `counts` must hold `k * k` values.
#[no_mangle]
pub unsafe extern "C" fn optn_metrics(
    counts: *const u64,
    k: u32,
    out: *mut OptnMetrics,
) -> OptnStatus {
    guard(|| {
        let cm = confusion(counts, k)?;
        let m = OptnMetrics {
            accuracy: cm.accuracy()?,
            sensitivity: cm.sensitivity()?,
            specificity: cm.specificity()?,
        };
        write(out, m, "out")
    })
}

/// Penalty-weighted error in percent. `penalties` is a `k × k` row-major
/// matrix with a zero diagonal.
///
/// # Safety
/// `counts` and `penalties` must hold `k * k` values.
#[no_mangle]
pub unsafe extern "C" fn optn_weighted_error(
    counts: *const u64,
    penalties: *const f64,
    k: u32,
    out: *mut f64,
) -> OptnStatus {
    guard(|| {
        let cm = confusion(counts, k)?;
        if penalties.is_null() {
            return Err(null("penalties"));
        }
        let ku = k as usize;
        let rows: Vec<Vec<f64>> = std::slice::from_raw_parts(penalties, ku * ku)
            .chunks_exact(ku)
            .map(<[f64]>::to_vec)
            .collect();
        let p = PenaltyMatrix::new(cm.labels().to_vec(), &rows)?;
        write(out, cm.weighted_error(&p)?, "out")
    })
}

/// The 4×4 penalty matrix for NORMAL, DRUSEN, CNV, DME, row-major.
///
/// # Safety
/// `out` must have room for 16 values.
#[no_mangle]
pub unsafe extern "C" fn optn_oct2017_penalties(out: *mut f64) -> OptnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = default_oct2017_penalties();
        for i in 0..4 {
            for j in 0..4 {
                out.add(i * 4 + j).write(p.get(i, j));
            }
        }
        Ok(())
    })
}

/// Bias-free parameters of a residual unit's middle section.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn optn_middle_params(
    kind: OptnMiddleKind,
    f: u64,
    d: u64,
    d_prev: u64,
    out: *mut u64,
) -> OptnStatus {
    guard(|| write(out, audit::middle_params(kind.into(), f, d, d_prev)?, "out"))
}

/// Parameter depletion factor of `kind` against a regular `f × f`
/// convolution, percent.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn optn_depletion_factor(
    kind: OptnMiddleKind,
    f: u64,
    d: u64,
    out: *mut f64,
) -> OptnStatus {
    guard(|| {
        if f == 0 || d == 0 {
            return Err(Fail(
                OptnStatus::Contract,
                "kernel side and width must be positive".into(),
            ));
        }
        write(out, audit::depletion_factor(kind.into(), f, d), "out")
    })
}
