//! C ABI over `fsgraph`.
//!
//! Feature sets cross the boundary as opaque `FsgFeatureSet` handles. Every
//! fallible call returns an `FsgStatus`; on failure the message is available
//! from `fsg_last_error_message` on the same thread. Panics never unwind into
//! the caller: they are caught and reported as `FSG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fsgraph::{
    evaluate, generate_synthetic, load_feature_set, save_feature_set, EpisodeSpec, Error,
    EvalOptions, FeatureFormat, FeatureSet, HyperParams, PoolSize, PropagationParams, Sampling,
    SyntheticConfig, TrainConfig,
};
use ndarray::{Array2, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    InsufficientRows = 6,
    NumericalFailure = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsgFeatureFormat {
    Binary = 0,
    Csv = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsgSampling {
    Uniform = 0,
    Balanced = 1,
}

/// Opaque feature-set handle.
pub struct FsgFeatureSet(FeatureSet);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FsgSyntheticConfig {
    pub class_count: usize,
    pub per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FsgEpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub sampling: FsgSampling,
    /// 0 selects "all available".
    pub pool_per_class: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FsgHyperParams {
    pub k: usize,
    pub kappa: u32,
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FsgEvalSummary {
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub runs: u64,
    pub mean_epochs_run: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FsgStatus {
    match err {
        Error::Io { .. } => FsgStatus::Io,
        Error::Format(_) => FsgStatus::Format,
        Error::Shape(_) => FsgStatus::Shape,
        Error::InsufficientRows { .. } => FsgStatus::InsufficientRows,
        Error::Diverged { .. } | Error::NoConvergence { .. } | Error::NonFinite { .. } => {
            FsgStatus::NumericalFailure
        }
        Error::Run { source, .. } => status_of(source),
        Error::Validation(_) | Error::NegativeFeature { .. } => FsgStatus::InvalidArgument,
    }
}

struct Failure(FsgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FsgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FsgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("panic: {msg}"));
            FsgStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(FsgStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn format_of(f: FsgFeatureFormat) -> FeatureFormat {
    match f {
        FsgFeatureFormat::Binary => FeatureFormat::Binary,
        FsgFeatureFormat::Csv => FeatureFormat::Csv,
    }
}

fn store_handle(out: *mut *mut FsgFeatureSet, set: FeatureSet) {
    // SAFETY: callers checked `out` for null.
    unsafe { *out = Box::into_raw(Box::new(FsgFeatureSet(set))) };
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fsg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsg_feature_set_load(
    path: *const c_char,
    format: FsgFeatureFormat,
    out: *mut *mut FsgFeatureSet,
) -> FsgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        store_handle(out, load_feature_set(path, format_of(format))?);
        Ok(())
    })
}

/// Builds a feature set from row-major `n x h` features and `n` labels.
///
/// # Safety
/// `features` must hold `n * h` floats, `labels` `n` values, and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn fsg_feature_set_from_raw(
    features: *const f32,
    labels: *const u32,
    n: usize,
    h: usize,
    class_count: usize,
    out: *mut *mut FsgFeatureSet,
) -> FsgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if features.is_null() || labels.is_null() {
            return Err(null("features/labels"));
        }
        let len = n
            .checked_mul(h)
            .ok_or_else(|| Failure(FsgStatus::InvalidArgument, "n * h overflows".into()))?;
        let values = std::slice::from_raw_parts(features, len).to_vec();
        let labels = std::slice::from_raw_parts(labels, n)
            .iter()
            .map(|&l| l as usize)
            .collect();
        let matrix = Array2::from_shape_vec((n, h), values)
            .map_err(|e| Failure(FsgStatus::Shape, e.to_string()))?;
        store_handle(out, FeatureSet::new(matrix, labels, class_count, "ffi")?);
        Ok(())
    })
}

/// # Safety
/// `config` must point to a valid config and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsg_feature_set_synthetic(
    config: *const FsgSyntheticConfig,
    out: *mut *mut FsgFeatureSet,
) -> FsgStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return Err(null("config/out"));
        }
        let c = &*config;
        let set = generate_synthetic(&SyntheticConfig {
            class_count: c.class_count,
            per_class: c.per_class,
            dim: c.dim,
            center_scale: c.center_scale,
            noise_sigma: c.noise_sigma,
            seed: c.seed,
        })?;
        store_handle(out, set);
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fsg_feature_set_save(
    set: *const FsgFeatureSet,
    path: *const c_char,
    format: FsgFeatureFormat,
) -> FsgStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let path = path_arg(path)?;
        save_feature_set(&set.0, path, format_of(format))?;
        Ok(())
    })
}

/// Writes row count, feature dimension and class count. Any output pointer
/// may be NULL.
///
/// # Safety
/// `set` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsg_feature_set_dims(
    set: *const FsgFeatureSet,
    rows: *mut usize,
    dim: *mut usize,
    class_count: *mut usize,
) -> FsgStatus {
    guard(|| {
        let set = &set.as_ref().ok_or_else(|| null("set"))?.0;
        if !rows.is_null() {
            *rows = set.len();
        }
        if !dim.is_null() {
            *dim = set.dim();
        }
        if !class_count.is_null() {
            *class_count = set.class_count();
        }
        Ok(())
    })
}

/// # Safety
/// `set` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsg_feature_set_free(set: *mut FsgFeatureSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Recommended settings for a shot count, with default training parameters.
#[no_mangle]
pub extern "C" fn fsg_hyperparams_default(shots: usize) -> FsgHyperParams {
    let hp = HyperParams::for_shots(shots);
    FsgHyperParams {
        k: hp.propagation.k,
        kappa: hp.propagation.kappa,
        alpha: hp.propagation.alpha,
        epochs: hp.train.epochs,
        learning_rate: hp.train.learning_rate,
        weight_decay: hp.train.weight_decay,
    }
}

fn hyperparams_of(hp: &FsgHyperParams) -> HyperParams {
    HyperParams {
        propagation: PropagationParams {
            k: hp.k,
            kappa: hp.kappa,
            alpha: hp.alpha,
        },
        train: TrainConfig {
            epochs: hp.epochs,
            learning_rate: hp.learning_rate,
            weight_decay: hp.weight_decay,
            ..TrainConfig::default()
        },
    }
}

/// Runs `runs` seeded episodes. `summary` receives the aggregate; when
/// `report_json` is non-NULL it receives the full JSON report, to be
/// released with `fsg_string_free`.
///
/// # Safety
/// `set`, `spec`, `hp` and `summary` must be valid pointers; `report_json`
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fsg_evaluate(
    set: *const FsgFeatureSet,
    spec: *const FsgEpisodeSpec,
    hp: *const FsgHyperParams,
    runs: u64,
    seed: u64,
    workers: usize,
    summary: *mut FsgEvalSummary,
    report_json: *mut *mut c_char,
) -> FsgStatus {
    guard(|| {
        let set = &set.as_ref().ok_or_else(|| null("set"))?.0;
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        let hp = hp.as_ref().ok_or_else(|| null("hp"))?;
        if summary.is_null() {
            return Err(null("summary"));
        }
        let spec = EpisodeSpec {
            ways: spec.ways,
            shots: spec.shots,
            queries: spec.queries,
            sampling: match spec.sampling {
                FsgSampling::Uniform => Sampling::Uniform,
                FsgSampling::Balanced => Sampling::Balanced,
            },
            pool_per_class: match spec.pool_per_class {
                0 => PoolSize::All,
                n => PoolSize::Fixed(n),
            },
        };
        let options = EvalOptions {
            workers,
            keep_runs: false,
        };
        let report = evaluate(set, &spec, &hyperparams_of(hp), runs, seed, &options)?;
        *summary = FsgEvalSummary {
            mean_accuracy: report.mean_accuracy,
            ci95: report.ci95,
            runs: report.runs,
            mean_epochs_run: report.mean_epochs_run,
        };
        if !report_json.is_null() {
            let json = fsgraph::report::to_json(&report)?;
            *report_json = CString::new(json)
                .map_err(|e| Failure(FsgStatus::Format, e.to_string()))?
                .into_raw();
        }
        Ok(())
    })
}

/// Builds the episode graph over `m x h` row-major `features` and writes
/// `(alpha I + E)^kappa V` into `out` (same shape).
///
/// # Safety
/// `features` and `out` must each hold `m * h` doubles.
#[no_mangle]
pub unsafe extern "C" fn fsg_propagate(
    features: *const f64,
    m: usize,
    h: usize,
    k: usize,
    kappa: u32,
    alpha: f64,
    out: *mut f64,
) -> FsgStatus {
    guard(|| {
        if features.is_null() || out.is_null() {
            return Err(null("features/out"));
        }
        let len = m
            .checked_mul(h)
            .ok_or_else(|| Failure(FsgStatus::InvalidArgument, "m * h overflows".into()))?;
        let v = ArrayView2::from_shape((m, h), std::slice::from_raw_parts(features, len))
            .map_err(|e| Failure(FsgStatus::Shape, e.to_string()))?;
        let params = PropagationParams::new(k, kappa, alpha)?;
        let (_, e) = fsgraph::build_episode_graph(v, &params)?;
        let result = fsgraph::propagate(v, &e, &params)?;
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, s) in dst.iter_mut().zip(result.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
