//! C ABI over `iso_al`.
//!
//! Every function returns an [`IsoStatus`]; on failure the message is kept in
//! a thread-local slot readable through [`iso_last_error_message`]. Models
//! cross the boundary as opaque [`IsoModel`] handles released with
//! [`iso_model_free`]. Strings returned to the caller are released with
//! [`iso_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iso_al::datamodel::{LabeledSet, Level};
use iso_al::harness::{result_rows, results_csv_string, run_experiment, ExperimentConfig};
use iso_al::learner::{train_two_stage, TrainConfig, TwoHeadModel};
use iso_al::selection::{select_greedy_vcr, select_iso, Candidate};
use iso_al::valuation::{compute_vcr, improvement_from_curve, percentile_normalize};
use iso_al::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Budget = 4,
    Training = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsoLevel {
    Full = 0,
    Weak = 1,
}

impl From<IsoLevel> for Level {
    fn from(level: IsoLevel) -> Level {
        match level {
            IsoLevel::Full => Level::Full,
            IsoLevel::Weak => Level::Weak,
        }
    }
}

impl From<Level> for IsoLevel {
    fn from(level: Level) -> IsoLevel {
        match level {
            Level::Full => IsoLevel::Full,
            Level::Weak => IsoLevel::Weak,
        }
    }
}

/// Training hyperparameters; see [`iso_train_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IsoTrainConfig {
    pub learning_rate: f64,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
}

impl From<IsoTrainConfig> for TrainConfig {
    fn from(c: IsoTrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: c.learning_rate,
            epochs_per_stage: c.epochs_per_stage,
            batch_size: c.batch_size,
            hidden_dim: c.hidden_dim,
            ..TrainConfig::default()
        }
    }
}

/// One selection candidate; its embedding is a row of the `embeddings`
/// matrix passed alongside.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IsoCandidate {
    pub instance_id: u64,
    pub level: IsoLevel,
    pub vcr: f64,
    pub cost: f64,
}

/// Opaque trained model.
pub struct IsoModel {
    inner: TwoHeadModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn status_of(e: &Error) -> IsoStatus {
    match e {
        Error::Shape { .. } => IsoStatus::Shape,
        Error::PoolViolation(_) | Error::Capacity { .. } | Error::BudgetExhausted { .. } => IsoStatus::Budget,
        Error::Training(_) | Error::Evaluation(_) | Error::Estimation(_) => IsoStatus::Training,
        Error::Io { .. } | Error::Csv(_) | Error::Checkpoint(_) => IsoStatus::Io,
        _ => IsoStatus::InvalidArgument,
    }
}

struct Failure(IsoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IsoStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(IsoStatus::InvalidArgument, message.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> IsoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => IsoStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("panic inside iso_al".into());
            IsoStatus::Panic
        }
    }
}

/// Borrows `len` elements; a zero length accepts a null pointer.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn labeled_set(
    features: *const f64,
    labels: *const u32,
    rows: usize,
    dim: usize,
    what: &str,
) -> Result<LabeledSet, Failure> {
    let x = input(features, rows * dim, what)?;
    let y = input(labels, rows, what)?;
    Ok(LabeledSet::new(
        dim,
        x.to_vec(),
        y.iter().map(|&l| l as usize).collect(),
    )?)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn iso_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn iso_train_config_default() -> IsoTrainConfig {
    let d = TrainConfig::default();
    IsoTrainConfig {
        learning_rate: d.learning_rate,
        epochs_per_stage: d.epochs_per_stage,
        batch_size: d.batch_size,
        hidden_dim: d.hidden_dim,
    }
}

/// Trains a fresh two-head model: weak stage on (`weak_features`,
/// `weak_labels`), then full stage on (`full_features`, `full_labels`).
/// Feature matrices are row-major with `dim` columns; `n_weak` may be 0.
///
/// # Safety
/// Array pointers must cover the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iso_model_train(
    config: *const IsoTrainConfig,
    dim: usize,
    num_classes: usize,
    num_superclasses: usize,
    full_features: *const f64,
    full_labels: *const u32,
    n_full: usize,
    weak_features: *const f64,
    weak_labels: *const u32,
    n_weak: usize,
    seed: u64,
    out: *mut *mut IsoModel,
) -> IsoStatus {
    guard(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let full = labeled_set(full_features, full_labels, n_full, dim, "full data")?;
        let weak = labeled_set(weak_features, weak_labels, n_weak, dim, "weak data")?;
        if let Some(&bad) = full.labels.iter().find(|&&l| l >= num_classes) {
            return Err(invalid(format!("full label {bad} out of range")));
        }
        if let Some(&bad) = weak.labels.iter().find(|&&l| l >= num_superclasses) {
            return Err(invalid(format!("weak label {bad} out of range")));
        }
        let cfg = TrainConfig::from(*config);
        let model = train_two_stage(
            &cfg,
            num_classes,
            num_superclasses,
            &full,
            &weak,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )?;
        *out = Box::into_raw(Box::new(IsoModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iso_model_free(model: *mut IsoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension, hidden width, class and superclass counts.
///
/// # Safety
/// `model` must be a live handle; each out pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn iso_model_shape(
    model: *const IsoModel,
    input_dim: *mut usize,
    hidden_dim: *mut usize,
    num_classes: *mut usize,
    num_superclasses: *mut usize,
) -> IsoStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        for (p, v) in [
            (input_dim, m.input_dim()),
            (hidden_dim, m.hidden_dim()),
            (num_classes, m.num_classes()),
            (num_superclasses, m.num_superclasses()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Class probabilities of one input on the chosen head.
///
/// # Safety
/// `x` holds `dim` values; `probs` has room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn iso_model_predict(
    model: *const IsoModel,
    x: *const f64,
    dim: usize,
    level: IsoLevel,
    probs: *mut f64,
    capacity: usize,
) -> IsoStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let p = m.predict(input(x, dim, "x")?, level.into())?;
        write_out(&p, probs, capacity)
    })
}

/// Unit-norm hidden representation of one input.
///
/// # Safety
/// `x` holds `dim` values; `embedding` has room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn iso_model_embed(
    model: *const IsoModel,
    x: *const f64,
    dim: usize,
    embedding: *mut f64,
    capacity: usize,
) -> IsoStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let e = m.embed(input(x, dim, "x")?)?;
        write_out(&e, embedding, capacity)
    })
}

unsafe fn write_out(values: &[f64], dst: *mut f64, capacity: usize) -> Result<(), Failure> {
    if capacity < values.len() {
        return Err(Failure(
            IsoStatus::BufferTooSmall,
            format!("need {} values, buffer holds {capacity}", values.len()),
        ));
    }
    output(dst, values.len(), "output buffer")?.copy_from_slice(values);
    Ok(())
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn iso_model_save(model: *const IsoModel, path: *const c_char) -> IsoStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        m.save_checkpoint(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iso_model_load(path: *const c_char, out: *mut *mut IsoModel) -> IsoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = TwoHeadModel::load_checkpoint(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(IsoModel { inner }));
        Ok(())
    })
}

/// Mean-rank percentile of each score, in [0, 1].
///
/// # Safety
/// `raw` and `out` each cover `n` values.
#[no_mangle]
pub unsafe extern "C" fn iso_percentile_normalize(raw: *const f64, n: usize, out: *mut f64) -> IsoStatus {
    guard(|| {
        let p = percentile_normalize(input(raw, n, "raw")?)?;
        output(out, n, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Value-to-cost ratio of each normalized score.
///
/// # Safety
/// `scores` and `out` each cover `n` values.
#[no_mangle]
pub unsafe extern "C" fn iso_compute_vcr(
    improvement: f64,
    scores: *const f64,
    n: usize,
    cost: f64,
    out: *mut f64,
) -> IsoStatus {
    guard(|| {
        let v = compute_vcr(improvement, input(scores, n, "scores")?, cost)?;
        output(out, n, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Per-instance improvement from a validation-accuracy curve over `k`
/// nested subsets of a pool of `pool_size` instances.
///
/// # Safety
/// `curve` covers `k` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iso_improvement_from_curve(
    curve: *const f64,
    k: usize,
    pool_size: usize,
    out: *mut f64,
) -> IsoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = improvement_from_curve(input(curve, k, "curve")?, pool_size)?;
        Ok(())
    })
}

/// Picks candidates under `budget`: budgeted D² sampling seeded by `seed`
/// when `diverse` is true, greedy by VCR otherwise. Writes up to `capacity`
/// picks in selection order and their count to `out_count`.
///
/// # Safety
/// `candidates` covers `n` entries, `embeddings` `n * dim` values, and the
/// pick buffers `capacity` entries each.
#[no_mangle]
pub unsafe extern "C" fn iso_select(
    candidates: *const IsoCandidate,
    embeddings: *const f64,
    n: usize,
    dim: usize,
    budget: f64,
    diverse: bool,
    seed: u64,
    out_ids: *mut u64,
    out_levels: *mut IsoLevel,
    capacity: usize,
    out_count: *mut usize,
    out_spent: *mut f64,
) -> IsoStatus {
    guard(|| {
        if out_count.is_null() {
            return Err(null("out_count"));
        }
        let cands = input(candidates, n, "candidates")?;
        let emb = input(embeddings, n * dim, "embeddings")?;
        let list: Vec<Candidate> = cands
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Candidate::new(
                    c.instance_id as usize,
                    c.level.into(),
                    c.vcr,
                    &emb[i * dim..(i + 1) * dim],
                    c.cost,
                )
            })
            .collect();
        let batch = if diverse {
            select_iso(&list, budget, &mut ChaCha8Rng::seed_from_u64(seed))?
        } else {
            select_greedy_vcr(&list, budget)?
        };
        let picks = batch.picks();
        *out_count = picks.len();
        if !out_spent.is_null() {
            *out_spent = batch.spent;
        }
        if capacity < picks.len() {
            return Err(Failure(
                IsoStatus::BufferTooSmall,
                format!("need {} picks, buffer holds {capacity}", picks.len()),
            ));
        }
        let ids = output(out_ids, picks.len(), "out_ids")?;
        let levels = output(out_levels, picks.len(), "out_levels")?;
        for (k, (id, level)) in picks.into_iter().enumerate() {
            ids[k] = id as u64;
            levels[k] = level.into();
        }
        Ok(())
    })
}

/// Runs a full experiment from a JSON config and returns the contents of
/// `results.csv` through `out_csv` (free with [`iso_string_free`]). Result
/// files are also written when the config names an `output_dir`.
///
/// # Safety
/// `config_json` must be a NUL-terminated UTF-8 string; `out_csv` writable.
#[no_mangle]
pub unsafe extern "C" fn iso_run_experiment_json(config_json: *const c_char, out_csv: *mut *mut c_char) -> IsoStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        if out_csv.is_null() {
            return Err(null("out_csv"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| invalid("config is not UTF-8"))?;
        let cfg = ExperimentConfig::from_json(text)?;
        let result = run_experiment(&cfg)?;
        let results = [result];
        if let Some(dir) = &cfg.output_dir {
            iso_al::harness::emit_results(&results, dir)?;
        }
        let csv = results_csv_string(&result_rows(&results))?;
        *out_csv = CString::new(csv).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn iso_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
