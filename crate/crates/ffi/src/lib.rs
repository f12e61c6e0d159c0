//! C ABI over the artilang generators, checkpoints and probes.
//!
//! Every fallible call returns an [`ArtilangStatus`]; on failure the message
//! is kept per thread and read back with [`artilang_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use artilang::corpus::read_corpus_all;
use artilang::generators::{validate_corpus, write_generated, Generator, GeneratorSpec};
use artilang::mlm::{load_checkpoint, MlmModel};
use artilang::probe::probe_sequence;
use artilang::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtilangStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    BufferTooSmall = 6,
    Runtime = 7,
    Panic = 8,
}

/// A seeded corpus generator.
pub struct ArtilangGenerator(Generator);

/// A masked language model loaded from a checkpoint.
pub struct ArtilangModel(MlmModel<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ArtilangStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => ArtilangStatus::Io,
            Error::Parse { .. } | Error::Json(_) | Error::Checkpoint(_) => ArtilangStatus::Parse,
            Error::Divergence { .. } => ArtilangStatus::Runtime,
            _ => ArtilangStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ArtilangStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let message = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Failure(ArtilangStatus::Panic, message))
    });
    match outcome {
        Ok(()) => ArtilangStatus::Ok,
        Err(Failure(status, message)) => {
            set_last_error(message);
            status
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ArtilangStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(ArtilangStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, _) => Ok(std::slice::from_raw_parts(p, len)),
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies `values` into `buf` when it fits; `out_len` always receives the
/// required length.
unsafe fn fill<T: Copy>(values: &[T], buf: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    *out_arg(out_len, "out_len")? = values.len();
    if values.len() > cap {
        return Err(Failure(
            ArtilangStatus::BufferTooSmall,
            format!("need {} elements, buffer holds {cap}", values.len()),
        ));
    }
    if !values.is_empty() {
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    }
    Ok(())
}

fn parse_spec(json: &str) -> Result<GeneratorSpec, Failure> {
    serde_json::from_str(json).map_err(|e| Failure(ArtilangStatus::Parse, format!("generator spec: {e}")))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn artilang_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

#[no_mangle]
pub extern "C" fn artilang_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a generator from a JSON spec (the same fields as a run config's
/// `[generator]` section).
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn artilang_generator_new(
    spec_json: *const c_char,
    out: *mut *mut ArtilangGenerator,
) -> ArtilangStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let generator = Generator::new(parse_spec(str_arg(spec_json, "spec_json")?)?)?;
        *out = Box::into_raw(Box::new(ArtilangGenerator(generator)));
        Ok(())
    })
}

/// # Safety
/// `generator` must come from [`artilang_generator_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn artilang_generator_free(generator: *mut ArtilangGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Number of sequences in the generator's corpus; 0 for NULL.
///
/// # Safety
/// `generator` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn artilang_generator_len(generator: *const ArtilangGenerator) -> u64 {
    generator.as_ref().map_or(0, |g| g.0.spec().num_sequences)
}

/// Writes sequence `index` into `buf`. With a short buffer the call returns
/// `BUFFER_TOO_SMALL` and `out_len` holds the needed length.
///
/// # Safety
/// `buf` must hold `cap` tokens; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn artilang_generator_sequence(
    generator: *const ArtilangGenerator,
    index: u64,
    buf: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> ArtilangStatus {
    guard(|| {
        let generator = generator.as_ref().ok_or_else(|| null("generator"))?;
        let generated = generator.0.generate(index)?;
        fill(&generated.tokens, buf, cap, out_len)
    })
}

/// Generates the whole corpus to `path` and its manifest beside it.
///
/// # Safety
/// `generator` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn artilang_generator_write(
    generator: *const ArtilangGenerator,
    path: *const c_char,
) -> ArtilangStatus {
    guard(|| {
        let generator = generator.as_ref().ok_or_else(|| null("generator"))?;
        write_generated(&generator.0, PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Checks a corpus file against a generator spec; `out_violations` receives
/// the violation count.
///
/// # Safety
/// Strings must be NUL-terminated; `out_violations` must be writable.
#[no_mangle]
pub unsafe extern "C" fn artilang_validate_corpus(
    corpus_path: *const c_char,
    spec_json: *const c_char,
    out_violations: *mut u64,
) -> ArtilangStatus {
    guard(|| {
        let out = out_arg(out_violations, "out_violations")?;
        let generator = Generator::new(parse_spec(str_arg(spec_json, "spec_json")?)?)?;
        let vocab = generator.spec().vocabulary()?;
        let corpus = read_corpus_all(str_arg(corpus_path, "corpus_path")?, Some(vocab))?;
        *out = validate_corpus(&corpus, &generator)?.violation_count;
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn artilang_model_load(path: *const c_char, out: *mut *mut ArtilangModel) -> ArtilangStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let (model, _) = load_checkpoint::<f32>(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(ArtilangModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`artilang_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn artilang_model_free(model: *mut ArtilangModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Full vocabulary size, specials included; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn artilang_model_vocab_size(model: *const ArtilangModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().vocab_size)
}

/// Predictive distribution at `query` after replacing the `masked` positions
/// with MASK. `probs` receives one probability per vocabulary entry.
///
/// # Safety
/// `tokens` must hold `len` ids, `masked` `n_masked` positions, and `probs`
/// `cap` doubles; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn artilang_model_predict(
    model: *const ArtilangModel,
    tokens: *const u32,
    len: usize,
    masked: *const usize,
    n_masked: usize,
    query: usize,
    probs: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ArtilangStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let tokens = slice_arg(tokens, len, "tokens")?;
        let masked = slice_arg(masked, n_masked, "masked")?;
        let dist = model.0.predict_distribution(tokens, masked, query)?;
        fill(dist.probs(), probs, cap, out_len)
    })
}

/// Runs the dependency probe at the sequence center and reports the center
/// and the position `j*` whose masking most raises its entropy.
///
/// # Safety
/// `tokens` must hold `len` ids; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn artilang_model_probe(
    model: *const ArtilangModel,
    tokens: *const u32,
    len: usize,
    out_center: *mut usize,
    out_j_star: *mut usize,
) -> ArtilangStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let result = probe_sequence(&model.0, slice_arg(tokens, len, "tokens")?, 0)?;
        *out_arg(out_center, "out_center")? = result.center;
        *out_arg(out_j_star, "out_j_star")? = result.j_star;
        Ok(())
    })
}
