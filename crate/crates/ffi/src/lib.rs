//! C ABI over the esglm tokenizer, relevance extractor and classifier.
//!
//! Every fallible function returns an [`EsglmStatus`] code. On failure the
//! message is available from [`esglm_last_error`] on the same thread until
//! the next call. Handles are opaque and must be released with their
//! `_free` function. Strings returned through `char**` out-parameters are
//! owned by the caller and released with [`esglm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use esglm::checkpoint::{load_checkpoint, Checkpoint, Stage};
use esglm::finetune::classify_logits;
use esglm::relevance::{DanEmbedder, ExtractionConfig, Extractor};
use esglm::tokenizer::{prepare_input, Vocab};
use esglm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsglmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidInput = 4,
    InvalidConfig = 5,
    Checkpoint = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Other = 10,
}

impl From<&Error> for EsglmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => EsglmStatus::Io,
            Error::InvalidConfig(_) => EsglmStatus::InvalidConfig,
            Error::NotACheckpoint
            | Error::UnsupportedVersion { .. }
            | Error::CorruptCheckpoint(_)
            | Error::CheckpointMismatch(_) => EsglmStatus::Checkpoint,
            Error::Numeric(_) => EsglmStatus::Numeric,
            Error::InvalidInput(_)
            | Error::InvalidId { .. }
            | Error::Shape(_)
            | Error::EmptyDocument
            | Error::EmptyBatch
            | Error::Parse { .. } => EsglmStatus::InvalidInput,
            _ => EsglmStatus::Other,
        }
    }
}

/// Opaque WordPiece vocabulary.
pub struct EsglmVocab(Vocab);

/// Opaque model loaded from a checkpoint.
pub struct EsglmModel(Checkpoint);

/// Shape and provenance of a loaded model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EsglmModelInfo {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// 0 initial, 1 pretrained, 2 fine-tuned task a, 3 fine-tuned task b
    pub stage: u32,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(EsglmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(EsglmStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EsglmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            EsglmStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            EsglmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EsglmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EsglmStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next esglm call on the same thread.
#[no_mangle]
pub extern "C" fn esglm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a one-token-per-line vocabulary file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn esglm_vocab_load(path: *const c_char, out: *mut *mut EsglmVocab) -> EsglmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let v = Vocab::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(EsglmVocab(v)));
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from [`esglm_vocab_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn esglm_vocab_free(vocab: *mut EsglmVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Number of tokens, or 0 for a null handle.
///
/// # Safety
/// `vocab` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn esglm_vocab_len(vocab: *const EsglmVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.0.len())
}

/// WordPiece-encodes `text`. `*out_len` always receives the number of ids;
/// if it exceeds `capacity` nothing is written and `BufferTooSmall` is
/// returned, so a first call with `capacity = 0` sizes the buffer.
///
/// # Safety
/// `out_ids` must hold `capacity` elements (may be null when 0).
#[no_mangle]
pub unsafe extern "C" fn esglm_encode(
    vocab: *const EsglmVocab,
    text: *const c_char,
    out_ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> EsglmStatus {
    guard(|| {
        let vocab = vocab.as_ref().ok_or_else(|| null("vocab"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let ids = vocab.0.encode(str_arg(text, "text")?);
        *out_len = ids.len();
        if ids.len() > capacity {
            return Err(Failure(
                EsglmStatus::BufferTooSmall,
                format!("{} ids do not fit in {capacity}", ids.len()),
            ));
        }
        if !ids.is_empty() {
            if out_ids.is_null() {
                return Err(null("out_ids"));
            }
            ptr::copy_nonoverlapping(ids.as_ptr(), out_ids, ids.len());
        }
        Ok(())
    })
}

/// Wraps token ids as `[CLS] ids [SEP]`, truncated or padded to
/// `max_seq_len`. Both output buffers must hold `max_seq_len` elements.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn esglm_prepare_input(
    ids: *const u32,
    len: usize,
    max_seq_len: usize,
    out_ids: *mut u32,
    out_mask: *mut u8,
    out_real_len: *mut usize,
) -> EsglmStatus {
    guard(|| {
        let ids = slice_arg(ids, len, "ids")?;
        if out_ids.is_null() || out_mask.is_null() || out_real_len.is_null() {
            return Err(null("output buffer"));
        }
        let e = prepare_input(ids, max_seq_len)?;
        ptr::copy_nonoverlapping(e.ids.as_ptr(), out_ids, e.ids.len());
        ptr::copy_nonoverlapping(e.attention_mask.as_ptr(), out_mask, e.attention_mask.len());
        *out_real_len = e.real_len;
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn esglm_model_load(path: *const c_char, out: *mut *mut EsglmModel) -> EsglmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let c = load_checkpoint(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(EsglmModel(c)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`esglm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn esglm_model_free(model: *mut EsglmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn esglm_model_info(model: *const EsglmModel, out: *mut EsglmModelInfo) -> EsglmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = &m.0.meta.config;
        *out = EsglmModelInfo {
            vocab_size: c.vocab_size,
            max_seq_len: c.max_seq_len,
            hidden_dim: c.hidden_dim,
            num_layers: c.num_layers,
            num_heads: c.num_heads,
            ffn_dim: c.ffn_dim,
            stage: match m.0.meta.stage {
                Stage::Initial => 0,
                Stage::Pretrained => 1,
                Stage::FinetunedA => 2,
                Stage::FinetunedB => 3,
            },
            seed: m.0.meta.seed,
        };
        Ok(())
    })
}

/// Classifies raw token ids (they are wrapped and padded to the model's
/// input length). Writes the two logits and the argmax class.
///
/// # Safety
/// `ids` must hold `len` elements, `out_logits` two, `out_label` one.
#[no_mangle]
pub unsafe extern "C" fn esglm_classify(
    model: *const EsglmModel,
    ids: *const u32,
    len: usize,
    out_logits: *mut f64,
    out_label: *mut u32,
) -> EsglmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ids = slice_arg(ids, len, "ids")?;
        if out_logits.is_null() || out_label.is_null() {
            return Err(null("output"));
        }
        let config = &m.0.meta.config;
        let input = prepare_input(ids, config.max_seq_len)?;
        let logits = classify_logits(&m.0.params, config, &input)?;
        *out_logits = logits[0];
        *out_logits.add(1) = logits[1];
        *out_label = u32::from(logits[1] > logits[0]);
        Ok(())
    })
}

/// Picks the `top_k` sentences of `text` most similar to the benchmark
/// sentences (`|`-separated; null selects the built-in benchmark) and
/// returns `{"selected":[{"index","score","text"}],"token_ids":[...]}`.
///
/// # Safety
/// Handles must be live; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn esglm_extract(
    vocab: *const EsglmVocab,
    model: *const EsglmModel,
    text: *const c_char,
    benchmark: *const c_char,
    top_k: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> EsglmStatus {
    guard(|| {
        let vocab = vocab.as_ref().ok_or_else(|| null("vocab"))?;
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let mut cfg = ExtractionConfig {
            top_k,
            ..Default::default()
        };
        if !benchmark.is_null() {
            cfg.benchmark_sentences = str_arg(benchmark, "benchmark")?
                .split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
        }
        if vocab.0.len() != model.0.meta.config.vocab_size {
            return Err(Error::CheckpointMismatch(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.0.len(),
                model.0.meta.config.vocab_size
            ))
            .into());
        }
        let dim = model.0.meta.config.hidden_dim;
        let embedder = DanEmbedder::from_params(&vocab.0, &model.0.params, dim, seed)?;
        let out = Extractor::new(&embedder, cfg)?.extract(text, &vocab.0)?;
        let json = serde_json::to_string(&out).map_err(|e| Failure::from(Error::from(e)))?;
        *out_json = CString::new(json).expect("json has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn esglm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
