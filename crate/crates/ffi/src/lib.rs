//! C ABI for the schema notation, the validator and the scorer.
//!
//! Conventions:
//! - Every fallible function returns a [`GxStatus`]; on failure a message is
//!   available from [`gx_last_error_message`] on the same thread.
//! - Handles (`GxSchema`, `GxInstanceSet`, `GxReport`) are opaque, owned by
//!   the caller once returned, and released with their `*_free` function.
//! - Strings returned through `char **` out-parameters are NUL-terminated
//!   UTF-8 owned by the caller and released with [`gx_string_free`].
//! - Input strings must be NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use guidex::corpus::Document;
use guidex::eval::{score, GoldExample, Matching, Prediction};
use guidex::schema_notation::{
    parse_guidelines, parse_instances, print_guidelines, print_instances, InstanceSet, Schema,
};
use guidex::validator::{filter, validate, GroundingPolicy, ValidationReport};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GxStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// An input string was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Guideline, instance-list or JSON text could not be parsed.
    ParseError = 3,
    /// An argument was rejected (empty document, mismatched report, ...).
    InvalidArgument = 4,
    /// A value could not be printed in canonical form.
    PrintError = 5,
    /// Internal error; the library caught a panic.
    Panic = 6,
}

/// Grounding policy for [`gx_validate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GxGrounding {
    Exact = 0,
    /// Case folding and whitespace collapsing on both sides.
    Normalized = 1,
    Off = 2,
}

/// Span comparison for [`gx_score_json`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GxMatching {
    Exact = 0,
    Normalized = 1,
}

/// Micro-averaged scores; every 0/0 is 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GxScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A parsed schema.
pub struct GxSchema(Schema);

/// A parsed instance list.
pub struct GxInstanceSet(InstanceSet);

/// Per-instance verdicts for one instance set.
pub struct GxReport(ValidationReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type FfiResult<T> = Result<T, (GxStatus, String)>;

/// Run `body`, turning errors and panics into a status plus last-error text.
fn guarded(body: impl FnOnce() -> FfiResult<()>) -> GxStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            GxStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal error");
            GxStatus::Panic
        }
    }
}

fn null(what: &str) -> (GxStatus, String) {
    (GxStatus::NullArgument, format!("`{what}` is NULL"))
}

/// # Safety
/// `p` is NULL or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (GxStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

/// # Safety
/// `p` is NULL or a live handle of type `T`.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `out` is NULL or valid for a pointer write.
unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// # Safety
/// `out` is NULL or valid for a pointer write.
unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(s).map_err(|e| (GxStatus::PrintError, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread; empty after a
/// successful call. Valid until the next call on this thread; never NULL.
#[no_mangle]
pub extern "C" fn gx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` is NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse dataclass-style guideline text.
///
/// # Safety
/// `text` is a valid C string; `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn gx_schema_parse(text: *const c_char, out: *mut *mut GxSchema) -> GxStatus {
    guarded(|| {
        let text = read_str(text, "text")?;
        let schema = parse_guidelines(text).map_err(|e| (GxStatus::ParseError, e.to_string()))?;
        put(out, GxSchema(schema), "out")
    })
}

/// Canonical guideline text of `schema`.
///
/// # Safety
/// `schema` is a live handle; `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn gx_schema_print(schema: *const GxSchema, out: *mut *mut c_char) -> GxStatus {
    guarded(|| {
        let schema = handle(schema, "schema")?;
        let text = print_guidelines(&schema.0).map_err(|e| (GxStatus::PrintError, e.to_string()))?;
        put_string(out, text)
    })
}

/// Number of classes in `schema`; 0 for NULL.
///
/// # Safety
/// `schema` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gx_schema_class_count(schema: *const GxSchema) -> usize {
    schema.as_ref().map_or(0, |s| s.0.classes.len())
}

/// # Safety
/// `schema` is NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gx_schema_free(schema: *mut GxSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Parse the first instance list in `text` (surrounding prose is ignored)
/// and tag it with `doc_id`.
///
/// # Safety
/// `text` and `doc_id` are valid C strings; `out` is valid for a pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn gx_instances_parse(
    text: *const c_char,
    doc_id: *const c_char,
    out: *mut *mut GxInstanceSet,
) -> GxStatus {
    guarded(|| {
        let text = read_str(text, "text")?;
        let doc_id = read_str(doc_id, "doc_id")?;
        let mut set = parse_instances(text, None).map_err(|e| (GxStatus::ParseError, e.to_string()))?;
        set.doc_id = doc_id.to_string();
        put(out, GxInstanceSet(set), "out")
    })
}

/// Canonical list literal of `set`.
///
/// # Safety
/// `set` is a live handle; `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn gx_instances_print(
    set: *const GxInstanceSet,
    out: *mut *mut c_char,
) -> GxStatus {
    guarded(|| {
        let set = handle(set, "set")?;
        let text = print_instances(&set.0).map_err(|e| (GxStatus::PrintError, e.to_string()))?;
        put_string(out, text)
    })
}

/// Number of instances in `set`; 0 for NULL.
///
/// # Safety
/// `set` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gx_instances_len(set: *const GxInstanceSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.instances.len())
}

/// # Safety
/// `set` is NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gx_instances_free(set: *mut GxInstanceSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Check every instance of `set` against `schema` and the document text.
///
/// # Safety
/// `set` and `schema` are live handles; `document` is a valid C string;
/// `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn gx_validate(
    set: *const GxInstanceSet,
    schema: *const GxSchema,
    document: *const c_char,
    grounding: GxGrounding,
    out: *mut *mut GxReport,
) -> GxStatus {
    guarded(|| {
        let set = handle(set, "set")?;
        let schema = handle(schema, "schema")?;
        let text = read_str(document, "document")?;
        let doc = Document::new(set.0.doc_id.as_str(), text, "ffi")
            .map_err(|e| (GxStatus::InvalidArgument, e.to_string()))?;
        let policy = match grounding {
            GxGrounding::Exact => GroundingPolicy::exact(),
            GxGrounding::Normalized => GroundingPolicy::normalized(),
            GxGrounding::Off => GroundingPolicy::off(),
        };
        let report = validate(&set.0, &schema.0, &doc, &policy)
            .map_err(|e| (GxStatus::InvalidArgument, e.to_string()))?;
        put(out, GxReport(report), "out")
    })
}

/// Accepted instances; 0 for NULL.
///
/// # Safety
/// `report` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gx_report_accepted_count(report: *const GxReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.accepted_count)
}

/// Rejected instances; 0 for NULL.
///
/// # Safety
/// `report` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gx_report_rejected_count(report: *const GxReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.rejected_count)
}

/// The full report as JSON: `{doc_id, verdicts: [{index, status, errors:
/// [{code, message}]}], accepted_count, rejected_count}`.
///
/// # Safety
/// `report` is a live handle; `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn gx_report_to_json(report: *const GxReport, out: *mut *mut c_char) -> GxStatus {
    guarded(|| {
        let report = handle(report, "report")?;
        let json = serde_json::to_string(&report.0).map_err(|e| (GxStatus::PrintError, e.to_string()))?;
        put_string(out, json)
    })
}

/// # Safety
/// `report` is NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gx_report_free(report: *mut GxReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// The accepted instances of `set`, in order, as a new handle.
///
/// # Safety
/// `set` and `report` are live handles; `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn gx_filter(
    set: *const GxInstanceSet,
    report: *const GxReport,
    out: *mut *mut GxInstanceSet,
) -> GxStatus {
    guarded(|| {
        let set = handle(set, "set")?;
        let report = handle(report, "report")?;
        let kept = filter(&set.0, &report.0).map_err(|e| (GxStatus::InvalidArgument, e.to_string()))?;
        put(out, GxInstanceSet(kept), "out")
    })
}

/// Score predictions against gold examples, both given as JSON arrays:
/// gold `[{"id", "text"?, "mentions": [{"label", "span"}]}]`, predictions
/// `[{"id", "mentions": [...]}]`.
///
/// # Safety
/// `gold_json` and `pred_json` are valid C strings; `out` is valid for a
/// write of one `GxScore`.
#[no_mangle]
pub unsafe extern "C" fn gx_score_json(
    gold_json: *const c_char,
    pred_json: *const c_char,
    matching: GxMatching,
    out: *mut GxScore,
) -> GxStatus {
    guarded(|| {
        let golds: Vec<GoldExample> = serde_json::from_str(read_str(gold_json, "gold_json")?)
            .map_err(|e| (GxStatus::ParseError, format!("gold: {e}")))?;
        let preds: Vec<Prediction> = serde_json::from_str(read_str(pred_json, "pred_json")?)
            .map_err(|e| (GxStatus::ParseError, format!("predictions: {e}")))?;
        let matching = match matching {
            GxMatching::Exact => Matching::Exact,
            GxMatching::Normalized => Matching::Normalized,
        };
        let r = score(&golds, &preds, matching).map_err(|e| (GxStatus::InvalidArgument, e.to_string()))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = GxScore {
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        };
        Ok(())
    })
}
