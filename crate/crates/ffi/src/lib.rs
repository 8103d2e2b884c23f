//! C ABI over the ffusion model and the ASIL decomposition checker.
//!
//! Every fallible call returns an [`FfusionStatus`]; on failure the message
//! is available from [`ffusion_last_error`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`ffusion_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ffusion::cli::RunConfig;
use ffusion::geometry::{Image, PointCloud};
use ffusion::model::{prepare_frame, AvailabilityMask, Modality, ModelConfig, SensorFrame};
use ffusion::safety::{check_decomposition, rank_sum_allows, ArchGraph, AsilLevel, Verdict};
use ffusion::tasks::{predict, Rig};
use ffusion::tensor::{read_checkpoint, ParamStore};
use ffusion::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfusionStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Malformed = 3,
    MissingFile = 4,
    Io = 5,
    CheckpointMismatch = 6,
    /// No modality was available to fuse; the defined fail-silent outcome.
    NoModality = 7,
    Domain = 8,
    Panic = 9,
}

pub const FFUSION_MASK_CAMERA: u32 = 1;
pub const FFUSION_MASK_DEPTH: u32 = 2;
pub const FFUSION_MASK_TEXT: u32 = 4;
pub const FFUSION_MASK_ALL: u32 = 7;
pub const FFUSION_COMMANDS: usize = 4;
pub const FFUSION_MODALITIES: usize = 3;

/// A parsed architecture description with its decomposition verdicts.
pub struct FfusionArchGraph {
    verdicts: Vec<Verdict>,
}

/// A loaded checkpoint with the model and sensor-rig configuration.
pub struct FfusionModel {
    cfg: ModelConfig,
    params: ParamStore,
    rig: Rig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FfusionStatus {
    match e {
        Error::Config(_) | Error::Parse { .. } => FfusionStatus::Malformed,
        Error::MissingFile(_) => FfusionStatus::MissingFile,
        Error::Io { .. } => FfusionStatus::Io,
        Error::CheckpointMismatch(_) => FfusionStatus::CheckpointMismatch,
        Error::Fusion(_) => FfusionStatus::NoModality,
        _ => FfusionStatus::Domain,
    }
}

struct Fail(FfusionStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FfusionStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FfusionStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FfusionStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FfusionStatus::NullArgument, format!("`{what}` is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FfusionStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn level(rank: u8) -> Result<AsilLevel, Fail> {
    AsilLevel::from_rank(rank)
        .ok_or_else(|| Fail(FfusionStatus::InvalidArgument, format!("ASIL rank {rank} outside 0..=4")))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn ffusion_version() -> *const c_char {
    concat!("ffusion ", env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ffusion_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ffusion_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Whether levels with ranks `a` and `b` (QM=0 .. D=4) may decompose a
/// parent of rank `parent`, assuming the parts are independent.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ffusion_asil_decomposition_allowed(
    parent: u8,
    a: u8,
    b: u8,
    out: *mut bool,
) -> FfusionStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = rank_sum_allows(level(parent)?, level(a)?, level(b)?);
        Ok(())
    })
}

/// Parses and checks an architecture description.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ffusion_arch_parse(text: *const c_char, out: *mut *mut FfusionArchGraph) -> FfusionStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let graph = ArchGraph::parse(str_arg(text, "text")?)?;
        let verdicts = check_decomposition(&graph)?;
        *out = Box::into_raw(Box::new(FfusionArchGraph { verdicts }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from [`ffusion_arch_parse`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ffusion_arch_free(graph: *mut FfusionArchGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ffusion_arch_claim_count(graph: *const FfusionArchGraph, out: *mut usize) -> FfusionStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| null("graph"))?;
        *out_arg(out, "out")? = g.verdicts.len();
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ffusion_arch_claim_valid(
    graph: *const FfusionArchGraph,
    index: usize,
    out: *mut bool,
) -> FfusionStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| null("graph"))?;
        let v = g.verdicts.get(index).ok_or_else(|| {
            Fail(
                FfusionStatus::InvalidArgument,
                format!("claim {index} out of range ({} claims)", g.verdicts.len()),
            )
        })?;
        *out_arg(out, "out")? = v.valid;
        Ok(())
    })
}

/// All verdicts as a JSON array; free with [`ffusion_string_free`].
///
/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ffusion_arch_verdicts_json(
    graph: *const FfusionArchGraph,
    out: *mut *mut c_char,
) -> FfusionStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| null("graph"))?;
        let out = out_arg(out, "out")?;
        let json = serde_json::to_string(&g.verdicts).expect("verdicts serialize");
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Loads a checkpoint. `run_config_json` is a run config as accepted by the
/// command line, or NULL for the defaults; it fixes the model shape and the
/// camera/LiDAR rig.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ffusion_model_load(
    checkpoint_path: *const c_char,
    run_config_json: *const c_char,
    out: *mut *mut FfusionModel,
) -> FfusionStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = str_arg(checkpoint_path, "checkpoint_path")?;
        let cfg = if run_config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::parse(str_arg(run_config_json, "run_config_json")?, &[])?
        };
        let params = read_checkpoint(Path::new(path))?;
        ffusion::model::check_params(&cfg.model, &params)?;
        *out = Box::into_raw(Box::new(FfusionModel {
            cfg: cfg.model,
            params,
            rig: Rig::from_dataset(&cfg.dataset),
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ffusion_model_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ffusion_model_free(model: *mut FfusionModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length in pixels of the square RGB frame the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ffusion_model_image_size(model: *const FfusionModel, out: *mut usize) -> FfusionStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = m.cfg.image_size;
        Ok(())
    })
}

/// Runs one frame. `rgb` holds `size*size*3` row-major values in [0, 1];
/// `points` holds `n_points` LiDAR-frame xyz triples (may be NULL when
/// `n_points` is 0); `text` may be NULL for no command text. `mask` selects
/// modalities with the `FFUSION_MASK_*` bits. Writes the command
/// distribution (`FFUSION_COMMANDS` values: stop, go, turn_left, turn_right)
/// and the arbitration weights (`FFUSION_MODALITIES` values: camera, depth,
/// text). Returns `NoModality` when nothing could be fused.
///
/// # Safety
/// Every non-NULL pointer must reference at least the stated number of
/// elements.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ffusion_model_predict(
    model: *const FfusionModel,
    rgb: *const f64,
    rgb_len: usize,
    points: *const f64,
    n_points: usize,
    text: *const c_char,
    mask: u32,
    out_command: *mut f64,
    out_arbitration: *mut f64,
) -> FfusionStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if out_command.is_null() || out_arbitration.is_null() {
            return Err(null("out_command/out_arbitration"));
        }
        if mask & !FFUSION_MASK_ALL != 0 {
            return Err(Fail(FfusionStatus::InvalidArgument, format!("unknown mask bits {mask:#x}")));
        }
        let n = m.cfg.image_size;
        let image = Image::from_data(n, n, std::slice::from_raw_parts(rgb, rgb_len).to_vec())?;
        let coords: &[f64] = if n_points == 0 {
            &[]
        } else if points.is_null() {
            return Err(null("points"));
        } else {
            std::slice::from_raw_parts(points, n_points * 3)
        };
        let cloud = PointCloud::new(coords.chunks(3).map(|p| [p[0], p[1], p[2]]).collect());
        let text = if text.is_null() { "" } else { str_arg(text, "text")? };
        let frame = SensorFrame {
            rgb: &image,
            cloud: &cloud,
            text,
            depth_shift: (0, 0),
        };
        let input = prepare_frame(&frame, &m.cfg, &m.rig.intrinsics, &m.rig.extrinsics)?;
        let bits = [FFUSION_MASK_CAMERA, FFUSION_MASK_DEPTH, FFUSION_MASK_TEXT];
        let mask = AvailabilityMask::from_fn(|md: Modality| mask & bits[md.index()] != 0);
        let p = predict(&m.params, &m.cfg, &input, mask)?;
        std::slice::from_raw_parts_mut(out_command, FFUSION_COMMANDS).copy_from_slice(&p.command);
        std::slice::from_raw_parts_mut(out_arbitration, FFUSION_MODALITIES).copy_from_slice(&p.arbitration);
        Ok(())
    })
}
