//! C ABI over the `depthfuse` engine.
//!
//! Objects are opaque handles created by `df_*_new` / `df_*_load` and released
//! with the matching `df_*_free`. Every fallible call returns a [`DfStatus`];
//! on failure a message is kept per thread and can be read with
//! [`df_last_error_message`]. Panics are caught at the boundary and reported
//! as [`DfStatus::Panic`].
//!
//! Handles are not internally synchronized: a handle may move between threads
//! but must not be used by two threads at once.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use depthfuse::baseline::integrate_frame_standard;
use depthfuse::eval::{evaluate, marching_cubes, MaskedMetrics};
use depthfuse::fusion::{FrameStats, FusionNet, LearnedFusion, PipelineConfig};
use depthfuse::nn::Architecture;
use depthfuse::routing::RoutingNet;
use depthfuse::{CameraIntrinsics, DepthFrame, DepthMap, Error, NetworkWeights, Pose, TsdfVolume};
use nalgebra::{Matrix3, Vector3};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    /// A value violated a precondition (shape, range, grid mismatch).
    Domain = 2,
    /// A file did not match its expected layout.
    Format = 3,
    Io = 4,
    Panic = 5,
}

/// Dense TSDF grid.
pub struct DfVolume(TsdfVolume);

/// Network weight set (either architecture).
pub struct DfWeights(NetworkWeights);

/// Learned pipeline state: both networks, settings, frame counter.
pub struct DfFuser(LearnedFusion);

/// Pinhole intrinsics; pixel centers sit at integer + 0.5.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DfCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Camera-to-world transform; `rotation` is row-major.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DfPose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DfStandardStats {
    pub valid_rays: u64,
    pub samples: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DfPipelineConfig {
    pub confidence_threshold: f32,
    pub filter_period: u64,
    pub weight_floor: f32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DfFrameStats {
    pub frame: u64,
    pub valid_rays: u64,
    pub rejected_rays: u64,
    pub voxels_touched: u64,
    pub reset_voxels: u64,
    pub routing_ms: f64,
    pub extraction_ms: f64,
    pub fusion_ms: f64,
    pub integration_ms: f64,
    pub post_filter_ms: f64,
}

/// Metrics over one voxel mask; `accuracy` is a percentage. Undefined values
/// (empty mask) are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DfMetrics {
    pub voxels: u64,
    pub mad: f64,
    pub mse: f64,
    pub accuracy: f64,
    pub iou: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> DfStatus {
    match err {
        Error::Domain(_) => DfStatus::Domain,
        Error::Format(_) => DfStatus::Format,
        Error::Io(_) => DfStatus::Io,
    }
}

enum Fail {
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

type Res<T> = std::result::Result<T, Fail>;

fn guard(f: impl FnOnce() -> Res<()>) -> DfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            DfStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DfStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    // SAFETY: caller passes either null or a pointer to a live T.
    unsafe { p.as_ref() }.ok_or_else(|| Fail::Arg(format!("{what} is null")))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    // SAFETY: caller passes either null or a pointer to a live, unaliased T.
    unsafe { p.as_mut() }.ok_or_else(|| Fail::Arg(format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Res<PathBuf> {
    if p.is_null() {
        return Err(Fail::Arg("path is null".into()));
    }
    // SAFETY: non-null, NUL-terminated per the API contract.
    let s = unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Fail::Arg("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn put<T>(out: *mut *mut T, value: T) -> Res<()> {
    if out.is_null() {
        return Err(Fail::Arg("output handle pointer is null".into()));
    }
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn camera(c: &DfCamera) -> Res<CameraIntrinsics> {
    Ok(CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width as usize, c.height as usize)?)
}

fn pose(p: &DfPose) -> Res<Pose> {
    let r = Matrix3::from_row_slice(&p.rotation);
    Ok(Pose::new(r, Vector3::from(p.translation))?)
}

unsafe fn frame(depth: *const f32, cam: *const DfCamera, pose_ptr: *const DfPose) -> Res<DepthFrame> {
    // SAFETY: forwarded pointer contracts.
    let (cam, pose_in) = unsafe { (as_ref(cam, "camera")?, as_ref(pose_ptr, "pose")?) };
    let k = camera(cam)?;
    if depth.is_null() {
        return Err(Fail::Arg("depth is null".into()));
    }
    let n = k.pixel_count();
    // SAFETY: the caller provides width * height floats.
    let data = unsafe { std::slice::from_raw_parts(depth, n) }.to_vec();
    Ok(DepthFrame::new(DepthMap::new(k.width, k.height, data)?, k, pose(pose_in)?)?)
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn df_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: n + 1 <= len bytes are writable.
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a volume with zero values and weights.
///
/// # Safety
/// `dims` and `origin` point to three elements; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_volume_new(
    dims: *const u32,
    origin: *const f32,
    voxel_size: f32,
    out: *mut *mut DfVolume,
) -> DfStatus {
    guard(|| {
        if dims.is_null() || origin.is_null() {
            return Err(Fail::Arg("dims or origin is null".into()));
        }
        // SAFETY: three elements each per the contract.
        let (d, o) = unsafe { (std::slice::from_raw_parts(dims, 3), std::slice::from_raw_parts(origin, 3)) };
        let v = TsdfVolume::new([d[0] as usize, d[1] as usize, d[2] as usize], [o[0], o[1], o[2]], voxel_size)?;
        put(out, DfVolume(v))
    })
}

/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_volume_load(path: *const c_char, out: *mut *mut DfVolume) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let p = unsafe { path_arg(path)? };
        put(out, DfVolume(TsdfVolume::load(&p)?))
    })
}

/// # Safety
/// `vol` is a live handle; `path` is a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn df_volume_save(vol: *const DfVolume, path: *const c_char) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let (v, p) = unsafe { (as_ref(vol, "volume")?, path_arg(path)?) };
        Ok(v.0.save(&p)?)
    })
}

/// # Safety
/// `vol` is null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_volume_free(vol: *mut DfVolume) {
    if !vol.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(vol) });
    }
}

/// Writes the grid dimensions to `dims[0..3]`.
///
/// # Safety
/// `vol` is a live handle; `dims` points to three writable elements.
#[no_mangle]
pub unsafe extern "C" fn df_volume_dims(vol: *const DfVolume, dims: *mut u32) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let v = unsafe { as_ref(vol, "volume")? };
        if dims.is_null() {
            return Err(Fail::Arg("dims is null".into()));
        }
        for (i, d) in v.0.dims().into_iter().enumerate() {
            // SAFETY: three writable elements.
            unsafe { *dims.add(i) = d as u32 };
        }
        Ok(())
    })
}

/// Borrowed views of the value and weight arrays (x fastest, then y, then z).
/// The pointers stay valid until the volume is modified or freed.
///
/// # Safety
/// `vol` is a live handle; the out pointers are writable or null.
#[no_mangle]
pub unsafe extern "C" fn df_volume_data(
    vol: *const DfVolume,
    values: *mut *const f32,
    weights: *mut *const f32,
    len: *mut usize,
) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let v = unsafe { as_ref(vol, "volume")? };
        // SAFETY: each slot is null or writable.
        unsafe {
            if !values.is_null() {
                *values = v.0.values().as_ptr();
            }
            if !weights.is_null() {
                *weights = v.0.weights().as_ptr();
            }
            if !len.is_null() {
                *len = v.0.len();
            }
        }
        Ok(())
    })
}

/// Standard running-average integration of one depth frame (meters, z-depth,
/// row-major `height x width`; values <= 0 or non-finite are missing).
///
/// # Safety
/// `vol` is a live handle; `depth` holds `camera.width * camera.height`
/// floats; `stats` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn df_integrate_standard(
    vol: *mut DfVolume,
    depth: *const f32,
    camera: *const DfCamera,
    pose: *const DfPose,
    truncation_voxels: u32,
    stats: *mut DfStandardStats,
) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let (v, f) = unsafe { (as_mut(vol, "volume")?, frame(depth, camera, pose)?) };
        let st = integrate_frame_standard(&mut v.0, &f, truncation_voxels)?;
        if !stats.is_null() {
            // SAFETY: non-null and writable per the contract.
            unsafe { *stats = DfStandardStats { valid_rays: st.valid_rays as u64, samples: st.samples as u64 } };
        }
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_weights_load(path: *const c_char, out: *mut *mut DfWeights) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let p = unsafe { path_arg(path)? };
        put(out, DfWeights(NetworkWeights::load(&p)?))
    })
}

/// 1 for routing weights, 2 for fusion weights, 0 on a null handle.
///
/// # Safety
/// `w` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn df_weights_arch(w: *const DfWeights) -> u32 {
    // SAFETY: forwarded contract.
    match unsafe { w.as_ref() } {
        Some(w) => match w.0.arch() {
            Architecture::Routing => 1,
            Architecture::Fusion => 2,
        },
        None => 0,
    }
}

/// # Safety
/// `w` is null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_weights_free(w: *mut DfWeights) {
    if !w.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(w) });
    }
}

/// Default learned-pipeline settings.
#[no_mangle]
pub extern "C" fn df_pipeline_config_default() -> DfPipelineConfig {
    let c = PipelineConfig::default();
    DfPipelineConfig {
        confidence_threshold: c.confidence_threshold,
        filter_period: c.filter_period,
        weight_floor: c.weight_floor,
    }
}

/// Builds a learned fuser; the weight handles are copied and may be freed
/// afterwards. `config` may be null for defaults.
///
/// # Safety
/// `routing` and `fusion` are live handles; `config` is null or valid; `out`
/// is writable.
#[no_mangle]
pub unsafe extern "C" fn df_fuser_new(
    routing: *const DfWeights,
    fusion: *const DfWeights,
    config: *const DfPipelineConfig,
    out: *mut *mut DfFuser,
) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let (r, f) = unsafe { (as_ref(routing, "routing weights")?, as_ref(fusion, "fusion weights")?) };
        // SAFETY: null or valid.
        let cfg = match unsafe { config.as_ref() } {
            Some(c) => PipelineConfig {
                confidence_threshold: c.confidence_threshold,
                filter_period: c.filter_period,
                weight_floor: c.weight_floor,
            },
            None => PipelineConfig::default(),
        };
        let lf = LearnedFusion::new(RoutingNet::new(r.0.clone())?, FusionNet::new(f.0.clone())?, cfg)?;
        put(out, DfFuser(lf))
    })
}

/// Window size `S` the fuser's fusion network was built for.
///
/// # Safety
/// `fuser` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn df_fuser_samples(fuser: *const DfFuser) -> u32 {
    // SAFETY: forwarded contract.
    unsafe { fuser.as_ref() }.map_or(0, |f| f.0.samples() as u32)
}

/// # Safety
/// `fuser` is null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_fuser_free(fuser: *mut DfFuser) {
    if !fuser.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(fuser) });
    }
}

fn frame_stats(s: &FrameStats) -> DfFrameStats {
    DfFrameStats {
        frame: s.frame,
        valid_rays: s.valid_rays as u64,
        rejected_rays: s.rejected_rays as u64,
        voxels_touched: s.voxels_touched as u64,
        reset_voxels: s.reset_voxels as u64,
        routing_ms: s.timings.routing_ms,
        extraction_ms: s.timings.extraction_ms,
        fusion_ms: s.timings.fusion_ms,
        integration_ms: s.timings.integration_ms,
        post_filter_ms: s.timings.post_filter_ms,
    }
}

/// Runs the learned pipeline on one raw depth frame.
///
/// # Safety
/// As for [`df_integrate_standard`]; `fuser` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn df_fuser_fuse_frame(
    fuser: *mut DfFuser,
    vol: *mut DfVolume,
    depth: *const f32,
    camera: *const DfCamera,
    pose: *const DfPose,
    stats: *mut DfFrameStats,
) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let (fu, v, f) = unsafe { (as_mut(fuser, "fuser")?, as_mut(vol, "volume")?, frame(depth, camera, pose)?) };
        let st = fu.0.fuse_frame(&mut v.0, &f)?;
        if !stats.is_null() {
            // SAFETY: non-null and writable.
            unsafe { *stats = frame_stats(&st) };
        }
        Ok(())
    })
}

fn metrics(m: &MaskedMetrics) -> DfMetrics {
    DfMetrics {
        voxels: m.voxels as u64,
        mad: m.mad.unwrap_or(f64::NAN),
        mse: m.mse.unwrap_or(f64::NAN),
        accuracy: m.accuracy.unwrap_or(f64::NAN),
        iou: m.iou,
    }
}

/// Compares an estimate with ground truth on the same grid, over all voxels
/// and over voxels observed in either volume.
///
/// # Safety
/// `est` and `gt` are live handles; the outputs are null or writable.
#[no_mangle]
pub unsafe extern "C" fn df_evaluate(
    est: *const DfVolume,
    gt: *const DfVolume,
    all: *mut DfMetrics,
    observed: *mut DfMetrics,
) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let (e, g) = unsafe { (as_ref(est, "estimate")?, as_ref(gt, "ground truth")?) };
        let rec = evaluate(&e.0, &g.0, BTreeMap::new())?;
        // SAFETY: each output is null or writable.
        unsafe {
            if !all.is_null() {
                *all = metrics(&rec.all);
            }
            if !observed.is_null() {
                *observed = metrics(&rec.observed);
            }
        }
        Ok(())
    })
}

/// Extracts the `iso` level set from observed cells and writes a binary PLY.
///
/// # Safety
/// `vol` is a live handle; `path` is a NUL-terminated UTF-8 string; the count
/// outputs are null or writable.
#[no_mangle]
pub unsafe extern "C" fn df_mesh_save_ply(
    vol: *const DfVolume,
    iso: f32,
    path: *const c_char,
    vertices: *mut u64,
    faces: *mut u64,
) -> DfStatus {
    guard(|| {
        // SAFETY: forwarded contract.
        let (v, p) = unsafe { (as_ref(vol, "volume")?, path_arg(path)?) };
        let mesh = marching_cubes(&v.0, iso);
        mesh.save_ply(&p)?;
        // SAFETY: null or writable.
        unsafe {
            if !vertices.is_null() {
                *vertices = mesh.vertices().len() as u64;
            }
            if !faces.is_null() {
                *faces = mesh.faces().len() as u64;
            }
        }
        Ok(())
    })
}
