//! C interface to `dit_core`.
//!
//! Every fallible function returns a status code (`DIT_OK` on success)
//! and writes results through out-pointers. The message of the most recent
//! failure on the calling thread is available from [`dit_last_error`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dit_core::checkpoint::Checkpoint;
use dit_core::geometry::{Mesh, Point3};
use dit_core::inference::{extract_mesh, extract_template_mesh, ExtractOptions};
use dit_core::model::LatentCode;
use dit_core::Error;

pub const DIT_OK: i32 = 0;
/// A required pointer argument was null.
pub const DIT_ERR_NULL: i32 = 1;
/// A string argument was not valid UTF-8.
pub const DIT_ERR_UTF8: i32 = 2;
pub const DIT_ERR_MISSING_FILE: i32 = 3;
pub const DIT_ERR_IO: i32 = 4;
pub const DIT_ERR_MALFORMED: i32 = 5;
pub const DIT_ERR_CHECKPOINT_MISMATCH: i32 = 6;
pub const DIT_ERR_INVALID: i32 = 7;
pub const DIT_ERR_NON_FINITE: i32 = 8;
/// The output buffer is too small; the required length was written.
pub const DIT_ERR_BUFFER: i32 = 9;
pub const DIT_ERR_PANIC: i32 = 10;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior NULs removed"));
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.class().0 as i32, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DIT_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            DIT_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DIT_ERR_NULL, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DIT_ERR_UTF8, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
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

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn points_arg(p: *const f64, n: usize) -> Result<Vec<Point3>, Failure> {
    let flat = slice_arg(
        p,
        n.checked_mul(3)
            .ok_or_else(|| Failure(DIT_ERR_INVALID, "too many points".into()))?,
        "points",
    )?;
    if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
        return Err(Failure(
            DIT_ERR_NON_FINITE,
            format!("point {} has a non-finite coordinate", i / 3),
        ));
    }
    Ok(flat
        .chunks_exact(3)
        .map(|c| Point3::new(c[0], c[1], c[2]))
        .collect())
}

unsafe fn model_arg<'a>(m: *const DitModel) -> Result<&'a DitModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn code_arg(m: &DitModel, code: *const f64, len: usize) -> Result<LatentCode, Failure> {
    let values = slice_arg(code, len, "code")?;
    if len != m.checkpoint.model.latent_dim() {
        return Err(Failure(
            DIT_ERR_INVALID,
            format!(
                "code has {len} values, model expects {}",
                m.checkpoint.model.latent_dim()
            ),
        ));
    }
    Ok(LatentCode::new(u32::MAX, values.to_vec()))
}

/// A trained model together with its latent table.
pub struct DitModel {
    checkpoint: Checkpoint,
}

/// A triangle mesh with flat `xyz` vertices and `u32` index triples.
pub struct DitMesh {
    vertices: Vec<f64>,
    triangles: Vec<u32>,
    mesh: Mesh,
}

impl DitMesh {
    fn new(mesh: Mesh) -> Self {
        DitMesh {
            vertices: mesh.vertices.iter().flat_map(|v| v.to_array()).collect(),
            triangles: mesh.triangles.iter().flatten().copied().collect(),
            mesh,
        }
    }
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dit_model_load(path: *const c_char, out: *mut *mut DitModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let checkpoint = Checkpoint::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(DitModel { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dit_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dit_model_free(model: *mut DitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent code length, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dit_model_latent_dim(model: *const DitModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.checkpoint.model.latent_dim())
}

/// Number of warping steps, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dit_model_steps(model: *const DitModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.model.steps())
}

/// Number of trained shapes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dit_model_shape_count(model: *const DitModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.latents.len())
}

/// Copies the trained shape ids into `out` (capacity `cap`). `written`
/// receives the count, or the required capacity with `DIT_ERR_BUFFER`.
///
/// # Safety
/// `out` must hold `cap` elements; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dit_model_shape_ids(
    model: *const DitModel,
    out: *mut u32,
    cap: usize,
    written: *mut usize,
) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let ids = m.checkpoint.latents.ids();
        *written = ids.len();
        if cap < ids.len() {
            return Err(Failure(
                DIT_ERR_BUFFER,
                format!("need room for {} ids", ids.len()),
            ));
        }
        slice_mut_arg(out, ids.len(), "out")?.copy_from_slice(&ids);
        Ok(())
    })
}

/// Copies the trained code of `shape_id` into `out`, which must hold
/// exactly the latent dimension.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dit_model_code(
    model: *const DitModel,
    shape_id: u32,
    out: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        let code = m.checkpoint.latents.get(shape_id)?;
        if len != code.dim() {
            return Err(Failure(
                DIT_ERR_BUFFER,
                format!("code has {} values", code.dim()),
            ));
        }
        slice_mut_arg(out, len, "out")?.copy_from_slice(&code.values);
        Ok(())
    })
}

/// Signed distances `T(p(steps))` of `n` points (flat `xyz`) under a code.
///
/// # Safety
/// `code` holds `code_len` doubles, `points` `3 n` and `out` `n`.
#[no_mangle]
pub unsafe extern "C" fn dit_sdf(
    model: *const DitModel,
    code: *const f64,
    code_len: usize,
    points: *const f64,
    n: usize,
    steps: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        let code = code_arg(m, code, code_len)?;
        let pts = points_arg(points, n)?;
        let vals = m.checkpoint.model.forward_sdf_batch(&pts, &code, steps)?;
        slice_mut_arg(out, n, "out")?.copy_from_slice(&vals);
        Ok(())
    })
}

/// Template signed distances of `n` points.
///
/// # Safety
/// `points` holds `3 n` doubles and `out` `n`.
#[no_mangle]
pub unsafe extern "C" fn dit_template_sdf(
    model: *const DitModel,
    points: *const f64,
    n: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        let pts = points_arg(points, n)?;
        let vals = m.checkpoint.model.template_sdf_batch(&pts);
        slice_mut_arg(out, n, "out")?.copy_from_slice(&vals);
        Ok(())
    })
}

/// Canonical (template-space) positions of `n` points under a code.
///
/// # Safety
/// `code` holds `code_len` doubles, `points` and `out` `3 n` each.
#[no_mangle]
pub unsafe extern "C" fn dit_canonical(
    model: *const DitModel,
    code: *const f64,
    code_len: usize,
    points: *const f64,
    n: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = model_arg(model)?;
        let code = code_arg(m, code, code_len)?;
        let pts = points_arg(points, n)?;
        let canon = m.checkpoint.model.canonical_positions(&pts, &code)?;
        let out = slice_mut_arg(out, 3 * n, "out")?;
        for (dst, p) in out.chunks_exact_mut(3).zip(canon) {
            dst.copy_from_slice(&p.to_array());
        }
        Ok(())
    })
}

/// Marching-cubes mesh of a code's shape, or of the template when `code`
/// is null. An empty mesh is a success with zero triangles.
///
/// # Safety
/// `code` is null or holds `code_len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dit_extract_mesh(
    model: *const DitModel,
    code: *const f64,
    code_len: usize,
    resolution: usize,
    out: *mut *mut DitMesh,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = model_arg(model)?;
        let opts = ExtractOptions {
            resolution,
            ..ExtractOptions::default()
        };
        let mesh = if code.is_null() {
            extract_template_mesh(&m.checkpoint.model, &opts)?
        } else {
            extract_mesh(&m.checkpoint.model, &code_arg(m, code, code_len)?, &opts)?
        };
        *out = Box::into_raw(Box::new(DitMesh::new(mesh)));
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dit_mesh_vertex_count(mesh: *const DitMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.vertices.len())
}

/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dit_mesh_triangle_count(mesh: *const DitMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.triangles.len())
}

/// Flat `xyz` vertex array owned by the mesh, or null.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dit_mesh_vertices(mesh: *const DitMesh) -> *const f64 {
    mesh.as_ref().map_or(ptr::null(), |m| m.vertices.as_ptr())
}

/// Flat triangle index array owned by the mesh, or null.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dit_mesh_triangles(mesh: *const DitMesh) -> *const u32 {
    mesh.as_ref().map_or(ptr::null(), |m| m.triangles.as_ptr())
}

/// Writes the mesh as ASCII OBJ.
///
/// # Safety
/// `mesh` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dit_mesh_write_obj(mesh: *const DitMesh, path: *const c_char) -> i32 {
    guard(|| {
        let m = mesh.as_ref().ok_or_else(|| null("mesh"))?;
        m.mesh.write_obj(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `mesh` must come from [`dit_extract_mesh`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dit_mesh_free(mesh: *mut DitMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}
