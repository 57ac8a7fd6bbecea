//! C ABI over `iscat_core`.
//!
//! Complex arrays cross the boundary as separate real and imaginary `double`
//! buffers in row-major order. Every entry point returns an [`IscatStatus`];
//! on failure [`iscat_last_error`] describes the most recent error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use iscat_core::classic::back_projection;
use iscat_core::forward::{incident_field, simulate, FieldRole, FieldSet, GreensOperators, ScatteringScene, SolverBackend};
use iscat_core::grid::{make_grid, ContrastMap};
use iscat_core::loss::{batch_beta, evaluate, LossKind, TrainingSample};
use iscat_core::metrics::{mse, ssim};
use iscat_core::Error;
use ndarray::Array2;
use num_complex::Complex64;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IscatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Numeric = 4,
    Config = 5,
    Io = 6,
    Format = 7,
    Panic = 8,
}

/// Loss selector for [`iscat_loss`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IscatLossKind {
    Contrast = 0,
    Current = 1,
    Field = 2,
}

/// Scene geometry, Green's operators and incident fields.
pub struct IscatScene {
    scene: ScatteringScene,
    ops: GreensOperators,
    einc: FieldSet,
}

/// Borrowed view of one training sample. Field buffers hold `n_tx * n_pixels` values.
#[repr(C)]
pub struct IscatSampleView {
    pub chi_true_re: *const f64,
    pub chi_true_im: *const f64,
    pub current_re: *const f64,
    pub current_im: *const f64,
    pub total_re: *const f64,
    pub total_im: *const f64,
    pub scattered_re: *const f64,
    pub scattered_im: *const f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(IscatStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => IscatStatus::InvalidArgument,
            Error::ShapeMismatch(_) => IscatStatus::ShapeMismatch,
            Error::Config(_) | Error::Json(_) => IscatStatus::Config,
            Error::Io { .. } => IscatStatus::Io,
            Error::Format(_) => IscatStatus::Format,
            _ => IscatStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(IscatStatus::NullPointer, format!("{name} is null"))
}

fn set_error(msg: Option<String>) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    });
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IscatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            IscatStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(_) => {
            set_error(Some("internal panic".into()));
            IscatStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn complex_input(re: *const f64, im: *const f64, len: usize, name: &str) -> Result<Vec<Complex64>, Failure> {
    let re = input(re, len, name)?;
    let im = input(im, len, name)?;
    Ok(re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect())
}

unsafe fn complex_output<'a, I>(values: I, re: *mut f64, im: *mut f64, len: usize, name: &str) -> Result<(), Failure>
where
    I: ExactSizeIterator<Item = &'a Complex64>,
{
    if values.len() != len {
        return Err(Failure(
            IscatStatus::ShapeMismatch,
            format!("{name} holds {len} values, result has {}", values.len()),
        ));
    }
    let re = output(re, len, name)?;
    let im = output(im, len, name)?;
    for ((r, i), v) in re.iter_mut().zip(im.iter_mut()).zip(values) {
        *r = v.re;
        *i = v.im;
    }
    Ok(())
}

unsafe fn scene_ref<'a>(scene: *const IscatScene) -> Result<&'a IscatScene, Failure> {
    scene.as_ref().ok_or_else(|| null("scene"))
}

fn field(role: FieldRole, rows: usize, values: Vec<Complex64>) -> Result<FieldSet, Failure> {
    let cols = values.len() / rows.max(1);
    let arr = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Failure(IscatStatus::ShapeMismatch, e.to_string()))?;
    Ok(FieldSet::new(role, arr))
}

/// Copies the message of the last failure on this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length, or 0 if
/// the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn iscat_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
        None => 0,
    })
}

/// Builds a square DOI of `nx * ny` cells and side `side_wavelengths`, with
/// `n_tx` sources and `n_rx` receivers on a circle of `radius_wavelengths`.
///
/// # Safety
/// `out` must be valid for writing one pointer. Release the handle with
/// [`iscat_scene_free`].
#[no_mangle]
pub unsafe extern "C" fn iscat_scene_new(
    nx: usize,
    ny: usize,
    side_wavelengths: f64,
    lambda0: f64,
    n_tx: usize,
    n_rx: usize,
    radius_wavelengths: f64,
    out: *mut *mut IscatScene,
) -> IscatStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let side = side_wavelengths * lambda0;
        let grid = make_grid(nx, ny, side, side, lambda0)?;
        let scene = ScatteringScene::circular(grid, n_tx, n_rx, radius_wavelengths * lambda0)?;
        let ops = GreensOperators::build(&scene)?;
        let einc = incident_field(&scene)?;
        *out = Box::into_raw(Box::new(IscatScene { scene, ops, einc }));
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle from [`iscat_scene_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iscat_scene_free(scene: *mut IscatScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Reports the grid size and antenna counts of a scene.
///
/// # Safety
/// `scene` must be a live handle; the outputs must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn iscat_scene_dims(
    scene: *const IscatScene,
    nx: *mut usize,
    ny: *mut usize,
    n_tx: *mut usize,
    n_rx: *mut usize,
) -> IscatStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        if nx.is_null() || ny.is_null() || n_tx.is_null() || n_rx.is_null() {
            return Err(null("output"));
        }
        *nx = s.scene.grid.nx;
        *ny = s.scene.grid.ny;
        *n_tx = s.scene.n_tx();
        *n_rx = s.scene.n_rx();
        Ok(())
    })
}

/// Solves the forward problem for contrast `chi` (`ny * nx`) and writes the
/// receiver fields (`n_tx * n_rx`).
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn iscat_forward(
    scene: *const IscatScene,
    chi_re: *const f64,
    chi_im: *const f64,
    n_pixels: usize,
    out_re: *mut f64,
    out_im: *mut f64,
    n_out: usize,
) -> IscatStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        let chi = ContrastMap::from_vec(s.scene.grid, complex_input(chi_re, chi_im, n_pixels, "chi")?)?;
        let sim = simulate(&s.ops, &s.einc, &chi, SolverBackend::default())?;
        complex_output(sim.measured.values.iter(), out_re, out_im, n_out, "out")
    })
}

/// Back-propagation estimate from receiver fields (`n_tx * n_rx`).
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn iscat_back_projection(
    scene: *const IscatScene,
    mea_re: *const f64,
    mea_im: *const f64,
    n_mea: usize,
    out_re: *mut f64,
    out_im: *mut f64,
    n_pixels: usize,
) -> IscatStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        let mea = field(FieldRole::ScatteredMea, s.scene.n_tx(), complex_input(mea_re, mea_im, n_mea, "mea")?)?;
        let chi = back_projection(&mea, &s.ops, &s.einc)?;
        complex_output(chi.chi.iter(), out_re, out_im, n_pixels, "out")
    })
}

/// Pixel-mean squared magnitude of `a - b` for `height * width` maps.
///
/// # Safety
/// Buffers must be valid for `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn iscat_mse(
    a_re: *const f64,
    a_im: *const f64,
    b_re: *const f64,
    b_im: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> IscatStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = height * width;
        let grid = make_grid(width, height, 1.0, 1.0, 1.0)?;
        let a = ContrastMap::from_vec(grid, complex_input(a_re, a_im, len, "a")?)?;
        let b = ContrastMap::from_vec(grid, complex_input(b_re, b_im, len, "b")?)?;
        *out = mse(&a, &b)?;
        Ok(())
    })
}

/// Gaussian-window SSIM of two real `height * width` images.
///
/// # Safety
/// Buffers must be valid for `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn iscat_ssim(
    a: *const f64,
    b: *const f64,
    height: usize,
    width: usize,
    dynamic_range: f64,
    out: *mut f64,
) -> IscatStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = height * width;
        let to_array = |s: &[f64]| {
            Array2::from_shape_vec((height, width), s.to_vec()).map_err(|e| Failure(IscatStatus::ShapeMismatch, e.to_string()))
        };
        let a = to_array(input(a, n, "a")?)?;
        let b = to_array(input(b, n, "b")?)?;
        *out = ssim(&a, &b, dynamic_range)?;
        Ok(())
    })
}

/// Loss value and its gradient with respect to the real and imaginary parts
/// of `chi_hat`. A negative `beta` uses the single-sample batch value.
///
/// # Safety
/// Pixel buffers hold `ny * nx` values and field buffers `n_tx * ny * nx`.
#[no_mangle]
pub unsafe extern "C" fn iscat_loss(
    scene: *const IscatScene,
    kind: IscatLossKind,
    chi_hat_re: *const f64,
    chi_hat_im: *const f64,
    sample: *const IscatSampleView,
    beta: f64,
    value: *mut f64,
    grad_re: *mut f64,
    grad_im: *mut f64,
) -> IscatStatus {
    guard(|| {
        let s = scene_ref(scene)?;
        let v = sample.as_ref().ok_or_else(|| null("sample"))?;
        if value.is_null() {
            return Err(null("value"));
        }
        let grid = s.scene.grid;
        let n = grid.len();
        let n_tx = s.scene.n_tx();
        let chi_hat = ContrastMap::from_vec(grid, complex_input(chi_hat_re, chi_hat_im, n, "chi_hat")?)?;
        let chi_true = ContrastMap::from_vec(grid, complex_input(v.chi_true_re, v.chi_true_im, n, "chi_true")?)?;
        let fields = |re, im, role, name| -> Result<FieldSet, Failure> {
            field(role, n_tx, complex_input(re, im, n_tx * n, name)?)
        };
        let sample = TrainingSample {
            chi_bp: chi_true.clone(),
            chi_true,
            j_true: fields(v.current_re, v.current_im, FieldRole::Current, "current")?,
            etot_true: fields(v.total_re, v.total_im, FieldRole::TotalDoi, "total")?,
            esca_doi: fields(v.scattered_re, v.scattered_im, FieldRole::ScatteredDoi, "scattered")?,
            scene_ref: String::new(),
        };
        let kind = match kind {
            IscatLossKind::Contrast => LossKind::Contrast,
            IscatLossKind::Current => LossKind::Current,
            IscatLossKind::Field => LossKind::Field,
        };
        let beta = if beta < 0.0 { batch_beta(kind, &[&sample])? } else { beta };
        let eval = evaluate(kind, &chi_hat, &sample, &s.ops, beta)?;
        let gr = output(grad_re, n, "grad_re")?;
        let gi = output(grad_im, n, "grad_im")?;
        gr.copy_from_slice(eval.grad_re.as_slice().ok_or_else(|| Failure(IscatStatus::Numeric, "gradient layout".into()))?);
        gi.copy_from_slice(eval.grad_im.as_slice().ok_or_else(|| Failure(IscatStatus::Numeric, "gradient layout".into()))?);
        *value = eval.value;
        Ok(())
    })
}
