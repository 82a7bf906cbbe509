//! C interface to the plate library.
//!
//! Every function returns a [`VkStatus`]. On failure the message is kept per thread and
//! can be read with [`vk_last_error_message`]. Forms and states are opaque handles written
//! through an `out_*` pointer and released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use nalgebra::Matrix3;

use vkplate::energy::{dissipation_d0, energy_phi0, LoadField};
use vkplate::field::{BoundaryData, GridSpec, PlateState};
use vkplate::flow::{mm_run, mm_step, FlowOptions, ToySpace};
use vkplate::io;
use vkplate::plate_space::PlateSpace;
use vkplate::presets::{ScalarExpr, VectorExpr};
use vkplate::slope::local_slope;
use vkplate::tensor::ReducedForms;
use vkplate::VkError;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    Numeric = 5,
    AssumptionViolation = 6,
    Singular = 7,
    Precondition = 8,
    GridMismatch = 9,
    LengthMismatch = 10,
    StepFailure = 11,
    SolverFailure = 12,
    DegenerateDirection = 13,
    UnsupportedWithLoad = 14,
    ThicknessTooLarge = 15,
    DegeneratePolar = 16,
    Io = 17,
    Panic = 18,
}

impl From<&VkError> for VkStatus {
    fn from(e: &VkError) -> Self {
        match e {
            VkError::Config { .. } => VkStatus::Config,
            VkError::Parse { .. } => VkStatus::Parse,
            VkError::Numeric(_) => VkStatus::Numeric,
            VkError::AssumptionViolation { .. } => VkStatus::AssumptionViolation,
            VkError::Singular { .. } => VkStatus::Singular,
            VkError::Precondition(_) => VkStatus::Precondition,
            VkError::GridMismatch(_) => VkStatus::GridMismatch,
            VkError::LengthMismatch { .. } => VkStatus::LengthMismatch,
            VkError::StepFailure { .. } => VkStatus::StepFailure,
            VkError::SolverFailure { .. } => VkStatus::SolverFailure,
            VkError::DegenerateDirection => VkStatus::DegenerateDirection,
            VkError::UnsupportedWithLoad => VkStatus::UnsupportedWithLoad,
            VkError::ThicknessTooLarge { .. } => VkStatus::ThicknessTooLarge,
            VkError::DegeneratePolar { .. } => VkStatus::DegeneratePolar,
            VkError::Io(_) => VkStatus::Io,
        }
    }
}

/// Reduced membrane and dissipation tensors.
pub struct VkForms(ReducedForms);

/// A discrete plate state together with its grid and boundary data.
pub struct VkState(PlateState);

/// Energy split into its parts.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VkEnergy {
    pub membrane: f64,
    pub bending: f64,
    pub load: f64,
    pub total: f64,
}

/// Local slope and the work done by the linear solver.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VkSlope {
    pub slope: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(VkStatus, String);

impl From<VkError> for Fail {
    fn from(e: VkError) -> Self {
        Fail(VkStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(VkStatus::InvalidArgument, msg.into())
}

/// Runs `f`, mapping errors and panics to a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VkStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VkStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            VkStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(VkStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(VkStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(VkStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(VkStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(slot: &mut *mut T, v: T) {
    *slot = Box::into_raw(Box::new(v));
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn vk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Catalog forms: membrane tensor `2 mu I`, dissipation tensor `4 gamma^2 I`.
///
/// # Safety
/// `out_forms` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn vk_forms_catalog(mu: f64, gamma: f64, out_forms: *mut *mut VkForms) -> VkStatus {
    guard(|| {
        let slot = out(out_forms, "out_forms")?;
        boxed(slot, VkForms(ReducedForms::catalog(mu, gamma)?));
        Ok(())
    })
}

/// Forms from two symmetric positive definite 3x3 tensors in Voigt coordinates, row-major.
///
/// # Safety
/// `cw2` and `cd2` must point to 9 doubles each.
#[no_mangle]
pub unsafe extern "C" fn vk_forms_from_tensors(cw2: *const f64, cd2: *const f64, out_forms: *mut *mut VkForms) -> VkStatus {
    guard(|| {
        let slot = out(out_forms, "out_forms")?;
        let a = Matrix3::from_row_slice(slice(cw2, 9, "cw2")?);
        let b = Matrix3::from_row_slice(slice(cd2, 9, "cd2")?);
        boxed(slot, VkForms(ReducedForms::from_tensors(a, b)?));
        Ok(())
    })
}

/// # Safety
/// `forms` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vk_forms_free(forms: *mut VkForms) {
    if !forms.is_null() {
        drop(Box::from_raw(forms));
    }
}

/// State on an `l1 x l2` rectangle with `n1 x n2` nodes. Boundary data and the initial
/// fields are preset expressions such as `pure_bend(1)` or `bump(0.3)+sine(0.1)`.
/// `u_hat`/`v_hat` give the clamped boundary values; `u`/`v` the interior fields.
///
/// # Safety
/// String arguments must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn vk_state_from_presets(
    l1: f64,
    l2: f64,
    n1: usize,
    n2: usize,
    u_hat: *const c_char,
    v_hat: *const c_char,
    u: *const c_char,
    v: *const c_char,
    out_state: *mut *mut VkState,
) -> VkStatus {
    guard(|| {
        let slot = out(out_state, "out_state")?;
        let grid = GridSpec::new(l1, l2, n1, n2)?;
        let uh = VectorExpr::parse(text(u_hat, "u_hat")?)?;
        let vh = ScalarExpr::parse(text(v_hat, "v_hat")?)?;
        let u = VectorExpr::parse(text(u, "u")?)?;
        let v = ScalarExpr::parse(text(v, "v")?)?;
        let bc = Arc::new(BoundaryData::from_presets(&grid, &uh, &vh, None)?);
        boxed(slot, VkState(PlateState::from_presets(grid, bc, &u, &v)?));
        Ok(())
    })
}

/// Reads a snapshot written by `vk run` or [`vk_state_write`].
///
/// # Safety
/// `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn vk_state_read(path: *const c_char, out_state: *mut *mut VkState) -> VkStatus {
    guard(|| {
        let slot = out(out_state, "out_state")?;
        let s = io::read_snapshot(Path::new(text(path, "path")?))?;
        boxed(slot, VkState(s));
        Ok(())
    })
}

/// # Safety
/// `state` must be a live handle and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn vk_state_write(state: *const VkState, path: *const c_char) -> VkStatus {
    guard(|| {
        let s = deref(state, "state")?;
        io::write_snapshot(Path::new(text(path, "path")?), &s.0)?;
        Ok(())
    })
}

/// Number of free unknowns: both in-plane displacements and the deflection at interior
/// nodes, plus the boundary-normal ghost values of the deflection.
///
/// # Safety
/// `state` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vk_state_n_dofs(state: *const VkState, out_n: *mut usize) -> VkStatus {
    guard(|| {
        *out(out_n, "out_n")? = deref(state, "state")?.0.grid.n_dofs();
        Ok(())
    })
}

/// Copies the unknowns into `buf`, which must hold exactly `len == n_dofs` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_state_get_dofs(state: *const VkState, buf: *mut f64, len: usize) -> VkStatus {
    guard(|| {
        let d = deref(state, "state")?.0.dofs();
        if len != d.len() {
            return Err(VkError::LengthMismatch { expected: d.len(), got: len }.into());
        }
        out(buf, "buf")?;
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&d);
        Ok(())
    })
}

/// New state sharing the grid and boundary data of `state` with the given unknowns.
///
/// # Safety
/// `dofs` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_state_with_dofs(
    state: *const VkState,
    dofs: *const f64,
    len: usize,
    out_state: *mut *mut VkState,
) -> VkStatus {
    guard(|| {
        let slot = out(out_state, "out_state")?;
        let s = deref(state, "state")?.0.with_dofs(slice(dofs, len, "dofs")?)?;
        boxed(slot, VkState(s));
        Ok(())
    })
}

/// # Safety
/// `state` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vk_state_free(state: *mut VkState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

unsafe fn load_for(s: &PlateState, f: *const f64, len: usize) -> Result<LoadField, Fail> {
    if f.is_null() {
        return Ok(LoadField::zero(&s.grid));
    }
    Ok(LoadField::from_values(&s.grid, slice(f, len, "load")?.to_vec())?)
}

/// Plate energy. `load` holds one value per grid cell (row-major, `len` entries) or is
/// null for no transverse load.
///
/// # Safety
/// Handles must be live; `load` must be null or point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vk_energy(
    state: *const VkState,
    forms: *const VkForms,
    load: *const f64,
    len: usize,
    out_energy: *mut VkEnergy,
) -> VkStatus {
    guard(|| {
        let s = &deref(state, "state")?.0;
        let f = &deref(forms, "forms")?.0;
        let slot = out(out_energy, "out_energy")?;
        let e = energy_phi0(s, f, &load_for(s, load, len)?)?;
        *slot = VkEnergy {
            membrane: e.membrane,
            bending: e.bending,
            load: e.load,
            total: e.total,
        };
        Ok(())
    })
}

/// Dissipation distance between two states on the same grid.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn vk_dissipation(
    a: *const VkState,
    b: *const VkState,
    forms: *const VkForms,
    out_distance: *mut f64,
) -> VkStatus {
    guard(|| {
        let d = dissipation_d0(&deref(a, "a")?.0, &deref(b, "b")?.0, &deref(forms, "forms")?.0)?;
        *out(out_distance, "out_distance")? = d;
        Ok(())
    })
}

/// Local slope of the unloaded energy.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn vk_slope(state: *const VkState, forms: *const VkForms, out_slope: *mut VkSlope) -> VkStatus {
    guard(|| {
        let s = &deref(state, "state")?.0;
        let r = local_slope(s, &deref(forms, "forms")?.0, &LoadField::zero(&s.grid))?;
        *out(out_slope, "out_slope")? = VkSlope {
            slope: r.slope,
            cg_iterations: r.cg.iterations,
            cg_residual: r.cg.final_residual(),
        };
        Ok(())
    })
}

/// One unloaded minimizing-movement step of size `tau` from `state`.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn vk_step(
    state: *const VkState,
    forms: *const VkForms,
    tau: f64,
    out_state: *mut *mut VkState,
) -> VkStatus {
    guard(|| {
        let slot = out(out_state, "out_state")?;
        let s = &deref(state, "state")?.0;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {tau}")));
        }
        let space = PlateSpace::new(deref(forms, "forms")?.0, LoadField::zero(&s.grid));
        let (next, _) = mm_step(&space, tau, s, &FlowOptions::default())?;
        boxed(slot, VkState(next));
        Ok(())
    })
}

/// Minimizing movements for `x^2/2` on the real line, started at `x0`. Writes the final
/// iterate.
///
/// # Safety
/// `out_x` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vk_toy_run(x0: f64, tau: f64, t_end: f64, out_x: *mut f64) -> VkStatus {
    guard(|| {
        let slot = out(out_x, "out_x")?;
        let traj = mm_run(&ToySpace, tau, t_end, x0, &FlowOptions::default())?;
        if let Some(e) = traj.failure {
            return Err(e.into());
        }
        *slot = *traj.states.last().expect("nonempty");
        Ok(())
    })
}
