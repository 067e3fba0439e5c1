//! C ABI over the `flagwave` operators.
//!
//! Objects cross the boundary as opaque handles created by `fw_*_new` style
//! functions and released by the matching `fw_*_free`. Every fallible call
//! returns an [`FwStatus`]; on failure a description is available from
//! [`fw_last_error`] on the same thread until the next failing call.
//! Outputs are written through pointer arguments and only on success.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use flagwave::atomic::{
    decompose, reconstruct, write_decomposition, AtomicConfig, AtomicDecomposition,
};
use flagwave::kernels::{
    build_heat_pair, build_heatlp_pair, build_indicator_pair, build_lp_pair, build_poisson_pair,
};
use flagwave::maximal::{nontangential_max, radial_max, strong_max};
use flagwave::riesz::apply_riesz;
use flagwave::square::{g_F, s_heat, S_F_u, S_F};
use flagwave::{Calibration, FlagError, GridFunction, KernelPair, LatticeSpec, ScaleGrid};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidLattice = 3,
    InvalidScaleGrid = 4,
    ShapeMismatch = 5,
    LatticeMismatch = 6,
    Io = 7,
    Numerical = 8,
    Panic = 9,
}

/// Kernel pair kinds accepted by [`fw_kernel_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwKernelKind {
    LittlewoodPaley = 0,
    Poisson = 1,
    Heat = 2,
    HeatLp = 3,
    Indicator = 4,
}

/// Area and maximal functions computed by [`fw_operator`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwOperator {
    GFunction = 0,
    AreaFunction = 1,
    PoissonAreaFunction = 2,
    HeatAreaFunction = 3,
    RadialMax = 4,
    NontangentialMax = 5,
    StrongMax = 6,
}

pub struct FwLattice(LatticeSpec);
pub struct FwGrid(GridFunction);
pub struct FwScaleGrid(ScaleGrid);
pub struct FwKernel(KernelPair);
pub struct FwDecomposition(AtomicDecomposition);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &FlagError) -> FwStatus {
    match e {
        FlagError::InvalidLattice(_) => FwStatus::InvalidLattice,
        FlagError::InvalidScaleGrid(_) => FwStatus::InvalidScaleGrid,
        FlagError::ShapeMismatch { .. } => FwStatus::ShapeMismatch,
        FlagError::LatticeMismatch => FwStatus::LatticeMismatch,
        FlagError::Io(_) | FlagError::Json(_) | FlagError::Format(_) => FwStatus::Io,
        FlagError::NonFinite(_) | FlagError::InsufficientTMax(_) => FwStatus::Numerical,
        _ => FwStatus::InvalidArgument,
    }
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), (FwStatus, String)>) -> FwStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FwStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FwStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (FwStatus, String)>;
}

impl<T> OrStatus<T> for flagwave::Result<T> {
    fn or_status(self) -> Result<T, (FwStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, (FwStatus, String)> {
    ptr.as_ref()
        .ok_or_else(|| (FwStatus::NullPointer, format!("{what} is null")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), (FwStatus, String)> {
    if out.is_null() {
        return Err((FwStatus::NullPointer, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_scalar<T>(out: *mut T, value: T) -> Result<(), (FwStatus, String)> {
    if out.is_null() {
        return Err((FwStatus::NullPointer, "output pointer is null".into()));
    }
    *out = value;
    Ok(())
}

unsafe fn free<T>(ptr: *mut T) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr));
    }
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn fw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn fw_lattice_new(
    n: usize,
    m: usize,
    points_per_axis: usize,
    period: f64,
    out: *mut *mut FwLattice,
) -> FwStatus {
    guard(|| {
        store(
            out,
            FwLattice(LatticeSpec::new(n, m, points_per_axis, period).or_status()?),
        )
    })
}

/// Number of samples `N^(n+m)` of the lattice.
#[no_mangle]
pub unsafe extern "C" fn fw_lattice_len(lattice: *const FwLattice, out: *mut usize) -> FwStatus {
    guard(|| write_scalar(out, deref(lattice, "lattice")?.0.len()))
}

#[no_mangle]
pub unsafe extern "C" fn fw_lattice_free(lattice: *mut FwLattice) {
    free(lattice)
}

/// Copies `len` row-major samples into a new grid function.
#[no_mangle]
pub unsafe extern "C" fn fw_grid_new(
    lattice: *const FwLattice,
    values: *const f64,
    len: usize,
    out: *mut *mut FwGrid,
) -> FwStatus {
    guard(|| {
        let lattice = deref(lattice, "lattice")?.0;
        if values.is_null() {
            return Err((FwStatus::NullPointer, "values is null".into()));
        }
        let data = std::slice::from_raw_parts(values, len).to_vec();
        store(out, FwGrid(GridFunction::new(lattice, data).or_status()?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fw_grid_len(grid: *const FwGrid, out: *mut usize) -> FwStatus {
    guard(|| write_scalar(out, deref(grid, "grid")?.0.values().len()))
}

/// Copies the samples into `values`, which must hold exactly `len` entries.
#[no_mangle]
pub unsafe extern "C" fn fw_grid_values(
    grid: *const FwGrid,
    values: *mut f64,
    len: usize,
) -> FwStatus {
    guard(|| {
        let src = deref(grid, "grid")?.0.values();
        if values.is_null() {
            return Err((FwStatus::NullPointer, "values is null".into()));
        }
        if len != src.len() {
            return Err((
                FwStatus::ShapeMismatch,
                format!("buffer holds {len} samples, grid has {}", src.len()),
            ));
        }
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(src);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fw_grid_free(grid: *mut FwGrid) {
    free(grid)
}

#[no_mangle]
pub unsafe extern "C" fn fw_scale_grid_new(
    lattice: *const FwLattice,
    j_min: i32,
    j_max: i32,
    k_min: i32,
    k_max: i32,
    samples_per_block: u32,
    out: *mut *mut FwScaleGrid,
) -> FwStatus {
    guard(|| {
        let lattice = &deref(lattice, "lattice")?.0;
        let grid =
            ScaleGrid::new(lattice, j_min, j_max, k_min, k_max, samples_per_block).or_status()?;
        store(out, FwScaleGrid(grid))
    })
}

/// Writes 1 when every nonzero lattice frequency is covered, 0 otherwise.
#[no_mangle]
pub unsafe extern "C" fn fw_scale_grid_full_coverage(
    grid: *const FwScaleGrid,
    out: *mut i32,
) -> FwStatus {
    guard(|| write_scalar(out, i32::from(deref(grid, "scale grid")?.0.full_coverage())))
}

#[no_mangle]
pub unsafe extern "C" fn fw_scale_grid_free(grid: *mut FwScaleGrid) {
    free(grid)
}

/// Kernel pair of `kind`. `renormalized` selects the discretely renormalized
/// calibration, which exists only for the Littlewood-Paley pair and needs
/// `scale_grid`; otherwise `scale_grid` may be null.
#[no_mangle]
pub unsafe extern "C" fn fw_kernel_new(
    lattice: *const FwLattice,
    kind: FwKernelKind,
    renormalized: i32,
    scale_grid: *const FwScaleGrid,
    out: *mut *mut FwKernel,
) -> FwStatus {
    guard(|| {
        let lattice = &deref(lattice, "lattice")?.0;
        let grid = scale_grid.as_ref().map(|g| &g.0);
        let pair = match (kind, renormalized != 0) {
            (FwKernelKind::LittlewoodPaley, true) => {
                build_lp_pair(lattice, Calibration::DiscretelyRenormalized, grid).or_status()?
            }
            (FwKernelKind::LittlewoodPaley, false) => {
                build_lp_pair(lattice, Calibration::Analytic, None).or_status()?
            }
            (_, true) => {
                return Err((
                    FwStatus::InvalidArgument,
                    "only the Littlewood-Paley pair can be renormalized".into(),
                ))
            }
            (FwKernelKind::Poisson, false) => build_poisson_pair(lattice),
            (FwKernelKind::Heat, false) => build_heat_pair(lattice),
            (FwKernelKind::HeatLp, false) => build_heatlp_pair(lattice),
            (FwKernelKind::Indicator, false) => build_indicator_pair(lattice),
        };
        store(out, FwKernel(pair))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fw_kernel_free(kernel: *mut FwKernel) {
    free(kernel)
}

/// `psi_{t,s} * f`.
#[no_mangle]
pub unsafe extern "C" fn fw_flag_convolve(
    f: *const FwGrid,
    kernel: *const FwKernel,
    t: f64,
    s: f64,
    out: *mut *mut FwGrid,
) -> FwStatus {
    guard(|| {
        let g =
            flagwave::flagconv::flag_convolve(&deref(f, "f")?.0, &deref(kernel, "kernel")?.0, t, s)
                .or_status()?;
        store(out, FwGrid(g))
    })
}

/// One of the area or maximal functions. `kernel` is used by the
/// g-function, the area function and the radial and non-tangential maximal
/// functions and may be null for the others; `scale_grid` may be null only
/// for the strong maximal function.
#[no_mangle]
pub unsafe extern "C" fn fw_operator(
    op: FwOperator,
    f: *const FwGrid,
    kernel: *const FwKernel,
    scale_grid: *const FwScaleGrid,
    out: *mut *mut FwGrid,
) -> FwStatus {
    guard(|| {
        let f = &deref(f, "f")?.0;
        if op == FwOperator::StrongMax {
            return store(out, FwGrid(strong_max(f).value));
        }
        let grid = &deref(scale_grid, "scale grid")?.0;
        let value = match op {
            FwOperator::PoissonAreaFunction => S_F_u(f, grid).or_status()?.value,
            FwOperator::HeatAreaFunction => s_heat(f, grid).or_status()?.value,
            _ => {
                let pair = &deref(kernel, "kernel")?.0;
                match op {
                    FwOperator::GFunction => g_F(f, pair, grid).or_status()?.value,
                    FwOperator::AreaFunction => S_F(f, pair, grid).or_status()?.value,
                    FwOperator::RadialMax => radial_max(f, pair, grid).value,
                    FwOperator::NontangentialMax => nontangential_max(f, pair, grid).value,
                    _ => unreachable!("handled above"),
                }
            }
        };
        store(out, FwGrid(value))
    })
}

/// Riesz transform `R_{j,k} f` with 1-based indices `j <= n + m`, `k <= m`.
#[no_mangle]
pub unsafe extern "C" fn fw_riesz(
    f: *const FwGrid,
    j: usize,
    k: usize,
    out: *mut *mut FwGrid,
) -> FwStatus {
    guard(|| {
        store(
            out,
            FwGrid(apply_riesz(&deref(f, "f")?.0, j, k).or_status()?),
        )
    })
}

/// Atomic decomposition of `f` with Laplacian power `m_power` and the
/// default level span, dilation and tolerances.
#[no_mangle]
pub unsafe extern "C" fn fw_decompose(
    f: *const FwGrid,
    scale_grid: *const FwScaleGrid,
    m_power: u32,
    out: *mut *mut FwDecomposition,
) -> FwStatus {
    guard(|| {
        let f = &deref(f, "f")?.0;
        let mut config = AtomicConfig::new(deref(scale_grid, "scale grid")?.0.clone());
        config.m_power = m_power;
        store(out, FwDecomposition(decompose(f, &config).or_status()?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fw_decomposition_level_count(
    dec: *const FwDecomposition,
    out: *mut usize,
) -> FwStatus {
    guard(|| write_scalar(out, deref(dec, "decomposition")?.0.levels.len()))
}

#[no_mangle]
pub unsafe extern "C" fn fw_decomposition_reconstruction_error(
    dec: *const FwDecomposition,
    out: *mut f64,
) -> FwStatus {
    guard(|| write_scalar(out, deref(dec, "decomposition")?.0.reconstruction_error))
}

/// Level exponent `l` and coefficient `lambda_l` of the `index`-th level.
#[no_mangle]
pub unsafe extern "C" fn fw_decomposition_level(
    dec: *const FwDecomposition,
    index: usize,
    level: *mut i32,
    lambda: *mut f64,
) -> FwStatus {
    guard(|| {
        let levels = &deref(dec, "decomposition")?.0.levels;
        let l = levels.get(index).ok_or_else(|| {
            (
                FwStatus::InvalidArgument,
                format!("level index {index} out of {}", levels.len()),
            )
        })?;
        write_scalar(level, l.level)?;
        write_scalar(lambda, l.lambda)
    })
}

/// Copy of the atom of the `index`-th level.
#[no_mangle]
pub unsafe extern "C" fn fw_decomposition_atom(
    dec: *const FwDecomposition,
    index: usize,
    out: *mut *mut FwGrid,
) -> FwStatus {
    guard(|| {
        let levels = &deref(dec, "decomposition")?.0.levels;
        let l = levels.get(index).ok_or_else(|| {
            (
                FwStatus::InvalidArgument,
                format!("level index {index} out of {}", levels.len()),
            )
        })?;
        store(out, FwGrid(l.atom.clone()))
    })
}

/// `sum_l lambda_l a_l`.
#[no_mangle]
pub unsafe extern "C" fn fw_decomposition_reconstruct(
    dec: *const FwDecomposition,
    out: *mut *mut FwGrid,
) -> FwStatus {
    guard(|| {
        let dec = &deref(dec, "decomposition")?.0;
        let Some(first) = dec.levels.first() else {
            return Err((
                FwStatus::InvalidArgument,
                "decomposition has no levels".into(),
            ));
        };
        let lattice = *first.atom.lattice();
        store(out, FwGrid(reconstruct(dec, &lattice)))
    })
}

/// Writes the decomposition directory format to `dir` (UTF-8 path).
#[no_mangle]
pub unsafe extern "C" fn fw_decomposition_write(
    dec: *const FwDecomposition,
    dir: *const c_char,
) -> FwStatus {
    guard(|| {
        let dec = &deref(dec, "decomposition")?.0;
        if dir.is_null() {
            return Err((FwStatus::NullPointer, "dir is null".into()));
        }
        let dir = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| (FwStatus::InvalidArgument, "dir is not UTF-8".into()))?;
        write_decomposition(Path::new(dir), dec).or_status()
    })
}

#[no_mangle]
pub unsafe extern "C" fn fw_decomposition_free(dec: *mut FwDecomposition) {
    free(dec)
}
