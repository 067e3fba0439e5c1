//! Periodized sampling of `R^n x R^m`, the discrete Fourier transform contract
//! and `L^p` norms.
//!
//! Samples are stored row-major over `n + m` axes, the `n` first-factor (x) axes
//! first and the `m` second-factor (y) axes last. Axis `a` carries the points
//! `i * L / N` for `i in 0..N`.
//!
//! Transform convention: the forward transform is the unnormalized DFT
//! `F[q] = sum_i f[i] exp(-2 pi i q.i / N)` and the inverse divides by `N^(n+m)`.
//! Hence `cell_volume * sum |f|^2 = (cell_volume / N^(n+m)) * sum |F|^2`.
//! Spectral index `q` along an axis stands for the integer frequency
//! `q` when `q < N/2` and `q - N` otherwise, i.e. the ordering of
//! `[-N/2, N/2)` produced by the usual FFT layout, and the angular frequency
//! `2 pi q / L`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{FlagError, Result};

/// Periodized lattice on the torus `[0, L)^(n+m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n: usize,
    pub m: usize,
    pub points_per_axis: usize,
    pub period: f64,
}

impl LatticeSpec {
    pub fn new(n: usize, m: usize, points_per_axis: usize, period: f64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(FlagError::InvalidLattice(format!(
                "dimensions must be >= 1 (n = {n}, m = {m})"
            )));
        }
        if points_per_axis < 8 || !points_per_axis.is_multiple_of(2) {
            return Err(FlagError::InvalidLattice(format!(
                "points per axis must be even and >= 8, got {points_per_axis}"
            )));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(FlagError::InvalidLattice(format!(
                "period must be positive, got {period}"
            )));
        }
        Ok(Self {
            n,
            m,
            points_per_axis,
            period,
        })
    }

    /// Total number of axes `n + m`.
    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    /// Number of samples `N^(n+m)`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Physical grid spacing `L / N`.
    pub fn spacing(&self) -> f64 {
        self.period / self.points_per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim() as i32)
    }

    /// Measure of the torus, `L^(n+m)`.
    pub fn torus_volume(&self) -> f64 {
        self.period.powi(self.dim() as i32)
    }

    /// Stride of `axis` in the flat row-major layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.dim() - 1 - axis) as u32)
    }

    /// Integer frequency represented by spectral index `q` along one axis.
    pub fn signed_frequency(&self, q: usize) -> i64 {
        let n = self.points_per_axis;
        if q < n / 2 {
            q as i64
        } else {
            q as i64 - n as i64
        }
    }

    /// Angular frequency `2 pi q / L` of spectral index `q`.
    pub fn angular_frequency(&self, q: usize) -> f64 {
        2.0 * PI * self.signed_frequency(q) as f64 / self.period
    }

    /// Multi-index of flat position `idx`, axis 0 first.
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let d = self.dim();
        let n = self.points_per_axis;
        let mut out = vec![0; d];
        for a in (0..d).rev() {
            out[a] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let n = self.points_per_axis;
        multi.iter().fold(0, |acc, &i| acc * n + i)
    }

    /// Flat index of the mode `-q` for every mode `q`.
    pub fn negated_indices(&self) -> Vec<usize> {
        let n = self.points_per_axis;
        (0..self.len())
            .map(|i| {
                let multi: Vec<usize> = self
                    .multi_index(i)
                    .into_iter()
                    .map(|q| (n - q) % n)
                    .collect();
                self.flat_index(&multi)
            })
            .collect()
    }

    /// Physical coordinate of sample `i` along an axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn spectral_geometry(&self) -> SpectralGeometry {
        SpectralGeometry::new(self)
    }
}

/// Per-mode frequency data: the full radius `|(xi, eta)|`, the second-factor
/// radius `|eta|`, and every angular frequency component.
#[derive(Debug, Clone)]
pub struct SpectralGeometry {
    pub dim: usize,
    pub n: usize,
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
    components: Vec<f64>,
}

impl SpectralGeometry {
    fn new(lattice: &LatticeSpec) -> Self {
        let len = lattice.len();
        let d = lattice.dim();
        let per_axis: Vec<f64> = (0..lattice.points_per_axis)
            .map(|q| lattice.angular_frequency(q))
            .collect();
        let mut r = Vec::with_capacity(len);
        let mut rho = Vec::with_capacity(len);
        let mut components = Vec::with_capacity(len * d);
        let mut multi = vec![0usize; d];
        for _ in 0..len {
            let mut r2 = 0.0;
            let mut rho2 = 0.0;
            for (a, &q) in multi.iter().enumerate() {
                let w = per_axis[q];
                components.push(w);
                r2 += w * w;
                if a >= lattice.n {
                    rho2 += w * w;
                }
            }
            r.push(r2.sqrt());
            rho.push(rho2.sqrt());
            for a in (0..d).rev() {
                multi[a] += 1;
                if multi[a] < lattice.points_per_axis {
                    break;
                }
                multi[a] = 0;
            }
        }
        Self {
            dim: d,
            n: lattice.n,
            r,
            rho,
            components,
        }
    }

    /// Angular frequency of mode `idx` along `axis`.
    #[inline]
    pub fn component(&self, idx: usize, axis: usize) -> f64 {
        self.components[idx * self.dim + axis]
    }

    /// Smallest nonzero full radius on the lattice.
    pub fn min_nonzero_radius(&self) -> f64 {
        self.r
            .iter()
            .copied()
            .filter(|&r| r > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_radius(&self) -> f64 {
        self.r.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_nonzero_rho(&self) -> f64 {
        self.rho
            .iter()
            .copied()
            .filter(|&r| r > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_rho(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }
}

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(n: usize) -> Plans {
    static CACHE: OnceLock<Mutex<HashMap<usize, Plans>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

const LINE_BATCH: usize = 16;

/// In-place unnormalized multi-dimensional transform along every axis.
fn transform_nd(data: &mut [Complex64], lattice: &LatticeSpec, inverse: bool) {
    let n = lattice.points_per_axis;
    let d = lattice.dim();
    let (fwd, inv) = plans(n);
    let fft = if inverse { inv } else { fwd };
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // Last axis is contiguous.
    fft.process_with_scratch(data, &mut scratch);
    let len = data.len();
    let mut buf = vec![Complex64::default(); n * LINE_BATCH];
    for axis in 0..d.saturating_sub(1) {
        let stride = lattice.stride(axis);
        let block = n * stride;
        for outer in (0..len).step_by(block) {
            let mut inner = 0;
            while inner < stride {
                let batch = LINE_BATCH.min(stride - inner);
                for b in 0..batch {
                    let base = outer + inner + b;
                    for i in 0..n {
                        buf[b * n + i] = data[base + i * stride];
                    }
                }
                fft.process_with_scratch(&mut buf[..batch * n], &mut scratch);
                for b in 0..batch {
                    let base = outer + inner + b;
                    for i in 0..n {
                        data[base + i * stride] = buf[b * n + i];
                    }
                }
                inner += batch;
            }
        }
    }
}

/// Real samples of a function on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    lattice: LatticeSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(lattice: LatticeSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(FlagError::ShapeMismatch {
                expected: lattice.len(),
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FlagError::NonFinite(i));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: LatticeSpec) -> Self {
        Self {
            values: vec![0.0; lattice.len()],
            lattice,
        }
    }

    pub fn constant(lattice: LatticeSpec, c: f64) -> Self {
        Self {
            values: vec![c; lattice.len()],
            lattice,
        }
    }

    /// Samples `g` at every lattice point; `g` receives physical coordinates.
    pub fn from_fn(lattice: LatticeSpec, g: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut coords = vec![0.0; lattice.dim()];
        let values = (0..lattice.len())
            .map(|idx| {
                for (c, i) in coords.iter_mut().zip(lattice.multi_index(idx)) {
                    *c = lattice.coordinate(i);
                }
                g(&coords)
            })
            .collect();
        Self::new(lattice, values)
    }

    pub(crate) fn from_parts_unchecked(lattice: LatticeSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), lattice.len());
        Self { lattice, values }
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, g: impl Fn(f64) -> f64) -> Self {
        Self {
            lattice: self.lattice,
            values: self.values.iter().map(|&v| g(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(FlagError::LatticeMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            lattice: self.lattice,
            values,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            lattice: self.lattice,
            values,
        })
    }

    /// `L^2` inner product `cell_volume * sum f g`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(s * self.lattice.cell_volume())
    }

    /// Integer-cell translation: `out[i] = f[i - offset]` with periodic wrap.
    pub fn shifted(&self, offsets: &[isize]) -> Self {
        let lat = self.lattice;
        let n = lat.points_per_axis as isize;
        let mut out = vec![0.0; self.values.len()];
        for (idx, &v) in self.values.iter().enumerate() {
            let multi = lat.multi_index(idx);
            let target: Vec<usize> = multi
                .iter()
                .enumerate()
                .map(|(a, &i)| {
                    let o = offsets.get(a).copied().unwrap_or(0);
                    (i as isize + o).rem_euclid(n) as usize
                })
                .collect();
            out[lat.flat_index(&target)] = v;
        }
        Self {
            lattice: lat,
            values: out,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_spectral(&self) -> SpectralField {
        to_spectral(self)
    }
}

/// Complex Fourier coefficients in the FFT layout of the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    lattice: LatticeSpec,
    coefficients: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(lattice: LatticeSpec, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != lattice.len() {
            return Err(FlagError::ShapeMismatch {
                expected: lattice.len(),
                actual: coefficients.len(),
            });
        }
        Ok(Self {
            lattice,
            coefficients,
        })
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    /// Pointwise product with a per-mode multiplier.
    pub fn multiplied(&self, symbol: impl Fn(usize) -> Complex64) -> Self {
        let coefficients = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(i, &c)| c * symbol(i))
            .collect();
        Self {
            lattice: self.lattice,
            coefficients,
        }
    }

    /// Pointwise product with a real per-mode multiplier.
    pub fn multiplied_real(&self, symbol: impl Fn(usize) -> f64) -> Self {
        let coefficients = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(i, &c)| c * symbol(i))
            .collect();
        Self {
            lattice: self.lattice,
            coefficients,
        }
    }

    /// Inverse transform keeping the complex samples.
    pub fn to_physical_complex(&self) -> Vec<Complex64> {
        let mut data = self.coefficients.clone();
        transform_nd(&mut data, &self.lattice, true);
        let scale = 1.0 / self.lattice.len() as f64;
        for v in &mut data {
            *v *= scale;
        }
        data
    }

    /// Inverse transform, keeping the real part.
    pub fn to_physical(&self) -> GridFunction {
        to_physical(self)
    }

    /// Filters by a real multiplier and returns the real part of the result.
    pub fn filter_real(&self, symbol: impl Fn(usize) -> f64) -> GridFunction {
        self.multiplied_real(symbol).to_physical()
    }

    /// `(cell_volume / N^(n+m)) * sum |F|^2`, the squared `L^2` norm of the
    /// physical function.
    pub fn energy(&self) -> f64 {
        let s: f64 = self.coefficients.iter().map(|c| c.norm_sqr()).sum();
        s * self.lattice.cell_volume() / self.lattice.len() as f64
    }
}

pub fn to_spectral(f: &GridFunction) -> SpectralField {
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_nd(&mut data, &f.lattice, false);
    SpectralField {
        lattice: f.lattice,
        coefficients: data,
    }
}

/// Spectra of two real sample arrays from one complex transform of `a + i b`.
/// `neg` is [`LatticeSpec::negated_indices`].
pub fn spectra_of_pair(
    lattice: &LatticeSpec,
    a: &[f64],
    b: &[f64],
    neg: &[usize],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut data: Vec<Complex64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| Complex64::new(x, y))
        .collect();
    transform_nd(&mut data, lattice, false);
    let half_i = Complex64::new(0.0, -0.5);
    let first = (0..data.len())
        .map(|k| (data[k] + data[neg[k]].conj()) * 0.5)
        .collect();
    let second = (0..data.len())
        .map(|k| (data[k] - data[neg[k]].conj()) * half_i)
        .collect();
    (first, second)
}

pub fn to_physical(field: &SpectralField) -> GridFunction {
    let data = field.to_physical_complex();
    GridFunction {
        lattice: field.lattice,
        values: data.iter().map(|c| c.re).collect(),
    }
}

/// Largest imaginary part relative to the largest modulus of a complex field.
pub fn imaginary_residue(samples: &[Complex64]) -> f64 {
    let max_mod = samples.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    if max_mod == 0.0 {
        return 0.0;
    }
    samples.iter().fold(0.0f64, |m, c| m.max(c.im.abs())) / max_mod
}

/// `L^p` norm for `p` in `{1, 2, inf}`.
pub fn lp_norm(f: &GridFunction, p: f64) -> Result<f64> {
    let dv = f.lattice.cell_volume();
    if p == 1.0 {
        Ok(dv * f.values.iter().map(|v| v.abs()).sum::<f64>())
    } else if p == 2.0 {
        Ok((dv * f.values.iter().map(|v| v * v).sum::<f64>()).sqrt())
    } else if p == f64::INFINITY {
        Ok(f.max_abs())
    } else {
        Err(FlagError::UnsupportedExponent(p))
    }
}

pub fn l1_norm(f: &GridFunction) -> f64 {
    f.lattice.cell_volume() * f.values.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn l2_norm(f: &GridFunction) -> f64 {
    (f.lattice.cell_volume() * f.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `||f - g||_2 / ||g||_2`, or the plain distance when `g = 0`.
pub fn relative_l2_error(f: &GridFunction, reference: &GridFunction) -> Result<f64> {
    let diff = l2_norm(&f.sub(reference)?);
    let base = l2_norm(reference);
    Ok(if base > 0.0 { diff / base } else { diff })
}
