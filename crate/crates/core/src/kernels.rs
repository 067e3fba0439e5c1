//! Spectral profiles of the flag kernel families.
//!
//! Every family is a pair of radial profiles: `profile1` is evaluated at
//! `t * |(xi, eta)|` on the full frequency and `profile2` at `s * |eta|` on the
//! second factor, so `psi_{t,s} * f` has symbol `profile1(t r) * profile2(s rho)`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{FlagError, Result};
use crate::flagconv::ScaleGrid;
use crate::lattice::{GridFunction, LatticeSpec, SpectralGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    LittlewoodPaley,
    Poisson,
    /// Gaussian `e^{-t^2 Delta}`; also serves as the unit-mass mollifier pair.
    Heat,
    /// `t^2 Delta e^{-t^2 Delta}`.
    HeatLp,
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    Analytic,
    DiscretelyRenormalized,
}

/// `e^{-1/x}` for `x > 0`, zero otherwise.
fn flat_exp(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for `x <= 0`, 1 for `x >= 1`, `s(x) + s(1 - x) = 1`.
fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = flat_exp(x);
    a / (a + flat_exp(1.0 - x))
}

/// Littlewood-Paley radial profile supported on `[1/2, 2]`.
///
/// `lp_profile(r)^2 = g(log2 r) / ln 2` with `g(u) = s(1 - |u|)`. The integer
/// translates of `g` sum to one, so both the continuous Calderon integral
/// `int m(t r)^2 dt/t` and its one-sample-per-octave midpoint sum equal one.
pub fn lp_profile(r: f64) -> f64 {
    if !(r > 0.5 && r < 2.0) {
        return 0.0;
    }
    let u = r.log2();
    (smooth_step(1.0 - u.abs()) / LN_2).sqrt()
}

/// Largest value of [`lp_profile`], attained at `r = 1`.
pub fn lp_profile_peak() -> f64 {
    (1.0 / LN_2).sqrt()
}

/// Fourier transform of the normalized unit-ball indicator in `R^d` at radius `x`.
pub fn ball_transform(dim: usize, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    match dim {
        1 => x.sin() / x,
        3 => 3.0 * (x.sin() - x * x.cos()) / x.powi(3),
        _ => {
            // (omega_{d-1} / omega_d) * int_{-pi/2}^{pi/2} cos(x sin th) cos^d th dth
            let nodes = 512;
            let h = PI / nodes as f64;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for i in 0..nodes {
                let th = -PI / 2.0 + (i as f64 + 0.5) * h;
                let w = th.cos().powi(dim as i32);
                acc += (x * th.sin()).cos() * w;
                norm += w;
            }
            acc / norm
        }
    }
}

/// A pair of radial profiles realizing one flag kernel family.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    kind: KernelKind,
    calibration: Calibration,
    grid: Option<ScaleGrid>,
    dims: (usize, usize),
}

impl KernelPair {
    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    /// Scale grid the renormalization refers to, if any.
    pub fn grid(&self) -> Option<&ScaleGrid> {
        self.grid.as_ref()
    }

    pub fn description(&self) -> String {
        format!("{:?}/{:?}", self.kind, self.calibration)
    }

    /// First-factor profile `m1(x)`, `x = t |(xi, eta)|`.
    pub fn profile1(&self, x: f64) -> f64 {
        self.profile(x, self.dims.0 + self.dims.1)
    }

    /// Second-factor profile `m2(x)`, `x = s |eta|`.
    pub fn profile2(&self, x: f64) -> f64 {
        self.profile(x, self.dims.1)
    }

    fn profile(&self, x: f64, dim: usize) -> f64 {
        match self.kind {
            KernelKind::LittlewoodPaley => lp_profile(x),
            KernelKind::Poisson => (-x).exp(),
            KernelKind::Heat => (-x * x).exp(),
            KernelKind::HeatLp => x * x * (-x * x).exp(),
            KernelKind::Indicator => ball_transform(dim, x),
        }
    }

    /// `(sum_samples w m1(t r)^2)^{-1/2}` for renormalized pairs, 1 otherwise.
    pub fn renormalization1(&self, r: f64) -> f64 {
        self.renormalization(r, true)
    }

    pub fn renormalization2(&self, rho: f64) -> f64 {
        self.renormalization(rho, false)
    }

    fn renormalization(&self, radius: f64, first: bool) -> f64 {
        match (&self.grid, self.calibration) {
            (Some(grid), Calibration::DiscretelyRenormalized) => {
                let scales = if first {
                    grid.t_scales()
                } else {
                    grid.s_scales()
                };
                let w = grid.weight();
                let sum: f64 = scales
                    .iter()
                    .map(|&t| {
                        let v = if first {
                            self.profile1(t * radius)
                        } else {
                            self.profile2(t * radius)
                        };
                        w * v * v
                    })
                    .sum();
                if sum > 0.0 {
                    1.0 / sum.sqrt()
                } else {
                    0.0
                }
            }
            _ => 1.0,
        }
    }

    /// Per-mode first-factor renormalization table for a lattice.
    pub fn renormalization_table1(&self, geom: &SpectralGeometry) -> Option<Vec<f64>> {
        self.table(geom, true)
    }

    pub fn renormalization_table2(&self, geom: &SpectralGeometry) -> Option<Vec<f64>> {
        self.table(geom, false)
    }

    fn table(&self, geom: &SpectralGeometry, first: bool) -> Option<Vec<f64>> {
        if self.calibration != Calibration::DiscretelyRenormalized || self.grid.is_none() {
            return None;
        }
        let radii = if first { &geom.r } else { &geom.rho };
        // Radii repeat heavily; memoize on the bit pattern.
        let mut cache = std::collections::HashMap::new();
        Some(
            radii
                .iter()
                .map(|&r| {
                    *cache
                        .entry(r.to_bits())
                        .or_insert_with(|| self.renormalization(r, first))
                })
                .collect(),
        )
    }
}

/// Littlewood-Paley pair. `DiscretelyRenormalized` requires the scale grid the
/// per-frequency rescaling refers to.
pub fn build_lp_pair(
    lattice: &LatticeSpec,
    calibration: Calibration,
    grid: Option<&ScaleGrid>,
) -> Result<KernelPair> {
    if calibration == Calibration::DiscretelyRenormalized && grid.is_none() {
        return Err(FlagError::KernelMismatch(
            "discretely renormalized calibration needs a scale grid".into(),
        ));
    }
    Ok(KernelPair {
        kind: KernelKind::LittlewoodPaley,
        calibration,
        grid: grid.cloned(),
        dims: (lattice.n, lattice.m),
    })
}

fn analytic(kind: KernelKind, lattice: &LatticeSpec) -> KernelPair {
    KernelPair {
        kind,
        calibration: Calibration::Analytic,
        grid: None,
        dims: (lattice.n, lattice.m),
    }
}

pub fn build_poisson_pair(lattice: &LatticeSpec) -> KernelPair {
    analytic(KernelKind::Poisson, lattice)
}

pub fn build_heat_pair(lattice: &LatticeSpec) -> KernelPair {
    analytic(KernelKind::Heat, lattice)
}

pub fn build_heatlp_pair(lattice: &LatticeSpec) -> KernelPair {
    analytic(KernelKind::HeatLp, lattice)
}

pub fn build_indicator_pair(lattice: &LatticeSpec) -> KernelPair {
    analytic(KernelKind::Indicator, lattice)
}

/// Physical-space flag indicator `chi_t^(1) *_{R^m} chi_s^(2)` (unnormalized),
/// centred at the origin of the torus.
///
/// The first factor is the ball `|(x, y)| <= t` and the second the ball
/// `|z| <= s` acting on the y axes, so the support has `|x| <= t` and
/// `|y| <= t + s`.
pub fn indicator_kernel(lattice: &LatticeSpec, t: f64, s: f64) -> Result<GridFunction> {
    if !(t > 0.0 && s > 0.0) {
        return Err(FlagError::NonPositiveScale { t, s });
    }
    let n_pts = lattice.points_per_axis;
    let h = lattice.spacing();
    let signed = |i: usize| -> f64 {
        let k = if i < n_pts / 2 {
            i as f64
        } else {
            i as f64 - n_pts as f64
        };
        k * h
    };
    let ball1 = GridFunction::from_fn(*lattice, |_| 0.0)?;
    let mut ball1 = ball1.into_values();
    for (idx, v) in ball1.iter_mut().enumerate() {
        let r2: f64 = lattice
            .multi_index(idx)
            .iter()
            .map(|&i| signed(i).powi(2))
            .sum();
        if r2 <= t * t * (1.0 + 1e-12) {
            *v = 1.0;
        }
    }
    // Offsets z on the y axes with |z| <= s.
    let m = lattice.m;
    let reach = (s / h).floor() as isize;
    let mut offsets: Vec<Vec<isize>> = vec![vec![]];
    for _ in 0..m {
        offsets = offsets
            .into_iter()
            .flat_map(|o| {
                (-reach..=reach).map(move |k| {
                    let mut o = o.clone();
                    o.push(k);
                    o
                })
            })
            .collect();
    }
    offsets.retain(|o| {
        let z2: f64 = o.iter().map(|&k| (k as f64 * h).powi(2)).sum();
        z2 <= s * s * (1.0 + 1e-12)
    });
    let dz = h.powi(m as i32);
    let n_axes = lattice.n;
    let mut out = vec![0.0; lattice.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let multi = lattice.multi_index(idx);
        let mut acc = 0.0;
        for off in &offsets {
            let mut src = multi.clone();
            for (b, &k) in off.iter().enumerate() {
                let a = n_axes + b;
                src[a] = (src[a] as isize - k).rem_euclid(n_pts as isize) as usize;
            }
            acc += ball1[lattice.flat_index(&src)];
        }
        *o = acc * dz;
    }
    GridFunction::new(*lattice, out)
}

/// Flag Riesz multiplier `(-i zeta_j / |zeta|) (-i eta_k / |eta|)` at mode `idx`,
/// which is the real number `-zeta_j eta_k / (|zeta| |eta|)`; zero on
/// `{zeta = 0} U {eta = 0}`. Indices are 1-based as in `R_{j,k}`.
#[inline]
pub fn riesz_symbol(geom: &SpectralGeometry, idx: usize, j: usize, k: usize) -> f64 {
    let r = geom.r[idx];
    let rho = geom.rho[idx];
    if r == 0.0 || rho == 0.0 {
        return 0.0;
    }
    let zj = geom.component(idx, j - 1);
    let ek = geom.component(idx, geom.n + k - 1);
    -(zj * ek) / (r * rho)
}

pub fn check_riesz_indices(lattice: &LatticeSpec, j: usize, k: usize) -> Result<()> {
    if j == 0 || j > lattice.dim() {
        return Err(FlagError::IndexOutOfRange(format!(
            "j = {j} not in 1..={}",
            lattice.dim()
        )));
    }
    if k == 0 || k > lattice.m {
        return Err(FlagError::IndexOutOfRange(format!(
            "k = {k} not in 1..={}",
            lattice.m
        )));
    }
    Ok(())
}

/// Real multiplier table of `R_{j,k}` over the whole lattice.
pub fn build_riesz_multiplier(lattice: &LatticeSpec, j: usize, k: usize) -> Result<Vec<f64>> {
    check_riesz_indices(lattice, j, k)?;
    let geom = lattice.spectral_geometry();
    Ok((0..lattice.len())
        .map(|idx| riesz_symbol(&geom, idx, j, k))
        .collect())
}

/// Spectral function `psi` pairing with `t^2 Delta e^{-t^2 Delta}` in the
/// reproducing formula `f = int psi(t sqrt Delta) t^2 Delta e^{-t^2 Delta} f dt/t`
/// (one factor; the flag formula is the product of two).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCalibration {
    pub calibration_constant: f64,
    pub mode: Calibration,
    grid: Option<ScaleGrid>,
}

/// `x^2 e^{-x^2}`, the symbol of `t^2 Delta e^{-t^2 Delta}` at `x = t r`.
#[inline]
pub fn heat_lp(x: f64) -> f64 {
    x * x * (-x * x).exp()
}

impl SpectralCalibration {
    /// `psi(x) = c x^2 e^{-x^2}`.
    #[inline]
    pub fn psi_profile(&self, x: f64) -> f64 {
        self.calibration_constant * x * x * (-x * x).exp()
    }

    pub fn grid(&self) -> Option<&ScaleGrid> {
        self.grid.as_ref()
    }

    /// Renormalized copy: the discrete reproduction sum becomes exactly one.
    pub fn renormalized(&self, grid: &ScaleGrid) -> Self {
        Self {
            mode: Calibration::DiscretelyRenormalized,
            grid: Some(grid.clone()),
            ..self.clone()
        }
    }

    fn sum(&self, radius: f64, scales: &[f64], w: f64) -> f64 {
        scales
            .iter()
            .map(|&t| w * self.psi_profile(t * radius) * heat_lp(t * radius))
            .sum()
    }

    /// Per-mode factor making `sum_samples w psi(t r) heat_lp(t r)` equal one.
    pub fn renormalization1(&self, r: f64) -> f64 {
        match (&self.grid, self.mode) {
            (Some(g), Calibration::DiscretelyRenormalized) => {
                let s = self.sum(r, &g.t_scales(), g.weight());
                if s > 0.0 {
                    1.0 / s
                } else {
                    0.0
                }
            }
            _ => 1.0,
        }
    }

    pub fn renormalization2(&self, rho: f64) -> f64 {
        match (&self.grid, self.mode) {
            (Some(g), Calibration::DiscretelyRenormalized) => {
                let s = self.sum(rho, &g.s_scales(), g.weight());
                if s > 0.0 {
                    1.0 / s
                } else {
                    0.0
                }
            }
            _ => 1.0,
        }
    }
}

/// `psi(x) = 8 x^2 e^{-x^2}`: `int_0^inf x^3 e^{-2x^2} dx = 1/8`, so the
/// reproduction integral `int psi(x) x^2 e^{-x^2} dx/x` equals one.
pub fn build_spectral_calibration() -> SpectralCalibration {
    SpectralCalibration {
        calibration_constant: 8.0,
        mode: Calibration::Analytic,
        grid: None,
    }
}
