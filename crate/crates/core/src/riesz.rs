//! Flag Riesz transforms `R_{j,k}`, the Riesz norm, an independent
//! heat-semigroup evaluation path and the conjugate Poisson system checks.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{FlagError, Result};
use crate::kernels::{check_riesz_indices, riesz_symbol};
use crate::lattice::{l1_norm, l2_norm, GridFunction, SpectralField, SpectralGeometry};

/// All `R_{j,k} f` for `1 <= j <= n+m`, `1 <= k <= m`, with the Riesz norm.
#[derive(Debug, Clone)]
pub struct RieszSuite {
    /// `((j, k), R_{j,k} f)` in lexicographic order of `(j, k)`.
    pub transforms: Vec<((usize, usize), GridFunction)>,
    pub riesz_norm: f64,
}

fn apply_with(spec: &SpectralField, geom: &SpectralGeometry, j: usize, k: usize) -> GridFunction {
    spec.filter_real(|i| riesz_symbol(geom, i, j, k))
}

/// `R_{j,k} f` by its spectral multiplier.
pub fn apply_riesz(f: &GridFunction, j: usize, k: usize) -> Result<GridFunction> {
    check_riesz_indices(f.lattice(), j, k)?;
    Ok(apply_with(
        &f.to_spectral(),
        &f.lattice().spectral_geometry(),
        j,
        k,
    ))
}

pub fn riesz_suite(f: &GridFunction) -> RieszSuite {
    let lat = f.lattice();
    let spec = f.to_spectral();
    let geom = lat.spectral_geometry();
    let pairs: Vec<(usize, usize)> = (1..=lat.dim())
        .flat_map(|j| (1..=lat.m).map(move |k| (j, k)))
        .collect();
    let transforms: Vec<((usize, usize), GridFunction)> = pairs
        .par_iter()
        .map(|&(j, k)| ((j, k), apply_with(&spec, &geom, j, k)))
        .collect();
    let riesz_norm = transforms
        .iter()
        .fold(l1_norm(f), |acc, (_, g)| acc + l1_norm(g));
    RieszSuite {
        transforms,
        riesz_norm,
    }
}

/// `||f||_1 + sum_{j,k} ||R_{j,k} f||_1`.
pub fn riesz_norm(f: &GridFunction) -> f64 {
    riesz_suite(f).riesz_norm
}

/// `||sum_j (R_j f)^2 + f||_2 / ||f||_2` where `R_j` are the first-factor
/// Riesz transforms with symbols `-i zeta_j / |zeta|`; 0 for `f = 0`.
pub fn involution_residual(f: &GridFunction) -> f64 {
    let lattice = f.lattice();
    let geom = lattice.spectral_geometry();
    let spec = f.to_spectral();
    let sum = (0..lattice.dim()).fold(GridFunction::zeros(*lattice), |acc, j| {
        let g = spec.filter_real(|i| {
            if geom.r[i] == 0.0 {
                return 0.0;
            }
            let z = geom.component(i, j) / geom.r[i];
            -z * z
        });
        acc.add(&g).expect("same lattice")
    });
    let norm = l2_norm(f);
    if norm == 0.0 {
        return 0.0;
    }
    l2_norm(&sum.add(f).expect("same lattice")) / norm
}

/// `|sum_{j,k} ||R_{j,k} f||_2^2 / ||f||_2^2 - 1|`; 0 for `f = 0`.
pub fn isometry_defect(f: &GridFunction) -> f64 {
    let norm2 = l2_norm(f).powi(2);
    if norm2 == 0.0 {
        return 0.0;
    }
    let energy: f64 = riesz_suite(f)
        .transforms
        .iter()
        .map(|(_, g)| l2_norm(g).powi(2))
        .sum();
    (energy / norm2 - 1.0).abs()
}

/// Lower end of the logarithmic quadrature in `t`.
pub const HEAT_T_MIN: f64 = 1e-6;
/// Simpson nodes per decade of `t`.
pub const HEAT_NODES_PER_DECADE: usize = 64;

/// `int_0^a e^{-r^2 t} t^{-1/2} dt` from its power series.
fn heat_head(r2: f64, a: f64) -> f64 {
    let x = r2 * a;
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..200 {
        term *= -x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    2.0 * a.sqrt() * sum
}

/// `int_0^{t_max} e^{-r^2 t} t^{-1/2} dt`: series head on `[0, HEAT_T_MIN]`
/// and composite Simpson in `u = ln t` above it.
fn heat_weight(r: f64, t_max: f64) -> f64 {
    let r2 = r * r;
    let (u0, u1) = (HEAT_T_MIN.ln(), t_max.ln());
    let decades = (t_max / HEAT_T_MIN).log10();
    let mut intervals = ((decades * HEAT_NODES_PER_DECADE as f64).ceil() as usize).max(2);
    if intervals % 2 == 1 {
        intervals += 1;
    }
    let du = (u1 - u0) / intervals as f64;
    let g = |u: f64| {
        let t = u.exp();
        (-r2 * t).exp() * t.sqrt()
    };
    let mut acc = g(u0) + g(u1);
    for i in 1..intervals {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(u0 + i as f64 * du);
    }
    heat_head(r2, HEAT_T_MIN) + acc * du / 3.0
}

/// Smallest `t_max` with `e^{-t_max r_min^2} < 1e-12`, with a small margin.
pub fn default_heat_t_max(f: &GridFunction) -> f64 {
    let geom = f.lattice().spectral_geometry();
    let r_min = geom.min_nonzero_radius().min(geom.min_nonzero_rho());
    30.0 / (r_min * r_min)
}

/// `R_{j,k} f` evaluated from the heat-semigroup representation
/// `(1/pi) int int grad_j e^{-t1 Delta} grad_k e^{-t2 Delta} f (t1 t2)^{-1/2} dt1 dt2`,
/// truncated at `t_max` in both variables.
pub fn riesz_via_heat(f: &GridFunction, j: usize, k: usize, t_max: f64) -> Result<GridFunction> {
    let lat = f.lattice();
    check_riesz_indices(lat, j, k)?;
    let geom = lat.spectral_geometry();
    let r_min = geom.min_nonzero_radius().min(geom.min_nonzero_rho());
    if !(t_max > HEAT_T_MIN) || (-t_max * r_min * r_min).exp() >= 1e-12 {
        return Err(FlagError::InsufficientTMax(format!(
            "t_max = {t_max} leaves e^(-t_max r_min^2) >= 1e-12 for r_min = {r_min}"
        )));
    }
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut weight = |r: f64| {
        *cache
            .entry(r.to_bits())
            .or_insert_with(|| heat_weight(r, t_max))
    };
    let symbol: Vec<f64> = (0..lat.len())
        .map(|i| {
            let (r, rho) = (geom.r[i], geom.rho[i]);
            if r == 0.0 || rho == 0.0 {
                return 0.0;
            }
            // grad symbols i zeta_j and i eta_k; their product is -zeta_j eta_k.
            let zj = geom.component(i, j - 1);
            let ek = geom.component(i, geom.n + k - 1);
            -zj * ek * weight(r) * weight(rho) / std::f64::consts::PI
        })
        .collect();
    Ok(f.to_spectral().filter_real(|i| symbol[i]))
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Maximum relative L2 residual of the generalized Cauchy-Riemann systems
/// satisfied by `u_{j,k} = Q_{j,t} Q_{k,s} f`.
///
/// For each `k` the family `(u_{0,k}, ..., u_{n+m,k})` is divergence free and
/// curl free in `(t, x, y)`; for each `j` the family `(u_{j,0}, ..., u_{j,m})`
/// satisfies the same equations in `(s, y)`. Index 0 is the Poisson term,
/// index `a >= 1` the conjugate Poisson term along axis `a - 1`.
pub fn conjugate_system_residual(f: &GridFunction, t: f64, s: f64) -> Result<f64> {
    if !(t > 0.0 && s > 0.0) {
        return Err(FlagError::NonPositiveScale { t, s });
    }
    let lat = *f.lattice();
    let spec = f.to_spectral();
    let geom = lat.spectral_geometry();
    let (d, n, m) = (lat.dim(), lat.n, lat.m);
    let factor1 = |i: usize, j: usize| -> Complex64 {
        let r = geom.r[i];
        let e = (-t * r).exp();
        match (j, r == 0.0) {
            (0, _) => Complex64::new(e, 0.0),
            (_, true) => Complex64::default(),
            _ => Complex64::new(0.0, -geom.component(i, j - 1) / r * e),
        }
    };
    let factor2 = |i: usize, k: usize| -> Complex64 {
        let rho = geom.rho[i];
        let e = (-s * rho).exp();
        match (k, rho == 0.0) {
            (0, _) => Complex64::new(e, 0.0),
            (_, true) => Complex64::default(),
            _ => Complex64::new(0.0, -geom.component(i, n + k - 1) / rho * e),
        }
    };
    // Derivative symbols: variable 0 is t (or s), variable a >= 1 is axis a - 1
    // of the first factor (or y axis a - 1 of the second).
    let deriv1 = |i: usize, a: usize| -> Complex64 {
        if a == 0 {
            Complex64::new(-geom.r[i], 0.0)
        } else {
            Complex64::new(0.0, geom.component(i, a - 1))
        }
    };
    let deriv2 = |i: usize, b: usize| -> Complex64 {
        if b == 0 {
            Complex64::new(-geom.rho[i], 0.0)
        } else {
            Complex64::new(0.0, geom.component(i, n + b - 1))
        }
    };
    // d_var u_{j,k} in physical space, where `first` selects the factor the
    // derivative acts on.
    let term = |j: usize, k: usize, var: usize, first: bool| -> GridFunction {
        spec.multiplied(|i| {
            let d = if first {
                deriv1(i, var)
            } else {
                deriv2(i, var)
            };
            d * factor1(i, j) * factor2(i, k)
        })
        .to_physical()
    };
    let mut worst = 0.0f64;
    let mut system = |size: usize, first: bool, fixed: usize| -> Result<()> {
        let comp = |idx: usize| if first { (idx, fixed) } else { (fixed, idx) };
        // Divergence.
        let terms: Vec<GridFunction> = (0..size)
            .map(|a| {
                let (j, k) = comp(a);
                term(j, k, a, first)
            })
            .collect();
        let mut total = GridFunction::zeros(lat);
        let mut scale = 0.0;
        for tm in &terms {
            total = total.add(tm)?;
            scale += l2_norm(tm);
        }
        worst = worst.max(relative(l2_norm(&total), scale));
        // Curl.
        for a in 0..size {
            for b in (a + 1)..size {
                let (ja, ka) = comp(a);
                let (jb, kb) = comp(b);
                let lhs = term(jb, kb, a, first);
                let rhs = term(ja, ka, b, first);
                let diff = l2_norm(&lhs.sub(&rhs)?);
                worst = worst.max(relative(diff, l2_norm(&lhs) + l2_norm(&rhs)));
            }
        }
        Ok(())
    };
    for k in 0..=m {
        system(d + 1, true, k)?;
    }
    for j in 0..=d {
        system(m + 1, false, j)?;
    }
    Ok(worst)
}
