//! Flag convolution `psi_{t,s} * f`, the dyadic scale grid and the continuous
//! Calderon reproducing formula.

use std::f64::consts::LN_2;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FlagError, Result};
use crate::kernels::{Calibration, KernelPair};
use crate::lattice::{GridFunction, LatticeSpec, SpectralField, SpectralGeometry};

/// Dyadic scales `t = 2^{-j - i/S}`, `s = 2^{-k - i/S}` for `i in 0..S`, each
/// standing for a block of `int dt/t` of log-length `ln 2 / S`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleGrid {
    pub j_min: i32,
    pub j_max: i32,
    pub k_min: i32,
    pub k_max: i32,
    pub samples_per_block: u32,
    full_coverage: bool,
}

impl ScaleGrid {
    pub fn new(
        lattice: &LatticeSpec,
        j_min: i32,
        j_max: i32,
        k_min: i32,
        k_max: i32,
        samples_per_block: u32,
    ) -> Result<Self> {
        if j_min > j_max || k_min > k_max {
            return Err(FlagError::InvalidScaleGrid(format!(
                "empty range j in [{j_min}, {j_max}], k in [{k_min}, {k_max}]"
            )));
        }
        if samples_per_block == 0 || samples_per_block > 64 {
            return Err(FlagError::InvalidScaleGrid(format!(
                "samples per block must be in 1..=64, got {samples_per_block}"
            )));
        }
        let mut grid = Self {
            j_min,
            j_max,
            k_min,
            k_max,
            samples_per_block,
            full_coverage: false,
        };
        grid.full_coverage = grid.covers(&lattice.spectral_geometry());
        Ok(grid)
    }

    /// Whether every nonzero lattice radius falls strictly inside the
    /// Littlewood-Paley support `(1/2, 2)` at some sampled scale.
    pub fn full_coverage(&self) -> bool {
        self.full_coverage
    }

    fn covers(&self, geom: &SpectralGeometry) -> bool {
        let ts = self.t_scales();
        let ss = self.s_scales();
        let hit = |scales: &[f64], r: f64| scales.iter().any(|&t| t * r > 0.5 && t * r < 2.0);
        geom.r.iter().all(|&r| r == 0.0 || hit(&ts, r))
            && geom.rho.iter().all(|&r| r == 0.0 || hit(&ss, r))
    }

    fn scales(lo: i32, hi: i32, samples: u32) -> Vec<f64> {
        (lo..=hi)
            .flat_map(|j| {
                (0..samples).map(move |i| 2f64.powf(-(j as f64) - i as f64 / samples as f64))
            })
            .collect()
    }

    /// First-factor sample scales, coarse to fine.
    pub fn t_scales(&self) -> Vec<f64> {
        Self::scales(self.j_min, self.j_max, self.samples_per_block)
    }

    pub fn s_scales(&self) -> Vec<f64> {
        Self::scales(self.k_min, self.k_max, self.samples_per_block)
    }

    /// Quadrature weight of one sample in `int dt/t`.
    pub fn weight(&self) -> f64 {
        LN_2 / self.samples_per_block as f64
    }

    /// Dyadic exponent `j` of the `ti`-th first-factor sample.
    pub fn j_of(&self, ti: usize) -> i32 {
        self.j_min + (ti / self.samples_per_block as usize) as i32
    }

    pub fn k_of(&self, si: usize) -> i32 {
        self.k_min + (si / self.samples_per_block as usize) as i32
    }

    pub fn with_samples(&self, lattice: &LatticeSpec, samples: u32) -> Result<Self> {
        Self::new(
            lattice, self.j_min, self.j_max, self.k_min, self.k_max, samples,
        )
    }
}

/// One scale block `psi_{t,s} * f`.
#[derive(Debug, Clone)]
pub struct Block {
    pub t_index: usize,
    pub s_index: usize,
    pub t: f64,
    pub s: f64,
    pub values: GridFunction,
}

#[derive(Debug, Clone)]
pub struct FlagCoefficients {
    pub scale_grid: ScaleGrid,
    pub kernel: KernelPair,
    pub blocks: Vec<Block>,
    /// Mean of the analysed function; the reproducing formula does not see it.
    pub mean: f64,
}

/// Precomputed per-mode factors of a kernel pair on one lattice.
pub(crate) struct PairSymbols<'a> {
    pair: &'a KernelPair,
    pub geom: SpectralGeometry,
    nu1: Option<Vec<f64>>,
    nu2: Option<Vec<f64>>,
}

impl<'a> PairSymbols<'a> {
    pub fn new(pair: &'a KernelPair, lattice: &LatticeSpec) -> Self {
        let geom = lattice.spectral_geometry();
        let nu1 = pair.renormalization_table1(&geom);
        let nu2 = pair.renormalization_table2(&geom);
        Self {
            pair,
            geom,
            nu1,
            nu2,
        }
    }

    /// First-factor symbol at scale `t` for every mode.
    pub fn factor1(&self, t: f64) -> Vec<f64> {
        let mut cache = std::collections::HashMap::new();
        self.geom
            .r
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let base = *cache
                    .entry(r.to_bits())
                    .or_insert_with(|| self.pair.profile1(t * r));
                base * self.nu1.as_ref().map_or(1.0, |v| v[i])
            })
            .collect()
    }

    pub fn factor2(&self, s: f64) -> Vec<f64> {
        let mut cache = std::collections::HashMap::new();
        self.geom
            .rho
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let base = *cache
                    .entry(r.to_bits())
                    .or_insert_with(|| self.pair.profile2(s * r));
                base * self.nu2.as_ref().map_or(1.0, |v| v[i])
            })
            .collect()
    }
}

fn check_scales(t: f64, s: f64) -> Result<()> {
    if !(t > 0.0 && s > 0.0) || !t.is_finite() || !s.is_finite() {
        return Err(FlagError::NonPositiveScale { t, s });
    }
    Ok(())
}

/// `psi_{t,s} * f`: multiplies the spectrum by `m1(t |zeta|) m2(s |eta|)`.
pub fn flag_convolve(f: &GridFunction, pair: &KernelPair, t: f64, s: f64) -> Result<GridFunction> {
    check_scales(t, s)?;
    let symbols = PairSymbols::new(pair, f.lattice());
    let a = symbols.factor1(t);
    let b = symbols.factor2(s);
    Ok(f.to_spectral().filter_real(|i| a[i] * b[i]))
}

/// Spectrum of `f` filtered by the product of two precomputed factor tables.
pub(crate) fn filtered(spec: &SpectralField, a: &[f64], b: &[f64]) -> GridFunction {
    spec.filter_real(|i| a[i] * b[i])
}

/// Runs `row` for every first-factor sample and returns the results in order.
/// Rows may run concurrently; callers reduce the returned vector in order, so
/// the result does not depend on the worker count.
pub(crate) fn per_t_row<T: Send>(rows: usize, row: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..rows).into_par_iter().map(row).collect()
}

/// Elementwise in-order sum of per-row partial arrays.
pub(crate) fn reduce_rows(rows: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc
}

pub fn compute_coefficients(
    f: &GridFunction,
    pair: &KernelPair,
    grid: &ScaleGrid,
) -> Result<FlagCoefficients> {
    if pair.calibration() == Calibration::DiscretelyRenormalized && !grid.full_coverage() {
        return Err(FlagError::InvalidScaleGrid(
            "renormalized calibration needs a full-coverage scale grid".into(),
        ));
    }
    let spec = f.to_spectral();
    let symbols = PairSymbols::new(pair, f.lattice());
    let ts = grid.t_scales();
    let ss = grid.s_scales();
    let s_factors: Vec<Vec<f64>> = ss.iter().map(|&s| symbols.factor2(s)).collect();
    let rows = per_t_row(ts.len(), |ti| {
        let a = symbols.factor1(ts[ti]);
        ss.iter()
            .enumerate()
            .map(|(si, &s)| Block {
                t_index: ti,
                s_index: si,
                t: ts[ti],
                s,
                values: filtered(&spec, &a, &s_factors[si]),
            })
            .collect::<Vec<_>>()
    });
    let mean = spec.coefficients()[0].re / f.lattice().len() as f64;
    Ok(FlagCoefficients {
        scale_grid: grid.clone(),
        kernel: pair.clone(),
        blocks: rows.into_iter().flatten().collect(),
        mean,
    })
}

/// `sum_{j,k} w^2 psi_{t_j,s_k} * block_{j,k}` plus the carried mean.
pub fn calderon_reconstruct(coeffs: &FlagCoefficients, pair: &KernelPair) -> Result<GridFunction> {
    if pair != &coeffs.kernel {
        return Err(FlagError::KernelMismatch(format!(
            "coefficients built with {}, reconstruction asked with {}",
            coeffs.kernel.description(),
            pair.description()
        )));
    }
    let Some(first) = coeffs.blocks.first() else {
        return Err(FlagError::InvalidScaleGrid("no blocks".into()));
    };
    let lattice = *first.values.lattice();
    let symbols = PairSymbols::new(pair, &lattice);
    let w2 = coeffs.scale_grid.weight().powi(2);
    let ts = coeffs.scale_grid.t_scales();
    let ss = coeffs.scale_grid.s_scales();
    let s_factors: Vec<Vec<f64>> = ss.iter().map(|&s| symbols.factor2(s)).collect();
    let len = lattice.len();
    let rows = per_t_row(ts.len(), |ti| {
        let a = symbols.factor1(ts[ti]);
        let mut acc = vec![Complex64::default(); len];
        for block in coeffs.blocks.iter().filter(|b| b.t_index == ti) {
            let b = &s_factors[block.s_index];
            let spec = block.values.to_spectral();
            for (i, (c, v)) in acc.iter_mut().zip(spec.coefficients()).enumerate() {
                *c += v * (w2 * a[i] * b[i]);
            }
        }
        acc
    });
    let mut total = vec![Complex64::default(); len];
    for row in rows {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    total[0] += Complex64::new(coeffs.mean * len as f64, 0.0);
    Ok(SpectralField::new(lattice, total)?.to_physical())
}
