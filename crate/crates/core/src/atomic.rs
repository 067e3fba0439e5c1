//! Constructive flag atomic decomposition driven by the heat area function,
//! the atom validator, and the decomposition directory format.
//!
//! Pipeline: `S = s_heat(f)`, super-level sets `Omega_l = {S > 2^l}`, rectangle
//! classes `B_l`, then per level the tent synthesis
//! `a_l = (1 / lambda_l) sum_{(t,s)} w^2 Psi_{t,s}[chi_{B_l, (t,s)} theta_{t,s} f]`
//! where `theta` is `t^2 Delta e^{-t^2 Delta}` in both factors and `Psi` the
//! renormalized `psi(t sqrt Delta)` pair, so that `sum_l lambda_l a_l`
//! reproduces `f` up to level truncation.
//!
//! Tent scales: the sample `t_j = 2^{-j}` (block `j`) is paired with
//! `l(I) = t_j / 2` and `l(J) = max(t_j, s_k) / 2`, rounded to a power-of-two
//! number of cells and clamped to `[1, N]` cells.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dyadic::{log2_points, maximal_subrectangles, DyadicRectangle, MaximalityMode, OpenSet};
use crate::error::{FlagError, Result};
use crate::flagconv::{filtered, PairSymbols, ScaleGrid};
use crate::gridio::{encode, read_grid, write_grid};
use crate::kernels::{build_heatlp_pair, build_spectral_calibration, SpectralCalibration};
use crate::lattice::{
    l1_norm, l2_norm, relative_l2_error, spectra_of_pair, to_spectral, GridFunction, LatticeSpec,
    SpectralField,
};
use crate::square::s_heat;

/// Threshold of the strong maximal function defining `Omega~_l`.
pub const OMEGA_TILDE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct AtomTolerances {
    /// Minimal fraction of `||a||_2^2` inside the dilated maximal rectangles.
    pub min_support_mass: f64,
    /// Upper bound for `||a||_2 |Omega|^{1/2}`.
    pub max_l2_ratio: f64,
    /// Upper bound for the Laplacian-power budget times `|Omega|`; `None`
    /// reports the budget without gating on it.
    pub max_budget: Option<f64>,
}

impl Default for AtomTolerances {
    fn default() -> Self {
        Self {
            min_support_mass: 0.99,
            max_l2_ratio: 1.0,
            max_budget: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomicConfig {
    pub scale_grid: ScaleGrid,
    /// Explicit `(l_min, l_max)`; `None` derives it from `max S`.
    pub level_range: Option<(i32, i32)>,
    /// `l_max - l_min` when the range is derived.
    pub level_span: i32,
    /// Laplacian power `M`.
    pub m_power: u32,
    pub dilation: f64,
    pub tolerances: AtomTolerances,
}

impl AtomicConfig {
    pub fn new(scale_grid: ScaleGrid) -> Self {
        Self {
            scale_grid,
            level_range: None,
            level_span: 24,
            m_power: 1,
            dilation: 10.0,
            tolerances: AtomTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomValidationReport {
    pub support_mass_inside: f64,
    pub l2_norm_ratio: f64,
    /// `|Omega| max_{k1,k2} sum_R l(I)^{-4M} l(J)^{-4M} ||(l(I)^2 D1)^{k1} (l(J)^2 D2)^{k2} b_R||^2`;
    /// `None` when only the support and norm checks ran.
    pub per_rectangle_budget: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct LevelData {
    pub level: i32,
    pub omega: OpenSet,
    pub omega_tilde: OpenSet,
    pub rectangles: Vec<DyadicRectangle>,
    pub lambda: f64,
    pub atom: GridFunction,
    pub validation: AtomValidationReport,
}

#[derive(Debug, Clone)]
pub struct AtomicDecomposition {
    pub levels: Vec<LevelData>,
    pub source_hash: String,
    pub reconstruction_error: f64,
    pub level_range: Option<(i32, i32)>,
    pub s_heat_l1: f64,
    pub lambda_sum: f64,
    /// `sum_l 2^l |Omega_l|`.
    pub layer_cake_sum: f64,
    /// `2^{l_min} |torus|`.
    pub eps_trunc: f64,
    /// `sqrt(kappa)`: the `L^2` bound of `||a_l||_2 |Omega~_l|^{1/2}` from the
    /// frame constant of the synthesis family.
    pub l2_bound: f64,
    /// Levels with rectangles but vanishing `lambda`, dropped.
    pub degenerate_levels: Vec<i32>,
}

/// `(l_min, l_max)` with `l_max = ceil(log2 max S)` and `l_min = l_max - span`,
/// or `None` for `S = 0`.
pub fn default_level_range(s: &GridFunction, span: i32) -> Option<(i32, i32)> {
    let max = s.max_abs();
    if max <= 0.0 {
        return None;
    }
    let l_max = max.log2().ceil() as i32;
    Some((l_max - span, l_max))
}

/// Non-empty super-level sets `{S > 2^l}` for `l_min <= l <= l_max`.
pub fn level_sets(s: &GridFunction, l_min: i32, l_max: i32) -> Result<Vec<(i32, OpenSet)>> {
    if l_min > l_max {
        return Err(FlagError::InvalidLevelRange {
            min: l_min,
            max: l_max,
        });
    }
    Ok((l_min..=l_max)
        .map(|l| (l, OpenSet::above(s, 2f64.powi(l))))
        .filter(|(_, set)| !set.is_empty())
        .collect())
}

/// `sum_l 2^l |Omega_l|`.
pub fn layer_cake_sum(levels: &[(i32, OpenSet)]) -> f64 {
    levels
        .iter()
        .map(|(l, set)| 2f64.powi(*l) * set.measure())
        .sum()
}

/// Highest level each cell belongs to, `i32::MIN` for none.
fn cell_levels(lattice: &LatticeSpec, levels: &[(i32, OpenSet)]) -> Vec<i32> {
    let mut out = vec![i32::MIN; lattice.len()];
    for (l, set) in levels {
        for (o, &inside) in out.iter_mut().zip(set.mask()) {
            if inside {
                *o = (*o).max(*l);
            }
        }
    }
    out
}

/// Every dyadic rectangle with `l(J) >= l(I)` lands in the `B_l` with
/// `|R n Omega_l| > |R|/2 >= |R n Omega_{l+1}|`, if any. The returned vector
/// is aligned with `levels`.
///
/// The class level is the upper median of the per-cell levels over `R`:
/// more than half of the cells lie in `Omega_l` exactly when the
/// `(floor(|R|/2) + 1)`-th largest cell level is at least `l`.
pub fn classify_rectangles(
    levels: &[(i32, OpenSet)],
    lattice: &LatticeSpec,
) -> Result<Vec<Vec<DyadicRectangle>>> {
    let k = log2_points(lattice)?;
    let cell_level = cell_levels(lattice, levels);
    let index: HashMap<i32, usize> = levels
        .iter()
        .enumerate()
        .map(|(i, (l, _))| (*l, i))
        .collect();
    let shapes: Vec<(u32, u32)> = (0..=k).flat_map(|a| (a..=k).map(move |b| (a, b))).collect();
    let per_shape: Vec<Vec<(usize, DyadicRectangle)>> = shapes
        .par_iter()
        .map(|&(a, b)| {
            let mut found = Vec::new();
            let mut buf = Vec::new();
            for rect in aligned_tiling(lattice, a, b) {
                buf.clear();
                buf.extend(
                    rect.cell_indices(lattice)
                        .into_iter()
                        .map(|i| cell_level[i]),
                );
                let mid = buf.len() / 2;
                let (_, median, _) = buf.select_nth_unstable_by(mid, |x, y| y.cmp(x));
                if let Some(&li) = index.get(median) {
                    found.push((li, rect));
                }
            }
            found
        })
        .collect();
    let mut out = vec![Vec::new(); levels.len()];
    for group in per_shape {
        for (li, rect) in group {
            out[li].push(rect);
        }
    }
    for v in &mut out {
        v.sort();
    }
    Ok(out)
}

/// All aligned dyadic rectangles of one shape, row-major by anchor.
pub fn aligned_tiling(lattice: &LatticeSpec, x_log: u32, y_log: u32) -> Vec<DyadicRectangle> {
    let d = lattice.dim();
    let counts: Vec<usize> = (0..d)
        .map(|a| lattice.points_per_axis >> if a < lattice.n { x_log } else { y_log })
        .collect();
    let total: usize = counts.iter().product();
    (0..total)
        .map(|mut idx| {
            let mut anchor = vec![0; d];
            for axis in (0..d).rev() {
                let e = if axis < lattice.n { x_log } else { y_log };
                anchor[axis] = (idx % counts[axis]) << e;
                idx /= counts[axis];
            }
            DyadicRectangle {
                x_log,
                y_log,
                anchor,
            }
        })
        .collect()
}

fn side_to_log(lattice: &LatticeSpec, side: f64, k: u32) -> u32 {
    let cells = side / lattice.spacing();
    (cells.log2().round().max(0.0) as u32).min(k)
}

/// Rectangle shape `(x_log, y_log)` of the tents met by the scale sample `(ti, si)`.
pub fn tent_shape(
    lattice: &LatticeSpec,
    grid: &ScaleGrid,
    ti: usize,
    si: usize,
) -> Result<(u32, u32)> {
    let k = log2_points(lattice)?;
    let j = grid.j_of(ti);
    let jk = j.min(grid.k_of(si));
    let a = side_to_log(lattice, 2f64.powi(-j) / 2.0, k);
    let b = side_to_log(lattice, 2f64.powi(-jk) / 2.0, k);
    Ok((a, b.max(a)))
}

/// Renormalized `psi` factor tables for the heat reproducing formula.
struct PsiTables {
    psi1: Vec<Vec<f64>>,
    psi2: Vec<Vec<f64>>,
}

fn per_mode(radii: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut cache: HashMap<u64, f64> = HashMap::new();
    radii
        .iter()
        .map(|&r| *cache.entry(r.to_bits()).or_insert_with(|| g(r)))
        .collect()
}

impl PsiTables {
    fn new(lattice: &LatticeSpec, calib: &SpectralCalibration, grid: &ScaleGrid) -> Self {
        let geom = lattice.spectral_geometry();
        let nu1 = per_mode(&geom.r, |r| calib.renormalization1(r));
        let nu2 = per_mode(&geom.rho, |r| calib.renormalization2(r));
        let psi1 = grid
            .t_scales()
            .iter()
            .map(|&t| {
                per_mode(&geom.r, |r| calib.psi_profile(t * r))
                    .iter()
                    .zip(&nu1)
                    .map(|(p, n)| p * n)
                    .collect()
            })
            .collect();
        let psi2 = grid
            .s_scales()
            .iter()
            .map(|&s| {
                per_mode(&geom.rho, |r| calib.psi_profile(s * r))
                    .iter()
                    .zip(&nu2)
                    .map(|(p, n)| p * n)
                    .collect()
            })
            .collect();
        Self { psi1, psi2 }
    }
}

/// Frame constant `kappa = sup_modes (sum_t w psi1^2)(sum_s w psi2^2)`;
/// every synthesized atom satisfies `||a_l||_2 |Omega~_l|^{1/2} <= sqrt(kappa)`.
pub fn frame_constant(lattice: &LatticeSpec, calib: &SpectralCalibration, grid: &ScaleGrid) -> f64 {
    let tables = PsiTables::new(lattice, calib, grid);
    let w = grid.weight();
    let sum_sq =
        |rows: &[Vec<f64>], i: usize| rows.iter().map(|row| w * row[i] * row[i]).sum::<f64>();
    (0..lattice.len())
        .map(|i| sum_sq(&tables.psi1, i) * sum_sq(&tables.psi2, i))
        .fold(0.0, f64::max)
}

/// Per-level synthesis state: tent cells grouped by shape, the `L^2` tent
/// energy and the spectral accumulator.
struct LevelWork {
    cells: HashMap<(u32, u32), Vec<u32>>,
    energy: f64,
    acc: Vec<Complex64>,
}

/// Runs the tent synthesis for several rectangle families at once, sharing
/// the `theta` blocks. Returns `(energy, spectrum)` per family where
/// `energy = ||(sum w^2 |chi theta|^2)^{1/2}||_2^2`.
fn synthesize_families(
    f: &GridFunction,
    families: &[&[DyadicRectangle]],
    calib: &SpectralCalibration,
    grid: &ScaleGrid,
) -> Result<Vec<(f64, Vec<Complex64>)>> {
    let lattice = *f.lattice();
    let len = lattice.len();
    let spec = f.to_spectral();
    let heat = build_heatlp_pair(&lattice);
    let symbols = PairSymbols::new(&heat, &lattice);
    let psi = PsiTables::new(&lattice, calib, grid);
    let ts = grid.t_scales();
    let ss = grid.s_scales();
    let w2 = grid.weight().powi(2);
    let cv = lattice.cell_volume();
    let neg = lattice.negated_indices();
    let s_factors: Vec<Vec<f64>> = ss.iter().map(|&s| symbols.factor2(s)).collect();
    let mut shapes = vec![vec![(0u32, 0u32); ss.len()]; ts.len()];
    for (ti, row) in shapes.iter_mut().enumerate() {
        for (si, shape) in row.iter_mut().enumerate() {
            *shape = tent_shape(&lattice, grid, ti, si)?;
        }
    }
    let mut work: Vec<LevelWork> = families
        .iter()
        .map(|rects| {
            let mut cells: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
            for r in rects.iter() {
                cells
                    .entry((r.x_log, r.y_log))
                    .or_default()
                    .extend(r.cell_indices(&lattice).into_iter().map(|i| i as u32));
            }
            LevelWork {
                cells,
                energy: 0.0,
                acc: vec![Complex64::default(); len],
            }
        })
        .collect();
    for (ti, &t) in ts.iter().enumerate() {
        let a = symbols.factor1(t);
        let needed: Vec<usize> = (0..ss.len())
            .filter(|&si| work.iter().any(|lw| lw.cells.contains_key(&shapes[ti][si])))
            .collect();
        let blocks: Vec<GridFunction> = needed
            .par_iter()
            .map(|&si| filtered(&spec, &a, &s_factors[si]))
            .collect();
        // Levels are processed two at a time so that their real masked
        // fields share one forward transform.
        work.par_chunks_mut(2).for_each(|chunk| {
            for (bi, &si) in needed.iter().enumerate() {
                let shape = shapes[ti][si];
                let theta = blocks[bi].values();
                let mut masked: Vec<(usize, Vec<f64>)> = Vec::new();
                for (ci, lw) in chunk.iter_mut().enumerate() {
                    let Some(cells) = lw.cells.get(&shape) else {
                        continue;
                    };
                    let mut field = vec![0.0; len];
                    let mut energy = 0.0;
                    for &c in cells {
                        let v = theta[c as usize];
                        field[c as usize] = v;
                        energy += v * v;
                    }
                    lw.energy += w2 * cv * energy;
                    masked.push((ci, field));
                }
                let spectra: Vec<(usize, Vec<Complex64>)> = match masked.as_slice() {
                    [] => continue,
                    [(ci, field)] => {
                        let spec = to_spectral(&GridFunction::from_parts_unchecked(
                            lattice,
                            field.clone(),
                        ));
                        vec![(*ci, spec.coefficients().to_vec())]
                    }
                    [(c0, f0), (c1, f1)] => {
                        let (s0, s1) = spectra_of_pair(&lattice, f0, f1, &neg);
                        vec![(*c0, s0), (*c1, s1)]
                    }
                    _ => unreachable!("chunks hold at most two levels"),
                };
                let (p1, p2) = (&psi.psi1[ti], &psi.psi2[si]);
                for (ci, spec) in spectra {
                    for (i, (acc, c)) in chunk[ci].acc.iter_mut().zip(&spec).enumerate() {
                        *acc += c * (w2 * p1[i] * p2[i]);
                    }
                }
            }
        });
    }
    Ok(work.into_iter().map(|lw| (lw.energy, lw.acc)).collect())
}

/// `(lambda_l, a_l)` for one rectangle class, with
/// `lambda_l = ||(sum w^2 |chi theta f|^2)^{1/2}||_2 |Omega~_l|^{1/2}`.
/// Returns `lambda = 0` and `a = 0` when the tents carry no energy.
pub fn synthesize_level(
    f: &GridFunction,
    rects: &[DyadicRectangle],
    omega_tilde: &OpenSet,
    calib: &SpectralCalibration,
    grid: &ScaleGrid,
) -> Result<(f64, GridFunction)> {
    let (energy, acc) = synthesize_families(f, &[rects], calib, grid)?.remove(0);
    Ok(finish_level(f.lattice(), energy, acc, omega_tilde))
}

fn finish_level(
    lattice: &LatticeSpec,
    energy: f64,
    acc: Vec<Complex64>,
    omega_tilde: &OpenSet,
) -> (f64, GridFunction) {
    let lambda = energy.sqrt() * omega_tilde.measure().sqrt();
    if lambda == 0.0 {
        return (0.0, GridFunction::zeros(*lattice));
    }
    let field = SpectralField::new(*lattice, acc)
        .expect("accumulator matches the lattice")
        .to_physical();
    (lambda, field.scaled(1.0 / lambda))
}

fn source_hash(f: &GridFunction, config: &AtomicConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(encode(f.values()));
    h.update(serde_json::to_vec(f.lattice())?);
    h.update(serde_json::to_vec(config)?);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Full pipeline: level sets, rectangle classes, tent synthesis and the
/// per-atom support and norm checks.
pub fn decompose(f: &GridFunction, config: &AtomicConfig) -> Result<AtomicDecomposition> {
    let lattice = *f.lattice();
    log2_points(&lattice)?;
    let grid = &config.scale_grid;
    if !grid.full_coverage() {
        return Err(FlagError::InvalidScaleGrid(
            "atomic decomposition needs a full-coverage scale grid".into(),
        ));
    }
    let hash = source_hash(f, config)?;
    let calib = build_spectral_calibration().renormalized(grid);
    let l2_bound = frame_constant(&lattice, &calib, grid).sqrt();
    let s = s_heat(f, grid)?.value;
    let s_heat_l1 = l1_norm(&s);
    let range = match config.level_range {
        Some(r) => Some(r),
        None => default_level_range(&s, config.level_span),
    };
    let Some((l_min, l_max)) = range else {
        return Ok(AtomicDecomposition {
            levels: Vec::new(),
            source_hash: hash,
            reconstruction_error: 0.0,
            level_range: None,
            s_heat_l1,
            lambda_sum: 0.0,
            layer_cake_sum: 0.0,
            eps_trunc: 0.0,
            l2_bound,
            degenerate_levels: Vec::new(),
        });
    };
    let sets = level_sets(&s, l_min, l_max)?;
    let layer_cake = layer_cake_sum(&sets);
    let classes = classify_rectangles(&sets, &lattice)?;
    let tildes: Vec<OpenSet> = sets
        .par_iter()
        .map(|(_, set)| set.enlarged(OMEGA_TILDE_THRESHOLD))
        .collect();
    let families: Vec<&[DyadicRectangle]> = classes.iter().map(|v| v.as_slice()).collect();
    let synth = synthesize_families(f, &families, &calib, grid)?;
    let tolerances = AtomTolerances {
        max_l2_ratio: l2_bound * (1.0 + 1e-9),
        ..config.tolerances
    };
    let mut total = vec![Complex64::default(); lattice.len()];
    let mut degenerate = Vec::new();
    let mut pending = Vec::new();
    for ((((level, omega), rects), tilde), (energy, acc)) in
        sets.into_iter().zip(classes).zip(tildes).zip(synth)
    {
        for (t, a) in total.iter_mut().zip(&acc) {
            *t += a;
        }
        let (lambda, atom) = finish_level(&lattice, energy, acc, &tilde);
        if lambda == 0.0 && !rects.is_empty() {
            degenerate.push(level);
            continue;
        }
        pending.push((level, omega, tilde, rects, lambda, atom));
    }
    let levels: Vec<LevelData> = pending
        .into_par_iter()
        .map(|(level, omega, omega_tilde, rectangles, lambda, atom)| {
            let validation = check_atom(&atom, &omega_tilde, config.dilation, &tolerances, None)?;
            Ok(LevelData {
                level,
                omega,
                omega_tilde,
                rectangles,
                lambda,
                atom,
                validation,
            })
        })
        .collect::<Result<_>>()?;
    let recon = SpectralField::new(lattice, total)?.to_physical();
    let reconstruction_error = if l2_norm(f) == 0.0 {
        0.0
    } else {
        relative_l2_error(&recon, f)?
    };
    Ok(AtomicDecomposition {
        lambda_sum: levels.iter().map(|l| l.lambda.abs()).sum(),
        layer_cake_sum: layer_cake,
        eps_trunc: 2f64.powi(l_min) * lattice.torus_volume(),
        levels,
        source_hash: hash,
        reconstruction_error,
        level_range: Some((l_min, l_max)),
        s_heat_l1,
        l2_bound,
        degenerate_levels: degenerate,
    })
}

/// `sum_l lambda_l a_l`.
pub fn reconstruct(dec: &AtomicDecomposition, lattice: &LatticeSpec) -> GridFunction {
    dec.levels
        .iter()
        .fold(GridFunction::zeros(*lattice), |acc, l| {
            acc.add(&l.atom.scaled(l.lambda))
                .expect("atoms share the lattice")
        })
}

/// Cells covered by the union of `dilation * R` (concentric, periodic).
pub fn dilated_union(lattice: &LatticeSpec, rects: &[DyadicRectangle], dilation: f64) -> Vec<bool> {
    let n = lattice.points_per_axis;
    let d = lattice.dim();
    let side = n + 1;
    let mut diff = vec![0i64; side.pow(d as u32)];
    let strides: Vec<usize> = (0..d).map(|a| side.pow((d - 1 - a) as u32)).collect();
    for r in rects {
        let ranges: Vec<Vec<(usize, usize)>> = (0..d)
            .map(|axis| {
                let w = if axis < lattice.n {
                    r.x_cells()
                } else {
                    r.y_cells()
                } as f64;
                let centre = r.anchor[axis] as f64 + w / 2.0;
                let lo = (centre - dilation * w / 2.0 + 1e-9).floor() as i64;
                let hi = (centre + dilation * w / 2.0 - 1e-9).ceil() as i64;
                let len = (hi - lo) as usize;
                if len >= n {
                    return vec![(0, n)];
                }
                let start = lo.rem_euclid(n as i64) as usize;
                if start + len <= n {
                    vec![(start, start + len)]
                } else {
                    vec![(start, n), (0, start + len - n)]
                }
            })
            .collect();
        let mut choice = vec![0usize; d];
        loop {
            for corner in 0..(1usize << d) {
                let mut idx = 0;
                let mut sign = 1i64;
                for axis in 0..d {
                    let (lo, hi) = ranges[axis][choice[axis]];
                    if corner >> axis & 1 == 1 {
                        idx += hi * strides[axis];
                        sign = -sign;
                    } else {
                        idx += lo * strides[axis];
                    }
                }
                diff[idx] += sign;
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    break;
                }
                axis -= 1;
                choice[axis] += 1;
                if choice[axis] < ranges[axis].len() {
                    break;
                }
                choice[axis] = 0;
                if axis == 0 {
                    axis = usize::MAX;
                    break;
                }
            }
            if axis == usize::MAX || choice.iter().all(|&c| c == 0) {
                break;
            }
        }
    }
    for axis in 0..d {
        let stride = strides[axis];
        for i in 0..diff.len() {
            if !(i / stride).is_multiple_of(side) {
                diff[i] += diff[i - stride];
            }
        }
    }
    (0..lattice.len())
        .map(|flat| {
            let multi = lattice.multi_index(flat);
            diff[multi
                .iter()
                .zip(&strides)
                .map(|(c, s)| c * s)
                .sum::<usize>()]
                > 0
        })
        .collect()
}

/// Fraction of `||a||_2^2` on the cells of `inside`; 1 for `a = 0`.
fn mass_fraction(a: &GridFunction, inside: &[bool]) -> f64 {
    let total: f64 = a.values().iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 1.0;
    }
    let kept: f64 = a
        .values()
        .iter()
        .zip(inside)
        .filter(|(_, &b)| b)
        .map(|(v, _)| v * v)
        .sum();
    (kept / total).clamp(0.0, 1.0)
}

/// Laplacian-power budget: `a` is split over the maximal rectangles of
/// `omega` with `l(I) <= l(J)` (each cell to the first containing rectangle),
/// `b_R = D1^{-M} D2^{-M} a_R` on modes with `zeta != 0` and `eta != 0`, and the
/// weighted sums are evaluated by Parseval. Returns the largest sum over
/// `0 <= k1, k2 <= M`, multiplied by `|omega|`.
pub fn atom_budget(a: &GridFunction, omega: &OpenSet, m_power: u32) -> Result<f64> {
    let lattice = *a.lattice();
    let rects: Vec<DyadicRectangle> = maximal_subrectangles(omega, MaximalityMode::All)?
        .into_iter()
        .filter(|r| r.x_log <= r.y_log)
        .collect();
    let geom = lattice.spectral_geometry();
    let m = m_power as i32;
    let mut owner = vec![usize::MAX; lattice.len()];
    for (ri, r) in rects.iter().enumerate() {
        for c in r.cell_indices(&lattice) {
            if owner[c] == usize::MAX {
                owner[c] = ri;
            }
        }
    }
    let sums: Vec<Vec<f64>> = rects
        .par_iter()
        .enumerate()
        .map(|(ri, r)| {
            let piece: Vec<f64> = a
                .values()
                .iter()
                .zip(&owner)
                .map(|(&v, &o)| if o == ri { v } else { 0.0 })
                .collect();
            let spec = to_spectral(&GridFunction::from_parts_unchecked(lattice, piece));
            let (li, lj) = r.sides(&lattice);
            let norm = lattice.cell_volume() / lattice.len() as f64;
            let mut out = vec![0.0; ((m + 1) * (m + 1)) as usize];
            for (i, c) in spec.coefficients().iter().enumerate() {
                let (x, y) = (li * geom.r[i], lj * geom.rho[i]);
                if x == 0.0 || y == 0.0 {
                    continue;
                }
                let e = c.norm_sqr() * norm;
                for k1 in 0..=m {
                    for k2 in 0..=m {
                        out[(k1 * (m + 1) + k2) as usize] +=
                            e * x.powi(4 * (k1 - m)) * y.powi(4 * (k2 - m));
                    }
                }
            }
            out
        })
        .collect();
    let mut best = 0.0f64;
    for slot in 0..((m + 1) * (m + 1)) as usize {
        best = best.max(sums.iter().map(|s| s[slot]).sum());
    }
    Ok(best * omega.measure())
}

fn check_atom(
    a: &GridFunction,
    omega: &OpenSet,
    dilation: f64,
    tol: &AtomTolerances,
    budget: Option<f64>,
) -> Result<AtomValidationReport> {
    let rects = maximal_subrectangles(omega, MaximalityMode::All)?;
    let support = mass_fraction(a, &dilated_union(a.lattice(), &rects, dilation));
    let l2 = l2_norm(a) * omega.measure().sqrt();
    let budget_ok = match (budget, tol.max_budget) {
        (Some(b), Some(limit)) => b <= limit,
        _ => true,
    };
    Ok(AtomValidationReport {
        support_mass_inside: support,
        l2_norm_ratio: l2,
        per_rectangle_budget: budget,
        passed: support >= tol.min_support_mass && l2 <= tol.max_l2_ratio && budget_ok,
    })
}

/// Support, norm and budget checks of a candidate atom on `omega`.
pub fn validate_atom(
    a: &GridFunction,
    omega: &OpenSet,
    m_power: u32,
    dilation: f64,
    tol: &AtomTolerances,
) -> Result<AtomValidationReport> {
    let lattice = a.lattice();
    if lattice != omega.lattice() {
        return Err(FlagError::LatticeMismatch);
    }
    if 4 * m_power as usize <= lattice.n.max(lattice.m) {
        return Err(FlagError::Config(format!(
            "M = {m_power} must exceed max(n, m)/4"
        )));
    }
    let budget = atom_budget(a, omega, m_power)?;
    check_atom(a, omega, dilation, tol, Some(budget))
}

/// `D1^M D2^M b` for a Gaussian `b` centred in `rect` with widths
/// `width_fraction` times the sides, scaled so that the norm ratio and the
/// square root of the budget on `Omega = rect` are both `0.9`.
pub fn synthetic_atom(
    lattice: &LatticeSpec,
    rect: &DyadicRectangle,
    m_power: u32,
    width_fraction: f64,
) -> Result<GridFunction> {
    let h = lattice.spacing();
    let (lx, ly) = rect.sides(lattice);
    let centre: Vec<f64> = (0..lattice.dim())
        .map(|a| {
            let w = if a < lattice.n { lx } else { ly };
            rect.anchor[a] as f64 * h + w / 2.0
        })
        .collect();
    let period = lattice.period;
    let b = GridFunction::from_fn(*lattice, |p| {
        let mut q = 0.0;
        for (a, &x) in p.iter().enumerate() {
            let sigma = width_fraction * if a < lattice.n { lx } else { ly };
            let dx = (x - centre[a] + period / 2.0).rem_euclid(period) - period / 2.0;
            q += dx * dx / (2.0 * sigma * sigma);
        }
        (-q).exp()
    })?;
    let geom = lattice.spectral_geometry();
    let m = m_power as i32;
    let raw = b
        .to_spectral()
        .filter_real(|i| (geom.r[i] * geom.r[i]).powi(m) * (geom.rho[i] * geom.rho[i]).powi(m));
    let omega = OpenSet::from_rectangles(*lattice, std::slice::from_ref(rect));
    let l2 = l2_norm(&raw) * omega.measure().sqrt();
    let budget = atom_budget(&raw, &omega, m_power)?.sqrt();
    let scale = l2.max(budget);
    if scale == 0.0 {
        return Err(FlagError::InvalidRectangle(
            "rectangle too small for a synthetic atom".into(),
        ));
    }
    Ok(raw.scaled(0.9 / scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelManifest {
    pub level: i32,
    pub lambda: f64,
    pub omega_measure: f64,
    pub omega_tilde_measure: f64,
    pub rectangle_count: usize,
    pub atom_file: String,
    pub omega_file: String,
    pub omega_tilde_file: String,
    pub rectangles_file: String,
    pub validation: AtomValidationReport,
}

/// Contents of `manifest.json` in a decomposition directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionManifest {
    pub source_hash: String,
    pub reconstruction_error: f64,
    pub level_range: Option<(i32, i32)>,
    pub s_heat_l1: f64,
    pub lambda_sum: f64,
    pub layer_cake_sum: f64,
    pub eps_trunc: f64,
    pub l2_bound: f64,
    pub degenerate_levels: Vec<i32>,
    pub levels: Vec<LevelManifest>,
}

/// Writes per level `atom_l<l>.f64` (+ sidecar), `omega_l<l>.rle`,
/// `omega_tilde_l<l>.rle` and `rectangles_l<l>.json`, then `manifest.json`.
pub fn write_decomposition(dir: &Path, dec: &AtomicDecomposition) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut levels = Vec::new();
    for l in &dec.levels {
        let entry = LevelManifest {
            level: l.level,
            lambda: l.lambda,
            omega_measure: l.omega.measure(),
            omega_tilde_measure: l.omega_tilde.measure(),
            rectangle_count: l.rectangles.len(),
            atom_file: format!("atom_l{}.f64", l.level),
            omega_file: format!("omega_l{}.rle", l.level),
            omega_tilde_file: format!("omega_tilde_l{}.rle", l.level),
            rectangles_file: format!("rectangles_l{}.json", l.level),
            validation: l.validation.clone(),
        };
        write_grid(&dir.join(&entry.atom_file), &l.atom, Some("atom"))?;
        fs::write(dir.join(&entry.omega_file), l.omega.to_rle())?;
        fs::write(dir.join(&entry.omega_tilde_file), l.omega_tilde.to_rle())?;
        fs::write(
            dir.join(&entry.rectangles_file),
            serde_json::to_string(&l.rectangles)? + "\n",
        )?;
        levels.push(entry);
    }
    let manifest = DecompositionManifest {
        source_hash: dec.source_hash.clone(),
        reconstruction_error: dec.reconstruction_error,
        level_range: dec.level_range,
        s_heat_l1: dec.s_heat_l1,
        lambda_sum: dec.lambda_sum,
        layer_cake_sum: dec.layer_cake_sum,
        eps_trunc: dec.eps_trunc,
        l2_bound: dec.l2_bound,
        degenerate_levels: dec.degenerate_levels.clone(),
        levels,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Loads a directory written by [`write_decomposition`].
pub fn read_decomposition(dir: &Path) -> Result<AtomicDecomposition> {
    let manifest: DecompositionManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut levels = Vec::with_capacity(manifest.levels.len());
    for entry in manifest.levels {
        let (atom, _) = read_grid(&dir.join(&entry.atom_file))?;
        let omega = OpenSet::from_rle(&fs::read_to_string(dir.join(&entry.omega_file))?)?;
        let omega_tilde =
            OpenSet::from_rle(&fs::read_to_string(dir.join(&entry.omega_tilde_file))?)?;
        let rectangles: Vec<DyadicRectangle> =
            serde_json::from_str(&fs::read_to_string(dir.join(&entry.rectangles_file))?)?;
        if omega.lattice() != atom.lattice() || omega_tilde.lattice() != atom.lattice() {
            return Err(FlagError::LatticeMismatch);
        }
        if rectangles.len() != entry.rectangle_count {
            return Err(FlagError::Format(format!(
                "level {}: manifest lists {} rectangles, file has {}",
                entry.level,
                entry.rectangle_count,
                rectangles.len()
            )));
        }
        levels.push(LevelData {
            level: entry.level,
            omega,
            omega_tilde,
            rectangles,
            lambda: entry.lambda,
            atom,
            validation: entry.validation,
        });
    }
    Ok(AtomicDecomposition {
        levels,
        source_hash: manifest.source_hash,
        reconstruction_error: manifest.reconstruction_error,
        level_range: manifest.level_range,
        s_heat_l1: manifest.s_heat_l1,
        lambda_sum: manifest.lambda_sum,
        layer_cake_sum: manifest.layer_cake_sum,
        eps_trunc: manifest.eps_trunc,
        l2_bound: manifest.l2_bound,
        degenerate_levels: manifest.degenerate_levels,
    })
}

/// Rectangle counts per level, for reports.
pub fn class_sizes(dec: &AtomicDecomposition) -> BTreeMap<i32, usize> {
    dec.levels
        .iter()
        .map(|l| (l.level, l.rectangles.len()))
        .collect()
}
