//! Test corpus, the nine-norm comparison table and the Plancherel-Polya
//! sup/inf comparison.
//!
//! Every corpus member is defined by continuous Fourier data on the torus, so
//! the same member sampled at `N` and `2N` is the same function up to the
//! discarded spectral tail. All members are projected onto the admissible
//! subspace: no mass on `eta = 0` and none on Nyquist modes.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atomic::synthetic_atom;
use crate::dyadic::{journe_sum_check, log2_points, DyadicRectangle, OpenSet};
use crate::error::{FlagError, Result};
use crate::flagconv::{
    calderon_reconstruct, compute_coefficients, filtered, per_t_row, PairSymbols, ScaleGrid,
};
use crate::kernels::{build_heat_pair, build_lp_pair, build_poisson_pair, Calibration, KernelPair};
use crate::lattice::{
    l1_norm, l2_norm, relative_l2_error, GridFunction, LatticeSpec, SpectralField,
};
use crate::maximal::{nontangential_max, radial_max};
use crate::riesz::{
    apply_riesz, conjugate_system_residual, default_heat_t_max, involution_residual,
    isometry_defect, riesz_norm, riesz_via_heat,
};
use crate::square::{g_F, s_heat, S_F_u, S_F};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `f(x, y) = int f1(x, y - z) f2(z) dz` with a Laplacian-of-Gaussian `f1`
    /// and a Gaussian-derivative `f2`.
    FlagGaussian,
    /// Random superposition of plane waves with `0 < |eta|`.
    BandLimitedRandom,
    /// Laplacian-power packets on one dyadic rectangle.
    SyntheticAtom,
    /// One flag Gaussian translated and dilated.
    TranslatedDilated,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::FlagGaussian,
        Family::BandLimitedRandom,
        Family::SyntheticAtom,
        Family::TranslatedDilated,
    ];

    /// Identifier used in file names and reports.
    pub fn name(self) -> &'static str {
        match self {
            Family::FlagGaussian => "flag_gaussian",
            Family::BandLimitedRandom => "band_limited_random",
            Family::SyntheticAtom => "synthetic_atom",
            Family::TranslatedDilated => "translated_dilated",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Family::FlagGaussian => 1,
            Family::BandLimitedRandom => 2,
            Family::SyntheticAtom => 3,
            Family::TranslatedDilated => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct FamilyCount {
    pub family: Family,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub families: Vec<FamilyCount>,
}

impl CorpusSpec {
    /// The 24-member mix: 8 flag Gaussians, 6 band-limited, 4 synthetic atoms,
    /// 6 translated/dilated variants.
    pub fn standard(seed: u64) -> Self {
        let counts = [8, 6, 4, 6];
        Self {
            seed,
            families: Family::ALL
                .iter()
                .zip(counts)
                .map(|(&family, count)| FamilyCount { family, count })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.families.iter().map(|f| f.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct CorpusMember {
    pub family: Family,
    /// Position within its family.
    pub index: usize,
    pub f: GridFunction,
}

/// Whether mode `idx` is a Nyquist mode on some axis.
fn is_nyquist(lattice: &LatticeSpec, idx: usize) -> bool {
    let half = lattice.points_per_axis / 2;
    lattice.multi_index(idx).contains(&half)
}

/// Zeroes the `eta = 0` line, the Nyquist modes and the mean.
pub fn admissible_projection(f: &GridFunction) -> GridFunction {
    let lattice = *f.lattice();
    let geom = lattice.spectral_geometry();
    f.to_spectral().filter_real(|i| {
        if geom.rho[i] == 0.0 || is_nyquist(&lattice, i) {
            0.0
        } else {
            1.0
        }
    })
}

/// Fraction of `||f||_2^2` on inadmissible modes.
pub fn inadmissible_mass(f: &GridFunction) -> f64 {
    let lattice = *f.lattice();
    let geom = lattice.spectral_geometry();
    let spec = f.to_spectral();
    let total = spec.energy();
    if total == 0.0 {
        return 0.0;
    }
    let bad: f64 = spec
        .coefficients()
        .iter()
        .enumerate()
        .filter(|(i, _)| geom.rho[*i] == 0.0 || is_nyquist(&lattice, *i))
        .map(|(_, c)| c.norm_sqr())
        .sum();
    bad / total
}

/// Real function with continuous Fourier data `c(xi)` (times the torus volume).
fn from_fourier(lattice: &LatticeSpec, c: impl Fn(&[f64]) -> Complex64) -> Result<GridFunction> {
    let geom = lattice.spectral_geometry();
    let d = lattice.dim();
    let scale = lattice.len() as f64;
    let mut xi = vec![0.0; d];
    let coeffs: Vec<Complex64> = (0..lattice.len())
        .map(|i| {
            if geom.rho[i] == 0.0 || is_nyquist(lattice, i) {
                return Complex64::default();
            }
            for (a, x) in xi.iter_mut().enumerate() {
                *x = geom.component(i, a);
            }
            c(&xi) * scale
        })
        .collect();
    Ok(SpectralField::new(*lattice, coeffs)?.to_physical())
}

/// Flag Gaussian with `f1 = -Delta G_a`, `f2 = d^q/dz^q G_b`, centred at `centre`.
fn flag_gaussian(
    lattice: &LatticeSpec,
    a: f64,
    b: f64,
    q: u32,
    centre: &[f64],
) -> Result<GridFunction> {
    let half = lattice.period / 2.0;
    for width in [a, (a * a + b * b).sqrt()] {
        if 6.0 * width > half {
            return Err(FlagError::InvalidCorpus(format!(
                "Gaussian width {width:.3} violates the decay margin for period {}",
                lattice.period
            )));
        }
    }
    let n = lattice.n;
    let iq = Complex64::i().powu(q);
    from_fourier(lattice, |xi| {
        let r2: f64 = xi.iter().map(|x| x * x).sum();
        let rho2: f64 = xi[n..].iter().map(|x| x * x).sum();
        let eta1 = xi[n];
        let phase: f64 = xi.iter().zip(centre).map(|(x, c)| x * c).sum();
        let amp =
            r2 * (-a * a * r2 / 2.0).exp() * eta1.powi(q as i32) * (-b * b * rho2 / 2.0).exp();
        iq * amp * Complex64::from_polar(1.0, -phase)
    })
}

fn band_limited(lattice: &LatticeSpec, rng: &mut ChaCha8Rng) -> Result<GridFunction> {
    let d = lattice.dim();
    let w = 2.0 * PI / lattice.period;
    let max_q = 12i64;
    if 2 * max_q >= lattice.points_per_axis as i64 {
        return Err(FlagError::InvalidCorpus(
            "band-limited members need N > 24".into(),
        ));
    }
    let waves: Vec<(Vec<f64>, f64, f64)> = (0..16)
        .map(|_| {
            let mut q: Vec<i64> = (0..d).map(|_| rng.gen_range(-max_q..=max_q)).collect();
            if q[lattice.n..].iter().all(|&v| v == 0) {
                q[lattice.n] = if rng.gen_bool(0.5) { 1 } else { -1 };
            }
            let k: Vec<f64> = q.iter().map(|&v| v as f64 * w).collect();
            let norm: f64 = q.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            (
                k,
                rng.gen_range(0.5..1.5) / (1.0 + norm / 4.0),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    GridFunction::from_fn(*lattice, |p| {
        waves
            .iter()
            .map(|(k, a, ph)| a * (k.iter().zip(p).map(|(k, x)| k * x).sum::<f64>() + ph).cos())
            .sum()
    })
}

/// Synthetic atom on a rectangle with physical sides `period / 2^px`,
/// `period / 2^py` and a random aligned position.
fn atom_member(lattice: &LatticeSpec, rng: &mut ChaCha8Rng) -> Result<GridFunction> {
    let k = log2_points(lattice)?;
    let px = rng.gen_range(2..=3u32);
    let py = rng.gen_range(1..=3u32);
    if px.max(py) + 3 > k {
        return Err(FlagError::InvalidCorpus(
            "lattice too coarse for synthetic atoms".into(),
        ));
    }
    let slots_x = 1usize << px;
    let slots_y = 1usize << py;
    let anchor: Vec<usize> = (0..lattice.dim())
        .map(|a| {
            if a < lattice.n {
                rng.gen_range(0..slots_x) << (k - px)
            } else {
                rng.gen_range(0..slots_y) << (k - py)
            }
        })
        .collect();
    let rect = DyadicRectangle::new(lattice, k - px, k - py, anchor)?;
    synthetic_atom(lattice, &rect, 1, rng.gen_range(0.08..0.14))
}

fn member(family: Family, index: usize, seed: u64, lattice: &LatticeSpec) -> Result<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(family.stream() << 32 | index as u64);
    let period = lattice.period;
    let mut centre = || -> Vec<f64> {
        (0..lattice.dim())
            .map(|_| rng.gen_range(0.0..period))
            .collect()
    };
    let raw = match family {
        Family::FlagGaussian => {
            let c = centre();
            let a = rng.gen_range(0.3..0.9);
            let b = rng.gen_range(0.2..0.7);
            let q = rng.gen_range(1..=2);
            flag_gaussian(lattice, a, b, q, &c)?
        }
        Family::TranslatedDilated => {
            let c = centre();
            let dil = 2f64.powf(rng.gen_range(-1.0..1.0));
            flag_gaussian(lattice, 0.5 * dil, 0.4 * dil, 1, &c)?
        }
        Family::BandLimitedRandom => band_limited(lattice, &mut rng)?,
        Family::SyntheticAtom => atom_member(lattice, &mut rng)?,
    };
    let f = admissible_projection(&raw);
    let norm = l2_norm(&f);
    if norm == 0.0 || !norm.is_finite() {
        return Err(FlagError::InvalidCorpus(format!(
            "{family:?} member {index} vanished"
        )));
    }
    let f = f.scaled(1.0 / norm);
    let leak = inadmissible_mass(&f);
    if leak > 1e-24 {
        return Err(FlagError::InvalidCorpus(format!(
            "{family:?} member {index} has inadmissible mass {leak:e}"
        )));
    }
    Ok(f)
}

/// Generates the corpus in family order. Members are `L^2`-normalized.
pub fn gen_corpus(spec: &CorpusSpec, lattice: &LatticeSpec) -> Result<Vec<CorpusMember>> {
    let jobs: Vec<(Family, usize)> = spec
        .families
        .iter()
        .flat_map(|fc| (0..fc.count).map(move |i| (fc.family, i)))
        .collect();
    jobs.par_iter()
        .map(|&(family, index)| {
            Ok(CorpusMember {
                family,
                index,
                f: member(family, index, spec.seed, lattice)?,
            })
        })
        .collect()
}

pub const NORM_COUNT: usize = 9;
pub const NORM_NAMES: [&str; NORM_COUNT] = [
    "g_F", "S_F", "M_star", "M_plus", "u_star", "u_plus", "S_F_u", "riesz", "S_heat",
];

#[derive(Debug, Clone, Serialize)]
pub struct NormConfig {
    pub scale_grid: ScaleGrid,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormRow {
    pub family: Family,
    pub index: usize,
    pub norms: [f64; NORM_COUNT],
    /// `M+ <= M*` and `u+ <= u*` at every grid point.
    pub dominations_hold: bool,
    pub pp_sup: f64,
    pub pp_inf: f64,
}

impl NormRow {
    /// `norms[a] / norms[b]`.
    pub fn ratio(&self, a: usize, b: usize) -> f64 {
        self.norms[a] / self.norms[b]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormTable {
    pub rows: Vec<NormRow>,
    /// Smallest and largest per-function ratio for each ordered pair.
    pub ratio_min: Vec<Vec<f64>>,
    pub ratio_max: Vec<Vec<f64>>,
    /// `max over pairs of (max ratio / min ratio)`.
    pub c_emp: f64,
    /// Largest `pp_sup / pp_inf`.
    pub pp_c_emp: f64,
}

fn norms_of(f: &GridFunction, config: &NormConfig) -> Result<NormRow> {
    let lattice = f.lattice();
    let grid = &config.scale_grid;
    let lp = build_lp_pair(lattice, config.calibration, Some(grid))?;
    let heat = build_heat_pair(lattice);
    let poisson = build_poisson_pair(lattice);
    let m_plus = radial_max(f, &heat, grid).value;
    let m_star = nontangential_max(f, &heat, grid).value;
    let u_plus = radial_max(f, &poisson, grid).value;
    let u_star = nontangential_max(f, &poisson, grid).value;
    let dominated =
        |a: &GridFunction, b: &GridFunction| a.values().iter().zip(b.values()).all(|(x, y)| x <= y);
    let dominations_hold = dominated(&m_plus, &m_star) && dominated(&u_plus, &u_star);
    let (pp_sup, pp_inf) = pp_check(f, &lp, grid)?;
    let norms = [
        l1_norm(&g_F(f, &lp, grid)?.value),
        l1_norm(&S_F(f, &lp, grid)?.value),
        l1_norm(&m_star),
        l1_norm(&m_plus),
        l1_norm(&u_star),
        l1_norm(&u_plus),
        l1_norm(&S_F_u(f, grid)?.value),
        riesz_norm(f),
        l1_norm(&s_heat(f, grid)?.value),
    ];
    Ok(NormRow {
        family: Family::FlagGaussian,
        index: 0,
        norms,
        dominations_hold,
        pp_sup,
        pp_inf,
    })
}

/// All nine norms per member, the ratio extremes and `C_emp`.
pub fn norm_table(corpus: &[CorpusMember], config: &NormConfig) -> Result<NormTable> {
    if corpus.is_empty() {
        return Err(FlagError::InvalidCorpus("empty corpus".into()));
    }
    if !config.scale_grid.full_coverage() {
        return Err(FlagError::InvalidScaleGrid(
            "norm table needs a full-coverage scale grid".into(),
        ));
    }
    let rows: Vec<NormRow> = corpus
        .par_iter()
        .map(|m| {
            let mut row = norms_of(&m.f, config)?;
            row.family = m.family;
            row.index = m.index;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(summarize(rows))
}

/// Ratio extremes, `C_emp` and the Plancherel-Polya constant of a set of rows.
pub fn summarize(rows: Vec<NormRow>) -> NormTable {
    let mut ratio_min = vec![vec![f64::INFINITY; NORM_COUNT]; NORM_COUNT];
    let mut ratio_max = vec![vec![0.0f64; NORM_COUNT]; NORM_COUNT];
    for row in &rows {
        for a in 0..NORM_COUNT {
            for b in 0..NORM_COUNT {
                let r = row.ratio(a, b);
                ratio_min[a][b] = ratio_min[a][b].min(r);
                ratio_max[a][b] = ratio_max[a][b].max(r);
            }
        }
    }
    let mut c_emp = 1.0f64;
    for a in 0..NORM_COUNT {
        for b in 0..NORM_COUNT {
            c_emp = c_emp.max(ratio_max[a][b] / ratio_min[a][b]);
        }
    }
    let pp_c_emp = rows.iter().map(|r| r.pp_sup / r.pp_inf).fold(1.0, f64::max);
    NormTable {
        rows,
        ratio_min,
        ratio_max,
        c_emp,
        pp_c_emp,
    }
}

/// Largest relative change `|r'/r - 1|` of any per-member ratio and of the
/// Plancherel-Polya ratio between two tables over the same corpus.
pub fn max_ratio_change(base: &NormTable, refined: &NormTable) -> Result<f64> {
    if base.rows.len() != refined.rows.len() {
        return Err(FlagError::InvalidCorpus(
            "tables cover different corpora".into(),
        ));
    }
    let mut worst = 0.0f64;
    for (x, y) in base.rows.iter().zip(&refined.rows) {
        for a in 0..NORM_COUNT {
            for b in 0..NORM_COUNT {
                worst = worst.max((y.ratio(a, b) / x.ratio(a, b) - 1.0).abs());
            }
        }
    }
    Ok(worst)
}

/// `log2` of the cell counts of the Plancherel-Polya cells at block `(j, k)`:
/// side `2^{-j}` in x and `2^{-min(j,k)}` in y.
pub fn pp_cell_shape(lattice: &LatticeSpec, j: i32, k: i32) -> Result<(u32, u32)> {
    let kk = log2_points(lattice)?;
    let to_log = |side: f64| ((side / lattice.spacing()).log2().round().max(0.0) as u32).min(kk);
    Ok((to_log(2f64.powi(-j)), to_log(2f64.powi(-j.min(k)))))
}

/// Tile id of every grid point for aligned cells of `2^x_log` by `2^y_log` points.
fn tile_map(lattice: &LatticeSpec, x_log: u32, y_log: u32) -> (Vec<u32>, usize) {
    let d = lattice.dim();
    let shifts: Vec<u32> = (0..d)
        .map(|a| if a < lattice.n { x_log } else { y_log })
        .collect();
    let counts: Vec<usize> = shifts
        .iter()
        .map(|&e| lattice.points_per_axis >> e)
        .collect();
    let map = (0..lattice.len())
        .map(|i| {
            let multi = lattice.multi_index(i);
            let mut id = 0usize;
            for a in 0..d {
                id = id * counts[a] + (multi[a] >> shifts[a]);
            }
            id as u32
        })
        .collect();
    (map, counts.iter().product())
}

/// Sup and inf Plancherel-Polya quantities
/// `|| (sum_{j,k} w^2 sum_cells (sup|inf)_cell |psi_{j,k} * f|^2 chi_cell)^{1/2} ||_1`
/// with the cells of [`pp_cell_shape`].
pub fn pp_check(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid) -> Result<(f64, f64)> {
    let lattice = *f.lattice();
    let mut shapes = Vec::new();
    for ti in 0..grid.t_scales().len() {
        let row: Vec<(u32, u32)> = (0..grid.s_scales().len())
            .map(|si| pp_cell_shape(&lattice, grid.j_of(ti), grid.k_of(si)))
            .collect::<Result<_>>()?;
        shapes.push(row);
    }
    pp_with_shapes(f, pair, grid, &shapes)
}

/// Plancherel-Polya quantities with explicit cell shapes `shapes[ti][si]`.
pub fn pp_with_shapes(
    f: &GridFunction,
    pair: &KernelPair,
    grid: &ScaleGrid,
    shapes: &[Vec<(u32, u32)>],
) -> Result<(f64, f64)> {
    let lattice = *f.lattice();
    let k = log2_points(&lattice)?;
    if shapes.iter().flatten().any(|&(a, b)| a > k || b > k) {
        return Err(FlagError::InvalidRectangle(
            "cell larger than the torus".into(),
        ));
    }
    let mut maps: HashMap<(u32, u32), (Vec<u32>, usize)> = HashMap::new();
    for &shape in shapes.iter().flatten() {
        maps.entry(shape)
            .or_insert_with(|| tile_map(&lattice, shape.0, shape.1));
    }
    let spec = f.to_spectral();
    let symbols = PairSymbols::new(pair, &lattice);
    let ts = grid.t_scales();
    let ss = grid.s_scales();
    let w2 = grid.weight().powi(2);
    let s_factors: Vec<Vec<f64>> = ss.iter().map(|&s| symbols.factor2(s)).collect();
    let rows = per_t_row(ts.len(), |ti| {
        let a = symbols.factor1(ts[ti]);
        let mut sup_acc = vec![0.0; lattice.len()];
        let mut inf_acc = vec![0.0; lattice.len()];
        for si in 0..ss.len() {
            let block = filtered(&spec, &a, &s_factors[si]);
            let (map, tiles) = &maps[&shapes[ti][si]];
            let mut hi = vec![0.0f64; *tiles];
            let mut lo = vec![f64::INFINITY; *tiles];
            for (&id, v) in map.iter().zip(block.values()) {
                let v = v.abs();
                hi[id as usize] = hi[id as usize].max(v);
                lo[id as usize] = lo[id as usize].min(v);
            }
            for ((s, i), &id) in sup_acc.iter_mut().zip(inf_acc.iter_mut()).zip(map) {
                *s += w2 * hi[id as usize] * hi[id as usize];
                *i += w2 * lo[id as usize] * lo[id as usize];
            }
        }
        (sup_acc, inf_acc)
    });
    let mut sup = vec![0.0; lattice.len()];
    let mut inf = vec![0.0; lattice.len()];
    for (s_row, i_row) in rows {
        for (a, v) in sup.iter_mut().zip(s_row) {
            *a += v;
        }
        for (a, v) in inf.iter_mut().zip(i_row) {
            *a += v;
        }
    }
    let cv = lattice.cell_volume();
    Ok((
        sup.iter().map(|v| v.sqrt()).sum::<f64>() * cv,
        inf.iter().map(|v| v.sqrt()).sum::<f64>() * cv,
    ))
}

/// Tolerances of the spectral identity suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct IdentityTolerances {
    /// `| ||g_F f||_2 / ||f||_2 - 1 |` with the renormalized pair.
    pub lp_identity: f64,
    /// Relative reconstruction error with the renormalized pair.
    pub calderon_renormalized: f64,
    /// Relative distance of the analytic one-sample reconstruction to the
    /// eight-sample reconstruction.
    pub calderon_analytic: f64,
    pub riesz_involution: f64,
    pub riesz_isometry: f64,
    /// Heat-integral path against the multiplier path, relative `L^2`.
    pub riesz_heat: f64,
    pub conjugate_system: f64,
}

impl Default for IdentityTolerances {
    fn default() -> Self {
        Self {
            lp_identity: 1e-8,
            calderon_renormalized: 1e-10,
            calderon_analytic: 2e-2,
            riesz_involution: 1e-10,
            riesz_isometry: 1e-10,
            riesz_heat: 1e-6,
            conjugate_system: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub member: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `| ||g_F f||_2 / ||f||_2 - 1 |` with the renormalized LP pair.
pub fn lp_identity_residual(f: &GridFunction, grid: &ScaleGrid) -> Result<f64> {
    let pair = build_lp_pair(f.lattice(), Calibration::DiscretelyRenormalized, Some(grid))?;
    Ok((l2_norm(&g_F(f, &pair, grid)?.value) / l2_norm(f) - 1.0).abs())
}

/// Relative `L^2` error of the Calderon reconstruction.
pub fn calderon_residual(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid) -> Result<f64> {
    let coeffs = compute_coefficients(f, pair, grid)?;
    relative_l2_error(&calderon_reconstruct(&coeffs, pair)?, f)
}

/// Relative distance between the analytic LP reconstruction on `grid` and
/// the same block range with `samples` samples per block, the latter applied
/// directly as the separable multiplier `(sum_t w m1(t r)^2)(sum_s w m2(s rho)^2)`.
pub fn calderon_quadrature_residual(
    f: &GridFunction,
    grid: &ScaleGrid,
    samples: u32,
) -> Result<f64> {
    let lattice = f.lattice();
    let pair = build_lp_pair(lattice, Calibration::Analytic, None)?;
    let coarse = calderon_reconstruct(&compute_coefficients(f, &pair, grid)?, &pair)?;
    let fine = grid.with_samples(lattice, samples)?;
    let symbols = PairSymbols::new(&pair, lattice);
    let w = fine.weight();
    let accumulate = |tables: Vec<Vec<f64>>| {
        let mut acc = vec![0.0; lattice.len()];
        for table in tables {
            for (a, v) in acc.iter_mut().zip(table) {
                *a += w * v * v;
            }
        }
        acc
    };
    let x = accumulate(
        fine.t_scales()
            .iter()
            .map(|&t| symbols.factor1(t))
            .collect(),
    );
    let y = accumulate(
        fine.s_scales()
            .iter()
            .map(|&s| symbols.factor2(s))
            .collect(),
    );
    let refined = f
        .to_spectral()
        .filter_real(|i| if i == 0 { 1.0 } else { x[i] * y[i] });
    relative_l2_error(&coarse, &refined)
}

/// Largest relative `L^2` distance between the heat-integral and multiplier
/// evaluations of `R_{j,k} f`.
pub fn riesz_heat_residual(f: &GridFunction) -> Result<f64> {
    let t_max = default_heat_t_max(f);
    let lattice = f.lattice();
    let mut worst = 0.0f64;
    for j in 1..=lattice.dim() {
        for k in 1..=lattice.m {
            let direct = apply_riesz(f, j, k)?;
            let heat = riesz_via_heat(f, j, k, t_max)?;
            let scale = l2_norm(&direct).max(l2_norm(f) * 1e-300);
            worst = worst.max(l2_norm(&heat.sub(&direct)?) / scale);
        }
    }
    Ok(worst)
}

/// Spectral identities on one admissible function: LP `L^2` identity,
/// Calderon reconstruction (renormalized and analytic against refined
/// quadrature), Riesz involution, isometry and heat path, and the conjugate
/// system residual at `t = s = 0.25` and `t = s = 1`.
pub fn identity_suite(
    f: &GridFunction,
    member: usize,
    grid: &ScaleGrid,
    tol: &IdentityTolerances,
) -> Result<Vec<IdentityCheck>> {
    let renorm = build_lp_pair(f.lattice(), Calibration::DiscretelyRenormalized, Some(grid))?;
    let checks = [
        (
            "lp_l2_identity",
            lp_identity_residual(f, grid)?,
            tol.lp_identity,
        ),
        (
            "calderon_renormalized",
            calderon_residual(f, &renorm, grid)?,
            tol.calderon_renormalized,
        ),
        (
            "calderon_analytic_vs_refined",
            calderon_quadrature_residual(f, grid, 8)?,
            tol.calderon_analytic,
        ),
        (
            "riesz_involution",
            involution_residual(f),
            tol.riesz_involution,
        ),
        ("riesz_isometry", isometry_defect(f), tol.riesz_isometry),
        ("riesz_heat_path", riesz_heat_residual(f)?, tol.riesz_heat),
        (
            "conjugate_system_t0.25",
            conjugate_system_residual(f, 0.25, 0.25)?,
            tol.conjugate_system,
        ),
        (
            "conjugate_system_t1",
            conjugate_system_residual(f, 1.0, 1.0)?,
            tol.conjugate_system,
        ),
    ];
    Ok(checks
        .into_iter()
        .map(|(name, residual, tolerance)| IdentityCheck {
            name: name.into(),
            member,
            residual,
            tolerance,
            passed: residual <= tolerance,
        })
        .collect())
}

/// Random-set experiment for the Journe covering sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct JourneSpec {
    /// Number of random sets.
    pub count: usize,
    /// Points per axis of the lattice the sets live on (a power of two).
    pub points: usize,
    /// Exponent `delta` of the enlargement factors.
    pub delta: f64,
    /// Each set is a union of 1 to `max_pieces` random boxes.
    pub max_pieces: usize,
    /// Largest box side as a fraction of the period.
    pub max_side_fraction: f64,
}

impl Default for JourneSpec {
    fn default() -> Self {
        Self {
            count: 100,
            points: 64,
            delta: 1.0,
            max_pieces: 8,
            max_side_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneRow {
    pub index: usize,
    pub pieces: usize,
    pub measure: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Union of 1 to `max_pieces` periodic boxes with sides between one cell and
/// `max_side_fraction` of the period, drawn from stream `index` of `seed`.
pub fn random_open_set(
    lattice: &LatticeSpec,
    seed: u64,
    index: u64,
    max_pieces: usize,
    max_side_fraction: f64,
) -> Result<(OpenSet, usize)> {
    if max_pieces == 0 || !(max_side_fraction > 0.0 && max_side_fraction <= 1.0) {
        return Err(FlagError::Config(format!(
            "random sets need max_pieces >= 1 and max_side_fraction in (0, 1], got {max_pieces} and {max_side_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = lattice.points_per_axis;
    let d = lattice.dim();
    let max_side = ((n as f64 * max_side_fraction) as usize).max(1);
    let pieces = rng.gen_range(1..=max_pieces);
    let mut mask = vec![false; lattice.len()];
    for _ in 0..pieces {
        let boxes: Vec<(usize, usize)> = (0..d)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(1..=max_side)))
            .collect();
        for (idx, cell) in mask.iter_mut().enumerate() {
            let multi = lattice.multi_index(idx);
            if boxes
                .iter()
                .zip(&multi)
                .all(|(&(a, w), &q)| (q + n - a) % n < w)
            {
                *cell = true;
            }
        }
    }
    Ok((OpenSet::new(*lattice, mask)?, pieces))
}

/// Normalized covering sums of `spec.count` random sets on a
/// `spec.points`-point lattice with the shape of `lattice`.
pub fn journe_experiment(
    spec: &JourneSpec,
    lattice: &LatticeSpec,
    seed: u64,
) -> Result<Vec<JourneRow>> {
    let lat = LatticeSpec::new(lattice.n, lattice.m, spec.points, lattice.period)?;
    log2_points(&lat)?;
    (0..spec.count)
        .into_par_iter()
        .map(|index| {
            let (set, pieces) = random_open_set(
                &lat,
                seed,
                index as u64,
                spec.max_pieces,
                spec.max_side_fraction,
            )?;
            let r = journe_sum_check(&set, spec.delta)?;
            Ok(JourneRow {
                index,
                pieces,
                measure: set.measure(),
                gamma1: r.gamma1,
                gamma2: r.gamma2,
            })
        })
        .collect()
}

pub fn journe_csv(rows: &[JourneRow]) -> String {
    let mut out = String::from("index,pieces,measure,gamma1_ratio,gamma2_ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e}\n",
            r.index, r.pieces, r.measure, r.gamma1, r.gamma2
        ));
    }
    out
}

/// One row per member: family, index, the nine norms and the two
/// Plancherel-Polya quantities.
pub fn norm_table_csv(table: &NormTable) -> String {
    let mut out = String::from("member,family,index");
    for name in NORM_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",pp_sup,pp_inf,dominations_hold\n");
    for (i, row) in table.rows.iter().enumerate() {
        write!(out, "{i},{},{}", row.family.name(), row.index).expect("write to string");
        for v in row.norms {
            write!(out, ",{v:e}").expect("write to string");
        }
        writeln!(
            out,
            ",{:e},{:e},{}",
            row.pp_sup, row.pp_inf, row.dominations_hold
        )
        .expect("write to string");
    }
    out
}

/// Plot data: one line per ordered pair of norms with the ratio extremes.
pub fn ratio_csv(table: &NormTable) -> String {
    let mut out = String::from("numerator,denominator,ratio_min,ratio_max,spread\n");
    for a in 0..NORM_COUNT {
        for b in 0..NORM_COUNT {
            if a != b {
                let (lo, hi) = (table.ratio_min[a][b], table.ratio_max[a][b]);
                writeln!(
                    out,
                    "{},{},{lo:e},{hi:e},{:e}",
                    NORM_NAMES[a],
                    NORM_NAMES[b],
                    hi / lo
                )
                .expect("write to string");
            }
        }
    }
    out
}

/// Writes `norms.csv`, `ratios.csv` and `norms.json` into `dir`.
pub fn write_norm_table(dir: &Path, table: &NormTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("norms.csv"), norm_table_csv(table))?;
    fs::write(dir.join("ratios.csv"), ratio_csv(table))?;
    fs::write(
        dir.join("norms.json"),
        serde_json::to_string_pretty(table)? + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::relative_l2_error;

    fn lat(n: usize) -> LatticeSpec {
        LatticeSpec::new(1, 1, n, 16.0).unwrap()
    }

    fn small_grid(l: &LatticeSpec) -> ScaleGrid {
        ScaleGrid::new(l, -2, 4, -2, 4, 1).unwrap()
    }

    #[test]
    fn corpus_is_reproducible_and_admissible() {
        let l = lat(64);
        let spec = CorpusSpec::standard(7);
        let a = gen_corpus(&spec, &l).unwrap();
        let b = gen_corpus(&spec, &l).unwrap();
        assert_eq!(a.len(), 24);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.f, y.f);
            assert!(inadmissible_mass(&x.f) <= 1e-24);
            assert!((l2_norm(&x.f) - 1.0).abs() < 1e-12);
        }
        for (i, x) in a.iter().enumerate() {
            assert!(a[..i].iter().all(|y| y.f != x.f));
        }
        let other = gen_corpus(&CorpusSpec::standard(8), &l).unwrap();
        assert_ne!(a[0].f, other[0].f);
    }

    #[test]
    fn empty_corpus_and_decay_margin() {
        let l = lat(64);
        let spec = CorpusSpec {
            seed: 1,
            families: vec![FamilyCount {
                family: Family::FlagGaussian,
                count: 0,
            }],
        };
        assert!(gen_corpus(&spec, &l).unwrap().is_empty());
        let tiny = LatticeSpec::new(1, 1, 64, 4.0).unwrap();
        assert!(matches!(
            gen_corpus(&CorpusSpec::standard(1), &tiny),
            Err(FlagError::InvalidCorpus(_))
        ));
        assert!(matches!(
            norm_table(
                &[],
                &NormConfig {
                    scale_grid: small_grid(&l),
                    calibration: Calibration::Analytic
                }
            ),
            Err(FlagError::InvalidCorpus(_))
        ));
    }

    #[test]
    fn flag_gaussian_has_no_eta_zero_mass_before_projection() {
        let l = lat(64);
        let f = flag_gaussian(&l, 0.6, 0.4, 1, &[3.0, 9.0]).unwrap();
        let geom = l.spectral_geometry();
        let spec = f.to_spectral();
        let total = spec.energy();
        let axis: f64 = spec
            .coefficients()
            .iter()
            .enumerate()
            .filter(|(i, _)| geom.rho[*i] == 0.0)
            .map(|(_, c)| c.norm_sqr())
            .sum();
        assert!(axis <= 1e-12 * total);
        let mean_y: f64 = f.values().iter().sum::<f64>();
        assert!(mean_y.abs() <= 1e-10 * f.values().iter().map(|v| v.abs()).sum::<f64>());
    }

    #[test]
    fn members_are_resolution_consistent() {
        let coarse = gen_corpus(&CorpusSpec::standard(3), &lat(128)).unwrap();
        let fine = gen_corpus(&CorpusSpec::standard(3), &lat(256)).unwrap();
        for (c, f) in coarse.iter().zip(&fine) {
            if c.family == Family::SyntheticAtom {
                continue;
            }
            let sub = GridFunction::from_fn(lat(128), |p| {
                let fl = f.f.lattice();
                let h = fl.spacing();
                let idx =
                    fl.flat_index(&[(p[0] / h).round() as usize, (p[1] / h).round() as usize]);
                f.f.values()[idx]
            })
            .unwrap();
            assert!(
                relative_l2_error(&sub, &c.f).unwrap() < 1e-6,
                "{:?} {}",
                c.family,
                c.index
            );
        }
    }

    #[test]
    fn norm_table_basics() {
        let l = lat(64);
        let grid = small_grid(&l);
        let corpus = gen_corpus(
            &CorpusSpec {
                seed: 2,
                families: vec![FamilyCount {
                    family: Family::FlagGaussian,
                    count: 2,
                }],
            },
            &l,
        )
        .unwrap();
        let config = NormConfig {
            scale_grid: grid,
            calibration: Calibration::DiscretelyRenormalized,
        };
        let table = norm_table(&corpus, &config).unwrap();
        for row in &table.rows {
            assert!(row.norms.iter().all(|v| v.is_finite() && *v > 0.0));
            assert!(row.dominations_hold);
            assert!(row.norms[3] <= row.norms[2]);
            assert!(row.norms[5] <= row.norms[4]);
            assert!(row.pp_sup >= row.pp_inf);
            for a in 0..NORM_COUNT {
                for b in 0..NORM_COUNT {
                    assert!((row.ratio(a, b) * row.ratio(b, a) - 1.0).abs() <= 4.0 * f64::EPSILON);
                }
            }
        }
        assert!(table.c_emp >= 1.0);
        // Amplitude scaling leaves every ratio unchanged and scales norms linearly.
        let scaled: Vec<CorpusMember> = corpus
            .iter()
            .map(|m| CorpusMember {
                f: m.f.scaled(3.0),
                ..m.clone()
            })
            .collect();
        let t3 = norm_table(&scaled, &config).unwrap();
        for (x, y) in table.rows.iter().zip(&t3.rows) {
            for (a, b) in x.norms.iter().zip(&y.norms) {
                assert!((b / a - 3.0).abs() < 1e-12);
            }
        }
        // Integer-cell translation.
        let shifted: Vec<CorpusMember> = corpus
            .iter()
            .map(|m| CorpusMember {
                f: m.f.shifted(&[5, -3]),
                ..m.clone()
            })
            .collect();
        let ts = norm_table(&shifted, &config).unwrap();
        for (x, y) in table.rows.iter().zip(&ts.rows) {
            for (a, b) in x.norms.iter().zip(&y.norms) {
                assert!((b / a - 1.0).abs() < 1e-10);
            }
        }
        assert!(max_ratio_change(&table, &ts).unwrap() < 1e-10);
    }

    #[test]
    fn pp_single_point_cells_agree() {
        let l = lat(64);
        let grid = small_grid(&l);
        let f = gen_corpus(&CorpusSpec::standard(4), &l)
            .unwrap()
            .remove(0)
            .f;
        let pair = build_lp_pair(&l, Calibration::Analytic, None).unwrap();
        let shapes = vec![vec![(0, 0); grid.s_scales().len()]; grid.t_scales().len()];
        let (sup, inf) = pp_with_shapes(&f, &pair, &grid, &shapes).unwrap();
        assert_eq!(sup, inf);
        let (sup, inf) = pp_check(&f, &pair, &grid).unwrap();
        assert!(sup >= inf && inf > 0.0);
    }

    #[test]
    fn pp_cell_shapes_follow_the_blocks() {
        let l = lat(256);
        assert_eq!(pp_cell_shape(&l, 0, 3).unwrap(), (4, 4));
        assert_eq!(pp_cell_shape(&l, 3, 0).unwrap(), (1, 4));
        assert_eq!(pp_cell_shape(&l, -2, 7).unwrap(), (6, 6));
        assert_eq!(pp_cell_shape(&l, 7, 7).unwrap(), (0, 0));
    }

    #[test]
    fn pp_invariant_under_coarse_cell_shifts() {
        let l = lat(64);
        let grid = ScaleGrid::new(&l, 1, 4, 1, 4, 1).unwrap();
        let f = gen_corpus(&CorpusSpec::standard(4), &l)
            .unwrap()
            .remove(1)
            .f;
        let pair = build_lp_pair(&l, Calibration::Analytic, None).unwrap();
        let (s0, i0) = pp_check(&f, &pair, &grid).unwrap();
        // Coarsest cell here spans 2 points per axis.
        let (s1, i1) = pp_check(&f.shifted(&[8, 16]), &pair, &grid).unwrap();
        assert!((s1 / s0 - 1.0).abs() < 1e-10 && (i1 / i0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_suite_passes_on_corpus_members() {
        let l = lat(64);
        let grid = ScaleGrid::new(&l, -2, 5, -2, 5, 1).unwrap();
        assert!(grid.full_coverage());
        for m in gen_corpus(&CorpusSpec::standard(11), &l)
            .unwrap()
            .iter()
            .step_by(5)
        {
            let checks =
                identity_suite(&m.f, m.index, &grid, &IdentityTolerances::default()).unwrap();
            assert_eq!(checks.len(), 8);
            for c in checks {
                assert!(c.passed, "{c:?}");
            }
        }
    }

    #[test]
    fn multiplier_oracle_matches_pipeline_at_equal_sampling() {
        let l = lat(64);
        let grid = ScaleGrid::new(&l, -2, 5, -2, 5, 1).unwrap();
        let f = &gen_corpus(&CorpusSpec::standard(4), &l).unwrap()[0].f;
        assert!(calderon_quadrature_residual(f, &grid, 1).unwrap() < 1e-13);
        let refined = calderon_quadrature_residual(f, &grid, 8).unwrap();
        assert!(refined > 1e-8 && refined < 2e-2, "{refined}");
    }

    #[test]
    fn random_sets_are_reproducible_and_bounded() {
        let l = lat(32);
        let (a, pa) = random_open_set(&l, 5, 3, 6, 0.25).unwrap();
        let (b, pb) = random_open_set(&l, 5, 3, 6, 0.25).unwrap();
        assert_eq!((a.clone(), pa), (b, pb));
        assert!(!a.is_empty() && (1..=6).contains(&pa));
        assert!(a.cell_count() <= pa * 8 * 8);
        assert_ne!(random_open_set(&l, 5, 4, 6, 0.25).unwrap().0, a);
        assert!(random_open_set(&l, 5, 3, 0, 0.25).is_err());
    }

    #[test]
    fn journe_ratios_are_positive_and_moderate() {
        let spec = JourneSpec {
            count: 6,
            points: 16,
            ..JourneSpec::default()
        };
        let rows = journe_experiment(&spec, &lat(64), 7).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.gamma1 > 0.0 && r.gamma2 > 0.0, "{r:?}");
            assert!(r.gamma1 <= 10.0 && r.gamma2 <= 10.0, "{r:?}");
        }
        assert_eq!(journe_csv(&rows).lines().count(), 7);
    }

    #[test]
    fn csv_has_one_line_per_member() {
        let rows = vec![NormRow {
            family: Family::SyntheticAtom,
            index: 3,
            norms: [1.0; NORM_COUNT],
            dominations_hold: true,
            pp_sup: 2.0,
            pp_inf: 1.0,
        }];
        let table = summarize(rows);
        let csv = norm_table_csv(&table);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("0,synthetic_atom,3,1e0"));
        assert_eq!(table.c_emp, 1.0);
        assert_eq!(table.pp_c_emp, 2.0);
        assert_eq!(
            ratio_csv(&table).lines().count(),
            1 + NORM_COUNT * (NORM_COUNT - 1)
        );
    }
}
