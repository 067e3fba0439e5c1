//! Flag square functions: `g_F`, the area integral `S_F`, the Poisson area
//! integral `S_F(u)` and the heat area function driving the atomic
//! decomposition.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FlagError, Result};
use crate::flagconv::{filtered, flag_convolve, per_t_row, reduce_rows, PairSymbols, ScaleGrid};
use crate::kernels::{build_heatlp_pair, build_poisson_pair, KernelKind, KernelPair};
use crate::lattice::{GridFunction, LatticeSpec, SpectralField};
use crate::window::cone_weighted_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SquareKind {
    #[serde(rename = "gF")]
    GF,
    #[serde(rename = "SF")]
    SF,
    #[serde(rename = "SFu")]
    SFu,
    #[serde(rename = "SHeat")]
    SHeat,
}

#[derive(Debug, Clone)]
pub struct SquareFunctionResult {
    pub value: GridFunction,
    pub kind: SquareKind,
    pub scale_grid: ScaleGrid,
    pub kernel: String,
}

fn require_lp(pair: &KernelPair) -> Result<()> {
    if pair.kind() != KernelKind::LittlewoodPaley {
        return Err(FlagError::KernelMismatch(format!(
            "square function needs a Littlewood-Paley pair, got {:?}",
            pair.kind()
        )));
    }
    Ok(())
}

/// Area normalization of the unnormalized flag indicator at `(t, s)`:
/// `cell_volume / (t^{n+m} s^m)`.
pub fn area_normalization(lattice: &LatticeSpec, t: f64, s: f64) -> f64 {
    lattice.cell_volume() / (t.powi(lattice.dim() as i32) * s.powi(lattice.m as i32))
}

/// Averages `|block|^2` over the cone section at `(t, s)` and scales by the
/// indicator normalization.
fn cone_average(sq: &[f64], lattice: &LatticeSpec, t: f64, s: f64) -> Vec<f64> {
    let c = area_normalization(lattice, t, s);
    cone_weighted_sum(sq, lattice, t, s)
        .into_iter()
        .map(|v| c * v.max(0.0))
        .collect()
}

fn finish(acc: Vec<f64>, lattice: &LatticeSpec) -> GridFunction {
    GridFunction::from_parts_unchecked(
        *lattice,
        acc.into_iter().map(|v| v.max(0.0).sqrt()).collect(),
    )
}

/// Sum over scale blocks of `w^2 * per_block(|psi_{t,s} * f|^2)`.
fn accumulate(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid, area: bool) -> Vec<f64> {
    let lattice = *f.lattice();
    let spec = f.to_spectral();
    let symbols = PairSymbols::new(pair, &lattice);
    let ts = grid.t_scales();
    let ss = grid.s_scales();
    let w2 = grid.weight().powi(2);
    let s_factors: Vec<Vec<f64>> = ss.iter().map(|&s| symbols.factor2(s)).collect();
    let rows = per_t_row(ts.len(), |ti| {
        let t = ts[ti];
        let a = symbols.factor1(t);
        let mut acc = vec![0.0; lattice.len()];
        for (si, &s) in ss.iter().enumerate() {
            let b = &s_factors[si];
            if a.iter().zip(b).all(|(x, y)| x * y == 0.0) {
                continue;
            }
            let block = filtered(&spec, &a, b);
            let sq: Vec<f64> = block.values().iter().map(|v| v * v).collect();
            let contrib = if area {
                cone_average(&sq, &lattice, t, s)
            } else {
                sq
            };
            for (acc_v, c) in acc.iter_mut().zip(contrib) {
                *acc_v += w2 * c;
            }
        }
        acc
    });
    reduce_rows(rows, lattice.len())
}

/// Littlewood-Paley square function `(sum w^2 |psi_{t,s} * f|^2)^{1/2}`.
#[allow(non_snake_case)]
pub fn g_F(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid) -> Result<SquareFunctionResult> {
    require_lp(pair)?;
    let acc = accumulate(f, pair, grid, false);
    Ok(SquareFunctionResult {
        value: finish(acc, f.lattice()),
        kind: SquareKind::GF,
        scale_grid: grid.clone(),
        kernel: pair.description(),
    })
}

/// Lusin area integral: `|psi_{t,s} * f|^2` is summed over the cone section
/// and divided by `t^{n+m} s^m` before the scale sum.
#[allow(non_snake_case)]
pub fn S_F(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid) -> Result<SquareFunctionResult> {
    require_lp(pair)?;
    let acc = accumulate(f, pair, grid, true);
    Ok(SquareFunctionResult {
        value: finish(acc, f.lattice()),
        kind: SquareKind::SF,
        scale_grid: grid.clone(),
        kernel: pair.description(),
    })
}

/// Flag Poisson integral `u(x, y, t, s) = P_{t,s} * f`.
pub fn poisson_extension(f: &GridFunction, t: f64, s: f64) -> Result<GridFunction> {
    flag_convolve(f, &build_poisson_pair(f.lattice()), t, s)
}

/// Spectral symbols of the mixed components `t d_alpha^(1) s d_beta^(2) P_t P_s`.
///
/// `alpha = 0` is `d/dt` (symbol `-|zeta|`), `alpha = a + 1` the spatial
/// derivative along axis `a` (symbol `i zeta_a`); `beta = 0` is `d/ds`
/// (symbol `-|eta|`), `beta = b + 1` the derivative along y axis `b`.
pub fn poisson_gradient_symbol(
    spec: &SpectralField,
    geom: &crate::lattice::SpectralGeometry,
    t: f64,
    s: f64,
    alpha: usize,
    beta: usize,
) -> SpectralField {
    let n = geom.n;
    spec.multiplied(|i| {
        let r = geom.r[i];
        let rho = geom.rho[i];
        let d1 = if alpha == 0 {
            Complex64::new(-r, 0.0)
        } else {
            Complex64::new(0.0, geom.component(i, alpha - 1))
        };
        let d2 = if beta == 0 {
            Complex64::new(-rho, 0.0)
        } else {
            Complex64::new(0.0, geom.component(i, n + beta - 1))
        };
        d1 * d2 * (t * s * (-t * r - s * rho).exp())
    })
}

/// Flag area integral of the Poisson extension, built from the
/// `(n+m+1)(m+1)` mixed gradient components.
#[allow(non_snake_case)]
pub fn S_F_u(f: &GridFunction, grid: &ScaleGrid) -> Result<SquareFunctionResult> {
    let lattice = *f.lattice();
    let len = lattice.len();
    let spec = f.to_spectral();
    let geom = lattice.spectral_geometry();
    let neg = lattice.negated_indices();
    // Hermitian part of the spectrum. Off the Nyquist modes every gradient
    // symbol satisfies sigma(-q) = conj(sigma(q)), so the Hermitian part of
    // sigma * c is sigma times this.
    let coeffs = spec.coefficients();
    let herm: Vec<Complex64> = (0..len)
        .map(|i| (coeffs[i] + coeffs[neg[i]].conj()) * 0.5)
        .collect();
    let half = lattice.points_per_axis / 2;
    let nyquist: Vec<usize> = (0..len)
        .filter(|&i| lattice.multi_index(i).contains(&half))
        .collect();
    let ts = grid.t_scales();
    let ss = grid.s_scales();
    let w2 = grid.weight().powi(2);
    let s_decay: Vec<Vec<f64>> = ss
        .iter()
        .map(|&s| geom.rho.iter().map(|&p| s * (-s * p).exp()).collect())
        .collect();
    let components: Vec<(usize, usize)> = (0..=lattice.dim())
        .flat_map(|a| (0..=lattice.m).map(move |b| (a, b)))
        .collect();
    let symbol = |(alpha, beta): (usize, usize), i: usize| -> Complex64 {
        let d1 = if alpha == 0 {
            Complex64::new(-geom.r[i], 0.0)
        } else {
            Complex64::new(0.0, geom.component(i, alpha - 1))
        };
        let d2 = if beta == 0 {
            Complex64::new(-geom.rho[i], 0.0)
        } else {
            Complex64::new(0.0, geom.component(i, geom.n + beta - 1))
        };
        d1 * d2
    };
    let exact_hermitian = |c: (usize, usize), i: usize| {
        (symbol(c, i) * coeffs[i] + (symbol(c, neg[i]) * coeffs[neg[i]]).conj()) * 0.5
    };
    let rows = per_t_row(ts.len(), |ti| {
        let t = ts[ti];
        let t_decay: Vec<f64> = geom.r.iter().map(|&r| t * (-t * r).exp()).collect();
        let mut acc = vec![0.0; len];
        let mut sq = vec![0.0; len];
        for (si, &s) in ss.iter().enumerate() {
            let decay: Vec<f64> = t_decay
                .iter()
                .zip(&s_decay[si])
                .map(|(x, y)| x * y)
                .collect();
            sq.iter_mut().for_each(|v| *v = 0.0);
            // Two real components per inverse transform, in the real and
            // imaginary channels.
            for pair in components.chunks(2) {
                let (a, b) = (pair[0], pair.get(1).copied());
                let mut packed: Vec<Complex64> = (0..len)
                    .map(|i| {
                        let lo = symbol(a, i) * herm[i];
                        let hi = b.map_or(Complex64::default(), |b| symbol(b, i) * herm[i]);
                        (lo + Complex64::i() * hi) * decay[i]
                    })
                    .collect();
                for &i in &nyquist {
                    let lo = exact_hermitian(a, i);
                    let hi = b.map_or(Complex64::default(), |b| exact_hermitian(b, i));
                    packed[i] = (lo + Complex64::i() * hi) * decay[i];
                }
                let values = SpectralField::new(lattice, packed)
                    .expect("packed spectrum matches the lattice")
                    .to_physical_complex();
                for (q, v) in sq.iter_mut().zip(&values) {
                    *q += v.re * v.re + v.im * v.im;
                }
            }
            for (a, c) in acc.iter_mut().zip(cone_average(&sq, &lattice, t, s)) {
                *a += w2 * c;
            }
        }
        acc
    });
    Ok(SquareFunctionResult {
        value: finish(reduce_rows(rows, len), &lattice),
        kind: SquareKind::SFu,
        scale_grid: grid.clone(),
        kernel: "Poisson/Analytic".into(),
    })
}

/// Heat area function with `t^2 Delta e^{-t^2 Delta}` in both factors.
pub fn s_heat(f: &GridFunction, grid: &ScaleGrid) -> Result<SquareFunctionResult> {
    let pair = build_heatlp_pair(f.lattice());
    let acc = accumulate(f, &pair, grid, true);
    Ok(SquareFunctionResult {
        value: finish(acc, f.lattice()),
        kind: SquareKind::SHeat,
        scale_grid: grid.clone(),
        kernel: pair.description(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_lp_pair, heat_lp, Calibration};
    use crate::lattice::{imaginary_residue, l2_norm, lp_norm, relative_l2_error};
    use std::f64::consts::{LN_2, PI};

    fn setup() -> (LatticeSpec, ScaleGrid, KernelPair) {
        let lat = LatticeSpec::new(1, 1, 64, 16.0).unwrap();
        let grid = ScaleGrid::new(&lat, -2, 5, -2, 5, 1).unwrap();
        let pair = build_lp_pair(&lat, Calibration::DiscretelyRenormalized, Some(&grid)).unwrap();
        (lat, grid, pair)
    }

    fn cosine(lat: &LatticeSpec, qx: f64, qy: f64, amp: f64, phase: f64) -> GridFunction {
        let w = 2.0 * PI / lat.period;
        GridFunction::from_fn(*lat, |p| amp * (w * (qx * p[0] + qy * p[1]) + phase).cos()).unwrap()
    }

    fn band_limited(lat: &LatticeSpec) -> GridFunction {
        let mut f = GridFunction::zeros(*lat);
        for (k, (qx, qy)) in [(1.0, 2.0), (-3.0, 1.0), (4.0, -5.0), (0.0, 3.0), (7.0, 2.0)]
            .iter()
            .enumerate()
        {
            f = f
                .add(&cosine(lat, *qx, *qy, 1.0 + k as f64 * 0.3, k as f64))
                .unwrap();
        }
        f
    }

    #[test]
    fn zero_inputs_give_zero() {
        let (lat, grid, pair) = setup();
        let z = GridFunction::zeros(lat);
        assert_eq!(g_F(&z, &pair, &grid).unwrap().value.max_abs(), 0.0);
        assert_eq!(S_F(&z, &pair, &grid).unwrap().value.max_abs(), 0.0);
        assert_eq!(S_F_u(&z, &grid).unwrap().value.max_abs(), 0.0);
        assert_eq!(s_heat(&z, &grid).unwrap().value.max_abs(), 0.0);
    }

    #[test]
    fn non_lp_kernel_is_rejected() {
        let (lat, grid, _) = setup();
        let z = GridFunction::zeros(lat);
        assert!(g_F(&z, &build_poisson_pair(&lat), &grid).is_err());
        assert!(S_F(&z, &build_heatlp_pair(&lat), &grid).is_err());
    }

    #[test]
    fn single_complex_mode_gives_constant_g() {
        // A real cosine of amplitude A is two complex modes; the analytic signal
        // A e^{i phase} has |block| constant, and g_F of the complex mode is A.
        let (lat, grid, pair) = setup();
        let spec_idx = lat.flat_index(&[3, 5]);
        let mut coeffs = vec![Complex64::default(); lat.len()];
        coeffs[spec_idx] = Complex64::new(2.0 * lat.len() as f64, 0.0);
        let field = SpectralField::new(lat, coeffs).unwrap();
        let sym = PairSymbols::new(&pair, &lat);
        let mut acc = vec![0.0; lat.len()];
        for &t in &grid.t_scales() {
            let a = sym.factor1(t);
            for &s in &grid.s_scales() {
                let b = sym.factor2(s);
                let block = field.multiplied_real(|i| a[i] * b[i]).to_physical_complex();
                for (x, c) in acc.iter_mut().zip(block) {
                    *x += LN_2 * LN_2 * c.norm_sqr();
                }
            }
        }
        for v in acc {
            assert!((v.sqrt() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn g_f_l2_identity() {
        let (lat, grid, pair) = setup();
        let f = band_limited(&lat);
        let g = g_F(&f, &pair, &grid).unwrap();
        let ratio = l2_norm(&g.value) / l2_norm(&f);
        assert!((ratio - 1.0).abs() < 1e-10, "{ratio}");
    }

    #[test]
    fn square_functions_scale_linearly() {
        let (lat, grid, pair) = setup();
        let f = band_limited(&lat);
        let c = -3.0;
        let a = g_F(&f, &pair, &grid).unwrap().value;
        let b = g_F(&f.scaled(c), &pair, &grid).unwrap().value;
        assert!(relative_l2_error(&b, &a.scaled(c.abs())).unwrap() < 1e-12);
        let a = s_heat(&f, &grid).unwrap().value;
        let b = s_heat(&f.scaled(c), &grid).unwrap().value;
        assert!(relative_l2_error(&b, &a.scaled(c.abs())).unwrap() < 1e-12);
    }

    #[test]
    fn s_f_single_mode_closed_form() {
        // |block|^2 of a complex mode is constant, so each cone average is that
        // constant times the indicator mass (2t)(2(t + s)) / (t^2 s).
        let lat = LatticeSpec::new(1, 1, 64, 16.0).unwrap();
        let grid = ScaleGrid::new(&lat, -2, 5, -2, 5, 1).unwrap();
        let pair = build_lp_pair(&lat, Calibration::Analytic, None).unwrap();
        let (qx, qy) = (3usize, 5usize);
        let w = 2.0 * PI / lat.period;
        let r = w * ((qx * qx + qy * qy) as f64).sqrt();
        let rho = w * qy as f64;
        let mut expected = 0.0;
        for &t in &grid.t_scales() {
            for &s in &grid.s_scales() {
                let m = pair.profile1(t * r) * pair.profile2(s * rho);
                let mass = (2.0 * t) * (2.0 * (t + s));
                expected += LN_2 * LN_2 * m * m * mass / (t * t * s);
            }
        }
        // A cos = (A/2)(e^{i.} + e^{-i.}); both modes share |symbol| and the
        // cross term averages out only approximately, so use the complex mode.
        let idx = lat.flat_index(&[qx, qy]);
        let mut coeffs = vec![Complex64::default(); lat.len()];
        coeffs[idx] = Complex64::new(lat.len() as f64, 0.0);
        let field = SpectralField::new(lat, coeffs).unwrap();
        let sym = PairSymbols::new(&pair, &lat);
        let mut acc = vec![0.0; lat.len()];
        for &t in &grid.t_scales() {
            let a = sym.factor1(t);
            for &s in &grid.s_scales() {
                let b = sym.factor2(s);
                let sq: Vec<f64> = field
                    .multiplied_real(|i| a[i] * b[i])
                    .to_physical_complex()
                    .iter()
                    .map(|c| c.norm_sqr())
                    .collect();
                for (x, c) in acc.iter_mut().zip(cone_average(&sq, &lat, t, s)) {
                    *x += LN_2 * LN_2 * c;
                }
            }
        }
        for v in acc {
            assert!(
                (v - expected).abs() <= 1e-10 * expected,
                "{v} vs {expected}"
            );
        }
    }

    #[test]
    fn s_heat_single_mode_block_modulus() {
        let lat = LatticeSpec::new(1, 1, 32, 8.0).unwrap();
        let pair = build_heatlp_pair(&lat);
        let f = cosine(&lat, 2.0, 3.0, 1.5, 0.0);
        let w = 2.0 * PI / lat.period;
        let r = w * 13f64.sqrt();
        let rho = w * 3.0;
        for (t, s) in [(0.25, 0.5), (1.0, 0.125)] {
            let block = flag_convolve(&f, &pair, t, s).unwrap();
            let expect = 1.5 * heat_lp(t * r) * heat_lp(s * rho);
            assert!((block.max_abs() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn s_f_u_single_mode_components() {
        let lat = LatticeSpec::new(1, 1, 32, 8.0).unwrap();
        let f = cosine(&lat, 2.0, 3.0, 1.0, 0.3);
        let spec = f.to_spectral();
        let geom = lat.spectral_geometry();
        let w = 2.0 * PI / lat.period;
        let (zx, zy) = (2.0 * w, 3.0 * w);
        let r = (zx * zx + zy * zy).sqrt();
        let rho = zy;
        let (t, s) = (0.3, 0.6);
        let d1 = [r, zx, zy];
        let d2 = [rho, zy];
        for alpha in 0..3 {
            for beta in 0..2 {
                let c =
                    poisson_gradient_symbol(&spec, &geom, t, s, alpha, beta).to_physical_complex();
                assert!(imaginary_residue(&c) < 1e-12);
                let comp = GridFunction::new(lat, c.iter().map(|z| z.re).collect()).unwrap();
                let amp = l2_norm(&comp) / l2_norm(&f);
                let expect = t * d1[alpha] * (-t * r).exp() * s * d2[beta] * (-s * rho).exp();
                assert!(
                    (amp - expect).abs() < 1e-12 * (1.0 + expect),
                    "{alpha},{beta}"
                );
            }
        }
    }

    #[test]
    fn poisson_extension_properties() {
        let lat = LatticeSpec::new(1, 1, 64, 16.0).unwrap();
        let f = band_limited(&lat);
        let tiny = 2f64.powi(-14);
        let u = poisson_extension(&f, tiny, tiny).unwrap();
        assert!(relative_l2_error(&u, &f).unwrap() <= 1e-3);
        let single = cosine(&lat, 3.0, 2.0, 1.0, 0.0);
        let w = 2.0 * PI / lat.period;
        let r = w * 13f64.sqrt();
        let rho = 2.0 * w;
        let (t, s) = (0.4, 0.7);
        let out = poisson_extension(&single, t, s).unwrap();
        let expect = (-t * r).exp() * (-s * rho).exp();
        assert!(relative_l2_error(&out, &single.scaled(expect)).unwrap() < 1e-12);
        // Semigroup in t.
        let a =
            poisson_extension(&poisson_extension(&f, 0.3, 1e-300).unwrap(), 0.5, 1e-300).unwrap();
        let b = poisson_extension(&f, 0.8, 1e-300).unwrap();
        assert!(relative_l2_error(&a, &b).unwrap() < 1e-12);
        assert!(poisson_extension(&f, 0.0, 1.0).is_err());
    }

    #[test]
    fn shifts_commute_with_square_functions() {
        let (lat, grid, pair) = setup();
        let f = GridFunction::from_fn(lat, |p| {
            let (x, y) = (p[0] - 7.0, p[1] - 9.0);
            y * (-(x * x + y * y)).exp()
        })
        .unwrap();
        let shift = [5isize, -3];
        for which in 0..2 {
            let run = |g: &GridFunction| {
                if which == 0 {
                    S_F(g, &pair, &grid).unwrap().value
                } else {
                    S_F_u(g, &grid).unwrap().value
                }
            };
            let a = run(&f.shifted(&shift));
            let b = run(&f).shifted(&shift);
            assert!(relative_l2_error(&a, &b).unwrap() < 1e-10);
        }
        let n1 = lp_norm(&s_heat(&f, &grid).unwrap().value, 1.0).unwrap();
        let n2 = lp_norm(&s_heat(&f.shifted(&shift), &grid).unwrap().value, 1.0).unwrap();
        assert!((n1 - n2).abs() < 1e-10 * n1);
    }
}
