//! Radial and non-tangential maximal functions of flag kernel families, the
//! strong maximal function over dyadic-sided rectangles and the flag maximal
//! function over rectangles of side `t x (t + s)`.

use serde::{Deserialize, Serialize};

use crate::flagconv::{filtered, per_t_row, PairSymbols, ScaleGrid};
use crate::kernels::{KernelKind, KernelPair};
use crate::lattice::{GridFunction, LatticeSpec};
use crate::window::{box_max, box_sum, cone_section, Bounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaximalKind {
    RadialKernel,
    NonTangentialKernel,
    RadialPoisson,
    NonTangentialPoisson,
    Strong,
    Flag,
}

#[derive(Debug, Clone)]
pub struct MaximalResult {
    pub value: GridFunction,
    pub kind: MaximalKind,
    /// `None` for the strong maximal function, which is not tied to scales.
    pub scale_grid: Option<ScaleGrid>,
}

fn pointwise_max(rows: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; len];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a = a.max(v);
        }
    }
    acc
}

fn kernel_max(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid, cone: bool) -> Vec<f64> {
    let lattice = *f.lattice();
    let spec = f.to_spectral();
    let symbols = PairSymbols::new(pair, &lattice);
    let ts = grid.t_scales();
    let ss = grid.s_scales();
    let s_factors: Vec<Vec<f64>> = ss.iter().map(|&s| symbols.factor2(s)).collect();
    let rows = per_t_row(ts.len(), |ti| {
        let t = ts[ti];
        let a = symbols.factor1(t);
        let mut acc = vec![0.0f64; lattice.len()];
        for (si, &s) in ss.iter().enumerate() {
            let block: Vec<f64> = filtered(&spec, &a, &s_factors[si])
                .into_values()
                .into_iter()
                .map(f64::abs)
                .collect();
            let block = if cone {
                box_max(&block, &lattice, &cone_section(&lattice, t, s))
            } else {
                block
            };
            for (x, v) in acc.iter_mut().zip(block) {
                *x = x.max(v);
            }
        }
        acc
    });
    pointwise_max(rows, lattice.len())
}

/// `sup_{(t,s) in grid} |phi_{t,s} * f|`.
pub fn radial_max(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid) -> MaximalResult {
    let kind = if pair.kind() == KernelKind::Poisson {
        MaximalKind::RadialPoisson
    } else {
        MaximalKind::RadialKernel
    };
    MaximalResult {
        value: GridFunction::from_parts_unchecked(*f.lattice(), kernel_max(f, pair, grid, false)),
        kind,
        scale_grid: Some(grid.clone()),
    }
}

/// Supremum of `|phi_{t,s} * f|` over the discrete flag cone at each point.
pub fn nontangential_max(f: &GridFunction, pair: &KernelPair, grid: &ScaleGrid) -> MaximalResult {
    let kind = if pair.kind() == KernelKind::Poisson {
        MaximalKind::NonTangentialPoisson
    } else {
        MaximalKind::NonTangentialKernel
    };
    MaximalResult {
        value: GridFunction::from_parts_unchecked(*f.lattice(), kernel_max(f, pair, grid, true)),
        kind,
        scale_grid: Some(grid.clone()),
    }
}

/// Largest mean of `data` over rectangles of the given per-axis widths that
/// contain each point: an anchored box mean followed by a sliding maximum
/// over all anchors whose rectangle covers the point.
fn rectangle_max(data: &[f64], lattice: &LatticeSpec, widths: &[usize]) -> Vec<f64> {
    let anchored: Bounds = widths.iter().map(|&w| (0, w as isize - 1)).collect();
    let covering: Bounds = widths.iter().map(|&w| (-(w as isize - 1), 0)).collect();
    let cells: usize = widths.iter().product();
    let means: Vec<f64> = box_sum(data, lattice, &anchored)
        .into_iter()
        .map(|v| v.max(0.0) / cells as f64)
        .collect();
    box_max(&means, lattice, &covering)
}

fn axis_widths(lattice: &LatticeSpec, wx: usize, wy: usize) -> Vec<usize> {
    (0..lattice.dim())
        .map(|a| if a < lattice.n { wx } else { wy })
        .collect()
}

/// Strong maximal function restricted to rectangles whose x cube and y cube
/// have dyadic side lengths `2^a` and `2^b` cells, at every anchor.
pub fn strong_max(f: &GridFunction) -> MaximalResult {
    let lattice = *f.lattice();
    let data: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let mut sides = Vec::new();
    let mut w = 1usize;
    while w <= lattice.points_per_axis {
        sides.push(w);
        w *= 2;
    }
    let rows = per_t_row(sides.len(), |ai| {
        let mut acc = vec![0.0f64; lattice.len()];
        for &wy in &sides {
            let m = rectangle_max(&data, &lattice, &axis_widths(&lattice, sides[ai], wy));
            for (x, v) in acc.iter_mut().zip(m) {
                *x = x.max(v);
            }
        }
        acc
    });
    MaximalResult {
        value: GridFunction::from_parts_unchecked(lattice, pointwise_max(rows, lattice.len())),
        kind: MaximalKind::Strong,
        scale_grid: None,
    }
}

/// Cell widths of the flag rectangle `t x (t + s)`, at least one cell and at
/// most one period per side.
pub fn flag_rectangle_cells(lattice: &LatticeSpec, t: f64, s: f64) -> (usize, usize) {
    let h = lattice.spacing();
    let n = lattice.points_per_axis;
    let wx = ((t / h).round() as usize).clamp(1, n);
    let wy = (((t + s) / h).round() as usize).clamp(1, n);
    (wx, wy)
}

/// Flag maximal function over the rectangle family of the scale grid.
pub fn flag_max(f: &GridFunction, grid: &ScaleGrid) -> MaximalResult {
    let lattice = *f.lattice();
    let data: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    for &t in &grid.t_scales() {
        for &s in &grid.s_scales() {
            shapes.push(flag_rectangle_cells(&lattice, t, s));
        }
    }
    shapes.sort_unstable();
    shapes.dedup();
    let rows = per_t_row(shapes.len(), |i| {
        let (wx, wy) = shapes[i];
        rectangle_max(&data, &lattice, &axis_widths(&lattice, wx, wy))
    });
    MaximalResult {
        value: GridFunction::from_parts_unchecked(lattice, pointwise_max(rows, lattice.len())),
        kind: MaximalKind::Flag,
        scale_grid: Some(grid.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flagconv::flag_convolve;
    use crate::kernels::{build_heat_pair, build_poisson_pair};
    use crate::lattice::l1_norm;

    fn small() -> (LatticeSpec, ScaleGrid) {
        let lat = LatticeSpec::new(1, 1, 32, 8.0).unwrap();
        let grid = ScaleGrid::new(&lat, -2, 4, -2, 4, 1).unwrap();
        (lat, grid)
    }

    fn bump(lat: &LatticeSpec, cx: f64, cy: f64, w: f64) -> GridFunction {
        GridFunction::from_fn(*lat, |p| {
            (-((p[0] - cx).powi(2) + (p[1] - cy).powi(2)) / (w * w)).exp()
        })
        .unwrap()
    }

    fn wrap(d: isize, n: isize) -> usize {
        d.rem_euclid(n) as usize
    }

    #[test]
    fn zero_gives_zero_everywhere() {
        let (lat, grid) = small();
        let z = GridFunction::zeros(lat);
        let pair = build_poisson_pair(&lat);
        assert_eq!(radial_max(&z, &pair, &grid).value.max_abs(), 0.0);
        assert_eq!(nontangential_max(&z, &pair, &grid).value.max_abs(), 0.0);
        assert_eq!(strong_max(&z).value.max_abs(), 0.0);
        assert_eq!(flag_max(&z, &grid).value.max_abs(), 0.0);
    }

    #[test]
    fn poisson_of_constant_is_constant() {
        let (lat, grid) = small();
        let one = GridFunction::constant(lat, 1.0);
        let u = radial_max(&one, &build_poisson_pair(&lat), &grid);
        assert_eq!(u.kind, MaximalKind::RadialPoisson);
        for v in u.value.values() {
            assert!((v - 1.0).abs() < 1e-10);
        }
        let m = flag_max(&one, &grid).value;
        for v in m.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_dominates_every_sample_and_cone_dominates_radial() {
        let (lat, grid) = small();
        let f = bump(&lat, 3.0, 5.0, 0.7);
        let pair = build_poisson_pair(&lat);
        let plus = radial_max(&f, &pair, &grid).value;
        let star = nontangential_max(&f, &pair, &grid).value;
        for &t in &grid.t_scales() {
            for &s in &grid.s_scales() {
                let u = flag_convolve(&f, &pair, t, s).unwrap();
                for (p, v) in plus.values().iter().zip(u.values()) {
                    assert!(*p >= v.abs());
                }
            }
        }
        for (p, s) in plus.values().iter().zip(star.values()) {
            assert!(s >= p);
        }
        assert!(l1_norm(&plus) <= l1_norm(&star));
    }

    #[test]
    fn nontangential_matches_brute_force_cone_scan() {
        let (lat, grid) = small();
        let mut f = GridFunction::zeros(lat).into_values();
        f[lat.flat_index(&[9, 20])] = 1.0;
        f[lat.flat_index(&[25, 3])] = -0.5;
        let f = GridFunction::new(lat, f).unwrap();
        let pair = build_heat_pair(&lat);
        let fast = nontangential_max(&f, &pair, &grid).value;
        let n = lat.points_per_axis as isize;
        let mut brute = vec![0.0f64; lat.len()];
        for &t in &grid.t_scales() {
            for &s in &grid.s_scales() {
                let u = flag_convolve(&f, &pair, t, s).unwrap();
                let b = cone_section(&lat, t, s);
                for x in 0..n {
                    for y in 0..n {
                        let idx = lat.flat_index(&[x as usize, y as usize]);
                        for dx in b[0].0..=b[0].1 {
                            for dy in b[1].0..=b[1].1 {
                                let v = u.values()
                                    [lat.flat_index(&[wrap(x + dx, n), wrap(y + dy, n)])]
                                .abs();
                                brute[idx] = brute[idx].max(v);
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(fast.values(), &brute[..]);
    }

    #[test]
    fn spike_support_grows_with_cone() {
        let (lat, _) = small();
        let grid = ScaleGrid::new(&lat, -1, -1, 0, 0, 1).unwrap();
        let (t, s) = (2.0, 1.0);
        let mut f = GridFunction::zeros(lat).into_values();
        f[lat.flat_index(&[16, 16])] = 1.0;
        let f = GridFunction::new(lat, f).unwrap();
        let pair = build_heat_pair(&lat);
        let radial = radial_max(&f, &pair, &grid).value;
        let star = nontangential_max(&f, &pair, &grid).value;
        let h = lat.spacing();
        let (hx, hy) = ((t / h) as usize, ((t + s) / h) as usize);
        // The cone max at offset (hx, hy) equals the radial value at the spike.
        let tip = radial.values()[lat.flat_index(&[16, 16])];
        assert_eq!(star.values()[lat.flat_index(&[16 + hx, 16 + hy])], tip);
        assert_eq!(star.values()[lat.flat_index(&[16 - hx, 16 - hy])], tip);
        assert!(star.values()[lat.flat_index(&[16 + hx + 1, 16])] < tip);
    }

    fn all_rectangles_brute(lat: &LatticeSpec, data: &[f64], dyadic_only: bool) -> Vec<f64> {
        let n = lat.points_per_axis as isize;
        let widths: Vec<usize> = (1..=n as usize)
            .filter(|w| !dyadic_only || w.is_power_of_two())
            .collect();
        let mut out = vec![0.0f64; lat.len()];
        for &wx in &widths {
            for &wy in &widths {
                for ax in 0..n {
                    for ay in 0..n {
                        let mut sum = 0.0;
                        for i in 0..wx as isize {
                            for j in 0..wy as isize {
                                sum += data[lat.flat_index(&[wrap(ax + i, n), wrap(ay + j, n)])];
                            }
                        }
                        let mean = sum / (wx * wy) as f64;
                        for i in 0..wx as isize {
                            for j in 0..wy as isize {
                                let k = lat.flat_index(&[wrap(ax + i, n), wrap(ay + j, n)]);
                                out[k] = out[k].max(mean);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn strong_max_against_exhaustive_rectangles() {
        let lat = LatticeSpec::new(1, 1, 8, 1.0).unwrap();
        let data: Vec<f64> = (0..64)
            .map(|i| ((i * 37 % 11) as f64 - 3.0).max(0.0))
            .collect();
        let f = GridFunction::new(lat, data.clone()).unwrap();
        let fast = strong_max(&f).value;
        let dyadic = all_rectangles_brute(&lat, &data, true);
        let full = all_rectangles_brute(&lat, &data, false);
        for i in 0..64 {
            assert!((fast.values()[i] - dyadic[i]).abs() < 1e-12);
            assert!(fast.values()[i] <= full[i] + 1e-12);
            assert!(full[i] <= 4.0 * fast.values()[i] + 1e-12);
        }
    }

    #[test]
    fn strong_max_of_rectangle_indicator() {
        let lat = LatticeSpec::new(1, 1, 16, 1.0).unwrap();
        let inside = |p: &[usize]| (3..9).contains(&p[0]) && (5..8).contains(&p[1]);
        let data: Vec<f64> = (0..lat.len())
            .map(|i| {
                if inside(&lat.multi_index(i)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let m = strong_max(&GridFunction::new(lat, data).unwrap()).value;
        for i in 0..lat.len() {
            if inside(&lat.multi_index(i)) {
                assert!(m.values()[i] >= 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn flag_max_matches_brute_force_and_strong_bound() {
        let (lat, grid) = small();
        let mut data = vec![0.0; lat.len()];
        for x in 14..18 {
            for y in 14..18 {
                data[lat.flat_index(&[x, y])] = 1.0;
            }
        }
        let f = GridFunction::new(lat, data.clone()).unwrap();
        let fast = flag_max(&f, &grid).value;
        let n = lat.points_per_axis as isize;
        let mut brute = vec![0.0f64; lat.len()];
        for &t in &grid.t_scales() {
            for &s in &grid.s_scales() {
                let (wx, wy) = flag_rectangle_cells(&lat, t, s);
                for ax in 0..n {
                    for ay in 0..n {
                        let mut sum = 0.0;
                        for i in 0..wx as isize {
                            for j in 0..wy as isize {
                                sum += data[lat.flat_index(&[wrap(ax + i, n), wrap(ay + j, n)])];
                            }
                        }
                        let mean = sum / (wx * wy) as f64;
                        for i in 0..wx as isize {
                            for j in 0..wy as isize {
                                let k = lat.flat_index(&[wrap(ax + i, n), wrap(ay + j, n)]);
                                brute[k] = brute[k].max(mean);
                            }
                        }
                    }
                }
            }
        }
        let strong = strong_max(&f).value;
        for i in 0..lat.len() {
            assert!((fast.values()[i] - brute[i]).abs() < 1e-12);
            assert!(fast.values()[i] <= 4.0 * strong.values()[i] + 1e-12);
        }
    }

    #[test]
    fn sublinear_and_monotone() {
        let (lat, grid) = small();
        let f = bump(&lat, 2.0, 2.0, 0.5);
        let g = bump(&lat, 6.0, 3.0, 1.1).scaled(-0.7);
        let sum = f.add(&g).unwrap();
        let bigger = f.abs().add(&g.abs()).unwrap();
        let pair = build_heat_pair(&lat);
        type Op<'a> = Box<dyn Fn(&GridFunction) -> GridFunction + 'a>;
        let ops: Vec<Op> = vec![
            Box::new(|h| radial_max(h, &pair, &grid).value),
            Box::new(|h| nontangential_max(h, &pair, &grid).value),
            Box::new(|h| strong_max(h).value),
            Box::new(|h| flag_max(h, &grid).value),
        ];
        for (k, op) in ops.iter().enumerate() {
            let (a, b, c) = (op(&sum), op(&f), op(&g));
            for i in 0..lat.len() {
                assert!(a.values()[i] <= b.values()[i] + c.values()[i] + 1e-12);
            }
            if k >= 2 {
                let big = op(&bigger);
                for i in 0..lat.len() {
                    assert!(b.values()[i] <= big.values()[i] + 1e-12);
                }
            }
        }
    }
}
