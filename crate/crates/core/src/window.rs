//! Periodic separable window filters: box sums by running sums and exact
//! window maxima by a monotone deque.

use std::collections::VecDeque;

use crate::lattice::LatticeSpec;

/// Applies `line_op` to every line of `data` along `axis`.
fn for_each_line(
    data: &mut [f64],
    lattice: &LatticeSpec,
    axis: usize,
    mut line_op: impl FnMut(&[f64], &mut [f64]),
) {
    let n = lattice.points_per_axis;
    let stride = lattice.stride(axis);
    let block = n * stride;
    let mut line = vec![0.0; n];
    let mut out = vec![0.0; n];
    for outer in (0..data.len()).step_by(block) {
        for inner in 0..stride {
            let base = outer + inner;
            for i in 0..n {
                line[i] = data[base + i * stride];
            }
            line_op(&line, &mut out);
            for i in 0..n {
                data[base + i * stride] = out[i];
            }
        }
    }
}

/// `out[i] = sum_{o = lo}^{hi} line[i + o]` with periodic indexing.
pub fn line_window_sum(line: &[f64], lo: isize, hi: isize, out: &mut [f64]) {
    let n = line.len() as isize;
    let width = hi - lo + 1;
    if width >= n {
        // Whole periods plus a remainder.
        let total: f64 = line.iter().sum();
        let full = width / n;
        let rem = width % n;
        for i in 0..n {
            let mut acc = total * full as f64;
            for o in 0..rem {
                acc += line[(i + lo + o).rem_euclid(n) as usize];
            }
            out[i as usize] = acc;
        }
        return;
    }
    let mut acc: f64 = (lo..=hi).map(|o| line[o.rem_euclid(n) as usize]).sum();
    out[0] = acc;
    for i in 1..n {
        acc += line[(i + hi).rem_euclid(n) as usize] - line[(i - 1 + lo).rem_euclid(n) as usize];
        out[i as usize] = acc;
    }
}

/// `out[i] = max_{o = lo}^{hi} line[i + o]` with periodic indexing, computed
/// exactly with a monotone deque.
pub fn line_window_max(line: &[f64], lo: isize, hi: isize, out: &mut [f64]) {
    let n = line.len() as isize;
    if hi - lo + 1 >= n {
        let m = line.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.iter_mut().for_each(|o| *o = m);
        return;
    }
    let at = |k: isize| line[k.rem_euclid(n) as usize];
    // Positions k in [lo, n - 1 + hi]; the window of i is [i + lo, i + hi].
    let mut deque: VecDeque<isize> = VecDeque::new();
    let mut next = lo;
    for i in 0..n {
        while next <= i + hi {
            let v = at(next);
            while let Some(&back) = deque.back() {
                if at(back) <= v {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(next);
            next += 1;
        }
        while let Some(&front) = deque.front() {
            if front < i + lo {
                deque.pop_front();
            } else {
                break;
            }
        }
        out[i as usize] = at(*deque.front().expect("window is never empty"));
    }
}

/// Per-axis window bounds `(lo, hi)`.
pub type Bounds = Vec<(isize, isize)>;

/// Centred bounds with half-width `hx` on the x axes and `hy` on the y axes.
pub fn centred(lattice: &LatticeSpec, hx: usize, hy: usize) -> Bounds {
    (0..lattice.dim())
        .map(|a| {
            let h = if a < lattice.n { hx } else { hy } as isize;
            (-h, h)
        })
        .collect()
}

/// Discrete section of the flag cone `{|x - x1| <= t, |y - y1| <= t + s}` at
/// one scale pair. Shared by the area integrals and the non-tangential maximal
/// function so both average or maximize over the same cells.
pub fn cone_section(lattice: &LatticeSpec, t: f64, s: f64) -> Bounds {
    let h = lattice.spacing();
    let hx = (t / h + 1e-9).floor() as usize;
    let hy = ((t + s) / h + 1e-9).floor() as usize;
    centred(lattice, hx, hy)
}

/// Weights of the end points of a centred window of radius `r` sampled on
/// spacing `h`: the window covers the points within `r`, interior points count
/// once and the two end points share the remainder, so the weights add up to
/// exactly `2 r / h`. Returns the half-width and the end weight; a half-width of
/// zero means the single centre point carries `2 r / h`.
pub fn end_weight(r: f64, h: f64) -> (usize, f64) {
    let half = (r / h + 1e-9).floor() as usize;
    if half == 0 {
        (0, 2.0 * r / h)
    } else {
        (half, r / h - half as f64 + 0.5)
    }
}

/// Sum over the cone section at `(t, s)` with end-point weights, so the
/// implied region volume is `(2t)^n (2(t + s))^m` up to the cell volume. The
/// support is the one returned by [`cone_section`].
pub fn cone_weighted_sum(data: &[f64], lattice: &LatticeSpec, t: f64, s: f64) -> Vec<f64> {
    let h = lattice.spacing();
    let mut out = data.to_vec();
    for axis in 0..lattice.dim() {
        let r = if axis < lattice.n { t } else { t + s };
        let (half, e) = end_weight(r, h);
        for_each_line(&mut out, lattice, axis, |line, o| {
            if half == 0 {
                for (oi, li) in o.iter_mut().zip(line) {
                    *oi = e * li;
                }
                return;
            }
            let k = half as isize;
            line_window_sum(line, -k, k, o);
            let n = line.len() as isize;
            for i in 0..n {
                let ends =
                    line[(i - k).rem_euclid(n) as usize] + line[(i + k).rem_euclid(n) as usize];
                o[i as usize] += (e - 1.0) * ends;
            }
        });
    }
    out
}

/// Number of cells in a window.
pub fn window_cells(bounds: &Bounds) -> usize {
    bounds
        .iter()
        .map(|&(lo, hi)| (hi - lo + 1) as usize)
        .product()
}

/// Separable periodic box sum.
pub fn box_sum(data: &[f64], lattice: &LatticeSpec, bounds: &Bounds) -> Vec<f64> {
    let mut out = data.to_vec();
    for (axis, &(lo, hi)) in bounds.iter().enumerate() {
        for_each_line(&mut out, lattice, axis, |line, o| {
            line_window_sum(line, lo, hi, o)
        });
    }
    out
}

/// Separable periodic window maximum; exact because max is associative.
pub fn box_max(data: &[f64], lattice: &LatticeSpec, bounds: &Bounds) -> Vec<f64> {
    let mut out = data.to_vec();
    for (axis, &(lo, hi)) in bounds.iter().enumerate() {
        for_each_line(&mut out, lattice, axis, |line, o| {
            line_window_max(line, lo, hi, o)
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(line: &[f64], lo: isize, hi: isize, max: bool) -> Vec<f64> {
        let n = line.len() as isize;
        (0..n)
            .map(|i| {
                let it = (lo..=hi).map(|o| line[(i + o).rem_euclid(n) as usize]);
                if max {
                    it.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    it.sum()
                }
            })
            .collect()
    }

    proptest! {
        #[test]
        fn window_max_matches_brute_force(line in prop::collection::vec(-10.0f64..10.0, 8..40), lo in -12isize..3, w in 1isize..50) {
            let hi = lo + w - 1;
            let mut out = vec![0.0; line.len()];
            line_window_max(&line, lo, hi, &mut out);
            prop_assert_eq!(out, brute(&line, lo, hi, true));
        }

        #[test]
        fn window_sum_matches_brute_force(line in prop::collection::vec(-10.0f64..10.0, 8..40), lo in -12isize..3, w in 1isize..90) {
            let hi = lo + w - 1;
            let mut out = vec![0.0; line.len()];
            line_window_sum(&line, lo, hi, &mut out);
            for (a, b) in out.iter().zip(brute(&line, lo, hi, false)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cone_weights_give_exact_lengths() {
        let lat = LatticeSpec::new(1, 1, 16, 4.0).unwrap();
        let ones = vec![1.0; lat.len()];
        for &(t, s) in &[
            (0.1, 0.2),
            (0.25, 0.25),
            (0.6, 0.3),
            (1.3, 0.05),
            (0.01, 0.01),
        ] {
            let out = cone_weighted_sum(&ones, &lat, t, s);
            let h = lat.spacing();
            let expect = (2.0 * t / h) * (2.0 * (t + s) / h);
            assert!(
                out.iter()
                    .all(|v| (v - expect).abs() < 1e-12 * expect.max(1.0)),
                "{t} {s}"
            );
        }
    }

    #[test]
    fn cone_weights_share_the_section_support() {
        let lat = LatticeSpec::new(1, 1, 16, 4.0).unwrap();
        let mut spike = vec![0.0; lat.len()];
        spike[lat.flat_index(&[8, 8])] = 1.0;
        for &(t, s) in &[(0.3, 0.2), (0.5, 0.5), (0.75, 0.1)] {
            let weighted = cone_weighted_sum(&spike, &lat, t, s);
            let plain = box_sum(&spike, &lat, &cone_section(&lat, t, s));
            for (a, b) in weighted.iter().zip(&plain) {
                assert_eq!(*a > 0.0, *b > 0.0);
            }
        }
    }

    #[test]
    fn separable_max_on_grid() {
        let lat = LatticeSpec::new(1, 1, 8, 1.0).unwrap();
        let mut data = vec![0.0; 64];
        data[lat.flat_index(&[2, 5])] = 3.0;
        let out = box_max(&data, &lat, &centred(&lat, 1, 2));
        for idx in 0..64 {
            let mi = lat.multi_index(idx);
            let dx = (mi[0] as isize - 2)
                .rem_euclid(8)
                .min((2 - mi[0] as isize).rem_euclid(8));
            let dy = (mi[1] as isize - 5)
                .rem_euclid(8)
                .min((5 - mi[1] as isize).rem_euclid(8));
            let expect = if dx <= 1 && dy <= 2 { 3.0 } else { 0.0 };
            assert_eq!(out[idx], expect);
        }
    }
}
