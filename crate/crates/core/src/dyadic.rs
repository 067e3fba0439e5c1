//! Dyadic rectangle geometry on a lattice with `N = 2^K` points per axis.
//!
//! A dyadic rectangle is `I x J` where `I` is a cube of `2^a` cells on the x
//! axes and `J` a cube of `2^b` cells on the y axes, anchored at multiples of
//! the side. Rectangles never wrap around the torus. In physical units
//! `l(I) = L 2^{-j_I}` with `j_I = K - a`, and likewise for `J`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{FlagError, Result};
use crate::lattice::{GridFunction, LatticeSpec};

/// Periodic window sums of integer data, separably along every axis. The
/// window along an axis of width `w` is `[i, i + w - 1]` (anchored) or
/// `[i - w + 1, i]` (covering).
fn window_counts(
    data: &[u32],
    lattice: &LatticeSpec,
    widths: &[usize],
    covering: bool,
) -> Vec<u32> {
    let n = lattice.points_per_axis;
    let mut cur = data.to_vec();
    let mut line = vec![0u32; 2 * n];
    for (axis, &w) in widths.iter().enumerate() {
        if w == 1 {
            continue;
        }
        let stride = lattice.stride(axis);
        let block = n * stride;
        for outer in (0..cur.len()).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for i in 0..n {
                    let v = cur[base + i * stride];
                    line[i] = v;
                    line[i + n] = v;
                }
                // Window of i starts at line[start(i)], start = i (+ n - w + 1 when covering).
                let shift = if covering { n - w + 1 } else { 0 };
                let mut acc: u32 = line[shift..shift + w].iter().sum();
                cur[base] = acc;
                for i in 1..n {
                    acc = acc + line[shift + i + w - 1] - line[shift + i - 1];
                    cur[base + i * stride] = acc;
                }
            }
        }
    }
    cur
}

/// `log2 N`, or an error when `N` is not a power of two.
pub fn log2_points(lattice: &LatticeSpec) -> Result<u32> {
    let n = lattice.points_per_axis;
    if !n.is_power_of_two() {
        return Err(FlagError::InvalidLattice(format!(
            "dyadic geometry needs a power-of-two point count, got N = {n}"
        )));
    }
    Ok(n.trailing_zeros())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicRectangle {
    /// `log2` of the x side in cells.
    pub x_log: u32,
    /// `log2` of the y side in cells.
    pub y_log: u32,
    /// Lowest cell of the rectangle, one coordinate per axis.
    pub anchor: Vec<usize>,
}

impl DyadicRectangle {
    pub fn new(lattice: &LatticeSpec, x_log: u32, y_log: u32, anchor: Vec<usize>) -> Result<Self> {
        let k = log2_points(lattice)?;
        if x_log > k || y_log > k {
            return Err(FlagError::InvalidRectangle(format!(
                "side exponents ({x_log}, {y_log}) exceed {k}"
            )));
        }
        if anchor.len() != lattice.dim() {
            return Err(FlagError::InvalidRectangle(format!(
                "anchor has {} coordinates, lattice has {} axes",
                anchor.len(),
                lattice.dim()
            )));
        }
        let rect = Self {
            x_log,
            y_log,
            anchor,
        };
        for (axis, &c) in rect.anchor.iter().enumerate() {
            let side = rect.axis_cells(lattice, axis);
            if c % side != 0 || c >= lattice.points_per_axis {
                return Err(FlagError::InvalidRectangle(format!(
                    "anchor {c} on axis {axis} is not aligned to {side}"
                )));
            }
        }
        Ok(rect)
    }

    pub fn x_cells(&self) -> usize {
        1 << self.x_log
    }

    pub fn y_cells(&self) -> usize {
        1 << self.y_log
    }

    fn axis_cells(&self, lattice: &LatticeSpec, axis: usize) -> usize {
        if axis < lattice.n {
            self.x_cells()
        } else {
            self.y_cells()
        }
    }

    /// Number of lattice cells covered.
    pub fn cells(&self, lattice: &LatticeSpec) -> usize {
        self.x_cells().pow(lattice.n as u32) * self.y_cells().pow(lattice.m as u32)
    }

    pub fn measure(&self, lattice: &LatticeSpec) -> f64 {
        self.cells(lattice) as f64 * lattice.cell_volume()
    }

    /// Physical side lengths `(l(I), l(J))`.
    pub fn sides(&self, lattice: &LatticeSpec) -> (f64, f64) {
        let h = lattice.spacing();
        (self.x_cells() as f64 * h, self.y_cells() as f64 * h)
    }

    /// Levels `(j_I, j_J)` with `l(I) = L 2^{-j_I}`.
    pub fn levels(&self, lattice: &LatticeSpec) -> (u32, u32) {
        let k = lattice.points_per_axis.trailing_zeros();
        (k - self.x_log, k - self.y_log)
    }

    fn sort_key(&self) -> (std::cmp::Reverse<u32>, std::cmp::Reverse<u32>, &[usize]) {
        (
            std::cmp::Reverse(self.x_log),
            std::cmp::Reverse(self.y_log),
            &self.anchor,
        )
    }

    pub fn contains_cell(&self, lattice: &LatticeSpec, multi: &[usize]) -> bool {
        multi.iter().enumerate().all(|(axis, &c)| {
            c >= self.anchor[axis] && c < self.anchor[axis] + self.axis_cells(lattice, axis)
        })
    }

    /// `self` is a subset of `other`.
    pub fn within(&self, lattice: &LatticeSpec, other: &Self) -> bool {
        (0..lattice.dim()).all(|axis| {
            let (a0, a1) = (
                self.anchor[axis],
                self.anchor[axis] + self.axis_cells(lattice, axis),
            );
            let (b0, b1) = (
                other.anchor[axis],
                other.anchor[axis] + other.axis_cells(lattice, axis),
            );
            b0 <= a0 && a1 <= b1
        })
    }

    /// The dyadic parent in the x direction, if the x side is not already a full period.
    pub fn parent_x(&self, lattice: &LatticeSpec) -> Option<Self> {
        if (self.x_cells()) >= lattice.points_per_axis {
            return None;
        }
        let side = self.x_cells() * 2;
        let mut anchor = self.anchor.clone();
        for c in anchor.iter_mut().take(lattice.n) {
            *c -= *c % side;
        }
        Some(Self {
            x_log: self.x_log + 1,
            y_log: self.y_log,
            anchor,
        })
    }

    pub fn parent_y(&self, lattice: &LatticeSpec) -> Option<Self> {
        if (self.y_cells()) >= lattice.points_per_axis {
            return None;
        }
        let side = self.y_cells() * 2;
        let mut anchor = self.anchor.clone();
        for c in anchor.iter_mut().skip(lattice.n) {
            *c -= *c % side;
        }
        Some(Self {
            x_log: self.x_log,
            y_log: self.y_log + 1,
            anchor,
        })
    }

    /// Flat indices of every covered cell, in row-major order.
    pub fn cell_indices(&self, lattice: &LatticeSpec) -> Vec<usize> {
        let d = lattice.dim();
        let sides: Vec<usize> = (0..d).map(|a| self.axis_cells(lattice, a)).collect();
        let mut out = Vec::with_capacity(self.cells(lattice));
        let mut offset = vec![0usize; d];
        loop {
            let multi: Vec<usize> = (0..d).map(|a| self.anchor[a] + offset[a]).collect();
            out.push(lattice.flat_index(&multi));
            let mut axis = d;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                offset[axis] += 1;
                if offset[axis] < sides[axis] {
                    break;
                }
                offset[axis] = 0;
            }
        }
    }
}

impl PartialOrd for DyadicRectangle {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Coarse levels first, then anchors in row-major order.
impl Ord for DyadicRectangle {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

/// A union of lattice cells.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSet {
    lattice: LatticeSpec,
    mask: Vec<bool>,
    measure: f64,
}

#[derive(Serialize, Deserialize)]
struct RleHeader {
    n: usize,
    m: usize,
    #[serde(rename = "N")]
    points_per_axis: usize,
    #[serde(rename = "L")]
    period: f64,
    kind: String,
    cells: usize,
}

impl OpenSet {
    pub fn new(lattice: LatticeSpec, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != lattice.len() {
            return Err(FlagError::ShapeMismatch {
                expected: lattice.len(),
                actual: mask.len(),
            });
        }
        let measure = mask.iter().filter(|&&b| b).count() as f64 * lattice.cell_volume();
        Ok(Self {
            lattice,
            mask,
            measure,
        })
    }

    pub fn empty(lattice: LatticeSpec) -> Self {
        Self {
            lattice,
            mask: vec![false; lattice.len()],
            measure: 0.0,
        }
    }

    pub fn full(lattice: LatticeSpec) -> Self {
        Self {
            lattice,
            mask: vec![true; lattice.len()],
            measure: lattice.torus_volume(),
        }
    }

    /// `{g > threshold}`.
    pub fn above(g: &GridFunction, threshold: f64) -> Self {
        let mask = g.values().iter().map(|&v| v > threshold).collect();
        Self::new(*g.lattice(), mask).expect("mask built from the grid")
    }

    pub fn from_rectangles(lattice: LatticeSpec, rects: &[DyadicRectangle]) -> Self {
        let mut mask = vec![false; lattice.len()];
        for r in rects {
            for i in r.cell_indices(&lattice) {
                mask[i] = true;
            }
        }
        Self::new(lattice, mask).expect("mask built from the lattice")
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn cell_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.measure == 0.0
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Indicator as a grid function.
    pub fn indicator(&self) -> GridFunction {
        GridFunction::from_parts_unchecked(
            self.lattice,
            self.mask
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// `{M_s chi > threshold}` with the dyadic-sided strong maximal function.
    ///
    /// Evaluated with exact cell counts: a point is kept when some rectangle
    /// of `2^a x 2^b` cells covering it has mean above the threshold. This is
    /// the same predicate as thresholding [`crate::maximal::strong_max`] of the
    /// indicator.
    pub fn enlarged(&self, threshold: f64) -> Self {
        let lat = self.lattice;
        let n = lat.points_per_axis;
        let counts: Vec<u32> = self.mask.iter().map(|&b| b as u32).collect();
        let mut sides = Vec::new();
        let mut w = 1usize;
        while w <= n {
            sides.push(w);
            w *= 2;
        }
        let mut out = vec![false; lat.len()];
        for &wx in &sides {
            for &wy in &sides {
                let widths: Vec<usize> = (0..lat.dim())
                    .map(|a| if a < lat.n { wx } else { wy })
                    .collect();
                let cells = (widths.iter().product::<usize>()) as f64;
                let sums = window_counts(&counts, &lat, &widths, false);
                let good: Vec<u32> = sums
                    .iter()
                    .map(|&c| (c as f64 / cells > threshold) as u32)
                    .collect();
                if good.iter().all(|&g| g == 0) {
                    continue;
                }
                for (o, c) in out
                    .iter_mut()
                    .zip(window_counts(&good, &lat, &widths, true))
                {
                    *o |= c > 0;
                }
            }
        }
        Self::new(lat, out).expect("mask matches the lattice")
    }

    /// Run-length encoding: a JSON header line, then run lengths alternating
    /// between outside and inside cells, starting with an outside run.
    pub fn to_rle(&self) -> String {
        let header = RleHeader {
            n: self.lattice.n,
            m: self.lattice.m,
            points_per_axis: self.lattice.points_per_axis,
            period: self.lattice.period,
            kind: "open_set".into(),
            cells: self.cell_count(),
        };
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &b in &self.mask {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        let body: Vec<String> = runs.iter().map(|r| r.to_string()).collect();
        format!(
            "{}\n{}\n",
            serde_json::to_string(&header).expect("header serializes"),
            body.join(" ")
        )
    }

    pub fn from_rle(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: RleHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| FlagError::Format("empty file".into()))?,
        )?;
        if header.kind != "open_set" {
            return Err(FlagError::Format(format!(
                "expected kind open_set, got {}",
                header.kind
            )));
        }
        let lattice = LatticeSpec::new(header.n, header.m, header.points_per_axis, header.period)?;
        let mut mask = Vec::with_capacity(lattice.len());
        let mut current = false;
        for tok in lines.flat_map(str::split_whitespace) {
            let run: usize = tok
                .parse()
                .map_err(|_| FlagError::Format(format!("bad run length {tok:?}")))?;
            if mask.len() + run > lattice.len() {
                return Err(FlagError::Format("runs exceed the lattice size".into()));
            }
            mask.extend(std::iter::repeat_n(current, run));
            current = !current;
        }
        let set = Self::new(lattice, mask)?;
        if set.cell_count() != header.cells {
            return Err(FlagError::Format(format!(
                "header says {} cells, runs give {}",
                header.cells,
                set.cell_count()
            )));
        }
        Ok(set)
    }
}

/// Containment of every aligned dyadic rectangle in a cell set, built bottom
/// up: a rectangle lies inside iff both of its halves along a coarsened
/// direction do.
pub struct DyadicTable {
    lattice: LatticeSpec,
    k: u32,
    /// `tables[a * (k + 1) + b]` is indexed by the aligned anchor grid of shape `(a, b)`.
    tables: Vec<Vec<bool>>,
}

impl DyadicTable {
    pub fn new(set: &OpenSet) -> Result<Self> {
        let lattice = *set.lattice();
        let k = log2_points(&lattice)?;
        let width = (k + 1) as usize;
        let mut tables: Vec<Vec<bool>> = vec![Vec::new(); width * width];
        tables[0] = set.mask().to_vec();
        for a in 0..=k {
            if a > 0 {
                let prev = &tables[(a as usize - 1) * width];
                tables[a as usize * width] = coarsen(&lattice, prev, a - 1, 0, true);
            }
            for b in 1..=k {
                let prev = &tables[a as usize * width + b as usize - 1];
                tables[a as usize * width + b as usize] = coarsen(&lattice, prev, a, b - 1, false);
            }
        }
        Ok(Self { lattice, k, tables })
    }

    pub fn max_log(&self) -> u32 {
        self.k
    }

    fn anchor_index(&self, x_log: u32, y_log: u32, anchor: &[usize]) -> usize {
        let mut idx = 0;
        for (axis, &c) in anchor.iter().enumerate() {
            let e = if axis < self.lattice.n { x_log } else { y_log };
            idx = idx * (self.lattice.points_per_axis >> e) + (c >> e);
        }
        idx
    }

    pub fn inside(&self, rect: &DyadicRectangle) -> bool {
        let width = (self.k + 1) as usize;
        self.tables[rect.x_log as usize * width + rect.y_log as usize]
            [self.anchor_index(rect.x_log, rect.y_log, &rect.anchor)]
    }

    /// Every aligned rectangle of the given shape lying inside the set.
    pub fn inside_of_shape(&self, x_log: u32, y_log: u32) -> Vec<DyadicRectangle> {
        let width = (self.k + 1) as usize;
        let table = &self.tables[x_log as usize * width + y_log as usize];
        let dims = shape_dims(&self.lattice, x_log, y_log);
        table
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(idx, _)| {
                let mut rem = idx;
                let mut anchor = vec![0; dims.len()];
                for axis in (0..dims.len()).rev() {
                    let e = if axis < self.lattice.n { x_log } else { y_log };
                    anchor[axis] = (rem % dims[axis]) << e;
                    rem /= dims[axis];
                }
                DyadicRectangle {
                    x_log,
                    y_log,
                    anchor,
                }
            })
            .collect()
    }
}

fn shape_dims(lattice: &LatticeSpec, x_log: u32, y_log: u32) -> Vec<usize> {
    (0..lattice.dim())
        .map(|a| lattice.points_per_axis >> if a < lattice.n { x_log } else { y_log })
        .collect()
}

/// Halves the anchor grid of shape `(a, b)` along the x axes (or the y axes),
/// ANDing the children.
fn coarsen(lattice: &LatticeSpec, table: &[bool], a: u32, b: u32, along_x: bool) -> Vec<bool> {
    let dims = shape_dims(lattice, a, b);
    let d = dims.len();
    let coarse_axes: Vec<bool> = (0..d).map(|ax| (ax < lattice.n) == along_x).collect();
    let new_dims: Vec<usize> = (0..d)
        .map(|ax| {
            if coarse_axes[ax] {
                dims[ax] / 2
            } else {
                dims[ax]
            }
        })
        .collect();
    let total: usize = new_dims.iter().product();
    let children = 1usize << coarse_axes.iter().filter(|&&c| c).count();
    let mut out = vec![false; total];
    let mut multi = vec![0usize; d];
    for (idx, o) in out.iter_mut().enumerate() {
        let mut rem = idx;
        for axis in (0..d).rev() {
            multi[axis] = rem % new_dims[axis];
            rem /= new_dims[axis];
        }
        *o = (0..children).all(|mut bits| {
            let mut fine = 0usize;
            for axis in 0..d {
                let c = if coarse_axes[axis] {
                    let bit = bits & 1;
                    bits >>= 1;
                    multi[axis] * 2 + bit
                } else {
                    multi[axis]
                };
                fine = fine * dims[axis] + c;
            }
            table[fine]
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximalityMode {
    /// `m(Omega)`: maximal under inclusion.
    All,
    /// `m_1(Omega)`: no dyadic `I' > I` with `I' x J` inside.
    XMaximal,
    /// `m_2(Omega)`: no dyadic `J' > J` with `I x J'` inside.
    YMaximal,
}

fn parent_inside(table: &DyadicTable, parent: Option<DyadicRectangle>) -> bool {
    parent.is_some_and(|p| table.inside(&p))
}

fn maximal_in_table(table: &DyadicTable, mode: MaximalityMode) -> Vec<DyadicRectangle> {
    let lat = table.lattice;
    let mut out = Vec::new();
    for a in 0..=table.k {
        for b in 0..=table.k {
            for r in table.inside_of_shape(a, b) {
                let px = parent_inside(table, r.parent_x(&lat));
                let py = parent_inside(table, r.parent_y(&lat));
                let keep = match mode {
                    MaximalityMode::All => !px && !py,
                    MaximalityMode::XMaximal => !px,
                    MaximalityMode::YMaximal => !py,
                };
                if keep {
                    out.push(r);
                }
            }
        }
    }
    out.sort();
    out
}

/// Maximal dyadic subrectangles of `omega` in the requested sense, sorted
/// coarse to fine.
pub fn maximal_subrectangles(
    omega: &OpenSet,
    mode: MaximalityMode,
) -> Result<Vec<DyadicRectangle>> {
    Ok(maximal_in_table(&DyadicTable::new(omega)?, mode))
}

/// Direction of a Journe enlargement factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Enlarge `I` (x direction), giving `gamma_1`.
    X,
    /// Enlarge `J` (y direction), giving `gamma_2`.
    Y,
}

/// Precomputed geometry of `omega` and its enlargement `{M_s chi > 1/2}`.
pub struct JourneGeometry {
    pub omega: OpenSet,
    pub enlarged: OpenSet,
    omega_table: DyadicTable,
    enlarged_table: DyadicTable,
}

impl JourneGeometry {
    pub fn new(omega: &OpenSet) -> Result<Self> {
        let enlarged = omega.enlarged(0.5);
        Ok(Self {
            omega_table: DyadicTable::new(omega)?,
            enlarged_table: DyadicTable::new(&enlarged)?,
            omega: omega.clone(),
            enlarged,
        })
    }

    /// `sup |l| / |I|` over dyadic `l >= I` with `l x J` inside the enlarged
    /// set (or the analogue in `y`). Returns 1 when no enlargement fits.
    pub fn gamma(&self, rect: &DyadicRectangle, direction: Direction) -> f64 {
        let lat = self.omega.lattice();
        let mut cur = rect.clone();
        let mut steps = 0u32;
        loop {
            let next = match direction {
                Direction::X => cur.parent_x(lat),
                Direction::Y => cur.parent_y(lat),
            };
            match next {
                Some(p) if self.enlarged_table.inside(&p) => {
                    cur = p;
                    steps += 1;
                }
                _ => break,
            }
        }
        let dims = match direction {
            Direction::X => lat.n,
            Direction::Y => lat.m,
        };
        2f64.powi((steps as usize * dims) as i32)
    }

    pub fn maximal(&self, mode: MaximalityMode) -> Vec<DyadicRectangle> {
        maximal_in_table(&self.omega_table, mode)
    }
}

/// `gamma_1` (direction X) or `gamma_2` (direction Y) of `rect` relative to `omega`.
pub fn journe_gamma(rect: &DyadicRectangle, omega: &OpenSet, direction: Direction) -> Result<f64> {
    let lat = omega.lattice();
    let checked = DyadicRectangle::new(lat, rect.x_log, rect.y_log, rect.anchor.clone())?;
    Ok(JourneGeometry::new(omega)?.gamma(&checked, direction))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JourneRatios {
    /// `sum_{R in m_2} |R| gamma_1^{-delta} / |Omega|`.
    pub gamma1: f64,
    /// `sum_{R in m_1} |R| gamma_2^{-delta} / |Omega|`.
    pub gamma2: f64,
}

pub fn journe_sum_check(omega: &OpenSet, delta: f64) -> Result<JourneRatios> {
    if omega.is_empty() {
        return Ok(JourneRatios {
            gamma1: 0.0,
            gamma2: 0.0,
        });
    }
    let geo = JourneGeometry::new(omega)?;
    let lat = omega.lattice();
    let sum = |mode: MaximalityMode, dir: Direction| -> f64 {
        geo.maximal(mode)
            .iter()
            .map(|r| r.measure(lat) * geo.gamma(r, dir).powf(-delta))
            .sum::<f64>()
    };
    Ok(JourneRatios {
        gamma1: sum(MaximalityMode::YMaximal, Direction::X) / omega.measure(),
        gamma2: sum(MaximalityMode::XMaximal, Direction::Y) / omega.measure(),
    })
}
