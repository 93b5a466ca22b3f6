//! Uniform grids, implicit regions and cut-cell quadrature.
//!
//! A region is an intersection of sublevel sets `{x : φ_k(x) ≤ 0}`. Cells that
//! lie entirely inside contribute one midpoint sample. Cells crossed by a
//! boundary are split into Kuhn simplices, clipped against the boundary with
//! exact (or bracketed) edge intersections, and integrated with the centroid
//! rule on every surviving piece. This keeps the quadrature second order on
//! curved domains.

use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::exec::{map_collect, Execution};

/// Uniform tensor grid with `cells` cells per axis over the box `[lo, hi]`.
///
/// Multi-indices are stored first-axis-fastest for both cells and nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: usize,
    pub h: Vec<f64>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: usize) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(LabError::validation("grid", "lo/hi dimension mismatch"));
        }
        if cells == 0 {
            return Err(LabError::validation("grid", "resolution must be positive"));
        }
        let h: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (b - a) / cells as f64)
            .collect();
        if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LabError::DegenerateDomain(format!(
                "grid box {lo:?}..{hi:?} has non-positive extent"
            )));
        }
        Ok(Grid {
            dim: lo.len(),
            lo,
            hi,
            cells,
            h,
        })
    }

    /// Same box, different resolution.
    pub fn with_cells(&self, cells: usize) -> Result<Self> {
        Grid::new(self.lo.clone(), self.hi.clone(), cells)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn max_h(&self) -> f64 {
        self.h.iter().cloned().fold(0.0, f64::max)
    }

    pub fn node_strides(&self) -> Vec<usize> {
        let m = self.nodes_per_axis();
        (0..self.dim).map(|k| m.pow(k as u32)).collect()
    }

    pub fn cell_multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(idx % self.cells);
            idx /= self.cells;
        }
        out
    }

    pub fn cell_index(&self, multi: &[usize]) -> usize {
        multi.iter().rev().fold(0, |acc, &i| acc * self.cells + i)
    }

    pub fn node_multi_index(&self, mut idx: usize) -> Vec<usize> {
        let m = self.nodes_per_axis();
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(idx % m);
            idx /= m;
        }
        out
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        let m = self.nodes_per_axis();
        multi.iter().rev().fold(0, |acc, &i| acc * m + i)
    }

    pub fn node_position(&self, idx: usize) -> Vec<f64> {
        self.node_multi_index(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lo[k] + i as f64 * self.h[k])
            .collect()
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        self.cell_multi_index(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lo[k] + (i as f64 + 0.5) * self.h[k])
            .collect()
    }

    /// Node index of the lowest corner of a cell.
    pub fn cell_base_node(&self, idx: usize) -> usize {
        self.node_index(&self.cell_multi_index(idx))
    }

    /// Corner nodes of a cell; bit `k` of the corner number selects the upper
    /// side along axis `k`.
    pub fn cell_corner_nodes(&self, idx: usize) -> Vec<usize> {
        let base = self.cell_base_node(idx);
        let strides = self.node_strides();
        (0..1usize << self.dim)
            .map(|mask| {
                base + (0..self.dim)
                    .filter(|k| mask & (1 << k) != 0)
                    .map(|k| strides[k])
                    .sum::<usize>()
            })
            .collect()
    }

    /// Cell containing `x`, if `x` is inside the grid box.
    pub fn locate_cell(&self, x: &[f64]) -> Option<usize> {
        let mut multi = Vec::with_capacity(self.dim);
        for k in 0..self.dim {
            let t = (x[k] - self.lo[k]) / self.h[k];
            if !(t >= 0.0 && t <= self.cells as f64) {
                return None;
            }
            multi.push((t.floor() as usize).min(self.cells - 1));
        }
        Some(self.cell_index(&multi))
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Kuhn (Freudenthal) simplices of the unit cube as lists of corner masks.
pub fn kuhn_simplices(dim: usize) -> Vec<Vec<usize>> {
    permutations(dim)
        .into_iter()
        .map(|perm| {
            let mut mask = 0usize;
            let mut verts = vec![0usize];
            for axis in perm {
                mask |= 1 << axis;
                verts.push(mask);
            }
            verts
        })
        .collect()
}

/// Unsigned volume of a simplex given its `n + 1` vertices.
pub fn simplex_volume(verts: &[&[f64]]) -> f64 {
    let n = verts.len() - 1;
    let e = crate::linalg::Matrix::from_fn(n, n, |i, j| verts[i + 1][j] - verts[0][j]);
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    crate::linalg::determinant(&e).abs() / fact
}

pub fn centroid(verts: &[&[f64]]) -> Vec<f64> {
    let n = verts[0].len();
    let m = verts.len() as f64;
    (0..n)
        .map(|k| verts.iter().map(|v| v[k]).sum::<f64>() / m)
        .collect()
}

/// Signed implicit function; the represented set is `{x : value(x) ≤ 0}`.
pub trait LevelSet: Send + Sync + Debug {
    fn value(&self, x: &[f64]) -> f64;

    /// Point on the segment `[a, b]` where the value changes sign.
    fn crossing(&self, a: &[f64], b: &[f64], fa: f64, fb: f64) -> Vec<f64> {
        bracketed_crossing(|x| self.value(x), a, b, fa, fb)
    }

    /// The set `{value ≤ delta}` when it has a closed form.
    fn shifted(&self, _delta: f64) -> Option<SharedLevelSet> {
        None
    }
}

pub type SharedLevelSet = Arc<dyn LevelSet>;

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Illinois-modified regula falsi on the segment parameter.
pub fn bracketed_crossing(
    f: impl Fn(&[f64]) -> f64,
    a: &[f64],
    b: &[f64],
    fa: f64,
    fb: f64,
) -> Vec<f64> {
    if fa == 0.0 {
        return a.to_vec();
    }
    if fb == 0.0 {
        return b.to_vec();
    }
    let (mut t0, mut t1, mut f0, mut f1) = (0.0f64, 1.0f64, fa, fb);
    let mut side = 0i8;
    for _ in 0..200 {
        let t = (t0 * f1 - t1 * f0) / (f1 - f0);
        let t = if t.is_finite() && t > t0 && t < t1 {
            t
        } else {
            0.5 * (t0 + t1)
        };
        let ft = f(&lerp(a, b, t));
        if ft == 0.0 {
            return lerp(a, b, t);
        }
        if (ft < 0.0) == (f0 < 0.0) {
            t0 = t;
            f0 = ft;
            if side == -1 {
                f1 *= 0.5;
            }
            side = -1;
        } else {
            t1 = t;
            f1 = ft;
            if side == 1 {
                f0 *= 0.5;
            }
            side = 1;
        }
        if t1 - t0 <= 1e-15 {
            break;
        }
    }
    lerp(a, b, 0.5 * (t0 + t1))
}

/// Ball (`inside = true`) or ball exterior (`inside = false`).
#[derive(Debug, Clone)]
pub struct Sphere {
    pub center: Vec<f64>,
    pub radius: f64,
    pub inside: bool,
}

impl LevelSet for Sphere {
    fn value(&self, x: &[f64]) -> f64 {
        let d = dist(x, &self.center) - self.radius;
        if self.inside {
            d
        } else {
            -d
        }
    }

    fn crossing(&self, a: &[f64], b: &[f64], fa: f64, fb: f64) -> Vec<f64> {
        if fa == 0.0 {
            return a.to_vec();
        }
        if fb == 0.0 {
            return b.to_vec();
        }
        let d: Vec<f64> = b.iter().zip(a).map(|(y, x)| y - x).collect();
        let w: Vec<f64> = a.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        let qa: f64 = d.iter().map(|v| v * v).sum();
        let qb: f64 = 2.0 * d.iter().zip(&w).map(|(u, v)| u * v).sum::<f64>();
        let qc: f64 = w.iter().map(|v| v * v).sum::<f64>() - self.radius * self.radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if qa > 0.0 && disc >= 0.0 {
            let q = -0.5 * (qb + qb.signum() * disc.sqrt());
            let mut best: Option<f64> = None;
            for t in [q / qa, if q != 0.0 { qc / q } else { f64::NAN }] {
                if t.is_finite() && (-1e-12..=1.0 + 1e-12).contains(&t) {
                    let t = t.clamp(0.0, 1.0);
                    if best.is_none_or(|bt| (t - 0.5).abs() < (bt - 0.5).abs()) {
                        best = Some(t);
                    }
                }
            }
            if let Some(t) = best {
                return lerp(a, b, t);
            }
        }
        bracketed_crossing(|x| self.value(x), a, b, fa, fb)
    }

    fn shifted(&self, delta: f64) -> Option<SharedLevelSet> {
        let radius = if self.inside {
            self.radius + delta
        } else {
            self.radius - delta
        };
        (radius > 0.0).then(|| {
            Arc::new(Sphere {
                center: self.center.clone(),
                radius,
                inside: self.inside,
            }) as SharedLevelSet
        })
    }
}

/// `x[axis] ≤ offset` (`below = true`) or `x[axis] ≥ offset`.
#[derive(Debug, Clone)]
pub struct HalfSpace {
    pub axis: usize,
    pub offset: f64,
    pub below: bool,
}

impl LevelSet for HalfSpace {
    fn value(&self, x: &[f64]) -> f64 {
        if self.below {
            x[self.axis] - self.offset
        } else {
            self.offset - x[self.axis]
        }
    }

    fn crossing(&self, a: &[f64], b: &[f64], fa: f64, fb: f64) -> Vec<f64> {
        if fa == 0.0 {
            return a.to_vec();
        }
        if fb == 0.0 {
            return b.to_vec();
        }
        let mut p = lerp(a, b, fa / (fa - fb));
        p[self.axis] = self.offset;
        p
    }

    fn shifted(&self, delta: f64) -> Option<SharedLevelSet> {
        let offset = if self.below {
            self.offset + delta
        } else {
            self.offset - delta
        };
        Some(Arc::new(HalfSpace {
            axis: self.axis,
            offset,
            below: self.below,
        }))
    }
}

/// Boundary and exterior of an axis-aligned box: non-positive on `∂box` and
/// outside, positive in the interior.
#[derive(Debug, Clone)]
pub struct BoxShell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LevelSet for BoxShell {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(k, &v)| (v - self.lo[k]).min(self.hi[k] - v))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `{x : base(x) ≤ delta}` for level sets without a closed-form offset.
#[derive(Debug, Clone)]
pub struct Shifted {
    pub base: SharedLevelSet,
    pub delta: f64,
}

impl LevelSet for Shifted {
    fn value(&self, x: &[f64]) -> f64 {
        self.base.value(x) - self.delta
    }
}

/// Closure of the complement: `{x : base(x) ≥ 0}`.
#[derive(Debug, Clone)]
pub struct Complement(pub SharedLevelSet);

impl LevelSet for Complement {
    fn value(&self, x: &[f64]) -> f64 {
        -self.0.value(x)
    }

    fn crossing(&self, a: &[f64], b: &[f64], fa: f64, fb: f64) -> Vec<f64> {
        self.0.crossing(a, b, -fa, -fb)
    }

    fn shifted(&self, delta: f64) -> Option<SharedLevelSet> {
        self.0
            .shifted(-delta)
            .map(|s| Arc::new(Complement(s)) as SharedLevelSet)
    }
}

pub fn shift(ls: &SharedLevelSet, delta: f64) -> SharedLevelSet {
    ls.shifted(delta).unwrap_or_else(|| {
        Arc::new(Shifted {
            base: ls.clone(),
            delta,
        })
    })
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Intersection of sublevel sets inside a bounding box.
#[derive(Debug, Clone)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub constraints: Vec<SharedLevelSet>,
}

impl Region {
    /// The bounding box of `grid` with no further constraints.
    pub fn boxed(grid: &Grid) -> Region {
        Region {
            lo: grid.lo.clone(),
            hi: grid.hi.clone(),
            constraints: Vec::new(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(k, &v)| v >= self.lo[k] && v <= self.hi[k])
            && self.constraints.iter().all(|c| c.value(x) <= 0.0)
    }

    pub fn intersect(mut self, other: &Region) -> Region {
        for k in 0..self.lo.len() {
            self.lo[k] = self.lo[k].max(other.lo[k]);
            self.hi[k] = self.hi[k].min(other.hi[k]);
        }
        self.constraints.extend(other.constraints.iter().cloned());
        self
    }
}

/// Vertex arena used while clipping simplices.
pub(crate) trait CutStore {
    /// Vertex on the edge from a kept vertex to a discarded one.
    fn cut(&mut self, kept: usize, dropped: usize) -> usize;

    /// Global vertex order used to pick prism diagonals.
    fn order(&self, a: usize, b: usize) -> std::cmp::Ordering {
        a.cmp(&b)
    }
}

fn min_vertex(store: &impl CutStore, vs: &[usize]) -> usize {
    *vs.iter().min_by(|a, b| store.order(**a, **b)).unwrap()
}

/// Splits the kept part of a simplex (vertices with `keep[i]`) into simplices.
///
/// Prisms are split with the minimum-handle rule, so two simplices sharing a
/// face produce matching diagonals as long as handles are global.
pub(crate) fn clip_simplex(
    simplex: &[usize],
    keep: &[bool],
    store: &mut impl CutStore,
    out: &mut Vec<Vec<usize>>,
) {
    let kept: Vec<usize> = (0..simplex.len())
        .filter(|&i| keep[i])
        .map(|i| simplex[i])
        .collect();
    let dropped: Vec<usize> = (0..simplex.len())
        .filter(|&i| !keep[i])
        .map(|i| simplex[i])
        .collect();
    if dropped.is_empty() {
        out.push(simplex.to_vec());
        return;
    }
    if kept.is_empty() {
        return;
    }
    match (simplex.len(), kept.len()) {
        (3, 1) => {
            let k = kept[0];
            let c0 = store.cut(k, dropped[0]);
            let c1 = store.cut(k, dropped[1]);
            out.push(vec![k, c0, c1]);
        }
        (3, 2) => {
            let (i1, i2, o) = (kept[0], kept[1], dropped[0]);
            let c1 = store.cut(i1, o);
            let c2 = store.cut(i2, o);
            let m = min_vertex(store, &[i1, i2, c1, c2]);
            if m == i1 || m == c2 {
                out.push(vec![i1, i2, c2]);
                out.push(vec![i1, c2, c1]);
            } else {
                out.push(vec![i1, i2, c1]);
                out.push(vec![i2, c2, c1]);
            }
        }
        (4, 1) => {
            let k = kept[0];
            let c: Vec<usize> = dropped.iter().map(|&o| store.cut(k, o)).collect();
            out.push(vec![k, c[0], c[1], c[2]]);
        }
        (4, 3) => {
            let o = dropped[0];
            let top: Vec<usize> = kept.iter().map(|&k| store.cut(k, o)).collect();
            prism_to_tets(
                [kept[0], kept[1], kept[2]],
                [top[0], top[1], top[2]],
                store,
                out,
            );
        }
        (4, 2) => {
            let (i, j) = (kept[0], kept[1]);
            let (o1, o2) = (dropped[0], dropped[1]);
            let bottom = [i, store.cut(i, o1), store.cut(i, o2)];
            let top = [j, store.cut(j, o1), store.cut(j, o2)];
            prism_to_tets(bottom, top, store, out);
        }
        _ => unreachable!("clipping supports triangles and tetrahedra only"),
    }
}

/// Splits the prism with triangles `bottom`, `top` and vertical edges
/// `bottom[k]–top[k]` into three tetrahedra.
fn prism_to_tets(
    bottom: [usize; 3],
    top: [usize; 3],
    store: &impl CutStore,
    out: &mut Vec<Vec<usize>>,
) {
    let all = [bottom[0], bottom[1], bottom[2], top[0], top[1], top[2]];
    let pos = (0..6).min_by(|&i, &j| store.order(all[i], all[j])).unwrap();
    let (mut b, mut t) = if pos < 3 {
        (bottom, top)
    } else {
        (top, bottom)
    };
    let r = pos % 3;
    b.rotate_left(r);
    t.rotate_left(r);
    let [a, bb, c] = b;
    let [d, e, f] = t;
    out.push(vec![a, d, e, f]);
    let m = min_vertex(store, &[bb, c, f, e]);
    if m == bb || m == f {
        out.push(vec![a, bb, c, f]);
        out.push(vec![a, bb, f, e]);
    } else {
        out.push(vec![a, bb, c, e]);
        out.push(vec![a, c, f, e]);
    }
}

/// Local arena for quadrature clipping.
struct LocalArena<'a> {
    positions: Vec<Vec<f64>>,
    values: Vec<f64>,
    ls: &'a dyn LevelSet,
    memo: Vec<((usize, usize), usize)>,
}

impl CutStore for LocalArena<'_> {
    fn cut(&mut self, kept: usize, dropped: usize) -> usize {
        let key = (kept.min(dropped), kept.max(dropped));
        if let Some(&(_, v)) = self.memo.iter().find(|(k, _)| *k == key) {
            return v;
        }
        let p = self.ls.crossing(
            &self.positions[kept],
            &self.positions[dropped],
            self.values[kept],
            self.values[dropped],
        );
        self.positions.push(p);
        self.values.push(0.0);
        let id = self.positions.len() - 1;
        self.memo.push((key, id));
        id
    }
}

/// Clips the given simplices (as vertex coordinates) to a region and returns
/// the pieces' `(centroid, volume)`.
pub fn clip_to_region(
    simplices: &[Vec<Vec<f64>>],
    constraints: &[&dyn LevelSet],
) -> Vec<(Vec<f64>, f64)> {
    let mut positions: Vec<Vec<f64>> = Vec::new();
    let mut current: Vec<Vec<usize>> = Vec::new();
    for s in simplices {
        let ids = s
            .iter()
            .map(|p| {
                positions.push(p.clone());
                positions.len() - 1
            })
            .collect();
        current.push(ids);
    }
    for ls in constraints {
        let values: Vec<f64> = positions.iter().map(|p| ls.value(p)).collect();
        let mut arena = LocalArena {
            positions: std::mem::take(&mut positions),
            values,
            ls: *ls,
            memo: Vec::new(),
        };
        let mut next = Vec::new();
        for s in &current {
            let keep: Vec<bool> = s.iter().map(|&v| arena.values[v] <= 0.0).collect();
            clip_simplex(s, &keep, &mut arena, &mut next);
        }
        positions = arena.positions;
        current = next;
    }
    current
        .iter()
        .filter_map(|s| {
            let verts: Vec<&[f64]> = s.iter().map(|&v| positions[v].as_slice()).collect();
            let vol = simplex_volume(&verts);
            (vol > 0.0).then(|| (centroid(&verts), vol))
        })
        .collect()
}

/// A disc or ball around a singular point whose cells are left out of every
/// quadrature sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub cell: usize,
    pub x: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Quadrature {
    pub grid: Grid,
    pub points: Vec<QuadPoint>,
    /// Cells with positive measure inside the region that were excluded.
    pub excluded_cells: Vec<usize>,
    /// Cells with positive measure inside the region that carry points.
    pub active_cells: usize,
    /// Cells crossed by a region boundary.
    pub cut_cells: usize,
}

impl Quadrature {
    pub fn total_weight(&self) -> f64 {
        crate::exec::pairwise_sum(&self.points.iter().map(|p| p.weight).collect::<Vec<_>>())
    }
}

enum CellOutcome {
    Outside,
    Excluded,
    Points(Vec<QuadPoint>, bool),
}

/// Builds the cut-cell quadrature of `region` on `grid`.
pub fn region_quadrature(
    grid: &Grid,
    region: &Region,
    exclusions: &[Exclusion],
    exec: Execution,
) -> Result<Quadrature> {
    let node_values: Vec<Vec<f64>> = region
        .constraints
        .iter()
        .map(|ls| {
            map_collect(exec, grid.node_count(), |i| {
                ls.value(&grid.node_position(i))
            })
        })
        .collect();
    let kuhn = kuhn_simplices(grid.dim);
    let vol = grid.cell_volume();

    let outcomes = map_collect(exec, grid.cell_count(), |cell| {
        let corners = grid.cell_corner_nodes(cell);
        let mut cutting = Vec::new();
        for (k, vals) in node_values.iter().enumerate() {
            let inside = corners.iter().filter(|&&c| vals[c] <= 0.0).count();
            if inside == 0 {
                return CellOutcome::Outside;
            }
            if inside < corners.len() {
                cutting.push(k);
            }
        }
        let center = grid.cell_center(cell);
        if exclusions
            .iter()
            .any(|e| dist(&center, &e.center) < e.radius)
        {
            return CellOutcome::Excluded;
        }
        if cutting.is_empty() {
            return CellOutcome::Points(
                vec![QuadPoint {
                    cell,
                    x: center,
                    weight: vol,
                }],
                false,
            );
        }
        let corner_pos: Vec<Vec<f64>> = corners.iter().map(|&c| grid.node_position(c)).collect();
        let simplices: Vec<Vec<Vec<f64>>> = kuhn
            .iter()
            .map(|s| s.iter().map(|&m| corner_pos[m].clone()).collect())
            .collect();
        let cons: Vec<&dyn LevelSet> = cutting
            .iter()
            .map(|&k| region.constraints[k].as_ref())
            .collect();
        let pieces = clip_to_region(&simplices, &cons);
        if pieces.is_empty() {
            return CellOutcome::Outside;
        }
        CellOutcome::Points(
            pieces
                .into_iter()
                .map(|(x, weight)| QuadPoint { cell, x, weight })
                .collect(),
            true,
        )
    });

    let mut points = Vec::new();
    let mut excluded_cells = Vec::new();
    let mut active_cells = 0;
    let mut cut_cells = 0;
    for (cell, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            CellOutcome::Outside => {}
            CellOutcome::Excluded => excluded_cells.push(cell),
            CellOutcome::Points(p, cut) => {
                active_cells += 1;
                cut_cells += usize::from(cut);
                points.extend(p);
            }
        }
    }
    if points.is_empty() {
        return Err(LabError::DegenerateDomain(
            "no quadrature cells remain inside the domain".into(),
        ));
    }
    Ok(Quadrature {
        grid: grid.clone(),
        points,
        excluded_cells,
        active_cells,
        cut_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn disc(r: f64) -> SharedLevelSet {
        Arc::new(Sphere {
            center: vec![0.0, 0.0],
            radius: r,
            inside: true,
        })
    }

    #[test]
    fn kuhn_simplices_tile_the_cube() {
        for dim in [2, 3] {
            let s = kuhn_simplices(dim);
            let fact: usize = (1..=dim).product();
            assert_eq!(s.len(), fact);
            assert!(s
                .iter()
                .all(|v| v[0] == 0 && *v.last().unwrap() == (1 << dim) - 1));
        }
    }

    #[test]
    fn sphere_crossing_is_on_the_sphere() {
        let s = Sphere {
            center: vec![0.1, -0.2, 0.3],
            radius: 0.7,
            inside: true,
        };
        let a = [0.1, -0.2, 0.3];
        let b = [1.0, 0.5, 0.2];
        let p = s.crossing(&a, &b, s.value(&a), s.value(&b));
        assert!(s.value(&p).abs() < 1e-14);
    }

    #[test]
    fn bracketed_crossing_finds_root() {
        let f = |x: &[f64]| x[0] * x[0] * x[0] - 0.2;
        let p = bracketed_crossing(f, &[0.0], &[1.0], -0.2, 0.8);
        assert!((p[0] - 0.2f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn full_box_quadrature_is_exact_volume() {
        let grid = Grid::new(vec![0.0, 0.0], vec![2.0, 1.0], 8).unwrap();
        let region = Region {
            lo: grid.lo.clone(),
            hi: grid.hi.clone(),
            constraints: vec![],
        };
        let q = region_quadrature(&grid, &region, &[], Execution::Sequential).unwrap();
        assert_eq!(q.points.len(), 64);
        assert!((q.total_weight() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn disc_area_converges_at_second_order() {
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let grid = Grid::new(vec![-1.0, -1.0], vec![1.0, 1.0], n).unwrap();
            let region = Region {
                lo: grid.lo.clone(),
                hi: grid.hi.clone(),
                constraints: vec![disc(0.9)],
            };
            let q = region_quadrature(&grid, &region, &[], Execution::Sequential).unwrap();
            errs.push((q.total_weight() - PI * 0.81).abs());
        }
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
        assert!(errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn ball_volume_with_cut_tetrahedra() {
        let exact = 4.0 / 3.0 * PI * 0.512;
        let errs: Vec<f64> = [12, 24]
            .iter()
            .map(|&n| {
                let grid = Grid::new(vec![-1.0; 3], vec![1.0; 3], n).unwrap();
                let region = Region {
                    lo: grid.lo.clone(),
                    hi: grid.hi.clone(),
                    constraints: vec![Arc::new(Sphere {
                        center: vec![0.0; 3],
                        radius: 0.8,
                        inside: true,
                    })],
                };
                let q = region_quadrature(&grid, &region, &[], Execution::Sequential).unwrap();
                (q.total_weight() - exact).abs() / exact
            })
            .collect();
        assert!(errs[1] < 5e-3 && errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn exclusion_counts_cells_near_origin() {
        let grid = Grid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 32).unwrap();
        let region = Region {
            lo: grid.lo.clone(),
            hi: grid.hi.clone(),
            constraints: vec![disc(1.0)],
        };
        let h = grid.h[0];
        let ex = [Exclusion {
            center: vec![0.0, 0.0],
            radius: 2.0 * h,
        }];
        let q = region_quadrature(&grid, &region, &ex, Execution::Sequential).unwrap();
        let brute = (0..grid.cell_count())
            .filter(|&c| dist(&grid.cell_center(c), &[0.0, 0.0]) < 2.0 * h)
            .count();
        assert_eq!(q.excluded_cells.len(), brute);
        assert_eq!(brute, 12);
    }
}
