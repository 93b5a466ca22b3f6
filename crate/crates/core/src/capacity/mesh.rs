//! Boundary-fitted P1 discretization of the condenser energy.
//!
//! Cells untouched by any boundary are evaluated directly from the grid
//! (their Kuhn simplices are implicit). Cells crossed by a plate boundary are
//! clipped, with the new vertices on the plate surface fixed to the plate
//! value. Cells crossed by the remaining domain boundary keep their simplices
//! and weight each by its volume inside the domain; nodes outside the domain
//! that belong to such simplices stay free.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::exec::{map_chunks, map_collect, pairwise_sum, Execution};
use crate::geometry::{
    clip_simplex, clip_to_region, kuhn_simplices, simplex_volume, Complement, CutStore, Grid,
    LevelSet, SharedLevelSet,
};
use crate::linalg::Matrix;

use super::{Condenser, MeshStats, Plate};

/// Nodes closer to a plate surface than this fraction of a cell width are
/// moved onto it, which keeps clipped elements away from slivers.
const SNAP: f64 = 1e-3;
const CHUNK: usize = 2048;

/// `s ↦ s^{p/2}` and its first two derivative factors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Power {
    pub p: f64,
    pub eps2: f64,
    quarters: Option<u32>,
}

impl Power {
    pub fn new(p: f64, eps: f64) -> Self {
        let k = 2.0 * p;
        let quarters =
            ((k - k.round()).abs() < 1e-12 && k.round() >= 1.0).then(|| k.round() as u32);
        Power {
            p,
            eps2: eps * eps,
            quarters,
        }
    }

    #[inline]
    fn pow(&self, s: f64) -> f64 {
        match self.quarters {
            Some(k) => {
                let base = s.powi((k / 4) as i32);
                match k % 4 {
                    0 => base,
                    1 => base * s.sqrt().sqrt(),
                    2 => base * s.sqrt(),
                    _ => {
                        let r = s.sqrt();
                        base * r * r.sqrt()
                    }
                }
            }
            None => s.powf(0.5 * self.p),
        }
    }

    /// `(s^{p/2}, s^{p/2−1}, (p−2)·s^{p/2−2})`.
    #[inline]
    fn eval(&self, s: f64) -> (f64, f64, f64) {
        if s == 0.0 {
            let f1 = if self.p == 2.0 {
                1.0
            } else if self.p > 2.0 {
                0.0
            } else {
                f64::INFINITY
            };
            return (0.0, f1, 0.0);
        }
        let f = self.pow(s);
        let f1 = f / s;
        let f2 = if self.p == 2.0 {
            0.0
        } else {
            (self.p - 2.0) * f1 / s
        };
        (f, f1, f2)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
enum VKey {
    Node(usize),
    Cut(u8, Box<VKey>, Box<VKey>),
}

struct FeArena<'a> {
    keys: Vec<VKey>,
    pos: Vec<Vec<f64>>,
    vals: Vec<f64>,
    plate: u8,
    ls: &'a dyn LevelSet,
    memo: Vec<(VKey, usize)>,
}

impl CutStore for FeArena<'_> {
    fn cut(&mut self, kept: usize, dropped: usize) -> usize {
        if self.vals[kept] == 0.0 {
            // the crossing is the kept vertex itself; resulting slivers are dropped
            return kept;
        }
        let (a, b) = if self.keys[kept] < self.keys[dropped] {
            (kept, dropped)
        } else {
            (dropped, kept)
        };
        let key = VKey::Cut(
            self.plate,
            Box::new(self.keys[a].clone()),
            Box::new(self.keys[b].clone()),
        );
        if let Some((_, id)) = self.memo.iter().find(|(k, _)| *k == key) {
            return *id;
        }
        let p = self
            .ls
            .crossing(&self.pos[a], &self.pos[b], self.vals[a], self.vals[b]);
        self.keys.push(key.clone());
        self.pos.push(p);
        self.vals.push(0.0);
        let id = self.keys.len() - 1;
        self.memo.push((key, id));
        id
    }

    fn order(&self, a: usize, b: usize) -> std::cmp::Ordering {
        self.keys[a].cmp(&self.keys[b])
    }
}

struct LocalElement {
    keys: Vec<VKey>,
    pos: Vec<Vec<f64>>,
    weight: f64,
}

enum CellOut {
    Skip,
    Regular,
    General(Vec<LocalElement>),
    Touch(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Element {
    v: [usize; 4],
    grad: [[f64; 3]; 4],
    w: f64,
}

enum PlateField {
    Set {
        ls: SharedLevelSet,
        comp: SharedLevelSet,
        node_vals: Vec<f64>,
    },
    Cells {
        node_fixed: Vec<bool>,
    },
}

#[derive(Debug)]
pub(crate) struct Mesh {
    pub dim: usize,
    pub grid: Grid,
    pub n_nodes: usize,
    pub fixed: Vec<bool>,
    pub free: Vec<bool>,
    pub active: Vec<bool>,
    /// Vertex lies in the closed domain.
    pub inside: Vec<bool>,
    /// Plate values at fixed vertices, 0.5 elsewhere.
    pub init: Vec<f64>,
    layers: Vec<Vec<usize>>,
    layer_stride: usize,
    elems: Vec<Element>,
    kuhn: Vec<([usize; 4], [usize; 3])>,
    corner_off: Vec<usize>,
    inv_h: [f64; 3],
    simplex_vol: f64,
    pub stats: MeshStats,
    exec: Execution,
}

/// Cells of `target` that overlap the closed cells `cells` of `source` with
/// positive measure.
fn overlapping_cells(source: &Grid, cells: &[usize], target: &Grid) -> Vec<bool> {
    let mut mask = vec![false; target.cell_count()];
    let n = target.dim;
    for &c in cells {
        let m = source.cell_multi_index(c);
        let ranges: Vec<(usize, usize)> = (0..n)
            .map(|k| {
                let a = source.lo[k] + m[k] as f64 * source.h[k];
                let b = a + source.h[k];
                let ta = ((a - target.lo[k]) / target.h[k] + 1e-9).floor().max(0.0) as usize;
                let tb = ((b - target.lo[k]) / target.h[k] - 1e-9)
                    .ceil()
                    .min(target.cells as f64) as usize;
                (ta.min(target.cells - 1), tb.max(ta + 1).min(target.cells))
            })
            .collect();
        let counts: Vec<usize> = ranges.iter().map(|(a, b)| b - a).collect();
        let total: usize = counts.iter().product();
        for idx in 0..total {
            let mut rem = idx;
            let multi: Vec<usize> = (0..n)
                .map(|k| {
                    let i = ranges[k].0 + rem % counts[k];
                    rem /= counts[k];
                    i
                })
                .collect();
            mask[target.cell_index(&multi)] = true;
        }
    }
    mask
}

fn grad_norm_fd(ls: &dyn LevelSet, x: &[f64], delta: f64) -> f64 {
    let mut s = 0.0;
    let mut p = x.to_vec();
    for k in 0..x.len() {
        p[k] = x[k] + delta;
        let a = ls.value(&p);
        p[k] = x[k] - delta;
        let b = ls.value(&p);
        p[k] = x[k];
        let d = (a - b) / (2.0 * delta);
        if d.is_finite() {
            s += d * d;
        }
    }
    s.sqrt()
}

impl Mesh {
    pub fn build(condenser: &Condenser, exec: Execution) -> Result<Mesh> {
        let grid = condenser.domain.sampling_grid()?;
        let n = grid.dim;
        let n_nodes = grid.node_count();
        let hmin = grid.h.iter().cloned().fold(f64::INFINITY, f64::min);
        let node_pos = |i: usize| grid.node_position(i);

        let domain_sets = condenser.domain.boundary_level_sets();
        let dom_vals: Vec<Vec<f64>> = domain_sets
            .iter()
            .map(|ls| map_collect(exec, n_nodes, |i| ls.value(&node_pos(i))))
            .collect();

        let plates = [&condenser.f0, &condenser.f1];
        let mut fields = Vec::with_capacity(2);
        for plate in plates {
            fields.push(match plate {
                Plate::LevelSet { set, .. } => {
                    let mut vals = map_collect(exec, n_nodes, |i| set.value(&node_pos(i)));
                    // candidates for snapping: corners of cells with mixed signs
                    let near: Vec<usize> = {
                        let mut mark = vec![false; n_nodes];
                        for c in 0..grid.cell_count() {
                            let corners = grid.cell_corner_nodes(c);
                            let neg = corners.iter().any(|&i| vals[i] < 0.0);
                            let pos = corners.iter().any(|&i| vals[i] > 0.0);
                            if neg && pos {
                                for i in corners {
                                    mark[i] = true;
                                }
                            }
                        }
                        (0..n_nodes).filter(|&i| mark[i]).collect()
                    };
                    let snapped = map_collect(exec, near.len(), |k| {
                        let i = near[k];
                        let g = grad_norm_fd(set.as_ref(), &node_pos(i), 0.125 * hmin);
                        vals[i].abs() < SNAP * hmin * g
                    });
                    for (k, &i) in near.iter().enumerate() {
                        if snapped[k] {
                            vals[i] = 0.0;
                        }
                    }
                    PlateField::Set {
                        ls: set.clone(),
                        comp: Arc::new(Complement(set.clone())),
                        node_vals: vals,
                    }
                }
                Plate::Cells { grid: src, cells } => {
                    let mask = overlapping_cells(src, cells, &grid);
                    let mut node_fixed = vec![false; n_nodes];
                    for (c, &m) in mask.iter().enumerate() {
                        if m {
                            for i in grid.cell_corner_nodes(c) {
                                node_fixed[i] = true;
                            }
                        }
                    }
                    PlateField::Cells { node_fixed }
                }
            });
        }

        let node_in_plate = |j: usize, i: usize| match &fields[j] {
            PlateField::Set { node_vals, .. } => node_vals[i] <= 0.0,
            PlateField::Cells { node_fixed } => node_fixed[i],
        };
        for i in 0..n_nodes {
            if node_in_plate(0, i) && node_in_plate(1, i) {
                return Err(LabError::validation(
                    "condenser",
                    format!(
                        "plates F0 and F1 touch at {:?}; separate them or refine the grid",
                        node_pos(i)
                    ),
                ));
            }
        }

        let kuhn_masks = kuhn_simplices(n);
        let cell_vol = grid.cell_volume();
        let outs = map_collect(exec, grid.cell_count(), |c| {
            let corners = grid.cell_corner_nodes(c);
            let mut partial = Vec::new();
            for (k, vals) in dom_vals.iter().enumerate() {
                let out = corners.iter().filter(|&&i| vals[i] > 0.0).count();
                if out == corners.len() {
                    return CellOut::Skip;
                }
                if out > 0 {
                    partial.push(k);
                }
            }
            let mut cutting = Vec::new();
            for (j, f) in fields.iter().enumerate() {
                if let PlateField::Set { node_vals, .. } = f {
                    let inn = corners.iter().filter(|&&i| node_vals[i] < 0.0).count();
                    let out = corners.iter().filter(|&&i| node_vals[i] > 0.0).count();
                    if out == 0 {
                        return CellOut::Skip;
                    }
                    if inn > 0 {
                        cutting.push(j);
                    }
                }
            }
            if partial.is_empty() && cutting.is_empty() {
                return CellOut::Regular;
            }

            let mut keys: Vec<VKey> = corners.iter().map(|&i| VKey::Node(i)).collect();
            let mut pos: Vec<Vec<f64>> = corners.iter().map(|&i| node_pos(i)).collect();
            let mut simplices: Vec<Vec<usize>> = kuhn_masks.clone();
            for &j in &cutting {
                let (ls, comp, node_vals) = match &fields[j] {
                    PlateField::Set {
                        ls,
                        comp,
                        node_vals,
                    } => (ls, comp, node_vals),
                    PlateField::Cells { .. } => unreachable!(),
                };
                let mut vals = Vec::with_capacity(keys.len());
                for (v, key) in keys.iter().enumerate() {
                    vals.push(match key {
                        VKey::Node(i) => -node_vals[*i],
                        VKey::Cut(..) => {
                            let psi = ls.value(&pos[v]);
                            if psi <= 0.0 {
                                return CellOut::Touch(pos[v].clone());
                            }
                            -psi
                        }
                    });
                }
                let mut arena = FeArena {
                    keys,
                    pos,
                    vals,
                    plate: j as u8,
                    ls: comp.as_ref(),
                    memo: Vec::new(),
                };
                let mut next = Vec::new();
                for s in &simplices {
                    let keep: Vec<bool> = s.iter().map(|&v| arena.vals[v] <= 0.0).collect();
                    clip_simplex(s, &keep, &mut arena, &mut next);
                }
                keys = arena.keys;
                pos = arena.pos;
                simplices = next;
            }
            let dom: Vec<&dyn LevelSet> =
                partial.iter().map(|&k| domain_sets[k].as_ref()).collect();
            let mut elems = Vec::new();
            for s in simplices {
                let verts: Vec<&[f64]> = s.iter().map(|&v| pos[v].as_slice()).collect();
                let weight = if dom.is_empty() {
                    simplex_volume(&verts)
                } else {
                    let vs: Vec<Vec<f64>> = verts.iter().map(|v| v.to_vec()).collect();
                    clip_to_region(&[vs], &dom).iter().map(|(_, w)| w).sum()
                };
                if weight > 1e-12 * cell_vol && simplex_volume(&verts) > 1e-14 * cell_vol {
                    elems.push(LocalElement {
                        keys: s.iter().map(|&v| keys[v].clone()).collect(),
                        pos: s.iter().map(|&v| pos[v].clone()).collect(),
                        weight,
                    });
                }
            }
            CellOut::General(elems)
        });

        let m = grid.nodes_per_axis();
        let layer_stride = m.pow(n as u32 - 1);
        let cells_per_layer = grid.cells.pow(n as u32 - 1);
        let mut layers = vec![Vec::new(); grid.cells];
        let mut elems = Vec::new();
        let mut cut_ids: HashMap<VKey, usize> = HashMap::new();
        let mut cut_values: Vec<f64> = Vec::new();
        let plate_value = [0.0, 1.0];
        for (c, out) in outs.into_iter().enumerate() {
            match out {
                CellOut::Skip => {}
                CellOut::Regular => layers[c / cells_per_layer].push(grid.cell_base_node(c)),
                CellOut::Touch(p) => {
                    return Err(LabError::validation(
                        "condenser",
                        format!(
                            "plates F0 and F1 touch near {p:?}; separate them or refine the grid"
                        ),
                    ))
                }
                CellOut::General(list) => {
                    for le in list {
                        let mut v = [0usize; 4];
                        for (k, key) in le.keys.iter().enumerate() {
                            v[k] = match key {
                                VKey::Node(i) => *i,
                                VKey::Cut(j, ..) => {
                                    let next = n_nodes + cut_values.len();
                                    let id = *cut_ids.entry(key.clone()).or_insert(next);
                                    if id == next {
                                        cut_values.push(plate_value[*j as usize]);
                                    }
                                    id
                                }
                            };
                        }
                        let e = Matrix::from_fn(n, n, |i, k| le.pos[i + 1][k] - le.pos[0][k]);
                        let inv = match e.try_inverse() {
                            Some(inv) => inv,
                            None => continue,
                        };
                        let mut grad = [[0.0; 3]; 4];
                        for i in 1..=n {
                            for k in 0..n {
                                grad[i][k] = inv[(k, i - 1)];
                                grad[0][k] -= inv[(k, i - 1)];
                            }
                        }
                        elems.push(Element {
                            v,
                            grad,
                            w: le.weight,
                        });
                    }
                }
            }
        }

        let total = n_nodes + cut_values.len();
        let mut fixed = vec![false; total];
        let mut init = vec![0.5; total];
        for i in 0..n_nodes {
            for j in 0..2 {
                if node_in_plate(j, i) {
                    fixed[i] = true;
                    init[i] = plate_value[j];
                }
            }
        }
        for (k, v) in cut_values.iter().enumerate() {
            fixed[n_nodes + k] = true;
            init[n_nodes + k] = *v;
        }

        let corner_off: Vec<usize> = grid
            .cell_corner_nodes(0)
            .iter()
            .map(|&i| i - grid.cell_base_node(0))
            .collect();
        let mut active = vec![false; total];
        let mut regular_cells = 0;
        for layer in &layers {
            regular_cells += layer.len();
            for &b in layer {
                for &o in &corner_off {
                    active[b + o] = true;
                }
            }
        }
        for e in &elems {
            for &v in &e.v[..=n] {
                active[v] = true;
            }
        }
        let free: Vec<bool> = (0..total).map(|i| active[i] && !fixed[i]).collect();
        let mut inside = vec![true; total];
        for (i, flag) in inside.iter_mut().enumerate().take(n_nodes) {
            *flag = dom_vals.iter().all(|v| v[i] <= 0.0);
        }
        for (j, name) in ["condenser.F0", "condenser.F1"].iter().enumerate() {
            if !(0..total).any(|i| active[i] && fixed[i] && init[i] == plate_value[j]) {
                return Err(LabError::validation(
                    *name,
                    "plate does not meet the domain on this grid",
                ));
            }
        }

        let kuhn = kuhn_masks
            .iter()
            .map(|s| {
                let mut ms = [0usize; 4];
                let mut ax = [0usize; 3];
                for k in 0..=n {
                    ms[k] = s[k];
                }
                for k in 0..n {
                    ax[k] = (s[k + 1] ^ s[k]).trailing_zeros() as usize;
                }
                (ms, ax)
            })
            .collect();
        let mut inv_h = [0.0; 3];
        for k in 0..n {
            inv_h[k] = 1.0 / grid.h[k];
        }
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        let stats = MeshStats {
            regular_cells,
            cut_elements: elems.len(),
            free_nodes: free.iter().filter(|&&f| f).count(),
            fixed_nodes: (0..total).filter(|&i| fixed[i] && active[i]).count(),
        };
        Ok(Mesh {
            dim: n,
            simplex_vol: cell_vol / fact,
            grid,
            n_nodes,
            fixed,
            free,
            active,
            inside,
            init,
            layers,
            layer_stride,
            elems,
            kuhn,
            corner_off,
            inv_h,
            stats,
            exec,
        })
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    /// Energy, gradient and Hessian diagonal. Gradient and diagonal are zero
    /// at vertices that are not free.
    pub fn energy_grad(&self, u: &[f64], pw: Power, grad: &mut [f64], diag: &mut [f64]) -> f64 {
        match self.dim {
            2 => self.energy_grad_d::<2>(u, pw, grad, diag),
            _ => self.energy_grad_d::<3>(u, pw, grad, diag),
        }
    }

    fn energy_grad_d<const D: usize>(
        &self,
        u: &[f64],
        pw: Power,
        grad: &mut [f64],
        diag: &mut [f64],
    ) -> f64 {
        let stride = self.layer_stride;
        let nc = 1usize << D;
        let p = pw.p;
        let vol = self.simplex_vol;
        let layer_out = map_collect(self.exec, self.layers.len(), |l| {
            let off = l * stride;
            let mut gbuf = vec![0.0; 2 * stride];
            let mut dbuf = vec![0.0; 2 * stride];
            let mut e = 0.0;
            for &base in &self.layers[l] {
                let mut uc = [0.0; 8];
                for m in 0..nc {
                    uc[m] = u[base + self.corner_off[m]];
                }
                let mut gc = [0.0; 8];
                let mut dc = [0.0; 8];
                for (ms, ax) in &self.kuhn {
                    let mut g = [0.0; 3];
                    let mut s = pw.eps2;
                    for k in 0..D {
                        g[k] = (uc[ms[k + 1]] - uc[ms[k]]) * self.inv_h[ax[k]];
                        s += g[k] * g[k];
                    }
                    let (f, f1, f2) = pw.eval(s);
                    e += vol * f;
                    let c = vol * p * f1;
                    for k in 0..D {
                        let t = c * g[k] * self.inv_h[ax[k]];
                        gc[ms[k + 1]] += t;
                        gc[ms[k]] -= t;
                    }
                    for j in 0..=D {
                        let mut lam2 = 0.0;
                        let mut gl = 0.0;
                        if j >= 1 {
                            let ih = self.inv_h[ax[j - 1]];
                            lam2 += ih * ih;
                            gl += g[j - 1] * ih;
                        }
                        if j < D {
                            let ih = self.inv_h[ax[j]];
                            lam2 += ih * ih;
                            gl -= g[j] * ih;
                        }
                        dc[ms[j]] += vol * p * (f1 * lam2 + f2 * gl * gl);
                    }
                }
                for m in 0..nc {
                    let li = base + self.corner_off[m] - off;
                    gbuf[li] += gc[m];
                    dbuf[li] += dc[m];
                }
            }
            (e, gbuf, dbuf)
        });
        grad.iter_mut().for_each(|g| *g = 0.0);
        diag.iter_mut().for_each(|d| *d = 0.0);
        let mut energies = Vec::with_capacity(layer_out.len() + self.elems.len() / CHUNK + 1);
        for (l, (e, gb, db)) in layer_out.into_iter().enumerate() {
            energies.push(e);
            let off = l * stride;
            for (i, (g, d)) in gb.iter().zip(&db).enumerate() {
                grad[off + i] += g;
                diag[off + i] += d;
            }
        }
        let chunk_out = map_chunks(self.exec, self.elems.len(), CHUNK, |r| {
            let mut e = 0.0;
            let mut contrib = Vec::with_capacity(r.len() * (D + 1) * 2);
            for el in &self.elems[r] {
                let mut g = [0.0; 3];
                for j in 0..=D {
                    let uj = u[el.v[j]];
                    for k in 0..D {
                        g[k] += uj * el.grad[j][k];
                    }
                }
                let s = pw.eps2 + (0..D).map(|k| g[k] * g[k]).sum::<f64>();
                let (f, f1, f2) = pw.eval(s);
                e += el.w * f;
                for j in 0..=D {
                    let gl: f64 = (0..D).map(|k| g[k] * el.grad[j][k]).sum();
                    let lam2: f64 = (0..D).map(|k| el.grad[j][k] * el.grad[j][k]).sum();
                    contrib.push(el.w * p * f1 * gl);
                    contrib.push(el.w * p * (f1 * lam2 + f2 * gl * gl));
                }
            }
            (e, contrib)
        });
        for (ci, (e, contrib)) in chunk_out.into_iter().enumerate() {
            energies.push(e);
            let start = ci * CHUNK;
            for (k, pair) in contrib.chunks_exact(2).enumerate() {
                let el = &self.elems[start + k / (D + 1)];
                let v = el.v[k % (D + 1)];
                grad[v] += pair[0];
                diag[v] += pair[1];
            }
        }
        for i in 0..grad.len() {
            if !self.free[i] {
                grad[i] = 0.0;
                diag[i] = 0.0;
            }
        }
        pairwise_sum(&energies)
    }

    /// `[φ(α), φ'(α), φ''(α)]` for `φ(α) = E(u + α d)`; with `d = None` only
    /// the energy is computed.
    pub fn line_terms(&self, u: &[f64], d: Option<&[f64]>, alpha: f64, pw: Power) -> [f64; 3] {
        match self.dim {
            2 => self.line_terms_d::<2>(u, d, alpha, pw),
            _ => self.line_terms_d::<3>(u, d, alpha, pw),
        }
    }

    fn line_terms_d<const D: usize>(
        &self,
        u: &[f64],
        d: Option<&[f64]>,
        alpha: f64,
        pw: Power,
    ) -> [f64; 3] {
        let nc = 1usize << D;
        let p = pw.p;
        let vol = self.simplex_vol;
        let at = |i: usize| match d {
            Some(d) => (u[i] + alpha * d[i], d[i]),
            None => (u[i], 0.0),
        };
        let accumulate = |acc: &mut [f64; 3], w: f64, g: &[f64; 3], gd: &[f64; 3]| {
            let mut s = pw.eps2;
            let mut gg = 0.0;
            let mut dd = 0.0;
            for k in 0..D {
                s += g[k] * g[k];
                gg += g[k] * gd[k];
                dd += gd[k] * gd[k];
            }
            if d.is_none() {
                acc[0] += w * pw.pow(s);
                return;
            }
            let (f, f1, f2) = pw.eval(s);
            acc[0] += w * f;
            acc[1] += w * p * f1 * gg;
            acc[2] += w * p * (f1 * dd + f2 * gg * gg);
        };
        let layer_out = map_collect(self.exec, self.layers.len(), |l| {
            let mut acc = [0.0; 3];
            for &base in &self.layers[l] {
                let mut uc = [0.0; 8];
                let mut dc = [0.0; 8];
                for m in 0..nc {
                    (uc[m], dc[m]) = at(base + self.corner_off[m]);
                }
                for (ms, ax) in &self.kuhn {
                    let mut g = [0.0; 3];
                    let mut gd = [0.0; 3];
                    for k in 0..D {
                        let ih = self.inv_h[ax[k]];
                        g[k] = (uc[ms[k + 1]] - uc[ms[k]]) * ih;
                        gd[k] = (dc[ms[k + 1]] - dc[ms[k]]) * ih;
                    }
                    accumulate(&mut acc, vol, &g, &gd);
                }
            }
            acc
        });
        let chunk_out = map_chunks(self.exec, self.elems.len(), CHUNK, |r| {
            let mut acc = [0.0; 3];
            for el in &self.elems[r] {
                let mut g = [0.0; 3];
                let mut gd = [0.0; 3];
                for j in 0..=D {
                    let (uj, dj) = at(el.v[j]);
                    for k in 0..D {
                        g[k] += uj * el.grad[j][k];
                        gd[k] += dj * el.grad[j][k];
                    }
                }
                accumulate(&mut acc, el.w, &g, &gd);
            }
            acc
        });
        let all: Vec<[f64; 3]> = layer_out.into_iter().chain(chunk_out).collect();
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = pairwise_sum(&all.iter().map(|a| a[k]).collect::<Vec<_>>());
        }
        out
    }

    pub fn energy(&self, u: &[f64], pw: Power) -> f64 {
        self.line_terms(u, None, 0.0, pw)[0]
    }

    /// Multilinear interpolation of grid-node values (inactive nodes must
    /// already be filled).
    pub fn interpolate_nodes(&self, values: &[f64], x: &[f64]) -> f64 {
        let g = &self.grid;
        let n = g.dim;
        let mut base = vec![0usize; n];
        let mut t = vec![0.0; n];
        for k in 0..n {
            let s = ((x[k] - g.lo[k]) / g.h[k]).clamp(0.0, g.cells as f64);
            let i = (s.floor() as usize).min(g.cells - 1);
            base[k] = i;
            t[k] = s - i as f64;
        }
        let b = g.node_index(&base);
        let mut v = 0.0;
        for (mask, &off) in self.corner_off.iter().enumerate() {
            let mut w = 1.0;
            for k in 0..n {
                w *= if mask & (1 << k) != 0 {
                    t[k]
                } else {
                    1.0 - t[k]
                };
            }
            v += w * values[b + off];
        }
        v
    }

    /// Grid-node values with every node outside the mesh filled by averaging
    /// filled axis neighbours.
    pub fn filled_node_values(&self, u: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut vals: Vec<f64> = (0..self.n_nodes)
            .map(|i| {
                if self.active[i] || self.fixed[i] {
                    u[i]
                } else {
                    f64::NAN
                }
            })
            .collect();
        let strides = g.node_strides();
        let m = g.nodes_per_axis();
        loop {
            let missing: Vec<usize> = (0..self.n_nodes).filter(|&i| vals[i].is_nan()).collect();
            if missing.is_empty() {
                break;
            }
            let updates: Vec<(usize, f64)> = missing
                .iter()
                .filter_map(|&i| {
                    let multi = g.node_multi_index(i);
                    let mut sum = 0.0;
                    let mut cnt = 0;
                    for k in 0..g.dim {
                        if multi[k] > 0 && !vals[i - strides[k]].is_nan() {
                            sum += vals[i - strides[k]];
                            cnt += 1;
                        }
                        if multi[k] + 1 < m && !vals[i + strides[k]].is_nan() {
                            sum += vals[i + strides[k]];
                            cnt += 1;
                        }
                    }
                    (cnt > 0).then(|| (i, sum / cnt as f64))
                })
                .collect();
            if updates.is_empty() {
                for i in missing {
                    vals[i] = 0.5;
                }
                break;
            }
            for (i, v) in updates {
                vals[i] = v;
            }
        }
        vals
    }

    pub fn node_position(&self, i: usize) -> Vec<f64> {
        self.grid.node_position(i)
    }
}
