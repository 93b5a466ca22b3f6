//! Variational p-capacity of condensers.
//!
//! The admissible functions are continuous piecewise-linear functions on the
//! Kuhn triangulation of the domain grid. Plates given by level sets are cut
//! out of the mesh exactly, so their boundaries carry the Dirichlet values;
//! the rest of the domain boundary carries the natural condition, with cut
//! elements weighted by the volume they have inside the domain.

mod image;
pub(crate) mod mesh;
mod ring;
mod solver;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use image::image_condenser;
pub use ring::{analytic_ring_capacity, ring_condenser};
pub use solver::solve_capacity;

use crate::error::{LabError, Result};
use crate::exec::Execution;
use crate::geometry::{shift, BoxShell, Grid, HalfSpace, SharedLevelSet, Sphere};
use crate::mapping::{Domain, DomainShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Below,
    Above,
}

/// Plate description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlateSpec {
    /// The outer boundary of the domain (and everything beyond it).
    OuterRing {},
    /// The hole of an annulus, closed.
    InnerRing {},
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// `{|x − center| ≥ radius}`.
    Exterior {
        center: Vec<f64>,
        radius: f64,
    },
    /// `{x[axis] ≤ offset}` or `{x[axis] ≥ offset}`.
    HalfSpace {
        axis: usize,
        offset: f64,
        side: Side,
    },
    /// Closed union of grid cells, given as multi-indices on the domain grid.
    Cells {
        cells: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondenserSpec {
    pub p: f64,
    #[serde(rename = "F0")]
    pub f0: PlateSpec,
    #[serde(rename = "F1")]
    pub f1: PlateSpec,
}

/// A closed plate.
#[derive(Debug, Clone)]
pub enum Plate {
    /// `{x : set(x) ≤ 0}`.
    LevelSet { set: SharedLevelSet, label: String },
    /// Union of closed cells of `grid`.
    Cells { grid: Grid, cells: Vec<usize> },
}

impl Plate {
    pub fn level_set(
        set: impl crate::geometry::LevelSet + 'static,
        label: impl Into<String>,
    ) -> Plate {
        Plate::LevelSet {
            set: Arc::new(set),
            label: label.into(),
        }
    }

    pub fn from_spec(spec: &PlateSpec, domain: &Domain, field: &str) -> Result<Plate> {
        let n = domain.dim();
        let check_center = |c: &Vec<f64>, r: f64| -> Result<()> {
            if c.len() != n || c.iter().any(|v| !v.is_finite()) {
                return Err(LabError::validation(
                    format!("{field}.center"),
                    format!("expected {n} finite coordinates"),
                ));
            }
            if !(r.is_finite() && r > 0.0) {
                return Err(LabError::validation(
                    format!("{field}.radius"),
                    "must be positive",
                ));
            }
            Ok(())
        };
        Ok(match spec {
            PlateSpec::OuterRing {} => match &domain.shape {
                DomainShape::Box { lo, hi } => Plate::level_set(
                    BoxShell {
                        lo: lo.clone(),
                        hi: hi.clone(),
                    },
                    "outer_ring",
                ),
                DomainShape::Ball { center, radius: r }
                | DomainShape::Annulus {
                    center, r_outer: r, ..
                } => Plate::level_set(
                    Sphere {
                        center: center.clone(),
                        radius: *r,
                        inside: false,
                    },
                    "outer_ring",
                ),
            },
            PlateSpec::InnerRing {} => match &domain.shape {
                DomainShape::Annulus {
                    center, r_inner, ..
                } => Plate::level_set(
                    Sphere {
                        center: center.clone(),
                        radius: *r_inner,
                        inside: true,
                    },
                    "inner_ring",
                ),
                _ => {
                    return Err(LabError::validation(
                        format!("{field}.kind"),
                        "inner_ring requires an annulus domain",
                    ))
                }
            },
            PlateSpec::Ball { center, radius } => {
                check_center(center, *radius)?;
                Plate::level_set(
                    Sphere {
                        center: center.clone(),
                        radius: *radius,
                        inside: true,
                    },
                    format!("ball(r={radius})"),
                )
            }
            PlateSpec::Exterior { center, radius } => {
                check_center(center, *radius)?;
                Plate::level_set(
                    Sphere {
                        center: center.clone(),
                        radius: *radius,
                        inside: false,
                    },
                    format!("exterior(r={radius})"),
                )
            }
            PlateSpec::HalfSpace { axis, offset, side } => {
                if *axis >= n {
                    return Err(LabError::validation(
                        format!("{field}.axis"),
                        format!("must be below {n}"),
                    ));
                }
                if !offset.is_finite() {
                    return Err(LabError::validation(
                        format!("{field}.offset"),
                        "must be finite",
                    ));
                }
                Plate::level_set(
                    HalfSpace {
                        axis: *axis,
                        offset: *offset,
                        below: *side == Side::Below,
                    },
                    format!(
                        "half_space(x{axis} {} {offset})",
                        if *side == Side::Below { "≤" } else { "≥" }
                    ),
                )
            }
            PlateSpec::Cells { cells } => {
                let grid = domain.sampling_grid()?;
                let mut idx = Vec::with_capacity(cells.len());
                for c in cells {
                    if c.len() != n || c.iter().any(|&i| i >= grid.cells) {
                        return Err(LabError::validation(
                            format!("{field}.cells"),
                            format!(
                                "cell {c:?} is not a valid index on the {}-cell grid",
                                grid.cells
                            ),
                        ));
                    }
                    idx.push(grid.cell_index(c));
                }
                idx.sort_unstable();
                idx.dedup();
                if idx.is_empty() {
                    return Err(LabError::validation(
                        format!("{field}.cells"),
                        "plate must not be empty",
                    ));
                }
                if !cells_connected(&grid, &idx) {
                    log::warn!(
                        "{field}: cell plate is not connected; the capacity is still well defined"
                    );
                }
                Plate::Cells { grid, cells: idx }
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            Plate::LevelSet { label, .. } => label.clone(),
            Plate::Cells { cells, .. } => format!("cells({})", cells.len()),
        }
    }

    /// Grows (`delta > 0`) or shrinks the plate by roughly `|delta|`; cell
    /// plates grow or shrink by one cell layer.
    pub fn offset(&self, delta: f64) -> Plate {
        match self {
            Plate::LevelSet { set, label } => Plate::LevelSet {
                set: shift(set, delta),
                label: format!("{label}{delta:+e}"),
            },
            Plate::Cells { grid, cells } => {
                let member = {
                    let mut m = vec![false; grid.cell_count()];
                    for &c in cells {
                        m[c] = true;
                    }
                    m
                };
                let neighbours = |c: usize| -> Vec<usize> {
                    let base = grid.cell_multi_index(c);
                    let mut out = Vec::new();
                    for code in 0..3usize.pow(grid.dim as u32) {
                        let mut rem = code;
                        let mut multi = base.clone();
                        let mut ok = true;
                        for m in multi.iter_mut() {
                            let d = (rem % 3) as isize - 1;
                            rem /= 3;
                            let v = *m as isize + d;
                            if v < 0 || v >= grid.cells as isize {
                                ok = false;
                            }
                            *m = v.max(0) as usize;
                        }
                        if ok {
                            out.push(grid.cell_index(&multi));
                        }
                    }
                    out
                };
                let next: Vec<usize> = if delta >= 0.0 {
                    let mut s: Vec<usize> = cells.iter().flat_map(|&c| neighbours(c)).collect();
                    s.sort_unstable();
                    s.dedup();
                    s
                } else {
                    let eroded: Vec<usize> = cells
                        .iter()
                        .cloned()
                        .filter(|&c| neighbours(c).iter().all(|&k| member[k]))
                        .collect();
                    if eroded.is_empty() {
                        cells.clone()
                    } else {
                        eroded
                    }
                };
                Plate::Cells {
                    grid: grid.clone(),
                    cells: next,
                }
            }
        }
    }
}

/// Whether the closed union of `cells` is connected (cells sharing a face,
/// edge or corner touch).
fn cells_connected(grid: &Grid, cells: &[usize]) -> bool {
    let mut seen = vec![false; cells.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        let a = grid.cell_multi_index(cells[i]);
        for (j, &c) in cells.iter().enumerate() {
            if !seen[j] {
                let b = grid.cell_multi_index(c);
                if a.iter().zip(&b).all(|(x, y)| x.abs_diff(*y) <= 1) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// A condenser `(F₀, F₁)` in a domain with exponent `p`.
#[derive(Debug, Clone)]
pub struct Condenser {
    pub domain: Domain,
    pub f0: Plate,
    pub f1: Plate,
    pub p: f64,
}

impl Condenser {
    pub fn from_spec(spec: &CondenserSpec, domain: &Domain) -> Result<Condenser> {
        let c = Condenser {
            domain: domain.clone(),
            f0: Plate::from_spec(&spec.f0, domain, "condenser.F0")?,
            f1: Plate::from_spec(&spec.f1, domain, "condenser.F1")?,
            p: spec.p,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if !(2..=3).contains(&self.domain.dim()) {
            return Err(LabError::validation(
                "domain.n",
                "capacities are computed for n = 2 and n = 3",
            ));
        }
        if !(self.p.is_finite() && (1.1..=10.0).contains(&self.p)) {
            return Err(LabError::validation(
                "condenser.p",
                "solver supports 1.1 ≤ p ≤ 10",
            ));
        }
        Ok(())
    }

    pub fn with_exponent(&self, p: f64) -> Condenser {
        Condenser { p, ..self.clone() }
    }

    pub fn with_grid(&self, grid: usize) -> Condenser {
        Condenser {
            domain: self.domain.with_grid(grid),
            ..self.clone()
        }
    }

    /// Both plates grown (`delta > 0`) or shrunk by `|delta|`.
    pub fn offset_plates(&self, delta: f64) -> Condenser {
        Condenser {
            f0: self.f0.offset(delta),
            f1: self.f1.offset(delta),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Stop a stage once the relative energy decrease stays below this.
    pub tol_energy: f64,
    /// Iteration cap per regularization stage.
    pub max_iter: usize,
    pub eps_schedule: Vec<f64>,
    /// Start from the interpolated solution on a grid half as fine.
    pub nested: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_energy: 1e-9,
            max_iter: 5000,
            eps_schedule: vec![1e-2, 1e-4, 1e-6, 1e-8],
            nested: true,
            exec: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_energy.is_finite() && self.tol_energy > 0.0) {
            return Err(LabError::validation(
                "solver.tol_energy",
                "must be positive",
            ));
        }
        if self.max_iter == 0 {
            return Err(LabError::validation("solver.max_iter", "must be positive"));
        }
        if self.eps_schedule.is_empty()
            || self
                .eps_schedule
                .iter()
                .any(|e| !(e.is_finite() && *e >= 0.0))
        {
            return Err(LabError::validation(
                "solver.eps_schedule",
                "must be a non-empty list of non-negative values",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTrace {
    pub epsilon: f64,
    pub iterations: usize,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshStats {
    pub regular_cells: usize,
    pub cut_elements: usize,
    pub free_nodes: usize,
    pub fixed_nodes: usize,
}

/// Values of the discrete minimizer at the grid nodes; `NaN` where a node is
/// outside the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl NodeField {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.grid.dim).map(|k| format!("x{}", k + 1)).collect();
        header.push("f".into());
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut rec: Vec<String> = self
                .grid
                .node_position(i)
                .iter()
                .map(|x| format!("{x}"))
                .collect();
            rec.push(crate::report::format_number(*v));
            w.write_record(&rec)?;
        }
        w.flush()
            .map_err(|e| LabError::io(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityResult {
    /// `cp_p(F₀, F₁; Ω)`: the unregularized energy of the minimizer.
    #[serde(with = "crate::report::extended")]
    pub value: f64,
    pub p: f64,
    pub grid: usize,
    /// Iterations on the finest grid, summed over stages.
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub epsilon_schedule: Vec<f64>,
    pub stages: Vec<StageTrace>,
    pub minimizer_min: f64,
    pub minimizer_max: f64,
    pub max_principle_ok: bool,
    pub mesh: MeshStats,
    #[serde(skip_serializing)]
    pub minimizer: NodeField,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_condenser_json() {
        let c: CondenserSpec = serde_json::from_str(
            r#"{"p": 2.0, "F0": {"kind": "outer_ring"}, "F1": {"kind": "ball", "center": [0,0], "radius": 0.25}}"#,
        )
        .unwrap();
        assert_eq!(c.f0, PlateSpec::OuterRing {});
        let bad = serde_json::from_str::<CondenserSpec>(
            r#"{"p": 2.0, "F0": {"kind": "outer_ring", "r": 1}, "F1": {"kind": "inner_ring"}}"#,
        );
        assert!(bad.is_err());
        let cells: PlateSpec =
            serde_json::from_str(r#"{"kind": "cells", "cells": [[1, 2], [3, 4]]}"#).unwrap();
        assert!(matches!(cells, PlateSpec::Cells { .. }));
    }

    #[test]
    fn validates_plates_and_exponent() {
        let d = Domain::unit_box(2, 8);
        let spec = CondenserSpec {
            p: 2.0,
            f0: PlateSpec::OuterRing {},
            f1: PlateSpec::InnerRing {},
        };
        let e = Condenser::from_spec(&spec, &d).unwrap_err();
        assert!(e.to_string().contains("condenser.F1.kind"));
        let spec = CondenserSpec {
            p: 12.0,
            f0: PlateSpec::OuterRing {},
            f1: PlateSpec::Cells {
                cells: vec![vec![3, 3]],
            },
        };
        assert!(Condenser::from_spec(&spec, &d)
            .unwrap_err()
            .to_string()
            .contains("condenser.p"));
        let spec = CondenserSpec {
            p: 2.0,
            f0: PlateSpec::OuterRing {},
            f1: PlateSpec::Cells {
                cells: vec![vec![8, 3]],
            },
        };
        assert!(Condenser::from_spec(&spec, &d)
            .unwrap_err()
            .to_string()
            .contains("condenser.F1.cells"));
    }

    #[test]
    fn cell_connectivity() {
        let g = Domain::unit_box(2, 8).sampling_grid().unwrap();
        let idx = |m: &[usize]| g.cell_index(m);
        assert!(cells_connected(&g, &[idx(&[1, 1]), idx(&[2, 2])]));
        assert!(!cells_connected(&g, &[idx(&[1, 1]), idx(&[3, 1])]));
    }

    #[test]
    fn cell_plates_dilate_and_erode() {
        let d = Domain::unit_box(2, 8);
        let p = Plate::from_spec(
            &PlateSpec::Cells {
                cells: vec![vec![3, 3], vec![4, 3]],
            },
            &d,
            "F1",
        )
        .unwrap();
        match p.offset(1.0) {
            Plate::Cells { cells, .. } => assert_eq!(cells.len(), 12),
            _ => unreachable!(),
        }
        match p.offset(-1.0) {
            Plate::Cells { cells, .. } => assert_eq!(cells.len(), 2),
            _ => unreachable!(),
        }
    }
}
