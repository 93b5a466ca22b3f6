//! Mappings `φ: Ω → ℝⁿ`, their domains and differentials.

mod domain;
mod grid_field;
mod sample;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use domain::{unit_ball_volume, unit_sphere_area, Domain, DomainShape};
pub use grid_field::GridField;
pub use sample::{differential_sample, sample_grid, DifferentialSample, GridSamples};

use crate::error::{LabError, Result};
use crate::geometry::{LevelSet, SharedLevelSet};
use crate::linalg::Matrix;

/// Declarative mapping description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MappingSpec {
    Identity,
    /// `x ↦ A x`, `matrix` given row by row.
    Linear {
        matrix: Vec<Vec<f64>>,
    },
    /// `x ↦ |x|^{a−1} x`.
    RadialPower {
        a: f64,
    },
    /// `(x₁, x₂, …) ↦ (k x₁, x₂, …)`.
    PlanarStretch {
        k: f64,
    },
    /// Samples loaded from `path`, covering the box `[lo, hi]`.
    GridField {
        path: String,
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default = "default_order")]
        order: usize,
    },
    /// `maps = [f, g]` denotes `g ∘ f`.
    Composed {
        maps: Vec<MappingSpec>,
    },
}

fn default_order() -> usize {
    1
}

impl MappingSpec {
    pub fn linear(rows: &[&[f64]]) -> Self {
        MappingSpec::Linear {
            matrix: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        MappingSpec::Linear {
            matrix: (0..n)
                .map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn composed(first: MappingSpec, then: MappingSpec) -> Self {
        MappingSpec::Composed {
            maps: vec![first, then],
        }
    }

    /// Closed-form inverse.
    pub fn inverse(&self) -> Result<MappingSpec> {
        Ok(match self {
            MappingSpec::Identity => MappingSpec::Identity,
            MappingSpec::Linear { matrix } => {
                let a = matrix_from_rows(matrix)?;
                let inv = a
                    .try_inverse()
                    .ok_or_else(|| LabError::validation("map.matrix", "matrix is singular"))?;
                MappingSpec::Linear {
                    matrix: (0..inv.nrows())
                        .map(|i| inv.row(i).iter().cloned().collect())
                        .collect(),
                }
            }
            MappingSpec::RadialPower { a } => MappingSpec::RadialPower { a: 1.0 / a },
            MappingSpec::PlanarStretch { k } => MappingSpec::PlanarStretch { k: 1.0 / k },
            MappingSpec::GridField { path, .. } => {
                return Err(LabError::NoInverse(format!("grid field `{path}`")));
            }
            MappingSpec::Composed { maps } => {
                if maps.len() != 2 {
                    return Err(LabError::validation(
                        "map.maps",
                        "composed needs exactly two maps",
                    ));
                }
                MappingSpec::composed(maps[1].inverse()?, maps[0].inverse()?)
            }
        })
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(LabError::validation(
            "map.matrix",
            "matrix must be square and non-empty",
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LabError::validation("map.matrix", "entries must be finite"));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// How Jacobians are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    Analytic,
    /// Central differences with step `h` (default `max(1e−5, 1e−6·(1+|x|))`),
    /// one-sided where a central stencil would leave the domain.
    CentralFd {
        #[serde(default)]
        h: Option<f64>,
    },
}

impl Scheme {
    /// Analytic when available, finite differences otherwise.
    pub fn default_for(mapping: &Mapping) -> Scheme {
        if mapping.has_analytic_jacobian() {
            Scheme::Analytic
        } else {
            Scheme::CentralFd { h: None }
        }
    }
}

/// A validated mapping ready for evaluation.
#[derive(Debug, Clone)]
pub enum Mapping {
    Identity,
    Linear(Matrix),
    RadialPower(f64),
    PlanarStretch(f64),
    GridField(Arc<GridField>),
    Composed(Box<Mapping>, Box<Mapping>),
}

impl Mapping {
    /// Validates `spec` and loads any referenced data; relative paths are
    /// resolved against `base_dir`.
    pub fn from_spec(spec: &MappingSpec, base_dir: &Path) -> Result<Mapping> {
        Self::build(spec, base_dir, 0)
    }

    fn build(spec: &MappingSpec, base_dir: &Path, depth: usize) -> Result<Mapping> {
        Ok(match spec {
            MappingSpec::Identity => Mapping::Identity,
            MappingSpec::Linear { matrix } => {
                let a = matrix_from_rows(matrix)?;
                if a.nrows() < 2 {
                    return Err(LabError::validation(
                        "map.matrix",
                        "dimension must be at least 2",
                    ));
                }
                if crate::linalg::determinant(&a) == 0.0 {
                    return Err(LabError::validation(
                        "map.matrix",
                        "determinant must be nonzero",
                    ));
                }
                Mapping::Linear(a)
            }
            MappingSpec::RadialPower { a } => {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(LabError::validation(
                        "map.a",
                        "exponent must be positive and finite",
                    ));
                }
                Mapping::RadialPower(*a)
            }
            MappingSpec::PlanarStretch { k } => {
                if !(k.is_finite() && *k != 0.0) {
                    return Err(LabError::validation(
                        "map.k",
                        "stretch factor must be finite and nonzero",
                    ));
                }
                Mapping::PlanarStretch(*k)
            }
            MappingSpec::GridField {
                path,
                lo,
                hi,
                order,
            } => {
                let p = base_dir.join(path);
                Mapping::GridField(Arc::new(GridField::load(
                    &p,
                    lo.clone(),
                    hi.clone(),
                    *order,
                )?))
            }
            MappingSpec::Composed { maps } => {
                if maps.len() != 2 {
                    return Err(LabError::validation(
                        "map.maps",
                        "composed needs exactly two maps",
                    ));
                }
                if depth > 0 {
                    return Err(LabError::validation(
                        "map.maps",
                        "composed mappings cannot be nested",
                    ));
                }
                Mapping::Composed(
                    Box::new(Self::build(&maps[0], base_dir, depth + 1)?),
                    Box::new(Self::build(&maps[1], base_dir, depth + 1)?),
                )
            }
        })
    }

    /// Convenience for specs that reference no files.
    pub fn new(spec: &MappingSpec) -> Result<Mapping> {
        Self::from_spec(spec, Path::new("."))
    }

    pub fn compose(first: Mapping, then: Mapping) -> Mapping {
        Mapping::Composed(Box::new(first), Box::new(then))
    }

    /// Fixed dimension, if the family has one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Mapping::Identity | Mapping::RadialPower(_) | Mapping::PlanarStretch(_) => None,
            Mapping::Linear(a) => Some(a.nrows()),
            Mapping::GridField(g) => Some(g.dim()),
            Mapping::Composed(f, g) => f.dim().or(g.dim()),
        }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        let check = |m: &Mapping| match m.dim() {
            Some(d) if d != n => Err(LabError::validation(
                "map",
                format!("mapping has dimension {d} but the domain has dimension {n}"),
            )),
            _ => Ok(()),
        };
        match self {
            Mapping::Composed(f, g) => {
                check(f)?;
                check(g)
            }
            m => check(m),
        }
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        match self {
            Mapping::GridField(_) => false,
            Mapping::Composed(f, g) => f.has_analytic_jacobian() && g.has_analytic_jacobian(),
            _ => true,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Mapping::Identity => "identity".into(),
            Mapping::Linear(a) => {
                let rows: Vec<String> = (0..a.nrows())
                    .map(|i| {
                        let r: Vec<String> = a.row(i).iter().map(|v| format!("{v}")).collect();
                        r.join(",")
                    })
                    .collect();
                format!("linear[{}]", rows.join(";"))
            }
            Mapping::RadialPower(a) => format!("radial_power(a={a})"),
            Mapping::PlanarStretch(k) => format!("planar_stretch(k={k})"),
            Mapping::GridField(g) => format!("grid_field{:?}", g.counts),
            Mapping::Composed(f, g) => format!("({})∘({})", g.label(), f.label()),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Mapping::Identity => x.to_vec(),
            Mapping::Linear(a) => {
                if x.len() != a.nrows() {
                    return Err(LabError::OutsideDomain { point: x.to_vec() });
                }
                (0..a.nrows())
                    .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
                    .collect()
            }
            Mapping::RadialPower(a) => {
                let r = norm(x);
                if r == 0.0 {
                    x.to_vec()
                } else {
                    let s = r.powf(a - 1.0);
                    x.iter().map(|v| s * v).collect()
                }
            }
            Mapping::PlanarStretch(k) => {
                let mut y = x.to_vec();
                y[0] *= k;
                y
            }
            Mapping::GridField(g) => g.evaluate(x)?,
            Mapping::Composed(f, g) => g.evaluate(&f.evaluate(x)?)?,
        })
    }

    /// `Dφ(x)`; finite differences never step outside the mapping's own
    /// definition box.
    pub fn jacobian(&self, x: &[f64], scheme: Scheme) -> Result<Matrix> {
        self.jacobian_within(x, scheme, |_| true)
    }

    /// `Dφ(x)` with finite-difference stencils kept inside `inside`.
    pub fn jacobian_within(
        &self,
        x: &[f64],
        scheme: Scheme,
        inside: impl Fn(&[f64]) -> bool,
    ) -> Result<Matrix> {
        match scheme {
            Scheme::Analytic => self.analytic_jacobian(x),
            Scheme::CentralFd { h } => {
                let h = h.unwrap_or_else(|| default_fd_step(x));
                if !(h.is_finite() && h > 0.0) {
                    return Err(LabError::validation("scheme.h", "step must be positive"));
                }
                self.fd_jacobian(x, h, |p| inside(p) && self.defined_at(p))
            }
        }
    }

    fn defined_at(&self, x: &[f64]) -> bool {
        match self {
            Mapping::GridField(g) => g.contains(x),
            Mapping::Composed(f, g) => {
                f.defined_at(x) && f.evaluate(x).is_ok_and(|y| g.defined_at(&y))
            }
            _ => true,
        }
    }

    fn analytic_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let n = x.len();
        Ok(match self {
            Mapping::Identity => Matrix::identity(n, n),
            Mapping::Linear(a) => {
                if n != a.nrows() {
                    return Err(LabError::OutsideDomain { point: x.to_vec() });
                }
                a.clone()
            }
            Mapping::RadialPower(a) => {
                let r = norm(x);
                if r == 0.0 {
                    if *a > 1.0 {
                        Matrix::zeros(n, n)
                    } else if *a == 1.0 {
                        Matrix::identity(n, n)
                    } else {
                        return Err(LabError::Singular { point: x.to_vec() });
                    }
                } else {
                    let s = r.powf(a - 1.0);
                    let c = (a - 1.0) / (r * r);
                    Matrix::from_fn(n, n, |i, j| {
                        s * (if i == j { 1.0 } else { 0.0 } + c * x[i] * x[j])
                    })
                }
            }
            Mapping::PlanarStretch(k) => {
                let mut m = Matrix::identity(n, n);
                m[(0, 0)] = *k;
                m
            }
            Mapping::GridField(_) => {
                return Err(LabError::UnsupportedScheme(
                    "analytic Jacobian requested for a grid field; use central_fd".into(),
                ))
            }
            Mapping::Composed(f, g) => {
                let jf = f.analytic_jacobian(x)?;
                let jg = g.analytic_jacobian(&f.evaluate(x)?)?;
                jg * jf
            }
        })
    }

    fn fd_jacobian(&self, x: &[f64], h: f64, inside: impl Fn(&[f64]) -> bool) -> Result<Matrix> {
        let n = x.len();
        let f0 = self.evaluate(x)?;
        let mut jac = Matrix::zeros(f0.len(), n);
        let shifted = |k: usize, t: f64| {
            let mut p = x.to_vec();
            p[k] += t;
            p
        };
        for k in 0..n {
            let (xp, xm) = (shifted(k, h), shifted(k, -h));
            let col: Vec<f64> = if inside(&xp) && inside(&xm) {
                let (fp, fm) = (self.evaluate(&xp)?, self.evaluate(&xm)?);
                fp.iter()
                    .zip(&fm)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect()
            } else {
                // second-order one-sided difference towards the interior
                let dir = if inside(&xp) && inside(&shifted(k, 2.0 * h)) {
                    1.0
                } else if inside(&xm) && inside(&shifted(k, -2.0 * h)) {
                    -1.0
                } else {
                    return Err(LabError::ResolutionTooCoarse(format!(
                        "no finite-difference stencil of width {h} fits inside the domain at {x:?}"
                    )));
                };
                let f1 = self.evaluate(&shifted(k, dir * h))?;
                let f2 = self.evaluate(&shifted(k, 2.0 * dir * h))?;
                (0..f0.len())
                    .map(|i| dir * (-3.0 * f0[i] + 4.0 * f1[i] - f2[i]) / (2.0 * h))
                    .collect()
            };
            for (i, v) in col.into_iter().enumerate() {
                jac[(i, k)] = v;
            }
        }
        Ok(jac)
    }

    pub fn inverse(&self) -> Result<Mapping> {
        Ok(match self {
            Mapping::Identity => Mapping::Identity,
            Mapping::Linear(a) => Mapping::Linear(
                a.clone()
                    .try_inverse()
                    .ok_or_else(|| LabError::validation("map.matrix", "matrix is singular"))?,
            ),
            Mapping::RadialPower(a) => Mapping::RadialPower(1.0 / a),
            Mapping::PlanarStretch(k) => Mapping::PlanarStretch(1.0 / k),
            Mapping::GridField(_) => return Err(LabError::NoInverse("grid field".into())),
            Mapping::Composed(f, g) => Mapping::compose(g.inverse()?, f.inverse()?),
        })
    }

    /// Points of `ℝⁿ` where the differential degenerates or blows up.
    pub fn singular_points(&self, n: usize) -> Vec<Vec<f64>> {
        match self {
            Mapping::RadialPower(a) if *a != 1.0 => vec![vec![0.0; n]],
            Mapping::Composed(f, g) => {
                let mut pts = f.singular_points(n);
                if let Ok(finv) = f.inverse() {
                    for p in g.singular_points(n) {
                        if let Ok(q) = finv.evaluate(&p) {
                            pts.push(q);
                        }
                    }
                }
                pts
            }
            _ => vec![],
        }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn default_fd_step(x: &[f64]) -> f64 {
    (1e-6 * (1.0 + norm(x))).max(1e-5)
}

/// The set `{y : base(φ⁻¹(y)) ≤ 0}` given the inverse map.
#[derive(Debug, Clone)]
pub struct Pullback {
    pub base: SharedLevelSet,
    pub inverse: Mapping,
}

impl LevelSet for Pullback {
    fn value(&self, y: &[f64]) -> f64 {
        match self.inverse.evaluate(y) {
            Ok(x) => self.base.value(&x),
            Err(_) => f64::INFINITY,
        }
    }
}
