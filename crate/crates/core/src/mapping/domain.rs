use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{Grid, Region, SharedLevelSet, Sphere};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainShape {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        center: Vec<f64>,
        r_inner: f64,
        r_outer: f64,
    },
}

/// A bounded domain together with the resolution of its sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain", into = "RawDomain")]
pub struct Domain {
    pub shape: DomainShape,
    pub grid: usize,
    /// Radius of the exclusion zone around singular points. `None` means
    /// two cell widths.
    pub eps_sing: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_inner: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_outer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps_sing: Option<f64>,
}

fn need<T>(v: Option<T>, field: &str, kind: &str) -> Result<T> {
    v.ok_or_else(|| {
        LabError::validation(
            format!("domain.{field}"),
            format!("required for kind `{kind}`"),
        )
    })
}

fn forbid<T>(v: &Option<T>, field: &str, kind: &str) -> Result<()> {
    match v {
        Some(_) => Err(LabError::validation(
            format!("domain.{field}"),
            format!("not allowed for kind `{kind}`"),
        )),
        None => Ok(()),
    }
}

impl TryFrom<RawDomain> for Domain {
    type Error = LabError;

    fn try_from(raw: RawDomain) -> Result<Self> {
        let kind = raw.kind.as_str();
        let shape = match kind {
            "box" => {
                forbid(&raw.center, "center", kind)?;
                forbid(&raw.radius, "radius", kind)?;
                forbid(&raw.r_inner, "r_inner", kind)?;
                forbid(&raw.r_outer, "r_outer", kind)?;
                DomainShape::Box {
                    lo: need(raw.lo, "lo", kind)?,
                    hi: need(raw.hi, "hi", kind)?,
                }
            }
            "ball" => {
                forbid(&raw.lo, "lo", kind)?;
                forbid(&raw.hi, "hi", kind)?;
                forbid(&raw.r_inner, "r_inner", kind)?;
                forbid(&raw.r_outer, "r_outer", kind)?;
                DomainShape::Ball {
                    center: need(raw.center, "center", kind)?,
                    radius: need(raw.radius, "radius", kind)?,
                }
            }
            "annulus" => {
                forbid(&raw.lo, "lo", kind)?;
                forbid(&raw.hi, "hi", kind)?;
                forbid(&raw.radius, "radius", kind)?;
                DomainShape::Annulus {
                    center: need(raw.center, "center", kind)?,
                    r_inner: need(raw.r_inner, "r_inner", kind)?,
                    r_outer: need(raw.r_outer, "r_outer", kind)?,
                }
            }
            other => {
                return Err(LabError::validation(
                    "domain.kind",
                    format!("unknown kind `{other}` (expected box, ball or annulus)"),
                ))
            }
        };
        let d = Domain {
            shape,
            grid: raw.grid,
            eps_sing: raw.eps_sing,
        };
        d.validate()?;
        if let Some(n) = raw.n {
            if n != d.dim() {
                return Err(LabError::validation(
                    "domain.n",
                    format!("n = {n} but the geometry has dimension {}", d.dim()),
                ));
            }
        }
        Ok(d)
    }
}

impl From<Domain> for RawDomain {
    fn from(d: Domain) -> Self {
        let n = Some(d.dim());
        let mut raw = RawDomain {
            kind: String::new(),
            n,
            grid: d.grid,
            lo: None,
            hi: None,
            center: None,
            radius: None,
            r_inner: None,
            r_outer: None,
            eps_sing: d.eps_sing,
        };
        match d.shape {
            DomainShape::Box { lo, hi } => {
                raw.kind = "box".into();
                raw.lo = Some(lo);
                raw.hi = Some(hi);
            }
            DomainShape::Ball { center, radius } => {
                raw.kind = "ball".into();
                raw.center = Some(center);
                raw.radius = Some(radius);
            }
            DomainShape::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                raw.kind = "annulus".into();
                raw.center = Some(center);
                raw.r_inner = Some(r_inner);
                raw.r_outer = Some(r_outer);
            }
        }
        raw
    }
}

/// Surface measure of the unit sphere in `ℝⁿ`.
pub fn unit_sphere_area(n: usize) -> f64 {
    // ω_{n−1} = 2 π^{n/2} / Γ(n/2), via the recurrence ω_{n+1} = 2π ω_{n−1} / (n−1)
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * unit_sphere_area(n - 2) / (n - 2) as f64,
    }
}

/// Volume of the unit ball in `ℝⁿ`.
pub fn unit_ball_volume(n: usize) -> f64 {
    unit_sphere_area(n) / n as f64
}

impl Domain {
    pub fn unit_box(n: usize, grid: usize) -> Self {
        Domain {
            shape: DomainShape::Box {
                lo: vec![0.0; n],
                hi: vec![1.0; n],
            },
            grid,
            eps_sing: None,
        }
    }

    pub fn rect(lo: Vec<f64>, hi: Vec<f64>, grid: usize) -> Self {
        Domain {
            shape: DomainShape::Box { lo, hi },
            grid,
            eps_sing: None,
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64, grid: usize) -> Self {
        Domain {
            shape: DomainShape::Ball { center, radius },
            grid,
            eps_sing: None,
        }
    }

    pub fn annulus(center: Vec<f64>, r_inner: f64, r_outer: f64, grid: usize) -> Self {
        Domain {
            shape: DomainShape::Annulus {
                center,
                r_inner,
                r_outer,
            },
            grid,
            eps_sing: None,
        }
    }

    pub fn with_grid(&self, grid: usize) -> Self {
        Domain {
            grid,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            DomainShape::Box { lo, .. } => lo.len(),
            DomainShape::Ball { center, .. } | DomainShape::Annulus { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64], field: &str| -> Result<()> {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(LabError::validation(
                    format!("domain.{field}"),
                    "non-finite coordinate",
                ))
            }
        };
        let n = self.dim();
        if n < 2 {
            return Err(LabError::validation(
                "domain.n",
                "dimension must be at least 2",
            ));
        }
        match &self.shape {
            DomainShape::Box { lo, hi } => {
                finite(lo, "lo")?;
                finite(hi, "hi")?;
                if lo.len() != hi.len() {
                    return Err(LabError::validation(
                        "domain.hi",
                        "lo and hi differ in length",
                    ));
                }
                if lo.iter().zip(hi).any(|(a, b)| a >= b) {
                    return Err(LabError::validation(
                        "domain.hi",
                        "every hi coordinate must exceed lo",
                    ));
                }
            }
            DomainShape::Ball { center, radius } => {
                finite(center, "center")?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(LabError::validation(
                        "domain.radius",
                        "must be positive and finite",
                    ));
                }
            }
            DomainShape::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                finite(center, "center")?;
                if !(r_inner.is_finite()
                    && r_outer.is_finite()
                    && 0.0 < *r_inner
                    && r_inner < r_outer)
                {
                    return Err(LabError::validation(
                        "domain.r_inner",
                        "annulus requires 0 < r_inner < r_outer",
                    ));
                }
            }
        }
        if self.grid == 0 {
            return Err(LabError::validation("domain.grid", "must be positive"));
        }
        if let Some(e) = self.eps_sing {
            if !(e.is_finite() && e >= 0.0) {
                return Err(LabError::validation(
                    "domain.eps_sing",
                    "must be non-negative",
                ));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            DomainShape::Box { lo, hi } => (lo.clone(), hi.clone()),
            DomainShape::Ball { center, radius: r }
            | DomainShape::Annulus {
                center, r_outer: r, ..
            } => (
                center.iter().map(|c| c - r).collect(),
                center.iter().map(|c| c + r).collect(),
            ),
        }
    }

    pub fn sampling_grid(&self) -> Result<Grid> {
        let (lo, hi) = self.bounds();
        Grid::new(lo, hi, self.grid)
    }

    /// Exclusion radius for a grid with spacing `h`.
    pub fn exclusion_radius(&self, h: f64) -> f64 {
        self.eps_sing.unwrap_or(2.0 * h)
    }

    pub fn boundary_level_sets(&self) -> Vec<SharedLevelSet> {
        match &self.shape {
            DomainShape::Box { .. } => vec![],
            DomainShape::Ball { center, radius } => vec![Arc::new(Sphere {
                center: center.clone(),
                radius: *radius,
                inside: true,
            })],
            DomainShape::Annulus {
                center,
                r_inner,
                r_outer,
            } => vec![
                Arc::new(Sphere {
                    center: center.clone(),
                    radius: *r_outer,
                    inside: true,
                }),
                Arc::new(Sphere {
                    center: center.clone(),
                    radius: *r_inner,
                    inside: false,
                }),
            ],
        }
    }

    pub fn region(&self) -> Region {
        let (lo, hi) = self.bounds();
        Region {
            lo,
            hi,
            constraints: self.boundary_level_sets(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            DomainShape::Box { lo, hi } => {
                x.iter().enumerate().all(|(k, &v)| v >= lo[k] && v <= hi[k])
            }
            DomainShape::Ball { center, radius } => crate::geometry::dist(x, center) <= *radius,
            DomainShape::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                let r = crate::geometry::dist(x, center);
                r >= *r_inner && r <= *r_outer
            }
        }
    }

    /// Exact Lebesgue measure.
    pub fn volume(&self) -> f64 {
        let n = self.dim();
        match &self.shape {
            DomainShape::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            DomainShape::Ball { radius, .. } => unit_ball_volume(n) * radius.powi(n as i32),
            DomainShape::Annulus {
                r_inner, r_outer, ..
            } => unit_ball_volume(n) * (r_outer.powi(n as i32) - r_inner.powi(n as i32)),
        }
    }
}
