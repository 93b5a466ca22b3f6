use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::dist;
use crate::mapping::{Domain, DomainShape};

/// A family of smooth test functions on the image domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// `f = y_k` for the first `count` axes (all axes by default).
    Coordinate {
        #[serde(default)]
        count: Option<usize>,
    },
    /// `f = ln|y − c|` with `c` outside the domain; members shift `c` along
    /// the first axis.
    RadialLog {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default)]
        count: Option<usize>,
    },
    /// `f = exp(−|y − c|²/σ²)`; member `k` uses `σ/(k+1)`.
    Bump {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default)]
        scale: Option<f64>,
        #[serde(default)]
        count: Option<usize>,
    },
    /// `f = Π cos(kπ (y_i − lo_i)/L_i)` over the bounding box, `k = 1..=count`.
    TensorCosine {
        #[serde(default)]
        count: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    Coordinate {
        axis: usize,
    },
    RadialLog {
        center: Vec<f64>,
    },
    Bump {
        center: Vec<f64>,
        scale: f64,
    },
    TensorCosine {
        freq: usize,
        lo: Vec<f64>,
        len: Vec<f64>,
    },
}

impl TestFunction {
    pub fn label(&self) -> String {
        let pt = |c: &[f64]| {
            c.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            TestFunction::Coordinate { axis } => format!("y{}", axis + 1),
            TestFunction::RadialLog { center } => format!("ln|y-({})|", pt(center)),
            TestFunction::Bump { center, scale } => format!("bump({};{scale})", pt(center)),
            TestFunction::TensorCosine { freq, .. } => format!("tensor_cosine(k={freq})"),
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            TestFunction::Coordinate { axis } => y[*axis],
            TestFunction::RadialLog { center } => dist(y, center).ln(),
            TestFunction::Bump { center, scale } => (-(dist(y, center) / scale).powi(2)).exp(),
            TestFunction::TensorCosine { freq, lo, len } => (0..y.len())
                .map(|i| (*freq as f64 * PI * (y[i] - lo[i]) / len[i]).cos())
                .product(),
        }
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        match self {
            TestFunction::Coordinate { axis } => {
                (0..n).map(|k| if k == *axis { 1.0 } else { 0.0 }).collect()
            }
            TestFunction::RadialLog { center } => {
                let r2: f64 = y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                y.iter().zip(center).map(|(a, b)| (a - b) / r2).collect()
            }
            TestFunction::Bump { center, scale } => {
                let f = self.value(y);
                y.iter()
                    .zip(center)
                    .map(|(a, b)| -2.0 * (a - b) / (scale * scale) * f)
                    .collect()
            }
            TestFunction::TensorCosine { freq, lo, len } => {
                let w: Vec<f64> = (0..n).map(|i| *freq as f64 * PI / len[i]).collect();
                let c: Vec<f64> = (0..n).map(|i| (w[i] * (y[i] - lo[i])).cos()).collect();
                (0..n)
                    .map(|k| {
                        let others: f64 = (0..n).filter(|&i| i != k).map(|i| c[i]).product();
                        -w[k] * (w[k] * (y[k] - lo[k])).sin() * others
                    })
                    .collect()
            }
        }
    }
}

fn diameter(domain: &Domain) -> f64 {
    let (lo, hi) = domain.bounds();
    dist(&lo, &hi)
}

impl FamilySpec {
    /// Coordinates, one radial logarithm, one bump and two cosine modes.
    pub fn default_family() -> Vec<FamilySpec> {
        vec![
            FamilySpec::Coordinate { count: None },
            FamilySpec::RadialLog {
                center: None,
                count: None,
            },
            FamilySpec::Bump {
                center: None,
                scale: None,
                count: None,
            },
            FamilySpec::TensorCosine { count: Some(2) },
        ]
    }

    pub fn members(&self, domain: &Domain) -> Result<Vec<TestFunction>> {
        let n = domain.dim();
        let check_center = |c: &Vec<f64>| -> Result<()> {
            if c.len() != n || c.iter().any(|v| !v.is_finite()) {
                return Err(LabError::validation(
                    "family.center",
                    format!("expected {n} finite coordinates"),
                ));
            }
            Ok(())
        };
        let count = |c: &Option<usize>, default: usize| -> Result<usize> {
            match c {
                Some(0) => Err(LabError::validation("family.count", "must be positive")),
                Some(k) => Ok(*k),
                None => Ok(default),
            }
        };
        let (lo, hi) = domain.bounds();
        Ok(match self {
            FamilySpec::Coordinate { count: c } => {
                let k = count(c, n)?;
                if k > n {
                    return Err(LabError::validation(
                        "family.count",
                        format!("at most {n} coordinates"),
                    ));
                }
                (0..k)
                    .map(|axis| TestFunction::Coordinate { axis })
                    .collect()
            }
            FamilySpec::RadialLog { center, count: c } => {
                let k = count(c, 1)?;
                let (base, step) = match (center, &domain.shape) {
                    (Some(c), _) => {
                        check_center(c)?;
                        (c.clone(), 0.25 * diameter(domain))
                    }
                    (
                        None,
                        DomainShape::Annulus {
                            center, r_inner, ..
                        },
                    ) => (center.clone(), 0.25 * r_inner),
                    (None, _) => (
                        lo.iter().zip(&hi).map(|(a, b)| a - 0.5 * (b - a)).collect(),
                        -0.25 * diameter(domain),
                    ),
                };
                let mut out = Vec::with_capacity(k);
                for j in 0..k {
                    let mut c = base.clone();
                    c[0] += j as f64 * step;
                    if distance_outside(domain, &c) < 1e-3 * diameter(domain) {
                        return Err(LabError::validation(
                            "family.center",
                            "radial_log centers must lie away from the closed domain",
                        ));
                    }
                    out.push(TestFunction::RadialLog { center: c });
                }
                out
            }
            FamilySpec::Bump {
                center,
                scale,
                count: c,
            } => {
                let k = count(c, 1)?;
                let center = match (center, &domain.shape) {
                    (Some(c), _) => {
                        check_center(c)?;
                        c.clone()
                    }
                    (
                        None,
                        DomainShape::Annulus {
                            center,
                            r_inner,
                            r_outer,
                        },
                    ) => {
                        let mut c = center.clone();
                        c[0] += 0.5 * (r_inner + r_outer);
                        c
                    }
                    (None, _) => lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect(),
                };
                let sigma = scale.unwrap_or(0.25 * diameter(domain));
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(LabError::validation("family.scale", "must be positive"));
                }
                (0..k)
                    .map(|j| TestFunction::Bump {
                        center: center.clone(),
                        scale: sigma / (j + 1) as f64,
                    })
                    .collect()
            }
            FamilySpec::TensorCosine { count: c } => {
                let k = count(c, 1)?;
                let len: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
                (1..=k)
                    .map(|freq| TestFunction::TensorCosine {
                        freq,
                        lo: lo.clone(),
                        len: len.clone(),
                    })
                    .collect()
            }
        })
    }
}

/// Distance from a point outside the closed domain to the domain; negative
/// inside.
fn distance_outside(domain: &Domain, c: &[f64]) -> f64 {
    match &domain.shape {
        DomainShape::Box { lo, hi } => c
            .iter()
            .enumerate()
            .map(|(k, &v)| (lo[k] - v).max(v - hi[k]).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt(),
        DomainShape::Ball { center, radius } => dist(c, center) - radius,
        DomainShape::Annulus {
            center,
            r_inner,
            r_outer,
        } => {
            let d = dist(c, center);
            (r_inner - d).max(d - r_outer)
        }
    }
}

/// Members of several families, in order.
pub fn family_members(specs: &[FamilySpec], domain: &Domain) -> Result<Vec<TestFunction>> {
    let mut out = Vec::new();
    for s in specs {
        out.extend(s.members(domain)?);
    }
    if out.is_empty() {
        return Err(LabError::validation("family", "no test functions"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(f: &TestFunction, y: &[f64]) -> Vec<f64> {
        (0..y.len())
            .map(|k| {
                let h = 1e-6;
                let mut a = y.to_vec();
                let mut b = y.to_vec();
                a[k] += h;
                b[k] -= h;
                (f.value(&a) - f.value(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn closed_form_gradients_match_differences() {
        for d in [
            Domain::unit_box(2, 8),
            Domain::annulus(vec![0.0; 3], 1.0, 2.0, 8),
        ] {
            for spec in FamilySpec::default_family() {
                for f in spec.members(&d).unwrap() {
                    let y: Vec<f64> = (0..d.dim()).map(|k| 0.3 + 0.9 * k as f64).collect();
                    let g = f.gradient(&y);
                    let fd = fd_gradient(&f, &y);
                    for k in 0..y.len() {
                        assert!(
                            (g[k] - fd[k]).abs() < 1e-6 * (1.0 + g[k].abs()),
                            "{}: {g:?} vs {fd:?}",
                            f.label()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn radial_log_center_must_avoid_domain() {
        let d = Domain::unit_box(2, 8);
        let spec = FamilySpec::RadialLog {
            center: Some(vec![0.5, 0.5]),
            count: None,
        };
        assert!(spec.members(&d).is_err());
        let spec = FamilySpec::Coordinate { count: Some(3) };
        assert!(spec.members(&d).is_err());
    }

    #[test]
    fn default_family_sizes() {
        let m = family_members(&FamilySpec::default_family(), &Domain::unit_box(3, 8)).unwrap();
        assert_eq!(m.len(), 3 + 1 + 1 + 2);
    }
}
