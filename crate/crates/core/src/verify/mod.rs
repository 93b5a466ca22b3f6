//! Numerical checks of the transfer identity, the change-of-variables
//! formula, the capacity distortion estimates and the two-sided energy
//! bounds for composition operators.

mod family;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use family::{family_members, FamilySpec, TestFunction};

use crate::capacity::{image_condenser, solve_capacity, CapacityResult, Condenser, SolverConfig};
use crate::distortion::{
    global_k_pq, global_ki_qs, jacobian_positive, kappa, lebesgue_norm, sobolev_seminorm,
    ExponentPair,
};
use crate::error::{LabError, Result};
use crate::exec::{join, map_collect, pairwise_sum, Execution};
use crate::geometry::{region_quadrature, HalfSpace, Quadrature, Region, SharedLevelSet};
use crate::mapping::{sample_grid, Domain, DomainShape, GridSamples, Mapping, Pullback, Scheme};

/// Default relative tolerance of inequality checks.
pub const TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Identity,
    Inequality,
}

/// Outcome of one check. For identities `slack` is the relative residual,
/// for inequalities it is `rhs − lhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub kind: VerdictKind,
    #[serde(with = "crate::report::extended")]
    pub lhs: f64,
    #[serde(with = "crate::report::extended")]
    pub rhs: f64,
    #[serde(with = "crate::report::extended")]
    pub slack: f64,
    pub tolerance_used: f64,
    pub passed: bool,
    /// Passed only because one side is infinite or degenerate.
    pub vacuous: bool,
    pub metadata: BTreeMap<String, Value>,
}

fn relative_residual(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

impl Verdict {
    pub fn identity(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Verdict {
        let slack = relative_residual(lhs, rhs);
        Verdict {
            name: name.into(),
            kind: VerdictKind::Identity,
            lhs,
            rhs,
            slack,
            tolerance_used: tol,
            passed: slack <= tol,
            vacuous: false,
            metadata: BTreeMap::new(),
        }
    }

    /// `lhs ≤ rhs·(1 + tol)`; an infinite right-hand side passes vacuously.
    pub fn inequality(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Verdict {
        let vacuous = rhs == f64::INFINITY;
        Verdict {
            name: name.into(),
            kind: VerdictKind::Inequality,
            lhs,
            rhs,
            slack: rhs - lhs,
            tolerance_used: tol,
            passed: vacuous || lhs <= rhs * (1.0 + tol),
            vacuous,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: Value) -> Verdict {
        self.metadata.insert(key.into(), value);
        self
    }

    pub fn mark_vacuous(mut self, note: &str) -> Verdict {
        self.vacuous = true;
        self.passed = true;
        self.with("note", json!(note))
    }
}

/// Tolerances and execution policy shared by all checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub tau: f64,
    /// Replaces every tolerance when set.
    pub tol_override: Option<f64>,
    pub exec: Execution,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tau: TAU,
            tol_override: None,
            exec: Execution::default(),
        }
    }
}

impl Settings {
    pub fn inequality_tol(&self) -> f64 {
        self.tol_override.unwrap_or(self.tau)
    }

    /// `1e−6` when both sides are closed-form, `max(1e−3, 10/N²)` when they
    /// come from quadrature on an `N`-grid.
    pub fn identity_tol(&self, quadrature_grid: Option<usize>) -> f64 {
        self.tol_override.unwrap_or(match quadrature_grid {
            None => 1e-6,
            Some(n) => (10.0 / (n * n) as f64).max(1e-3),
        })
    }
}

fn constant_jacobian(m: &Mapping) -> bool {
    match m {
        Mapping::Identity | Mapping::Linear(_) | Mapping::PlanarStretch(_) => true,
        Mapping::Composed(f, g) => constant_jacobian(f) && constant_jacobian(g),
        _ => false,
    }
}

fn require_positive_jacobian(samples: &GridSamples, what: &str) -> Result<()> {
    if let Some(s) = samples.samples.iter().find(|s| !jacobian_positive(s)) {
        return Err(LabError::validation(
            "map",
            format!(
                "{what} needs J > 0 on the domain; J = {} at {:?}",
                s.det, s.point
            ),
        ));
    }
    Ok(())
}

fn check_qs(q: f64, s: f64) -> Result<()> {
    if q.is_nan() || !(q > 1.0) {
        return Err(LabError::validation("exponents.q", "q must exceed 1"));
    }
    if s.is_nan() || !(s >= 1.0 && s <= q) {
        return Err(LabError::validation("exponents.s", "need 1 ≤ s ≤ q"));
    }
    Ok(())
}

fn image_quadrature(image_domain: &Domain, exec: Execution) -> Result<Quadrature> {
    image_domain.validate()?;
    let grid = image_domain.sampling_grid()?;
    region_quadrature(&grid, &image_domain.region(), &[], exec)
}

fn point_in_domain(domain: &Domain, y: &[f64], slack: f64) -> bool {
    let (lo, hi) = domain.bounds();
    y.iter()
        .enumerate()
        .all(|(k, &v)| v >= lo[k] - slack && v <= hi[k] + slack)
        && domain
            .boundary_level_sets()
            .iter()
            .all(|ls| ls.value(y) <= slack)
}

/// `φ(x)` at every sample, checked to lie in the image domain.
fn images_in(
    mapping: &Mapping,
    samples: &GridSamples,
    image_domain: &Domain,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let slack = image_domain.sampling_grid()?.max_h();
    let ys = map_collect(exec, samples.len(), |i| {
        mapping.evaluate(&samples.samples[i].point)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    if let Some(y) = ys.iter().find(|y| !point_in_domain(image_domain, y, slack)) {
        return Err(LabError::validation(
            "image_domain",
            format!("must contain the image of the domain; φ(x) = {y:?} lies outside"),
        ));
    }
    Ok(ys)
}

/// `A = K^I_{q,s}(φ; Ω)` against the image-side integral
/// `B = (∫_Ω̃ (|Dφ⁻¹|^q / |J(y, φ⁻¹)|)^{s/(q−s)} dy)^{(q−s)/(qs)}`, which for
/// `q = ∞` reads `(∫_Ω̃ |Dφ⁻¹|^s dy)^{1/s}`.
pub fn transfer_identity_residual(
    mapping: &Mapping,
    domain: &Domain,
    image_domain: &Domain,
    q: f64,
    s: f64,
    scheme: Scheme,
    settings: &Settings,
) -> Result<Verdict> {
    check_qs(q, s)?;
    if s >= q {
        return Err(LabError::validation(
            "exponents.s",
            "transfer identity needs s < q",
        ));
    }
    let inverse = mapping.inverse()?;
    let inverse_scheme = match scheme {
        Scheme::Analytic if inverse.has_analytic_jacobian() => Scheme::Analytic,
        Scheme::Analytic => Scheme::CentralFd { h: None },
        fd => fd,
    };
    let (src, img) = join(
        settings.exec,
        || sample_grid(mapping, domain, scheme, settings.exec),
        || sample_grid(&inverse, image_domain, inverse_scheme, settings.exec),
    );
    let (src, img) = (src?, img?);
    require_positive_jacobian(&src, "the transfer identity")?;
    require_positive_jacobian(&img, "the transfer identity")?;
    let a = global_ki_qs(&src, q, s)?;
    // the integrand is the q-dilatation of the inverse, in L_κ with 1/κ = 1/s − 1/q
    let b = global_k_pq(&img, ExponentPair::new(q, s)?)?;
    let grid = domain.grid.max(image_domain.grid);
    let tol = settings.identity_tol((!constant_jacobian(mapping)).then_some(grid));
    Ok(
        Verdict::identity(format!("transfer_identity(q={q},s={s})"), a, b, tol)
            .with("grid", json!(domain.grid))
            .with("image_grid", json!(image_domain.grid))
            .with("excluded_cells", json!(src.excluded_cell_count()))
            .with("image_excluded_cells", json!(img.excluded_cell_count())),
    )
}

/// Nonnegative integrands for the change-of-variables check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Integrand {
    Constant {
        value: f64,
    },
    /// `|y − center|`, centered at the origin by default.
    Radius {
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// `exp(−|y − center|²/scale²)`.
    Bump {
        center: Vec<f64>,
        scale: f64,
    },
}

impl Integrand {
    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            Integrand::Constant { value } => *value,
            Integrand::Radius { center } => match center {
                Some(c) => crate::geometry::dist(y, c),
                None => crate::mapping::norm(y),
            },
            Integrand::Bump { center, scale } => {
                (-(crate::geometry::dist(y, center) / scale).powi(2)).exp()
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Integrand::Constant { value } => format!("{value}"),
            Integrand::Radius { .. } => "|y|".into(),
            Integrand::Bump { .. } => "bump".into(),
        }
    }
}

/// The set `E` of the change-of-variables check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Subset {
    #[default]
    Whole,
    /// Closed union of grid cells of the source domain.
    Cells { cells: Vec<Vec<usize>> },
}

fn domain_level_sets(domain: &Domain) -> Vec<SharedLevelSet> {
    match &domain.shape {
        DomainShape::Box { lo, hi } => {
            let mut out: Vec<SharedLevelSet> = Vec::new();
            for k in 0..lo.len() {
                out.push(std::sync::Arc::new(HalfSpace {
                    axis: k,
                    offset: lo[k],
                    below: false,
                }));
                out.push(std::sync::Arc::new(HalfSpace {
                    axis: k,
                    offset: hi[k],
                    below: true,
                }));
            }
            out
        }
        _ => domain.boundary_level_sets(),
    }
}

/// `∫_E f(φ(x)) |J(x, φ)| dx` on the source grid against `∫_{φ(E)} f(y) dy`
/// on the image grid (the multiplicity is one for homeomorphisms).
#[allow(clippy::too_many_arguments)]
pub fn change_of_variables_residual(
    mapping: &Mapping,
    domain: &Domain,
    image_domain: &Domain,
    f: &Integrand,
    subset: &Subset,
    scheme: Scheme,
    settings: &Settings,
) -> Result<Verdict> {
    if let Integrand::Constant { value } = f {
        if !(value.is_finite() && *value >= 0.0) {
            return Err(LabError::validation(
                "integrand.value",
                "the integrand must be non-negative",
            ));
        }
    }
    let inverse = mapping.inverse()?;
    let src = sample_grid(mapping, domain, scheme, settings.exec)?;
    let ys = images_in(mapping, &src, image_domain, settings.exec)?;
    let src_grid = domain.sampling_grid()?;
    let mask: Option<Vec<bool>> = match subset {
        Subset::Whole => None,
        Subset::Cells { cells } => {
            let mut m = vec![false; src_grid.cell_count()];
            for c in cells {
                if c.len() != src_grid.dim || c.iter().any(|&i| i >= src_grid.cells) {
                    return Err(LabError::validation(
                        "subset.cells",
                        format!("invalid cell {c:?}"),
                    ));
                }
                m[src_grid.cell_index(c)] = true;
            }
            Some(m)
        }
    };

    let mut lhs_terms = Vec::with_capacity(src.len());
    for (i, s) in src.samples.iter().enumerate() {
        let cell = src.quadrature.points[i].cell;
        if mask.as_ref().is_some_and(|m| !m[cell]) {
            continue;
        }
        let v = f.value(&ys[i]);
        if v < 0.0 {
            return Err(LabError::validation(
                "integrand",
                "the integrand must be non-negative",
            ));
        }
        lhs_terms.push(v * s.det.abs() * src.quadrature.points[i].weight);
    }
    let lhs = pairwise_sum(&lhs_terms);

    let image_grid = image_domain.sampling_grid()?;
    let rhs_quad = match &mask {
        None => {
            let (lo, hi) = image_domain.bounds();
            let constraints: Vec<SharedLevelSet> = domain_level_sets(domain)
                .into_iter()
                .map(|base| {
                    std::sync::Arc::new(Pullback {
                        base,
                        inverse: inverse.clone(),
                    }) as SharedLevelSet
                })
                .collect();
            region_quadrature(
                &image_grid,
                &Region {
                    lo,
                    hi,
                    constraints,
                },
                &[],
                settings.exec,
            )?
        }
        Some(m) => {
            // rasterized image: cells whose center has its preimage in E
            let mut q =
                region_quadrature(&image_grid, &Region::boxed(&image_grid), &[], settings.exec)?;
            let keep = map_collect(settings.exec, q.points.len(), |i| {
                inverse
                    .evaluate(&q.points[i].x)
                    .ok()
                    .and_then(|x| src_grid.locate_cell(&x))
                    .is_some_and(|c| m[c])
            });
            let mut k = keep.iter();
            q.points.retain(|_| *k.next().unwrap());
            q
        }
    };
    let mut rhs_terms = Vec::with_capacity(rhs_quad.points.len());
    for p in &rhs_quad.points {
        let v = f.value(&p.x);
        if v < 0.0 {
            return Err(LabError::validation(
                "integrand",
                "the integrand must be non-negative",
            ));
        }
        rhs_terms.push(v * p.weight);
    }
    let rhs = pairwise_sum(&rhs_terms);
    let grid = domain.grid.max(image_domain.grid);
    let closed_form =
        constant_jacobian(mapping) && matches!(f, Integrand::Constant { .. }) && mask.is_none();
    let tol = settings.identity_tol((!closed_form).then_some(grid));
    Ok(Verdict::identity(
        format!("change_of_variables(f={})", f.label()),
        lhs,
        rhs,
        tol,
    )
    .with("grid", json!(domain.grid))
    .with("image_grid", json!(image_domain.grid))
    .with("excluded_cells", json!(src.excluded_cell_count())))
}

/// Which capacity estimate to check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum CapacityForm {
    /// `cp_s^{1/s}(φF₀, φF₁; Ω̃) ≤ K^I_{q,s}(Ω) · cp_q^{1/q}(F₀, F₁; Ω)`.
    Inner { q: f64, s: f64 },
    /// `cp_p^{1/p}(F₀, F₁; Ω) ≤ K_{p,p}(φ; Ω) · cp_p^{1/p}(φF₀, φF₁; Ω̃)`.
    SameExponent { p: f64 },
}

fn capacity_meta(r: &CapacityResult) -> Value {
    json!({
        "value": crate::report::format_number(r.value),
        "p": r.p,
        "grid": r.grid,
        "iterations": r.iterations,
        "final_grad_norm": r.final_grad_norm,
        "max_principle_ok": r.max_principle_ok,
    })
}

/// Solves the source condenser and its image and compares both sides of the
/// capacity distortion estimate.
pub fn capacity_distortion_check(
    mapping: &Mapping,
    condenser: &Condenser,
    image_domain: &Domain,
    form: CapacityForm,
    solver: &SolverConfig,
    scheme: Scheme,
    settings: &Settings,
) -> Result<Verdict> {
    let (p_src, p_img) = match form {
        CapacityForm::Inner { q, s } => {
            check_qs(q, s)?;
            if s >= q {
                return Err(LabError::validation(
                    "exponents.s",
                    "capacity estimate needs s < q",
                ));
            }
            (q, s)
        }
        CapacityForm::SameExponent { p } => (p, p),
    };
    let src_c = condenser.with_exponent(p_src);
    src_c.validate()?;
    let img_c = image_condenser(condenser, mapping, image_domain)?.with_exponent(p_img);
    img_c.validate()?;
    let samples = sample_grid(mapping, &condenser.domain, scheme, settings.exec)?;
    let k = match form {
        CapacityForm::Inner { q, s } => global_ki_qs(&samples, q, s)?,
        CapacityForm::SameExponent { p } => global_k_pq(&samples, ExponentPair::new(p, p)?)?,
    };
    let (src, img) = join(
        settings.exec,
        || solve_capacity(&src_c, solver),
        || solve_capacity(&img_c, solver),
    );
    let (src, img) = (src?, img?);
    let tol = settings.inequality_tol();
    let (name, lhs, rhs) = match form {
        CapacityForm::Inner { q, s } => (
            format!("capacity_distortion(q={q},s={s})"),
            img.value.powf(1.0 / s),
            k * src.value.powf(1.0 / q),
        ),
        CapacityForm::SameExponent { p } => (
            format!("capacity_same_exponent(p={p})"),
            src.value.powf(1.0 / p),
            k * img.value.powf(1.0 / p),
        ),
    };
    let mut v = Verdict::inequality(name, lhs, rhs, tol)
        .with("distortion", json!(crate::report::format_number(k)))
        .with("source_capacity", capacity_meta(&src))
        .with("image_capacity", capacity_meta(&img))
        .with("excluded_cells", json!(samples.excluded_cell_count()));
    if v.vacuous {
        v = v.mark_vacuous("distortion coefficient is infinite");
    }
    Ok(v)
}

struct PullbackNorms {
    /// `|∇(f∘φ)(x)| = |Dφ(x)ᵀ ∇f(φ(x))|` at the source samples.
    values: Vec<f64>,
}

fn pullback_gradients(
    f: &TestFunction,
    src: &GridSamples,
    ys: &[Vec<f64>],
    exec: Execution,
) -> PullbackNorms {
    let values = map_collect(exec, src.len(), |i| {
        let g = f.gradient(&ys[i]);
        let jac = &src.samples[i].jacobian;
        let n = g.len();
        (0..n)
            .map(|k| (0..n).map(|j| jac[(j, k)] * g[j]).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt()
    });
    PullbackNorms { values }
}

fn gradient_norms(f: &TestFunction, quad: &Quadrature, exec: Execution) -> Vec<f64> {
    map_collect(exec, quad.points.len(), |i| {
        crate::mapping::norm(&f.gradient(&quad.points[i].x))
    })
}

/// `sup |∇f|` over the quadrature points and the grid nodes of the domain.
fn gradient_sup(f: &TestFunction, quad: &Quadrature, domain: &Domain, norms: &[f64]) -> f64 {
    let g = &quad.grid;
    let nodes = (0..g.node_count())
        .map(|i| g.node_position(i))
        .filter(|y| domain.contains(y))
        .map(|y| crate::mapping::norm(&f.gradient(&y)))
        .fold(0.0, f64::max);
    norms.iter().cloned().fold(nodes, f64::max)
}

/// `K^I_{q,s}⁻¹ ‖f | L¹_s(Ω̃)‖ ≤ ‖φ*f | L¹_q(Ω)‖ ≤ ‖φ | L¹_q(Ω)‖ ‖f | L¹_∞(Ω̃)‖`
/// for every member; two verdicts per member.
#[allow(clippy::too_many_arguments)]
pub fn energy_bounds_check(
    mapping: &Mapping,
    domain: &Domain,
    image_domain: &Domain,
    q: f64,
    s: f64,
    family: &[TestFunction],
    scheme: Scheme,
    settings: &Settings,
) -> Result<Vec<Verdict>> {
    check_qs(q, s)?;
    let src = sample_grid(mapping, domain, scheme, settings.exec)?;
    require_positive_jacobian(&src, "the energy bounds")?;
    let ys = images_in(mapping, &src, image_domain, settings.exec)?;
    let img = image_quadrature(image_domain, settings.exec)?;
    let ki = global_ki_qs(&src, q, s)?;
    let seminorm = sobolev_seminorm(&src, q)?;
    let src_w = src.weights();
    let img_w: Vec<f64> = img.points.iter().map(|p| p.weight).collect();
    let tol = settings.inequality_tol();
    let mut out = Vec::with_capacity(2 * family.len());
    for f in family {
        let pulled = lebesgue_norm(
            &pullback_gradients(f, &src, &ys, settings.exec).values,
            &src_w,
            q,
        );
        let norms = gradient_norms(f, &img, settings.exec);
        let f_s = lebesgue_norm(&norms, &img_w, s);
        let f_inf = gradient_sup(f, &img, image_domain, &norms);
        let label = f.label();
        let mut lower =
            Verdict::inequality(format!("energy_lower[{label}]"), f_s / ki, pulled, tol)
                .with("q", json!(q))
                .with("s", json!(s))
                .with("distortion", json!(crate::report::format_number(ki)));
        if ki.is_infinite() {
            lower = lower.mark_vacuous("distortion coefficient is infinite");
        }
        let mut upper = Verdict::inequality(
            format!("energy_upper[{label}]"),
            pulled,
            seminorm * f_inf,
            tol,
        )
        .with("q", json!(q))
        .with("seminorm", json!(crate::report::format_number(seminorm)));
        if upper.vacuous {
            upper = upper.mark_vacuous("Sobolev seminorm is infinite");
        }
        out.push(lower);
        out.push(upper);
    }
    Ok(out)
}

/// `M = max_f ‖φ*f | L¹_q(Ω)‖ / ‖f | L¹_p(Ω̃)‖` against `K_{p,q}(φ; Ω)`.
#[allow(clippy::too_many_arguments)]
pub fn operator_norm_lower_bound(
    mapping: &Mapping,
    domain: &Domain,
    image_domain: &Domain,
    p: f64,
    q: f64,
    family: &[TestFunction],
    scheme: Scheme,
    settings: &Settings,
) -> Result<Verdict> {
    let pair = ExponentPair::new(p, q)?;
    if family.is_empty() {
        return Err(LabError::validation("family", "no test functions"));
    }
    let src = sample_grid(mapping, domain, scheme, settings.exec)?;
    let ys = images_in(mapping, &src, image_domain, settings.exec)?;
    let img = image_quadrature(image_domain, settings.exec)?;
    let k = global_k_pq(&src, pair)?;
    let src_w = src.weights();
    let img_w: Vec<f64> = img.points.iter().map(|p| p.weight).collect();
    let mut ratios = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut m = 0.0f64;
    for f in family {
        let denom = lebesgue_norm(&gradient_norms(f, &img, settings.exec), &img_w, p);
        if !(denom > 0.0) {
            skipped.push(f.label());
            continue;
        }
        let num = lebesgue_norm(
            &pullback_gradients(f, &src, &ys, settings.exec).values,
            &src_w,
            q,
        );
        let r = num / denom;
        ratios.insert(f.label(), json!(r));
        m = m.max(r);
    }
    if ratios.is_empty() {
        return Err(LabError::validation(
            "family",
            "every member has zero gradient",
        ));
    }
    let kap = kappa(p, q);
    let mut v = Verdict::inequality(
        format!("operator_norm(p={p},q={q})"),
        m,
        k,
        settings.inequality_tol(),
    )
    .with("ratios", Value::Object(ratios.into_iter().collect()))
    .with(
        "ratio_to_distortion",
        json!(if k > 0.0 && k.is_finite() {
            m / k
        } else {
            f64::NAN
        }),
    )
    .with("excluded_cells", json!(src.excluded_cell_count()));
    if kap.is_finite() {
        v = v.with("set_function_lower_estimate", json!(m.powf(kap)));
    }
    if !skipped.is_empty() {
        v = v.with("skipped", json!(skipped));
    }
    if v.vacuous {
        v = v.mark_vacuous("distortion coefficient is infinite");
    }
    Ok(v)
}

#[cfg(test)]
mod tests;
