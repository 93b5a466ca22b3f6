//! Pointwise dilatations, their global norms, Sobolev seminorms and the
//! Ball-class membership test.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::exec::pairwise_sum;
use crate::mapping::{DifferentialSample, GridSamples};

/// `1/κ = 1/inner − 1/outer`, with `κ = ∞` when the exponents coincide.
pub fn kappa(outer: f64, inner: f64) -> f64 {
    if outer == inner {
        f64::INFINITY
    } else if outer.is_infinite() {
        inner
    } else {
        1.0 / (1.0 / inner - 1.0 / outer)
    }
}

/// Exponents `1 ≤ q ≤ p ≤ ∞` of a composition operator `L¹_p → L¹_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    #[serde(with = "crate::report::extended")]
    pub p: f64,
    #[serde(with = "crate::report::extended")]
    pub q: f64,
}

impl ExponentPair {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if p.is_nan() || !(p >= 1.0) {
            return Err(LabError::validation("exponents.p", "p must be at least 1"));
        }
        if q.is_nan() || !(q >= 1.0) {
            return Err(LabError::validation("exponents.q", "q must be at least 1"));
        }
        if q > p {
            return Err(LabError::validation("exponents.q", "q must not exceed p"));
        }
        Ok(ExponentPair { p, q })
    }

    pub fn kappa(&self) -> f64 {
        kappa(self.p, self.q)
    }
}

fn check_exponent(v: f64, field: &str) -> Result<()> {
    if v.is_nan() || v < 1.0 {
        Err(LabError::validation(field, "exponent must be at least 1"))
    } else {
        Ok(())
    }
}

/// `K_p(x) = |Dφ(x)| / |J(x,φ)|^{1/p}`; `0` when `Dφ = 0`, `+∞` when `J = 0`
/// but `Dφ ≠ 0`.
pub fn pointwise_kp(sample: &DifferentialSample, p: f64) -> Result<f64> {
    check_exponent(p, "p")?;
    Ok(if sample.det != 0.0 {
        sample.op_norm / sample.det.abs().powf(1.0 / p)
    } else if sample.op_norm == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

/// `K^I_s(x) = |J(x,φ)|^{1/s} / l(Dφ(x))`, and `0` where `J = 0`.
pub fn pointwise_ki_s(sample: &DifferentialSample, s: f64) -> Result<f64> {
    check_exponent(s, "s")?;
    if sample.det == 0.0 {
        return Ok(0.0);
    }
    // a nonzero determinant forces l(Dφ) > 0
    assert!(
        sample.min_stretch > 0.0,
        "nonzero Jacobian with vanishing minimal stretch at {:?}",
        sample.point
    );
    Ok(sample.det.abs().powf(1.0 / s) / sample.min_stretch)
}

/// Weighted `L_κ` norm; `κ = ∞` gives the maximum. Any infinite value makes
/// the norm infinite.
pub fn lebesgue_norm(values: &[f64], weights: &[f64], kappa: f64) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    if values.iter().any(|v| v.is_infinite()) {
        return f64::INFINITY;
    }
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if kappa.is_infinite() {
        return max;
    }
    if max == 0.0 {
        return 0.0;
    }
    let terms: Vec<f64> = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v.abs() / max).powf(kappa))
        .collect();
    max * pairwise_sum(&terms).powf(1.0 / kappa)
}

fn field_norm(
    samples: &GridSamples,
    kappa: f64,
    f: impl Fn(&DifferentialSample) -> Result<f64>,
) -> Result<f64> {
    let values = samples.samples.iter().map(f).collect::<Result<Vec<_>>>()?;
    Ok(lebesgue_norm(&values, &samples.weights(), kappa))
}

/// `K_{p,q}(φ;Ω) = ‖K_p | L_κ(Ω)‖`.
pub fn global_k_pq(samples: &GridSamples, pair: ExponentPair) -> Result<f64> {
    field_norm(samples, pair.kappa(), |s| pointwise_kp(s, pair.p))
}

fn check_qs(q: f64, s: f64) -> Result<()> {
    if q.is_nan() || !(q > 1.0) {
        return Err(LabError::validation("exponents.q", "q must exceed 1"));
    }
    check_exponent(s, "exponents.s")?;
    if s > q {
        return Err(LabError::validation("exponents.s", "s must not exceed q"));
    }
    Ok(())
}

/// `K^I_{q,s}(Ω) = ‖K^I_s | L_κ(Ω)‖` with `1/κ = 1/s − 1/q`.
pub fn global_ki_qs(samples: &GridSamples, q: f64, s: f64) -> Result<f64> {
    check_qs(q, s)?;
    field_norm(samples, kappa(q, s), |x| pointwise_ki_s(x, s))
}

/// `‖φ | L¹_q(Ω)‖ = ‖ |Dφ| | L_q(Ω)‖`.
pub fn sobolev_seminorm(samples: &GridSamples, q: f64) -> Result<f64> {
    check_exponent(q, "exponents.q")?;
    field_norm(samples, q, |s| Ok(s.op_norm))
}

/// `‖adj Dφ | L_r(Ω)‖`.
pub fn adjugate_lr_norm(samples: &GridSamples, r: f64) -> Result<f64> {
    check_exponent(r, "exponents.r")?;
    field_norm(samples, r, |s| Ok(s.adj_norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallVerdict {
    Member,
    NotMember,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    #[serde(rename = "K_pq", with = "crate::report::extended_opt")]
    pub k_pq: Option<f64>,
    #[serde(rename = "K_I_qs", with = "crate::report::extended_opt")]
    pub k_i_qs: Option<f64>,
    #[serde(rename = "seminorm_L1q", with = "crate::report::extended")]
    pub seminorm_l1q: f64,
    #[serde(rename = "adj_Lr_norm", with = "crate::report::extended")]
    pub adj_lr_norm: f64,
    pub jacobian_sign_fraction: f64,
    pub finite_distortion_flag: bool,
    pub ball_class_verdict: BallVerdict,
    pub reason: String,
    pub hypothesis_flags: Vec<String>,
    pub excluded_cell_count: usize,
}

/// `J > tol_J` with `tol_J = 1e−12·(1 + |Dφ|ⁿ)`.
pub fn jacobian_positive(s: &DifferentialSample) -> bool {
    s.det > 1e-12 * (1.0 + s.op_norm.powi(s.dim() as i32))
}

/// Decides membership in `A⁺_{q,r}(Ω)` from grid samples.
///
/// `analytic` marks diffeomorphic closed-form families, for which the Luzin
/// N-property is taken for granted.
pub fn ball_membership(
    samples: &GridSamples,
    q: f64,
    r: f64,
    analytic: bool,
) -> Result<DistortionReport> {
    if q.is_nan() || !(q > 1.0) {
        return Err(LabError::validation("exponents.q", "q must exceed 1"));
    }
    check_exponent(r, "exponents.r")?;
    let seminorm = sobolev_seminorm(samples, q)?;
    let adj = adjugate_lr_norm(samples, r)?;

    // a cell counts as positive when J > tol_J at every one of its points
    let points = &samples.quadrature.points;
    let mut cells = 0usize;
    let mut positive = 0usize;
    let mut negative = 0usize;
    let mut i = 0;
    while i < points.len() {
        let cell = points[i].cell;
        let mut all_pos = true;
        let mut all_neg = true;
        while i < points.len() && points[i].cell == cell {
            let s = &samples.samples[i];
            all_pos &= jacobian_positive(s);
            all_neg &= s.det < 0.0;
            i += 1;
        }
        cells += 1;
        positive += usize::from(all_pos);
        negative += usize::from(all_neg);
    }
    let fraction = positive as f64 / cells as f64;

    let finite_distortion = samples.samples.iter().all(|s| {
        let tol = 1e-12 * (1.0 + s.op_norm.powi(s.dim() as i32));
        s.det.abs() > tol || s.op_norm <= 1e-12
    });

    let n = samples.samples[0].dim();
    let mut flags = Vec::new();
    if q <= (n - 1) as f64 {
        flags.push(format!(
            "q ≤ n−1 = {}: outside the Ball-class hypotheses",
            n - 1
        ));
    }
    let r_min = q / (q - 1.0);
    if r < r_min {
        flags.push(format!(
            "r < q/(q−1) = {r_min}: outside the Ball-class hypotheses"
        ));
    }

    let excluded = samples.excluded_cell_count();
    let luzin = if analytic {
        "Luzin N-property assumed for analytic diffeomorphic families"
    } else {
        "Luzin N-property unverified"
    };
    let (verdict, why) = if positive < cells {
        if negative == cells {
            (BallVerdict::NotMember, "J < 0 on all cells".to_string())
        } else {
            (
                BallVerdict::NotMember,
                format!("J ≤ 0 on {} of {cells} cells", cells - positive),
            )
        }
    } else if !seminorm.is_finite() {
        (BallVerdict::NotMember, "|Dφ| is not in L_q".to_string())
    } else if !adj.is_finite() {
        (BallVerdict::NotMember, "adj Dφ is not in L_r".to_string())
    } else if excluded > 0 {
        (
            BallVerdict::Inconclusive,
            format!("J > 0 on all sampled cells, but {excluded} cells near singular points are excluded and may hide a sign change"),
        )
    } else {
        (
            BallVerdict::Member,
            "J > 0 on all cells, finite norms".to_string(),
        )
    };

    Ok(DistortionReport {
        k_pq: None,
        k_i_qs: None,
        seminorm_l1q: seminorm,
        adj_lr_norm: adj,
        jacobian_sign_fraction: fraction,
        finite_distortion_flag: finite_distortion,
        ball_class_verdict: verdict,
        reason: format!("{why}; {luzin}"),
        hypothesis_flags: flags,
        excluded_cell_count: excluded,
    })
}

/// Exponents for a full distortion report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportExponents {
    pub p: Option<f64>,
    pub q: f64,
    pub s: Option<f64>,
    pub r: f64,
}

/// Ball-class verdict plus whichever global distortions the exponents allow.
pub fn distortion_report(
    samples: &GridSamples,
    exps: ReportExponents,
    analytic: bool,
) -> Result<DistortionReport> {
    let mut rep = ball_membership(samples, exps.q, exps.r, analytic)?;
    if let Some(p) = exps.p {
        rep.k_pq = Some(global_k_pq(samples, ExponentPair::new(p, exps.q)?)?);
    }
    if let Some(s) = exps.s {
        rep.k_i_qs = Some(global_ki_qs(samples, exps.q, s)?);
    }
    Ok(rep)
}
