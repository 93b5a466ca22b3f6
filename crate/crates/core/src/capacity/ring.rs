use crate::error::{LabError, Result};
use crate::mapping::{unit_sphere_area, Domain};

use super::{Condenser, Plate, PlateSpec};

/// Capacity of the spherical ring `{r < |x| < R}` in `R^n`.
pub fn analytic_ring_capacity(n: usize, p: f64, r: f64, big_r: f64) -> Result<f64> {
    if n < 2 {
        return Err(LabError::validation("n", "must be at least 2"));
    }
    if !(p.is_finite() && p > 1.0) {
        return Err(LabError::validation("p", "must be greater than 1"));
    }
    if !(r > 0.0 && big_r > r && big_r.is_finite()) {
        return Err(LabError::validation("r", "need 0 < r < R"));
    }
    let omega = unit_sphere_area(n);
    let nf = n as f64;
    if (p - nf).abs() < 1e-12 {
        return Ok(omega * (big_r / r).ln().powf(1.0 - nf));
    }
    let beta = (p - nf) / (p - 1.0);
    Ok(omega * beta.abs().powf(p - 1.0) * (big_r.powf(beta) - r.powf(beta)).abs().powf(1.0 - p))
}

/// The ring condenser on the annulus `{r < |x| < R}` centered at the origin.
pub fn ring_condenser(n: usize, p: f64, r: f64, big_r: f64, grid: usize) -> Result<Condenser> {
    let domain = Domain::annulus(vec![0.0; n], r, big_r, grid);
    let c = Condenser {
        f0: Plate::from_spec(&PlateSpec::OuterRing {}, &domain, "condenser.F0")?,
        f1: Plate::from_spec(&PlateSpec::InnerRing {}, &domain, "condenser.F1")?,
        domain,
        p,
    };
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::{solve_capacity, SolverConfig};

    /// `ω (∫_r^R ρ^{−(n−1)/(p−1)} dρ)^{1−p}` by composite Simpson.
    fn quadrature_oracle(n: usize, p: f64, r: f64, big_r: f64) -> f64 {
        let m = 20000;
        let h = (big_r - r) / m as f64;
        let f = |t: f64| t.powf(-(n as f64 - 1.0) / (p - 1.0));
        let mut s = f(r) + f(big_r);
        for k in 1..m {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(r + k as f64 * h);
        }
        unit_sphere_area(n) * (s * h / 3.0).powf(1.0 - p)
    }

    #[test]
    fn closed_form_matches_radial_integral() {
        for (n, p) in [
            (2, 1.5),
            (2, 2.0),
            (2, 3.0),
            (3, 2.0),
            (3, 2.5),
            (3, 3.0),
            (3, 5.0),
        ] {
            let a = analytic_ring_capacity(n, p, 1.0, 2.0).unwrap();
            let b = quadrature_oracle(n, p, 1.0, 2.0);
            assert!((a - b).abs() < 1e-9 * b, "n={n} p={p}: {a} vs {b}");
        }
        let c = analytic_ring_capacity(2, 2.0, 1.0, 2.0).unwrap();
        assert!((c - 2.0 * std::f64::consts::PI / 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn coarse_ring_is_close() {
        let c = ring_condenser(2, 2.0, 1.0, 2.0, 32).unwrap();
        let v = solve_capacity(&c, &SolverConfig::default()).unwrap();
        let exact = analytic_ring_capacity(2, 2.0, 1.0, 2.0).unwrap();
        assert!(
            (v.value - exact).abs() < 0.01 * exact,
            "{} vs {exact}",
            v.value
        );
        assert!(v.max_principle_ok);
    }
}
