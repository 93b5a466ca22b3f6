use log::{debug, info};

use crate::error::{LabError, Result};

use super::mesh::{Mesh, Power};
use super::{CapacityResult, Condenser, NodeField, SolverConfig, StageTrace};

/// Coarsest grid of the nested sequence.
const NEST_MIN: usize = 32;
const JACOBI_SWEEPS: usize = 500;
const RESTART: usize = 50;
const ARMIJO: f64 = 1e-4;

struct Stage {
    iterations: usize,
    energy: f64,
    grad_norm: f64,
    converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn precondition(mesh: &Mesh, g: &[f64], diag: &[f64], z: &mut [f64]) {
    let floor = 1e-12 * diag.iter().cloned().fold(0.0, f64::max);
    for i in 0..g.len() {
        z[i] = if mesh.free[i] {
            g[i] / diag[i].max(floor).max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
    }
}

/// Step along `d` from `u`. Newton steps on `φ(α) = E(u + αd)` with an
/// Armijo safeguard and halving as fallback.
fn line_search(
    mesh: &Mesh,
    u: &[f64],
    d: &[f64],
    e0: f64,
    slope: f64,
    pw: Power,
) -> Option<(f64, f64)> {
    let [_, _, h0] = mesh.line_terms(u, Some(d), 0.0, pw);
    let mut alpha = if h0 > 0.0 && h0.is_finite() {
        -slope / h0
    } else {
        1.0
    };
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..4 {
        let [phi, dphi, ddphi] = mesh.line_terms(u, Some(d), alpha, pw);
        let armijo = phi.is_finite() && phi <= e0 + ARMIJO * alpha * slope;
        if armijo && best.is_none_or(|(_, e)| phi < e) {
            best = Some((alpha, phi));
        }
        if !armijo {
            break;
        }
        if dphi.abs() <= 0.1 * slope.abs() || !(ddphi > 0.0) {
            break;
        }
        let next = alpha - dphi / ddphi;
        if !(next > 0.0 && next.is_finite()) {
            break;
        }
        alpha = next.min(4.0 * alpha);
    }
    if best.is_some() {
        return best;
    }
    for _ in 0..40 {
        alpha *= 0.5;
        let phi = mesh.energy(&step(u, d, alpha), pw);
        if phi.is_finite() && phi <= e0 + ARMIJO * alpha * slope {
            return Some((alpha, phi));
        }
    }
    None
}

fn step(u: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    u.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

/// Preconditioned nonlinear conjugate gradients (Polak–Ribière+).
fn run_stage(mesh: &Mesh, u: &mut [f64], pw: Power, tol: f64, max_iter: usize) -> Stage {
    let n = u.len();
    let mut g = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut e = mesh.energy_grad(u, pw, &mut g, &mut diag);
    precondition(mesh, &g, &diag, &mut z);
    let mut d: Vec<f64> = z.iter().map(|v| -v).collect();
    let mut gz = dot(&g, &z);
    let mut calm = 0;
    let mut since_restart = 0;
    let mut it = 0;
    let mut converged = false;
    let mut g_new = vec![0.0; n];
    let mut z_new = vec![0.0; n];
    loop {
        if !(gz > 0.0) {
            converged = true;
            break;
        }
        if it >= max_iter {
            break;
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d.iter_mut().zip(&z).for_each(|(a, b)| *a = -b);
            slope = -gz;
            since_restart = 0;
        }
        let (alpha, e_new) = match line_search(mesh, u, &d, e, slope, pw) {
            Some(r) => r,
            None if since_restart > 0 => {
                d.iter_mut().zip(&z).for_each(|(a, b)| *a = -b);
                since_restart = 0;
                continue;
            }
            None => {
                // no descent possible at working precision
                converged = true;
                break;
            }
        };
        for i in 0..n {
            u[i] += alpha * d[i];
        }
        it += 1;
        since_restart += 1;
        let e_old = e;
        e = mesh.energy_grad(u, pw, &mut g_new, &mut diag);
        debug_assert!((e - e_new).abs() <= 1e-8 * e.abs().max(1e-300) || !e.is_finite());
        let rel = (e_old - e) / e.abs().max(f64::MIN_POSITIVE);
        calm = if rel < tol { calm + 1 } else { 0 };
        if calm >= 5 {
            g.copy_from_slice(&g_new);
            converged = true;
            break;
        }
        precondition(mesh, &g_new, &diag, &mut z_new);
        let gz_new = dot(&g_new, &z_new);
        let beta = if since_restart >= RESTART {
            since_restart = 0;
            0.0
        } else {
            ((gz_new - dot(&g_new, &z)) / gz).max(0.0)
        };
        for i in 0..n {
            d[i] = -z_new[i] + beta * d[i];
        }
        std::mem::swap(&mut g, &mut g_new);
        std::mem::swap(&mut z, &mut z_new);
        gz = gz_new;
    }
    Stage {
        iterations: it,
        energy: e,
        grad_norm: dot(&g, &g).sqrt(),
        converged,
    }
}

/// Damped Jacobi on the Dirichlet energy, used as a starting guess.
fn jacobi_start(mesh: &Mesh, u: &mut [f64]) {
    let pw = Power::new(2.0, 0.0);
    let n = u.len();
    let mut g = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for _ in 0..JACOBI_SWEEPS {
        mesh.energy_grad(u, pw, &mut g, &mut diag);
        for i in 0..n {
            if mesh.free[i] && diag[i] > 0.0 {
                u[i] = (u[i] - (2.0 / 3.0) * g[i] / diag[i]).clamp(0.0, 1.0);
            }
        }
    }
}

fn prolong(coarse: &Mesh, coarse_u: &[f64], fine: &Mesh) -> Vec<f64> {
    let filled = coarse.filled_node_values(coarse_u);
    let mut u = fine.init.clone();
    for i in 0..fine.n_nodes {
        if fine.free[i] {
            u[i] = coarse
                .interpolate_nodes(&filled, &fine.node_position(i))
                .clamp(0.0, 1.0);
        }
    }
    u
}

fn levels(grid: usize, nested: bool) -> Vec<usize> {
    let mut out = vec![grid];
    while nested && *out.last().unwrap() >= 2 * NEST_MIN && out.last().unwrap() % 2 == 0 {
        let next = out.last().unwrap() / 2;
        out.push(next);
    }
    out.reverse();
    out
}

/// Minimizes the discrete `p`-energy over admissible functions of the
/// condenser and returns its value.
pub fn solve_capacity(condenser: &Condenser, config: &SolverConfig) -> Result<CapacityResult> {
    condenser.validate()?;
    config.validate()?;
    let sizes = levels(condenser.domain.grid, config.nested);
    let mut prev: Option<(Mesh, Vec<f64>)> = None;
    for (li, &size) in sizes.iter().enumerate() {
        let finest = li + 1 == sizes.len();
        let mesh = Mesh::build(&condenser.with_grid(size), config.exec)?;
        let mut u = match &prev {
            Some((cm, cu)) => prolong(cm, cu, &mesh),
            None => {
                let mut u = mesh.init.clone();
                jacobi_start(&mesh, &mut u);
                u
            }
        };
        let mut stages = Vec::new();
        let mut iterations = 0;
        let mut exhausted = false;
        let mut grad_norm = 0.0;
        for &eps in &config.eps_schedule {
            let pw = Power::new(condenser.p, eps);
            let st = run_stage(&mesh, &mut u, pw, config.tol_energy, config.max_iter);
            debug!(
                "grid {size} eps {eps:e}: {} iterations, energy {:.12e}, converged {}",
                st.iterations, st.energy, st.converged
            );
            iterations += st.iterations;
            grad_norm = st.grad_norm;
            exhausted |= !st.converged;
            stages.push(StageTrace {
                epsilon: eps,
                iterations: st.iterations,
                energy: st.energy,
            });
        }
        if !finest {
            prev = Some((mesh, u));
            continue;
        }
        let value = mesh.energy(&u, Power::new(condenser.p, 0.0));
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..mesh.len() {
            if mesh.active[i] && (mesh.inside[i] || mesh.fixed[i]) {
                lo = lo.min(u[i]);
                hi = hi.max(u[i]);
            }
        }
        let values = (0..mesh.n_nodes)
            .map(|i| {
                if mesh.active[i] || mesh.fixed[i] {
                    u[i]
                } else {
                    f64::NAN
                }
            })
            .collect();
        let result = CapacityResult {
            value,
            p: condenser.p,
            grid: size,
            iterations,
            final_grad_norm: grad_norm,
            epsilon_schedule: config.eps_schedule.clone(),
            stages,
            minimizer_min: lo,
            minimizer_max: hi,
            max_principle_ok: lo >= -1e-9 && hi <= 1.0 + 1e-9,
            mesh: mesh.stats.clone(),
            minimizer: NodeField {
                grid: mesh.grid.clone(),
                values,
            },
        };
        info!(
            "capacity p={} grid={size}: {value:.10e} ({iterations} iterations)",
            condenser.p
        );
        if exhausted {
            return Err(LabError::Convergence {
                iterations,
                partial: Box::new(result),
            });
        }
        return Ok(result);
    }
    unreachable!("at least one level")
}
