use nalgebra::{DMatrix, DVector};

use crate::dynamics::{gradient_norm, rhs_partial};
use crate::error::{Error, Result};
use crate::liegroup::{so_basis, Rotation, SkewMatrix};
use crate::network::NetworkConfig;

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub states: Vec<Rotation>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// `Q_i exp(sum_a d[i d + a] E_a)` for the orthonormal basis `E_a`.
fn retract(states: &[Rotation], basis: &[SkewMatrix], delta: &DVector<f64>) -> Result<Vec<Rotation>> {
    let d = basis.len();
    states
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let c: Vec<f64> = delta.rows(i * d, d).iter().copied().collect();
            Ok(q.step(&SkewMatrix::from_coefficients(basis, &c)?))
        })
        .collect()
}

/// Levenberg-Marquardt on `|r(Q)|^2` over `SO(n)^k`, with a central
/// difference Jacobian in right-trivialized coordinates. Stops once
/// `|r| <= tol`, after `max_iter` iterations, or when no damping level
/// decreases the residual.
pub fn levenberg_marquardt<F>(init: &[Rotation], residual: F, tol: f64, max_iter: usize) -> Result<LmOutcome>
where
    F: Fn(&[Rotation]) -> Result<DVector<f64>>,
{
    let n = init.first().ok_or_else(|| Error::dim("no states"))?.dim();
    let basis = so_basis(n)?;
    let p = init.len() * basis.len();
    let mut x = init.to_vec();
    let mut r = residual(&x)?;
    let mut cost = r.norm_squared();
    let mut mu: Option<f64> = None;
    let mut iterations = 0;
    while iterations < max_iter && cost.sqrt() > tol {
        iterations += 1;
        let h = 1e-7;
        let mut jac = DMatrix::zeros(r.len(), p);
        for c in 0..p {
            let mut e = DVector::zeros(p);
            e[c] = h;
            let plus = residual(&retract(&x, &basis, &e)?)?;
            let minus = residual(&retract(&x, &basis, &(-e))?)?;
            jac.set_column(c, &((plus - minus) / (2.0 * h)));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut m = mu.unwrap_or(1e-6 * scale);
        let mut improved = false;
        while m <= 1e12 * scale {
            let a = &jtj + DMatrix::identity(p, p) * m;
            let Some(chol) = a.cholesky() else {
                m *= 4.0;
                continue;
            };
            let delta = -chol.solve(&g);
            let trial = retract(&x, &basis, &delta)?;
            let rt = residual(&trial)?;
            let ct = rt.norm_squared();
            if ct < cost {
                x = trial;
                r = rt;
                cost = ct;
                mu = Some((m / 3.0).max(1e-15 * scale));
                improved = true;
                break;
            }
            m *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok(LmOutcome { states: x, residual_norm: cost.sqrt(), iterations })
}

/// Stacked basis coefficients of the partial-state velocities.
fn gradient_residual(states: &[Rotation], net: &NetworkConfig, basis: &[SkewMatrix]) -> Result<DVector<f64>> {
    let u = rhs_partial(states, net, None)?;
    Ok(DVector::from_iterator(u.len() * basis.len(), u.iter().flat_map(|ui| ui.coefficients(basis))))
}

/// Drives the partial-state gradient to zero from a nearby point by
/// Gauss-Newton steps on the velocity field. Near the solution the cost
/// changes by less than its rounding error, so progress is measured on the
/// gradient itself rather than on `f_o`.
pub fn refine_equilibrium(init: &[Rotation], net: &NetworkConfig, tol: f64, max_iter: usize) -> Result<LmOutcome> {
    let basis = so_basis(net.dim())?;
    let out = levenberg_marquardt(init, |q| gradient_residual(q, net, &basis), tol, max_iter)?;
    let grad = gradient_norm(&rhs_partial(&out.states, net, None)?);
    Ok(LmOutcome { residual_norm: grad, ..out })
}
