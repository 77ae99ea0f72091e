//! Centralized finite-horizon LQG: Kalman filter forward, LQR backward.

use crate::error::{Error, Result};
use crate::linalg::{spd_solve, sym, trace_product, Mat};
use crate::problem::Plant;

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedSolution {
    /// Filter error covariance, `T + 1` entries.
    pub sigma: Vec<Mat>,
    /// Filter gains, `T` entries.
    pub l: Vec<Mat>,
    /// Cost-to-go, `T + 1` entries.
    pub p: Vec<Mat>,
    /// Control gains, `T` entries.
    pub k: Vec<Mat>,
    pub j0: f64,
}

/// One step of the filter Riccati recursion. Returns `(L, Σ₊)`, or `None`
/// when `CΣCᵀ + V` is not positive definite.
pub(crate) fn filter_step(a: &Mat, c: &Mat, w: &Mat, u: &Mat, v: &Mat, sigma: &Mat) -> Option<(Mat, Mat)> {
    let innovation = c * sigma * c.transpose() + v;
    let cross = c * sigma * a.transpose() + u;
    let l = -spd_solve(&innovation, &cross)?.transpose();
    let next = a * sigma * a.transpose() + &l * cross + w;
    Some((l, sym(&next)))
}

/// One step of the control Riccati recursion. Returns `(K, P)`, or `None`
/// when `BᵀP₊B + R` is not positive definite.
pub(crate) fn control_step(a: &Mat, b: &Mat, q: &Mat, s: &Mat, r: &Mat, p_next: &Mat) -> Option<(Mat, Mat)> {
    let hessian = b.transpose() * p_next * b + r;
    let cross = b.transpose() * p_next * a + s.transpose();
    let k = -spd_solve(&hessian, &cross)?;
    let p = a.transpose() * p_next * a + cross.transpose() * &k + q;
    Some((k, sym(&p)))
}

pub fn filter_recursion(plant: &Plant) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let mut sigma = Vec::with_capacity(plant.horizon + 1);
    let mut gains = Vec::with_capacity(plant.horizon);
    sigma.push(sym(&plant.sigma_init));
    for t in 0..plant.horizon {
        let (dy, nz) = (&plant.dynamics[t], &plant.noise[t]);
        let (l, next) = filter_step(&dy.a, &dy.c, &nz.w, &nz.u, &nz.v, &sigma[t])
            .ok_or(Error::SingularInnovation { t })?;
        gains.push(l);
        sigma.push(next);
    }
    Ok((sigma, gains))
}

pub fn control_recursion(plant: &Plant) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let horizon = plant.horizon;
    let mut p = vec![Mat::zeros(0, 0); horizon + 1];
    let mut gains = vec![Mat::zeros(0, 0); horizon];
    p[horizon] = sym(&plant.p_final);
    for t in (0..horizon).rev() {
        let (dy, c) = (&plant.dynamics[t], &plant.cost[t]);
        let (k, pt) = control_step(&dy.a, &dy.b, &c.q, &c.s, &c.r, &p[t + 1])
            .ok_or(Error::SingularHessian { t })?;
        gains[t] = k;
        p[t] = pt;
    }
    Ok((p, gains))
}

/// Expected cost of the optimal centralized controller, including the
/// `μᵀP₀μ` term from a nonzero initial mean.
pub fn centralized_cost(plant: &Plant, solution: &CentralizedSolution) -> f64 {
    let p = &solution.p;
    let mut total = trace_product(&p[0], &plant.sigma_init);
    for t in 0..plant.horizon {
        let (dy, c) = (&plant.dynamics[t], &plant.cost[t]);
        let hessian = dy.b.transpose() * &p[t + 1] * &dy.b + &c.r;
        let k = &solution.k[t];
        total += trace_product(&p[t + 1], &plant.noise[t].w);
        total += trace_product(&solution.sigma[t], &(k.transpose() * hessian * k));
    }
    total + plant.mu_init.dot(&(&p[0] * &plant.mu_init))
}

pub fn solve_centralized(plant: &Plant) -> Result<CentralizedSolution> {
    let (sigma, l) = filter_recursion(plant)?;
    let (p, k) = control_recursion(plant)?;
    let mut solution = CentralizedSolution { sigma, l, p, k, j0: 0.0 };
    solution.j0 = centralized_cost(plant, &solution);
    Ok(solution)
}
