//! Independent optimality checks for synthesized controllers.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::centralized::CentralizedSolution;
use crate::controller::{ControllerKind, LinearController};
use crate::error::Result;
use crate::linalg::{block, max_abs, psd_sqrt, set_block, trace_product, Mat, Vector};
use crate::problem::ProblemSpec;
use crate::synthesis::{
    a_hat, decoupled_schedules, k_hat_formula, l_hat_formula, p_hat_prev, propagate_full, sigma_hat_next,
    two_player_cost, TwoPlayerGains,
};

// ---------------------------------------------------------------------
// Exact policy evaluation

/// Exact expected cost of a linear controller, by propagating the second
/// moment of the closed-loop state `(x, ẑ, z)`.
pub fn evaluate_policy_cost(spec: &ProblemSpec, controller: &LinearController) -> f64 {
    let plant = &spec.plant;
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let mut second = Mat::zeros(3 * n, 3 * n);
    set_block(&mut second, 0, 0, &plant.sigma_init);
    let mean = Vector::from_iterator(3 * n, (0..3).flat_map(|_| plant.mu_init.iter().copied()));
    second += &mean * mean.transpose();

    let mut total = 0.0;
    for t in 0..plant.horizon {
        let (dy, nz) = (&plant.dynamics[t], &plant.noise[t]);
        let (a, b, c) = (&dy.a, &dy.b, &dy.c);
        let k = &controller.k[t];
        let l = &controller.l[t];
        let (k_hat, l_hat) = match controller.kind {
            ControllerKind::Centralized => (k, l),
            ControllerKind::TwoPlayer => (&controller.k_hat[t], &controller.l_hat[t]),
        };
        let dk = k - k_hat;

        let mut out = Mat::zeros(n + m, 3 * n);
        set_block(&mut out, 0, 0, &Mat::identity(n, n));
        set_block(&mut out, n, n, &dk);
        set_block(&mut out, n, 2 * n, k_hat);
        total += trace_product(&(out.transpose() * plant.cost[t].joint() * &out), &second);

        let mut f = Mat::zeros(3 * n, 3 * n);
        set_block(&mut f, 0, 0, a);
        set_block(&mut f, 0, n, &(b * &dk));
        set_block(&mut f, 0, 2 * n, &(b * k_hat));
        set_block(&mut f, n, 0, &(-(l_hat * c)));
        set_block(&mut f, n, n, &(a + b * k + l_hat * c));
        set_block(&mut f, 2 * n, 0, &(-(l * c)));
        set_block(&mut f, 2 * n, n, &(b * &dk));
        set_block(&mut f, 2 * n, 2 * n, &(a + b * k_hat + l * c));

        let mut g = Mat::zeros(3 * n, n + p);
        set_block(&mut g, 0, 0, &Mat::identity(n, n));
        set_block(&mut g, n, n, &(-l_hat));
        set_block(&mut g, 2 * n, n, &(-l));

        let next = &f * &second * f.transpose() + &g * nz.joint() * g.transpose();
        second = (&next + next.transpose()) * 0.5;
    }
    total + trace_product(&plant.p_final, &block(&second, 0..n, 0..n))
}

// ---------------------------------------------------------------------
// Disturbance-feedback program

/// Optimum of the convex program over strictly causal, masked affine
/// maps from purified outputs to inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceFeedbackOptimum {
    pub cost: f64,
    /// `q[t][s]` maps `ỹ_s` to `u_t` for `s < t`.
    pub q: Vec<Vec<Mat>>,
    /// Constant input offsets `c_t`.
    pub offsets: Vec<Vector>,
    /// Eigenvalue ratio of the normal-equation matrix.
    pub condition: f64,
    pub ill_conditioned: bool,
    pub decision_variables: usize,
}

const ILL_CONDITIONED: f64 = 1e12;

#[derive(Debug, Clone, Copy)]
enum Source {
    Offset,
    Output { s: usize, k: usize },
}

#[derive(Debug, Clone, Copy)]
struct Decision {
    t: usize,
    row: usize,
    source: Source,
}

/// Decision variables respecting strict causality and the information
/// masks: `u¹` rows read `ỹ¹` only, `u²` rows read all of `ỹ`.
fn decisions(spec: &ProblemSpec) -> Vec<Decision> {
    let d = spec.dims;
    let mut out = Vec::new();
    for t in 0..spec.horizon() {
        for row in 0..d.m() {
            out.push(Decision { t, row, source: Source::Offset });
        }
        for s in 0..t {
            for row in 0..d.m() {
                let outputs = if row < d.m1 { d.y1() } else { 0..d.p() };
                for k in outputs {
                    out.push(Decision { t, row, source: Source::Output { s, k } });
                }
            }
        }
    }
    out
}

/// Minimizes the expected cost over all admissible affine policies of the
/// purified outputs `ỹ_t = y_t − Cξ_t`, `ξ₊ = Aξ + Bu`, `ξ₀ = 0`.
///
/// Every random quantity is written as a linear map of the standard normal
/// vector `ω = (1, g₀, g₁, …)` with `E[ωωᵀ] = I`, so the expected cost is
/// `‖a₀ + Aθ‖²` in the decision vector `θ`.
pub fn disturbance_feedback_optimum(spec: &ProblemSpec) -> DisturbanceFeedbackOptimum {
    let plant = &spec.plant;
    let (n, m, p, horizon) = (plant.n(), plant.m(), plant.p(), plant.horizon);
    let width = 1 + n + horizon * (n + p);
    let stage_rows = (n + m) * width;
    let rows = horizon * stage_rows + n * width;
    let cost_roots: Vec<Mat> = plant.cost.iter().map(|c| psd_sqrt(&c.joint())).collect();
    let final_root = psd_sqrt(&plant.p_final);

    // Autonomous state and purified outputs as maps of ω.
    let mut a0 = Vector::zeros(rows);
    let mut zeta = Mat::zeros(n, width);
    zeta.set_column(0, &plant.mu_init);
    set_block(&mut zeta, 0, 1, &psd_sqrt(&plant.sigma_init));
    let mut outputs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let dy = &plant.dynamics[t];
        let root = psd_sqrt(&plant.noise[t].joint());
        let offset = 1 + n + t * (n + p);
        let mut w = Mat::zeros(n, width);
        let mut v = Mat::zeros(p, width);
        set_block(&mut w, 0, offset, &root.rows(0, n).into_owned());
        set_block(&mut v, 0, offset, &root.rows(n, p).into_owned());
        outputs.push(&dy.c * &zeta + v);
        let mut xu = Mat::zeros(n + m, width);
        set_block(&mut xu, 0, 0, &zeta);
        a0.rows_mut(t * stage_rows, stage_rows).copy_from_slice((&cost_roots[t] * xu).as_slice());
        zeta = &dy.a * &zeta + w;
    }
    a0.rows_mut(horizon * stage_rows, n * width).copy_from_slice((&final_root * &zeta).as_slice());

    // Each decision moves the stacked vector along a sum of rank-one blocks.
    let vars = decisions(spec);
    let mut design = Mat::zeros(rows, vars.len());
    for (j, dec) in vars.iter().enumerate() {
        let pattern: Vector = match dec.source {
            Source::Offset => {
                let mut e = Vector::zeros(width);
                e[0] = 1.0;
                e
            }
            Source::Output { s, k } => outputs[s].row(k).transpose(),
        };
        let mut col = design.column_mut(j);
        let mut write = |base: usize, c: &Vector| {
            for (w, &pw) in pattern.iter().enumerate() {
                if pw != 0.0 {
                    for (i, &ci) in c.iter().enumerate() {
                        col[base + w * c.len() + i] = ci * pw;
                    }
                }
            }
        };
        let mut unit = Vector::zeros(n + m);
        unit[n + dec.row] = 1.0;
        write(dec.t * stage_rows, &(&cost_roots[dec.t] * unit));
        let mut dx = plant.dynamics[dec.t].b.column(dec.row).into_owned();
        for r in dec.t + 1..horizon {
            let mut xu = Vector::zeros(n + m);
            xu.rows_mut(0, n).copy_from(&dx);
            write(r * stage_rows, &(&cost_roots[r] * xu));
            dx = &plant.dynamics[r].a * dx;
        }
        write(horizon * stage_rows, &(&final_root * dx));
    }

    let normal = design.transpose() * &design;
    let rhs = design.transpose() * &a0;
    let (theta, condition) = if vars.is_empty() {
        (Vector::zeros(0), 1.0)
    } else {
        let eig = SymmetricEigen::new((&normal + normal.transpose()) * 0.5);
        let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
        let bottom = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &l| a.min(l));
        let cutoff = 1e-14 * top;
        let mut theta = Vector::zeros(vars.len());
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > cutoff {
                let v = eig.eigenvectors.column(i);
                theta -= v * (v.dot(&rhs) / lambda);
            }
        }
        let condition = if bottom > 0.0 { top / bottom } else { f64::INFINITY };
        (theta, condition)
    };
    let cost = (&a0 + &design * &theta).norm_squared();

    let mut q: Vec<Vec<Mat>> = (0..horizon).map(|t| vec![Mat::zeros(m, p); t]).collect();
    let mut offsets = vec![Vector::zeros(m); horizon];
    for (dec, &value) in vars.iter().zip(theta.iter()) {
        match dec.source {
            Source::Offset => offsets[dec.t][dec.row] = value,
            Source::Output { s, k } => q[dec.t][s][(dec.row, k)] = value,
        }
    }
    DisturbanceFeedbackOptimum {
        cost,
        q,
        offsets,
        condition,
        ill_conditioned: !(condition <= ILL_CONDITIONED),
        decision_variables: vars.len(),
    }
}

// ---------------------------------------------------------------------
// Fixed-point iteration on the coupled recursions

#[derive(Debug, Clone, PartialEq)]
pub enum FixedPointOutcome {
    Converged { gains: Box<TwoPlayerGains>, iterations: usize },
    NonConvergence { iterations: usize, last_change: f64 },
}

impl FixedPointOutcome {
    pub fn iterations(&self) -> usize {
        match self {
            FixedPointOutcome::Converged { iterations, .. } | FixedPointOutcome::NonConvergence { iterations, .. } => {
                *iterations
            }
        }
    }
}

fn schedule_change(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| max_abs(&(x - y))).fold(0.0, |acc, d| if d.is_nan() { f64::INFINITY } else { acc.max(d) })
}

/// Alternates a forward `Σ̂`/`L̂` sweep with `K̂` held fixed and a backward
/// `P̂`/`K̂` sweep with `L̂` held fixed, starting from the centralized `K`
/// with its first block-row zeroed. Stops when the gain schedules change by
/// less than `tol` in max norm.
pub fn fixed_point_gains(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointOutcome> {
    let d = spec.dims;
    let horizon = spec.horizon();
    let mut k_hat: Vec<Mat> = centralized
        .k
        .iter()
        .map(|k| {
            let mut masked = k.clone();
            masked.rows_mut(0, d.m1).fill(0.0);
            masked
        })
        .collect();
    let mut l_hat: Option<Vec<Mat>> = None;
    let mut last_change = f64::INFINITY;

    for iteration in 1..=max_iter {
        let mut sigma_hat = spec.plant.sigma_init.clone();
        let mut new_l = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let l = l_hat_formula(spec, t, &centralized.sigma[t], &sigma_hat, &k_hat[t])?;
            let ah = a_hat(spec, t, &k_hat[t], &l);
            sigma_hat = sigma_hat_next(spec, centralized, t, &sigma_hat, &ah, &l);
            new_l.push(l);
        }
        let mut p_hat = spec.plant.p_final.clone();
        let mut new_k = vec![Mat::zeros(0, 0); horizon];
        for t in (0..horizon).rev() {
            let k = k_hat_formula(spec, t, &centralized.p[t + 1], &p_hat, &new_l[t])?;
            let ah = a_hat(spec, t, &k, &new_l[t]);
            p_hat = p_hat_prev(spec, centralized, t, &p_hat, &ah, &k);
            new_k[t] = k;
        }
        let mut change = schedule_change(&new_k, &k_hat);
        if let Some(prev) = &l_hat {
            change = change.max(schedule_change(&new_l, prev));
        }
        k_hat = new_k;
        l_hat = Some(new_l);
        last_change = change;
        if change < tol {
            let gains = assemble_gains(spec, centralized, l_hat.take().unwrap_or_default(), k_hat)?;
            return Ok(FixedPointOutcome::Converged { gains: Box::new(gains), iterations: iteration });
        }
        if !change.is_finite() {
            return Ok(FixedPointOutcome::NonConvergence { iterations: iteration, last_change: change });
        }
    }
    Ok(FixedPointOutcome::NonConvergence { iterations: max_iter, last_change })
}

fn assemble_gains(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    l_hat: Vec<Mat>,
    k_hat: Vec<Mat>,
) -> Result<TwoPlayerGains> {
    let d = spec.dims;
    let (sigma_hat, p_hat, a_hat) = propagate_full(spec, centralized, &l_hat, &k_hat);
    let mut gains = TwoPlayerGains {
        decoupled: decoupled_schedules(spec)?,
        sigma_hat21: sigma_hat.iter().map(|s| block(s, d.x2(), d.x1())).collect(),
        p_hat21: p_hat.iter().map(|s| block(s, d.x2(), d.x1())).collect(),
        l_hat21: l_hat.iter().map(|l| block(l, d.x2(), d.y1())).collect(),
        k_hat21: k_hat.iter().map(|k| block(k, d.u2(), d.x1())).collect(),
        l_hat,
        k_hat,
        sigma_hat,
        p_hat,
        a_hat,
        j_hat0: 0.0,
    };
    gains.j_hat0 = two_player_cost(spec, centralized, &gains);
    Ok(gains)
}

// ---------------------------------------------------------------------
// Person-by-person perturbations

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationReport {
    /// Exact cost of the unperturbed controller.
    pub baseline: f64,
    /// Largest `baseline − perturbed` over all trials of both players.
    pub max_decrease: f64,
    pub max_decrease_player1: f64,
    pub max_decrease_player2: f64,
    pub trials: usize,
}

/// Adds `eps · a bᵀ` with random unit `a`, `b` to the given sub-block.
fn rank_one(target: &mut Mat, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, eps: f64, rng: &mut ChaCha8Rng) {
    let draw = |len: usize, rng: &mut ChaCha8Rng| {
        let v = Vector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(&mut *rng)));
        let norm = v.norm();
        if norm > 0.0 {
            v / norm
        } else {
            v
        }
    };
    let a = draw(rows.len(), rng);
    let b = draw(cols.len(), rng);
    let mut view = target.view_mut((rows.start, cols.start), (rows.len(), cols.len()));
    view.ger(eps, &a, &b, 1.0);
}

fn perturbed(controller: &LinearController, player: usize, eps: f64, rng: &mut ChaCha8Rng) -> LinearController {
    let d = controller.dims;
    let mut c = controller.clone();
    for t in 0..c.horizon() {
        if player == 1 {
            rank_one(&mut c.k[t], d.u1(), 0..d.n(), eps, rng);
            rank_one(&mut c.l_hat[t], 0..d.n(), d.y1(), eps, rng);
        } else {
            rank_one(&mut c.k[t], d.u2(), 0..d.n(), eps, rng);
            rank_one(&mut c.k_hat[t], d.u2(), 0..d.n(), eps, rng);
            rank_one(&mut c.l[t], 0..d.n(), 0..d.p(), eps, rng);
        }
    }
    c
}

/// Applies `trials` random admissible rank-one perturbations to each
/// player's gain schedules in turn and reports the largest cost decrease.
pub fn pbp_perturbation_check(
    spec: &ProblemSpec,
    controller: &LinearController,
    eps: f64,
    trials: usize,
    seed: u64,
) -> PerturbationReport {
    let baseline = evaluate_policy_cost(spec, controller);
    let worst = |player: usize| -> f64 {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((player as u64) << 32) | trial as u64);
                let candidate = perturbed(controller, player, eps, &mut rng);
                debug_assert!(crate::controller::check_masks(&candidate.dims, &candidate.k_hat, &candidate.l_hat).is_ok());
                baseline - evaluate_policy_cost(spec, &candidate)
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (p1, p2) = (worst(1), worst(2));
    PerturbationReport { baseline, max_decrease: p1.max(p2), max_decrease_player1: p1, max_decrease_player2: p2, trials }
}
