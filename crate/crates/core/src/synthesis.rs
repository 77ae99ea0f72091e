//! Two-player optimal gains.
//!
//! Player 1's estimator gain `L̂` and Player 2's correction gain `K̂` solve
//! a pair of recursions coupled across the whole horizon: a forward
//! covariance recursion for `Σ̂` and a backward cost-to-go recursion for
//! `P̂`. Their 11 and 22 blocks decouple into ordinary Riccati recursions
//! (`Γ/M` and `F/J`). The remaining 21 blocks are affine in the unknowns,
//! so after eliminating the per-stage gains they form a linear two-point
//! boundary value problem. Stacking `η_t = (vec P̂²¹_t, vec Σ̂²¹_{t+1})`
//! gives a block-tridiagonal system solved by block LU in `O(T)`.

use nalgebra::{SVD, LU};

use crate::centralized::{control_step, filter_step, CentralizedSolution};
use crate::error::{Error, Result};
use crate::linalg::{block, rel_diff, set_block, spd_solve, sym, trace_product, unvec, vec, Mat, Vector};
use crate::problem::{BlockDims, ProblemSpec};

const CONSISTENCY_TOL: f64 = 1e-8;
const ELIMINATION_RCOND: f64 = 1e-13;
const PIVOT_RCOND: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledSchedules {
    /// `Σ̂¹¹`, `T + 1` entries.
    pub gamma: Vec<Mat>,
    pub m: Vec<Mat>,
    /// `P̂²²`, `T + 1` entries.
    pub f: Vec<Mat>,
    pub j: Vec<Mat>,
    /// `A₁₁ + M C₁₁`.
    pub a_m: Vec<Mat>,
    /// `A₂₂ + B₂₂ J`.
    pub a_j: Vec<Mat>,
}

/// `[ I H ; G I ]`-banded system over `η_0..η_{T-1}`, each of size `2q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySystem {
    /// `q = n2·n1`, the length of one vectorized 21 block.
    pub q: usize,
    /// `lower[i]` couples row `i + 1` to `η_i`.
    pub lower: Vec<Mat>,
    /// `upper[i]` couples row `i` to `η_{i+1}`.
    pub upper: Vec<Mat>,
    pub rhs: Vec<Vector>,
}

impl BoundarySystem {
    pub fn horizon(&self) -> usize {
        self.rhs.len()
    }

    /// Dense `(T·2q)²` form, for testing and diagnostics.
    pub fn to_dense(&self) -> (Mat, Vector) {
        let b = 2 * self.q;
        let t = self.horizon();
        let mut m = Mat::identity(t * b, t * b);
        let mut c = Vector::zeros(t * b);
        for i in 0..t {
            c.rows_mut(i * b, b).copy_from(&self.rhs[i]);
            if i > 0 {
                set_block(&mut m, i * b, (i - 1) * b, &self.lower[i - 1]);
            }
            if i + 1 < t {
                set_block(&mut m, i * b, (i + 1) * b, &self.upper[i]);
            }
        }
        (m, c)
    }

    /// Applies the system matrix to a stacked solution.
    pub fn apply(&self, eta: &[Vector]) -> Vec<Vector> {
        (0..self.horizon())
            .map(|i| {
                let mut r = eta[i].clone();
                if i > 0 {
                    r += &self.lower[i - 1] * &eta[i - 1];
                }
                if i + 1 < self.horizon() {
                    r += &self.upper[i] * &eta[i + 1];
                }
                r
            })
            .collect()
    }

    /// `‖Mη − c‖ / (1 + ‖c‖)`.
    pub fn residual(&self, eta: &[Vector]) -> f64 {
        let applied = self.apply(eta);
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, c) in applied.iter().zip(&self.rhs) {
            num += (a - c).norm_squared();
            den += c.norm_squared();
        }
        num.sqrt() / (1.0 + den.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPlayerGains {
    pub decoupled: DecoupledSchedules,
    pub sigma_hat21: Vec<Mat>,
    pub p_hat21: Vec<Mat>,
    pub l_hat21: Vec<Mat>,
    pub k_hat21: Vec<Mat>,
    /// `[[M, 0], [L̂²¹, 0]]`.
    pub l_hat: Vec<Mat>,
    /// `[[0, 0], [K̂²¹, J]]`.
    pub k_hat: Vec<Mat>,
    pub sigma_hat: Vec<Mat>,
    pub p_hat: Vec<Mat>,
    /// `A + B K̂ + L̂ C`.
    pub a_hat: Vec<Mat>,
    pub j_hat0: f64,
}

// ---------------------------------------------------------------------
// Decoupled diagonal-block recursions

pub fn player1_filter_recursion(spec: &ProblemSpec) -> Result<(Vec<Mat>, Vec<Mat>, Vec<Mat>)> {
    let d = spec.dims;
    let plant = &spec.plant;
    let (x1, y1) = (d.x1(), d.y1());
    let mut gamma = vec![block(&plant.sigma_init, x1.clone(), x1.clone())];
    let mut gains = Vec::with_capacity(plant.horizon);
    let mut a_m = Vec::with_capacity(plant.horizon);
    for t in 0..plant.horizon {
        let (dy, nz) = (&plant.dynamics[t], &plant.noise[t]);
        let a11 = block(&dy.a, x1.clone(), x1.clone());
        let c11 = block(&dy.c, y1.clone(), x1.clone());
        let (m, next) = filter_step(
            &a11,
            &c11,
            &block(&nz.w, x1.clone(), x1.clone()),
            &block(&nz.u, y1.clone(), x1.clone()),
            &block(&nz.v, y1.clone(), y1.clone()),
            &gamma[t],
        )
        .ok_or(Error::SingularInnovation { t })?;
        a_m.push(&a11 + &m * &c11);
        gains.push(m);
        gamma.push(next);
    }
    Ok((gamma, gains, a_m))
}

pub fn player2_control_recursion(spec: &ProblemSpec) -> Result<(Vec<Mat>, Vec<Mat>, Vec<Mat>)> {
    let d = spec.dims;
    let plant = &spec.plant;
    let horizon = plant.horizon;
    let (x2, u2) = (d.x2(), d.u2());
    let mut f = vec![Mat::zeros(0, 0); horizon + 1];
    let mut gains = vec![Mat::zeros(0, 0); horizon];
    let mut a_j = vec![Mat::zeros(0, 0); horizon];
    f[horizon] = block(&plant.p_final, x2.clone(), x2.clone());
    for t in (0..horizon).rev() {
        let (dy, c) = (&plant.dynamics[t], &plant.cost[t]);
        let a22 = block(&dy.a, x2.clone(), x2.clone());
        let b22 = block(&dy.b, x2.clone(), u2.clone());
        let (j, ft) = control_step(
            &a22,
            &b22,
            &block(&c.q, x2.clone(), x2.clone()),
            &block(&c.s, x2.clone(), u2.clone()),
            &block(&c.r, u2.clone(), u2.clone()),
            &f[t + 1],
        )
        .ok_or(Error::SingularHessian { t })?;
        a_j[t] = &a22 + &b22 * &j;
        gains[t] = j;
        f[t] = ft;
    }
    Ok((f, gains, a_j))
}

pub fn decoupled_schedules(spec: &ProblemSpec) -> Result<DecoupledSchedules> {
    let (gamma, m, a_m) = player1_filter_recursion(spec)?;
    let (f, j, a_j) = player2_control_recursion(spec)?;
    Ok(DecoupledSchedules { gamma, m, f, j, a_m, a_j })
}

// ---------------------------------------------------------------------
// Per-stage affine structure of the 21-block recursions

/// Affine maps of one stage, in terms of `x = vec Σ̂²¹_t` and
/// `y = vec P̂²¹_{t+1}`:
///
/// * gains: `vec L̂²¹ = lx·x + ly·y + l0`, `vec K̂²¹ = kx·x + ky·y + k0`
/// * updates: `vec Σ̂²¹_{t+1} = sx·x + sy·y + s0` and
///   `vec P̂²¹_t = px·x + py·y + p0`
#[derive(Debug, Clone)]
pub(crate) struct StageMaps {
    pub lx: Mat,
    pub ly: Mat,
    pub l0: Vector,
    pub kx: Mat,
    pub ky: Mat,
    pub k0: Vector,
    pub sx: Mat,
    pub sy: Mat,
    pub s0: Vector,
    pub px: Mat,
    pub py: Mat,
    pub p0: Vector,
}

pub(crate) fn stage_maps(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    decoupled: &DecoupledSchedules,
    t: usize,
) -> Result<StageMaps> {
    let d = spec.dims;
    let (x1, x2, u2, y1) = (d.x1(), d.x2(), d.u2(), d.y1());
    let (dy, nz, c) = (&spec.plant.dynamics[t], &spec.plant.noise[t], &spec.plant.cost[t]);

    let a21 = block(&dy.a, x2.clone(), x1.clone());
    let b22 = block(&dy.b, x2.clone(), u2.clone());
    let c11 = block(&dy.c, y1.clone(), x1.clone());
    let u12 = block(&nz.u, y1.clone(), x2.clone());
    let w21 = block(&nz.w, x2.clone(), x1.clone());
    let v11 = block(&nz.v, y1.clone(), y1.clone());
    let q21 = block(&c.q, x2.clone(), x1.clone());
    let s12 = block(&c.s, x1.clone(), u2.clone());
    let r22 = block(&c.r, u2.clone(), u2.clone());

    let sigma = &centralized.sigma[t];
    let sigma11 = block(sigma, x1.clone(), x1.clone());
    let sigma21 = block(sigma, x2.clone(), x1.clone());
    let p_next = &centralized.p[t + 1];
    let p_next21 = block(p_next, x2.clone(), x1.clone());
    let p_next22 = block(p_next, x2.clone(), x2.clone());

    let gamma = &decoupled.gamma[t];
    let m = &decoupled.m[t];
    let f_next = &decoupled.f[t + 1];
    let j = &decoupled.j[t];
    let a_m = &decoupled.a_m[t];
    let a_j = &decoupled.a_j[t];

    let (n1, n2, m2, p1) = (d.n1, d.n2, d.m2, d.p1);
    let innovation = &c11 * gamma * c11.transpose() + &v11;
    let hessian = b22.transpose() * f_next * &b22 + &r22;
    // (C₁₁ΓC₁₁ᵀ + V₁₁)⁻¹ C₁₁, i.e. the transpose of C₁₁ᵀ(·)⁻¹
    let vi_c = spd_solve(&innovation, &c11).ok_or(Error::SingularInnovation { t })?;
    let hi_b = spd_solve(&hessian, &b22.transpose()).ok_or(Error::SingularHessian { t })?;

    let d11 = gamma - &sigma11;
    let delta_f = f_next - &p_next22;
    let est_drive = a21.clone() * gamma - &b22 * j * &sigma21;
    let ctl_drive = f_next * &a21 - &p_next21 * m * &c11;

    // L̂²¹ = −[A_J X C₁₁ᵀ + B₂₂ K̂²¹ D C₁₁ᵀ + (est_drive C₁₁ᵀ + U₁₂ᵀ)] Vi
    let n1_t = vi_c.clone(); // (C₁₁ᵀ Vi)ᵀ
    let n2_t = &vi_c * &d11; // (D C₁₁ᵀ Vi)ᵀ
    let l_from_x = -n1_t.kronecker(a_j);
    let l_from_k = -n2_t.kronecker(&b22);
    let l_lead = &est_drive * c11.transpose() + u12.transpose();
    let l_const = -vec(&spd_solve(&innovation, &l_lead.transpose()).ok_or(Error::SingularInnovation { t })?.transpose());

    // K̂²¹ = −Hi[B₂₂ᵀ Y A_M + B₂₂ᵀ ΔF L̂²¹ C₁₁ + B₂₂ᵀ ctl_drive + S₁₂ᵀ]
    let k_from_y = -a_m.transpose().kronecker(&hi_b);
    let k_from_l = -c11.transpose().kronecker(&(&hi_b * &delta_f));
    let k_const = -vec(&(&hi_b * &ctl_drive + spd_solve(&hessian, &s12.transpose()).ok_or(Error::SingularHessian { t })?));

    // Solve [[I, −l_from_k], [−k_from_l, I]] [ℓ; k] = [l_from_x x + l_const; k_from_y y + k_const].
    let (nl, nk, q) = (n2 * p1, m2 * n1, n2 * n1);
    let mut e = Mat::identity(nl + nk, nl + nk);
    set_block(&mut e, 0, nl, &-&l_from_k);
    set_block(&mut e, nl, 0, &-&k_from_l);
    let svals = SVD::new(e.clone(), false, false).singular_values;
    let (smax, smin) = (svals.max(), svals.min());
    if !(smin > ELIMINATION_RCOND * smax) {
        return Err(Error::EliminationSingular { t });
    }
    let mut rhs = Mat::zeros(nl + nk, 2 * q + 1);
    set_block(&mut rhs, 0, 0, &l_from_x);
    set_block(&mut rhs, nl, q, &k_from_y);
    rhs.view_mut((0, 2 * q), (nl, 1)).copy_from(&l_const);
    rhs.view_mut((nl, 2 * q), (nk, 1)).copy_from(&k_const);
    let sol = LU::new(e).solve(&rhs).ok_or(Error::EliminationSingular { t })?;

    let lx = block(&sol, 0..nl, 0..q);
    let ly = block(&sol, 0..nl, q..2 * q);
    let l0: Vector = sol.view((0, 2 * q), (nl, 1)).column(0).into_owned();
    let kx = block(&sol, nl..nl + nk, 0..q);
    let ky = block(&sol, nl..nl + nk, q..2 * q);
    let k0: Vector = sol.view((nl, 2 * q), (nk, 1)).column(0).into_owned();

    // Σ̂²¹₊ = A_J X A_Mᵀ + B₂₂ K̂²¹ D A_Mᵀ + est_drive A_Mᵀ + U₁₂ᵀ Mᵀ + W₂₁
    let s_from_k = (a_m * &d11).kronecker(&b22);
    let sx = a_m.kronecker(a_j) + &s_from_k * &kx;
    let sy = &s_from_k * &ky;
    let s0 = &s_from_k * &k0 + vec(&(&est_drive * a_m.transpose() + u12.transpose() * m.transpose() + &w21));

    // P̂²¹ = A_Jᵀ Y A_M + A_Jᵀ ΔF L̂²¹ C₁₁ + A_Jᵀ ctl_drive + Jᵀ S₁₂ᵀ + Q₂₁
    let p_from_l = c11.transpose().kronecker(&(a_j.transpose() * &delta_f));
    let px = &p_from_l * &lx;
    let py = a_m.transpose().kronecker(&a_j.transpose()) + &p_from_l * &ly;
    let p0 = &p_from_l * &l0 + vec(&(a_j.transpose() * &ctl_drive + j.transpose() * s12.transpose() + &q21));

    Ok(StageMaps { lx, ly, l0, kx, ky, k0, sx, sy, s0, px, py, p0 })
}

fn all_stage_maps(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    decoupled: &DecoupledSchedules,
) -> Result<Vec<StageMaps>> {
    (0..spec.horizon())
        .map(|t| stage_maps(spec, centralized, decoupled, t))
        .collect()
}

fn boundary_values(spec: &ProblemSpec) -> (Vector, Vector) {
    let d = spec.dims;
    let x0 = vec(&block(&spec.plant.sigma_init, d.x2(), d.x1()));
    let y_final = vec(&block(&spec.plant.p_final, d.x2(), d.x1()));
    (x0, y_final)
}

pub fn assemble_boundary_system(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    decoupled: &DecoupledSchedules,
) -> Result<BoundarySystem> {
    let maps = all_stage_maps(spec, centralized, decoupled)?;
    Ok(assemble_from_maps(spec, &maps))
}

fn assemble_from_maps(spec: &ProblemSpec, maps: &[StageMaps]) -> BoundarySystem {
    let q = spec.dims.n1 * spec.dims.n2;
    let horizon = maps.len();
    let (x0, y_final) = boundary_values(spec);
    let mut lower = Vec::with_capacity(horizon.saturating_sub(1));
    let mut upper = Vec::with_capacity(horizon.saturating_sub(1));
    let mut rhs = Vec::with_capacity(horizon);
    // Row t:  y_t − px x_t − py y_{t+1} = p0
    //         x_{t+1} − sx x_t − sy y_{t+1} = s0
    for (t, mp) in maps.iter().enumerate() {
        let mut c = Vector::zeros(2 * q);
        let mut top = mp.p0.clone();
        let mut bottom = mp.s0.clone();
        if t == 0 {
            top += &mp.px * &x0;
            bottom += &mp.sx * &x0;
        } else {
            let mut g = Mat::zeros(2 * q, 2 * q);
            set_block(&mut g, 0, q, &-&mp.px);
            set_block(&mut g, q, q, &-&mp.sx);
            lower.push(g);
        }
        if t + 1 == horizon {
            top += &mp.py * &y_final;
            bottom += &mp.sy * &y_final;
        } else {
            let mut h = Mat::zeros(2 * q, 2 * q);
            set_block(&mut h, 0, 0, &-&mp.py);
            set_block(&mut h, q, 0, &-&mp.sy);
            upper.push(h);
        }
        c.rows_mut(0, q).copy_from(&top);
        c.rows_mut(q, q).copy_from(&bottom);
        rhs.push(c);
    }
    BoundarySystem { q, lower, upper, rhs }
}

fn checked_lu(m: Mat, index: usize) -> Result<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = LU::new(m);
    let diag = lu.u().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), x| (lo.min(x.abs()), hi.max(x.abs())));
    if !(lo > PIVOT_RCOND * hi.max(1.0)) {
        return Err(Error::PivotFailure { block: index });
    }
    Ok(lu)
}

/// Block LU: forward elimination of the sub-diagonal, then back
/// substitution. Work is `O(T·q³)`.
pub fn solve_block_tridiagonal(system: &BoundarySystem) -> Result<Vec<Vector>> {
    let horizon = system.horizon();
    let b = 2 * system.q;
    let mut pivots = Vec::with_capacity(horizon);
    let mut reduced = Vec::with_capacity(horizon);
    pivots.push(checked_lu(Mat::identity(b, b), 0)?);
    reduced.push(system.rhs[0].clone());
    for i in 1..horizon {
        let prev = &pivots[i - 1];
        // W = G_i D_{i−1}⁻¹, computed as (D_{i−1}⁻ᵀ G_iᵀ)ᵀ via D⁻¹H and D⁻¹r
        let dinv_h = prev.solve(&system.upper[i - 1]).ok_or(Error::PivotFailure { block: i - 1 })?;
        let dinv_r = prev.solve(&reduced[i - 1]).ok_or(Error::PivotFailure { block: i - 1 })?;
        let g = &system.lower[i - 1];
        let pivot = Mat::identity(b, b) - g * dinv_h;
        reduced.push(&system.rhs[i] - g * dinv_r);
        pivots.push(checked_lu(pivot, i)?);
    }
    let mut eta = vec![Vector::zeros(b); horizon];
    for i in (0..horizon).rev() {
        let mut r = reduced[i].clone();
        if i + 1 < horizon {
            r -= &system.upper[i] * &eta[i + 1];
        }
        eta[i] = pivots[i].solve(&r).ok_or(Error::PivotFailure { block: i })?;
    }
    Ok(eta)
}

// ---------------------------------------------------------------------
// Full-matrix coupled recursions

/// `L̂ = −(AΣ̂Cᵀ + Uᵀ + BK̂(Σ̂−Σ)Cᵀ) E₁ (C₁₁Σ̂¹¹C₁₁ᵀ + V₁₁)⁻¹ E₁ᵀ`.
pub(crate) fn l_hat_formula(
    spec: &ProblemSpec,
    t: usize,
    sigma: &Mat,
    sigma_hat: &Mat,
    k_hat: &Mat,
) -> Result<Mat> {
    let d = spec.dims;
    let (dy, nz) = (&spec.plant.dynamics[t], &spec.plant.noise[t]);
    let c11 = block(&dy.c, d.y1(), d.x1());
    let innovation = &c11 * block(sigma_hat, d.x1(), d.x1()) * c11.transpose() + block(&nz.v, d.y1(), d.y1());
    let lead = &dy.a * sigma_hat * dy.c.transpose() + nz.u.transpose() + &dy.b * k_hat * (sigma_hat - sigma) * dy.c.transpose();
    let lead1 = lead.columns(0, d.p1).into_owned();
    let g = -spd_solve(&innovation, &lead1.transpose()).ok_or(Error::SingularInnovation { t })?.transpose();
    let mut out = Mat::zeros(d.n(), d.p());
    set_block(&mut out, 0, 0, &g);
    Ok(out)
}

/// `K̂ = −E₂ (B₂₂ᵀP̂²²₊B₂₂ + R₂₂)⁻¹ E₂ᵀ (BᵀP̂₊A + Sᵀ + Bᵀ(P̂₊−P₊)L̂C)`.
pub(crate) fn k_hat_formula(
    spec: &ProblemSpec,
    t: usize,
    p_next: &Mat,
    p_hat_next: &Mat,
    l_hat: &Mat,
) -> Result<Mat> {
    let d = spec.dims;
    let (dy, c) = (&spec.plant.dynamics[t], &spec.plant.cost[t]);
    let b22 = block(&dy.b, d.x2(), d.u2());
    let hessian = b22.transpose() * block(p_hat_next, d.x2(), d.x2()) * &b22 + block(&c.r, d.u2(), d.u2());
    let lead = dy.b.transpose() * p_hat_next * &dy.a + c.s.transpose() + dy.b.transpose() * (p_hat_next - p_next) * l_hat * &dy.c;
    let lead2 = lead.rows(d.m1, d.m2).into_owned();
    let g = -spd_solve(&hessian, &lead2).ok_or(Error::SingularHessian { t })?;
    let mut out = Mat::zeros(d.m(), d.n());
    set_block(&mut out, d.m1, 0, &g);
    Ok(out)
}

/// `Σ̂₊ = Σ₊ + Â(Σ̂−Σ)Âᵀ + (L̂−L)(CΣCᵀ+V)(L̂−L)ᵀ`.
pub(crate) fn sigma_hat_next(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    t: usize,
    sigma_hat: &Mat,
    a_hat: &Mat,
    l_hat: &Mat,
) -> Mat {
    let (dy, nz) = (&spec.plant.dynamics[t], &spec.plant.noise[t]);
    let sigma = &centralized.sigma[t];
    let innovation = &dy.c * sigma * dy.c.transpose() + &nz.v;
    let dl = l_hat - &centralized.l[t];
    sym(&(&centralized.sigma[t + 1] + a_hat * (sigma_hat - sigma) * a_hat.transpose() + &dl * innovation * dl.transpose()))
}

/// `P̂ = P + Âᵀ(P̂₊−P₊)Â + (K̂−K)ᵀ(BᵀP₊B+R)(K̂−K)`.
pub(crate) fn p_hat_prev(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    t: usize,
    p_hat_next: &Mat,
    a_hat: &Mat,
    k_hat: &Mat,
) -> Mat {
    let (dy, c) = (&spec.plant.dynamics[t], &spec.plant.cost[t]);
    let p_next = &centralized.p[t + 1];
    let hessian = dy.b.transpose() * p_next * &dy.b + &c.r;
    let dk = k_hat - &centralized.k[t];
    sym(&(&centralized.p[t] + a_hat.transpose() * (p_hat_next - p_next) * a_hat + dk.transpose() * hessian * &dk))
}

pub(crate) fn a_hat(spec: &ProblemSpec, t: usize, k_hat: &Mat, l_hat: &Mat) -> Mat {
    let dy = &spec.plant.dynamics[t];
    &dy.a + &dy.b * k_hat + l_hat * &dy.c
}

pub(crate) fn assemble_l_hat(dims: &BlockDims, m: &Mat, l21: &Mat) -> Mat {
    let mut out = Mat::zeros(dims.n(), dims.p());
    set_block(&mut out, 0, 0, m);
    set_block(&mut out, dims.n1, 0, l21);
    out
}

pub(crate) fn assemble_k_hat(dims: &BlockDims, k21: &Mat, j: &Mat) -> Mat {
    let mut out = Mat::zeros(dims.m(), dims.n());
    set_block(&mut out, dims.m1, 0, k21);
    set_block(&mut out, dims.m1, dims.n1, j);
    out
}

/// Propagates full `Σ̂` forward and `P̂` backward for fixed gains.
pub(crate) fn propagate_full(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    l_hat: &[Mat],
    k_hat: &[Mat],
) -> (Vec<Mat>, Vec<Mat>, Vec<Mat>) {
    let horizon = spec.horizon();
    let a_hats: Vec<Mat> = (0..horizon).map(|t| a_hat(spec, t, &k_hat[t], &l_hat[t])).collect();
    let mut sigma_hat = vec![sym(&spec.plant.sigma_init)];
    for t in 0..horizon {
        let next = sigma_hat_next(spec, centralized, t, &sigma_hat[t], &a_hats[t], &l_hat[t]);
        sigma_hat.push(next);
    }
    let mut p_hat = vec![Mat::zeros(0, 0); horizon + 1];
    p_hat[horizon] = sym(&spec.plant.p_final);
    for t in (0..horizon).rev() {
        p_hat[t] = p_hat_prev(spec, centralized, t, &p_hat[t + 1], &a_hats[t], &k_hat[t]);
    }
    (sigma_hat, p_hat, a_hats)
}

fn check_consistent(what: &'static str, t: usize, actual: &Mat, expected: &Mat) -> Result<()> {
    let deviation = rel_diff(actual, expected);
    if !(deviation <= CONSISTENCY_TOL) {
        return Err(Error::Consistency { what, t, deviation });
    }
    Ok(())
}

pub fn recover_gains(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    decoupled: &DecoupledSchedules,
    eta: &[Vector],
) -> Result<TwoPlayerGains> {
    let maps = all_stage_maps(spec, centralized, decoupled)?;
    recover_from_maps(spec, centralized, decoupled, &maps, eta)
}

fn recover_from_maps(
    spec: &ProblemSpec,
    centralized: &CentralizedSolution,
    decoupled: &DecoupledSchedules,
    maps: &[StageMaps],
    eta: &[Vector],
) -> Result<TwoPlayerGains> {
    let d = spec.dims;
    let horizon = spec.horizon();
    let q = d.n1 * d.n2;
    if eta.len() != horizon || eta.iter().any(|e| e.len() != 2 * q) {
        return Err(Error::Dimension("boundary solution does not match the problem".into()));
    }
    let (x0, y_final) = boundary_values(spec);
    let mut xs = vec![x0];
    xs.extend(eta.iter().map(|e| e.rows(q, q).into_owned()));
    let mut ys: Vec<Vector> = eta.iter().map(|e| e.rows(0, q).into_owned()).collect();
    ys.push(y_final);

    let mut l_hat21 = Vec::with_capacity(horizon);
    let mut k_hat21 = Vec::with_capacity(horizon);
    for (t, mp) in maps.iter().enumerate() {
        let l = &mp.lx * &xs[t] + &mp.ly * &ys[t + 1] + &mp.l0;
        let k = &mp.kx * &xs[t] + &mp.ky * &ys[t + 1] + &mp.k0;
        l_hat21.push(unvec(l.as_slice(), d.n2, d.p1));
        k_hat21.push(unvec(k.as_slice(), d.m2, d.n1));
    }
    let sigma_hat21: Vec<Mat> = xs.iter().map(|x| unvec(x.as_slice(), d.n2, d.n1)).collect();
    let p_hat21: Vec<Mat> = ys.iter().map(|y| unvec(y.as_slice(), d.n2, d.n1)).collect();

    let l_hat: Vec<Mat> = (0..horizon).map(|t| assemble_l_hat(&d, &decoupled.m[t], &l_hat21[t])).collect();
    let k_hat: Vec<Mat> = (0..horizon).map(|t| assemble_k_hat(&d, &k_hat21[t], &decoupled.j[t])).collect();
    let (sigma_hat, p_hat, a_hat) = propagate_full(spec, centralized, &l_hat, &k_hat);

    for t in 0..=horizon {
        check_consistent("Sigma_hat^11 vs Gamma", t, &block(&sigma_hat[t], d.x1(), d.x1()), &decoupled.gamma[t])?;
        check_consistent("Sigma_hat^21", t, &block(&sigma_hat[t], d.x2(), d.x1()), &sigma_hat21[t])?;
        check_consistent("P_hat^22 vs F", t, &block(&p_hat[t], d.x2(), d.x2()), &decoupled.f[t])?;
        check_consistent("P_hat^21", t, &block(&p_hat[t], d.x2(), d.x1()), &p_hat21[t])?;
    }

    let mut gains = TwoPlayerGains {
        decoupled: decoupled.clone(),
        sigma_hat21,
        p_hat21,
        l_hat21,
        k_hat21,
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

/// Expected cost of the two-player controller realized with `gains`.
pub fn two_player_cost(spec: &ProblemSpec, centralized: &CentralizedSolution, gains: &TwoPlayerGains) -> f64 {
    let plant = &spec.plant;
    let p = &centralized.p;
    let mut total = trace_product(&p[0], &plant.sigma_init);
    for t in 0..plant.horizon {
        let (dy, c) = (&plant.dynamics[t], &plant.cost[t]);
        let hessian = dy.b.transpose() * &p[t + 1] * &dy.b + &c.r;
        let k = &centralized.k[t];
        let dk = &gains.k_hat[t] - k;
        total += trace_product(&p[t + 1], &plant.noise[t].w);
        total += trace_product(&centralized.sigma[t], &(k.transpose() * &hessian * k));
        total += trace_product(&(&gains.sigma_hat[t] - &centralized.sigma[t]), &(dk.transpose() * &hessian * &dk));
    }
    total + plant.mu_init.dot(&(&p[0] * &plant.mu_init))
}

/// Largest relative residual of each coupled-recursion equation family.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct RecursionResiduals {
    pub sigma_hat: f64,
    pub l_hat: f64,
    pub p_hat: f64,
    pub k_hat: f64,
}

impl RecursionResiduals {
    pub fn max(&self) -> f64 {
        self.sigma_hat.max(self.l_hat).max(self.p_hat).max(self.k_hat)
    }
}

/// Evaluates both sides of every coupled-recursion equation at every `t`.
pub fn recursion_residuals(spec: &ProblemSpec, centralized: &CentralizedSolution, gains: &TwoPlayerGains) -> RecursionResiduals {
    let horizon = spec.horizon();
    let mut r = RecursionResiduals {
        sigma_hat: rel_diff(&gains.sigma_hat[0], &sym(&spec.plant.sigma_init)),
        p_hat: rel_diff(&gains.p_hat[horizon], &sym(&spec.plant.p_final)),
        ..Default::default()
    };
    let worst = |acc: f64, x: f64| if x.is_nan() { f64::INFINITY } else { acc.max(x) };
    for t in 0..horizon {
        let a_hat = a_hat(spec, t, &gains.k_hat[t], &gains.l_hat[t]);
        let s_next = sigma_hat_next(spec, centralized, t, &gains.sigma_hat[t], &a_hat, &gains.l_hat[t]);
        r.sigma_hat = worst(r.sigma_hat, rel_diff(&gains.sigma_hat[t + 1], &s_next));
        let p_prev = p_hat_prev(spec, centralized, t, &gains.p_hat[t + 1], &a_hat, &gains.k_hat[t]);
        r.p_hat = worst(r.p_hat, rel_diff(&gains.p_hat[t], &p_prev));
        r.l_hat = match l_hat_formula(spec, t, &centralized.sigma[t], &gains.sigma_hat[t], &gains.k_hat[t]) {
            Ok(l) => worst(r.l_hat, rel_diff(&gains.l_hat[t], &l)),
            Err(_) => f64::INFINITY,
        };
        r.k_hat = match k_hat_formula(spec, t, &centralized.p[t + 1], &gains.p_hat[t + 1], &gains.l_hat[t]) {
            Ok(k) => worst(r.k_hat, rel_diff(&gains.k_hat[t], &k)),
            Err(_) => f64::INFINITY,
        };
    }
    r
}

/// Centralized solution plus the two-player gains for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub centralized: CentralizedSolution,
    pub gains: TwoPlayerGains,
}

/// Full pipeline: centralized and decoupled recursions, boundary system
/// assembly, block-tridiagonal solve, gain recovery.
pub fn synthesize(spec: &ProblemSpec) -> Result<Synthesis> {
    let centralized = crate::centralized::solve_centralized(&spec.plant)?;
    let decoupled = decoupled_schedules(spec)?;
    let maps = all_stage_maps(spec, &centralized, &decoupled)?;
    let system = assemble_from_maps(spec, &maps);
    let eta = solve_block_tridiagonal(&system)?;
    let gains = recover_from_maps(spec, &centralized, &decoupled, &maps, &eta)?;
    Ok(Synthesis { centralized, gains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centralized::{control_recursion, filter_recursion, solve_centralized};
    use crate::linalg::min_eigenvalue;
    use crate::problem::{random_instance, Player};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(actual: &[f64], expected: &[f64]) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= 1e-14, "{actual:?} vs {expected:?}");
        }
    }

    fn dims(n1: usize, n2: usize, m1: usize, m2: usize, p1: usize, p2: usize) -> BlockDims {
        BlockDims::new(n1, n2, m1, m2, p1, p2).unwrap()
    }

    fn solved(spec: &ProblemSpec) -> (CentralizedSolution, DecoupledSchedules) {
        (solve_centralized(&spec.plant).unwrap(), decoupled_schedules(spec).unwrap())
    }

    fn scalar_blocks_spec(horizon: usize) -> ProblemSpec {
        let mut spec = random_instance(1, dims(1, 1, 1, 1, 1, 1), horizon, 1.0);
        for t in 0..horizon {
            let (dy, nz, c) = (&mut spec.plant.dynamics[t], &mut spec.plant.noise[t], &mut spec.plant.cost[t]);
            dy.a[(0, 0)] = 1.0;
            dy.c[(0, 0)] = 1.0;
            dy.a[(1, 1)] = 1.0;
            dy.b[(1, 1)] = 1.0;
            nz.w[(0, 0)] = 1.0;
            nz.u[(0, 0)] = 0.0;
            nz.v[(0, 0)] = 1.0;
            c.q[(1, 1)] = 1.0;
            c.r[(1, 1)] = 1.0;
            c.s[(1, 1)] = 0.0;
        }
        spec.plant.sigma_init[(0, 0)] = 0.0;
        spec.plant.sigma_init[(1, 0)] = 0.0;
        spec.plant.sigma_init[(0, 1)] = 0.0;
        spec.plant.p_final[(1, 1)] = 1.0;
        spec
    }

    #[test]
    fn player1_scalar_recursion_matches_hand_evaluation() {
        let spec = scalar_blocks_spec(2);
        let (gamma, m, a_m) = player1_filter_recursion(&spec).unwrap();
        let g: Vec<f64> = gamma.iter().map(|x| x[(0, 0)]).collect();
        let mm: Vec<f64> = m.iter().map(|x| x[(0, 0)]).collect();
        assert_close(&g, &[0.0, 1.0, 1.5]);
        assert_close(&mm, &[0.0, -0.5]);
        assert_close(&[a_m[1][(0, 0)]], &[0.5]);
    }

    #[test]
    fn player2_scalar_recursion_matches_hand_evaluation() {
        let spec = scalar_blocks_spec(1);
        let (f, j, a_j) = player2_control_recursion(&spec).unwrap();
        assert_close(&[j[0][(0, 0)]], &[-0.5]);
        assert_close(&[f[0][(0, 0)]], &[1.5]);
        assert_close(&[a_j[0][(0, 0)]], &[0.5]);
    }

    #[test]
    fn decoupled_recursions_match_standalone_subsystems() {
        let spec = random_instance(5, dims(2, 1, 1, 2, 2, 1), 6, 0.0);
        let (gamma, m, _) = player1_filter_recursion(&spec).unwrap();
        let (f, j, _) = player2_control_recursion(&spec).unwrap();
        let (sigma1, l1) = filter_recursion(&spec.subsystem(Player::One)).unwrap();
        let (p2, k2) = control_recursion(&spec.subsystem(Player::Two)).unwrap();
        assert_eq!((gamma, m), (sigma1, l1));
        assert_eq!((f, j), (p2, k2));
    }

    #[test]
    fn uninformative_player1_measurement_gives_zero_m() {
        let mut spec = random_instance(6, dims(2, 2, 1, 1, 1, 1), 4, 1.0);
        for (dy, nz) in spec.plant.dynamics.iter_mut().zip(spec.plant.noise.iter_mut()) {
            dy.c.view_mut((0, 0), (1, 2)).fill(0.0);
            nz.u.view_mut((0, 0), (1, 2)).fill(0.0);
        }
        let (_, m, a_m) = player1_filter_recursion(&spec).unwrap();
        for t in 0..4 {
            assert_eq!(m[t].amax(), 0.0);
            assert_eq!(a_m[t], block(&spec.plant.dynamics[t].a, 0..2, 0..2));
        }
    }

    #[test]
    fn zero_player2_cost_gives_zero_f() {
        let mut spec = random_instance(6, dims(1, 2, 1, 1, 1, 1), 4, 1.0);
        for c in &mut spec.plant.cost {
            c.q.view_mut((1, 1), (2, 2)).fill(0.0);
            c.s.view_mut((1, 1), (2, 1)).fill(0.0);
        }
        spec.plant.p_final.view_mut((1, 1), (2, 2)).fill(0.0);
        let (f, j, _) = player2_control_recursion(&spec).unwrap();
        assert!(f.iter().all(|x| x.amax() == 0.0));
        assert!(j.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn single_stage_system_has_no_off_diagonal_blocks() {
        let spec = random_instance(2, dims(2, 2, 1, 1, 2, 2), 1, 1.0);
        let (cen, dec) = solved(&spec);
        let system = assemble_boundary_system(&spec, &cen, &dec).unwrap();
        assert!(system.lower.is_empty() && system.upper.is_empty());
        let eta = solve_block_tridiagonal(&system).unwrap();
        assert_eq!(eta[0], system.rhs[0]);
    }

    #[test]
    fn decoupled_instance_has_zero_boundary_system() {
        let spec = random_instance(3, dims(2, 2, 1, 1, 2, 2), 5, 0.0);
        let (cen, dec) = solved(&spec);
        let system = assemble_boundary_system(&spec, &cen, &dec).unwrap();
        assert!(system.rhs.iter().all(|c| c.amax() == 0.0));
        let eta = solve_block_tridiagonal(&system).unwrap();
        assert!(eta.iter().all(|e| e.amax() == 0.0));
    }

    /// Evaluates one stage of the 21-block updates from the full-matrix
    /// gain formulas, resolving the mutual gain dependence by probing the
    /// affine composite `ℓ ↦ L̂(K̂(ℓ))` and solving its fixed point.
    fn full_matrix_stage(
        spec: &ProblemSpec,
        cen: &CentralizedSolution,
        dec: &DecoupledSchedules,
        t: usize,
        x: &Mat,
        y: &Mat,
    ) -> (Mat, Mat) {
        let d = spec.dims;
        let mut sigma_hat = cen.sigma[t].clone();
        set_block(&mut sigma_hat, 0, 0, &dec.gamma[t]);
        set_block(&mut sigma_hat, d.n1, 0, x);
        set_block(&mut sigma_hat, 0, d.n1, &x.transpose());
        let mut p_hat_next = cen.p[t + 1].clone();
        set_block(&mut p_hat_next, d.n1, d.n1, &dec.f[t + 1]);
        set_block(&mut p_hat_next, d.n1, 0, y);
        set_block(&mut p_hat_next, 0, d.n1, &y.transpose());

        let k_of = |l21: &Mat| {
            let l_hat = assemble_l_hat(&d, &dec.m[t], l21);
            let k = k_hat_formula(spec, t, &cen.p[t + 1], &p_hat_next, &l_hat).unwrap();
            block(&k, d.u2(), d.x1())
        };
        let l_of = |k21: &Mat| {
            let k_hat = assemble_k_hat(&d, k21, &dec.j[t]);
            let l = l_hat_formula(spec, t, &cen.sigma[t], &sigma_hat, &k_hat).unwrap();
            block(&l, d.x2(), d.y1())
        };
        let nl = d.n2 * d.p1;
        let composite = |v: &Vector| vec(&l_of(&k_of(&unvec(v.as_slice(), d.n2, d.p1))));
        let c0 = composite(&Vector::zeros(nl));
        let mut lin = Mat::zeros(nl, nl);
        for i in 0..nl {
            let mut e = Vector::zeros(nl);
            e[i] = 1.0;
            lin.set_column(i, &(composite(&e) - &c0));
        }
        let l21_vec = (Mat::identity(nl, nl) - lin).lu().solve(&c0).unwrap();
        let l21 = unvec(l21_vec.as_slice(), d.n2, d.p1);
        let k21 = k_of(&l21);
        let l_hat = assemble_l_hat(&d, &dec.m[t], &l21);
        let k_hat = assemble_k_hat(&d, &k21, &dec.j[t]);
        let a = a_hat(spec, t, &k_hat, &l_hat);
        let s_next = sigma_hat_next(spec, cen, t, &sigma_hat, &a, &l_hat);
        let p_prev = p_hat_prev(spec, cen, t, &p_hat_next, &a, &k_hat);
        (block(&s_next, d.x2(), d.x1()), block(&p_prev, d.x2(), d.x1()))
    }

    #[test]
    fn assembled_system_matches_probed_full_matrix_updates() {
        let spec = random_instance(3, dims(2, 2, 1, 1, 1, 1), 4, 1.0);
        let d = spec.dims;
        let q = d.n1 * d.n2;
        let (cen, dec) = solved(&spec);
        let system = assemble_boundary_system(&spec, &cen, &dec).unwrap();

        // Probe h₁, h₂ at unit perturbations of (vec X_t, vec Y_{t+1}).
        let mut probed = Vec::new();
        for t in 0..4 {
            let eval = |xv: &Vector, yv: &Vector| {
                let (s, p) = full_matrix_stage(&spec, &cen, &dec, t, &unvec(xv.as_slice(), d.n2, d.n1), &unvec(yv.as_slice(), d.n2, d.n1));
                (vec(&s), vec(&p))
            };
            let zero = Vector::zeros(q);
            let (s0, p0) = eval(&zero, &zero);
            let mut sx = Mat::zeros(q, q);
            let mut sy = Mat::zeros(q, q);
            let mut px = Mat::zeros(q, q);
            let mut py = Mat::zeros(q, q);
            for i in 0..q {
                let mut e = Vector::zeros(q);
                e[i] = 1.0;
                let (s, p) = eval(&e, &zero);
                sx.set_column(i, &(s - &s0));
                px.set_column(i, &(p - &p0));
                let (s, p) = eval(&zero, &e);
                sy.set_column(i, &(s - &s0));
                py.set_column(i, &(p - &p0));
            }
            probed.push(StageMaps {
                lx: Mat::zeros(0, 0),
                ly: Mat::zeros(0, 0),
                l0: Vector::zeros(0),
                kx: Mat::zeros(0, 0),
                ky: Mat::zeros(0, 0),
                k0: Vector::zeros(0),
                sx,
                sy,
                s0,
                px,
                py,
                p0,
            });
        }
        let reference = assemble_from_maps(&spec, &probed);
        for (a, b) in system.lower.iter().zip(&reference.lower) {
            assert!((a - b).amax() < 1e-10, "G mismatch {}", (a - b).amax());
        }
        for (a, b) in system.upper.iter().zip(&reference.upper) {
            assert!((a - b).amax() < 1e-10, "H mismatch {}", (a - b).amax());
        }
        for (a, b) in system.rhs.iter().zip(&reference.rhs) {
            assert!((a - b).amax() < 1e-10, "c mismatch {}", (a - b).amax());
        }
    }

    fn random_system(seed: u64, horizon: usize, q: usize) -> BoundarySystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = 2 * q;
        let mut rand_block = |scale: f64| DMatrix::from_fn(b, b, |_, _| scale * (rng.gen::<f64>() - 0.5));
        let lower = (1..horizon).map(|_| rand_block(0.6)).collect();
        let upper = (1..horizon).map(|_| rand_block(0.6)).collect();
        let rhs = (0..horizon).map(|_| rand_block(2.0).column(0).into_owned()).collect();
        BoundarySystem { q, lower, upper, rhs }
    }

    #[test]
    fn identity_system_returns_rhs() {
        let v = Vector::from_vec(vec![1.0, -2.0, 3.5, 0.25]);
        let system = BoundarySystem { q: 2, lower: vec![], upper: vec![], rhs: vec![v.clone()] };
        assert_eq!(solve_block_tridiagonal(&system).unwrap(), vec![v]);
    }

    #[test]
    fn block_lu_matches_dense_solve() {
        let system = random_system(17, 3, 4);
        let eta = solve_block_tridiagonal(&system).unwrap();
        let (dense, rhs) = system.to_dense();
        let reference = dense.lu().solve(&rhs).unwrap();
        let stacked = Vector::from_iterator(reference.len(), eta.iter().flat_map(|e| e.iter().copied()));
        assert!((stacked - reference).amax() < 1e-10);
        assert!(system.residual(&eta) <= 1e-9);
    }

    #[test]
    fn homogeneous_system_has_zero_solution() {
        let mut system = random_system(4, 5, 2);
        for c in &mut system.rhs {
            c.fill(0.0);
        }
        let eta = solve_block_tridiagonal(&system).unwrap();
        assert!(eta.iter().all(|e| e.amax() == 0.0));
    }

    #[test]
    fn singular_pivot_is_reported_with_index() {
        // Row 1 pivot: I − G₁H₀ = I − I = 0.
        let b = 2;
        let system = BoundarySystem {
            q: 1,
            lower: vec![Mat::identity(b, b)],
            upper: vec![Mat::identity(b, b)],
            rhs: vec![Vector::zeros(b), Vector::zeros(b)],
        };
        assert!(matches!(solve_block_tridiagonal(&system), Err(Error::PivotFailure { block: 1 })));
    }

    #[test]
    fn decoupled_instance_recovers_block_diagonal_gains() {
        let spec = random_instance(8, dims(2, 2, 1, 1, 2, 2), 5, 0.0);
        let syn = synthesize(&spec).unwrap();
        let d = spec.dims;
        for t in 0..5 {
            assert_eq!(syn.gains.l_hat21[t].amax(), 0.0);
            assert_eq!(syn.gains.k_hat21[t].amax(), 0.0);
        }
        for m in syn.gains.sigma_hat.iter().chain(&syn.gains.p_hat) {
            assert!(block(m, d.x2(), d.x1()).amax() < 1e-14);
        }
    }

    #[test]
    fn gain_masks_are_exact_zeros() {
        for seed in 0..5 {
            let spec = random_instance(seed, dims(2, 1, 2, 1, 1, 2), 4, 1.0);
            let d = spec.dims;
            let syn = synthesize(&spec).unwrap();
            for t in 0..4 {
                assert!(syn.gains.l_hat[t].columns(d.p1, d.p2).iter().all(|&x| x == 0.0));
                assert!(syn.gains.k_hat[t].rows(0, d.m1).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn recovered_gains_satisfy_coupled_recursions() {
        let spec = random_instance(11, dims(2, 2, 1, 1, 2, 2), 5, 1.0);
        let syn = synthesize(&spec).unwrap();
        let r = recursion_residuals(&spec, &syn.centralized, &syn.gains);
        assert!(r.max() <= 1e-9, "{r:?}");
    }

    #[test]
    fn residuals_detect_perturbed_gain() {
        let spec = random_instance(11, dims(2, 2, 1, 1, 2, 2), 5, 1.0);
        let mut syn = synthesize(&spec).unwrap();
        syn.gains.k_hat[2][(1, 0)] += 1e-3;
        let r = recursion_residuals(&spec, &syn.centralized, &syn.gains);
        assert!(r.k_hat >= 1e-4, "{r:?}");
    }

    #[test]
    fn decoupled_instance_has_tiny_residuals() {
        let spec = random_instance(12, dims(2, 2, 1, 1, 2, 2), 5, 0.0);
        let syn = synthesize(&spec).unwrap();
        let r = recursion_residuals(&spec, &syn.centralized, &syn.gains);
        assert!(r.max() <= 1e-12, "{r:?}");
    }

    #[test]
    fn uninformative_second_measurement_matches_player1_only_centralized_cost() {
        let spec = random_instance(13, dims(2, 2, 1, 1, 2, 2), 5, 1.0).with_player1_measurements_only();
        let syn = synthesize(&spec).unwrap();
        for t in 0..=5 {
            assert!(rel_diff(&syn.gains.sigma_hat[t], &syn.centralized.sigma[t]) < 1e-10);
        }
        let j = syn.centralized.j0;
        assert!((syn.gains.j_hat0 - j).abs() <= 1e-8 * j);
    }

    #[test]
    fn decoupled_instance_costs_equal_sum_of_standalone_optima() {
        let spec = random_instance(14, dims(2, 2, 1, 1, 2, 2), 5, 0.0);
        let syn = synthesize(&spec).unwrap();
        let sum = solve_centralized(&spec.subsystem(Player::One)).unwrap().j0
            + solve_centralized(&spec.subsystem(Player::Two)).unwrap().j0;
        assert!((syn.centralized.j0 - sum).abs() <= 1e-9 * sum);
        assert!((syn.gains.j_hat0 - sum).abs() <= 1e-9 * sum);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn two_player_schedules_dominate_centralized(seed in 0u64..100_000, coupling in 0.0f64..=1.0) {
                let spec = random_instance(seed, dims(2, 2, 1, 1, 2, 2), 5, coupling);
                let syn = synthesize(&spec).unwrap();
                let (cen, g) = (&syn.centralized, &syn.gains);
                for t in 0..=5 {
                    let ds = &g.sigma_hat[t] - &cen.sigma[t];
                    let dp = &g.p_hat[t] - &cen.p[t];
                    prop_assert!(min_eigenvalue(&ds) >= -1e-8 * (1.0 + g.sigma_hat[t].norm()));
                    prop_assert!(min_eigenvalue(&dp) >= -1e-8 * (1.0 + g.p_hat[t].norm()));
                    prop_assert!(rel_diff(&block(&g.sigma_hat[t], 0..2, 0..2), &g.decoupled.gamma[t]) <= 1e-8);
                    prop_assert!(rel_diff(&block(&g.p_hat[t], 2..4, 2..4), &g.decoupled.f[t]) <= 1e-8);
                }
                prop_assert!(g.j_hat0 >= cen.j0 * (1.0 - 1e-12));
                let upper = solve_centralized(&spec.with_player1_measurements_only().plant).unwrap().j0;
                prop_assert!(g.j_hat0 <= upper * (1.0 + 1e-12));
            }
        }
    }
}
