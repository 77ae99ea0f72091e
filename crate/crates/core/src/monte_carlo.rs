//! Closed-loop rollouts under the exact noise model, cost estimation and
//! empirical belief-error statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centralized::CentralizedSolution;
use crate::controller::LinearController;
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, rel_diff, serde_mats, serde_vectors, Mat, Vector};
use crate::problem::ProblemSpec;
use crate::synthesis::TwoPlayerGains;

/// Rollouts per work unit. Fixed so that results do not depend on the
/// number of threads.
const CHUNK: usize = 256;

/// Square roots of the initial-state and per-stage joint noise covariances.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    init_root: Mat,
    stage_roots: Vec<Mat>,
    weights: Vec<Mat>,
}

impl NoiseModel {
    pub fn new(spec: &ProblemSpec) -> Self {
        let plant = &spec.plant;
        NoiseModel {
            init_root: psd_sqrt(&plant.sigma_init),
            stage_roots: plant.noise.iter().map(|nz| psd_sqrt(&nz.joint())).collect(),
            weights: plant.cost.iter().map(|c| c.joint()).collect(),
        }
    }

    fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vector {
        Vector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
    }

    pub fn sample_initial(&self, mu: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        mu + &self.init_root * Self::gaussian(rng, mu.len())
    }

    /// Draws `(w_t, v_t)` jointly.
    pub fn sample_stage(&self, t: usize, n: usize, rng: &mut ChaCha8Rng) -> (Vector, Vector) {
        let root = &self.stage_roots[t];
        let draw = root * Self::gaussian(rng, root.nrows());
        let p = root.nrows() - n;
        (draw.rows(0, n).into_owned(), draw.rows(n, p).into_owned())
    }
}

/// One closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `T + 1` states.
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub y: Vec<Vector>,
    /// `T + 1` estimates each.
    pub z: Vec<Vector>,
    pub zhat: Vec<Vector>,
    pub cost: f64,
}

fn run(spec: &ProblemSpec, controller: &LinearController, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Result<Rollout> {
    let plant = &spec.plant;
    let (n, horizon) = (plant.n(), plant.horizon);
    if controller.horizon() != horizon || controller.dims != spec.dims {
        return Err(Error::Dimension(format!(
            "controller horizon {} does not match problem horizon {horizon}",
            controller.horizon()
        )));
    }
    let mut x = noise.sample_initial(&plant.mu_init, rng);
    let mut state = controller.initial_state(spec);
    let mut out = Rollout {
        x: Vec::with_capacity(horizon + 1),
        u: Vec::with_capacity(horizon),
        y: Vec::with_capacity(horizon),
        z: vec![state.z.clone()],
        zhat: vec![state.zhat.clone()],
        cost: 0.0,
    };
    for t in 0..horizon {
        let dy = &plant.dynamics[t];
        let (w, v) = noise.sample_stage(t, n, rng);
        let y = &dy.c * &x + v;
        let (u, next) = controller.step(spec, &state, &y)?;
        let xu = Vector::from_iterator(n + u.len(), x.iter().chain(u.iter()).copied());
        out.cost += xu.dot(&(&noise.weights[t] * &xu));
        let x_next = &dy.a * &x + &dy.b * &u + w;
        out.x.push(std::mem::replace(&mut x, x_next));
        out.u.push(u);
        out.y.push(y);
        out.z.push(next.z.clone());
        out.zhat.push(next.zhat.clone());
        state = next;
    }
    out.cost += x.dot(&(&plant.p_final * &x));
    out.x.push(x);
    Ok(out)
}

/// Samples one rollout from `seed`. Deterministic in the seed.
pub fn sample_rollout(spec: &ProblemSpec, controller: &LinearController, seed: u64) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run(spec, controller, &NoiseModel::new(spec), &mut rng)
}

/// Generator for rollout `index` of a run with master seed `seed`.
fn rollout_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimulationOptions {
    /// Worker threads; 0 picks the rayon default.
    pub threads: usize,
    /// Keep every trajectory in the report.
    pub retain_trajectories: bool,
}

impl SimulationOptions {
    /// Reads the thread cap from `DECLQG_THREADS` (unset or unparsable means 0).
    pub fn from_env() -> Self {
        let threads = std::env::var("DECLQG_THREADS").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0);
        SimulationOptions { threads, retain_trajectories: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub rollouts: usize,
    pub mean_cost: f64,
    pub standard_error: f64,
    /// Sample covariance of `x_t − z_t`, `t = 0..=T`.
    #[serde(with = "serde_mats")]
    pub cov_error_z: Vec<Mat>,
    /// Sample covariance of `x_t − ẑ_t`, `t = 0..=T`.
    #[serde(with = "serde_mats")]
    pub cov_error_zhat: Vec<Mat>,
    #[serde(with = "serde_vectors")]
    pub mean_error_z: Vec<Vector>,
    #[serde(with = "serde_vectors")]
    pub mean_error_zhat: Vec<Vector>,
    pub seed: u64,
    pub controller: String,
    #[serde(skip)]
    pub trajectories: Option<Vec<Rollout>>,
}

/// Pairwise summation.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// First and second moments of the estimation errors.
#[derive(Clone)]
struct ErrorMoments {
    sum: Vec<Vector>,
    outer: Vec<Mat>,
}

impl ErrorMoments {
    fn new(steps: usize, n: usize) -> Self {
        ErrorMoments { sum: vec![Vector::zeros(n); steps], outer: vec![Mat::zeros(n, n); steps] }
    }

    fn add(&mut self, x: &[Vector], est: &[Vector]) {
        for (t, (xt, et)) in x.iter().zip(est).enumerate() {
            let e = xt - et;
            self.outer[t].ger(1.0, &e, &e, 1.0);
            self.sum[t] += e;
        }
    }

    fn merge(&mut self, other: &ErrorMoments) {
        for t in 0..self.sum.len() {
            self.sum[t] += &other.sum[t];
            self.outer[t] += &other.outer[t];
        }
    }

    fn finish(&self, count: usize) -> (Vec<Vector>, Vec<Mat>) {
        let nf = count as f64;
        let means: Vec<Vector> = self.sum.iter().map(|s| s / nf).collect();
        let covs = self
            .outer
            .iter()
            .zip(&means)
            .map(|(o, m)| {
                let c = (o - m * m.transpose() * nf) / (nf - 1.0);
                (&c + c.transpose()) * 0.5
            })
            .collect();
        (means, covs)
    }
}

struct ChunkResult {
    costs: Vec<f64>,
    z: ErrorMoments,
    zhat: ErrorMoments,
    trajectories: Vec<Rollout>,
}

/// Runs `rollouts` independent rollouts and aggregates cost and
/// belief-error statistics. Rollout `i` draws from stream `i` of the
/// master seed, so the report is independent of the thread count.
pub fn estimate_cost(
    spec: &ProblemSpec,
    controller: &LinearController,
    rollouts: usize,
    seed: u64,
    options: &SimulationOptions,
) -> Result<SimulationReport> {
    if rollouts < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 rollouts, got {rollouts}")));
    }
    let noise = NoiseModel::new(spec);
    let (n, steps) = (spec.plant.n(), spec.horizon() + 1);
    let chunks: Vec<(usize, usize)> = (0..rollouts).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(rollouts))).collect();
    let work = |&(start, end): &(usize, usize)| -> Result<ChunkResult> {
        let mut res = ChunkResult {
            costs: Vec::with_capacity(end - start),
            z: ErrorMoments::new(steps, n),
            zhat: ErrorMoments::new(steps, n),
            trajectories: Vec::new(),
        };
        for i in start..end {
            let mut rng = rollout_rng(seed, i as u64);
            let r = run(spec, controller, &noise, &mut rng)?;
            res.costs.push(r.cost);
            res.z.add(&r.x, &r.z);
            res.zhat.add(&r.x, &r.zhat);
            if options.retain_trajectories {
                res.trajectories.push(r);
            }
        }
        Ok(res)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<ChunkResult> = pool.install(|| chunks.par_iter().map(work).collect::<Result<_>>())?;

    let mut costs = Vec::with_capacity(rollouts);
    let mut z = ErrorMoments::new(steps, n);
    let mut zhat = ErrorMoments::new(steps, n);
    let mut trajectories = Vec::new();
    for r in results {
        costs.extend_from_slice(&r.costs);
        z.merge(&r.z);
        zhat.merge(&r.zhat);
        trajectories.extend(r.trajectories);
    }
    let nf = rollouts as f64;
    let mean = pairwise_sum(&costs) / nf;
    let squares: Vec<f64> = costs.iter().map(|c| (c - mean).powi(2)).collect();
    let variance = pairwise_sum(&squares) / (nf - 1.0);
    let (mean_error_z, cov_error_z) = z.finish(rollouts);
    let (mean_error_zhat, cov_error_zhat) = zhat.finish(rollouts);
    Ok(SimulationReport {
        rollouts,
        mean_cost: mean,
        standard_error: (variance / nf).sqrt(),
        cov_error_z,
        cov_error_zhat,
        mean_error_z,
        mean_error_zhat,
        seed,
        controller: controller.label().to_string(),
        trajectories: options.retain_trajectories.then_some(trajectories),
    })
}

/// Deviation of the empirical belief-error statistics from their laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeliefDeviation {
    /// `max_t ‖emp-cov(x−z) − Σ_t‖ / (1 + ‖Σ_t‖)`.
    pub sigma: f64,
    /// Same for `x − ẑ` against `Σ̂_t`.
    pub sigma_hat: f64,
    /// `max_t ‖mean(x−z)‖_∞`.
    pub mean_z: f64,
    pub mean_zhat: f64,
    /// Largest `|mean| / stderr` over all components and times.
    pub mean_z_score: f64,
}

/// Compares a report with `Σ_t` and `Σ̂_t`. Without `gains`, the `ẑ`
/// errors are compared against `Σ_t`.
pub fn empirical_beliefs(
    report: &SimulationReport,
    centralized: &CentralizedSolution,
    gains: Option<&TwoPlayerGains>,
) -> BeliefDeviation {
    let targets_hat = gains.map_or(&centralized.sigma, |g| &g.sigma_hat);
    let worst = |emp: &[Mat], law: &[Mat]| emp.iter().zip(law).map(|(e, l)| rel_diff(e, l)).fold(0.0, f64::max);
    let max_mean = |ms: &[Vector]| ms.iter().map(|m| m.amax()).fold(0.0, f64::max);
    let nf = report.rollouts as f64;
    let mut score = 0.0_f64;
    for (means, covs) in [(&report.mean_error_z, &report.cov_error_z), (&report.mean_error_zhat, &report.cov_error_zhat)] {
        for (m, c) in means.iter().zip(covs) {
            for i in 0..m.len() {
                let se = (c[(i, i)] / nf).sqrt();
                if se > 0.0 {
                    score = score.max(m[i].abs() / se);
                } else if m[i] != 0.0 {
                    score = f64::INFINITY;
                }
            }
        }
    }
    BeliefDeviation {
        sigma: worst(&report.cov_error_z, &centralized.sigma),
        sigma_hat: worst(&report.cov_error_zhat, targets_hat),
        mean_z: max_mean(&report.mean_error_z),
        mean_zhat: max_mean(&report.mean_error_zhat),
        mean_z_score: score,
    }
}
