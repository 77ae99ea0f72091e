//! The `declqg` command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{bench_horizons, doubling_ratio};
use crate::controller::LinearController;
use crate::gains_file::GainsFile;
use crate::linalg::max_abs;
use crate::monte_carlo::{estimate_cost, SimulationOptions};
use crate::oracles::{disturbance_feedback_optimum, evaluate_policy_cost, fixed_point_gains, pbp_perturbation_check, FixedPointOutcome};
use crate::problem::{load_spec, random_instance, save_spec, validate, BlockDims, ProblemSpec};
use crate::synthesis::{synthesize, recursion_residuals, Synthesis};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
pub const EXIT_SCALING: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "declqg", version, about = "Optimal two-player partially nested LQG synthesis and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the optimal gains and write them to a gains file.
    Synth(SynthArgs),
    /// Estimate the closed-loop cost by Monte Carlo simulation.
    Simulate(SimulateArgs),
    /// Run independent optimality oracles.
    Verify(VerifyArgs),
    /// Time synthesis over a list of horizons.
    Bench(BenchArgs),
    /// Write a random problem instance.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Tridiag,
    Fixedpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    Qp,
    Fixedpoint,
    Perturb,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerChoice {
    TwoPlayer,
    Centralized,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tridiag")]
    pub method: Method,
    /// Fixed-point stopping tolerance on the gain change.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Gains file; synthesized on the fly when omitted.
    #[arg(long)]
    pub gains: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(2..))]
    pub rollouts: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "two-player")]
    pub controller: ControllerChoice,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Gains to verify; synthesized on the fly when omitted.
    #[arg(long)]
    pub gains: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub oracle: Oracle,
    /// Fixed-point stopping tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Relative tolerance for the convex-program comparison.
    #[arg(long, default_value_t = 1e-6)]
    pub qp_tol: f64,
    /// Max-norm tolerance for the fixed-point gain comparison.
    #[arg(long, default_value_t = 1e-7)]
    pub gain_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizons: Vec<u64>,
    #[arg(long)]
    pub assert_linear: bool,
    /// Block sizes `n1,n2,m1,m2,p1,p2`.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "2,2,1,1,2,2")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Block sizes `n1,n2,m1,m2,p1,p2`.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1,1,1,1")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizon: u64,
    /// Scale of the cross couplings; 0 decouples the players.
    #[arg(long, default_value_t = 1.0)]
    pub coupling: f64,
    /// Strip Player 2's measurements of all information.
    #[arg(long)]
    pub uninformative_y2: bool,
}

/// An error paired with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    error: anyhow::Error,
}

type CmdResult = std::result::Result<i32, Failure>;

fn code_for(err: &Error) -> i32 {
    match err {
        Error::SingularInnovation { .. }
        | Error::SingularHessian { .. }
        | Error::EliminationSingular { .. }
        | Error::PivotFailure { .. }
        | Error::Consistency { .. } => EXIT_SOLVER,
        _ => EXIT_INVALID,
    }
}

fn fail(code: i32, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn lib<T>(result: crate::Result<T>, context: impl FnOnce() -> String) -> std::result::Result<T, Failure> {
    result.map_err(|e| {
        let code = code_for(&e);
        fail(code, anyhow::Error::new(e).context(context()))
    })
}

fn load_problem(path: &Path) -> std::result::Result<ProblemSpec, Failure> {
    let spec = lib(load_spec(path), || format!("reading problem {}", path.display()))?;
    Ok(lib(validate(spec), || format!("validating problem {}", path.display()))?.into_inner())
}

fn load_gains(path: &Path, spec: &ProblemSpec) -> std::result::Result<GainsFile, Failure> {
    let gains = lib(GainsFile::load(path), || format!("reading gains {}", path.display()))?;
    lib(gains.check_against(spec), || format!("gains {} do not belong to the problem", path.display()))?;
    Ok(gains)
}

fn solve(spec: &ProblemSpec) -> std::result::Result<Synthesis, Failure> {
    lib(synthesize(spec), || "synthesis failed".to_string())
}

fn dims_from(values: &[usize]) -> std::result::Result<BlockDims, Failure> {
    let [n1, n2, m1, m2, p1, p2] = values else {
        return Err(fail(EXIT_USAGE, anyhow!("--dims needs six sizes n1,n2,m1,m2,p1,p2")));
    };
    BlockDims::new(*n1, *n2, *m1, *m2, *p1, *p2).map_err(|e| fail(EXIT_USAGE, e.into()))
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let spec = load_problem(&args.problem)?;
    let syn = match args.method {
        Method::Tridiag => solve(&spec)?,
        Method::Fixedpoint => {
            let centralized = lib(crate::centralized::solve_centralized(&spec.plant), || "centralized recursions failed".into())?;
            match lib(fixed_point_gains(&spec, &centralized, args.tol, args.max_iter), || "fixed point failed".into())? {
                FixedPointOutcome::Converged { gains, iterations } => {
                    println!("fixed point converged in {iterations} iteration(s)");
                    Synthesis { centralized, gains: *gains }
                }
                FixedPointOutcome::NonConvergence { iterations, last_change } => {
                    return Err(fail(
                        EXIT_SOLVER,
                        anyhow!("NonConvergence: fixed point did not converge in {iterations} iteration(s), last change {last_change:e}"),
                    ));
                }
            }
        }
    };
    let residuals = recursion_residuals(&spec, &syn.centralized, &syn.gains);
    println!("J0       = {:.12e}", syn.centralized.j0);
    println!("JHat0    = {:.12e}", syn.gains.j_hat0);
    println!(
        "residual = {:.3e} (Sigma_hat {:.1e}, L_hat {:.1e}, P_hat {:.1e}, K_hat {:.1e})",
        residuals.max(),
        residuals.sigma_hat,
        residuals.l_hat,
        residuals.p_hat,
        residuals.k_hat
    );
    if let Some(out) = &args.out {
        lib(GainsFile::from_synthesis(&spec, &syn).save(out), || format!("writing {}", out.display()))?;
        println!("gains written to {}", out.display());
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let spec = load_problem(&args.problem)?;
    let file = match &args.gains {
        Some(path) => load_gains(path, &spec)?,
        None => GainsFile::from_synthesis(&spec, &solve(&spec)?),
    };
    let (controller, reference, name) = match args.controller {
        ControllerChoice::TwoPlayer => (lib(file.controller(), || "gains violate the information structure".into())?, file.j_hat0, "JHat0"),
        ControllerChoice::Centralized => (
            LinearController {
                kind: crate::controller::ControllerKind::Centralized,
                dims: file.dims,
                k: file.k.clone(),
                l: file.l.clone(),
                k_hat: file.k.clone(),
                l_hat: file.l.clone(),
            },
            file.j0,
            "J0",
        ),
    };
    let options = SimulationOptions::from_env();
    let report = lib(estimate_cost(&spec, &controller, args.rollouts as usize, args.seed, &options), || "simulation failed".into())?;
    println!("controller = {}", report.controller);
    println!("rollouts   = {}", report.rollouts);
    println!("mean cost  = {:.9e} +/- {:.3e}", report.mean_cost, report.standard_error);
    let z = (report.mean_cost - reference).abs() / report.standard_error;
    println!("|mean - {name}|/stderr = {z:.3}");
    if let Some(out) = &args.out {
        let text = serde_json::to_string_pretty(&report).context("serializing report").map_err(|e| fail(EXIT_INVALID, e))?;
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display())).map_err(|e| fail(EXIT_INVALID, e))?;
        println!("report written to {}", out.display());
    }
    Ok(EXIT_OK)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_verify(args: &VerifyArgs) -> CmdResult {
    let spec = load_problem(&args.problem)?;
    let centralized = lib(crate::centralized::solve_centralized(&spec.plant), || "centralized recursions failed".into())?;
    let (controller, claimed) = match &args.gains {
        Some(path) => {
            let file = load_gains(path, &spec)?;
            (lib(file.controller(), || "gains violate the information structure".into())?, file.j_hat0)
        }
        None => {
            let syn = solve(&spec)?;
            (LinearController::two_player(spec.dims, &syn.centralized, &syn.gains), syn.gains.j_hat0)
        }
    };
    let want = |o: Oracle| args.oracle == o || args.oracle == Oracle::All;
    let mut all_pass = true;
    let evaluated = evaluate_policy_cost(&spec, &controller);
    println!("evaluated cost of gains = {evaluated:.12e} (claimed JHat0 {claimed:.12e})");

    if want(Oracle::Qp) {
        let opt = disturbance_feedback_optimum(&spec);
        if opt.ill_conditioned {
            eprintln!("warning: IllConditioned normal equations (condition {:.2e})", opt.condition);
        }
        let rel = (opt.cost - evaluated).abs() / (1.0 + opt.cost.abs());
        let rel_claim = (opt.cost - claimed).abs() / (1.0 + opt.cost.abs());
        let ok = rel <= args.qp_tol && rel_claim <= args.qp_tol;
        all_pass &= ok;
        println!(
            "[{}] qp: optimum {:.12e}, |opt - cost|/(1+opt) = {rel:.2e}, |opt - JHat0|/(1+opt) = {rel_claim:.2e} (tol {:.0e}, {} variables)",
            verdict(ok),
            opt.cost,
            args.qp_tol,
            opt.decision_variables
        );
    }
    if want(Oracle::Fixedpoint) {
        match lib(fixed_point_gains(&spec, &centralized, args.tol, args.max_iter), || "fixed point failed".into())? {
            FixedPointOutcome::Converged { gains, iterations } => {
                let dk = gains.k_hat.iter().zip(&controller.k_hat).map(|(a, b)| max_abs(&(a - b))).fold(0.0, f64::max);
                let dl = gains.l_hat.iter().zip(&controller.l_hat).map(|(a, b)| max_abs(&(a - b))).fold(0.0, f64::max);
                let ok = dk.max(dl) <= args.gain_tol;
                all_pass &= ok;
                println!(
                    "[{}] fixedpoint: converged in {iterations} iteration(s), max |dK_hat| = {dk:.2e}, max |dL_hat| = {dl:.2e} (tol {:.0e})",
                    verdict(ok),
                    args.gain_tol
                );
            }
            FixedPointOutcome::NonConvergence { iterations, last_change } => {
                eprintln!("warning: fixed point inconclusive");
                println!("[INCONCLUSIVE] fixedpoint: NonConvergence after {iterations} iteration(s), last change {last_change:.2e}");
            }
        }
    }
    if want(Oracle::Perturb) {
        let rep = pbp_perturbation_check(&spec, &controller, args.eps, args.trials, args.seed);
        let limit = 1e-10 * (1.0 + rep.baseline.abs());
        let ok = rep.max_decrease <= limit;
        all_pass &= ok;
        println!(
            "[{}] perturb: max decrease {:.2e} (player 1 {:.2e}, player 2 {:.2e}) over {} trials each at eps {:.0e} (limit {limit:.1e})",
            verdict(ok),
            rep.max_decrease,
            rep.max_decrease_player1,
            rep.max_decrease_player2,
            rep.trials,
            args.eps
        );
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_ORACLE })
}

fn cmd_bench(args: &BenchArgs) -> CmdResult {
    let dims = dims_from(&args.dims)?;
    let horizons: Vec<usize> = args.horizons.iter().map(|&h| h as usize).collect();
    let rows = lib(bench_horizons(dims, &horizons, args.seed, args.repeats as usize), || "benchmark failed".into())?;
    println!("{:>8} {:>14} {:>16} {:>10}", "T", "synth [s]", "centralized [s]", "residual");
    for r in &rows {
        println!("{:>8} {:>14.6} {:>16.6} {:>10.2e}", r.horizon, r.synth_seconds, r.centralized_seconds, r.residual);
    }
    if args.assert_linear {
        if let Some(ratio) = doubling_ratio(&rows) {
            println!("time(2T)/time(T) for the largest pair = {ratio:.3}");
            if ratio > 2.5 {
                return Err(fail(EXIT_SCALING, anyhow!("scaling assertion failed: ratio {ratio:.3} > 2.5")));
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_generate(args: &GenerateArgs) -> CmdResult {
    let dims = dims_from(&args.dims)?;
    let mut spec = random_instance(args.seed, dims, args.horizon as usize, args.coupling);
    if args.uninformative_y2 {
        spec = spec.with_player1_measurements_only();
    }
    lib(save_spec(&spec, &args.out), || format!("writing {}", args.out.display()))?;
    println!("problem written to {}", args.out.display());
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            code
        }
    }
}
