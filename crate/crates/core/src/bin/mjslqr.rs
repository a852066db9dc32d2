use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mjslqr::bench;
use mjslqr::ce::{run_ce_pipeline, theory_report};
use mjslqr::model::{check_ergodic, Controller};
use mjslqr::modelfile::{self, format_float, format_matrix, load_controller, load_model};
use mjslqr::sim::{mc_cost, save_trajectory_csv, simulate_trajectory, SimOptions};
use mjslqr::solvers::{cdare_residual, cost_of_controller, solve_lqr};
use mjslqr::stability::{closed_loop, is_mss, DEFAULT_TAU_KMAX};
use mjslqr::{MjsError, Result, SolverOptions};

#[derive(Parser)]
#[command(name = "mjslqr", version, about = "LQR control of Markov jump linear systems")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative convergence tolerance of the iterative solvers.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Iteration cap of the iterative solvers.
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Decay rate used for tau and the bounds (default (1 + rho)/2).
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against every invariant.
    Validate { model: PathBuf },
    /// Solve the coupled Riccati equations and print P, the residual and J*.
    Solve { model: PathBuf },
    /// Print the optimal gains and the closed-loop spectral radius.
    Synthesize {
        model: PathBuf,
        /// Also write the gains to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certainty-equivalent report: mismatches, costs, bounds and premise slacks.
    Ce {
        #[arg(long)]
        truth: PathBuf,
        /// Nominal model; its cost section is ignored in favour of the truth's.
        #[arg(long)]
        nominal: PathBuf,
    },
    /// Monte Carlo cost estimate of a gain file on a model.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gain: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
        #[arg(long, default_value_t = 50)]
        rollouts: usize,
        /// Dump the first rollout as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run a perturbation sweep and write the CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the published experiment sizes as defaults.
        #[arg(long)]
        paper_scale: bool,
        /// Record per-trial wall-clock time.
        #[arg(long)]
        timing: bool,
    },
    /// Write plotting scripts for a sweep CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn solver_options(g: &Global) -> SolverOptions {
    let mut opts = SolverOptions::default();
    if let Some(t) = g.tol {
        opts.tol = t;
    }
    if let Some(m) = g.max_iter {
        opts.max_iter = m;
    }
    opts
}

fn print_blocks(name: &str, mats: &[mjslqr::Mat]) {
    for m in mats {
        println!("\n[[{name}]]\ndata = {}", format_matrix(m));
    }
}

fn validate(path: &PathBuf) -> Result<()> {
    let src = std::fs::read_to_string(path)?;
    match modelfile::model_from_str(&src) {
        Ok((model, _)) => {
            println!("valid: n = {}, p = {}, s = {}", model.n, model.p, model.s);
            let erg = check_ergodic(&model.t);
            if erg.is_ergodic() {
                println!("chain: ergodic");
            } else {
                println!("chain: not ergodic ({erg:?})");
            }
            Ok(())
        }
        Err(MjsError::LoadInvalid(codes)) => {
            for c in &codes {
                println!("violation: {c}");
            }
            Err(MjsError::LoadInvalid(codes))
        }
        Err(e) => Err(e),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| MjsError::InvalidArgument(e.to_string()))?;
    }
    let opts = solver_options(&cli.global);
    match cli.cmd {
        Command::Validate { model } => validate(&model)?,
        Command::Solve { model } => {
            let (model, cost) = load_model(&model)?;
            let lqr = solve_lqr(&model, &cost, &opts)?;
            println!("# coupled Riccati solution");
            println!("iterations = {}", lqr.p.iterations);
            println!("residual = {}", format_float(cdare_residual(&model, &cost, &lqr.p.x)?));
            println!("J_star = {}", format_float(lqr.j));
            print_blocks("P", &lqr.p.x);
        }
        Command::Synthesize { model, out } => {
            let (model, cost) = load_model(&model)?;
            let lqr = solve_lqr(&model, &cost, &opts)?;
            println!("# optimal mode-dependent gains");
            println!("closed_loop_rho = {}", format_float(lqr.rho));
            print_blocks("K", &lqr.k.k);
            if let Some(path) = out {
                modelfile::save_controller(&lqr.k, path)?;
            }
        }
        Command::Ce { truth, nominal } => {
            let (truth, cost) = load_model(&truth)?;
            let (nominal, _) = load_model(&nominal)?;
            let report = run_ce_pipeline(&truth, &nominal, &cost, &opts)?;
            let th = theory_report(&truth, &nominal, &cost, &report, cli.global.gamma, DEFAULT_TAU_KMAX)?;
            println!("# certainty-equivalent report");
            println!("epsilon = {}", format_float(th.levels.epsilon));
            println!("eta = {}", format_float(th.levels.eta));
            println!("J_star = {}", format_float(report.j_star));
            println!("p_mismatch = {}", format_float(report.p_mismatch));
            println!("delta_P = {}", format_float(report.delta_p));
            println!("gain_mismatch = {}", format_float(report.gain_mismatch));
            println!("rho_true_under_K_hat = {}", format_float(report.rho_hat));
            println!("stabilizes_true = {}", report.stabilizes_true);
            match report.costs {
                Some(c) => {
                    println!("J_hat = {}", format_float(c.j_hat));
                    println!("gap = {}", format_float(c.gap));
                    println!("gap_direct = {}", format_float(c.gap_direct));
                    println!("delta_J = {}", format_float(c.relative_gap));
                }
                None => println!("J_hat = \"UNSTABLE\""),
            }
            println!("\n[theory]");
            println!("rho_star = {}", format_float(th.rho_star));
            println!("gamma = {}", format_float(th.tau.gamma));
            println!("tau = {}", format_float(th.tau.tau));
            println!("tau_converged = {}", th.tau.converged);
            let c = &th.constants;
            for (k, v) in [
                ("xi", c.xi),
                ("C_eps", c.c_eps),
                ("C_eps_u", c.c_eps_u),
                ("C_eta", c.c_eta),
                ("C_eta_u", c.c_eta_u),
                ("Gamma_star", c.gamma_star),
            ] {
                println!("{k} = {}", format_float(v));
            }
            let pr = &th.premises;
            println!("premises_pass = {}", pr.pass);
            println!("eps_thresholds = [{}]", pr.eps_thresholds.map(format_float).join(", "));
            println!("eps_slack = [{}]", pr.eps_slack.map(format_float).join(", "));
            println!("eta_threshold = {}", format_float(pr.eta_threshold));
            println!("eta_slack = {}", format_float(pr.eta_slack));
            println!("p_bound = {}", format_float(th.p_bound.value));
            println!("p_bound_status = \"{}\"", if th.p_bound.guaranteed { "GUARANTEED" } else { "NOT_GUARANTEED" });
            println!("f = {}", format_float(th.f));
            println!("f_source = \"{}\"", if th.f_is_measured { "measured" } else { "p_bound" });
            match th.gain_bound {
                Some(v) => println!("gain_bound = {}", format_float(v)),
                None => println!("gain_bound = \"HYPOTHESIS_VIOLATION\""),
            }
            println!("gap_bound = {}", format_float(th.gap_bound.value));
            println!("gap_bound_status = \"{}\"", if th.gap_bound.guaranteed { "GUARANTEED" } else { "NOT_GUARANTEED" });
        }
        Command::Simulate { model, gain, horizon, rollouts, trajectory } => {
            let (model, cost) = load_model(&model)?;
            let k: Controller = load_controller(&gain)?;
            let seed = cli.global.seed.unwrap_or(0);
            let sim = SimOptions::default();
            if let Some(path) = trajectory {
                save_trajectory_csv(&simulate_trajectory(&model, &cost, &k, horizon, seed, &sim)?, path)?;
            }
            let verdict = is_mss(&closed_loop(&model, &k)?, &model.t)?;
            println!("closed_loop_rho = {}", format_float(verdict.rho));
            if verdict.stable {
                println!("J_closed_form = {}", format_float(cost_of_controller(&model, &cost, &k)?.j));
            }
            let est = mc_cost(&model, &cost, &k, horizon, rollouts, seed, &sim)?;
            println!("J_mc = {}", format_float(est.mean));
            println!("stderr = {}", format_float(est.stderr));
            println!("rollouts = {}", est.rollouts);
            println!("overflowed = {}", est.overflowed);
            println!("horizon = {}", est.horizon);
            println!("burn_in = {}", est.burn_in);
        }
        Command::Sweep { config, out, paper_scale, timing } => {
            let mut cfg = bench::load_config(&config, paper_scale)?;
            if let Some(s) = cli.global.seed {
                cfg.seed = s;
            }
            cfg.solver = SolverOptions { tol: opts.tol, max_iter: opts.max_iter, ..cfg.solver };
            cfg.timing |= timing;
            let recs = bench::run_sweep(&cfg, Some(&out))?;
            let trials = recs.iter().filter(|r| matches!(r.trial, bench::TrialLabel::Index(_)));
            let (mut total, mut stable) = (0, 0);
            for r in trials {
                total += 1;
                stable += r.is_stabilized() as usize;
            }
            println!("wrote {} ({total} trials, {stable} stabilized)", out.display());
            for &mode in &cfg.modes {
                for &s in &cfg.s_list {
                    let agg = |label: bench::TrialLabel, f: fn(&bench::SweepRecord) -> f64| -> Vec<f64> {
                        recs.iter().filter(|r| r.mode == mode && r.s == s && r.trial == label).map(f).collect()
                    };
                    let lv = agg(bench::TrialLabel::Max, |r| r.level);
                    let dp = agg(bench::TrialLabel::Max, |r| r.delta_p);
                    let dj = agg(bench::TrialLabel::Median, |r| r.delta_j);
                    println!(
                        "{} s={s}: slope(max delta_P) = {:.3}, slope(median delta_J) = {:.3}",
                        mode.as_str(),
                        bench::loglog_slope(&lv, &dp),
                        bench::loglog_slope(&lv, &dj)
                    );
                }
            }
        }
        Command::Plot { csv, out } => {
            let res = bench::emit_plots(&csv, &out)?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            for s in &res.scripts {
                println!("{}", s.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["mjslqr", "solve", "m.toml", "--tol", "1e-9", "--threads", "2"]).unwrap();
        assert_eq!(cli.global.tol, Some(1e-9));
        assert_eq!(cli.global.threads, Some(2));
    }
}
