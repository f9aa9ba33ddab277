//! Command-line front end: solve a single OCP, run the closed loop, schedule
//! the block matvec, or print the hardware report.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
//! All output files are written only after the computation finished, so a
//! failed run never leaves partial results behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use nmpcsolve::config::{RunConfig, SchedulerKind};
use nmpcsolve::error::Error;
use nmpcsolve::hwmodel::{matvec_latency, memory_footprint, tradeoff_sweep};
use nmpcsolve::ipm::{ipm_solve, IpmResult, MinresKktSolver};
use nmpcsolve::sched::{schedule_bnb, schedule_greedy, Schedule, ScheduleMethod};
use nmpcsolve::simloop::closed_loop;

#[derive(Parser)]
#[command(name = "nmpcsolve", version, about = "Structure-exploiting NMPC solver")]
struct Cli {
    /// JSON run configuration; defaults apply for every omitted key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for the measurement-noise generator.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Print per-iteration / per-step progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one OCP instance and write the iteration log and solution.
    Solve,
    /// Run the closed-loop crane simulation and write the trace.
    Simulate,
    /// Schedule the stage-block MAC operations and write the issue order.
    Schedule,
    /// Write the latency/memory hardware report.
    HwReport,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };

    match cli.cmd {
        Cmd::Solve => cmd_solve(cli, &cfg),
        Cmd::Simulate => cmd_simulate(cli, &cfg),
        Cmd::Schedule => cmd_schedule(cli, &cfg),
        Cmd::HwReport => cmd_hw_report(cli, &cfg),
    }
}

fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<(), Error> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn iterations_csv(result: &IpmResult) -> String {
    let mut s = String::from("iter,mu,alpha,r_eq_inf,r_dual_inf,compl,minres_relres\n");
    for r in &result.log {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iter, r.mu, r.alpha, r.r_eq_inf, r.r_dual_inf, r.compl, r.minres_relres
        ));
    }
    s
}

fn cmd_solve(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let (nlp, pattern) = cfg.build_problem()?;
    let solver = MinresKktSolver(cfg.ipm.minres.clone());
    let result = ipm_solve(&nlp, &pattern, &cfg.ipm, &solver, None)?;

    if cli.verbose {
        for r in &result.log {
            eprintln!(
                "iter {:2}  mu {:9.3e}  alpha {:.4}  r_eq {:9.3e}  r_dual {:9.3e}  compl {:9.3e}",
                r.iter, r.mu, r.alpha, r.r_eq_inf, r.r_dual_inf, r.compl
            );
        }
    }

    // Stage trajectory: states for k = 0..=N, inputs for k = 0..N-1 (the
    // terminal row leaves the input columns empty).
    let layout = nlp.layout;
    let mut solution = String::from("k,x_c,v_c,x_l,v_l,theta,theta_dot,u_c,u_l\n");
    for k in 0..=layout.horizon {
        let xo = layout.x_offset(k);
        let x: Vec<String> = (0..layout.n).map(|i| result.theta[xo + i].to_string()).collect();
        if k < layout.horizon {
            let uo = layout.u_offset(k);
            let u: Vec<String> = (0..layout.m).map(|i| result.theta[uo + i].to_string()).collect();
            solution.push_str(&format!("{k},{},{}\n", x.join(","), u.join(",")));
        } else {
            solution.push_str(&format!("{k},{},,\n", x.join(",")));
        }
    }

    let summary = serde_json::json!({
        "horizon": layout.horizon,
        "t_s": cfg.problem.t_s,
        "tableau": cfg.problem.tableau,
        "n_theta": layout.n_theta(),
        "n_kkt": pattern.n_total(),
        "iterations": result.log.len(),
        "r_eq_inf": result.r_eq_inf,
        "r_dual_inf": result.r_dual_inf,
        "compl": result.compl,
    });

    write_outputs(
        &cli.out,
        &[
            ("iterations.csv", iterations_csv(&result)),
            ("solution.csv", solution),
            ("summary.json", format!("{:#}\n", summary)),
        ],
    )?;
    println!(
        "solved N={} in {} iterations: r_eq {:.3e}, r_dual {:.3e}, compl {:.3e}",
        layout.horizon,
        result.log.len(),
        result.r_eq_inf,
        result.r_dual_inf,
        result.compl
    );
    Ok(())
}

fn cmd_simulate(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let sim = cfg.sim_config(cli.seed);
    let trace = closed_loop(&sim)?;

    if cli.verbose {
        for r in &trace.rows {
            eprintln!(
                "t {:6.2}  x_c {:+.4}  x_l {:+.4}  theta {:+.4}  u ({:+.4}, {:+.4})",
                r.t, r.x[0], r.x[2], r.x[4], r.u[0], r.u[1]
            );
        }
    }

    let settle = trace.settling_time(0.05);
    let summary = serde_json::json!({
        "t_sim": sim.t_sim,
        "t_s": sim.t_s,
        "horizon": sim.horizon,
        "seed": cli.seed,
        "noise_std": sim.noise_std,
        "estimator": sim.estimator,
        "steps": trace.rows.len(),
        "settling_time": settle,
        "max_input": trace.max_input(),
        "final_terminal_residual": trace.final_terminal_residual(),
        "closed_loop_cost": trace.closed_loop_cost(sim.t_s),
    });

    write_outputs(
        &cli.out,
        &[
            ("trace.csv", trace.to_csv()),
            ("summary.json", format!("{:#}\n", summary)),
        ],
    )?;
    match settle {
        Some(t) => println!(
            "simulated {:.1} s: settled at {:.2} s, max |u| = {:.4}",
            sim.t_sim,
            t,
            trace.max_input()
        ),
        None => println!(
            "simulated {:.1} s: not settled, max |u| = {:.4}",
            sim.t_sim,
            trace.max_input()
        ),
    }
    Ok(())
}

fn run_scheduler(cfg: &RunConfig, ops: &[(usize, usize)]) -> Schedule {
    match cfg.hw.scheduler {
        SchedulerKind::Greedy => schedule_greedy(ops),
        SchedulerKind::BranchAndBound => {
            schedule_bnb(ops, Duration::from_millis(cfg.hw.bnb_time_limit_ms))
        }
    }
}

fn method_name(m: ScheduleMethod) -> &'static str {
    match m {
        ScheduleMethod::Greedy => "greedy",
        ScheduleMethod::BranchAndBound => "branch_and_bound",
        ScheduleMethod::Exhaustive => "exhaustive",
    }
}

fn cmd_schedule(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let (_, pattern) = cfg.build_problem()?;
    let ops = pattern.stage_matvec_ops();
    let greedy = schedule_greedy(&ops);
    let schedule = match cfg.hw.scheduler {
        SchedulerKind::Greedy => greedy.clone(),
        SchedulerKind::BranchAndBound => {
            schedule_bnb(&ops, Duration::from_millis(cfg.hw.bnb_time_limit_ms))
        }
    };
    let ii = schedule.initiation_interval(cfg.hw.l_add);

    if cli.verbose {
        eprintln!(
            "{} ops, method {}, d* = {}, II = {}",
            ops.len(),
            method_name(schedule.method),
            schedule.d_star,
            ii
        );
    }

    let mut sched_csv = String::from("slot,row,col\n");
    for (t, &(r, c)) in schedule.order.iter().enumerate() {
        sched_csv.push_str(&format!("{t},{r},{c}\n"));
    }

    let summary = serde_json::json!({
        "n_ops": ops.len(),
        "method": method_name(schedule.method),
        "optimal": schedule.optimal,
        "d_star": schedule.d_star,
        "greedy_d_star": greedy.d_star,
        "l_add": cfg.hw.l_add,
        "initiation_interval": ii,
    });

    write_outputs(
        &cli.out,
        &[
            ("schedule.csv", sched_csv),
            ("pattern.csv", pattern.to_csv()),
            ("summary.json", format!("{:#}\n", summary)),
        ],
    )?;
    println!(
        "scheduled {} MAC ops ({}): d* = {}, II = {}",
        ops.len(),
        method_name(schedule.method),
        schedule.d_star,
        ii
    );
    Ok(())
}

fn cmd_hw_report(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    let (_, pattern) = cfg.build_problem()?;
    let ops = pattern.stage_matvec_ops();
    let schedule = run_scheduler(cfg, &ops);
    let hw = cfg.hw_config();
    let latency = matvec_latency(&pattern, schedule.d_star, &hw);
    let memory = memory_footprint(&pattern);
    let sweep = tradeoff_sweep(&pattern, schedule.d_star, &hw, 1..=pattern.n_blocks());

    let report = serde_json::json!({
        "problem": {
            "horizon": cfg.problem.horizon,
            "n_kkt": pattern.n_total(),
            "n_blocks": pattern.n_blocks(),
            "stage_block_dim": pattern.n_b,
        },
        "schedule": {
            "method": method_name(schedule.method),
            "optimal": schedule.optimal,
            "n_ops": ops.len(),
            "d_star": schedule.d_star,
            "initiation_interval": latency.ii,
        },
        "latency": {
            "l_add": hw.l_add,
            "l_mul": hw.l_mul,
            "parallel_blocks": hw.parallel_blocks,
            "per_block_cycles": latency.per_block_cycles,
            "unscheduled_block_cycles": latency.unscheduled_block_cycles,
            "speedup": latency.unscheduled_block_cycles as f64 / latency.per_block_cycles as f64,
            "rounds": latency.rounds,
            "coupling_cycles": latency.coupling_cycles,
            "total_cycles": latency.total_cycles,
            "clock_mhz": hw.clock_mhz,
            "total_us": hw.cycles_to_us(latency.total_cycles),
        },
        "memory_words": {
            "bandwidth": memory.bandwidth,
            "dense_band": memory.dense_band,
            "block_dense": memory.block_dense,
            "block_sparse_scheduled": memory.block_sparse_scheduled,
            "band_over_block_sparse":
                memory.dense_band as f64 / memory.block_sparse_scheduled as f64,
        },
        "parallelism_sweep": sweep
            .iter()
            .map(|(p, rep)| serde_json::json!({
                "parallel_blocks": p,
                "rounds": rep.rounds,
                "total_cycles": rep.total_cycles,
                "total_us": hw.cycles_to_us(rep.total_cycles),
            }))
            .collect::<Vec<_>>(),
    });

    if cli.verbose {
        for (p, rep) in &sweep {
            eprintln!("P = {:3}: {} rounds, {} cycles", p, rep.rounds, rep.total_cycles);
        }
    }

    write_outputs(&cli.out, &[("hw_report.json", format!("{:#}\n", report))])?;
    println!(
        "hw report: {} ops/block, d* = {}, II = {}, {} cycles/matvec, memory {} words",
        ops.len(),
        schedule.d_star,
        latency.ii,
        latency.total_cycles,
        memory.block_sparse_scheduled
    );
    Ok(())
}
