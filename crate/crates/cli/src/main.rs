use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use uasplan::export;
use uasplan::miqp::{MIQPConfig, MiqpStatus};
use uasplan::planner::{plan_step, receding_horizon, PlanError, Trajectory};
use uasplan::scenario::{Mode, Scenario, ScenarioError};

const EXIT_INVALID: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NODE_LIMIT: u8 = 3;

#[derive(Parser)]
#[command(name = "uasplan", version, about = "Energy-aware UAS motion planning with mixed-integer MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SolverArgs {
    /// Worker threads for node evaluation.
    #[arg(long, env = "UASPLAN_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    eps_abs: Option<f64>,
    #[arg(long)]
    eps_rel: Option<f64>,
    #[arg(long)]
    max_nodes: Option<usize>,
}

impl SolverArgs {
    fn apply(&self, cfg: &mut MIQPConfig) {
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(v) = self.eps_abs {
            cfg.eps_abs = v;
        }
        if let Some(v) = self.eps_rel {
            cfg.eps_rel = v;
        }
        if let Some(v) = self.max_nodes {
            cfg.max_nodes = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write trajectory.csv, solver_stats.txt, plan.svg and partition.txt.
    Plan {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Write the convex partition of a scenario map with a validity report.
    Partition {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time repeated open-loop solves of a scenario.
    Benchmark {
        scenario: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Plan { scenario, out, solver } => run_plan(&scenario, &out, &solver),
        Command::Partition { scenario, out } => run_partition(&scenario, &out),
        Command::Benchmark { scenario, repeats, solver } => run_benchmark(&scenario, repeats, &solver),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn load(path: &Path) -> Result<Scenario, u8> {
    Scenario::load(path).map_err(|e| report(&e))
}

fn report(e: &ScenarioError) -> u8 {
    eprintln!("error: {e}");
    match e {
        ScenarioError::Plan(p) => plan_code(p),
        _ => EXIT_INVALID,
    }
}

fn plan_code(e: &PlanError) -> u8 {
    match e {
        PlanError::Reference(_) | PlanError::Infeasible(_) => EXIT_INFEASIBLE,
        PlanError::NoSolution => EXIT_NODE_LIMIT,
        _ => EXIT_INVALID,
    }
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_plan(path: &Path, out: &Path, args: &SolverArgs) -> anyhow::Result<u8> {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(c) => return Ok(c),
    };
    let setup = match scenario.setup() {
        Ok(s) => s,
        Err(e) => return Ok(report(&e)),
    };
    let mut cfg = scenario.solver.clone();
    args.apply(&mut cfg);
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return Ok(EXIT_INVALID);
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(out, "partition.txt", &export::partition_report(&setup.map, &setup.partition))?;

    let result: Result<Trajectory, PlanError> = match scenario.mode {
        Mode::OpenLoop => plan_step(&setup.problem, &setup.x0, &cfg).map(|(t, _)| t),
        Mode::RecedingHorizon { steps } => receding_horizon(&setup.problem, &setup.x0, steps, &cfg),
    };
    let traj = match result {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            write(out, "plan.svg", &export::plan_svg(&setup.map, &setup.partition, None))?;
            write(out, "solver_stats.txt", &format!("status: failed\nerror: {e}\n"))?;
            return Ok(plan_code(&e));
        }
    };
    write(out, "trajectory.csv", &export::trajectory_csv(&traj))?;
    write(out, "solver_stats.txt", &export::solver_stats_text(&traj))?;
    write(out, "plan.svg", &export::plan_svg(&setup.map, &setup.partition, Some(&traj)))?;

    let node_limited = traj.stats.iter().any(|s| s.status == MiqpStatus::NodeLimit);
    let last = traj.stats.last();
    println!(
        "{}: {} points, cost {:.6}, {} solve(s), {:.3} s",
        scenario.name,
        traj.points.len(),
        traj.cost,
        traj.stats.len(),
        traj.stats.iter().map(|s| s.wall_time).sum::<f64>()
    );
    if let Some(s) = last {
        println!("last solve: status {}, gap {:.3e}, nodes {}", s.status.as_str(), s.gap, s.nodes);
    }
    if let Some(reason) = &traj.stopped {
        eprintln!("stopped early: {reason}");
        return Ok(if reason.contains("node limit") { EXIT_NODE_LIMIT } else { EXIT_INFEASIBLE });
    }
    Ok(if node_limited { EXIT_NODE_LIMIT } else { 0 })
}

fn run_partition(path: &Path, out: &Path) -> anyhow::Result<u8> {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(c) => return Ok(c),
    };
    let (map, part) = match scenario.partition() {
        Ok(p) => p,
        Err(e) => return Ok(report(&e)),
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = export::partition_report(&map, &part);
    write(out, "partition.txt", &text)?;
    write(out, "partition.svg", &export::plan_svg(&map, &part, None))?;
    println!("{}: {} convex cells", scenario.name, part.num_cells());
    Ok(0)
}

fn run_benchmark(path: &Path, repeats: usize, args: &SolverArgs) -> anyhow::Result<u8> {
    if repeats == 0 {
        eprintln!("error: --repeats must be at least 1");
        return Ok(EXIT_INVALID);
    }
    let scenario = match load(path) {
        Ok(s) => s,
        Err(c) => return Ok(c),
    };
    let setup = match scenario.setup() {
        Ok(s) => s,
        Err(e) => return Ok(report(&e)),
    };
    let mut cfg = scenario.solver.clone();
    args.apply(&mut cfg);
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return Ok(EXIT_INVALID);
    }
    let mut times = Vec::with_capacity(repeats);
    let mut status = MiqpStatus::Optimal;
    for r in 0..repeats {
        match plan_step(&setup.problem, &setup.x0, &cfg) {
            Ok((_, res)) => {
                let root_gap = res.objective - res.root_bound;
                println!(
                    "run {r}: {:.4} s, status {}, nodes {}, qp solves {}, gap {:.3e}, root gap {:.4}",
                    res.wall_time,
                    res.status.as_str(),
                    res.nodes_explored,
                    res.qp_solves,
                    res.gap,
                    root_gap
                );
                times.push(res.wall_time);
                status = res.status;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(plan_code(&e));
            }
        }
    }
    times.sort_by(f64::total_cmp);
    let median = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
    };
    println!(
        "{}: median {:.4} s, min {:.4} s over {repeats} runs, threads {}",
        scenario.name, median, times[0], cfg.threads
    );
    Ok(if status == MiqpStatus::NodeLimit { EXIT_NODE_LIMIT } else { 0 })
}
