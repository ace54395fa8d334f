//! The `dshare` command line.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dshare_core::analysis::{concavity_probe, kurtaran_witness_search, KurtaranOutcome};
use dshare_core::coordinator::{extract_design, solve_dp, Limits};
use dshare_core::evaluate::{brute_force_optimum, design_count, exact_cost, simulate};
use dshare_core::files::{parse_design, DesignFile, SolutionFile};
use dshare_core::second_form::solve_dp2;
use dshare_core::verify::{verify, VerifyConfig};
use dshare_core::{fmt_num, load_problem, Design, Error, Model};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dshare",
    version,
    about = "Exact solvers for delayed-sharing decentralized control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the belief program and print the optimal cost.
    Solve(Common),
    /// Solve the (Θ, r) program and print the optimal cost.
    Solve2(Common),
    /// Exact expected cost of a stored design.
    Evaluate(Common),
    /// Monte Carlo estimate of a design's cost.
    Simulate(Common),
    /// Optimal cost by enumerating every design.
    Oracle(Common),
    /// Run the invariant suite.
    Verify(Common),
    /// Search for histories whose `(X_{t-2}, U_{t-1})` posterior updates differently.
    Kurtaran(Common),
    /// Sample the concavity inequality of the value function.
    ProbeConcavity(Common),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Where to write the solution file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stored design (JSON); the first program's optimal design when absent.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    /// Samples per time for the concavity probe and the alpha envelope.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long, default_value_t = 200_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_nodes: u64,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_designs: u64,
    #[arg(long, default_value_t = 2_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_paths: u64,
}

impl Common {
    fn limits(&self) -> Limits {
        Limits {
            max_nodes: self.max_nodes as usize,
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Budget { .. } => EXIT_BUDGET,
        Error::Parse { .. }
        | Error::Schema { .. }
        | Error::Invalid(_)
        | Error::Domain { .. }
        | Error::Precondition(_)
        | Error::Io(_) => EXIT_INPUT,
        Error::Unreachable { .. } | Error::OffDesign { .. } | Error::Internal(_) => EXIT_INVARIANT,
    }
}

fn load_model(path: &PathBuf) -> Result<Model, Error> {
    Model::new(load_problem(&fs::read_to_string(path)?)?)
}

fn load_design(path: &PathBuf, model: &Model) -> Result<Box<dyn Design>, Error> {
    parse_design(&fs::read_to_string(path)?)?.build(model)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32, Error> {
    match command {
        Command::Solve(c) => {
            let model = load_model(&c.problem)?;
            let sol = solve_dp(&model, c.limits())?;
            if let Some(path) = &c.out {
                fs::write(
                    path,
                    SolutionFile::from_belief_solution(&model, &sol)?.to_json(),
                )?;
            }
            writeln!(out, "optimal_cost {}", fmt_num(sol.optimal_cost))?;
            writeln!(out, "nodes {}", sol.graph.node_count())?;
            writeln!(out, "edges {}", sol.graph.edge_count(&model))?;
        }
        Command::Solve2(c) => {
            let model = load_model(&c.problem)?;
            let sol = solve_dp2(&model, c.limits())?;
            if let Some(path) = &c.out {
                fs::write(
                    path,
                    SolutionFile::from_theta_r_solution(&model, &sol)?.to_json(),
                )?;
            }
            writeln!(out, "optimal_cost {}", fmt_num(sol.optimal_cost))?;
            writeln!(out, "nodes {}", sol.graph.node_count())?;
        }
        Command::Evaluate(c) => {
            let model = load_model(&c.problem)?;
            let path = c.design.as_ref().ok_or_else(|| Error::Schema {
                field: "--design".into(),
                message: "evaluate needs a stored design".into(),
            })?;
            let design = load_design(path, &model)?;
            let r = exact_cost(&model, design.as_ref(), c.max_paths as usize)?;
            writeln!(out, "expected_cost {}", fmt_num(r.expected_cost))?;
            for (i, v) in r.per_stage.iter().enumerate() {
                writeln!(out, "stage {} {}", i + 1, fmt_num(*v))?;
            }
        }
        Command::Simulate(c) => {
            let model = load_model(&c.problem)?;
            let r = with_design(&c, &model, |d| {
                simulate(&model, d, c.episodes as usize, c.seed)
            })?;
            writeln!(out, "episodes {}", r.episodes)?;
            writeln!(out, "seed {}", r.seed)?;
            writeln!(out, "mean {}", fmt_num(r.mean))?;
            writeln!(out, "std_error {}", fmt_num(r.std_error))?;
        }
        Command::Oracle(c) => {
            let model = load_model(&c.problem)?;
            let count = design_count(&model);
            writeln!(
                out,
                "designs {}",
                count.map_or("more than 2^128".into(), |n| n.to_string())
            )?;
            let (cost, best) =
                brute_force_optimum(&model, c.max_designs as u128, c.max_paths as usize)?;
            writeln!(out, "optimal_cost {}", fmt_num(cost))?;
            if let Some(path) = &c.out {
                fs::write(
                    path,
                    DesignFile::Table {
                        tables: best.tables,
                    }
                    .to_json(),
                )?;
            }
        }
        Command::Verify(c) => {
            let model = load_model(&c.problem)?;
            let cfg = VerifyConfig {
                limits: c.limits(),
                max_designs: c.max_designs as u128,
                max_paths: c.max_paths as usize,
                samples: c.samples as usize,
                seed: c.seed,
                episodes: c.episodes as usize,
                ..VerifyConfig::default()
            };
            let report = verify(&model, &cfg);
            let text = report.to_text();
            if let Some(path) = &c.out {
                fs::write(path, &text)?;
            }
            write!(out, "{text}")?;
            return Ok(if !report.passed() {
                EXIT_INVARIANT
            } else if report.budget_exceeded() {
                EXIT_BUDGET
            } else {
                EXIT_OK
            });
        }
        Command::Kurtaran(c) => {
            let model = load_model(&c.problem)?;
            let outcome = with_design(&c, &model, |d| {
                kurtaran_witness_search(&model, d, c.max_paths as usize)
            })?;
            match outcome {
                KurtaranOutcome::Witness(w) => {
                    writeln!(out, "witness t {} z {} gap {}", w.t, w.z, fmt_num(w.gap))?;
                    writeln!(out, "delta {:?}", w.delta)?;
                    writeln!(out, "delta_prime {:?}", w.delta_prime)?;
                }
                KurtaranOutcome::Exhausted {
                    matching_pairs,
                    comparisons,
                } => {
                    writeln!(out, "no witness")?;
                    writeln!(out, "matching_pairs {matching_pairs}")?;
                    writeln!(out, "comparisons {comparisons}")?;
                }
            }
        }
        Command::ProbeConcavity(c) => {
            let model = load_model(&c.problem)?;
            let r = concavity_probe(
                &model,
                c.samples as usize,
                c.seed,
                VerifyConfig::default().max_evaluations,
            )?;
            writeln!(out, "samples {}", r.samples)?;
            writeln!(out, "seed {}", r.seed)?;
            for (t, s) in &r.per_time {
                writeln!(out, "min_slack t {t} {}", fmt_num(*s))?;
            }
            writeln!(out, "min_slack {}", fmt_num(r.min_slack))?;
            writeln!(out, "violations {}", r.violations)?;
            if r.violations > 0 {
                return Ok(EXIT_INVARIANT);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Runs `f` with the stored design, or with the optimal design of the first
/// program.
fn with_design<T>(
    c: &Common,
    model: &Model,
    f: impl FnOnce(&dyn Design) -> Result<T, Error>,
) -> Result<T, Error> {
    match &c.design {
        Some(path) => {
            let d = load_design(path, model)?;
            f(d.as_ref())
        }
        None => {
            let sol = solve_dp(model, c.limits())?;
            f(&extract_design(model, &sol))
        }
    }
}
