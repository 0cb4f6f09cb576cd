//! Command-line front end.
//!
//! Exit codes: 0 when every run converged, 1 when some run did not, 2 for bad
//! arguments or unwritable outputs, 3 when the game cannot be loaded or validated.

mod output;

pub use output::{cluster_points, write_trace_csv, Cluster, Report, RunSummary};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::certify_equilibrium;
use crate::game::{builtin, builtin_names, parse_game_spec, Game, GameError, Point};
use crate::solvers::{solve, Algorithm, Order, SolverConfig, Trace};
use crate::steklov::SetKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GAME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "steklov-nash", version, about = "Nash equilibrium solvers for games with nonsmooth losses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the selected algorithms from each start; write traces and a report.
    Solve(RunArgs),
    /// As `solve`, and print a comparison table with equilibrium clusters.
    Compare(RunArgs),
    /// List the builtin games.
    Games,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// `builtin:NAME` or path to a JSON game file.
    #[arg(long)]
    pub game: String,
    /// Algorithms, comma separated.
    #[arg(long = "alg", value_enum, value_delimiter = ',', required = true)]
    pub algorithms: Vec<Algorithm>,
    /// Start point, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        conflicts_with = "multistart",
        required_unless_present = "multistart"
    )]
    pub x0: Option<Vec<f64>>,
    /// Number of random starts, uniform on the box clipped to ±sample-radius.
    #[arg(long)]
    pub multistart: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub sample_radius: f64,
    /// Seed for start sampling and ball quadrature.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target residual.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Radius of the initial averaging set.
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    /// Shape of the averaging set.
    #[arg(long = "set", value_enum, default_value_t = SetKind::Ball)]
    pub set_kind: SetKind,
    /// Quadrature level (cube: nodes per axis).
    #[arg(long, default_value_t = 8)]
    pub level: usize,
    /// Shrink rule: 1 is λ/d ≤ ε_k, 2 is λ/d² < ε_k [default: 2 for alg5 and
    /// reg_newton, 1 otherwise].
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub order: Option<u8>,
    /// Diameter floor for stopping smoothed methods [default: eps].
    #[arg(long)]
    pub d_min: Option<f64>,
    /// Directory for per-run traces named `{alg}_{start}.csv`.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Path for the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Terminal points closer than this are one equilibrium candidate.
    #[arg(long, default_value_t = 1e-3)]
    pub cluster_tol: f64,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Games => {
            for name in builtin_names() {
                println!("{name}");
            }
            EXIT_OK
        }
        Command::Solve(a) => execute(&a, false),
        Command::Compare(a) => execute(&a, true),
    }
}

pub fn load_game(source: &str) -> Result<Game, GameError> {
    match source.strip_prefix("builtin:") {
        Some(name) => builtin(name),
        None => {
            let text = fs::read_to_string(source)
                .map_err(|e| GameError::Invalid(format!("cannot read {source}: {e}")))?;
            parse_game_spec(&text)
        }
    }
}

struct Job {
    cfg: SolverConfig,
    label: String,
    x0: Point,
}

fn plan(args: &RunArgs, game: &Game) -> Result<Vec<Job>, String> {
    let starts: Vec<(String, Point)> = match (&args.x0, args.multistart) {
        (Some(x0), _) => {
            game.check_point(x0).map_err(|e| e.to_string())?;
            if !game.in_box(x0) {
                return Err(format!("x0 {} lies outside the box", Point::from(&x0[..])));
            }
            vec![("x0".into(), Point::from(&x0[..]))]
        }
        (None, Some(0)) => return Err("--multistart must be at least 1".into()),
        (None, Some(n)) => {
            if !(args.sample_radius > 0.0) {
                return Err("--sample-radius must be positive".into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..n)
                .map(|i| {
                    let x = game
                        .bounds()
                        .iter()
                        .map(|b| {
                            let (lo, hi) = (b.lo.max(-args.sample_radius), b.hi.min(args.sample_radius));
                            if lo < hi {
                                rng.random_range(lo..hi)
                            } else {
                                lo
                            }
                        })
                        .collect();
                    (format!("s{i}"), Point::new(x))
                })
                .collect()
        }
        (None, None) => return Err("one of --x0 or --multistart is required".into()),
    };
    if !(args.cluster_tol >= 0.0) {
        return Err("--cluster-tol must be nonnegative".into());
    }
    let mut jobs = Vec::new();
    for (label, x0) in &starts {
        for &algorithm in &args.algorithms {
            let cfg = SolverConfig {
                algorithm,
                eps: args.eps,
                max_iters: args.max_iters,
                radius: args.radius,
                set_kind: args.set_kind,
                quadrature_level: args.level,
                seed: args.seed,
                order: args.order.and_then(Order::from_int),
                d_min: args.d_min,
                ..SolverConfig::default()
            };
            cfg.validate().map_err(|e| e.to_string())?;
            jobs.push(Job {
                cfg,
                label: label.clone(),
                x0: x0.clone(),
            });
        }
    }
    Ok(jobs)
}

fn run_job(game: &Game, job: &Job) -> (RunSummary, Option<Trace>) {
    let mut summary = RunSummary {
        algorithm: job.cfg.algorithm,
        start_label: job.label.clone(),
        start: job.x0.clone(),
        status: "error".into(),
        converged: false,
        iterations: 0,
        oracle_calls: 0,
        final_point: None,
        final_residual: None,
        distance_to_known: None,
        error: None,
        certificate: None,
    };
    match solve(game, &job.x0, &job.cfg) {
        Ok(trace) => {
            let x = &trace.final_point;
            let cert = certify_equilibrium(game, x, job.cfg.eps);
            summary.status = trace.terminal_status.name().into();
            summary.converged = trace.converged();
            summary.iterations = trace.iterations();
            summary.oracle_calls = trace.oracle_calls;
            summary.final_point = Some(x.clone());
            summary.final_residual = Some(cert.max_residual());
            summary.distance_to_known = game.known_equilibria().distance(x);
            summary.certificate = Some(cert);
            (summary, Some(trace))
        }
        Err(e) => {
            summary.error = Some(e.to_string());
            (summary, None)
        }
    }
}

fn write_outputs(args: &RunArgs, results: &[(RunSummary, Option<Trace>)], report: &Report) -> Result<(), String> {
    if let Some(dir) = &args.trace_dir {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        for (s, trace) in results {
            if let Some(trace) = trace {
                let path = dir.join(format!("{}_{}.csv", s.algorithm.name(), s.start_label));
                let file = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                write_trace_csv(file, trace).map_err(|e| format!("{}: {e}", path.display()))?;
            }
        }
    }
    if let Some(path) = &args.report {
        write_report(path, report)?;
    }
    Ok(())
}

fn write_report(path: &Path, report: &Report) -> Result<(), String> {
    let text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn execute(args: &RunArgs, table: bool) -> i32 {
    let game = match load_game(&args.game) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: game: {e}");
            return EXIT_GAME;
        }
    };
    let jobs = match plan(args, &game) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let results: Vec<(RunSummary, Option<Trace>)> = jobs.par_iter().map(|j| run_job(&game, j)).collect();
    let report = Report::new(
        game.name(),
        game.players(),
        args.seed,
        args.eps,
        args.cluster_tol,
        results.iter().map(|(s, _)| s.clone()).collect(),
    );
    if let Err(e) = write_outputs(args, &results, &report) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    if table {
        print!("{}", report.table());
    } else {
        for r in &report.runs {
            match &r.final_point {
                Some(x) => println!("{} {}: {} after {} iterations at {}", r.algorithm, r.start_label, r.status, r.iterations, x),
                None => println!("{} {}: error: {}", r.algorithm, r.start_label, r.error.as_deref().unwrap_or("")),
            }
        }
    }
    if report.all_converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> RunArgs {
        let mut v = vec!["steklov-nash", "solve"];
        v.extend_from_slice(extra);
        match Cli::try_parse_from(v).unwrap().command {
            Command::Solve(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn parses_lists_and_negatives() {
        let a = args(&["--game", "builtin:cycle2", "--alg", "alg2,exact_cd", "--x0", "-1,2.5"]);
        assert_eq!(a.algorithms, vec![Algorithm::Alg2, Algorithm::ExactCd]);
        assert_eq!(a.x0, Some(vec![-1.0, 2.5]));
        assert_eq!(a.level, 8);
    }

    #[test]
    fn bad_input_codes() {
        assert_eq!(run(["steklov-nash", "solve", "--game", "builtin:cycle2", "--alg", "nope", "--x0", "1,1"]), EXIT_CONFIG);
        assert_eq!(run(["steklov-nash", "solve", "--game", "builtin:nope", "--alg", "alg2", "--x0", "1,1"]), EXIT_GAME);
        assert_eq!(run(["steklov-nash", "solve", "--game", "builtin:cycle2", "--alg", "alg2", "--x0", "1,1,1"]), EXIT_CONFIG);
        assert_eq!(run(["steklov-nash", "solve", "--game", "builtin:cycle2", "--alg", "alg2", "--multistart", "0"]), EXIT_CONFIG);
    }

    #[test]
    fn multistart_is_seeded_and_in_range() {
        let g = builtin("cycle2").unwrap();
        let a = args(&["--game", "builtin:cycle2", "--alg", "alg2", "--multistart", "4", "--seed", "9"]);
        let p1: Vec<Point> = plan(&a, &g).unwrap().into_iter().map(|j| j.x0).collect();
        let p2: Vec<Point> = plan(&a, &g).unwrap().into_iter().map(|j| j.x0).collect();
        assert_eq!(p1, p2);
        assert_eq!(p1.len(), 4);
        assert!(p1.iter().flat_map(|p| p.iter()).all(|v| v.abs() <= 2.0));
    }
}
