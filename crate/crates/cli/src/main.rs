use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use concurrent_nmf::harness::{
    bench_csv, check, factorize, oscillation_csv, oscillation_demo, run_benchmark, BenchmarkPlan,
    InstanceKind, Solver,
};
use concurrent_nmf::{DenseMatrix, FactorPair, MwuConfig, NmfError, StepSize};

#[derive(Parser)]
#[command(
    name = "cnmf",
    version,
    about = "Non-negative matrix factorization by concurrent MWU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Factorize V and write W.csv, H.csv and a JSON report.
    Factorize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rank: usize,
        /// Total mass C. Defaults to 4 r (nm)^(1/4) sqrt(||V||_F).
        #[arg(long)]
        c: Option<f64>,
        /// Fixed step size. Defaults to an automatic choice.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 200_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop once F_t / F_0 falls below this.
        #[arg(long)]
        target: Option<f64>,
        /// Accept a C at or below the safe threshold.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Report path; W.csv and H.csv are written to the same directory.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Iterations to reach a relative error on random rank-r instances.
    Benchmark {
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        r_list: Vec<usize>,
        /// Number of seeds per cell, seeds 0..N.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 0.01)]
        target: f64,
        #[arg(long, default_value_t = 500_000)]
        max_iters: usize,
        #[arg(long, value_enum, default_value_t = SolverArg::Mwu)]
        solver: SolverArg,
        #[arg(long, value_enum, default_value_t = KindArg::RandomRankR)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Alternating vs concurrent Lee–Seung on V = I_2 from all-ones.
    OscillationDemo {
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify (W, H) as a stationary point for NMF, and for S-NMF when --c is given.
    Check {
        #[arg(long)]
        w: PathBuf,
        #[arg(long)]
        h: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        c: Option<f64>,
        /// Seed for the random cone probes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Mwu,
    LsAlternating,
    LsConcurrent,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    RandomRankR,
    RandomDense,
}

fn exit_code(err: &NmfError) -> u8 {
    match err {
        NmfError::Io { .. } | NmfError::Parse { .. } => 3,
        NmfError::Internal(_) => 1,
        _ => 2,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), NmfError> {
    fs::write(path, text).map_err(|source| NmfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, NmfError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| NmfError::Internal(format!("report serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn run(cli: Cli) -> Result<(), NmfError> {
    match cli.command {
        Command::Factorize {
            input,
            rank,
            c,
            epsilon,
            max_iters,
            seed,
            target,
            force,
            threads,
            out,
        } => {
            let v = DenseMatrix::read_csv(&input)?;
            let cfg = MwuConfig {
                c_constant: c,
                allow_small_c: force,
                epsilon: epsilon.map_or(StepSize::Auto, StepSize::Fixed),
                max_iters,
                seed,
                target_relative_error: target,
                threads,
                ..MwuConfig::default()
            };
            let (trace, mut report) = factorize(&v, rank, &cfg)?;
            let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
            let w_path = dir.join("W.csv");
            let h_path = dir.join("H.csv");
            let p = trace.factors();
            p.w.write_csv(&w_path)?;
            p.h.write_csv(&h_path)?;
            report.w_path = Some(w_path);
            report.h_path = Some(h_path);
            log::info!(
                "{:?} after {} iterations, objective {:e}",
                report.termination,
                report.iterations,
                report.final_objective
            );
            write_text(&out, &to_json(&report)?)
        }
        Command::Benchmark {
            n_list,
            r_list,
            seeds,
            target,
            max_iters,
            solver,
            kind,
            out,
        } => {
            let plan = BenchmarkPlan {
                n_list,
                r_list,
                seeds,
                target,
                max_iters,
                solver: match solver {
                    SolverArg::Mwu => Solver::Mwu,
                    SolverArg::LsAlternating => Solver::LsAlternating,
                    SolverArg::LsConcurrent => Solver::LsConcurrent,
                },
                kind: match kind {
                    KindArg::RandomRankR => InstanceKind::RandomRankR,
                    KindArg::RandomDense => InstanceKind::RandomDense,
                },
            };
            let rows = run_benchmark(&plan)?;
            let missed = rows.iter().filter(|r| !r.reached_target).count();
            if missed > 0 {
                log::warn!("{missed} of {} cells missed the target", rows.len());
            }
            write_text(&out, &bench_csv(&rows))
        }
        Command::OscillationDemo { steps, out } => {
            let rows = oscillation_demo(steps)?;
            write_text(&out, &oscillation_csv(&rows))
        }
        Command::Check {
            w,
            h,
            input,
            c,
            seed,
            out,
        } => {
            let v = DenseMatrix::read_csv(&input)?;
            let p = FactorPair::new(DenseMatrix::read_csv(&w)?, DenseMatrix::read_csv(&h)?)?;
            let report = check(&v, &p, c, seed)?;
            let text = to_json(&report)?;
            match out {
                Some(path) => write_text(&path, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
