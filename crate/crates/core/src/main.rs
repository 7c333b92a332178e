use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctm_core::io::constraints::read_constraints;
use ctm_core::io::report::{InputDigest, Provenance, RunReport};
use ctm_core::io::tables::{
    format_default_curves, format_error_table, format_labeled_matrix, format_mean_times,
    read_chain, read_default_curves, read_q_matrix, CurveReadOptions,
};
use ctm_core::io::write_atomic;
use ctm_core::markov::STOCHASTIC_TOL;
use ctm_core::validation::AUGMENT_SLACK;
use ctm_core::{
    assemble_system, augment_with_slack, consistency_table, cumulative_default_curves,
    fundamental_matrix, matrix_from_vector, mean_time_to_default, residual, solve, CtmError,
    SolverConfig,
};

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

/// Row-sum slack for `Q*` files: covers six-digit rounding of every entry in a row.
const FILE_Q_SLACK: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "ctm",
    version,
    about = "Credit transition matrices from cumulative default probabilities"
)]
struct Cli {
    /// Log solver progress and diagnostics.
    #[arg(short, long, global = true)]
    verbose: bool,

    /// Reserved; the solver is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Gradient-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long = "max-iters", default_value_t = 200_000)]
    max_iters: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig::default()
            .with_tolerance(self.tolerance)
            .with_max_iterations(self.max_iters)
    }
}

#[derive(Args, Clone)]
struct CurveArgs {
    /// Input curve values are percentages.
    #[arg(long)]
    percent: bool,
    /// Reject curves that decrease anywhere instead of warning.
    #[arg(long = "strict-monotone")]
    strict_monotone: bool,
}

impl CurveArgs {
    fn options(&self) -> CurveReadOptions {
        CurveReadOptions {
            percent: self.percent,
            strict_monotone: self.strict_monotone,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Cumulative default curves of a full transition matrix.
    GenData {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        horizon: usize,
        /// Row-sum tolerance of the chain file; rows within it are rescaled.
        #[arg(long = "row-tol", default_value_t = STOCHASTIC_TOL)]
        row_tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct Q from the first N years of default curves.
    Solve {
        #[arg(long)]
        curves: PathBuf,
        #[arg(long)]
        years: usize,
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Where to write the JSON run report (stdout when omitted).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        curve_args: CurveArgs,
        /// Q* as a labeled CSV matrix.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward-predict default curves from Q* and the observed first year.
    Predict {
        #[arg(long)]
        qstar: PathBuf,
        #[arg(long)]
        curves: PathBuf,
        #[arg(long)]
        horizon: usize,
        /// Tolerated excess of row sums of [Q* | p(1)] over one.
        #[arg(long, default_value_t = FILE_Q_SLACK)]
        slack: f64,
        /// Run report of the solve that produced Q*; its residual widens the slack.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        curve_args: CurveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// l1 prediction-error table over several data windows.
    Validate {
        #[arg(long)]
        reference: PathBuf,
        /// e.g. `4,5,6,7` or `4-7`.
        #[arg(long = "data-years")]
        data_years: String,
        /// e.g. `10-20`.
        #[arg(long = "predict-years")]
        predict_years: String,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        curve_args: CurveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fundamental matrix and mean time to default of Q*.
    MeanTimes {
        #[arg(long)]
        qstar: PathBuf,
        #[arg(long, default_value_t = FILE_Q_SLACK)]
        slack: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A solve stopped at residual `r` leaves row sums up to `r` above one, plus
/// the rounding of the written file.
fn effective_slack(slack: f64, report: Option<&Path>) -> Result<f64, CtmError> {
    match report {
        Some(p) => {
            let run: RunReport = serde_json::from_str(&fs::read_to_string(p)?)?;
            Ok(slack.max(run.gradient_norm + FILE_Q_SLACK))
        }
        None => Ok(slack),
    }
}

fn parse_year_list(text: &str) -> Result<Vec<usize>, CtmError> {
    let bad = || CtmError::Input(format!("invalid year list {text:?}"));
    let mut years = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().map_err(|_| bad())?;
                let hi: usize = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                years.extend(lo..=hi);
            }
            None => years.push(part.parse().map_err(|_| bad())?),
        }
    }
    if years.is_empty() {
        return Err(bad());
    }
    Ok(years)
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), CtmError> {
    match out {
        Some(p) => write_atomic(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8, CtmError> {
    match cli.command {
        Command::GenData {
            chain,
            horizon,
            row_tol,
            out,
        } => {
            let chain = read_chain(&chain, row_tol)?;
            let table = cumulative_default_curves(&chain, horizon)?;
            emit(out.as_deref(), &format_default_curves(&table))?;
            Ok(0)
        }
        Command::Solve {
            curves,
            years,
            constraints,
            report,
            solver,
            curve_args,
            out,
        } => {
            let table = read_default_curves(&curves, curve_args.options())?;
            let bounds = read_constraints(constraints.as_deref(), table.scale())?;
            let system = assemble_system(&table, years, bounds)?;
            let config = solver.config();
            let solution = solve(&system, &config)?;
            let slack = AUGMENT_SLACK.max(solution.gradient_norm);
            let q_star = matrix_from_vector(&solution.x_star, table.scale(), slack)?;
            let res = residual(&system, &solution.x_star)?;

            let mut inputs = vec![InputDigest::of_file(&curves)?];
            if let Some(c) = &constraints {
                inputs.push(InputDigest::of_file(c)?);
            }
            let provenance = Provenance {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                inputs,
                years,
                percent: curve_args.percent,
                strict_monotone: curve_args.strict_monotone,
                solver: config,
            };
            let ratings = table.scale().ratings().to_vec();
            let run_report = RunReport::new(&solution, res, &ratings, &q_star, provenance);
            let json = run_report.to_json()?;
            match &report {
                Some(p) => write_atomic(p, &json)?,
                None => println!("{json}"),
            }
            if let Some(p) = &out {
                write_atomic(p, &format_labeled_matrix(&ratings, q_star.entries()))?;
            }
            if solution.converged {
                Ok(0)
            } else {
                eprintln!(
                    "warning: no convergence after {} iterations (gradient norm {:e})",
                    solution.iterations, solution.gradient_norm
                );
                Ok(EXIT_NOT_CONVERGED)
            }
        }
        Command::Predict {
            qstar,
            curves,
            horizon,
            slack,
            report,
            curve_args,
            out,
        } => {
            let slack = effective_slack(slack, report.as_deref())?;
            let table = read_default_curves(&curves, curve_args.options())?;
            let (labels, q) = read_q_matrix(&qstar, slack)?;
            if labels != table.scale().ratings() {
                return Err(CtmError::Input(format!(
                    "Q* ratings {labels:?} do not match curve ratings {:?}",
                    table.scale().ratings()
                )));
            }
            let chain = augment_with_slack(table.scale(), &q, &table.first_year(), slack)?;
            let predicted = cumulative_default_curves(&chain, horizon)?;
            emit(out.as_deref(), &format_default_curves(&predicted))?;
            Ok(0)
        }
        Command::Validate {
            reference,
            data_years,
            predict_years,
            constraints,
            solver,
            curve_args,
            out,
        } => {
            let table = read_default_curves(&reference, curve_args.options())?;
            let bounds = read_constraints(constraints.as_deref(), table.scale())?;
            let data_years = parse_year_list(&data_years)?;
            let predict_years = parse_year_list(&predict_years)?;
            let errors = consistency_table(
                &table,
                &data_years,
                &predict_years,
                &bounds,
                &solver.config(),
            )?;
            emit(out.as_deref(), &format_error_table(&errors))?;
            let mut all_converged = true;
            for ((n, ok), res) in errors
                .years_of_data
                .iter()
                .zip(&errors.converged)
                .zip(&errors.residuals)
            {
                if !ok {
                    all_converged = false;
                    eprintln!("warning: {n} years of data: no convergence (residual {res:e})");
                }
            }
            Ok(if all_converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::MeanTimes {
            qstar,
            slack,
            report,
            out,
        } => {
            let slack = effective_slack(slack, report.as_deref())?;
            let (labels, q) = read_q_matrix(&qstar, slack)?;
            let t = fundamental_matrix(&q)?;
            let mean = mean_time_to_default(&q)?;
            emit(out.as_deref(), &format_mean_times(&labels, &t, &mean))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
