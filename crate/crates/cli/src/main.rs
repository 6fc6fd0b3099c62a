use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use remeta::data::{self, Dataset};
use remeta::effects::CorrectionPolicy;
use remeta::estimation::{default_grid, fit_model, sensitivity_grid, FitOptions, GridMode, Method};
use remeta::io::{self, ResultRecord};
use remeta::models::{ModelKind, QuadSpec};
use remeta::simulation::{self, Scenario, SimOptions};
use remeta::Error;

const EXIT_NONCONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_IO: u8 = 74;

#[derive(Parser, Debug)]
#[command(
    name = "remeta",
    version,
    about = "Rare-event meta-analysis with publication-bias sensitivity analysis"
)]
struct Cli {
    /// Suppress the human-readable summary.
    #[arg(long, global = true, conflicts_with = "json")]
    quiet: bool,

    /// Print results as JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model without selection.
    Fit(FitArgs),
    /// Sensitivity analysis over a grid of (Pmin, Pmax).
    Sens(SensArgs),
    /// Run a simulation scenario and write metrics as CSV.
    Simulate(SimArgs),
    /// Write one of the bundled example datasets.
    ExampleData(ExampleArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Continuity correction for NN-based methods: only-zero, all or none.
    #[arg(long)]
    policy: Option<CorrectionPolicy>,

    /// Gauss-Hermite nodes for the random-effect integral.
    #[arg(long, default_value_t = QuadSpec::default().node_count)]
    nodes: usize,

    /// Jittered optimizer restarts.
    #[arg(long, default_value_t = FitOptions::default().restarts)]
    restarts: usize,

    #[arg(long, default_value_t = FitOptions::default().seed)]
    seed: u64,

    /// Write the result table (CSV) here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Common {
    fn options(&self) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            seed: self.seed,
            quad: QuadSpec {
                node_count: self.nodes,
                ..QuadSpec::default()
            },
            ..FitOptions::default()
        }
    }

    /// GLMM likelihoods use exact counts, so the policy only matters for NN-based methods.
    fn policy_for(&self, uses_policy: bool) -> CorrectionPolicy {
        if !uses_policy && self.policy.is_some() {
            eprintln!("warning: --policy has no effect on GLMM-based methods and is ignored");
        }
        self.policy.unwrap_or_default()
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    data: PathBuf,

    /// nn, hn, cbn or 1sbn.
    #[arg(long)]
    model: ModelKind,

    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SensArgs {
    data: PathBuf,

    /// proposed-hn, proposed-cbn, proposed-1sbn, copas-n or copas-shi.
    #[arg(long)]
    method: Method,

    /// Comma-separated Pmin values.
    #[arg(long)]
    pmin: Option<String>,

    #[arg(long, default_value_t = 0.999)]
    pmax: f64,

    /// Start every grid point from the no-selection fit and run them in parallel.
    #[arg(long)]
    cold: bool,

    /// Write the (Pmin, M, theta, CI) series here.
    #[arg(long)]
    plot_data: Option<PathBuf>,

    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SimArgs {
    scenario: PathBuf,

    #[arg(long, default_value_t = 1000)]
    reps: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Worker threads for the replicate pool.
    #[arg(long, env = "REMETA_JOBS", default_value_t = 1)]
    jobs: usize,

    /// Jittered restarts per fit, on top of the start at the true values.
    #[arg(long, default_value_t = 0)]
    restarts: usize,

    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExampleArgs {
    /// example1, example2, example3 or example4.
    name: String,

    #[arg(long, short)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } | Error::UndefinedEstimate { .. } => EXIT_DATA,
            Error::Config(_) => EXIT_USAGE,
            Error::Io(_) => EXIT_IO,
            Error::Domain(_) | Error::Numeric { .. } | Error::Initialization => EXIT_NONCONVERGED,
        };
        let mut message = e.to_string();
        if matches!(e, Error::UndefinedEstimate { .. }) {
            message.push_str("; rerun with --policy only-zero or --policy all");
        }
        Failure { code, message }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    io::parse_dataset(&read(path)?).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn summary(rows: &[ResultRecord]) -> String {
    let mut out = format!(
        "{:<14} {:>6} {:>6} {:>7} {:>9} {:>21} {:>7} {:>7} {:>11} {}\n",
        "method", "Pmin", "Pmax", "M", "theta", "95% CI", "tau", "rho", "loglik", "status"
    );
    for r in rows {
        let ci = match (r.ci_lo, r.ci_hi) {
            (Some(a), Some(b)) => format!("({a:.3}, {b:.3})"),
            _ => "-".to_string(),
        };
        let mut status = if r.converged {
            "ok".to_string()
        } else {
            "not converged".to_string()
        };
        if !r.on_boundary.is_empty() {
            status.push_str(&format!(" [bound: {}]", r.on_boundary));
        }
        out.push_str(&format!(
            "{:<14} {:>6} {:>6} {:>7} {:>9} {:>21} {:>7} {:>7} {:>11} {}\n",
            r.method,
            fmt_opt(r.p_min, 3),
            fmt_opt(r.p_max, 3),
            fmt_opt(r.m_raw, 2),
            fmt_opt(r.theta, 4),
            ci,
            fmt_opt(r.tau, 4),
            fmt_opt(r.rho, 3),
            fmt_opt(r.loglik, 4),
            status
        ));
    }
    out
}

fn report(cli: &Cli, rows: &[ResultRecord], out: Option<&Path>) -> Result<(), Failure> {
    if let Some(path) = out {
        write(path, &io::write_results(rows))?;
    }
    if cli.json {
        let text = serde_json::to_string_pretty(rows).map_err(|e| usage(e.to_string()))?;
        println!("{text}");
    } else if !cli.quiet {
        print!("{}", summary(rows));
    }
    Ok(())
}

fn exit_for(rows: &[ResultRecord]) -> u8 {
    if rows.iter().all(|r| r.converged) {
        0
    } else {
        EXIT_NONCONVERGED
    }
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<u8, Failure> {
    let data = load(&args.data)?;
    let policy = args.common.policy_for(args.model == ModelKind::Nn);
    let fit = fit_model(args.model, &data, policy, &args.common.options())?;
    let rows = vec![ResultRecord::from_fit(args.model.name(), &fit)];
    report(cli, &rows, args.common.out.as_deref())?;
    Ok(exit_for(&rows))
}

fn parse_grid(pmin: Option<&str>, pmax: f64) -> Result<Vec<(f64, f64)>, Failure> {
    let Some(list) = pmin else {
        return Ok(default_grid()
            .into_iter()
            .map(|(lo, _)| (lo, pmax))
            .collect());
    };
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| usage(format!("--pmin: `{s}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(usage("--pmin: the grid is empty"));
    }
    Ok(values.into_iter().map(|p| (p, pmax)).collect())
}

fn cmd_sens(cli: &Cli, args: &SensArgs) -> Result<u8, Failure> {
    let grid = parse_grid(args.pmin.as_deref(), args.pmax)?;
    let data = load(&args.data)?;
    let policy = args.common.policy_for(args.method.uses_policy());
    let mode = if args.cold {
        GridMode::Cold
    } else {
        GridMode::Warm
    };
    let rows = sensitivity_grid(
        args.method,
        &data,
        &grid,
        policy,
        &args.common.options(),
        mode,
    )?;
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("warning: Pmin = {}: {e}", r.p_min);
        }
    }
    let records: Vec<ResultRecord> = rows
        .iter()
        .map(|r| ResultRecord::from_grid_row(args.method.name(), r))
        .collect();
    report(cli, &records, args.common.out.as_deref())?;
    if let Some(path) = &args.plot_data {
        write(path, &io::plot_series(&records))?;
    }
    Ok(exit_for(&records))
}

fn cmd_simulate(cli: &Cli, args: &SimArgs) -> Result<u8, Failure> {
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let text = read(&args.scenario)?;
    let mut scenario = Scenario::parse(&text).map_err(|e| Failure {
        code: if matches!(e, Error::Parse { .. }) {
            EXIT_DATA
        } else {
            EXIT_USAGE
        },
        message: format!("{}: {e}", args.scenario.display()),
    })?;
    if scenario.name.is_empty() {
        scenario.name = args
            .scenario
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    let opts = SimOptions {
        reps: args.reps,
        seed: args.seed,
        jobs: args.jobs,
        fit: FitOptions {
            restarts: args.restarts,
            rho_starts: false,
            seed: args.seed,
            ..FitOptions::default()
        },
    };
    let row = simulation::run_scenario(&scenario, &opts)?;
    let csv = simulation::metrics_csv(std::slice::from_ref(&row));
    if let Some(path) = &args.out {
        write(path, &csv)?;
    }
    if cli.json {
        let text = serde_json::to_string_pretty(&row).map_err(|e| usage(e.to_string()))?;
        println!("{text}");
    } else if args.out.is_none() {
        print!("{csv}");
    } else if !cli.quiet {
        println!(
            "{}: {} reps ({} degenerate), mean published {:.2}",
            row.scenario, row.reps, row.degenerate, row.mean_published
        );
    }
    Ok(0)
}

fn cmd_example(cli: &Cli, args: &ExampleArgs) -> Result<u8, Failure> {
    let data = data::example(&args.name).map_err(|_| {
        usage(format!(
            "unknown example `{}` (expected one of {})",
            args.name,
            data::EXAMPLE_NAMES.join(", ")
        ))
    })?;
    let text = io::write_dataset(&data);
    match &args.out {
        Some(path) => {
            write(path, &text)?;
            if !cli.quiet {
                eprintln!("wrote {} studies to {}", data.len(), path.display());
            }
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(&cli, a),
        Command::Sens(a) => cmd_sens(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::ExampleData(a) => cmd_example(&cli, a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
