use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use didbracket::data::{load_panel, Layout, OutcomeKind, PanelDataset};
use didbracket::diagnostics::{check_monotonicity, check_stationarity, lemma1_gap};
use didbracket::error::Result;
use didbracket::estimators::{estimate, stratified, EstimatorKind};
use didbracket::inference::{
    bootstrap_estimates, compare_estimators, default_ldv_kind, BootstrapSpec, Quantity, Target,
};
use didbracket::report::{digest_bytes, Payload, ReportEnvelope};
use didbracket::simulate::{monte_carlo, DgpFamily, DgpSpec};

const USAGE_EXIT: u8 = 64;

#[derive(Parser)]
#[command(
    name = "didbracket",
    version,
    about = "Two-period two-group panel estimation with bracketing diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single estimator on a dataset.
    Estimate(EstimateArgs),
    /// Check the bracketing conditions and the gap decomposition.
    Diagnose(DiagnoseArgs),
    /// Full pipeline: all estimators, diagnostics, prediction vs observation,
    /// and optional bootstrap intervals.
    Bracket(BracketArgs),
    /// Bootstrap intervals for estimates and estimator differences.
    Bootstrap(BootstrapArgs),
    /// Monte Carlo study of a synthetic data-generating process.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Wide,
    Long,
    Contingency,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Continuous,
    Count,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Markdown,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV path.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    layout: LayoutArg,
    #[arg(long, value_enum)]
    outcome: OutcomeArg,
    /// Highest contingency level means "this value and above".
    #[arg(long)]
    top_code: Option<i64>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Directory for plot-point CSV files (CDF pairs, conditional means).
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Did,
    Ldv,
    LdvQuadratic,
    LdvPooled,
    LdvNonparametric,
    IpwDid,
    IpwLdv,
}

#[derive(Clone, Copy, ValueEnum)]
enum PropensityArg {
    Saturated,
    Logistic,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "saturated")]
    propensity: PropensityArg,
    /// Aggregate per-stratum estimates by the treated share of each stratum.
    #[arg(long)]
    stratified: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Slack allowed in the pointwise CDF comparison.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ResampleArgs {
    #[arg(long, default_value_t = 2000)]
    replicates: usize,
    /// Defaults to the DIDBRACKET_SEED environment variable, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Resample the whole sample instead of within each group.
    #[arg(long)]
    no_stratify: bool,
}

impl ResampleArgs {
    fn spec(&self) -> BootstrapSpec {
        BootstrapSpec {
            replicates: self.replicates,
            seed: self.seed.unwrap_or_else(default_seed),
            level: self.level,
            stratify_by_group: !self.no_stratify,
        }
    }
}

#[derive(Args)]
struct BracketArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    resample: ResampleArgs,
    /// Skip the bootstrap difference intervals.
    #[arg(long)]
    skip_bootstrap: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    resample: ResampleArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    IgnorabilityAr,
    ParallelTrendsFe,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    selection: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0.0)]
    baseline_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    baseline_sd: f64,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Defaults to the DIDBRACKET_SEED environment variable, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-replicate estimates to this CSV path.
    #[arg(long)]
    replicate_csv: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

fn default_seed() -> u64 {
    std::env::var("DIDBRACKET_SEED")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => USAGE_EXIT,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(data: &DataArgs) -> Result<(PanelDataset, String)> {
    let bytes = std::fs::read(&data.input)?;
    let layout = match data.layout {
        LayoutArg::Wide => Layout::Wide,
        LayoutArg::Long => Layout::Long,
        LayoutArg::Contingency => Layout::Contingency,
    };
    let outcome = match data.outcome {
        OutcomeArg::Continuous => OutcomeKind::Continuous,
        OutcomeArg::Count => OutcomeKind::Count,
        OutcomeArg::Binary => OutcomeKind::Binary,
    };
    let ds = load_panel(bytes.as_slice(), layout, outcome, data.top_code)?;
    Ok((ds, digest_bytes(&bytes)))
}

fn command_echo() -> String {
    std::env::args().skip(1).collect::<Vec<_>>().join(" ")
}

fn emit(envelope: &ReportEnvelope, output: &OutputArgs) -> Result<()> {
    let rendered = match output.format {
        FormatArg::Json => envelope.to_json(),
        FormatArg::Markdown => envelope.to_markdown(),
    };
    match &output.output {
        Some(path) => std::fs::write(path, rendered)?,
        None => {
            std::io::stdout().write_all(rendered.as_bytes())?;
        }
    }
    Ok(())
}

/// Plot-point CSVs: CDF pairs and the control conditional-mean points
/// recovered from the decomposition table.
fn write_plots(
    dir: &Path,
    mono: &didbracket::diagnostics::MonotonicityReport,
    delta_table: &[(f64, f64)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut cdf = String::from("y,cdf_treated,cdf_control\n");
    for i in 0..mono.evaluation_points.len() {
        cdf.push_str(&format!(
            "{},{},{}\n",
            mono.evaluation_points[i], mono.cdf_treated[i], mono.cdf_control[i]
        ));
    }
    std::fs::write(dir.join("cdf.csv"), cdf)?;

    let mut means = String::from("y,conditional_mean\n");
    for (y, delta) in delta_table {
        means.push_str(&format!("{},{}\n", y, y + delta));
    }
    std::fs::write(dir.join("conditional_means.csv"), means)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(args) => {
            let (ds, digest) = load(&args.data)?;
            let kind = match args.method {
                MethodArg::Did => EstimatorKind::DidMoment,
                MethodArg::Ldv => EstimatorKind::LdvControlReg,
                MethodArg::LdvQuadratic => EstimatorKind::LdvControlRegQuadratic,
                MethodArg::LdvPooled => EstimatorKind::LdvPooledReg,
                MethodArg::LdvNonparametric => EstimatorKind::LdvNonparametric,
                MethodArg::IpwDid => EstimatorKind::IpwDid,
                MethodArg::IpwLdv => match args.propensity {
                    PropensityArg::Saturated => EstimatorKind::IpwLdvSaturated,
                    PropensityArg::Logistic => EstimatorKind::IpwLdvLogistic,
                },
            };
            let result = if args.stratified {
                stratified(&ds, kind)?
            } else {
                estimate(&ds, kind)?
            };
            let envelope = ReportEnvelope::new(
                digest,
                command_echo(),
                Payload::Estimate { estimate: result },
            );
            emit(&envelope, &args.output)
        }
        Command::Diagnose(args) => {
            let (ds, digest) = load(&args.data)?;
            let stationarity = check_stationarity(&ds)?;
            let monotonicity = check_monotonicity(&ds, args.tolerance)?;
            let (delta_table, gap) = lemma1_gap(&ds)?;
            if let Some(dir) = &args.output.plots {
                write_plots(dir, &monotonicity, &delta_table)?;
            }
            let envelope = ReportEnvelope::new(
                digest,
                command_echo(),
                Payload::Diagnose {
                    stationarity,
                    monotonicity,
                    delta_table,
                    lemma1_gap: gap,
                },
            );
            emit(&envelope, &args.output)
        }
        Command::Bracket(args) => {
            let (ds, digest) = load(&args.data)?;
            let spec = args.resample.spec();
            let comparison = compare_estimators(
                &ds,
                if args.skip_bootstrap {
                    None
                } else {
                    Some(&spec)
                },
            )?;
            let stationarity = check_stationarity(&ds)?;
            let monotonicity = check_monotonicity(&ds, 0.0)?;
            if let Some(dir) = &args.output.plots {
                let table = comparison
                    .bracket
                    .as_ref()
                    .map(|b| b.delta_table.clone())
                    .unwrap_or_default();
                write_plots(dir, &monotonicity, &table)?;
            }
            let envelope = ReportEnvelope::new(
                digest,
                command_echo(),
                Payload::Bracket {
                    stationarity,
                    monotonicity,
                    comparison,
                },
            );
            emit(&envelope, &args.output)
        }
        Command::Bootstrap(args) => {
            let (ds, digest) = load(&args.data)?;
            let spec = args.resample.spec();
            let ldv = default_ldv_kind(&ds);
            let candidates = [
                Target {
                    estimator: EstimatorKind::DidMoment,
                    versus: None,
                    quantity: Quantity::Tau,
                },
                Target {
                    estimator: ldv,
                    versus: None,
                    quantity: Quantity::Tau,
                },
                Target {
                    estimator: EstimatorKind::DidMoment,
                    versus: None,
                    quantity: Quantity::Gamma,
                },
                Target {
                    estimator: ldv,
                    versus: None,
                    quantity: Quantity::Gamma,
                },
                Target {
                    estimator: EstimatorKind::DidMoment,
                    versus: Some(ldv),
                    quantity: Quantity::Tau,
                },
                Target {
                    estimator: EstimatorKind::DidMoment,
                    versus: Some(ldv),
                    quantity: Quantity::Gamma,
                },
            ];
            let targets: Vec<Target> = candidates
                .into_iter()
                .filter(|t| t.value(&ds).is_ok())
                .collect();
            let intervals = bootstrap_estimates(&ds, &targets, &spec)?;
            let envelope =
                ReportEnvelope::new(digest, command_echo(), Payload::Bootstrap { intervals });
            emit(&envelope, &args.output)
        }
        Command::Simulate(args) => {
            let spec = DgpSpec {
                family: match args.family {
                    FamilyArg::IgnorabilityAr => DgpFamily::IgnorabilityAr,
                    FamilyArg::ParallelTrendsFe => DgpFamily::ParallelTrendsFe,
                },
                n: args.n,
                tau_true: args.tau,
                beta: args.beta,
                selection: args.selection,
                noise_sd: args.noise_sd,
                baseline_mean: args.baseline_mean,
                baseline_sd: args.baseline_sd,
            };
            let seed = args.seed.unwrap_or_else(default_seed);
            let (summary, records) = monte_carlo(&spec, args.reps, seed)?;
            if let Some(path) = &args.replicate_csv {
                let mut csv = String::from(
                    "replicate,tau_did,tau_ldv,tau_ldv_pooled,stationarity_satisfied,direction_a,direction_b\n",
                );
                for r in &records {
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        r.replicate,
                        r.tau_did,
                        r.tau_ldv,
                        r.tau_ldv_pooled,
                        r.stationarity_satisfied,
                        r.direction_a,
                        r.direction_b
                    ));
                }
                std::fs::write(path, csv)?;
            }
            // No input file; hash the generating parameters instead.
            let digest = digest_bytes(serde_json::to_string(&spec).unwrap().as_bytes());
            let envelope = ReportEnvelope::new(
                digest,
                command_echo(),
                Payload::Simulate { spec, summary },
            );
            emit(&envelope, &args.output)
        }
    }
}
