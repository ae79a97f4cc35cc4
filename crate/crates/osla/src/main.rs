//! Command-line front end: stream generation, experiments, suites, bound
//! evaluation, RIC estimation, plot tables, and self-tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use osla::analysis::{
    a_t_delta, b_delta, chi_square_tail_selftest, estimate_ric, exact_opt, psd_tail_selftest,
    regret_decomposition, theorem1_bound_with, BoundParams, RicMode, THEOREM1_FOURTH_TERM_COEFF,
};
use osla::error::{Error, Result};
use osla::harness::{
    dyadic_checkpoints, emit_plot_data, generate_stream, load_results_dir, run_experiment,
    run_suite, synthesize_digit_rows, write_dense_rows, ExperimentOptions, ExperimentResult,
    GeneratedStream, PlotKind, PolicyDescriptor, ScenarioSpec, SuiteConfig,
    RESULT_SCHEMA_VERSION,
};
use osla::harness::suite::write_result_file;
use osla::linalg::MeasurementMatrix;
use osla::policies::{FtaslVariant, TauSchedule};
use osla::rng::{sample_gaussian_matrix, RngStream};
use osla::solvers::SolverKind;

const OUTPUT_DIR_ENV: &str = "OSLA_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "osla",
    version,
    about = "Online sparse linear approximation: FTASL policies, baselines, and regret analytics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate inputs: a measurement stream or a synthetic digit table
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run a single experiment (one policy, one seed) from a suite config
    Run(RunArgs),
    /// Run the full config-driven (policy x seed) grid
    Suite(SuiteArgs),
    /// Evaluate the theoretical regret bound for explicit parameters
    Bound(BoundArgs),
    /// Estimate the restricted isometry constant of a sensing matrix
    Ric(RicArgs),
    /// Emit tidy plot tables from a directory of result files
    Plotdata(PlotdataArgs),
    /// Concentration and identity self-checks
    Selftest(SelftestArgs),
}

#[derive(Subcommand)]
enum GenCommand {
    /// Draw a full measurement stream from a scenario config and save it
    Stream(GenStreamArgs),
    /// Synthesize a sparse digit-like image table
    Digits(GenDigitsArgs),
}

#[derive(Args)]
struct GenStreamArgs {
    /// TOML file holding a scenario spec (m, n, k, horizon, u_law, noise, seed, ...)
    #[arg(long)]
    config: PathBuf,
    /// Override the seed in the config
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDigitsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    rows: usize,
    /// Row length (flattened image size)
    #[arg(long, default_value_t = 784)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    threshold: f64,
    /// Largest post-threshold support a synthesized row may have
    #[arg(long, default_value_t = 14)]
    max_support: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Index into the config's policy list
    #[arg(long, default_value_t = 0)]
    policy: usize,
    /// Seed for this run; defaults to the first configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides config; OSLA_OUTPUT_DIR overrides both)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides config; OSLA_OUTPUT_DIR overrides both)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    horizon: u64,
    #[arg(long)]
    delta_k: f64,
    #[arg(long)]
    kappa: f64,
    /// Dyadic staleness sum (0 for the agile variant)
    #[arg(long, default_value_t = 0.0)]
    big_delta: f64,
    /// sum_t ||z*_T - z*_t||^2
    #[arg(long, default_value_t = 0.0)]
    z_drift: f64,
    /// sum_t ||z*_t - u_t||^2
    #[arg(long, default_value_t = 0.0)]
    u_drift: f64,
    /// Coefficient of the fourth bound term
    #[arg(long, default_value_t = THEOREM1_FOURTH_TERM_COEFF)]
    c4: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum RicModeArg {
    Exact,
    MonteCarlo,
}

#[derive(Args)]
struct RicArgs {
    /// Load the matrix from a comma-separated table instead of sampling one
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Entry standard deviation; defaults to 1/sqrt(m)
    #[arg(long)]
    phi_scale: Option<f64>,
    #[arg(long, value_enum, default_value_t = RicModeArg::Exact)]
    mode: RicModeArg,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PlotKindArg {
    Regret,
    Exectime,
}

#[derive(Args)]
struct PlotdataArgs {
    /// Directory of *.jsonl result files
    #[arg(long)]
    results: PathBuf,
    #[arg(long, value_enum)]
    kind: PlotKindArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct StreamFile {
    schema_version: u32,
    spec: ScenarioSpec,
    stream: GeneratedStream,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen(GenCommand::Stream(args)) => gen_stream(args),
        Command::Gen(GenCommand::Digits(args)) => gen_digits(args),
        Command::Run(args) => run_single(args),
        Command::Suite(args) => suite(args),
        Command::Bound(args) => bound(args),
        Command::Ric(args) => ric(args),
        Command::Plotdata(args) => plotdata(args),
        Command::Selftest(args) => selftest(args),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn output_dir(cli_dir: Option<PathBuf>, config_dir: &Path) -> PathBuf {
    if let Ok(env_dir) = std::env::var(OUTPUT_DIR_ENV) {
        return PathBuf::from(env_dir);
    }
    cli_dir.unwrap_or_else(|| config_dir.to_path_buf())
}

fn gen_stream(args: GenStreamArgs) -> Result<ExitCode> {
    let mut spec: ScenarioSpec = read_toml(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let stream = generate_stream(&spec)?;
    let file = StreamFile { schema_version: RESULT_SCHEMA_VERSION, spec, stream };
    let line = serde_json::to_string(&file)
        .map_err(|e| Error::Config(format!("serializing stream: {e}")))?;
    fs::write(&args.out, format!("{line}\n"))
        .map_err(|source| Error::Io { path: args.out.clone(), source })?;
    println!("wrote stream ({} rounds) to {}", file.stream.ys.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn gen_digits(args: GenDigitsArgs) -> Result<ExitCode> {
    let mut rng = RngStream::new(args.seed);
    let rows = synthesize_digit_rows(args.rows, args.n, args.threshold, args.max_support, &mut rng)?;
    write_dense_rows(&args.out, &rows)?;
    println!("wrote {} synthetic rows to {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_single(args: RunArgs) -> Result<ExitCode> {
    let config = SuiteConfig::from_toml_file(&args.config)?;
    let descriptor = config
        .policies
        .get(args.policy)
        .ok_or_else(|| {
            Error::Config(format!(
                "policy index {} out of range ({} configured)",
                args.policy,
                config.policies.len()
            ))
        })?
        .clone();
    let seed = match args.seed {
        Some(s) => s,
        None => *config
            .seeds
            .first()
            .ok_or_else(|| Error::Config("config has no seeds".into()))?,
    };
    let spec = config.scenario.with_seed(seed);
    let options = ExperimentOptions {
        with_decomposition: config.with_decomposition,
        bound: config.bound.as_ref().map(Into::into),
    };
    let result = run_experiment(&spec, &descriptor, &options)?;

    let out_dir = output_dir(args.out_dir, &config.output_dir);
    fs::create_dir_all(&out_dir)
        .map_err(|source| Error::Io { path: out_dir.clone(), source })?;
    let file = out_dir.join(format!("{}__seed{}.jsonl", result.policy_name, seed));
    write_result_file(&file, &result)?;

    print_run_summary(&result);
    println!("result written to {}", file.display());
    Ok(ExitCode::SUCCESS)
}

fn print_run_summary(result: &ExperimentResult) {
    let horizon = result.spec.horizon;
    let final_regret = result.trace.approx_regret.last().copied().unwrap_or(0.0);
    println!(
        "policy {} | T = {horizon} | R_hat_T = {final_regret:.6} | R_hat_T/T = {:.6e} | \
         solver invocations = {} | wall time = {:.3} ms",
        result.policy_name,
        final_regret / horizon as f64,
        result.trace.alg_invocations.last().copied().unwrap_or(0),
        result.total_wall_time_ns as f64 / 1e6
    );
    if let Some(rep) = &result.decomposition {
        println!(
            "decomposition: A = {:.6}, B = {:.6}, C = {:.6}, R_T = {:.6}, R_hat_T = {:.6}",
            rep.a, rep.b, rep.c, rep.r_t, rep.r_hat_t
        );
    }
    if let (Some(curve), Some(info)) = (&result.bound_curve, &result.bound_info) {
        if let Some(last) = curve.last() {
            println!(
                "bound at T: {:.6e} (delta = {}, kappa = {:.4}, delta_K = {:.4}{})",
                last.bound,
                info.delta,
                info.kappa,
                info.delta_k,
                if info.delta_k_lower_bound_only { ", sampled lower bound" } else { "" }
            );
        }
    }
}

fn suite(args: SuiteArgs) -> Result<ExitCode> {
    let config = SuiteConfig::from_toml_file(&args.config)?;
    let out_dir = output_dir(args.out_dir, &config.output_dir);
    let output = run_suite(&config, Some(&out_dir))?;
    println!(
        "suite complete: {} result files, summary at {}",
        output.result_files.len(),
        output.summary_file.display()
    );
    for f in &output.failures {
        eprintln!("trial failed: {} seed {}: {}", f.policy, f.seed, f.error);
    }
    Ok(if output.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn bound(args: BoundArgs) -> Result<ExitCode> {
    let params = BoundParams {
        delta: args.delta,
        m: args.m,
        delta_k: args.delta_k,
        kappa: args.kappa,
        horizon: args.horizon,
        big_delta: args.big_delta,
        z_star_drift: args.z_drift,
        u_drift: args.u_drift,
    };
    let value = theorem1_bound_with(&params, args.c4)?;
    let report = serde_json::json!({
        "params": params,
        "b_delta_over_3": b_delta(args.delta / 3.0, args.m)?,
        "a_t_delta": a_t_delta(&params)?,
        "fourth_term_coeff": args.c4,
        "bound": value,
    });
    println!("{report}");
    Ok(ExitCode::SUCCESS)
}

fn parse_matrix_table(path: &Path) -> Result<MeasurementMatrix> {
    let text =
        fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            row: idx + 1,
            reason: e.to_string(),
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    row: idx + 1,
                    reason: format!("expected {} values, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("matrix table"));
    }
    let m = rows.len();
    let n = rows[0].len();
    MeasurementMatrix::new(m, n, rows.into_iter().flatten().collect())
}

fn ric(args: RicArgs) -> Result<ExitCode> {
    let phi = match &args.matrix {
        Some(path) => parse_matrix_table(path)?,
        None => {
            let scale = args.phi_scale.unwrap_or(1.0 / (args.m as f64).sqrt());
            sample_gaussian_matrix(args.m, args.n, scale, &mut RngStream::new(args.seed))?
        }
    };
    let mode = match args.mode {
        RicModeArg::Exact => RicMode::Exact,
        RicModeArg::MonteCarlo => RicMode::MonteCarlo { samples: args.samples, seed: args.seed },
    };
    let estimate = estimate_ric(&phi, args.k, mode)?;
    let report = serde_json::json!({
        "rows": phi.rows(),
        "cols": phi.cols(),
        "k": args.k,
        "value": estimate.value,
        "lower_bound_only": estimate.lower_bound_only,
        "supports_evaluated": estimate.supports_evaluated,
    });
    println!("{report}");
    Ok(ExitCode::SUCCESS)
}

fn plotdata(args: PlotdataArgs) -> Result<ExitCode> {
    let results = load_results_dir(&args.results)?;
    if results.is_empty() {
        return Err(Error::EmptyInput("no result files found"));
    }
    let kind = match args.kind {
        PlotKindArg::Regret => PlotKind::RegretVsTime,
        PlotKindArg::Exectime => PlotKind::ExecTimeVsT,
    };
    let table = emit_plot_data(&results, kind)?;
    fs::write(&args.out, table).map_err(|source| Error::Io { path: args.out.clone(), source })?;
    println!("wrote plot table to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn selftest(args: SelftestArgs) -> Result<ExitCode> {
    let mut failures = 0u32;
    let mut check = |name: &str, pass: bool, detail: String| {
        println!("selftest {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failures += 1;
        }
    };

    let delta = 0.05;
    let mut rng = RngStream::new(args.seed).derive(1);
    let chi_rate = chi_square_tail_selftest(256, args.trials, delta, &mut rng)?;
    check(
        "chi-square tail (m=256)",
        chi_rate <= delta,
        format!("exceedance {chi_rate:.4} vs delta {delta}"),
    );

    let mut rng = RngStream::new(args.seed).derive(2);
    let psd_rate = psd_tail_selftest(16, 64, args.trials, delta, &mut rng)?;
    check(
        "psd quadratic form (m=16, T=64)",
        psd_rate <= delta,
        format!("exceedance {psd_rate:.4} vs delta {delta}"),
    );

    // decomposition identities on a small noisy instance
    let spec = ScenarioSpec {
        m: 8,
        n: 12,
        k: 2,
        horizon: 16,
        u_law: osla::harness::SignalLaw::IidUniformNonzeros,
        noise: osla::harness::NoiseLaw::StandardGaussian,
        phi_scale: None,
        seed: args.seed.wrapping_add(3),
        rescale_u: true,
    };
    let stream = generate_stream(&spec)?;
    let mut rng = RngStream::new(args.seed).derive(4);
    let xs: Vec<_> = (0..16)
        .map(|_| {
            let support = rng.sample_support(12, 2).unwrap();
            let values = vec![rng.uniform(), rng.uniform()];
            osla::linalg::SparseVector::new(12, support, values).unwrap()
        })
        .collect();
    let (opt, _) = exact_opt(&stream.ys, &stream.phi, 2)?;
    let rep = regret_decomposition(&stream.us, &stream.ws, &xs, &stream.phi, opt)?;
    let identities_ok = rep.check_identities(1e-9).is_ok();
    check(
        "regret decomposition identities",
        identities_ok,
        format!("A+B+C = {:.9}, R_T = {:.9}", rep.a + rep.b + rep.c, rep.r_t),
    );

    // invocation counts over a short horizon
    let spec = ScenarioSpec { horizon: 256, ..spec };
    let mut inv_ok = true;
    let mut detail = String::new();
    for (variant, want) in [(FtaslVariant::Agile, 256u64), (FtaslVariant::Lazy, 9u64)] {
        let desc = PolicyDescriptor::Ftasl {
            variant,
            solver: SolverKind::Iht,
            step: None,
            tau_schedule: TauSchedule::Log2,
            name: None,
        };
        let result = run_experiment(&spec, &desc, &ExperimentOptions::default())?;
        let got = *result.trace.alg_invocations.last().unwrap();
        detail.push_str(&format!("{}={got} (want {want}) ", variant.name()));
        inv_ok &= got == want;
    }
    check("solver invocation counts (T=256)", inv_ok, detail.trim().to_string());

    // determinism of the numeric outputs
    let desc = PolicyDescriptor::Ftasl {
        variant: FtaslVariant::Lazy,
        solver: SolverKind::Htp,
        step: None,
        tau_schedule: TauSchedule::Log2,
        name: None,
    };
    let a = run_experiment(&spec, &desc, &ExperimentOptions::default())?;
    let b = run_experiment(&spec, &desc, &ExperimentOptions::default())?;
    check(
        "experiment determinism",
        a.trace.per_step_loss == b.trace.per_step_loss
            && a.trace.approx_regret == b.trace.approx_regret,
        "two identical runs compared".into(),
    );

    let _ = dyadic_checkpoints(1); // keep the import exercised in all builds
    if failures == 0 {
        println!("selftest: all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("selftest: {failures} check(s) failed");
        Ok(ExitCode::FAILURE)
    }
}
