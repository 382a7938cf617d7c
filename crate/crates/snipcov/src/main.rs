//! Command-line front end: simulation, mean and covariance fitting, FPCA,
//! and the Monte Carlo experiment harness. Every subcommand is
//! deterministic given its flags, echoes its resolved configuration to
//! stderr, and uses exit code 0 for success, 1 for user errors, and 2 for
//! numerical failures.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snipcov::basis::{BasisKind, BasisSpec};
use snipcov::covfit::{
    band_error, default_lambda_grid, default_p_grid, newton_fit, precompute_design,
    select_cov_tuning, CovFit, NewtonOptions,
};
use snipcov::experiments::{run_experiment, write_replicates_csv, write_summary_csv, ExperimentConfig};
use snipcov::fpca::eigenpairs;
use snipcov::mean::{cv_select_mean, default_q_grid, default_rho_grid, fit_mean, MeanFit};
use snipcov::pilot::{auto_bandwidth, pilot_covariance, DEFAULT_GRID_SIZE};
use snipcov::snippets::{
    simulate, CovScenario, MeanScenario, SimulationScenario, SnippetDataset, WeightScheme,
};
use snipcov::GramMatrices;

#[derive(Parser)]
#[command(name = "snipcov", about = "Mean and covariance estimation from functional snippets")]
struct Cli {
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a snippet dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit the penalized mean estimator.
    FitMean(FitMeanArgs),
    /// Fit the penalized covariance estimator.
    FitCov(FitCovArgs),
    /// Principal components of a fitted covariance.
    Fpca(FpcaArgs),
    /// Run a Monte Carlo experiment from a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Covariance scenario: gamma1 | gamma2 | gamma3 | gamma4.
    #[arg(long)]
    scenario: String,
    /// Mean scenario: mu1 | mu2.
    #[arg(long, default_value = "mu1")]
    mean: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 4.0)]
    snr: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BasisArgs {
    /// fourier | fourier-ext | legendre.
    #[arg(long)]
    basis: String,
    /// Extension margin; "auto" = 0.1 (only meaningful for fourier-ext).
    #[arg(long, default_value = "auto")]
    zeta: String,
}

#[derive(Args)]
struct FitMeanArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    basis: BasisArgs,
    /// Basis size, or "auto" for cross-validated selection.
    #[arg(long, default_value = "auto")]
    q: String,
    /// Penalty, or "auto".
    #[arg(long, default_value = "auto")]
    rho: String,
    /// obs | subj.
    #[arg(long, default_value = "obs")]
    scheme: String,
    /// Fold-assignment seed for auto selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitCovArgs {
    #[arg(long)]
    data: PathBuf,
    /// Mean-fit document produced by fit-mean.
    #[arg(long)]
    mean_fit: PathBuf,
    #[command(flatten)]
    basis: BasisArgs,
    /// Basis size, or "auto" for pilot-based tuning.
    #[arg(long, default_value = "auto")]
    p: String,
    /// Penalty, or "auto".
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// obs | subj.
    #[arg(long, default_value = "obs")]
    scheme: String,
    /// Also evaluate the fit on a G×G grid, written to <out>.grid.csv.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FpcaArgs {
    #[arg(long)]
    cov_fit: PathBuf,
    /// Number of components.
    #[arg(long)]
    k: usize,
    /// Eigenfunction evaluation grid size.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Output paths: <prefix>.eigen.json and <prefix>.eigenfunctions.csv.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

enum CliError {
    /// Bad flags, unreadable inputs, invalid parameter values.
    User(String),
    /// The numerics failed on valid input.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Numerical(m) => m,
        }
    }
}

fn user<E: std::fmt::Display>(e: E) -> CliError {
    CliError::User(e.to_string())
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are success, anything else is a user error
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::FitMean(args) => cmd_fit_mean(args),
        Command::FitCov(args) => cmd_fit_cov(args),
        Command::Fpca(args) => cmd_fpca(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn parse_mean_scenario(name: &str) -> Result<MeanScenario, CliError> {
    match name {
        "mu1" => Ok(MeanScenario::Mu1),
        "mu2" => Ok(MeanScenario::Mu2),
        other => Err(CliError::User(format!("unknown mean scenario '{other}'"))),
    }
}

fn parse_cov_scenario(name: &str) -> Result<CovScenario, CliError> {
    match name {
        "gamma1" => Ok(CovScenario::Gamma1),
        "gamma2" => Ok(CovScenario::Gamma2),
        "gamma3" => Ok(CovScenario::Gamma3),
        "gamma4" => Ok(CovScenario::Gamma4),
        other => Err(CliError::User(format!("unknown covariance scenario '{other}'"))),
    }
}

fn parse_scheme(name: &str) -> Result<WeightScheme, CliError> {
    match name {
        "obs" => Ok(WeightScheme::Obs),
        "subj" => Ok(WeightScheme::Subj),
        other => Err(CliError::User(format!("unknown weight scheme '{other}'"))),
    }
}

fn parse_basis(args: &BasisArgs) -> Result<BasisSpec<f64>, CliError> {
    let kind = match args.basis.as_str() {
        "fourier" => BasisKind::Fourier,
        "fourier-ext" => BasisKind::FourierExtension,
        "legendre" => BasisKind::Legendre,
        other => return Err(CliError::User(format!("unknown basis '{other}'"))),
    };
    let zeta = match (kind, args.zeta.as_str()) {
        (BasisKind::FourierExtension, "auto") => 0.1,
        (_, "auto") => 0.0,
        (_, text) => text
            .parse::<f64>()
            .map_err(|_| CliError::User(format!("--zeta must be a number or 'auto', got '{text}'")))?,
    };
    BasisSpec::new(kind, zeta).map_err(user)
}

fn parse_auto<V: std::str::FromStr>(text: &str, flag: &str) -> Result<Option<V>, CliError> {
    if text == "auto" {
        return Ok(None);
    }
    text.parse::<V>()
        .map(Some)
        .map_err(|_| CliError::User(format!("--{flag} must be a value or 'auto', got '{text}'")))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mean = parse_mean_scenario(&args.mean)?;
    let covariance = parse_cov_scenario(&args.scenario)?;
    let mut scenario = SimulationScenario::new(mean, covariance, args.delta, args.n);
    scenario.snr = args.snr;
    scenario.validate().map_err(CliError::User)?;
    let sigma2 = covariance.noise_variance(args.snr);
    eprintln!(
        "simulate: scenario={} mean={} n={} delta={} snr={} sigma2={:.6e} seed={}",
        args.scenario, args.mean, args.n, args.delta, args.snr, sigma2, args.seed
    );
    let data = simulate(&scenario, args.seed).map_err(numerical)?;
    data.write_csv(&args.out).map_err(user)?;
    Ok(())
}

fn cmd_fit_mean(args: FitMeanArgs) -> Result<(), CliError> {
    let spec = parse_basis(&args.basis)?;
    let scheme = parse_scheme(&args.scheme)?;
    let data = SnippetDataset::<f64>::load_csv(&args.data).map_err(user)?;
    let q = parse_auto::<usize>(&args.q, "q")?;
    let rho = parse_auto::<f64>(&args.rho, "rho")?;

    let (q, rho) = match (q, rho) {
        (Some(q), Some(rho)) => (q, rho),
        _ => {
            let q_grid = q.map(|v| vec![v]).unwrap_or_else(default_q_grid);
            let rho_grid = rho.map(|v| vec![v]).unwrap_or_else(default_rho_grid);
            let selection =
                cv_select_mean(&data, &spec, &q_grid, &rho_grid, 5, scheme, args.seed)
                    .map_err(numerical)?;
            eprintln!("fit-mean: cv table (q, rho, error):");
            for (q, rho, err) in &selection.table {
                eprintln!("  {q}\t{rho:.1e}\t{err:.6e}");
            }
            (selection.q, selection.rho)
        }
    };
    eprintln!(
        "fit-mean: basis={} zeta={} q={} rho={:.3e} scheme={}",
        args.basis.basis,
        spec.zeta(),
        q,
        rho,
        args.scheme
    );
    let fit = fit_mean(&data, &spec, q, rho, scheme).map_err(numerical)?;
    fit.save(&args.out).map_err(user)?;
    Ok(())
}

fn cmd_fit_cov(args: FitCovArgs) -> Result<(), CliError> {
    let spec = parse_basis(&args.basis)?;
    let scheme = parse_scheme(&args.scheme)?;
    let data = SnippetDataset::<f64>::load_csv(&args.data).map_err(user)?;
    let mean = MeanFit::<f64>::load(&args.mean_fit).map_err(user)?;
    let mean_fn = |t: f64| mean.eval(t).unwrap_or(f64::NAN);
    let p = parse_auto::<usize>(&args.p, "p")?;
    let lambda = parse_auto::<f64>(&args.lambda, "lambda")?;
    let opts = NewtonOptions::default();

    let fit: CovFit<f64> = match (p, lambda) {
        (Some(p), Some(lambda)) => {
            eprintln!(
                "fit-cov: basis={} zeta={} p={} lambda={:.3e} scheme={}",
                args.basis.basis,
                spec.zeta(),
                p,
                lambda,
                args.scheme
            );
            let design =
                precompute_design(&data, &mean_fn, &spec, p, scheme).map_err(numerical)?;
            newton_fit(&design, lambda, &opts).map_err(numerical)?
        }
        (p, lambda) => {
            let delta_hat = data.estimate_delta().map_err(user)?;
            let raw = data.raw_covariances(&mean_fn, scheme);
            let pilot = pilot_covariance(
                &raw.pairs,
                DEFAULT_GRID_SIZE,
                Some(auto_bandwidth(delta_hat)),
                delta_hat,
            )
            .map_err(numerical)?;
            let p_grid = p.map(|v| vec![v]).unwrap_or_else(default_p_grid);
            let lambda_grid = lambda.map(|v| vec![v]).unwrap_or_else(default_lambda_grid);
            let selection = select_cov_tuning(
                &data, &mean_fn, &spec, &p_grid, &lambda_grid, &pilot, scheme, &opts,
            )
            .map_err(numerical)?;
            eprintln!("fit-cov: tuning table (p, lambda, band error):");
            for (p, lambda, err) in &selection.table {
                eprintln!("  {p}\t{lambda:.1e}\t{err:.6e}");
            }
            eprintln!(
                "fit-cov: basis={} zeta={} delta_hat={:.4} selected p={} lambda={:.3e} band_err={:.6e}",
                args.basis.basis,
                spec.zeta(),
                delta_hat,
                selection.p,
                selection.lambda,
                band_error(&selection.fit, &pilot)
            );
            selection.fit
        }
    };
    eprintln!(
        "fit-cov: iterations={} termination={:?} |grad|={:.3e} objective={:.6e}",
        fit.diagnostics.iterations,
        fit.diagnostics.termination,
        fit.diagnostics.final_gradient_norm,
        fit.diagnostics.final_objective
    );
    let stalled = fit.diagnostics.termination == snipcov::covfit::TerminationReason::Stalled;
    fit.save(&args.out).map_err(user)?;
    if let Some(g) = args.grid {
        if g < 2 {
            return Err(CliError::User("--grid must be at least 2".into()));
        }
        let grid_path = grid_csv_path(&args.out);
        write_cov_grid(&fit, g, &grid_path)?;
    }
    if stalled {
        return Err(CliError::Numerical(
            "solver stalled; diagnostics preserved in the output document".into(),
        ));
    }
    Ok(())
}

fn grid_csv_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".grid.csv");
    PathBuf::from(name)
}

fn write_cov_grid(fit: &CovFit<f64>, g: usize, path: &Path) -> Result<(), CliError> {
    let ts: Vec<f64> = (0..g).map(|i| i as f64 / (g - 1) as f64).collect();
    let values = fit.eval_grid(&ts).map_err(numerical)?;
    let mut file = File::create(path).map_err(user)?;
    writeln!(file, "s,t,value").map_err(user)?;
    for (j, &s) in ts.iter().enumerate() {
        for (l, &t) in ts.iter().enumerate() {
            writeln!(file, "{:.16e},{:.16e},{:.16e}", s, t, values[(j, l)]).map_err(user)?;
        }
    }
    Ok(())
}

fn cmd_fpca(args: FpcaArgs) -> Result<(), CliError> {
    if args.grid < 2 {
        return Err(CliError::User("--grid must be at least 2".into()));
    }
    let fit = CovFit::<f64>::load(&args.cov_fit).map_err(user)?;
    if args.k == 0 || args.k > fit.p {
        return Err(CliError::User(format!(
            "--k must lie in 1..={}, got {}",
            fit.p, args.k
        )));
    }
    eprintln!(
        "fpca: p={} k={} grid={} basis={:?}",
        fit.p,
        args.k,
        args.grid,
        fit.spec.kind()
    );
    let grams = GramMatrices::new(&fit.spec, fit.p);
    let system = eigenpairs(&fit, &grams, args.k).map_err(numerical)?;

    let eigen_path = format!("{}.eigen.json", args.out_prefix);
    let doc = serde_json::json!({
        "eigenvalues": system.eigenvalues,
        "fractions": system.fractions,
    });
    std::fs::write(&eigen_path, serde_json::to_string_pretty(&doc).map_err(user)?)
        .map_err(user)?;

    let fn_path = format!("{}.eigenfunctions.csv", args.out_prefix);
    let mut file = File::create(&fn_path).map_err(user)?;
    writeln!(file, "t,component,value").map_err(user)?;
    for i in 0..args.grid {
        let t = i as f64 / (args.grid - 1) as f64;
        for k in 0..args.k {
            let v = system.eval(&fit, k, t).map_err(numerical)?;
            writeln!(file, "{:.16e},{},{:.16e}", t, k + 1, v).map_err(user)?;
        }
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let config = ExperimentConfig::load(&args.config).map_err(user)?;
    eprintln!(
        "experiment: kind={:?} cells={}x{}x{} replicates={} master_seed={}",
        config.kind,
        config.ns.len(),
        config.deltas.len(),
        config.variants.len(),
        config.replicates,
        config.master_seed
    );
    std::fs::create_dir_all(&args.out_dir).map_err(user)?;
    let results = run_experiment(&config).map_err(numerical)?;
    for r in &results {
        eprintln!(
            "  {} n={} delta={} {}: mise={:.6e} se={:.3e} fail={}",
            r.scenario,
            r.n,
            r.delta,
            r.variant.label(),
            r.mise,
            r.se(),
            r.n_fail
        );
    }
    write_summary_csv(&results, &args.out_dir.join("summary.csv")).map_err(user)?;
    write_replicates_csv(&results, &args.out_dir.join("replicates.csv")).map_err(user)?;
    Ok(())
}
