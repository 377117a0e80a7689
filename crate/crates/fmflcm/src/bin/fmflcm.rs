//! Command-line interface: simulate, fit, tune, evaluate, bootstrap, and
//! benchmark finite mixtures of functional linear concurrent models.

use clap::{Args, Parser, Subcommand, ValueEnum};
use fmflcm::error::{Error, Result};
use fmflcm::io::{
    self, load_long_csv, load_report, load_truth, write_coefficient_curves, write_long_csv,
    write_report, write_truth, FitReport, TruthSidecar,
};
use fmflcm::metrics;
use fmflcm::penalty::{PenaltyConfig, PenaltyKind};
use fmflcm::rem::{
    self, bootstrap_bands, EStepMode, InitSpec, InitStrategy, LambdaRule, StopSpec,
};
use fmflcm::simgen::{self, generate_dataset, SimConfig};
use fmflcm::tuning::{self, basis_for, TuningGrid};
use rayon::prelude::*;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fmflcm",
    about = "Model-based clustering and variable selection for functional concurrent regression mixtures",
    version
)]
struct Cli {
    /// Worker threads (falls back to FMFLCM_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its truth sidecar.
    Simulate(SimulateArgs),
    /// Fit one model configuration to a dataset.
    Fit(FitArgs),
    /// Select (rho, r) by AIC and optionally K by BIC.
    Tune(TuneArgs),
    /// Score a fit report against a truth sidecar.
    Evaluate(EvaluateArgs),
    /// Wild-bootstrap confidence bands around a fit.
    Bootstrap(BootstrapArgs),
    /// Replicated simulation benchmark with averaged metrics.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PenaltyArg {
    Fs,
    FsNet,
    FgsNet,
    Rp,
}

impl PenaltyArg {
    fn kind(self) -> PenaltyKind {
        match self {
            PenaltyArg::Fs => PenaltyKind::Fs,
            PenaltyArg::FsNet => PenaltyKind::FsNet,
            PenaltyArg::FgsNet => PenaltyKind::FgsNet,
            PenaltyArg::Rp => PenaltyKind::Rp,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InitArg {
    Random,
    Kmeans,
    Truth,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(long, default_value_t = 12.0)]
    snr: f64,
    #[arg(long, default_value_t = 10)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Output truth sidecar JSON (default: <out>.truth.json).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct FitFlags {
    /// Input dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = PenaltyArg::FgsNet)]
    penalty: PenaltyArg,
    #[arg(long = "K", default_value_t = 3)]
    k: usize,
    /// Fixed lambda; omitted => per-M-step lambda path (RP requires this).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 1e-2)]
    r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    n_starts: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    init: InitArg,
    /// Truth sidecar supplying labels for --init truth.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Log-transform the response and normalize covariates before fitting.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    log_response: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    flags: FitFlags,
    /// Output fit report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional coefficient-curve CSV (101-point grid).
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    flags: FitFlags,
    /// Comma-separated rho grid.
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    grid_rho: String,
    /// Comma-separated r grid.
    #[arg(long, default_value = "1e-4,1e-2,1")]
    grid_r: String,
    /// Comma-separated K grid; when given, K is selected by BIC.
    #[arg(long)]
    grid_k: Option<String>,
    #[arg(long, default_value_t = 30)]
    grid_lambda_length: usize,
    #[arg(long, default_value_t = 0.01)]
    grid_lambda_floor: f64,
    /// Output winning-fit report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-cell criterion table CSV.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fit report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// External labels file (one 0-based label per line) scored for ARI only.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    truth: PathBuf,
    /// Output metrics JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    flags: FitFlags,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output band CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 180)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(long, default_value_t = 12.0)]
    snr: f64,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated methods: fgs-net,fs-net,fs,rp.
    #[arg(long, default_value = "fgs-net,fs-net,fs,rp")]
    methods: String,
    /// Fixed K for penalized methods; omitted => BIC over --grid-k.
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long, default_value = "1,2,3,4,5")]
    grid_k: String,
    #[arg(long, default_value = "1.0")]
    grid_rho: String,
    #[arg(long, default_value = "1e-2")]
    grid_r: String,
    #[arg(long, default_value_t = 30)]
    grid_lambda_length: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Output averaged Table-style CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-replicate CSV.
    #[arg(long)]
    per_replicate: Option<PathBuf>,
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad {what} entry {tok:?}")))
        })
        .collect()
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad {what} entry {tok:?}")))
        })
        .collect()
}

fn stop_spec(tol: f64, max_iter: usize) -> StopSpec<f64> {
    StopSpec {
        tol,
        max_iter,
        estep: EStepMode::Product,
    }
}

fn init_spec(flags: &FitFlags) -> Result<InitSpec> {
    match flags.init {
        InitArg::Random => Ok(InitSpec::random(flags.seed)),
        InitArg::Kmeans => Ok(InitSpec {
            strategy: InitStrategy::KmeansLite,
            seed: flags.seed,
        }),
        InitArg::Truth => {
            let path = flags.truth.as_ref().ok_or_else(|| {
                Error::InvalidInput("--init truth requires --truth <sidecar>".into())
            })?;
            Ok(InitSpec::labels(load_truth(path)?.labels))
        }
    }
}

fn load_fit_data(flags: &FitFlags) -> Result<fmflcm::FunctionalDataset> {
    let data = load_long_csv(&flags.data)?;
    if flags.normalize || flags.log_response {
        let (normalized, record) = io::normalize_dataset(&data, flags.log_response)?;
        for w in &record.warnings {
            eprintln!("warning: {w}");
        }
        Ok(normalized)
    } else {
        Ok(data)
    }
}

fn run_fit(flags: &FitFlags) -> Result<(fmflcm::FunctionalDataset, fmflcm::SplineBasis, fmflcm::FitResult)> {
    let data = load_fit_data(flags)?;
    let basis = basis_for(&data, flags.r)?;
    let init = init_spec(flags)?;
    let stop = stop_spec(flags.tol, flags.max_iter);
    let kind = flags.penalty.kind();
    let (config, rule) = match flags.lambda {
        Some(lambda) => (
            PenaltyConfig::new(kind, lambda, flags.rho, flags.r),
            LambdaRule::Fixed,
        ),
        None => {
            if matches!(kind, PenaltyKind::Rp) {
                return Err(Error::InvalidInput(
                    "--penalty rp requires a fixed --lambda".into(),
                ));
            }
            (
                PenaltyConfig::new(kind, 1.0, flags.rho, flags.r),
                LambdaRule::default_path(),
            )
        }
    };
    let fit = if matches!(flags.init, InitArg::Random) && flags.n_starts > 1 {
        rem::fit_multi_start(
            &data,
            &basis,
            flags.k,
            &config,
            &rule,
            flags.seed,
            flags.n_starts,
            &stop,
        )?
    } else {
        rem::fit(&data, &basis, flags.k, &config, &rule, &init, &stop)?
    };
    Ok((data, basis, fit))
}

#[derive(Serialize)]
struct EvalOutput {
    ari: f64,
    c: Option<usize>,
    ic: Option<usize>,
    mse: Option<f64>,
}

fn evaluate_report(report: &FitReport, truth: &TruthSidecar) -> Result<EvalOutput> {
    let (basis, params) = report.reconstruct()?;
    let ari = metrics::ari(&report.labels, &truth.labels)?;
    let kt = truth.sigma2.len().max(truth.labels.iter().max().map_or(0, |&z| z + 1));
    if params.k != kt {
        // Cluster count mismatch: alignment-based metrics are undefined;
        // report ARI only.
        return Ok(EvalOutput {
            ari,
            c: None,
            ic: None,
            mse: None,
        });
    }
    let perm = metrics::align_clusters(&report.labels, &truth.labels, params.k)?;
    let (c, ic) = metrics::selection_counts(&params, &truth.active_set);
    let mse = metrics::coef_mse(&params, &basis, |j, k, t| simgen::beta_true(j, k, t), &perm)?;
    Ok(EvalOutput {
        ari,
        c: Some(c),
        ic: Some(ic),
        mse: Some(mse),
    })
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
struct RepMetrics {
    ari: f64,
    c: f64,
    ic: f64,
    mse: f64,
    k: f64,
    converged: f64,
}

fn bench_one(
    method: PenaltyKind,
    sim: &simgen::SimData,
    args: &BenchArgs,
    grid: &TuningGrid<f64>,
    seed: u64,
) -> Result<(fmflcm::FitResult, f64)> {
    let stop = stop_spec(1e-6, args.max_iter);
    match method {
        PenaltyKind::Rp => {
            // Baseline protocol: true-label initialization, K = 3 fixed,
            // ridge (FS-Net, rho = 0) with lambda chosen by a BIC-style
            // score conditional on the initial labels.
            let basis = basis_for(&sim.data, grid.r_grid[0])?;
            let fit = rem::fit_ridge_baseline(
                &sim.data,
                &basis,
                3,
                &sim.labels,
                &rem::ridge_baseline_grid(),
                grid.r_grid[0],
                &stop,
            )?;
            let k = fit.params.k as f64;
            Ok((fit, k))
        }
        kind => {
            let init = InitSpec::random(seed);
            match args.k {
                Some(k) => {
                    let (_, _, fit) =
                        tuning::select_rho_r(&sim.data, k, kind, grid, &init, &stop)?;
                    Ok((fit, k as f64))
                }
                None => {
                    let (k, fit) = tuning::select_k(&sim.data, kind, grid, &init, &stop)?;
                    Ok((fit, k as f64))
                }
            }
        }
    }
}

fn score_fit(fit: &fmflcm::FitResult, basis: &fmflcm::SplineBasis, sim: &simgen::SimData) -> RepMetrics {
    let ari = metrics::ari(&fit.labels, &sim.labels).unwrap_or(0.0);
    let mut out = RepMetrics {
        ari,
        k: fit.params.k as f64,
        converged: fit.converged as u8 as f64,
        ..Default::default()
    };
    let (c, ic) = metrics::selection_counts(&fit.params, &simgen::true_active_set());
    out.c = c as f64;
    out.ic = ic as f64;
    if fit.params.k == 3 {
        if let Ok(perm) = metrics::align_clusters(&fit.labels, &sim.labels, 3) {
            if let Ok(mse) = metrics::coef_mse(&fit.params, basis, |j, k, t| simgen::beta_true(j, k, t), &perm) {
                out.mse = mse;
            }
        }
    } else {
        out.mse = f64::NAN;
    }
    out
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut config = SimConfig::new(args.n, args.p, args.alpha, args.seed);
    config.snr = args.snr;
    config.s = args.s;
    let sim = generate_dataset(&config)?;
    write_long_csv(&args.out, &sim.data)?;
    let truth_path = args
        .truth
        .clone()
        .unwrap_or_else(|| args.out.with_extension("truth.json"));
    write_truth(
        &truth_path,
        &TruthSidecar {
            labels: sim.labels.clone(),
            sigma2: sim.sigma2.clone(),
            active_set: simgen::true_active_set(),
            mean_signal_energy: sim.mean_signal_energy,
        },
    )?;
    println!(
        "wrote {} subjects (p = {}) to {} with truth sidecar {}",
        args.n,
        args.p,
        args.out.display(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let (_, basis, fit) = run_fit(&args.flags)?;
    let report = FitReport::from_fit(&fit, &basis);
    write_report(&args.out, &report)?;
    if let Some(curves) = &args.curves {
        write_coefficient_curves(curves, &fit.params, &basis, 101)?;
    }
    println!(
        "fit: K = {}, loglik = {:.4}, AIC = {:.4}, BIC = {:.4}, support size = {}, converged = {}",
        fit.params.k,
        fit.loglik,
        fit.aic,
        fit.bic,
        fit.support.len(),
        fit.converged
    );
    Ok(())
}

#[derive(Serialize)]
struct TuneCell {
    k: usize,
    rho: f64,
    r: f64,
    lambda: f64,
    aic: f64,
    bic: f64,
    converged: bool,
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let data = load_fit_data(&args.flags)?;
    let kind = args.flags.penalty.kind();
    if matches!(kind, PenaltyKind::Rp) {
        return Err(Error::InvalidInput(
            "tune supports the sparsity-pursuing penalties; fit rp at fixed lambda instead".into(),
        ));
    }
    let mut grid = TuningGrid::<f64>::default();
    grid.rho_grid = parse_f64_list(&args.grid_rho, "--grid-rho")?;
    grid.r_grid = parse_f64_list(&args.grid_r, "--grid-r")?;
    grid.lambda_path_length = args.grid_lambda_length;
    grid.lambda_floor_frac = args.grid_lambda_floor;
    let k_grid = match &args.grid_k {
        Some(text) => Some(parse_usize_list(text, "--grid-k")?),
        None => None,
    };
    let init = init_spec(&args.flags)?;
    let stop = stop_spec(args.flags.tol, args.flags.max_iter);

    let mut cells: Vec<TuneCell> = Vec::new();
    let winner = match k_grid {
        None => {
            let (rho, r, fit) =
                tuning::select_rho_r(&data, args.flags.k, kind, &grid, &init, &stop)?;
            println!("selected rho = {rho}, r = {r} by AIC = {:.4}", fit.aic);
            fit
        }
        Some(ks) => {
            grid.k_grid = ks;
            let (k, fit) = tuning::select_k(&data, kind, &grid, &init, &stop)?;
            println!(
                "selected K = {k} by BIC = {:.4} (rho = {}, r = {})",
                fit.bic, fit.chosen.rho, fit.chosen.r
            );
            fit
        }
    };
    if let Some(table) = &args.table {
        // Re-evaluate the grid cells for the report table at the winning K.
        for &r in &grid.r_grid {
            for &rho in &grid.rho_grid {
                if let Ok(fit) = tuning::fit_with_lambda_path(
                    &data,
                    winner.params.k,
                    kind,
                    rho,
                    r,
                    &init,
                    &stop,
                    &grid,
                ) {
                    cells.push(TuneCell {
                        k: winner.params.k,
                        rho,
                        r,
                        lambda: fit.chosen.lambda,
                        aic: fit.aic,
                        bic: fit.bic,
                        converged: fit.converged,
                    });
                }
            }
        }
        let mut buf = Vec::new();
        {
            let mut writer = csv::Writer::from_writer(&mut buf);
            writer.write_record(["K", "rho", "r", "lambda", "aic", "bic", "converged"])?;
            for cell in &cells {
                writer.write_record([
                    cell.k.to_string(),
                    cell.rho.to_string(),
                    cell.r.to_string(),
                    format!("{:.6e}", cell.lambda),
                    format!("{:.6}", cell.aic),
                    format!("{:.6}", cell.bic),
                    cell.converged.to_string(),
                ])?;
            }
            writer.flush()?;
        }
        io::atomic_write(table, &buf)?;
    }
    let basis = basis_for(&data, winner.chosen.r)?;
    write_report(&args.out, &FitReport::from_fit(&winner, &basis))?;
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let truth = load_truth(&args.truth)?;
    let output = match (&args.report, &args.labels) {
        (Some(report_path), _) => {
            let report = load_report(report_path)?;
            evaluate_report(&report, &truth)?
        }
        (None, Some(labels_path)) => {
            let text = std::fs::read_to_string(labels_path)?;
            let labels: Vec<usize> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidInput(format!("bad label line {l:?}")))
                })
                .collect::<Result<_>>()?;
            EvalOutput {
                ari: metrics::ari(&labels, &truth.labels)?,
                c: None,
                ic: None,
                mse: None,
            }
        }
        (None, None) => {
            return Err(Error::InvalidInput(
                "evaluate needs --report or --labels".into(),
            ))
        }
    };
    let json = serde_json::to_string_pretty(&output)?;
    match &args.out {
        Some(path) => io::atomic_write(path, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_bootstrap(args: &BootstrapArgs) -> Result<()> {
    let (data, basis, fit) = run_fit(&args.flags)?;
    let bands = bootstrap_bands(
        &fit,
        &data,
        &basis,
        args.replicates,
        args.level,
        args.flags.seed,
    )?;
    let mut buf = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        writer.write_record(["covariate", "cluster", "time", "lower", "estimate", "upper"])?;
        let g = bands.times.len();
        for j in 0..bands.p {
            for c in 0..bands.k {
                let (lower, upper) = bands.band(j, c);
                let start = (j * bands.k + c) * g;
                for (gi, &t) in bands.times.iter().enumerate() {
                    writer.write_record([
                        format!("{}", j + 1),
                        format!("{}", c + 1),
                        format!("{t:.6}"),
                        format!("{:.10e}", lower[gi]),
                        format!("{:.10e}", bands.estimate[start + gi]),
                        format!("{:.10e}", upper[gi]),
                    ])?;
                }
            }
        }
        writer.flush()?;
    }
    io::atomic_write(&args.out, &buf)?;
    println!(
        "bootstrap ({}): {} of {} replicates used, level {:.2}",
        bands.method, bands.replicates_used, args.replicates, args.level
    );
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let methods: Vec<PenaltyKind> = args
        .methods
        .split(',')
        .map(|m| io::penalty_from_name(m.trim()))
        .collect::<Result<_>>()?;
    let mut grid = TuningGrid::<f64>::default();
    grid.rho_grid = parse_f64_list(&args.grid_rho, "--grid-rho")?;
    grid.r_grid = parse_f64_list(&args.grid_r, "--grid-r")?;
    grid.k_grid = parse_usize_list(&args.grid_k, "--grid-k")?;
    grid.lambda_path_length = args.grid_lambda_length;

    let rows: Vec<Vec<(String, RepMetrics)>> = (0..args.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut config = SimConfig::new(
                args.n,
                args.p,
                args.alpha,
                args.seed.wrapping_add(rep as u64),
            );
            config.snr = args.snr;
            let sim = generate_dataset(&config)?;
            let mut row = Vec::new();
            for &method in &methods {
                let name = io::penalty_name(method).to_string();
                match bench_one(method, &sim, args, &grid, args.seed.wrapping_add(rep as u64)) {
                    Ok((fit, _)) => {
                        let basis = basis_for(&sim.data, fit.chosen.r)?;
                        row.push((name, score_fit(&fit, &basis, &sim)));
                    }
                    Err(e) => {
                        eprintln!("replicate {rep}, method {name}: {e}");
                        row.push((
                            name,
                            RepMetrics {
                                mse: f64::NAN,
                                ..Default::default()
                            },
                        ));
                    }
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    if let Some(per_rep) = &args.per_replicate {
        let mut buf = Vec::new();
        {
            let mut writer = csv::Writer::from_writer(&mut buf);
            writer.write_record(["replicate", "method", "ari", "c", "ic", "mse", "k", "converged"])?;
            for (rep, row) in rows.iter().enumerate() {
                for (name, m) in row {
                    writer.write_record([
                        rep.to_string(),
                        name.clone(),
                        format!("{:.6}", m.ari),
                        format!("{}", m.c),
                        format!("{}", m.ic),
                        format!("{:.6}", m.mse),
                        format!("{}", m.k),
                        format!("{}", m.converged),
                    ])?;
                }
            }
            writer.flush()?;
        }
        io::atomic_write(per_rep, &buf)?;
    }

    // Average per method; MSE averaged over replicates where it is defined.
    let mut buf = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        writer.write_record(["method", "ari", "c", "ic", "mse", "mean_k", "converged_frac"])?;
        for (mi, &method) in methods.iter().enumerate() {
            let name = io::penalty_name(method);
            let reps: Vec<&RepMetrics> = rows.iter().map(|row| &row[mi].1).collect();
            let nrep = reps.len() as f64;
            let mean = |f: fn(&RepMetrics) -> f64| reps.iter().map(|m| f(m)).sum::<f64>() / nrep;
            let mse_vals: Vec<f64> = reps.iter().map(|m| m.mse).filter(|v| v.is_finite()).collect();
            let mse = if mse_vals.is_empty() {
                f64::NAN
            } else {
                mse_vals.iter().sum::<f64>() / mse_vals.len() as f64
            };
            writer.write_record([
                name.to_string(),
                format!("{:.4}", mean(|m| m.ari)),
                format!("{:.2}", mean(|m| m.c)),
                format!("{:.2}", mean(|m| m.ic)),
                format!("{:.4}", mse),
                format!("{:.2}", mean(|m| m.k)),
                format!("{:.2}", mean(|m| m.converged)),
            ])?;
            println!(
                "{name}: ARI {:.3}, C {:.2}, IC {:.2}, MSE {:.3}",
                mean(|m| m.ari),
                mean(|m| m.c),
                mean(|m| m.ic),
                mse
            );
        }
        writer.flush()?;
    }
    io::atomic_write(&args.out, &buf)?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("FMFLCM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }
    let outcome = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Bootstrap(args) => cmd_bootstrap(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
