use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ma_chanest::channel::{generate_channel, PathAngles};
use ma_chanest::config::{load_config, RunConfig};
use ma_chanest::cp::greedy_match;
use ma_chanest::estimate::{run_algorithm1, EstimatorOptions};
use ma_chanest::experiment::{aggregate, overhead, run_sweep, write_rows_csv, write_summary_csv, RunOptions};
use ma_chanest::pilot::{build_pilot_plan, simulate};
use ma_chanest::rng::stream;

/// Tensor-decomposition channel estimation for movable-antenna MIMO.
#[derive(Parser)]
#[command(name = "ma-tensor", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `run`.
    #[arg(long, global = true, env = "MA_TENSOR_THREADS")]
    threads: Option<usize>,
    /// Output directory for `run`, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Debug logging plus per-iteration ALS residuals (CSV) on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write rows.csv and summary.csv.
    Run,
    /// Validate the configuration and report uniqueness and pilot overhead.
    Check,
    /// Estimate one noiseless channel and compare recovered angles to the truth.
    Demo,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ma_chanest::config::parse_config("", "<defaults>")?,
    };
    if let Some(seed) = cli.seed {
        cfg.sweep.base.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if cli.config.is_none() {
        anyhow::bail!("`run` needs --config");
    }
    let cfg = load(cli)?;
    if cli.threads == Some(0) {
        anyhow::bail!("--threads must be at least 1");
    }
    let opts = RunOptions {
        threads: cli.threads,
        record_wall_time: cfg.output.wall_time,
        trace: cli.verbose,
    };
    let rows = run_sweep(&cfg.sweep, &opts)?;
    let summary = aggregate(&rows)?;
    let dir = cli.out.clone().unwrap_or(cfg.output.dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows_path = dir.join("rows.csv");
    write_rows_csv(fs::File::create(&rows_path).with_context(|| format!("creating {}", rows_path.display()))?, &rows)?;
    let summary_path = dir.join("summary.csv");
    write_summary_csv(fs::File::create(&summary_path).with_context(|| format!("creating {}", summary_path.display()))?, &summary)?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<8} {:>8} {:>7} {:>7} {:>6} {:>12} {:>12}", "estim", "snr_db", "beta_t", "beta_r", "trials", "median", "mean")?;
    for s in &summary {
        writeln!(
            out,
            "{:<8} {:>8} {:>7} {:>7} {:>6} {:>12.4e} {:>12.4e}",
            s.estimator.as_str(),
            s.snr_db,
            s.beta_t,
            s.beta_r,
            s.trials,
            s.median_nmse,
            s.mean_nmse
        )?;
    }
    writeln!(out, "wrote {} and {}", rows_path.display(), summary_path.display())?;
    Ok(())
}

fn check(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let spec = &cfg.sweep;
    let mut out = std::io::stdout().lock();
    writeln!(out, "configuration ok: {} grid points x {} trials", spec.grid_points().len(), spec.trials)?;
    for &bt in &spec.beta_t_grid {
        for &br in &spec.beta_r_grid {
            let sc = spec.scenario_at(spec.base.snr_db, bt, br)?;
            let r = overhead(&sc)?;
            let verdict = |ok: bool| if ok { "satisfied" } else { "violated" };
            writeln!(out, "beta_t = {bt}, beta_r = {br}")?;
            writeln!(out, "  G^t = {}, G^r = {}", r.tx_grid_points, r.rx_grid_points)?;
            writeln!(
                out,
                "  Tx probes I = {} ({}x{}), Rx probes J = {} ({}x{})",
                r.tx_probes, sc.tx_pilot_area[0], sc.tx_pilot_area[1], r.rx_probes, sc.rx_pilot_area[0], sc.rx_pilot_area[1]
            )?;
            writeln!(out, "  Kruskal stage 1: {}, stage 2: {}", verdict(r.tx_unique), verdict(r.rx_unique))?;
            writeln!(
                out,
                "  pilot symbols I + (J/N)*M = {} vs exhaustive C(G^t,M)C(G^r,N)/N = 10^{:.2}",
                r.pilot_symbols, r.exhaustive_log10
            )?;
        }
    }
    Ok(())
}

/// Largest angle error after pairing each true path with an estimate.
fn matched_errors(truth: &PathAngles, est: &PathAngles) -> Vec<(usize, Option<usize>, f64)> {
    let dist = |e: usize, t: usize| (truth.theta[t] - est.theta[e]).hypot(truth.phi[t] - est.phi[e]);
    greedy_match(|e, t| -dist(e, t), est.len(), truth.len())
        .into_iter()
        .enumerate()
        .map(|(t, e)| (t, e, e.map_or(f64::INFINITY, |e| dist(e, t))))
        .collect()
}

fn demo(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let spec = &cfg.sweep;
    let sc = spec.scenario_at(f64::INFINITY, spec.beta_t_grid[0], spec.beta_r_grid[0])?;
    let plan = build_pilot_plan(&sc)?;
    let ch = generate_channel(&sc, &mut stream(sc.seed, &[0xDE30]))?;
    let obs = simulate(&plan, &ch, &sc, &mut stream(sc.seed, &[0xDE31]))?;
    let opts = EstimatorOptions {
        als: spec.als.clone(),
        ..EstimatorOptions::default()
    };
    let mut res = run_algorithm1(&obs, &plan, &sc, &opts)?;
    let nmse = res.score_full_grid(&ch, &sc)?;
    if cli.verbose {
        if let Some(r) = &res.als_reports {
            r.tx.write_trace_csv(std::io::stderr().lock(), "demo:tx")?;
            r.rx.write_trace_csv(std::io::stderr().lock(), "demo:rx")?;
        }
    }
    let mut out = std::io::stdout().lock();
    let mut worst: f64 = 0.0;
    for (side, truth, est) in [("AoD", &ch.aod, &res.angles.tx), ("AoA", &ch.aoa, &res.angles.rx)] {
        writeln!(out, "{side}  {:>10} {:>10}  {:>10} {:>10}  {:>9}", "theta", "phi", "theta_hat", "phi_hat", "error")?;
        for (t, e, err) in matched_errors(truth, est) {
            worst = worst.max(err);
            let (th, ph) = e.map_or((f64::NAN, f64::NAN), |e| (est.theta[e], est.phi[e]));
            writeln!(out, "path {t}  {:>10.6} {:>10.6}  {:>10.6} {:>10.6}  {:>9.2e}", truth.theta[t], truth.phi[t], th, ph, err)?;
        }
    }
    writeln!(out, "max angle error {worst:.2e}, full-grid NMSE {nmse:.2e}")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Run => run(&cli),
        Command::Check => check(&cli),
        Command::Demo => demo(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
