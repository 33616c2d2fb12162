//! Command line front end: scenario generation, SDDP runs, the DP
//! baseline, run comparison and report printing, all driven by a
//! sectioned key=value config file.
//!
//! Exit codes: 0 converged (or command succeeded), 2 run finished
//! without converging, 1 usage or config error, 3 runtime failure.

use clap::{Parser, Subcommand};
use sddp::config::{ConfigError, Experiment, RunConfig};
use sddp::dp::{dp_optimize, dp_simulate, DpParams};
use sddp::engine::{self, RunReport};
use sddp::scenario;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sddp", about = "Markov-conditional SDDP for storage valuation")]
struct Cli {
    /// Run configuration file (sectioned key=value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to SDDP_THREADS or the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample Markov-state paths and write them to a scenario file.
    Gen,
    /// Run the SDDP engine and write iteration CSV, cut file and summary.
    Sddp,
    /// Run the dynamic-programming baseline (market experiment, one copy).
    Dp,
    /// Compare the summaries of two completed runs.
    Compare { config_a: PathBuf, config_b: PathBuf },
    /// Print an ASCII convergence report from a finished run.
    Report,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version by "erroring" with exit 0
            let code = if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(converged) => {
            if converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e @ (CliError::Config(_) | CliError::Usage(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

/// Returns whether the run "converged"; commands without a convergence
/// notion report true.
fn dispatch(cli: &Cli) -> Result<bool, CliError> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Gen => cmd_gen(&load_config(cli)?).map(|_| true),
        Command::Sddp => cmd_sddp(&load_config(cli)?),
        Command::Dp => cmd_dp(&load_config(cli)?).map(|_| true),
        Command::Compare { config_a, config_b } => {
            cmd_compare(cli, config_a, config_b).map(|_| true)
        }
        Command::Report => cmd_report(&load_config(cli)?).map(|_| true),
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let from_env = std::env::var("SDDP_THREADS").ok().map(|v| {
        v.parse::<usize>()
            .map_err(|_| CliError::Usage(format!("SDDP_THREADS={v:?} is not a thread count")))
    });
    let n = match (flag, from_env) {
        (Some(n), _) => Some(n),
        (None, Some(parsed)) => Some(parsed?),
        (None, None) => None, // rayon defaults to the available cores
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.engine.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| anyhow::anyhow!("create {}: {e}", cfg.out_dir.display()).into())
}

fn cmd_gen(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    let model = cfg.build_model()?;
    let grid = cfg.time_grid()?;
    let set = scenario::simulate(&model.uncertainty, &grid, cfg.engine.backward_samples, cfg.seed);
    let path = cfg.out_dir.join("scenarios.bin");
    scenario::save_scenarios(&set, &path).map_err(|e| CliError::Runtime(e.into()))?;
    println!("samples = {}", set.samples);
    println!("dates = {}", set.dates);
    println!("dim = {}", set.dim);
    println!("seed = {}", cfg.seed);
    println!("file = {}", path.display());
    Ok(())
}

fn summary_lines(cfg: &RunConfig, report: &RunReport, wall_ms: u128) -> String {
    // stable key set and order; compare/report parse this back
    format!(
        "z_lower = {:.6}\neval_mean = {:.6}\neval_std = {:.6}\ngap_rel = {:.8}\n\
         gap_conf = {:.6}\niterations = {}\nconverged = {}\nseed = {}\nwall_ms = {}\n",
        report.z_lower,
        report.eval_mean,
        report.eval_std,
        report.gap_rel,
        report.gap_conf,
        report.iterations,
        report.converged,
        cfg.seed,
        wall_ms
    )
}

fn cmd_sddp(cfg: &RunConfig) -> Result<bool, CliError> {
    ensure_out_dir(cfg)?;
    let model = cfg.build_model()?;
    log::info!(
        "running {} in {:?} mode, {} backward samples",
        model.name,
        cfg.mode,
        cfg.engine.backward_samples
    );
    let start = std::time::Instant::now();
    let report = engine::run(&model, &cfg.engine).map_err(|e| CliError::Runtime(e.into()))?;
    let wall_ms = start.elapsed().as_millis();

    engine::write_iteration_csv(&report.records, &cfg.out_dir.join("iterations.csv"))
        .map_err(|e| CliError::Runtime(e.into()))?;
    engine::save_cuts(&report.policy, &cfg.out_dir.join("policy.cut"))
        .map_err(|e| CliError::Runtime(e.into()))?;
    let summary = summary_lines(cfg, &report, wall_ms);
    std::fs::write(cfg.out_dir.join("summary.txt"), &summary)
        .map_err(|e| CliError::Runtime(e.into()))?;
    print!("{summary}");
    Ok(report.converged)
}

fn cmd_dp(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.experiment != Experiment::Market || cfg.copies != 1 {
        return Err(CliError::Usage(format!(
            "the dp baseline handles the market experiment with copies = 1 only \
             (got {} with copies = {})",
            cfg.experiment.name(),
            cfg.copies
        )));
    }
    let grid = cfg.time_grid()?;
    let model = cfg.build_model()?;
    let price = model.uncertainty.price().expect("market model carries a price process").clone();
    let params = DpParams { seed: cfg.seed, ..DpParams::default() };
    let result = dp_optimize(cfg.storage, price.clone(), grid.clone(), &params)
        .map_err(|e| CliError::Runtime(e.into()))?;
    let costs = dp_simulate(&result.tables, price, grid, params.sample_paths, cfg.seed);
    let sim_mean = costs.iter().sum::<f64>() / costs.len() as f64;
    println!("dp_optimize = {:.6}", result.value);
    println!("dp_simulate = {:.6}", sim_mean);
    println!("paths = {}", params.sample_paths);
    println!("meshes = {}", params.meshes);
    println!("seed = {}", cfg.seed);
    Ok(())
}

fn read_summary(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let path = dir.join("summary.txt");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("missing run artifact {}: {e}", path.display()))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

fn summary_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64, CliError> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| anyhow::anyhow!("summary is missing a numeric {key:?}").into())
}

fn cmd_compare(cli: &Cli, config_a: &Path, config_b: &Path) -> Result<(), CliError> {
    let mut cfg_a = RunConfig::from_file(config_a)?;
    let mut cfg_b = RunConfig::from_file(config_b)?;
    // --out would point both runs at one directory; leave dirs as configured
    if let Some(seed) = cli.seed {
        cfg_a.seed = seed;
        cfg_b.seed = seed;
    }
    let a = read_summary(&cfg_a.out_dir)?;
    let b = read_summary(&cfg_b.out_dir)?;
    let va = summary_f64(&a, "eval_mean")?;
    let vb = summary_f64(&b, "eval_mean")?;
    let denom = va.abs().max(vb.abs()).max(f64::MIN_POSITIVE);
    let rel_diff = (va - vb).abs() / denom;

    println!("metric,run_a,run_b");
    for key in ["z_lower", "eval_mean", "eval_std", "gap_rel", "iterations", "wall_ms"] {
        let missing = String::from("-");
        let fa = a.get(key).unwrap_or(&missing);
        let fb = b.get(key).unwrap_or(&missing);
        println!("{key},{fa},{fb}");
    }
    println!("rel_diff,{rel_diff:.8},{rel_diff:.8}");
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.out_dir.join("iterations.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("missing run artifact {}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow::anyhow!("{} is empty", path.display()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    if rows.is_empty() {
        return Err(anyhow::anyhow!("{} has no iterations", path.display()).into());
    }

    println!("run: {}", cfg.out_dir.display());
    println!("iterations: {}", rows.len());
    let col = |name: &str| columns.iter().position(|c| *c == name);
    if let (Some(it), Some(zl), Some(gap)) = (col("iteration"), col("z_lower"), col("gap_rel")) {
        println!("{:>10} {:>18} {:>12}", "iteration", "z_lower", "gap_rel");
        // show every evaluated iteration, which is where gap_rel is filled
        for row in rows.iter().filter(|r| !r[gap].is_empty()) {
            println!("{:>10} {:>18} {:>12}", row[it], row[zl], row[gap]);
        }
    }
    if let Ok(summary) = read_summary(&cfg.out_dir) {
        println!("final:");
        for (k, v) in &summary {
            println!("  {k} = {v}");
        }
    }
    Ok(())
}
