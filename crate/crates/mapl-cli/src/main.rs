//! `mapl` — simulate panel choice data, fit choice models, and run the
//! replication experiments from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mapl_core::config::{parse_set_arg, RunConfig};
use mapl_core::data::{read_csv, split_individuals, write_csv};
use mapl_core::dgp::{simulate_dataset, true_loglik};
use mapl_core::harness::{
    format_summary_table, read_results_csv, run_misspec_experiment, run_sample_size_sweep,
    summarize_boxplot, write_meta_json,
};
use mapl_core::models::{fit, ModelKind};
use mapl_core::rng::stable_hash;
use mapl_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mapl", version, about = "Discrete-choice estimation toolkit", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; desk-scale defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a scalar config key, e.g. --set train.epochs=100 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Full-scale batch settings: 10,000 individuals, 20 replications, 2,000 epochs.
    #[arg(long)]
    paper_scale: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let sets = self
            .set
            .iter()
            .map(|s| parse_set_arg(s))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path, &sets)?,
            None => RunConfig::from_overrides(&sets)?,
        };
        if self.paper_scale {
            cfg.apply_paper_scale();
        }
        println!("config hash: {:016x}", cfg.config_hash());
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic panel choice dataset
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output dataset CSV (a .meta.json sidecar is written next to it)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Fit one model to a dataset and write a JSON report
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input dataset CSV
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Output report JSON
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run the model × generator misspecification grid
    Experiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory for results.csv / summary.csv / meta.json
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Skip cells already present in results.csv
        #[arg(long)]
        resume: bool,
        /// Parallel cell workers
        #[arg(long, default_value_t = 1, value_name = "N")]
        workers: usize,
    },
    /// Run the sample-size sweep
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1, value_name = "N")]
        workers: usize,
    },
    /// Summarize a results CSV as an aligned text table
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// results.csv produced by experiment/sweep
        #[arg(long, value_name = "FILE")]
        results: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Config(_) | Error::Parse(_) => 2,
                e if e.is_numerical() => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { cfg, out } => cmd_simulate(&cfg.resolve()?, &out),
        Command::Fit { cfg, data, out } => cmd_fit(&cfg.resolve()?, &data, &out),
        Command::Experiment { cfg, out_dir, resume, workers } => {
            let cfg = cfg.resolve()?;
            let plan = cfg.experiment_plan()?;
            let rows = run_misspec_experiment(&plan, &out_dir, resume, workers)?;
            finish_grid(&cfg, &out_dir, "misspecification grid", rows.len(), &rows)
        }
        Command::Sweep { cfg, out_dir, resume, workers } => {
            let cfg = cfg.resolve()?;
            let (plan, sizes) = cfg.sweep_plan()?;
            let rows = run_sample_size_sweep(&plan, &sizes, &out_dir, resume, workers)?;
            finish_grid(&cfg, &out_dir, "sample-size sweep", rows.len(), &rows)
        }
        Command::Report { cfg, results } => {
            cfg.resolve()?;
            let rows = read_results_csv(&results)?;
            print!("{}", format_summary_table(&summarize_boxplot(&rows)));
            Ok(())
        }
    }
}

fn finish_grid(
    cfg: &RunConfig,
    out_dir: &Path,
    what: &str,
    n_rows: usize,
    rows: &[mapl_core::harness::ReplicationResult],
) -> Result<()> {
    write_meta_json(&out_dir.join("meta.json"), cfg.config_hash(), what)?;
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    println!("{n_rows} result rows in {}", out_dir.display());
    if failures > 0 {
        eprintln!("warning: {failures} of {n_rows} cells failed; see status column");
    }
    Ok(())
}

fn tmp_of(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".tmp");
    PathBuf::from(p)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = tmp_of(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dgp = cfg.dgp_spec()?;
    let (ds, _prefs) = simulate_dataset(&dgp, &cfg.sim)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = tmp_of(out);
    write_csv(&ds, &tmp)?;
    fs::rename(&tmp, out)?;

    let truth = true_loglik(&dgp, &ds, cfg.sim.oracle_draws, cfg.sim.seed)?;
    let meta = serde_json::json!({
        "config_hash": format!("{:016x}", cfg.config_hash()),
        "scenario": dgp.label(),
        "coefficients": {
            "beta0": dgp.beta0, "mu1": dgp.mu1, "mu2": dgp.mu2,
            "sigma1": dgp.sigma1, "sigma2": dgp.sigma2,
            "sigma12": dgp.sigma12, "beta3": dgp.beta3,
        },
        "n_individuals": cfg.sim.n_individuals,
        "tasks_per_individual": cfg.sim.tasks_per_individual,
        "alternatives": cfg.sim.alternatives,
        "seed": cfg.sim.seed,
        "oracle_draws": cfg.sim.oracle_draws,
        "true_loglik_total": truth.total,
        "true_nll_per_obs": -truth.total / ds.n_obs() as f64,
        "oracle_clamp_count": truth.clamp_count,
    });
    let sidecar = sidecar_path(out);
    atomic_write(&sidecar, format!("{:#}\n", meta).as_bytes())?;
    println!(
        "wrote {} rows to {} (+ {})",
        ds.n_obs() * ds.alternatives(),
        out.display(),
        sidecar.display()
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

fn cmd_fit(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = read_csv(data)?;
    let spec = cfg.model.clone();
    let split = split_individuals(&ds, cfg.experiment.train_fraction, cfg.train.seed)?;
    let fitted = fit(&spec, &split.train, &split.test, &cfg.train)?;

    let train_eval = fitted.eval_nll(
        &split.train,
        stable_hash(&[&cfg.train.seed.to_le_bytes(), b"fit-train-eval"]),
    )?;
    let valid_eval = fitted.eval_nll(
        &split.test,
        stable_hash(&[&cfg.train.seed.to_le_bytes(), b"fit-valid-eval"]),
    )?;
    let n_train = split.train.n_obs() as f64;
    let n_valid = split.test.n_obs() as f64;

    // per-alternative distribution-head size for MAPL; trainable parameter
    // count for everything else
    let param_count = match spec.kind {
        ModelKind::Mapl => spec.mapl_distribution.param_count(),
        _ => fitted.n_params(),
    };
    // trace checkpoints are already per-observation
    let trace: Vec<serde_json::Value> = fitted
        .trace
        .points
        .iter()
        .map(|p| {
            serde_json::json!({
                "epoch": p.epoch,
                "train_nll_per_obs": p.train_nll,
                "valid_nll_per_obs": p.valid_nll,
                "wall_secs": p.wall_secs,
            })
        })
        .collect();
    let best = fitted.trace.best();
    let report = serde_json::json!({
        "config_hash": format!("{:016x}", cfg.config_hash()),
        "model": spec.label(),
        "param_count": param_count,
        "n_trainable": fitted.n_params(),
        "train_seed": fitted.train_seed,
        "split_seed": split.split_seed,
        "train_fraction": split.train_fraction,
        "n_individuals": ds.n_individuals(),
        "final_train_nll_per_obs": train_eval.nll_total / n_train,
        "valid_nll_per_obs": valid_eval.nll_total / n_valid,
        "best_epoch": best.map(|p| p.epoch),
        "best_valid_nll_per_obs": best.map(|p| p.valid_nll),
        "floor_hits": fitted.train_floor_hits,
        "trace": trace,
    });
    atomic_write(out, format!("{:#}\n", report).as_bytes())?;
    println!(
        "fitted {} ({} trainable parameters): train {:.5}, valid {:.5} NLL/obs",
        spec.label(),
        fitted.n_params(),
        train_eval.nll_total / n_train,
        valid_eval.nll_total / n_valid,
    );
    Ok(())
}
