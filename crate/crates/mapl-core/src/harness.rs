//! Experiment orchestration: the model × generator misspecification grid and
//! the sample-size sweep, scored as percent log-likelihood error against the
//! truth oracle, with incremental CSV output and per-cell resume.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::split_individuals;
use crate::dgp::{simulate_dataset, true_loglik, DgpSpec, SimConfig};
use crate::error::{Error, Result};
use crate::models::{fit, ModelSpec};
use crate::rng::stable_hash;
use crate::train::TrainConfig;

/// The full definition of one experiment: which generators, which models,
/// how many replications, and all the knobs the cells share.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub dgps: Vec<DgpSpec>,
    pub models: Vec<ModelSpec>,
    pub replications: usize,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub base_seed: u64,
    /// Fraction of individuals in the training split; the rest are the
    /// held-out test (and validation) individuals.
    pub train_fraction: f64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.dgps.is_empty() || self.models.is_empty() {
            return Err(Error::Config("experiment needs at least one generator and one model".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("experiment.replications must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "experiment.train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        for d in &self.dgps {
            d.validate()?;
        }
        for m in &self.models {
            m.validate()?;
        }
        self.sim.validate()?;
        self.train.validate()
    }
}

/// One row of the results table: a single (generator, model, replication)
/// outcome. Failed fits keep the row with NaN metrics and an error string in
/// `status`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReplicationResult {
    pub dgp: String,
    pub model: String,
    pub rep: usize,
    pub n_individuals: usize,
    pub train_nll_per_obs: f64,
    pub test_nll_per_obs: f64,
    pub true_test_nll_per_obs: f64,
    pub pct_error: f64,
    pub clamp_count: u64,
    pub wall_seconds: f64,
    pub cell_seed: u64,
    pub status: String,
}

/// Percent log-likelihood error of a model against the truth oracle:
/// `100 · (ll_true − ll_model) / |ll_true|`. Positive means the model fits
/// worse than the truth; both arguments are (negative) log-likelihoods on
/// the same observations.
pub fn pct_error(ll_model: f64, ll_true: f64) -> Result<f64> {
    if ll_true == 0.0 {
        return Err(Error::Config("true log-likelihood of zero leaves percent error undefined".into()));
    }
    Ok(100.0 * (ll_true - ll_model) / ll_true.abs())
}

/// Deterministic seed for one experiment cell.
pub fn cell_seed(base_seed: u64, dgp_label: &str, rep: usize) -> u64 {
    stable_hash(&[&base_seed.to_le_bytes(), dgp_label.as_bytes(), &(rep as u64).to_le_bytes()])
}

/// Sweep cells additionally hash the sample size so every (size, rep) pair
/// simulates fresh data.
pub fn sweep_cell_seed(base_seed: u64, dgp_label: &str, rep: usize, n_individuals: usize) -> u64 {
    stable_hash(&[
        &base_seed.to_le_bytes(),
        dgp_label.as_bytes(),
        &(rep as u64).to_le_bytes(),
        &(n_individuals as u64).to_le_bytes(),
    ])
}

fn model_train_seed(cell: u64, model_label: &str) -> u64 {
    stable_hash(&[&cell.to_le_bytes(), model_label.as_bytes()])
}

fn model_eval_seed(cell: u64, model_label: &str, which: &str) -> u64 {
    stable_hash(&[&cell.to_le_bytes(), model_label.as_bytes(), which.as_bytes()])
}

/// One cell of the grid: a concrete generator, replication index, sample
/// size, and derived seed.
#[derive(Debug, Clone)]
struct Cell {
    dgp: DgpSpec,
    rep: usize,
    n_individuals: usize,
    seed: u64,
}

/// Run every model of the plan on one simulated cell, skipping (dgp, model,
/// rep, n) combinations already present in `done`. Emits one row per model
/// run via `sink`.
fn run_cell(
    plan: &ExperimentPlan,
    cell: &Cell,
    done: &HashSet<(String, String, usize, usize)>,
    sink: &Mutex<Vec<ReplicationResult>>,
    appender: &Mutex<csv::Writer<fs::File>>,
) -> Result<()> {
    let dgp_label = cell.dgp.label().to_string();
    let todo: Vec<&ModelSpec> = plan
        .models
        .iter()
        .filter(|m| {
            !done.contains(&(dgp_label.clone(), m.label(), cell.rep, cell.n_individuals))
        })
        .collect();
    if todo.is_empty() {
        return Ok(());
    }

    let sim = SimConfig { n_individuals: cell.n_individuals, seed: cell.seed, ..plan.sim };
    let (ds, _betas) = simulate_dataset(&cell.dgp, &sim)?;
    let split = split_individuals(&ds, plan.train_fraction, cell.seed)?;
    let truth = true_loglik(&cell.dgp, &split.test, plan.sim.oracle_draws, cell.seed)?;
    let n_test_obs = split.test.n_obs();
    let n_train_obs = split.train.n_obs();

    for spec in todo {
        let label = spec.label();
        let started = Instant::now();
        let tcfg = TrainConfig { seed: model_train_seed(cell.seed, &label), ..plan.train };
        let row = match fit_and_score(
            spec, &split.train, &split.test, &tcfg, &truth, cell.seed, &label, n_train_obs,
            n_test_obs,
        ) {
            Ok((train_nll, test_nll, pct, clamps)) => ReplicationResult {
                dgp: dgp_label.clone(),
                model: label.clone(),
                rep: cell.rep,
                n_individuals: cell.n_individuals,
                train_nll_per_obs: train_nll,
                test_nll_per_obs: test_nll,
                true_test_nll_per_obs: -truth.total / n_test_obs as f64,
                pct_error: pct,
                clamp_count: clamps,
                wall_seconds: started.elapsed().as_secs_f64(),
                cell_seed: cell.seed,
                status: "ok".into(),
            },
            Err(e) => ReplicationResult {
                dgp: dgp_label.clone(),
                model: label.clone(),
                rep: cell.rep,
                n_individuals: cell.n_individuals,
                train_nll_per_obs: f64::NAN,
                test_nll_per_obs: f64::NAN,
                true_test_nll_per_obs: -truth.total / n_test_obs as f64,
                pct_error: f64::NAN,
                clamp_count: 0,
                wall_seconds: started.elapsed().as_secs_f64(),
                cell_seed: cell.seed,
                status: format!("failed: {e}"),
            },
        };
        {
            let mut w = appender.lock().expect("appender poisoned");
            w.serialize(&row)?;
            w.flush()?;
        }
        sink.lock().expect("sink poisoned").push(row);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit_and_score(
    spec: &ModelSpec,
    train: &crate::data::ChoiceDataset,
    test: &crate::data::ChoiceDataset,
    tcfg: &TrainConfig,
    truth: &crate::dgp::TrueLoglik,
    cell: u64,
    label: &str,
    n_train_obs: usize,
    n_test_obs: usize,
) -> Result<(f64, f64, f64, u64)> {
    let fitted = fit(spec, train, test, tcfg)?;
    let train_eval = fitted.eval_nll(train, model_eval_seed(cell, label, "train-eval"))?;
    let test_eval = fitted.eval_nll(test, model_eval_seed(cell, label, "test-eval"))?;
    let pct = pct_error(-test_eval.nll_total, truth.total)?;
    let clamps = fitted.train_floor_hits + test_eval.floor_hits + truth.clamp_count;
    Ok((
        train_eval.nll_total / n_train_obs as f64,
        test_eval.nll_total / n_test_obs as f64,
        pct,
        clamps,
    ))
}

/// The misspecification grid: every generator × replication, all models per
/// cell. Results are appended to `<out_dir>/results.csv` as they finish and
/// the file is rewritten in canonical order at the end; `resume` skips rows
/// already present. Also writes `<out_dir>/summary.csv`.
pub fn run_misspec_experiment(
    plan: &ExperimentPlan,
    out_dir: &Path,
    resume: bool,
    workers: usize,
) -> Result<Vec<ReplicationResult>> {
    let cells: Vec<Cell> = plan
        .dgps
        .iter()
        .flat_map(|d| {
            (0..plan.replications).map(|rep| Cell {
                dgp: *d,
                rep,
                n_individuals: plan.sim.n_individuals,
                seed: cell_seed(plan.base_seed, d.label(), rep),
            })
        })
        .collect();
    run_grid(plan, cells, out_dir, resume, workers)
}

/// The sample-size sweep: same pipeline with `n_individuals` overridden per
/// size; every (generator, size, replication) simulates its own dataset.
pub fn run_sample_size_sweep(
    plan: &ExperimentPlan,
    sizes: &[usize],
    out_dir: &Path,
    resume: bool,
    workers: usize,
) -> Result<Vec<ReplicationResult>> {
    if sizes.is_empty() {
        return Err(Error::Config("sweep needs at least one sample size".into()));
    }
    let cells: Vec<Cell> = plan
        .dgps
        .iter()
        .flat_map(|d| {
            sizes.iter().flat_map(move |&n| {
                (0..plan.replications).map(move |rep| Cell {
                    dgp: *d,
                    rep,
                    n_individuals: n,
                    seed: sweep_cell_seed(plan.base_seed, d.label(), rep, n),
                })
            })
        })
        .collect();
    run_grid(plan, cells, out_dir, resume, workers)
}

fn run_grid(
    plan: &ExperimentPlan,
    cells: Vec<Cell>,
    out_dir: &Path,
    resume: bool,
    workers: usize,
) -> Result<Vec<ReplicationResult>> {
    plan.validate()?;
    fs::create_dir_all(out_dir)?;
    let results_path = out_dir.join("results.csv");

    let mut rows: Vec<ReplicationResult> = Vec::new();
    let mut done = HashSet::new();
    if resume && results_path.exists() {
        rows = read_results_csv(&results_path)?;
        for r in &rows {
            done.insert((r.dgp.clone(), r.model.clone(), r.rep, r.n_individuals));
        }
    }

    // Fresh append target seeded with the header (so even an interrupted run
    // leaves a valid file) and any resumed rows.
    {
        let file = fs::File::create(tmp_path(&results_path))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(RESULT_HEADER)?;
        for r in &rows {
            writer.serialize(r)?;
        }
        writer.flush()?;
    }
    fs::rename(tmp_path(&results_path), &results_path)?;
    let live = fs::OpenOptions::new().append(true).open(&results_path)?;
    let appender = Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(live));
    let sink = Mutex::new(rows);

    let run_all = |cells: &[Cell]| -> Result<()> {
        if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(|| {
                use rayon::prelude::*;
                cells
                    .par_iter()
                    .map(|c| run_cell(plan, c, &done, &sink, &appender))
                    .collect::<Result<Vec<_>>>()
            })?;
        } else {
            for c in cells {
                run_cell(plan, c, &done, &sink, &appender)?;
            }
        }
        Ok(())
    };
    run_all(&cells)?;

    let mut rows = sink.into_inner().expect("sink poisoned");
    canonical_sort(&mut rows);
    write_results_csv(&results_path, &rows)?;
    let summary = summarize_boxplot(&rows);
    write_summary_csv(&out_dir.join("summary.csv"), &summary)?;
    Ok(rows)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".tmp");
    PathBuf::from(p)
}

/// Stable output order: generator, sample size, replication, model.
fn canonical_sort(rows: &mut [ReplicationResult]) {
    rows.sort_by(|a, b| {
        (&a.dgp, a.n_individuals, a.rep, &a.model).cmp(&(&b.dgp, b.n_individuals, b.rep, &b.model))
    });
}

pub const RESULT_HEADER: [&str; 12] = [
    "dgp",
    "model",
    "rep",
    "n_individuals",
    "train_nll_per_obs",
    "test_nll_per_obs",
    "true_test_nll_per_obs",
    "pct_error",
    "clamp_count",
    "wall_seconds",
    "cell_seed",
    "status",
];

/// Atomically (re)write the whole results file in canonical order.
pub fn write_results_csv(path: &Path, rows: &[ReplicationResult]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(fs::File::create(&tmp)?);
        w.write_record(RESULT_HEADER)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ReplicationResult>> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let got = reader.headers()?;
        if got.iter().collect::<Vec<_>>() != RESULT_HEADER {
            return Err(Error::Parse(format!(
                "results file {} does not match the documented schema",
                path.display()
            )));
        }
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Five-number summary plus mean for one (generator, model, size) group of
/// percent errors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryRow {
    pub dgp: String,
    pub model: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile on a sorted slice (the common "R-7" rule:
/// index h = (n−1)p, interpolate between the bracketing order statistics).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Box-plot statistics of `pct_error` per (dgp, model, n) over successful
/// rows, in deterministic group order.
pub fn summarize_boxplot(rows: &[ReplicationResult]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        if r.status == "ok" && r.pct_error.is_finite() {
            groups
                .entry((r.dgp.clone(), r.model.clone(), r.n_individuals))
                .or_default()
                .push(r.pct_error);
        }
    }
    groups
        .into_iter()
        .map(|((dgp, model, n), mut vals)| {
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            SummaryRow {
                dgp,
                model,
                n,
                min: vals[0],
                q1: quantile_sorted(&vals, 0.25),
                median: quantile_sorted(&vals, 0.5),
                q3: quantile_sorted(&vals, 0.75),
                max: *vals.last().expect("nonempty"),
                mean,
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut w = csv::Writer::from_writer(fs::File::create(&tmp)?);
        for r in rows {
            w.serialize(r)?;
        }
        if rows.is_empty() {
            // keep the documented header even with no groups
            w.write_record(["dgp", "model", "n", "min", "q1", "median", "q3", "max", "mean"])?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Render summary rows as an aligned text table.
pub fn format_summary_table(rows: &[SummaryRow]) -> String {
    if rows.is_empty() {
        return "no rows\n".into();
    }
    let header = ["dgp", "model", "n", "min", "q1", "median", "q3", "max", "mean"];
    let mut cells: Vec<[String; 9]> = vec![header.map(str::to_string)];
    for r in rows {
        cells.push([
            r.dgp.clone(),
            r.model.clone(),
            r.n.to_string(),
            format!("{:.3}", r.min),
            format!("{:.3}", r.q1),
            format!("{:.3}", r.median),
            format!("{:.3}", r.q3),
            format!("{:.3}", r.max),
            format!("{:.3}", r.mean),
        ]);
    }
    let mut widths = [0usize; 9];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        for (i, (w, c)) in widths.iter().zip(row).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            // left-align labels, right-align numbers
            if i < 2 {
                out.push_str(&format!("{c:<w$}"));
            } else {
                out.push_str(&format!("{c:>w$}"));
            }
        }
        // trim trailing padding
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    }
    out
}

/// Write a small JSON sidecar recording provenance for a run.
pub fn write_meta_json(path: &Path, config_hash: u64, description: &str) -> Result<()> {
    let body = serde_json::json!({
        "config_hash": format!("{config_hash:016x}"),
        "description": description,
    });
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(serde_json::to_string_pretty(&body).expect("static json").as_bytes())?;
        f.write_all(b"\n")?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
