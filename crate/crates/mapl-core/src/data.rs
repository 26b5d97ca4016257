//! Panel choice data: an immutable container of N individuals × T tasks × J
//! alternatives with K features per alternative, plus individual-level
//! splitting and CSV persistence.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Rectangular panel of choice tasks. Feature storage is a flat row-major
/// `(individual, task, alternative, feature)` tensor so likelihood code can
/// walk contiguous slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    n_individuals: usize,
    tasks_per_individual: usize,
    alternatives: usize,
    n_features: usize,
    features: Vec<f64>,
    chosen: Vec<usize>,
    feature_names: Vec<String>,
}

/// Outcome of [`ChoiceDataset::validate`]: empty means all invariants hold.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl ChoiceDataset {
    /// Assembles a dataset from flat tensors. Only shape consistency is
    /// enforced here; value-level invariants are the job of [`validate`].
    ///
    /// [`validate`]: ChoiceDataset::validate
    pub fn new(
        n_individuals: usize,
        tasks_per_individual: usize,
        alternatives: usize,
        n_features: usize,
        features: Vec<f64>,
        chosen: Vec<usize>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if n_individuals == 0 || tasks_per_individual == 0 || alternatives == 0 || n_features == 0
        {
            return Err(Error::Data(
                "all of N, T, J, K must be at least 1".into(),
            ));
        }
        let want = n_individuals * tasks_per_individual * alternatives * n_features;
        if features.len() != want {
            return Err(Error::Shape(format!(
                "feature tensor has {} entries, expected N*T*J*K = {}",
                features.len(),
                want
            )));
        }
        let want_chosen = n_individuals * tasks_per_individual;
        if chosen.len() != want_chosen {
            return Err(Error::Shape(format!(
                "chosen tensor has {} entries, expected N*T = {}",
                chosen.len(),
                want_chosen
            )));
        }
        if feature_names.len() != n_features {
            return Err(Error::Shape(format!(
                "{} feature names for {} features",
                feature_names.len(),
                n_features
            )));
        }
        Ok(Self {
            n_individuals,
            tasks_per_individual,
            alternatives,
            n_features,
            features,
            chosen,
            feature_names,
        })
    }

    /// Default feature labels `x0..x{K-1}`.
    pub fn default_feature_names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("x{i}")).collect()
    }

    pub fn n_individuals(&self) -> usize {
        self.n_individuals
    }

    pub fn tasks_per_individual(&self) -> usize {
        self.tasks_per_individual
    }

    pub fn alternatives(&self) -> usize {
        self.alternatives
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Number of choice observations (tasks) in the panel: N·T.
    pub fn n_obs(&self) -> usize {
        self.n_individuals * self.tasks_per_individual
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// The full flat feature tensor, row-major over (i, t, j, k).
    pub fn features_flat(&self) -> &[f64] {
        &self.features
    }

    /// Features of one task: a `J*K` slice, alternative-major.
    pub fn task_features(&self, individual: usize, task: usize) -> &[f64] {
        let stride = self.alternatives * self.n_features;
        let start = (individual * self.tasks_per_individual + task) * stride;
        &self.features[start..start + stride]
    }

    /// Features of a single alternative within a task (length K).
    pub fn alt_features(&self, individual: usize, task: usize, alt: usize) -> &[f64] {
        let t = self.task_features(individual, task);
        &t[alt * self.n_features..(alt + 1) * self.n_features]
    }

    pub fn chosen(&self, individual: usize, task: usize) -> usize {
        self.chosen[individual * self.tasks_per_individual + task]
    }

    pub fn chosen_flat(&self) -> &[usize] {
        &self.chosen
    }

    /// Checks every dataset invariant and reports each violation with the
    /// offending index. Returns an empty report for a well-formed dataset.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for i in 0..self.n_individuals {
            for t in 0..self.tasks_per_individual {
                let c = self.chosen(i, t);
                if c >= self.alternatives {
                    report
                        .violations
                        .push(format!("chosen index out of range at ({i},{t})"));
                }
            }
        }
        let (tpi, j, k) = (self.tasks_per_individual, self.alternatives, self.n_features);
        for (pos, v) in self.features.iter().enumerate() {
            if !v.is_finite() {
                let ki = pos % k;
                let ji = (pos / k) % j;
                let ti = (pos / (k * j)) % tpi;
                let ii = pos / (k * j * tpi);
                report
                    .violations
                    .push(format!("non-finite feature at ({ii},{ti},{ji},{ki})"));
            }
        }
        report
    }

    /// Copies out the sub-panel of the given individuals (in the order
    /// provided); used by the splitter.
    fn subset(&self, individuals: &[usize]) -> Self {
        let stride = self.tasks_per_individual * self.alternatives * self.n_features;
        let mut features = Vec::with_capacity(individuals.len() * stride);
        let mut chosen = Vec::with_capacity(individuals.len() * self.tasks_per_individual);
        for &i in individuals {
            features.extend_from_slice(&self.features[i * stride..(i + 1) * stride]);
            let c0 = i * self.tasks_per_individual;
            chosen.extend_from_slice(&self.chosen[c0..c0 + self.tasks_per_individual]);
        }
        Self {
            n_individuals: individuals.len(),
            tasks_per_individual: self.tasks_per_individual,
            alternatives: self.alternatives,
            n_features: self.n_features,
            features,
            chosen,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Individual-level train/test partition. All T tasks of an individual land
/// on the same side, preserving the panel structure that the mixed-logit
/// likelihood is defined over.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: ChoiceDataset,
    pub test: ChoiceDataset,
    pub split_seed: u64,
    pub train_fraction: f64,
}

/// Splits by individual: a seeded shuffle of individual ids, the first
/// `round(train_fraction·N)` going to train. Individuals keep their original
/// relative order inside each side, so the result depends only on the seed.
/// The rounded count is clamped to keep both sides nonempty.
pub fn split_individuals(
    ds: &ChoiceDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let n = ds.n_individuals();
    if n < 2 {
        return Err(Error::Data(
            "cannot split a dataset with fewer than 2 individuals".into(),
        ));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut stream_rng(seed, Stream::Split));
    let mut train_ids = ids[..n_train].to_vec();
    let mut test_ids = ids[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(DatasetSplit {
        train: ds.subset(&train_ids),
        test: ds.subset(&test_ids),
        split_seed: seed,
        train_fraction,
    })
}

/// Writes the long-format CSV (one row per alternative):
/// `individual_id,task_id,alt_id,x0,...,x{K-1},chosen`.
/// Floats use shortest round-trip formatting, so `read_csv` restores them
/// bit-exactly.
pub fn write_csv(ds: &ChoiceDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["individual_id".into(), "task_id".into(), "alt_id".into()];
    header.extend(ds.feature_names().iter().cloned());
    header.push("chosen".into());
    w.write_record(&header)?;
    let mut field = String::new();
    for i in 0..ds.n_individuals() {
        for t in 0..ds.tasks_per_individual() {
            let c = ds.chosen(i, t);
            for j in 0..ds.alternatives() {
                let mut rec: Vec<String> =
                    vec![i.to_string(), t.to_string(), j.to_string()];
                for &x in ds.alt_features(i, t, j) {
                    field.clear();
                    write!(field, "{x}").expect("write to string");
                    rec.push(field.clone());
                }
                rec.push(if c == j { "1".into() } else { "0".into() });
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_csv`]. Rows may appear in any order;
/// ids must be 0-based and contiguous, the panel rectangular, and each task
/// must mark exactly one alternative as chosen.
pub fn read_csv(path: &Path) -> Result<ChoiceDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().all(|f| f.is_empty()) {
        return Err(Error::Parse("no records".into()));
    }
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 5
        || cols[0] != "individual_id"
        || cols[1] != "task_id"
        || cols[2] != "alt_id"
        || cols[cols.len() - 1] != "chosen"
    {
        return Err(Error::Parse(format!(
            "unexpected dataset header: {}",
            cols.join(",")
        )));
    }
    let feature_names: Vec<String> =
        cols[3..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let k = feature_names.len();

    struct Row {
        i: usize,
        t: usize,
        j: usize,
        xs: Vec<f64>,
        chosen: bool,
    }
    let mut rows: Vec<Row> = Vec::new();
    let (mut max_i, mut max_t, mut max_j) = (0usize, 0usize, 0usize);
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != k + 4 {
            return Err(Error::Parse(format!(
                "row {}: expected {} fields, found {}",
                line + 2,
                k + 4,
                rec.len()
            )));
        }
        let parse_id = |s: &str, what: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| {
                Error::Parse(format!("row {}: bad {what} '{s}'", line + 2))
            })
        };
        let i = parse_id(&rec[0], "individual_id")?;
        let t = parse_id(&rec[1], "task_id")?;
        let j = parse_id(&rec[2], "alt_id")?;
        let mut xs = Vec::with_capacity(k);
        for c in 0..k {
            let s = &rec[3 + c];
            xs.push(s.trim().parse().map_err(|_| {
                Error::Parse(format!("row {}: bad feature value '{s}'", line + 2))
            })?);
        }
        let chosen = match rec[3 + k].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse(format!(
                    "row {}: chosen must be 0 or 1, got '{other}'",
                    line + 2
                )))
            }
        };
        max_i = max_i.max(i);
        max_t = max_t.max(t);
        max_j = max_j.max(j);
        rows.push(Row { i, t, j, xs, chosen });
    }
    if rows.is_empty() {
        return Err(Error::Parse("no records".into()));
    }
    let (n, tpi, j_alts) = (max_i + 1, max_t + 1, max_j + 1);
    if rows.len() != n * tpi * j_alts {
        return Err(Error::Parse(format!(
            "expected {} rows for N={n}, T={tpi}, J={j_alts}, found {} (ragged or duplicated panel)",
            n * tpi * j_alts,
            rows.len()
        )));
    }
    let mut features = vec![f64::NAN; n * tpi * j_alts * k];
    let mut seen = vec![false; n * tpi * j_alts];
    let mut chosen_of: Vec<Option<usize>> = vec![None; n * tpi];
    for row in &rows {
        let cell = (row.i * tpi + row.t) * j_alts + row.j;
        if seen[cell] {
            return Err(Error::Parse(format!(
                "duplicate row for individual {}, task {}, alternative {}",
                row.i, row.t, row.j
            )));
        }
        seen[cell] = true;
        features[cell * k..(cell + 1) * k].copy_from_slice(&row.xs);
        if row.chosen {
            let slot = &mut chosen_of[row.i * tpi + row.t];
            if slot.is_some() {
                return Err(Error::Parse(format!(
                    "two rows marked chosen in task ({}, {})",
                    row.i, row.t
                )));
            }
            *slot = Some(row.j);
        }
    }
    if let Some(pos) = seen.iter().position(|s| !s) {
        let j = pos % j_alts;
        let t = (pos / j_alts) % tpi;
        let i = pos / (j_alts * tpi);
        return Err(Error::Parse(format!(
            "missing row for individual {i}, task {t}, alternative {j}"
        )));
    }
    let mut chosen = Vec::with_capacity(n * tpi);
    for (pos, slot) in chosen_of.iter().enumerate() {
        match slot {
            Some(j) => chosen.push(*j),
            None => {
                return Err(Error::Parse(format!(
                    "missing chosen marker in task ({}, {})",
                    pos / tpi,
                    pos % tpi
                )))
            }
        }
    }
    let ds = ChoiceDataset::new(n, tpi, j_alts, k, features, chosen, feature_names)?;
    let report = ds.validate();
    if !report.is_ok() {
        return Err(Error::Data(report.violations.join("; ")));
    }
    Ok(ds)
}
