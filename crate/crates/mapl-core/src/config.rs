//! Run configuration: one TOML file with nested sections, strict unknown-key
//! rejection, scalar `--set` overrides, and a stable content hash so every
//! output can say exactly which configuration produced it.

use std::path::Path;

use crate::dgp::{DgpSpec, Scenario, SimConfig};
use crate::dist::DistributionKind;
use crate::error::{Error, Result};
use crate::harness::ExperimentPlan;
use crate::models::{DrawScheme, EstimatorKind, ModelKind, ModelSpec};
use crate::rng::fnv1a64;
use crate::train::TrainConfig;

/// The `[dgp]` section: scenario plus optional coefficient overrides. The
/// scenario stays optional at parse time because only data-generating
/// commands need it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DgpSection {
    pub scenario: Option<Scenario>,
    pub beta0: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub sigma12: Option<f64>,
    pub beta3: Option<f64>,
}

/// The `[experiment]` section controlling the replication grid and the
/// sample-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub replications: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    /// Generator scenarios in the misspecification grid.
    pub scenarios: Vec<Scenario>,
    /// Model labels fitted in every grid cell.
    pub models: Vec<String>,
    /// Sample sizes for the sweep.
    pub sizes: Vec<usize>,
    pub sweep_scenario: Scenario,
    pub sweep_model: String,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            replications: 5,
            base_seed: 0,
            train_fraction: 0.8,
            scenarios: vec![
                Scenario::IndependentNormals,
                Scenario::CorrelatedNormals,
                Scenario::Interaction,
                Scenario::Nonlinear,
            ],
            models: ["mnl", "mxl", "simple_nn", "deep_nn", "mapl_normal", "mapl_fm"]
                .map(String::from)
                .to_vec(),
            sizes: vec![500, 2_000, 4_000],
            sweep_scenario: Scenario::IndependentNormals,
            sweep_model: "mapl_fm".into(),
        }
    }
}

/// Fully resolved run configuration. Defaults are desk scale (quick enough
/// for a laptop); [`RunConfig::apply_paper_scale`] switches to the full batch
/// protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dgp: DgpSection,
    pub sim: SimConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub experiment: ExperimentSettings,
    /// Polynomial order used whenever a Fosgerau-Mabit model is built from a
    /// label, even if `model.kind` itself is something else.
    pub fm_order: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dgp: DgpSection::default(),
            sim: SimConfig {
                n_individuals: 2_000,
                tasks_per_individual: 10,
                alternatives: 3,
                oracle_draws: 1_000,
                seed: 0,
            },
            model: ModelSpec::default(),
            train: TrainConfig { epochs: 500, lr: 0.05, ..TrainConfig::default() },
            experiment: ExperimentSettings::default(),
            fm_order: crate::dist::DEFAULT_FM_ORDER,
        }
    }
}

fn section<'v>(v: &'v toml::Value, name: &str) -> Result<&'v toml::Table> {
    v.as_table().ok_or_else(|| Error::Config(format!("section [{name}] must be a table")))
}

fn get_f64(v: &toml::Value, key: &str) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(Error::Config(format!("key {key} must be a number, got {other}"))),
    }
}

fn get_usize(v: &toml::Value, key: &str) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        other => Err(Error::Config(format!(
            "key {key} must be a nonnegative integer, got {other}"
        ))),
    }
}

fn get_u64(v: &toml::Value, key: &str) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        other => Err(Error::Config(format!(
            "key {key} must be a nonnegative integer, got {other}"
        ))),
    }
}

fn get_bool(v: &toml::Value, key: &str) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::Config(format!("key {key} must be a boolean")))
}

fn get_str<'v>(v: &'v toml::Value, key: &str) -> Result<&'v str> {
    v.as_str().ok_or_else(|| Error::Config(format!("key {key} must be a string")))
}

fn get_usize_list(v: &toml::Value, key: &str) -> Result<Vec<usize>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Config(format!("key {key} must be a list of integers")))?;
    arr.iter().map(|e| get_usize(e, key)).collect()
}

fn get_str_list(v: &toml::Value, key: &str) -> Result<Vec<String>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Config(format!("key {key} must be a list of strings")))?;
    arr.iter().map(|e| get_str(e, key).map(str::to_string)).collect()
}

impl RunConfig {
    /// Parse a TOML document, starting from desk-scale defaults. Unknown keys
    /// anywhere are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            text.parse().map_err(|e| Error::Parse(format!("invalid TOML: {e}")))?;
        let mut cfg = RunConfig::default();
        cfg.absorb(&table)?;
        Ok(cfg)
    }

    /// Load a config file and apply `--set section.key=value` overrides.
    pub fn load(path: &Path, sets: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Parse(format!("invalid TOML in {}: {e}", path.display())))?;
        apply_set_overrides(&mut table, sets)?;
        let mut cfg = RunConfig::default();
        cfg.absorb(&table)?;
        Ok(cfg)
    }

    /// Defaults plus overrides, with no file on disk.
    pub fn from_overrides(sets: &[(String, String)]) -> Result<Self> {
        let mut table = toml::Table::new();
        apply_set_overrides(&mut table, sets)?;
        let mut cfg = RunConfig::default();
        cfg.absorb(&table)?;
        Ok(cfg)
    }

    fn absorb(&mut self, root: &toml::Table) -> Result<()> {
        for (key, val) in root {
            match key.as_str() {
                "dgp" => self.absorb_dgp(section(val, "dgp")?)?,
                "sim" => self.absorb_sim(section(val, "sim")?)?,
                "model" => self.absorb_model(section(val, "model")?)?,
                "mapl" => self.absorb_mapl(section(val, "mapl")?)?,
                "nn" => self.absorb_nn(section(val, "nn")?)?,
                "train" => self.absorb_train(section(val, "train")?)?,
                "experiment" => self.absorb_experiment(section(val, "experiment")?)?,
                other => return Err(Error::Config(format!("unknown key: {other}"))),
            }
        }
        Ok(())
    }

    fn absorb_dgp(&mut self, t: &toml::Table) -> Result<()> {
        for (key, val) in t {
            match key.as_str() {
                "scenario" => self.dgp.scenario = Some(Scenario::parse(get_str(val, "dgp.scenario")?)?),
                "beta0" => self.dgp.beta0 = Some(get_f64(val, "dgp.beta0")?),
                "mu1" => self.dgp.mu1 = Some(get_f64(val, "dgp.mu1")?),
                "mu2" => self.dgp.mu2 = Some(get_f64(val, "dgp.mu2")?),
                "sigma1" => self.dgp.sigma1 = Some(get_f64(val, "dgp.sigma1")?),
                "sigma2" => self.dgp.sigma2 = Some(get_f64(val, "dgp.sigma2")?),
                "sigma12" => self.dgp.sigma12 = Some(get_f64(val, "dgp.sigma12")?),
                "beta3" => self.dgp.beta3 = Some(get_f64(val, "dgp.beta3")?),
                other => return Err(Error::Config(format!("unknown key: dgp.{other}"))),
            }
        }
        Ok(())
    }

    fn absorb_sim(&mut self, t: &toml::Table) -> Result<()> {
        for (key, val) in t {
            match key.as_str() {
                "n_individuals" => self.sim.n_individuals = get_usize(val, "sim.n_individuals")?,
                "tasks_per_individual" => {
                    self.sim.tasks_per_individual = get_usize(val, "sim.tasks_per_individual")?
                }
                "alternatives" => self.sim.alternatives = get_usize(val, "sim.alternatives")?,
                "oracle_draws" => self.sim.oracle_draws = get_usize(val, "sim.oracle_draws")?,
                "seed" => self.sim.seed = get_u64(val, "sim.seed")?,
                other => return Err(Error::Config(format!("unknown key: sim.{other}"))),
            }
        }
        Ok(())
    }

    fn absorb_model(&mut self, t: &toml::Table) -> Result<()> {
        for (key, val) in t {
            match key.as_str() {
                "kind" => self.model.kind = ModelKind::parse(get_str(val, "model.kind")?)?,
                "R_train" => self.model.r_train = get_usize(val, "model.R_train")?,
                "R_eval" => self.model.r_eval = get_usize(val, "model.R_eval")?,
                "draw_scheme" => {
                    self.model.draw_scheme = DrawScheme::parse(get_str(val, "model.draw_scheme")?)?
                }
                other => return Err(Error::Config(format!("unknown key: model.{other}"))),
            }
        }
        Ok(())
    }

    fn absorb_mapl(&mut self, t: &toml::Table) -> Result<()> {
        // order-independent: remember whether FM was requested, then apply
        // the (possibly overridden) polynomial order
        let mut want_fm = matches!(self.model.mapl_distribution, DistributionKind::FosgerauMabit { .. });
        for (key, val) in t {
            match key.as_str() {
                "estimator" => {
                    self.model.mapl_estimator = EstimatorKind::parse(get_str(val, "mapl.estimator")?)?
                }
                "distribution" => match get_str(val, "mapl.distribution")? {
                    "normal" => want_fm = false,
                    "fosgerau_mabit" => want_fm = true,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown distribution {other:?}; expected normal or fosgerau_mabit"
                        )))
                    }
                },
                "fm_order" => {
                    self.fm_order = get_usize(val, "mapl.fm_order")?;
                    if self.fm_order == 0 {
                        return Err(Error::Config("mapl.fm_order must be at least 1".into()));
                    }
                }
                other => return Err(Error::Config(format!("unknown key: mapl.{other}"))),
            }
        }
        self.model.mapl_distribution = if want_fm {
            DistributionKind::FosgerauMabit { order: self.fm_order }
        } else {
            DistributionKind::Normal
        };
        Ok(())
    }

    fn absorb_nn(&mut self, t: &toml::Table) -> Result<()> {
        for (key, val) in t {
            match key.as_str() {
                "hidden" => self.model.nn.hidden = get_usize_list(val, "nn.hidden")?,
                "dropout" => self.model.nn.dropout = get_f64(val, "nn.dropout")?,
                "layer_norm" => self.model.nn.layer_norm = get_bool(val, "nn.layer_norm")?,
                "lr" => self.model.nn.lr = get_f64(val, "nn.lr")?,
                "seed" => self.model.nn.seed = Some(get_u64(val, "nn.seed")?),
                other => return Err(Error::Config(format!("unknown key: nn.{other}"))),
            }
        }
        Ok(())
    }

    fn absorb_train(&mut self, t: &toml::Table) -> Result<()> {
        for (key, val) in t {
            match key.as_str() {
                "epochs" => self.train.epochs = get_usize(val, "train.epochs")?,
                "lr" => self.train.lr = get_f64(val, "train.lr")?,
                "seed" => self.train.seed = get_u64(val, "train.seed")?,
                "eval_every" => self.train.eval_every = get_usize(val, "train.eval_every")?,
                other => return Err(Error::Config(format!("unknown key: train.{other}"))),
            }
        }
        Ok(())
    }

    fn absorb_experiment(&mut self, t: &toml::Table) -> Result<()> {
        for (key, val) in t {
            match key.as_str() {
                "replications" => {
                    self.experiment.replications = get_usize(val, "experiment.replications")?
                }
                "base_seed" => self.experiment.base_seed = get_u64(val, "experiment.base_seed")?,
                "train_fraction" => {
                    self.experiment.train_fraction = get_f64(val, "experiment.train_fraction")?
                }
                "scenarios" => {
                    self.experiment.scenarios = get_str_list(val, "experiment.scenarios")?
                        .iter()
                        .map(|s| Scenario::parse(s))
                        .collect::<Result<_>>()?
                }
                "models" => self.experiment.models = get_str_list(val, "experiment.models")?,
                "sizes" => self.experiment.sizes = get_usize_list(val, "experiment.sizes")?,
                "sweep_scenario" => {
                    self.experiment.sweep_scenario =
                        Scenario::parse(get_str(val, "experiment.sweep_scenario")?)?
                }
                "sweep_model" => {
                    self.experiment.sweep_model = get_str(val, "experiment.sweep_model")?.into()
                }
                other => return Err(Error::Config(format!("unknown key: experiment.{other}"))),
            }
        }
        Ok(())
    }

    /// Full-scale batch settings: 10,000 individuals, 20 replications, 2,000
    /// training epochs.
    pub fn apply_paper_scale(&mut self) {
        self.sim.n_individuals = 10_000;
        self.experiment.replications = 20;
        self.train.epochs = 2_000;
    }

    /// The generator this run simulates from; requires `dgp.scenario`.
    pub fn dgp_spec(&self) -> Result<DgpSpec> {
        let scenario =
            self.dgp.scenario.ok_or_else(|| Error::Config("missing key: dgp.scenario".into()))?;
        self.dgp_spec_for(scenario)
    }

    /// A generator for an explicit scenario with this config's coefficient
    /// overrides applied.
    pub fn dgp_spec_for(&self, scenario: Scenario) -> Result<DgpSpec> {
        let mut spec = DgpSpec::with_defaults(scenario);
        if let Some(v) = self.dgp.beta0 {
            spec.beta0 = v;
        }
        if let Some(v) = self.dgp.mu1 {
            spec.mu1 = v;
        }
        if let Some(v) = self.dgp.mu2 {
            spec.mu2 = v;
        }
        if let Some(v) = self.dgp.sigma1 {
            spec.sigma1 = v;
        }
        if let Some(v) = self.dgp.sigma2 {
            spec.sigma2 = v;
        }
        if let Some(v) = self.dgp.sigma12 {
            spec.sigma12 = v;
        }
        if let Some(v) = self.dgp.beta3 {
            spec.beta3 = v;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Build a model spec from a results-file label, inheriting draw counts
    /// and network settings from `model.*`/`nn.*`.
    pub fn model_spec(&self, label: &str) -> Result<ModelSpec> {
        let base = self.model.clone();
        let fm = DistributionKind::FosgerauMabit { order: self.fm_order };
        let spec = match label {
            "mnl" => ModelSpec { kind: ModelKind::Mnl, ..base },
            "mxl" => ModelSpec { kind: ModelKind::Mxl, ..base },
            "simple_nn" => ModelSpec { kind: ModelKind::SimpleNn, ..base },
            "deep_nn" => ModelSpec { kind: ModelKind::DeepNn, ..base },
            "mapl_normal" => ModelSpec {
                kind: ModelKind::Mapl,
                mapl_estimator: EstimatorKind::Mlp,
                mapl_distribution: DistributionKind::Normal,
                ..base
            },
            "mapl_fm" => ModelSpec {
                kind: ModelKind::Mapl,
                mapl_estimator: EstimatorKind::Mlp,
                mapl_distribution: fm,
                ..base
            },
            "mapl_linear_normal" => ModelSpec {
                kind: ModelKind::Mapl,
                mapl_estimator: EstimatorKind::Linear,
                mapl_distribution: DistributionKind::Normal,
                ..base
            },
            "mapl_linear_fm" => ModelSpec {
                kind: ModelKind::Mapl,
                mapl_estimator: EstimatorKind::Linear,
                mapl_distribution: fm,
                ..base
            },
            other => return Err(Error::Config(format!("unknown model label {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The misspecification-grid plan implied by `[experiment]`.
    pub fn experiment_plan(&self) -> Result<ExperimentPlan> {
        let dgps = self
            .experiment
            .scenarios
            .iter()
            .map(|&s| self.dgp_spec_for(s))
            .collect::<Result<Vec<_>>>()?;
        let models = self
            .experiment
            .models
            .iter()
            .map(|l| self.model_spec(l))
            .collect::<Result<Vec<_>>>()?;
        let plan = ExperimentPlan {
            dgps,
            models,
            replications: self.experiment.replications,
            sim: self.sim,
            train: self.train,
            base_seed: self.experiment.base_seed,
            train_fraction: self.experiment.train_fraction,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// The sample-size-sweep plan: one scenario, one model, the configured
    /// sizes.
    pub fn sweep_plan(&self) -> Result<(ExperimentPlan, Vec<usize>)> {
        if self.experiment.sizes.is_empty() {
            return Err(Error::Config("experiment.sizes must not be empty".into()));
        }
        let plan = ExperimentPlan {
            dgps: vec![self.dgp_spec_for(self.experiment.sweep_scenario)?],
            models: vec![self.model_spec(&self.experiment.sweep_model)?],
            replications: self.experiment.replications,
            sim: self.sim,
            train: self.train,
            base_seed: self.experiment.base_seed,
            train_fraction: self.experiment.train_fraction,
        };
        plan.validate()?;
        Ok((plan, self.experiment.sizes.clone()))
    }

    /// Deterministic rendering of every resolved field, used for hashing and
    /// for echoing the effective configuration.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let dgp = &self.dgp;
        let opt = |o: Option<f64>| o.map_or("default".to_string(), |v| format!("{v:?}"));
        s.push_str(&format!(
            "dgp.scenario={}\n",
            dgp.scenario.map_or("unset", |sc| sc.label())
        ));
        s.push_str(&format!("dgp.beta0={}\n", opt(dgp.beta0)));
        s.push_str(&format!("dgp.mu1={}\n", opt(dgp.mu1)));
        s.push_str(&format!("dgp.mu2={}\n", opt(dgp.mu2)));
        s.push_str(&format!("dgp.sigma1={}\n", opt(dgp.sigma1)));
        s.push_str(&format!("dgp.sigma2={}\n", opt(dgp.sigma2)));
        s.push_str(&format!("dgp.sigma12={}\n", opt(dgp.sigma12)));
        s.push_str(&format!("dgp.beta3={}\n", opt(dgp.beta3)));
        s.push_str(&format!("sim.n_individuals={}\n", self.sim.n_individuals));
        s.push_str(&format!("sim.tasks_per_individual={}\n", self.sim.tasks_per_individual));
        s.push_str(&format!("sim.alternatives={}\n", self.sim.alternatives));
        s.push_str(&format!("sim.oracle_draws={}\n", self.sim.oracle_draws));
        s.push_str(&format!("sim.seed={}\n", self.sim.seed));
        s.push_str(&format!("model.kind={}\n", self.model.label()));
        s.push_str(&format!("model.R_train={}\n", self.model.r_train));
        s.push_str(&format!("model.R_eval={}\n", self.model.r_eval));
        s.push_str(&format!(
            "model.draw_scheme={}\n",
            match self.model.draw_scheme {
                DrawScheme::Frozen => "frozen",
                DrawScheme::PerEpoch => "per_epoch",
            }
        ));
        s.push_str(&format!("mapl.distribution={}\n", self.model.mapl_distribution.label()));
        s.push_str(&format!("mapl.fm_order={}\n", self.fm_order));
        s.push_str(&format!("nn.hidden={:?}\n", self.model.nn.hidden));
        s.push_str(&format!("nn.dropout={:?}\n", self.model.nn.dropout));
        s.push_str(&format!("nn.layer_norm={}\n", self.model.nn.layer_norm));
        s.push_str(&format!("nn.lr={:?}\n", self.model.nn.lr));
        s.push_str(&format!(
            "nn.seed={}\n",
            self.model.nn.seed.map_or("derived".to_string(), |v| v.to_string())
        ));
        s.push_str(&format!("train.epochs={}\n", self.train.epochs));
        s.push_str(&format!("train.lr={:?}\n", self.train.lr));
        s.push_str(&format!("train.seed={}\n", self.train.seed));
        s.push_str(&format!("train.eval_every={}\n", self.train.eval_every));
        s.push_str(&format!("experiment.replications={}\n", self.experiment.replications));
        s.push_str(&format!("experiment.base_seed={}\n", self.experiment.base_seed));
        s.push_str(&format!("experiment.train_fraction={:?}\n", self.experiment.train_fraction));
        s.push_str(&format!(
            "experiment.scenarios={:?}\n",
            self.experiment.scenarios.iter().map(|sc| sc.label()).collect::<Vec<_>>()
        ));
        s.push_str(&format!("experiment.models={:?}\n", self.experiment.models));
        s.push_str(&format!("experiment.sizes={:?}\n", self.experiment.sizes));
        s.push_str(&format!(
            "experiment.sweep_scenario={}\n",
            self.experiment.sweep_scenario.label()
        ));
        s.push_str(&format!("experiment.sweep_model={}\n", self.experiment.sweep_model));
        s
    }

    /// 64-bit FNV-1a hash of the canonical rendering; print with `{:016x}`.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.canonical_string().as_bytes())
    }
}

/// Parse one `--set section.key=value` pair into a scalar TOML value. Lists
/// and tables are deliberately unsupported; those belong in the config file.
fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

/// Apply `--set` pairs onto a parsed TOML tree. Keys must name a scalar as
/// `section.key`; validity of the key itself is checked by the regular
/// config walk afterwards.
pub fn apply_set_overrides(root: &mut toml::Table, sets: &[(String, String)]) -> Result<()> {
    for (key, raw) in sets {
        let mut parts = key.split('.');
        let (section, field) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(f), None) if !s.is_empty() && !f.is_empty() => (s, f),
            _ => {
                return Err(Error::Config(format!(
                    "--set key must look like section.key, got {key:?}"
                )))
            }
        };
        let entry = root
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("config section [{section}] is not a table")))?;
        table.insert(field.to_string(), parse_scalar(raw));
    }
    Ok(())
}

/// Split a raw `key=value` argument.
pub fn parse_set_arg(arg: &str) -> Result<(String, String)> {
    match arg.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(Error::Config(format!("--set expects key=value, got {arg:?}"))),
    }
}
