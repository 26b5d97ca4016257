//! The model zoo: MNL, mixed logit, plain utility networks, and MAPL.
//!
//! Every model exposes choice probabilities and a negative log-likelihood
//! with exact gradients (analytic, or differentiated through frozen draws),
//! so they all train through the same loop.

pub mod mapl;
pub mod mnl;
pub mod mxl;
pub mod nn_baseline;

use std::cell::Cell;

use ndarray::Array2;

use crate::data::ChoiceDataset;
use crate::dist::DistributionKind;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache, MlpConfig, Mode};
use crate::rng::{stable_hash, Stream};
use crate::train::{train_loop, TrainConfig, TrainingTrace};

use mapl::{dataset_feature_matrix, draws_for_dataset, mapl_nll_grad, mapl_probabilities};
use mnl::mnl_nll;
use mxl::{mxl_snll, mxl_task_probabilities, MxlDraws, MXL_PARAM_COUNT};
use nn_baseline::{nn_task_probabilities, nn_utility_nll_grad};

/// Softmax with max-subtraction: maps a slice of valences to choice
/// probabilities in place. Safe against overflow for any finite input and
/// invariant to adding a common constant.
pub fn logit_link_inplace(v: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &x in v.iter() {
        if x > max {
            max = x;
        }
    }
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

/// Softmax over valences, returning a fresh probability vector.
pub fn logit_link(valences: &[f64]) -> Vec<f64> {
    let mut p = valences.to_vec();
    logit_link_inplace(&mut p);
    p
}

/// Which estimator family a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mnl,
    Mxl,
    SimpleNn,
    DeepNn,
    Mapl,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnl" => Ok(ModelKind::Mnl),
            "mxl" => Ok(ModelKind::Mxl),
            "simple_nn" => Ok(ModelKind::SimpleNn),
            "deep_nn" => Ok(ModelKind::DeepNn),
            "mapl" => Ok(ModelKind::Mapl),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?}; expected one of mnl, mxl, simple_nn, deep_nn, mapl"
            ))),
        }
    }
}

/// Architecture of the MAPL estimator that maps features to distribution
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Linear,
    Mlp,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EstimatorKind::Linear),
            "mlp" => Ok(EstimatorKind::Mlp),
            other => Err(Error::Config(format!(
                "unknown estimator {other:?}; expected linear or mlp"
            ))),
        }
    }
}

/// How simulation draws behave across training epochs. Frozen common random
/// numbers keep the simulated objective deterministic; per-epoch draws trade
/// that for lower draw bias at a given R.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawScheme {
    Frozen,
    PerEpoch,
}

impl DrawScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(DrawScheme::Frozen),
            "per_epoch" => Ok(DrawScheme::PerEpoch),
            other => Err(Error::Config(format!(
                "unknown draw scheme {other:?}; expected frozen or per_epoch"
            ))),
        }
    }
}

/// Network hyperparameters shared by every model that trains an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct NnSettings {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub layer_norm: bool,
    /// Learning rate used for network-parameterized models; scalar
    /// coefficient models use the training config's rate instead.
    pub lr: f64,
    /// Weight init seed; derived from the training seed when absent.
    pub seed: Option<u64>,
}

impl Default for NnSettings {
    fn default() -> Self {
        NnSettings { hidden: vec![64, 64], dropout: 0.1, layer_norm: true, lr: 1e-3, seed: None }
    }
}

/// Everything that defines a model to be estimated, minus the data and the
/// optimizer budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub mapl_estimator: EstimatorKind,
    pub mapl_distribution: DistributionKind,
    /// Simulation draws per task (MAPL) or per individual (MXL) during
    /// training.
    pub r_train: usize,
    /// Fresh draws used for held-out evaluation.
    pub r_eval: usize,
    pub draw_scheme: DrawScheme,
    pub nn: NnSettings,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Mapl,
            mapl_estimator: EstimatorKind::Mlp,
            mapl_distribution: DistributionKind::Normal,
            r_train: 200,
            r_eval: 1_000,
            draw_scheme: DrawScheme::Frozen,
            nn: NnSettings::default(),
        }
    }
}

impl ModelSpec {
    pub fn mnl() -> Self {
        ModelSpec { kind: ModelKind::Mnl, ..ModelSpec::default() }
    }

    pub fn mxl() -> Self {
        ModelSpec { kind: ModelKind::Mxl, ..ModelSpec::default() }
    }

    pub fn simple_nn() -> Self {
        ModelSpec { kind: ModelKind::SimpleNn, ..ModelSpec::default() }
    }

    pub fn deep_nn() -> Self {
        ModelSpec { kind: ModelKind::DeepNn, ..ModelSpec::default() }
    }

    pub fn mapl(estimator: EstimatorKind, distribution: DistributionKind) -> Self {
        ModelSpec {
            kind: ModelKind::Mapl,
            mapl_estimator: estimator,
            mapl_distribution: distribution,
            ..ModelSpec::default()
        }
    }

    /// Short identifier used in result files.
    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::Mnl => "mnl".into(),
            ModelKind::Mxl => "mxl".into(),
            ModelKind::SimpleNn => "simple_nn".into(),
            ModelKind::DeepNn => "deep_nn".into(),
            ModelKind::Mapl => {
                let dist = match self.mapl_distribution {
                    DistributionKind::Normal => "normal",
                    DistributionKind::FosgerauMabit { .. } => "fm",
                };
                match self.mapl_estimator {
                    EstimatorKind::Mlp => format!("mapl_{dist}"),
                    EstimatorKind::Linear => format!("mapl_linear_{dist}"),
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_train == 0 || self.r_eval == 0 {
            return Err(Error::Config("simulation draw counts must be at least 1".into()));
        }
        if self.mapl_distribution.param_count() == 0 {
            return Err(Error::Config("distribution family has no parameters".into()));
        }
        if !(self.nn.dropout >= 0.0 && self.nn.dropout < 1.0) {
            return Err(Error::Config(format!(
                "nn.dropout must lie in [0, 1), got {}",
                self.nn.dropout
            )));
        }
        if !(self.nn.lr > 0.0) {
            return Err(Error::Config(format!("nn.lr must be positive, got {}", self.nn.lr)));
        }
        Ok(())
    }

    /// Network-parameterized models train at `nn.lr`; scalar-coefficient
    /// models (MNL, MXL, linear-estimator MAPL) use the base rate.
    fn uses_network_lr(&self) -> bool {
        matches!(self.kind, ModelKind::SimpleNn | ModelKind::DeepNn)
            || (self.kind == ModelKind::Mapl && self.mapl_estimator == EstimatorKind::Mlp)
    }

    fn estimator_config(&self, k: usize, init_seed: u64) -> MlpConfig {
        let s = self.mapl_distribution.param_count();
        match self.mapl_estimator {
            EstimatorKind::Linear => MlpConfig::linear(k, s, init_seed),
            EstimatorKind::Mlp => MlpConfig {
                input_dim: k,
                hidden_dims: self.nn.hidden.clone(),
                output_dim: s,
                dropout_rate: self.nn.dropout,
                use_layer_norm: self.nn.layer_norm,
                init_seed,
            },
        }
    }

    fn trunk_config(&self, k: usize, init_seed: u64) -> MlpConfig {
        let hidden = match self.kind {
            // the deep variant doubles the hidden stack
            ModelKind::DeepNn => {
                let mut h = self.nn.hidden.clone();
                h.extend_from_slice(&self.nn.hidden);
                h
            }
            _ => self.nn.hidden.clone(),
        };
        MlpConfig {
            input_dim: k,
            hidden_dims: hidden,
            output_dim: 1,
            dropout_rate: self.nn.dropout,
            use_layer_norm: self.nn.layer_norm,
            init_seed,
        }
    }
}

fn derive_seed(seed: u64, label: &str) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), label.as_bytes()])
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), b"epoch", &(epoch as u64).to_le_bytes()])
}

/// Trained parameters: a flat coefficient vector for scalar models, a full
/// network for the rest.
#[derive(Debug, Clone)]
pub enum FittedParams {
    Coefficients(Vec<f64>),
    Network(Mlp),
}

/// Result of [`fit`]: best-validation parameters plus training diagnostics.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub params: FittedParams,
    pub trace: TrainingTrace,
    pub train_seed: u64,
    /// Probability-floor activations summed over all training epochs.
    pub train_floor_hits: u64,
}

/// Held-out evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub nll_total: f64,
    pub floor_hits: u64,
}

impl EvalReport {
    pub fn nll_per_obs(&self, n_obs: usize) -> f64 {
        self.nll_total / n_obs as f64
    }
}

/// Estimate a model on `train`, tracking the per-observation validation NLL
/// on `valid` and returning the best-validation snapshot.
pub fn fit(
    spec: &ModelSpec,
    train: &ChoiceDataset,
    valid: &ChoiceDataset,
    tcfg: &TrainConfig,
) -> Result<FittedModel> {
    spec.validate()?;
    if train.n_features() != valid.n_features() || train.alternatives() != valid.alternatives() {
        return Err(Error::Shape(
            "training and validation datasets disagree on features or alternatives".into(),
        ));
    }
    let mut tc = *tcfg;
    if spec.uses_network_lr() {
        tc.lr = spec.nn.lr;
    }
    let n_tr = train.n_obs() as f64;
    let n_va = valid.n_obs() as f64;
    let floor_hits = Cell::new(0u64);

    match spec.kind {
        ModelKind::Mnl => {
            let k = train.n_features();
            let loss = |p: &[f64], _e: usize, g: &mut [f64]| -> Result<f64> {
                let (nll, grad) = mnl_nll(p, train)?;
                for (gi, gr) in g.iter_mut().zip(&grad) {
                    *gi = gr / n_tr;
                }
                Ok(nll / n_tr)
            };
            let valid_f = |p: &[f64]| -> Result<f64> { Ok(mnl_nll(p, valid)?.0 / n_va) };
            let (best, trace) = train_loop(loss, vec![0.0; k], &tc, valid_f)?;
            Ok(FittedModel {
                spec: spec.clone(),
                params: FittedParams::Coefficients(best),
                trace,
                train_seed: tc.seed,
                train_floor_hits: 0,
            })
        }
        ModelKind::Mxl => {
            let mut cur =
                MxlDraws::generate(train.n_individuals(), spec.r_train, tc.seed, Stream::TrainDraws);
            let valid_draws =
                MxlDraws::generate(valid.n_individuals(), spec.r_train, tc.seed, Stream::EvalDraws);
            let (scheme, r_train, seed, n_ind) =
                (spec.draw_scheme, spec.r_train, tc.seed, train.n_individuals());
            let fh = &floor_hits;
            let loss = move |p: &[f64], e: usize, g: &mut [f64]| -> Result<f64> {
                if scheme == DrawScheme::PerEpoch {
                    cur = MxlDraws::generate(n_ind, r_train, epoch_seed(seed, e), Stream::TrainDraws);
                }
                let (snll, grad, clamps) = mxl_snll(p, train, &cur)?;
                fh.set(fh.get() + clamps);
                for (gi, gr) in g.iter_mut().zip(&grad) {
                    *gi = gr / n_tr;
                }
                Ok(snll / n_tr)
            };
            let valid_f = |p: &[f64]| -> Result<f64> { Ok(mxl_snll(p, valid, &valid_draws)?.0 / n_va) };
            let (best, trace) = train_loop(loss, vec![0.0; MXL_PARAM_COUNT], &tc, valid_f)?;
            Ok(FittedModel {
                spec: spec.clone(),
                params: FittedParams::Coefficients(best),
                trace,
                train_seed: tc.seed,
                train_floor_hits: floor_hits.get(),
            })
        }
        ModelKind::Mapl => {
            let kind = spec.mapl_distribution;
            let init_seed =
                spec.nn.seed.unwrap_or_else(|| derive_seed(tc.seed, "estimator-init"));
            let mut template = Mlp::new(spec.estimator_config(train.n_features(), init_seed))?;
            if matches!(kind, DistributionKind::FosgerauMabit { .. }) && kind.param_count() > 1 {
                // Start the polynomial head at the identity transform (valence
                // = u) so its initial heterogeneity is non-degenerate, on par
                // with the normal head's unit-sigma start from zero biases.
                template.set_output_bias(1, 1.0);
            }
            let n_alts = train.alternatives();
            let x_train = dataset_feature_matrix(train);
            let x_valid = dataset_feature_matrix(valid);
            let train_chosen = train.chosen_flat().to_vec();
            let valid_chosen = valid.chosen_flat().to_vec();
            let mut cur = draws_for_dataset(train, kind, spec.r_train, tc.seed, Stream::TrainDraws);
            let valid_draws =
                draws_for_dataset(valid, kind, spec.r_train, tc.seed, Stream::EvalDraws);
            let (scheme, r_train, seed) = (spec.draw_scheme, spec.r_train, tc.seed);
            let fh = &floor_hits;
            let mut net_t = template.clone();
            let mut cache_t = MlpCache::new();
            let mut up_t = Array2::zeros((0, 0));
            let mut net_v = template.clone();
            let mut cache_v = MlpCache::new();
            let mut up_v = Array2::zeros((0, 0));
            let loss = move |p: &[f64], e: usize, g: &mut [f64]| -> Result<f64> {
                if scheme == DrawScheme::PerEpoch {
                    cur = mapl::MaplDraws::generate(
                        train_chosen.len(),
                        r_train,
                        n_alts,
                        kind,
                        epoch_seed(seed, e),
                        Stream::TrainDraws,
                    );
                }
                net_t.set_params(p)?;
                g.fill(0.0);
                let (nll, clamps) = mapl_nll_grad(
                    &net_t,
                    kind,
                    &x_train,
                    &train_chosen,
                    n_alts,
                    &cur,
                    Mode::Train,
                    epoch_seed(seed, e),
                    &mut cache_t,
                    &mut up_t,
                    Some(g),
                )?;
                fh.set(fh.get() + clamps);
                for gi in g.iter_mut() {
                    *gi /= n_tr;
                }
                Ok(nll / n_tr)
            };
            let valid_f = move |p: &[f64]| -> Result<f64> {
                net_v.set_params(p)?;
                let (nll, _) = mapl_nll_grad(
                    &net_v,
                    kind,
                    &x_valid,
                    &valid_chosen,
                    n_alts,
                    &valid_draws,
                    Mode::Eval,
                    0,
                    &mut cache_v,
                    &mut up_v,
                    None,
                )?;
                Ok(nll / n_va)
            };
            let (best, trace) = train_loop(loss, template.params().to_vec(), &tc, valid_f)?;
            let mut final_net = template;
            final_net.set_params(&best)?;
            Ok(FittedModel {
                spec: spec.clone(),
                params: FittedParams::Network(final_net),
                trace,
                train_seed: tc.seed,
                train_floor_hits: floor_hits.get(),
            })
        }
        ModelKind::SimpleNn | ModelKind::DeepNn => {
            let init_seed = spec.nn.seed.unwrap_or_else(|| derive_seed(tc.seed, "trunk-init"));
            let template = Mlp::new(spec.trunk_config(train.n_features(), init_seed))?;
            let n_alts = train.alternatives();
            let x_train = dataset_feature_matrix(train);
            let x_valid = dataset_feature_matrix(valid);
            let train_chosen = train.chosen_flat().to_vec();
            let valid_chosen = valid.chosen_flat().to_vec();
            let seed = tc.seed;
            let fh = &floor_hits;
            let mut net_t = template.clone();
            let mut cache_t = MlpCache::new();
            let mut up_t = Array2::zeros((0, 0));
            let mut net_v = template.clone();
            let mut cache_v = MlpCache::new();
            let mut up_v = Array2::zeros((0, 0));
            let loss = move |p: &[f64], e: usize, g: &mut [f64]| -> Result<f64> {
                net_t.set_params(p)?;
                g.fill(0.0);
                let (nll, clamps) = nn_utility_nll_grad(
                    &net_t,
                    &x_train,
                    &train_chosen,
                    n_alts,
                    Mode::Train,
                    epoch_seed(seed, e),
                    &mut cache_t,
                    &mut up_t,
                    Some(g),
                )?;
                fh.set(fh.get() + clamps);
                for gi in g.iter_mut() {
                    *gi /= n_tr;
                }
                Ok(nll / n_tr)
            };
            let valid_f = move |p: &[f64]| -> Result<f64> {
                net_v.set_params(p)?;
                let (nll, _) = nn_utility_nll_grad(
                    &net_v,
                    &x_valid,
                    &valid_chosen,
                    n_alts,
                    Mode::Eval,
                    0,
                    &mut cache_v,
                    &mut up_v,
                    None,
                )?;
                Ok(nll / n_va)
            };
            let (best, trace) = train_loop(loss, template.params().to_vec(), &tc, valid_f)?;
            let mut final_net = template;
            final_net.set_params(&best)?;
            Ok(FittedModel {
                spec: spec.clone(),
                params: FittedParams::Network(final_net),
                trace,
                train_seed: tc.seed,
                train_floor_hits: floor_hits.get(),
            })
        }
    }
}

impl FittedModel {
    /// Held-out NLL with fresh evaluation draws derived from `seed`.
    pub fn eval_nll(&self, ds: &ChoiceDataset, seed: u64) -> Result<EvalReport> {
        match (&self.params, self.spec.kind) {
            (FittedParams::Coefficients(beta), ModelKind::Mnl) => {
                let (nll, _) = mnl_nll(beta, ds)?;
                Ok(EvalReport { nll_total: nll, floor_hits: 0 })
            }
            (FittedParams::Coefficients(p), ModelKind::Mxl) => {
                // Evaluated task by task (mean probability over draws per
                // task), matching how every other model in the zoo is scored.
                let draws =
                    MxlDraws::generate(ds.n_individuals(), self.spec.r_eval, seed, Stream::EvalDraws);
                let floor = crate::dgp::LN_PROB_FLOOR.exp();
                let mut nll_total = 0.0;
                let mut floor_hits = 0u64;
                for i in 0..ds.n_individuals() {
                    for t in 0..ds.tasks_per_individual() {
                        let probs = mxl_task_probabilities(p, ds, i, t, &draws)?;
                        let mut pc = probs[ds.chosen(i, t)];
                        if pc < floor {
                            pc = floor;
                            floor_hits += 1;
                        }
                        nll_total -= pc.ln();
                    }
                }
                Ok(EvalReport { nll_total, floor_hits })
            }
            (FittedParams::Network(net), ModelKind::Mapl) => {
                let kind = self.spec.mapl_distribution;
                let draws = draws_for_dataset(ds, kind, self.spec.r_eval, seed, Stream::EvalDraws);
                let x = dataset_feature_matrix(ds);
                let mut cache = MlpCache::new();
                let mut upstream = Array2::zeros((0, 0));
                let (nll, clamps) = mapl_nll_grad(
                    net,
                    kind,
                    &x,
                    ds.chosen_flat(),
                    ds.alternatives(),
                    &draws,
                    Mode::Eval,
                    0,
                    &mut cache,
                    &mut upstream,
                    None,
                )?;
                Ok(EvalReport { nll_total: nll, floor_hits: clamps })
            }
            (FittedParams::Network(net), ModelKind::SimpleNn | ModelKind::DeepNn) => {
                let x = dataset_feature_matrix(ds);
                let mut cache = MlpCache::new();
                let mut upstream = Array2::zeros((0, 0));
                let (nll, clamps) = nn_utility_nll_grad(
                    net,
                    &x,
                    ds.chosen_flat(),
                    ds.alternatives(),
                    Mode::Eval,
                    0,
                    &mut cache,
                    &mut upstream,
                    None,
                )?;
                Ok(EvalReport { nll_total: nll, floor_hits: clamps })
            }
            _ => Err(Error::Shape(
                "fitted parameter container does not match the model kind".into(),
            )),
        }
    }

    /// Choice probabilities for every task in `ds`, flattened task-major:
    /// entry `t * J + j` is the probability of alternative `j` in flat task
    /// `t`. Simulation-based models use `n_draws` draws derived from `seed`.
    pub fn predict_probabilities(
        &self,
        ds: &ChoiceDataset,
        n_draws: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let j = ds.alternatives();
        let k = ds.n_features();
        let mut out = Vec::with_capacity(ds.n_obs() * j);
        match (&self.params, self.spec.kind) {
            (FittedParams::Coefficients(beta), ModelKind::Mnl) => {
                let mut v = vec![0.0; j];
                for i in 0..ds.n_individuals() {
                    for t in 0..ds.tasks_per_individual() {
                        let x = ds.task_features(i, t);
                        for (jj, vj) in v.iter_mut().enumerate() {
                            *vj = beta
                                .iter()
                                .zip(&x[jj * k..(jj + 1) * k])
                                .map(|(a, b)| a * b)
                                .sum();
                        }
                        out.extend(logit_link(&v));
                    }
                }
            }
            (FittedParams::Coefficients(p), ModelKind::Mxl) => {
                let draws = MxlDraws::generate(ds.n_individuals(), n_draws, seed, Stream::EvalDraws);
                for i in 0..ds.n_individuals() {
                    for t in 0..ds.tasks_per_individual() {
                        out.extend(mxl_task_probabilities(p, ds, i, t, &draws)?);
                    }
                }
            }
            (FittedParams::Network(net), ModelKind::Mapl) => {
                let kind = self.spec.mapl_distribution;
                let draws = draws_for_dataset(ds, kind, n_draws, seed, Stream::EvalDraws);
                let mut flat = 0usize;
                for i in 0..ds.n_individuals() {
                    for t in 0..ds.tasks_per_individual() {
                        out.extend(mapl_probabilities(
                            net,
                            kind,
                            ds.task_features(i, t),
                            j,
                            &draws,
                            flat,
                        )?);
                        flat += 1;
                    }
                }
            }
            (FittedParams::Network(net), ModelKind::SimpleNn | ModelKind::DeepNn) => {
                for i in 0..ds.n_individuals() {
                    for t in 0..ds.tasks_per_individual() {
                        out.extend(nn_task_probabilities(net, ds.task_features(i, t), j)?);
                    }
                }
            }
            _ => {
                return Err(Error::Shape(
                    "fitted parameter container does not match the model kind".into(),
                ))
            }
        }
        Ok(out)
    }

    /// Number of trained scalar parameters.
    pub fn n_params(&self) -> usize {
        match &self.params {
            FittedParams::Coefficients(c) => c.len(),
            FittedParams::Network(n) => n.n_params(),
        }
    }
}
