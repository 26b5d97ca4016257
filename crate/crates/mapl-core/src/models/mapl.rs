//! The aggregate-heterogeneity logit: a shared estimator network maps each
//! alternative's features to the parameters of a valence distribution, and
//! choice probabilities are the Monte Carlo average over quantile draws of
//! the within-task softmax.
//!
//! The likelihood kernel is split from the network so it can also be driven
//! with externally computed distribution parameters (closed forms, hand
//! constructions in tests).

use ndarray::Array2;

use crate::data::ChoiceDataset;
use crate::dgp::LN_PROB_FLOOR;
use crate::dist::{phi_inv, DistributionKind};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache, Mode};
use crate::rng::{stream_rng, Stream};
use rand::Rng;

/// log σ outputs are clamped to this magnitude before exponentiation so a
/// wild estimator cannot overflow the valence scale; outside the clamp the
/// σ-gradient is zero (the clamp is flat there).
pub const MAPL_LOG_SIGMA_LIMIT: f64 = 30.0;

/// What the stored draw values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawForm {
    /// Standard normal quantiles Φ⁻¹(u) — used with the Normal family.
    Gaussian,
    /// Raw uniforms in (0, 1) — used with polynomial quantile families.
    Uniform,
}

impl DrawForm {
    pub fn for_kind(kind: DistributionKind) -> Self {
        match kind {
            DistributionKind::Normal => DrawForm::Gaussian,
            DistributionKind::FosgerauMabit { .. } => DrawForm::Uniform,
        }
    }
}

/// Quantile draws for a whole dataset: one scalar per (task, draw,
/// alternative), independent across tasks. Draws are generated once and
/// reused across likelihood evaluations (common random numbers), which keeps
/// the simulated objective deterministic during optimization.
#[derive(Debug, Clone)]
pub struct MaplDraws {
    values: Vec<f64>,
    n_tasks: usize,
    n_draws: usize,
    n_alts: usize,
    form: DrawForm,
}

impl MaplDraws {
    pub fn generate(
        n_tasks: usize,
        n_draws: usize,
        n_alts: usize,
        kind: DistributionKind,
        seed: u64,
        stream: Stream,
    ) -> Self {
        let mut rng = stream_rng(seed, stream);
        let form = DrawForm::for_kind(kind);
        let values = (0..n_tasks * n_draws * n_alts)
            .map(|_| {
                let u: f64 = rng.sample(rand::distr::Open01);
                match form {
                    DrawForm::Gaussian => phi_inv(u),
                    DrawForm::Uniform => u,
                }
            })
            .collect();
        MaplDraws { values, n_tasks, n_draws, n_alts, form }
    }

    /// Build draws from explicit uniforms laid out as (task, draw,
    /// alternative); uniforms must lie strictly inside (0, 1).
    pub fn from_uniforms(
        uniforms: &[f64],
        n_tasks: usize,
        n_draws: usize,
        n_alts: usize,
        kind: DistributionKind,
    ) -> Result<Self> {
        if uniforms.len() != n_tasks * n_draws * n_alts {
            return Err(Error::Shape(format!(
                "expected {} uniforms for {n_tasks} tasks x {n_draws} draws x {n_alts} alternatives, got {}",
                n_tasks * n_draws * n_alts,
                uniforms.len()
            )));
        }
        let form = DrawForm::for_kind(kind);
        let mut values = Vec::with_capacity(uniforms.len());
        for &u in uniforms {
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::Data(format!(
                    "uniform draw {u} outside the open interval (0, 1)"
                )));
            }
            values.push(match form {
                DrawForm::Gaussian => phi_inv(u),
                DrawForm::Uniform => u,
            });
        }
        Ok(MaplDraws { values, n_tasks, n_draws, n_alts, form })
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_alts(&self) -> usize {
        self.n_alts
    }

    pub fn form(&self) -> DrawForm {
        self.form
    }

    /// All draw values for one task, laid out as (draw, alternative).
    #[inline]
    pub fn task_slice(&self, task: usize) -> &[f64] {
        let stride = self.n_draws * self.n_alts;
        &self.values[task * stride..(task + 1) * stride]
    }
}

fn check_draws(draws: &MaplDraws, kind: DistributionKind, n_tasks: usize, n_alts: usize) -> Result<()> {
    if draws.form != DrawForm::for_kind(kind) {
        return Err(Error::Shape(format!(
            "draw form {:?} does not match distribution family {}",
            draws.form,
            kind.label()
        )));
    }
    if draws.n_tasks != n_tasks || draws.n_alts != n_alts {
        return Err(Error::Shape(format!(
            "draws cover {} tasks x {} alternatives, need {n_tasks} x {n_alts}",
            draws.n_tasks, draws.n_alts
        )));
    }
    Ok(())
}

/// Negative log likelihood of the aggregate-valence model given distribution
/// parameters for every (task, alternative) row, plus `d NLL / d params` in
/// `upstream` when requested.
///
/// `params` has one row per (task, alternative) in task-major order and one
/// column per distribution parameter. Per-task mean chosen probabilities are
/// floored at exp(`LN_PROB_FLOOR`); floored tasks contribute zero gradient.
/// Returns `(total nll, floor hits)`.
pub fn aggregate_nll_kernel(
    params: &Array2<f64>,
    kind: DistributionKind,
    chosen: &[usize],
    n_alts: usize,
    draws: &MaplDraws,
    mut upstream: Option<&mut Array2<f64>>,
) -> Result<(f64, u64)> {
    let n_tasks = chosen.len();
    let s = kind.param_count();
    check_draws(draws, kind, n_tasks, n_alts)?;
    if params.dim() != (n_tasks * n_alts, s) {
        return Err(Error::Shape(format!(
            "parameter matrix is {:?}, expected ({}, {s})",
            params.dim(),
            n_tasks * n_alts
        )));
    }
    if let Some(bad) = params.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "predicted distribution parameter (alternative row index in `step`)",
            step: (bad / s) as u64,
        });
    }
    if let Some(up) = upstream.as_deref_mut() {
        if up.dim() != params.dim() {
            return Err(Error::Shape(format!(
                "upstream buffer is {:?}, expected {:?}",
                up.dim(),
                params.dim()
            )));
        }
    }
    let pstd = params.as_standard_layout();
    let pflat = pstd.as_slice().expect("standard layout");

    let r_count = draws.n_draws;
    let ln_r = (r_count as f64).ln();
    let floor = LN_PROB_FLOOR.exp() * r_count as f64; // floor on the draw-sum
    let mut nll = 0.0;
    let mut clamps = 0u64;
    let mut nu = vec![0.0; n_alts];
    let mut g_acc = vec![0.0; n_alts * s];
    // Normal-family per-alternative scale and its clamp-aware gradient factor
    let mut sig = vec![0.0; n_alts];
    let mut sig_grad = vec![0.0; n_alts];

    for (t, &c) in chosen.iter().enumerate() {
        if c >= n_alts {
            return Err(Error::Data(format!("chosen index {c} out of range in task {t}")));
        }
        let rows = &pflat[t * n_alts * s..(t + 1) * n_alts * s];
        let dtask = draws.task_slice(t);
        g_acc[..n_alts * s].fill(0.0);
        let mut pbar = 0.0;

        match kind {
            DistributionKind::Normal => {
                for jj in 0..n_alts {
                    let ls = rows[jj * 2 + 1];
                    let clamped = ls.clamp(-MAPL_LOG_SIGMA_LIMIT, MAPL_LOG_SIGMA_LIMIT);
                    sig[jj] = clamped.exp();
                    sig_grad[jj] = if ls == clamped { sig[jj] } else { 0.0 };
                }
                for r in 0..r_count {
                    let d = &dtask[r * n_alts..(r + 1) * n_alts];
                    let mut vmax = f64::NEG_INFINITY;
                    for jj in 0..n_alts {
                        let v = rows[jj * 2] + sig[jj] * d[jj];
                        nu[jj] = v;
                        if v > vmax {
                            vmax = v;
                        }
                    }
                    let mut denom = 0.0;
                    for v in nu.iter_mut() {
                        *v = (*v - vmax).exp();
                        denom += *v;
                    }
                    let pc = nu[c] / denom;
                    pbar += pc;
                    for jj in 0..n_alts {
                        let p = nu[jj] / denom;
                        let coef = pc * (if jj == c { 1.0 } else { 0.0 } - p);
                        g_acc[jj * 2] += coef;
                        g_acc[jj * 2 + 1] += coef * sig_grad[jj] * d[jj];
                    }
                }
            }
            DistributionKind::FosgerauMabit { order } => {
                for r in 0..r_count {
                    let d = &dtask[r * n_alts..(r + 1) * n_alts];
                    let mut vmax = f64::NEG_INFINITY;
                    for jj in 0..n_alts {
                        let theta = &rows[jj * order..(jj + 1) * order];
                        // Horner evaluation of sum_m theta_m u^m
                        let u = d[jj];
                        let mut acc = 0.0;
                        for &th in theta.iter().rev() {
                            acc = acc * u + th;
                        }
                        nu[jj] = acc;
                        if acc > vmax {
                            vmax = acc;
                        }
                    }
                    let mut denom = 0.0;
                    for v in nu.iter_mut() {
                        *v = (*v - vmax).exp();
                        denom += *v;
                    }
                    let pc = nu[c] / denom;
                    pbar += pc;
                    for jj in 0..n_alts {
                        let p = nu[jj] / denom;
                        let coef = pc * (if jj == c { 1.0 } else { 0.0 } - p);
                        let u = d[jj];
                        let g = &mut g_acc[jj * order..(jj + 1) * order];
                        let mut pow = 1.0;
                        for gm in g.iter_mut() {
                            *gm += coef * pow;
                            pow *= u;
                        }
                    }
                }
            }
        }

        if pbar < floor {
            nll -= LN_PROB_FLOOR;
            clamps += 1;
            if let Some(up) = upstream.as_deref_mut() {
                up.slice_mut(ndarray::s![t * n_alts..(t + 1) * n_alts, ..]).fill(0.0);
            }
        } else {
            nll -= pbar.ln() - ln_r;
            if let Some(up) = upstream.as_deref_mut() {
                let scale = -1.0 / pbar;
                let mut block = up.slice_mut(ndarray::s![t * n_alts..(t + 1) * n_alts, ..]);
                for jj in 0..n_alts {
                    for ss in 0..s {
                        block[(jj, ss)] = scale * g_acc[jj * s + ss];
                    }
                }
            }
        }
    }
    Ok((nll, clamps))
}

/// Feature matrix for estimator input: one row per (individual, task,
/// alternative) in dataset order.
pub fn dataset_feature_matrix(ds: &ChoiceDataset) -> Array2<f64> {
    Array2::from_shape_vec(
        (ds.n_obs() * ds.alternatives(), ds.n_features()),
        ds.features_flat().to_vec(),
    )
    .expect("dataset feature storage is dense row-major")
}

/// Full model pass: estimator forward, likelihood, and (optionally) the
/// gradient with respect to estimator weights accumulated into `grads`.
///
/// `x` must have one row per (task, alternative) matching `chosen` /
/// `draws`; `upstream` is scratch reshaped on demand. Returns
/// `(total nll, floor hits)`.
#[allow(clippy::too_many_arguments)]
pub fn mapl_nll_grad(
    net: &Mlp,
    kind: DistributionKind,
    x: &Array2<f64>,
    chosen: &[usize],
    n_alts: usize,
    draws: &MaplDraws,
    mode: Mode,
    dropout_seed: u64,
    cache: &mut MlpCache,
    upstream: &mut Array2<f64>,
    grads: Option<&mut [f64]>,
) -> Result<(f64, u64)> {
    let s = kind.param_count();
    if net.cfg().output_dim != s {
        return Err(Error::Shape(format!(
            "estimator emits {} outputs, distribution family {} needs {s}",
            net.cfg().output_dim,
            kind.label()
        )));
    }
    if x.nrows() != chosen.len() * n_alts {
        return Err(Error::Shape(format!(
            "feature matrix has {} rows, expected {} tasks x {n_alts} alternatives",
            x.nrows(),
            chosen.len()
        )));
    }
    net.forward_batch(x, mode, dropout_seed, cache);
    let want_grad = grads.is_some();
    if want_grad && upstream.dim() != (x.nrows(), s) {
        *upstream = Array2::zeros((x.nrows(), s));
    }
    let (nll, clamps) = aggregate_nll_kernel(
        &cache.output,
        kind,
        chosen,
        n_alts,
        draws,
        if want_grad { Some(upstream) } else { None },
    )?;
    if let Some(g) = grads {
        net.backward_batch(upstream, cache, g);
    }
    Ok((nll, clamps))
}

/// Choice probabilities for a single task: estimator forward on the task's
/// alternatives, then the Monte Carlo softmax average over `draws` for that
/// task index.
pub fn mapl_probabilities(
    net: &Mlp,
    kind: DistributionKind,
    task_features: &[f64],
    n_alts: usize,
    draws: &MaplDraws,
    task: usize,
) -> Result<Vec<f64>> {
    let k = net.cfg().input_dim;
    if task_features.len() != n_alts * k {
        return Err(Error::Shape(format!(
            "task has {} feature values, expected {n_alts} alternatives x {k} features",
            task_features.len()
        )));
    }
    if task >= draws.n_tasks {
        return Err(Error::Shape(format!(
            "task index {task} outside the {} tasks covered by the draws",
            draws.n_tasks
        )));
    }
    check_draws(draws, kind, draws.n_tasks, n_alts)?;
    let x = Array2::from_shape_vec((n_alts, k), task_features.to_vec())
        .expect("length checked above");
    let mut cache = MlpCache::new();
    net.forward_batch(&x, Mode::Eval, 0, &mut cache);
    for jj in 0..n_alts {
        if cache.output.row(jj).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "predicted distribution parameter (alternative in `step`)",
                step: jj as u64,
            });
        }
    }
    let dtask = draws.task_slice(task);
    let r_count = draws.n_draws;
    let mut probs = vec![0.0; n_alts];
    let mut nu = vec![0.0; n_alts];
    for r in 0..r_count {
        let d = &dtask[r * n_alts..(r + 1) * n_alts];
        for jj in 0..n_alts {
            let row = cache.output.row(jj);
            nu[jj] = match kind {
                DistributionKind::Normal => {
                    let ls = row[1].clamp(-MAPL_LOG_SIGMA_LIMIT, MAPL_LOG_SIGMA_LIMIT);
                    row[0] + ls.exp() * d[jj]
                }
                DistributionKind::FosgerauMabit { .. } => {
                    let u = d[jj];
                    let mut acc = 0.0;
                    for &th in row.iter().rev() {
                        acc = acc * u + th;
                    }
                    acc
                }
            };
        }
        crate::models::logit_link_inplace(&mut nu);
        for (pj, vj) in probs.iter_mut().zip(&nu) {
            *pj += vj;
        }
    }
    let scale = 1.0 / r_count as f64;
    for pj in probs.iter_mut() {
        *pj *= scale;
    }
    Ok(probs)
}

/// Uniform draws for every task in a dataset, convenience for the common
/// "draws aligned with dataset" case.
pub fn draws_for_dataset(
    ds: &ChoiceDataset,
    kind: DistributionKind,
    n_draws: usize,
    seed: u64,
    stream: Stream,
) -> MaplDraws {
    MaplDraws::generate(ds.n_obs(), n_draws, ds.alternatives(), kind, seed, stream)
}
