//! Mixed logit with independent normal coefficients on the two non-cost
//! features, estimated by maximum simulated likelihood over a frozen set of
//! common random draws.
//!
//! Parameter vector layout (everything is trained in this order):
//! `[beta0, mu1, mu2, log_sd1, log_sd2]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::ChoiceDataset;
use crate::dgp::LN_PROB_FLOOR;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const MXL_PARAM_COUNT: usize = 5;

pub fn mxl_param_names() -> [&'static str; MXL_PARAM_COUNT] {
    ["beta0", "mu1", "mu2", "log_sd1", "log_sd2"]
}

/// Standard-normal draws shared across likelihood evaluations: one pair per
/// (individual, draw), reused for every parameter value so the simulated
/// likelihood is a smooth deterministic function during optimization.
#[derive(Debug, Clone)]
pub struct MxlDraws {
    z: Vec<f64>,
    n_individuals: usize,
    n_draws: usize,
}

impl MxlDraws {
    pub fn generate(n_individuals: usize, n_draws: usize, seed: u64, stream: Stream) -> Self {
        let mut rng = stream_rng(seed, stream);
        let z = (0..n_individuals * n_draws * 2)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        MxlDraws { z, n_individuals, n_draws }
    }

    pub fn n_individuals(&self) -> usize {
        self.n_individuals
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    /// The (z1, z2) pair for one (individual, draw).
    #[inline]
    pub fn pair(&self, i: usize, r: usize) -> (f64, f64) {
        let base = (i * self.n_draws + r) * 2;
        (self.z[base], self.z[base + 1])
    }
}

/// Simulated negative log likelihood with analytic gradient.
///
/// The panel likelihood for one individual is the average over draws of the
/// product of task choice probabilities; per-individual likelihoods are
/// floored at exp(`LN_PROB_FLOOR`), and floored individuals contribute zero
/// gradient (the floor is flat). Returns `(total snll, gradient, floor hits)`.
pub fn mxl_snll(
    params: &[f64],
    ds: &ChoiceDataset,
    draws: &MxlDraws,
) -> Result<(f64, Vec<f64>, u64)> {
    if params.len() != MXL_PARAM_COUNT {
        return Err(Error::Shape(format!(
            "expected {MXL_PARAM_COUNT} mixed-logit parameters, got {}",
            params.len()
        )));
    }
    if ds.n_features() != 3 {
        return Err(Error::Shape(format!(
            "mixed coefficients are defined on feature columns 1 and 2; dataset has {} features",
            ds.n_features()
        )));
    }
    if draws.n_individuals != ds.n_individuals() {
        return Err(Error::Shape(format!(
            "draws cover {} individuals, dataset has {}",
            draws.n_individuals,
            ds.n_individuals()
        )));
    }
    let (beta0, mu1, mu2, ls1, ls2) = (params[0], params[1], params[2], params[3], params[4]);
    let sd1 = ls1.exp();
    let sd2 = ls2.exp();
    let j = ds.alternatives();
    let t_count = ds.tasks_per_individual();
    let r_count = draws.n_draws;

    let mut snll = 0.0;
    let mut grad = vec![0.0; MXL_PARAM_COUNT];
    let mut clamps = 0u64;
    // per-draw accumulators, reused across individuals
    let mut lnl = vec![0.0; r_count];
    let mut sa = vec![0.0; r_count];
    let mut sb = vec![0.0; r_count];
    let mut sc = vec![0.0; r_count];
    let mut v = vec![0.0; j];

    for i in 0..ds.n_individuals() {
        for r in 0..r_count {
            let (z1, z2) = draws.pair(i, r);
            let b1 = mu1 + sd1 * z1;
            let b2 = mu2 + sd2 * z2;
            let mut lnl_r = 0.0;
            let mut sa_r = 0.0;
            let mut sb_r = 0.0;
            let mut sc_r = 0.0;
            for t in 0..t_count {
                let x = ds.task_features(i, t);
                let mut vmax = f64::NEG_INFINITY;
                for (jj, vj) in v.iter_mut().enumerate() {
                    let row = &x[jj * 3..jj * 3 + 3];
                    *vj = beta0 * row[0] + b1 * row[1] + b2 * row[2];
                    if *vj > vmax {
                        vmax = *vj;
                    }
                }
                let c = ds.chosen(i, t);
                let shifted_c = v[c] - vmax;
                let mut denom = 0.0;
                for vj in v.iter_mut() {
                    *vj = (*vj - vmax).exp();
                    denom += *vj;
                }
                // log-space chosen probability: immune to exp underflow
                lnl_r += shifted_c - denom.ln();
                // residual feature means: x_chosen - sum_j p_j x_j
                let mut m0 = 0.0;
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for (jj, pj) in v.iter().enumerate() {
                    let p = pj / denom;
                    let row = &x[jj * 3..jj * 3 + 3];
                    m0 += p * row[0];
                    m1 += p * row[1];
                    m2 += p * row[2];
                }
                let row_c = &x[c * 3..c * 3 + 3];
                sa_r += row_c[0] - m0;
                sb_r += row_c[1] - m1;
                sc_r += row_c[2] - m2;
            }
            lnl[r] = lnl_r;
            sa[r] = sa_r;
            sb[r] = sb_r;
            sc[r] = sc_r;
        }

        // log-mean-exp over draws and the matching softmax weights
        let m = lnl.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &l in lnl.iter() {
            denom += (l - m).exp();
        }
        let ln_li = m + denom.ln() - (r_count as f64).ln();
        if ln_li < LN_PROB_FLOOR {
            snll -= LN_PROB_FLOOR;
            clamps += 1;
            continue;
        }
        snll -= ln_li;
        for r in 0..r_count {
            let w = (lnl[r] - m).exp() / denom;
            let (z1, z2) = draws.pair(i, r);
            grad[0] -= w * sa[r];
            grad[1] -= w * sb[r];
            grad[2] -= w * sc[r];
            grad[3] -= w * sd1 * z1 * sb[r];
            grad[4] -= w * sd2 * z2 * sc[r];
        }
    }
    Ok((snll, grad, clamps))
}

/// Mixed-logit choice probabilities for a single task: the average over the
/// individual's draws of the conditional logit probabilities.
pub fn mxl_task_probabilities(
    params: &[f64],
    ds: &ChoiceDataset,
    individual: usize,
    task: usize,
    draws: &MxlDraws,
) -> Result<Vec<f64>> {
    if params.len() != MXL_PARAM_COUNT {
        return Err(Error::Shape(format!(
            "expected {MXL_PARAM_COUNT} mixed-logit parameters, got {}",
            params.len()
        )));
    }
    let (beta0, mu1, mu2, ls1, ls2) = (params[0], params[1], params[2], params[3], params[4]);
    let sd1 = ls1.exp();
    let sd2 = ls2.exp();
    let j = ds.alternatives();
    let x = ds.task_features(individual, task);
    let mut probs = vec![0.0; j];
    let mut v = vec![0.0; j];
    for r in 0..draws.n_draws {
        let (z1, z2) = draws.pair(individual, r);
        let b1 = mu1 + sd1 * z1;
        let b2 = mu2 + sd2 * z2;
        for (jj, vj) in v.iter_mut().enumerate() {
            let row = &x[jj * 3..jj * 3 + 3];
            *vj = beta0 * row[0] + b1 * row[1] + b2 * row[2];
        }
        crate::models::logit_link_inplace(&mut v);
        for (pj, vj) in probs.iter_mut().zip(&v) {
            *pj += vj;
        }
    }
    let scale = 1.0 / draws.n_draws as f64;
    for pj in probs.iter_mut() {
        *pj *= scale;
    }
    Ok(probs)
}
