//! Plain neural-network choice models: a trunk maps each alternative's
//! features to a scalar utility, shared across alternatives, and choice
//! probabilities are the softmax within a task. No taste heterogeneity —
//! this is the "throw a network at the utilities" baseline.

use ndarray::Array2;

use crate::dgp::LN_PROB_FLOOR;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache, Mode};

/// NLL of the utility-network model over a batch of tasks, with the
/// gradient with respect to network weights accumulated into `grads` when
/// given. `x` has one row per (task, alternative); `upstream` is scratch.
/// Chosen probabilities are floored at exp(`LN_PROB_FLOOR`) (floored tasks
/// contribute zero gradient). Returns `(total nll, floor hits)`.
#[allow(clippy::too_many_arguments)]
pub fn nn_utility_nll_grad(
    net: &Mlp,
    x: &Array2<f64>,
    chosen: &[usize],
    n_alts: usize,
    mode: Mode,
    dropout_seed: u64,
    cache: &mut MlpCache,
    upstream: &mut Array2<f64>,
    grads: Option<&mut [f64]>,
) -> Result<(f64, u64)> {
    if net.cfg().output_dim != 1 {
        return Err(Error::Shape(format!(
            "utility network must emit a single valence, emits {}",
            net.cfg().output_dim
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
    if want_grad && upstream.dim() != (x.nrows(), 1) {
        *upstream = Array2::zeros((x.nrows(), 1));
    }
    let floor = LN_PROB_FLOOR.exp();
    let mut nll = 0.0;
    let mut clamps = 0u64;
    let mut p = vec![0.0; n_alts];
    for (t, &c) in chosen.iter().enumerate() {
        if c >= n_alts {
            return Err(Error::Data(format!("chosen index {c} out of range in task {t}")));
        }
        for (jj, pj) in p.iter_mut().enumerate() {
            let v = cache.output[(t * n_alts + jj, 0)];
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "predicted valence (alternative row index in `step`)",
                    step: (t * n_alts + jj) as u64,
                });
            }
            *pj = v;
        }
        crate::models::logit_link_inplace(&mut p);
        if p[c] < floor {
            nll -= LN_PROB_FLOOR;
            clamps += 1;
            if want_grad {
                for jj in 0..n_alts {
                    cache_upstream_set(upstream, t * n_alts + jj, 0.0);
                }
            }
        } else {
            nll -= p[c].ln();
            if want_grad {
                for jj in 0..n_alts {
                    let y = if jj == c { 1.0 } else { 0.0 };
                    cache_upstream_set(upstream, t * n_alts + jj, p[jj] - y);
                }
            }
        }
    }
    if let Some(g) = grads {
        net.backward_batch(upstream, cache, g);
    }
    Ok((nll, clamps))
}

#[inline]
fn cache_upstream_set(upstream: &mut Array2<f64>, row: usize, value: f64) {
    upstream[(row, 0)] = value;
}

/// Softmax choice probabilities for one task from the utility network.
pub fn nn_task_probabilities(net: &Mlp, task_features: &[f64], n_alts: usize) -> Result<Vec<f64>> {
    let k = net.cfg().input_dim;
    if task_features.len() != n_alts * k {
        return Err(Error::Shape(format!(
            "task has {} feature values, expected {n_alts} alternatives x {k} features",
            task_features.len()
        )));
    }
    let x = Array2::from_shape_vec((n_alts, k), task_features.to_vec()).expect("checked");
    let mut cache = MlpCache::new();
    net.forward_batch(&x, Mode::Eval, 0, &mut cache);
    let mut p: Vec<f64> = (0..n_alts).map(|jj| cache.output[(jj, 0)]).collect();
    if let Some(bad) = p.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "predicted valence (alternative in `step`)",
            step: bad as u64,
        });
    }
    crate::models::logit_link_inplace(&mut p);
    Ok(p)
}
