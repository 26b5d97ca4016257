//! Synthetic panel choice data from four known mixed-logit data-generating
//! processes, plus the known-truth simulated log-likelihood oracle that every
//! fitted model is scored against.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::models::logit_link_inplace;
use crate::rng::{stream_rng, Stream};

/// Natural log of the probability floor applied before any `log P` whose
/// simulated probability could underflow: ln(1e-30).
pub const LN_PROB_FLOOR: f64 = -69.07755278982137;

/// The four heterogeneity scenarios. All share a fixed coefficient β₀ on x₀
/// and random coefficients β₁, β₂ on x₁, x₂; they differ in the coefficient
/// covariance and in extra utility terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// ν = β₀x₀ + β₁x₁ + β₂x₂, β₁ ⟂ β₂
    IndependentNormals,
    /// same utility, correlated (β₁, β₂)
    CorrelatedNormals,
    /// adds an interaction term β₃·x₀x₁
    Interaction,
    /// adds a quadratic term β₃·x₁²
    Nonlinear,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::IndependentNormals,
        Scenario::CorrelatedNormals,
        Scenario::Interaction,
        Scenario::Nonlinear,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::IndependentNormals => "independent_normals",
            Scenario::CorrelatedNormals => "correlated_normals",
            Scenario::Interaction => "interaction",
            Scenario::Nonlinear => "nonlinear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "independent_normals" => Ok(Scenario::IndependentNormals),
            "correlated_normals" => Ok(Scenario::CorrelatedNormals),
            "interaction" => Ok(Scenario::Interaction),
            "nonlinear" => Ok(Scenario::Nonlinear),
            other => Err(Error::Config(format!(
                "unknown dgp scenario '{other}' (expected independent_normals, \
                 correlated_normals, interaction, or nonlinear)"
            ))),
        }
    }
}

/// A scenario with its true coefficients.
///
/// The covariance of (β₁, β₂) is [[σ₁², σ₁₂²], [σ₁₂², σ₂²]] — the cross term
/// is stored as σ₁₂ and squared, and is only active for
/// [`Scenario::CorrelatedNormals`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub scenario: Scenario,
    pub beta0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma12: f64,
    pub beta3: f64,
}

impl DgpSpec {
    /// The published default coefficients:
    /// β₀=−1, μ₁=1, μ₂=2, σ₁=1, σ₂=1.5, σ₁₂=0.7, β₃=2.
    pub fn with_defaults(scenario: Scenario) -> Self {
        DgpSpec {
            scenario,
            beta0: -1.0,
            mu1: 1.0,
            mu2: 2.0,
            sigma1: 1.0,
            sigma2: 1.5,
            sigma12: 0.7,
            beta3: 2.0,
        }
    }

    pub fn label(&self) -> &'static str {
        self.scenario.label()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::Config(format!(
                "sigma1 and sigma2 must be positive, got {} and {}",
                self.sigma1, self.sigma2
            )));
        }
        self.cholesky()?;
        Ok(())
    }

    /// Lower Cholesky factor of the 2×2 coefficient covariance; fails when
    /// the matrix is not positive semi-definite.
    fn cholesky(&self) -> Result<(f64, f64, f64)> {
        let cross = if self.scenario == Scenario::CorrelatedNormals {
            self.sigma12 * self.sigma12
        } else {
            0.0
        };
        let l11 = self.sigma1;
        let l21 = cross / l11;
        let rem = self.sigma2 * self.sigma2 - l21 * l21;
        if rem < 0.0 {
            return Err(Error::NonPsdCovariance(format!(
                "[[{:.6}, {cross:.6}], [{cross:.6}, {:.6}]]",
                self.sigma1 * self.sigma1,
                self.sigma2 * self.sigma2,
            )));
        }
        Ok((l11, l21, rem.sqrt()))
    }
}

/// Simulation shape: how many individuals, tasks, and alternatives to
/// generate, and how many oracle draws score the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_individuals: usize,
    pub tasks_per_individual: usize,
    pub alternatives: usize,
    pub oracle_draws: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    /// Full-scale protocol: 10,000 individuals × 10 tasks × 3 alternatives,
    /// 1,000 oracle draws.
    fn default() -> Self {
        SimConfig {
            n_individuals: 10_000,
            tasks_per_individual: 10,
            alternatives: 3,
            oracle_draws: 1_000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_individuals == 0
            || self.tasks_per_individual == 0
            || self.alternatives == 0
            || self.oracle_draws == 0
        {
            return Err(Error::Config(
                "simulation counts must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-individual realized taste coefficients (β₁ᵢ, β₂ᵢ).
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDraws {
    betas: Vec<[f64; 2]>,
}

impl PreferenceDraws {
    pub fn betas(&self) -> &[[f64; 2]] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// Samples n coefficient pairs from the scenario's bivariate normal.
pub fn draw_preferences(spec: &DgpSpec, n: usize, seed: u64) -> Result<PreferenceDraws> {
    spec.validate()?;
    let (l11, l21, l22) = spec.cholesky()?;
    let mut rng = stream_rng(seed, Stream::Betas);
    let mut betas = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        betas.push([spec.mu1 + l11 * z1, spec.mu2 + l21 * z1 + l22 * z2]);
    }
    Ok(PreferenceDraws { betas })
}

/// The scenario's systematic utility ν for one alternative, given that
/// individual's realized (β₁, β₂) and the alternative's three features.
pub fn systematic_utility(spec: &DgpSpec, beta_i: (f64, f64), features: &[f64]) -> Result<f64> {
    if features.len() != 3 {
        return Err(Error::Shape(format!(
            "systematic utility expects 3 features, got {}",
            features.len()
        )));
    }
    Ok(utility_raw(
        spec,
        beta_i.0,
        beta_i.1,
        features[0],
        features[1],
        features[2],
    ))
}

#[inline]
fn utility_raw(spec: &DgpSpec, b1: f64, b2: f64, x0: f64, x1: f64, x2: f64) -> f64 {
    let base = spec.beta0 * x0 + b1 * x1 + b2 * x2;
    match spec.scenario {
        Scenario::Interaction => base + spec.beta3 * x0 * x1,
        Scenario::Nonlinear => base + spec.beta3 * x1 * x1,
        _ => base,
    }
}

/// Generates a full panel: features i.i.d. Uniform[-1,1], one coefficient
/// draw per individual reused across their T tasks, choices sampled from the
/// individual-level logit probabilities. Deterministic per seed, with
/// features / coefficients / choices on independent RNG streams.
pub fn simulate_dataset(spec: &DgpSpec, cfg: &SimConfig) -> Result<(ChoiceDataset, PreferenceDraws)> {
    spec.validate()?;
    cfg.validate()?;
    let (n, t, j) = (cfg.n_individuals, cfg.tasks_per_individual, cfg.alternatives);
    const K: usize = 3;

    let mut feat_rng = stream_rng(cfg.seed, Stream::Features);
    let unit = rand::distr::Uniform::new_inclusive(-1.0f64, 1.0).expect("static range");
    let mut features = Vec::with_capacity(n * t * j * K);
    for _ in 0..n * t * j * K {
        features.push(feat_rng.sample(unit));
    }

    let prefs = draw_preferences(spec, n, cfg.seed)?;

    let mut choice_rng = stream_rng(cfg.seed, Stream::Choices);
    let mut chosen = Vec::with_capacity(n * t);
    let mut probs = vec![0.0f64; j];
    let stride = j * K;
    for (i, beta) in prefs.betas().iter().enumerate() {
        for task in 0..t {
            let base = (i * t + task) * stride;
            for (alt, p) in probs.iter_mut().enumerate() {
                let x = &features[base + alt * K..base + alt * K + K];
                *p = utility_raw(spec, beta[0], beta[1], x[0], x[1], x[2]);
            }
            logit_link_inplace(&mut probs);
            debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let u: f64 = choice_rng.random();
            let mut cum = 0.0;
            let mut pick = j - 1;
            for (alt, p) in probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    pick = alt;
                    break;
                }
            }
            chosen.push(pick);
        }
    }

    let ds = ChoiceDataset::new(
        n,
        t,
        j,
        K,
        features,
        chosen,
        ChoiceDataset::default_feature_names(K),
    )?;
    Ok((ds, prefs))
}

/// Truth-oracle log-likelihood with its probability-floor diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueLoglik {
    /// Total simulated log-likelihood over all choice tasks.
    pub total: f64,
    /// Number of tasks whose simulated mean probability hit the 1e-30 floor.
    pub clamp_count: u64,
}

impl TrueLoglik {
    pub fn per_obs(&self, n_obs: usize) -> f64 {
        self.total / n_obs as f64
    }
}

/// Simulated log-likelihood of the *true* model on `ds`: for every choice
/// task, the mean over `oracle_draws` coefficient draws of the chosen
/// alternative's logit probability, summed as logs over tasks. Coefficient
/// draws are taken per individual and reused across that individual's tasks,
/// so the estimate is the task-level mixture probability ("mean P over
/// draws of the logit"), with the 1e-30 probability floor as a last-resort
/// guard.
pub fn true_loglik(
    spec: &DgpSpec,
    ds: &ChoiceDataset,
    oracle_draws: usize,
    seed: u64,
) -> Result<TrueLoglik> {
    spec.validate()?;
    if ds.n_features() != 3 {
        return Err(Error::Shape(format!(
            "truth oracle expects 3 features, dataset has {}",
            ds.n_features()
        )));
    }
    if oracle_draws == 0 {
        return Err(Error::Config("oracle_draws must be at least 1".into()));
    }
    let (l11, l21, l22) = spec.cholesky()?;
    let mut rng = stream_rng(seed, Stream::Oracle);
    let (n, t, j) = (
        ds.n_individuals(),
        ds.tasks_per_individual(),
        ds.alternatives(),
    );
    let mut mean_p = vec![0.0f64; t];
    let mut vals = vec![0.0f64; j];
    let mut total = 0.0;
    let mut clamp_count = 0u64;
    let floor = LN_PROB_FLOOR.exp();
    for i in 0..n {
        mean_p.iter_mut().for_each(|p| *p = 0.0);
        for _ in 0..oracle_draws {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let b1 = spec.mu1 + l11 * z1;
            let b2 = spec.mu2 + l21 * z1 + l22 * z2;
            for task in 0..t {
                let feats = ds.task_features(i, task);
                let mut max = f64::NEG_INFINITY;
                for (alt, v) in vals.iter_mut().enumerate() {
                    let x = &feats[alt * 3..alt * 3 + 3];
                    *v = utility_raw(spec, b1, b2, x[0], x[1], x[2]);
                    if *v > max {
                        max = *v;
                    }
                }
                let mut sum = 0.0;
                for v in vals.iter() {
                    sum += (v - max).exp();
                }
                mean_p[task] += (vals[ds.chosen(i, task)] - max).exp() / sum;
            }
        }
        for p in mean_p.iter() {
            let mut pbar = p / oracle_draws as f64;
            if pbar < floor {
                pbar = floor;
                clamp_count += 1;
            }
            total += pbar.ln();
        }
    }
    Ok(TrueLoglik { total, clamp_count })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analytic MNL log-likelihood with fixed coefficients (test helper).
    fn mnl_loglik(beta: (f64, f64, f64), ds: &ChoiceDataset) -> f64 {
        let mut total = 0.0;
        let j = ds.alternatives();
        let mut vals = vec![0.0; j];
        for i in 0..ds.n_individuals() {
            for t in 0..ds.tasks_per_individual() {
                for (alt, v) in vals.iter_mut().enumerate() {
                    let x = ds.alt_features(i, t, alt);
                    *v = beta.0 * x[0] + beta.1 * x[1] + beta.2 * x[2];
                }
                let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = vals.iter().map(|v| (v - max).exp()).sum();
                total += vals[ds.chosen(i, t)] - max - sum.ln();
            }
        }
        total
    }

    fn degenerate(scenario: Scenario) -> DgpSpec {
        DgpSpec {
            sigma1: 1e-12,
            sigma2: 1e-12,
            ..DgpSpec::with_defaults(scenario)
        }
    }

    #[test]
    fn degenerate_sigma_collapses_draws_to_means() {
        let spec = degenerate(Scenario::IndependentNormals);
        let draws = draw_preferences(&spec, 1000, 3).unwrap();
        for b in draws.betas() {
            assert!((b[0] - 1.0).abs() < 1e-9);
            assert!((b[1] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn independent_normals_have_near_zero_correlation() {
        let spec = DgpSpec::with_defaults(Scenario::IndependentNormals);
        let draws = draw_preferences(&spec, 200_000, 9).unwrap();
        let n = draws.len() as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for b in draws.betas() {
            m1 += b[0];
            m2 += b[1];
        }
        m1 /= n;
        m2 /= n;
        let (mut v1, mut v2, mut cov) = (0.0, 0.0, 0.0);
        for b in draws.betas() {
            v1 += (b[0] - m1) * (b[0] - m1);
            v2 += (b[1] - m2) * (b[1] - m2);
            cov += (b[0] - m1) * (b[1] - m2);
        }
        let corr = cov / (v1.sqrt() * v2.sqrt());
        assert!(corr.abs() < 0.01, "corr {corr}");
        assert!((m1 - 1.0).abs() < 0.02 && (m2 - 2.0).abs() < 0.02);
        assert!(((v1 / n).sqrt() - 1.0).abs() < 0.02);
        assert!(((v2 / n).sqrt() - 1.5).abs() < 0.02);
    }

    #[test]
    fn correlated_normals_match_target_covariance() {
        let spec = DgpSpec::with_defaults(Scenario::CorrelatedNormals);
        let draws = draw_preferences(&spec, 200_000, 4).unwrap();
        let n = draws.len() as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for b in draws.betas() {
            m1 += b[0];
            m2 += b[1];
        }
        m1 /= n;
        m2 /= n;
        let mut cov = 0.0;
        for b in draws.betas() {
            cov += (b[0] - m1) * (b[1] - m2);
        }
        cov /= n;
        // target off-diagonal is σ₁₂² = 0.49
        assert!((cov - 0.49).abs() < 0.02, "cov {cov}");
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let spec = DgpSpec {
            sigma12: 1.3, // σ₁₂⁴ = 2.856 > σ₁²σ₂² = 2.25
            ..DgpSpec::with_defaults(Scenario::CorrelatedNormals)
        };
        assert!(matches!(
            draw_preferences(&spec, 10, 0),
            Err(Error::NonPsdCovariance(_))
        ));
        // same cross term is inert outside the correlated scenario
        let spec = DgpSpec { sigma12: 1.3, ..DgpSpec::with_defaults(Scenario::IndependentNormals) };
        assert!(draw_preferences(&spec, 10, 0).is_ok());
    }

    #[test]
    fn systematic_utility_examples() {
        let beta = (1.0, 2.0);
        for scenario in Scenario::ALL {
            let spec = DgpSpec::with_defaults(scenario);
            assert_eq!(systematic_utility(&spec, beta, &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        }
        let ind = DgpSpec::with_defaults(Scenario::IndependentNormals);
        assert_eq!(systematic_utility(&ind, beta, &[1.0, 1.0, 1.0]).unwrap(), 2.0);
        let inter = DgpSpec::with_defaults(Scenario::Interaction);
        assert_eq!(systematic_utility(&inter, beta, &[1.0, 1.0, 1.0]).unwrap(), 4.0);
        let nonlin = DgpSpec::with_defaults(Scenario::Nonlinear);
        assert_eq!(systematic_utility(&nonlin, beta, &[1.0, 1.0, 1.0]).unwrap(), 4.0);
        assert_eq!(systematic_utility(&nonlin, beta, &[1.0, -1.0, 1.0]).unwrap(), 2.0);
        assert!(systematic_utility(&ind, beta, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn symmetric_spec_gives_uniform_choice_shares() {
        let spec = DgpSpec {
            beta0: 0.0,
            mu1: 0.0,
            mu2: 0.0,
            sigma1: 1e-12,
            sigma2: 1e-12,
            ..DgpSpec::with_defaults(Scenario::IndependentNormals)
        };
        let cfg = SimConfig {
            n_individuals: 3000,
            tasks_per_individual: 10,
            oracle_draws: 10,
            seed: 21,
            ..SimConfig::default()
        };
        let (ds, _) = simulate_dataset(&spec, &cfg).unwrap();
        let mut counts = [0usize; 3];
        for &c in ds.chosen_flat() {
            counts[c] += 1;
        }
        let total = ds.n_obs() as f64;
        for c in counts {
            let share = c as f64 / total;
            assert!((share - 1.0 / 3.0).abs() < 0.02, "share {share}");
        }
    }

    #[test]
    fn simulated_dataset_has_expected_shape_and_bounds() {
        let spec = DgpSpec::with_defaults(Scenario::IndependentNormals);
        let cfg = SimConfig {
            n_individuals: 100,
            seed: 5,
            ..SimConfig::default()
        };
        let (ds, prefs) = simulate_dataset(&spec, &cfg).unwrap();
        assert_eq!(ds.n_individuals(), 100);
        assert_eq!(ds.tasks_per_individual(), 10);
        assert_eq!(ds.alternatives(), 3);
        assert_eq!(ds.n_features(), 3);
        assert_eq!(prefs.len(), 100);
        assert!(ds.features_flat().iter().all(|x| (-1.0..=1.0).contains(x)));
        assert!(ds.validate().is_ok());
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let spec = DgpSpec::with_defaults(Scenario::Nonlinear);
        let cfg = SimConfig { n_individuals: 40, seed: 123, ..SimConfig::default() };
        let a = simulate_dataset(&spec, &cfg).unwrap();
        let b = simulate_dataset(&spec, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = simulate_dataset(&spec, &SimConfig { seed: 124, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn oracle_matches_analytic_mnl_on_degenerate_dgp() {
        let spec = degenerate(Scenario::IndependentNormals);
        let cfg = SimConfig {
            n_individuals: 50,
            tasks_per_individual: 5,
            seed: 7,
            ..SimConfig::default()
        };
        let (ds, _) = simulate_dataset(&spec, &cfg).unwrap();
        let ll = true_loglik(&spec, &ds, 500, 99).unwrap();
        let analytic = mnl_loglik((spec.beta0, spec.mu1, spec.mu2), &ds);
        assert!(
            (ll.total - analytic).abs() < 1e-6,
            "oracle {} vs analytic {analytic}",
            ll.total
        );
        assert_eq!(ll.clamp_count, 0);
    }

    #[test]
    fn oracle_single_task_uniform_probabilities() {
        // all-zero coefficients force ν = 0 for every alternative
        let spec = DgpSpec {
            beta0: 0.0,
            mu1: 0.0,
            mu2: 0.0,
            sigma1: 1e-12,
            sigma2: 1e-12,
            ..DgpSpec::with_defaults(Scenario::IndependentNormals)
        };
        let ds = ChoiceDataset::new(
            1,
            1,
            3,
            3,
            vec![0.5, -0.25, 0.75, 0.1, 0.2, 0.3, -0.9, 0.0, 0.4],
            vec![1],
            ChoiceDataset::default_feature_names(3),
        )
        .unwrap();
        let ll = true_loglik(&spec, &ds, 200, 1).unwrap();
        assert!((ll.total - (1.0f64 / 3.0).ln()).abs() < 1e-9, "{}", ll.total);
    }

    #[test]
    fn oracle_stable_under_draw_doubling() {
        let spec = DgpSpec::with_defaults(Scenario::IndependentNormals);
        let cfg = SimConfig { n_individuals: 500, seed: 31, ..SimConfig::default() };
        let (ds, _) = simulate_dataset(&spec, &cfg).unwrap();
        let a = true_loglik(&spec, &ds, 1_000, 8).unwrap();
        let b = true_loglik(&spec, &ds, 10_000, 8).unwrap();
        let diff = (a.per_obs(ds.n_obs()) - b.per_obs(ds.n_obs())).abs();
        assert!(diff < 0.01, "per-obs diff {diff}");
    }

    #[test]
    fn oracle_variance_shrinks_with_more_draws() {
        let spec = DgpSpec::with_defaults(Scenario::IndependentNormals);
        let cfg = SimConfig {
            n_individuals: 200,
            tasks_per_individual: 5,
            seed: 77,
            ..SimConfig::default()
        };
        let (ds, _) = simulate_dataset(&spec, &cfg).unwrap();
        let spread = |r: usize| {
            let vals: Vec<f64> =
                (0..10).map(|s| true_loglik(&spec, &ds, r, s).unwrap().total).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
        };
        let v100 = spread(100);
        let v1000 = spread(1000);
        assert!(v1000 < v100, "variance did not shrink: {v100} -> {v1000}");
    }

    #[test]
    fn true_model_beats_mean_coefficient_mnl_on_average() {
        // the mixed model's own data: averaging over datasets, the truth
        // oracle should score above the MNL that uses the true means
        let spec = DgpSpec::with_defaults(Scenario::IndependentNormals);
        let mut gap = 0.0;
        for seed in 0..5 {
            let cfg = SimConfig {
                n_individuals: 400,
                tasks_per_individual: 10,
                seed,
                ..SimConfig::default()
            };
            let (ds, _) = simulate_dataset(&spec, &cfg).unwrap();
            let truth = true_loglik(&spec, &ds, 1_000, seed + 100).unwrap();
            let mnl = mnl_loglik((spec.beta0, spec.mu1, spec.mu2), &ds);
            gap += (truth.total - mnl) / ds.n_obs() as f64;
        }
        gap /= 5.0;
        assert!(gap > 0.0, "seed-averaged truth-vs-MNL gap {gap}");
    }
}
