//! Beta-posterior machinery for Bayesian agents and the finite-support
//! prior experiment for Bayesian-unbiased agents who never try arm 2.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{stream_rng, Arm, ArmStats, Instance, Lane, LazyTape, TapeSource};
use crate::probtools::binomial_cdf;
use crate::stats::EstimateWithCI;

/// Integer Beta parameters; `alpha + beta` is the belief strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: u64,
    pub beta: u64,
}

impl BetaParams {
    pub const UNIFORM: BetaParams = BetaParams { alpha: 1, beta: 1 };

    pub fn new(alpha: u64, beta: u64) -> Result<Self> {
        if alpha < 1 || beta < 1 {
            return Err(invalid("alpha, beta", format!("need integers >= 1, got ({alpha}, {beta})")));
        }
        Ok(BetaParams { alpha, beta })
    }

    pub fn strength(&self) -> u64 {
        self.alpha + self.beta
    }

    pub fn update(&mut self, reward: u8) {
        if reward == 1 {
            self.alpha += 1;
        } else {
            self.beta += 1;
        }
    }

    /// Posterior after the observations summarised by `stats`.
    pub fn posterior(&self, stats: &ArmStats) -> BetaParams {
        BetaParams {
            alpha: self.alpha + stats.reward_sum,
            beta: self.beta + stats.failures(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha as f64 / self.strength() as f64
    }
}

/// `F(y) = 1 - Pr[Binomial(alpha + beta - 1, y) <= alpha - 1]`.
pub fn beta_cdf(params: BetaParams, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 1.0;
    }
    let n = params.alpha + params.beta - 1;
    let below = binomial_cdf(n, y, params.alpha - 1).expect("alpha - 1 <= alpha + beta - 1");
    (1.0 - below).clamp(0.0, 1.0)
}

/// Quantile by bisection on [`beta_cdf`].
pub fn beta_quantile(params: BetaParams, z: f64) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(invalid("z", format!("{z} is not in (0, 1)")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut mid = 0.5;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let f = beta_cdf(params, mid);
        if (f - z).abs() <= 1e-12 || hi - lo < 1e-16 {
            break;
        }
        if f < z {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Posterior mean `xi = alpha / M` and `rho = (alpha - 1) / (M - 1)`.
pub fn posterior_summary(params: BetaParams) -> Result<(f64, f64)> {
    let m = params.strength();
    if m < 2 {
        return Err(invalid("alpha + beta", "rho needs strength at least 2"));
    }
    Ok((
        params.alpha as f64 / m as f64,
        (params.alpha - 1) as f64 / (m - 1) as f64,
    ))
}

/// Largest `alpha + beta - 1` sampled through the order-statistic route.
pub const ORDER_STATISTIC_LIMIT: u64 = 512;

/// Exact Beta draw for integer parameters: the `alpha`-th smallest of
/// `alpha + beta - 1` uniforms. Larger posteriors fall back to the
/// gamma-ratio sampler of `rand_distr`.
pub fn sample_beta<R: Rng + ?Sized>(params: BetaParams, rng: &mut R) -> f64 {
    let n = params.alpha + params.beta - 1;
    if n == 1 {
        return rng.random::<f64>();
    }
    if n <= ORDER_STATISTIC_LIMIT {
        let mut buf = [0.0f64; ORDER_STATISTIC_LIMIT as usize];
        let draws = &mut buf[..n as usize];
        for d in draws.iter_mut() {
            *d = rng.random::<f64>();
        }
        let k = (params.alpha - 1) as usize;
        let (_, kth, _) = draws.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
        *kth
    } else {
        rand_distr::Beta::new(params.alpha as f64, params.beta as f64)
            .expect("positive parameters")
            .sample(rng)
    }
}

/// Which Bayesian index a containment run measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BayesIndexKind {
    /// Posterior mean.
    PosteriorMean,
    /// Both endpoints `Q(zeta)` and `Q(1 - zeta)` of the Bayesian interval,
    /// which covers every index a zeta-Bayesian-confident agent may use.
    QuantileBand { zeta: f64 },
}

/// Smallest frequentist eta that contains the measured index along every
/// simulated posterior path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContainmentReport {
    pub n0: u64,
    pub strength: u64,
    pub max_eta: f64,
    /// `max_eta * sqrt(n0) / M`: the constant of an `eta = C M / sqrt(n0)` fit.
    pub fitted_c: f64,
    pub paths: u64,
    pub steps: u64,
}

/// Eta needed so that `index` lies in the truncated interval around `mean`
/// after `n` pulls. Truncation at 0 and 1 never helps an index inside [0, 1].
fn required_eta(index: f64, mean: f64, n: u64) -> f64 {
    n as f64 * (index - mean).powi(2)
}

pub fn bayes_confidence_containment(
    priors: [BetaParams; 2],
    instance: &Instance,
    kind: BayesIndexKind,
    paths: u64,
    steps: u64,
    seed: u64,
) -> Result<ContainmentReport> {
    instance.validate()?;
    if let BayesIndexKind::QuantileBand { zeta } = kind {
        if !(zeta > 0.0 && zeta <= 0.5) {
            return Err(invalid("zeta", format!("{zeta} is not in (0, 1/2]")));
        }
    }
    let mut max_eta = 0.0f64;
    for path in 0..paths {
        let mut tape = LazyTape::for_trial(instance, seed, path);
        for arm in Arm::BOTH {
            let prior = priors[arm.index()];
            let mut stats = ArmStats::default();
            for _ in 0..instance.n0 {
                stats.record(tape.next_reward(arm)?);
            }
            for step in 0..=steps {
                if step > 0 {
                    match tape.next_reward(arm) {
                        Ok(r) => stats.record(r),
                        Err(_) => break,
                    }
                }
                let post = prior.posterior(&stats);
                let mean = stats.mean();
                let need = match kind {
                    BayesIndexKind::PosteriorMean => required_eta(post.mean(), mean, stats.pulls),
                    BayesIndexKind::QuantileBand { zeta } => {
                        let lo = beta_quantile(post, zeta)?;
                        let hi = beta_quantile(post, 1.0 - zeta)?;
                        required_eta(lo, mean, stats.pulls).max(required_eta(hi, mean, stats.pulls))
                    }
                };
                max_eta = max_eta.max(need);
            }
        }
    }
    let strength = priors.iter().map(BetaParams::strength).max().unwrap_or(2);
    Ok(ContainmentReport {
        n0: instance.n0,
        strength,
        max_eta,
        fitted_c: max_eta * (instance.n0 as f64).sqrt() / strength as f64,
        paths,
        steps,
    })
}

/// Worst observed ratios of the two exact posterior-deviation inequalities
/// along one arm's tape: `|mean - xi| <= (alpha0 + M0) / (n + M0)` and
/// `|xi - rho| <= 1 / (M_n - 1)`. Both ratios stay at most 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationCheck {
    pub worst_mean_ratio: f64,
    pub worst_rho_ratio: f64,
    /// `|xi - rho| == beta_n / (M_n (M_n - 1))` held at every step.
    pub rho_identity_holds: bool,
    pub steps: u64,
}

pub fn posterior_deviation_check<S: TapeSource>(prior: BetaParams, arm: Arm, tape: &mut S, steps: u64) -> Result<DeviationCheck> {
    let m0 = prior.strength() as f64;
    let mut stats = ArmStats::default();
    let mut worst_mean_ratio = 0.0f64;
    let mut worst_rho_ratio = 0.0f64;
    let mut identity = true;
    for _ in 0..steps {
        stats.record(tape.next_reward(arm)?);
        let post = prior.posterior(&stats);
        let (xi, rho) = posterior_summary(post)?;
        let n = stats.pulls as f64;
        let mean_bound = (prior.alpha as f64 + m0) / (n + m0);
        worst_mean_ratio = worst_mean_ratio.max((stats.mean() - xi).abs() / mean_bound);
        let mn = post.strength() as f64;
        let gap = (xi - rho).abs();
        worst_rho_ratio = worst_rho_ratio.max(gap * (mn - 1.0));
        let exact = post.beta as f64 / (mn * (mn - 1.0));
        if (gap - exact).abs() > 1e-12 * exact.max(1e-300) + 1e-16 {
            identity = false;
        }
    }
    Ok(DeviationCheck {
        worst_mean_ratio,
        worst_rho_ratio,
        rho_identity_holds: identity,
        steps,
    })
}

/// Prior over `(mu1, mu2)` with finitely many, possibly correlated, atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSupportPrior {
    support: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

impl FiniteSupportPrior {
    pub fn new(support: Vec<(f64, f64)>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(invalid("prior", "support must be nonempty and match the weights"));
        }
        if support
            .iter()
            .any(|&(a, b)| !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b))
        {
            return Err(invalid("prior", "support points must lie in [0, 1]^2"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("prior", "weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("prior", format!("weights sum to {total}, not 1")));
        }
        Ok(FiniteSupportPrior { support, weights })
    }

    /// From `(mu1, mu2, weight)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            triples.iter().map(|&(a, b, _)| (a, b)).collect(),
            triples.iter().map(|&(_, _, w)| w).collect(),
        )
    }

    /// Product prior obtained by discretizing two densities on [0, 1] at `k`
    /// midpoints each. An approximation of a continuous independent prior.
    pub fn independent_grid(density1: impl Fn(f64) -> f64, density2: impl Fn(f64) -> f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "grid needs at least one point"));
        }
        let mids: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
        let norm = |f: &dyn Fn(f64) -> f64| -> Result<Vec<f64>> {
            let w: Vec<f64> = mids.iter().map(|&x| f(x).max(0.0)).collect();
            let s: f64 = w.iter().sum();
            if !(s > 0.0) {
                return Err(invalid("density", "density vanishes on the grid"));
            }
            Ok(w.into_iter().map(|v| v / s).collect())
        };
        let (w1, w2) = (norm(&density1)?, norm(&density2)?);
        let mut support = Vec::with_capacity(k * k);
        let mut weights = Vec::with_capacity(k * k);
        for (i, &a) in mids.iter().enumerate() {
            for (j, &b) in mids.iter().enumerate() {
                support.push((a, b));
                weights.push(w1[i] * w2[j]);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(support, weights)
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[mu1 - mu2]` under the prior.
    pub fn prior_gap(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(&(a, b), &w)| w * (a - b))
            .sum()
    }

    fn draw_index<R: Rng>(&self, rng: &mut R) -> usize {
        let x = rng.random::<f64>();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if x < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

/// Empirical mean of the Doob martingale `Z_t` at a fixed round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoobMean {
    pub round: u64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorExperiment {
    /// Frequency with which arm 2 is never chosen.
    pub never_arm2: EstimateWithCI,
    pub prior_gap: f64,
    pub doob_means: Vec<DoobMean>,
    /// Largest `|sum of posterior weights - 1|` seen after any update.
    pub max_weight_drift: f64,
}

/// Bayesian-unbiased agents with beliefs equal to the true prior. Each trial
/// draws `(mu1, mu2)` from the prior; agent `t` picks arm 2 iff
/// `Z_t = E[mu1 - mu2 | history] <= 0` (ties go to arm 2).
pub fn run_bayes_greedy_with_prior(
    prior: &FiniteSupportPrior,
    horizon: u64,
    trials: u64,
    master_seed: u64,
    record_rounds: &[u64],
    level: f64,
) -> Result<PriorExperiment> {
    let gap = prior.prior_gap();
    if !(gap > 0.0) {
        return Err(Error::NonPositivePriorGap(gap));
    }
    let k = prior.support.len();
    let mut never = 0u64;
    let mut z_sums = vec![(0.0f64, 0.0f64); record_rounds.len()];
    let mut max_drift = 0.0f64;
    let mut weights = vec![0.0f64; k];
    for trial in 0..trials {
        let mut agent_rng = stream_rng(master_seed, trial, Lane::Agents);
        let truth = prior.support[prior.draw_index(&mut agent_rng)];
        let mut reward_rngs = Arm::BOTH.map(|arm| stream_rng(master_seed, trial, Lane::Tape(arm)));
        weights.copy_from_slice(&prior.weights);
        let mut chose_two = false;
        for t in 1..=horizon {
            let z: f64 = prior
                .support
                .iter()
                .zip(&weights)
                .map(|(&(a, b), &w)| w * (a - b))
                .sum();
            for (slot, &r) in z_sums.iter_mut().zip(record_rounds) {
                if r == t {
                    slot.0 += z;
                    slot.1 += z * z;
                }
            }
            let arm = if z <= 0.0 { Arm::Two } else { Arm::One };
            chose_two |= arm == Arm::Two;
            let mu_true = match arm {
                Arm::One => truth.0,
                Arm::Two => truth.1,
            };
            let reward = reward_rngs[arm.index()].random::<f64>() < mu_true;
            let mut total = 0.0;
            for (w, &(a, b)) in weights.iter_mut().zip(&prior.support) {
                let mu = if arm == Arm::One { a } else { b };
                *w *= if reward { mu } else { 1.0 - mu };
                total += *w;
            }
            weights.iter_mut().for_each(|w| *w /= total);
            let drift = (weights.iter().sum::<f64>() - 1.0).abs();
            max_drift = max_drift.max(drift);
        }
        never += (!chose_two) as u64;
    }
    let n = trials as f64;
    let doob_means = record_rounds
        .iter()
        .zip(&z_sums)
        .map(|(&round, &(s, s2))| {
            let mean = s / n;
            let var = if trials > 1 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
            DoobMean {
                round,
                mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect();
    Ok(PriorExperiment {
        never_arm2: EstimateWithCI::proportion(never, trials, level),
        prior_gap: gap,
        doob_means,
        max_weight_drift: max_drift,
    })
}
