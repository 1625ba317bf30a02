//! Behavioral types. An agent maps the per-arm statistics (and, for recency
//! bias, the consumed reward sequences) to one index per arm and picks the
//! arm with the larger index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{beta_quantile, sample_beta, BetaParams};
use crate::error::{invalid, Error, Result};
use crate::model::{bounds_unchecked, ArmStats, ConfidenceInterval};

fn uniform_prior() -> [u64; 2] {
    [1, 1]
}

fn default_window() -> usize {
    5
}

/// One agent type. Serialized as a record tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorSpec {
    /// Index equals the sample mean.
    Unbiased,
    /// Index equals the UCB.
    Optimistic { eta: f64 },
    /// Index equals the LCB.
    Pessimistic { eta: f64 },
    /// Index uniformly random in `[ucb_eta, ucb_eta_max]`.
    IntervalOptimistic { eta: f64, eta_max: f64 },
    /// `index_a = lcb + lambda_a (ucb - lcb)`.
    ConfidentInterpolated { eta: f64, lambda1: f64, lambda2: f64 },
    /// Beta posterior sample clamped into the confidence interval.
    ThompsonProjected {
        eta: f64,
        #[serde(default = "uniform_prior")]
        prior_alpha: [u64; 2],
        #[serde(default = "uniform_prior")]
        prior_beta: [u64; 2],
    },
    /// Posterior mean.
    BayesUnbiased {
        #[serde(default = "uniform_prior")]
        prior_alpha: [u64; 2],
        #[serde(default = "uniform_prior")]
        prior_beta: [u64; 2],
    },
    /// Posterior quantile `Q(zeta + selector (1 - 2 zeta))`.
    BayesConfident {
        zeta: f64,
        #[serde(default = "uniform_prior")]
        prior_alpha: [u64; 2],
        #[serde(default = "uniform_prior")]
        prior_beta: [u64; 2],
        quantile_selector: f64,
    },
    /// Optimistic for an arm whose last `window` rewards beat its overall
    /// mean, pessimistic otherwise.
    RecencyOptimist {
        eta: f64,
        #[serde(default = "default_window")]
        window: usize,
    },
}

fn check_eta(name: &'static str, eta: f64) -> Result<()> {
    if eta >= 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{eta} must be finite and nonnegative")))
    }
}

fn check_unit(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(invalid(name, format!("{x} is not in [0, 1]")))
    }
}

fn priors(alpha: [u64; 2], beta: [u64; 2]) -> Result<[BetaParams; 2]> {
    Ok([BetaParams::new(alpha[0], beta[0])?, BetaParams::new(alpha[1], beta[1])?])
}

impl BehaviorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BehaviorSpec::Unbiased => Ok(()),
            BehaviorSpec::Optimistic { eta } | BehaviorSpec::Pessimistic { eta } => check_eta("eta", eta),
            BehaviorSpec::IntervalOptimistic { eta, eta_max } => {
                check_eta("eta", eta)?;
                check_eta("eta_max", eta_max)?;
                if eta > eta_max {
                    return Err(invalid("eta_max", format!("{eta_max} is below eta = {eta}")));
                }
                Ok(())
            }
            BehaviorSpec::ConfidentInterpolated { eta, lambda1, lambda2 } => {
                check_eta("eta", eta)?;
                check_unit("lambda1", lambda1)?;
                check_unit("lambda2", lambda2)
            }
            BehaviorSpec::ThompsonProjected { eta, prior_alpha, prior_beta } => {
                check_eta("eta", eta)?;
                priors(prior_alpha, prior_beta).map(drop)
            }
            BehaviorSpec::BayesUnbiased { prior_alpha, prior_beta } => priors(prior_alpha, prior_beta).map(drop),
            BehaviorSpec::BayesConfident {
                zeta,
                prior_alpha,
                prior_beta,
                quantile_selector,
            } => {
                if !(zeta > 0.0 && zeta < 0.5) {
                    return Err(invalid("zeta", format!("{zeta} is not in (0, 1/2)")));
                }
                check_unit("quantile_selector", quantile_selector)?;
                priors(prior_alpha, prior_beta).map(drop)
            }
            BehaviorSpec::RecencyOptimist { eta, window } => {
                check_eta("eta", eta)?;
                if window == 0 {
                    return Err(invalid("window", "must be at least 1"));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BehaviorSpec::Unbiased => "unbiased",
            BehaviorSpec::Optimistic { .. } => "optimistic",
            BehaviorSpec::Pessimistic { .. } => "pessimistic",
            BehaviorSpec::IntervalOptimistic { .. } => "interval_optimistic",
            BehaviorSpec::ConfidentInterpolated { .. } => "confident_interpolated",
            BehaviorSpec::ThompsonProjected { .. } => "thompson_projected",
            BehaviorSpec::BayesUnbiased { .. } => "bayes_unbiased",
            BehaviorSpec::BayesConfident { .. } => "bayes_confident",
            BehaviorSpec::RecencyOptimist { .. } => "recency_optimist",
        }
    }

    /// The eta whose interval contains every index by construction. `None`
    /// for the Bayesian variants.
    pub fn confidence_eta(&self) -> Option<f64> {
        match *self {
            BehaviorSpec::Unbiased => Some(0.0),
            BehaviorSpec::Optimistic { eta }
            | BehaviorSpec::Pessimistic { eta }
            | BehaviorSpec::ConfidentInterpolated { eta, .. }
            | BehaviorSpec::ThompsonProjected { eta, .. }
            | BehaviorSpec::RecencyOptimist { eta, .. } => Some(eta),
            BehaviorSpec::IntervalOptimistic { eta_max, .. } => Some(eta_max),
            BehaviorSpec::BayesUnbiased { .. } | BehaviorSpec::BayesConfident { .. } => None,
        }
    }

    /// True when indices are a deterministic function of the history, so
    /// only tie-breaking is random.
    pub fn is_deterministic(&self) -> bool {
        match *self {
            BehaviorSpec::ThompsonProjected { .. } => false,
            BehaviorSpec::IntervalOptimistic { eta, eta_max } => eta == eta_max,
            _ => true,
        }
    }

    pub fn needs_history(&self) -> bool {
        matches!(self, BehaviorSpec::RecencyOptimist { .. })
    }

    /// Copy with every eta replaced (`eta_max` moves along if it would fall
    /// below). Variants without eta are returned unchanged.
    pub fn with_eta(&self, value: f64) -> Self {
        let mut b = self.clone();
        match &mut b {
            BehaviorSpec::Optimistic { eta }
            | BehaviorSpec::Pessimistic { eta }
            | BehaviorSpec::ConfidentInterpolated { eta, .. }
            | BehaviorSpec::ThompsonProjected { eta, .. }
            | BehaviorSpec::RecencyOptimist { eta, .. } => *eta = value,
            BehaviorSpec::IntervalOptimistic { eta, eta_max } => {
                *eta = value;
                *eta_max = eta_max.max(value);
            }
            BehaviorSpec::Unbiased | BehaviorSpec::BayesUnbiased { .. } | BehaviorSpec::BayesConfident { .. } => {}
        }
        b
    }

    /// Copy with `eta_max` replaced on interval-optimistic agents.
    pub fn with_eta_max(&self, value: f64) -> Self {
        let mut b = self.clone();
        if let BehaviorSpec::IntervalOptimistic { eta_max, .. } = &mut b {
            *eta_max = value;
        }
        b
    }
}

/// Consumed reward sequences of both arms, oldest first.
pub type RecentRewards<'a> = [&'a [u8]; 2];

/// True iff the mean of the last `window` entries strictly exceeds the mean
/// of all of them. Integer arithmetic, so ties are exact.
fn recency_is_up(rewards: &[u8], window: usize) -> bool {
    let n = rewards.len();
    if n == 0 {
        return false;
    }
    let w = window.min(n);
    let recent: u64 = rewards[n - w..].iter().map(|&b| b as u64).sum();
    let total: u64 = rewards.iter().map(|&b| b as u64).sum();
    recent * n as u64 > total * w as u64
}

/// Convex combination that is exact at `lambda = 0` and `lambda = 1`.
#[inline]
fn interpolate(ci: &ConfidenceInterval, lambda: f64) -> f64 {
    ((1.0 - lambda) * ci.lcb + lambda * ci.ucb).clamp(ci.lcb, ci.ucb)
}

/// Indices of both arms.
pub fn compute_indices<R: Rng + ?Sized>(
    behavior: &BehaviorSpec,
    stats1: &ArmStats,
    stats2: &ArmStats,
    recent: Option<RecentRewards<'_>>,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if stats1.pulls == 0 || stats2.pulls == 0 {
        return Err(Error::ZeroPulls);
    }
    let stats = [stats1, stats2];
    let ci = |a: usize, eta: f64| bounds_unchecked(stats[a].mean(), stats[a].pulls, eta);
    let pair = match *behavior {
        BehaviorSpec::Unbiased => (stats1.mean(), stats2.mean()),
        BehaviorSpec::Optimistic { eta } => (ci(0, eta).ucb, ci(1, eta).ucb),
        BehaviorSpec::Pessimistic { eta } => (ci(0, eta).lcb, ci(1, eta).lcb),
        BehaviorSpec::IntervalOptimistic { eta, eta_max } => {
            let mut draw = |a: usize| {
                let lo = ci(a, eta).ucb;
                if eta_max > eta {
                    let hi = ci(a, eta_max).ucb;
                    (lo + rng.random::<f64>() * (hi - lo)).clamp(lo, hi)
                } else {
                    lo
                }
            };
            let i1 = draw(0);
            (i1, draw(1))
        }
        BehaviorSpec::ConfidentInterpolated { eta, lambda1, lambda2 } => {
            (interpolate(&ci(0, eta), lambda1), interpolate(&ci(1, eta), lambda2))
        }
        BehaviorSpec::ThompsonProjected {
            eta,
            prior_alpha,
            prior_beta,
        } => {
            let mut draw = |a: usize| {
                let b = ci(a, eta);
                let post = BetaParams {
                    alpha: prior_alpha[a],
                    beta: prior_beta[a],
                }
                .posterior(stats[a]);
                thompson_index(eta, post.alpha, post.beta, b.lcb, b.ucb, rng)
            };
            let i1 = draw(0)?;
            (i1, draw(1)?)
        }
        BehaviorSpec::BayesUnbiased { prior_alpha, prior_beta } => {
            let p = priors(prior_alpha, prior_beta)?;
            (p[0].posterior(stats1).mean(), p[1].posterior(stats2).mean())
        }
        BehaviorSpec::BayesConfident {
            zeta,
            prior_alpha,
            prior_beta,
            quantile_selector,
        } => {
            let p = priors(prior_alpha, prior_beta)?;
            let z = zeta + quantile_selector * (1.0 - 2.0 * zeta);
            (
                beta_quantile(p[0].posterior(stats1), z)?,
                beta_quantile(p[1].posterior(stats2), z)?,
            )
        }
        BehaviorSpec::RecencyOptimist { eta, window } => {
            let seqs = recent.ok_or(Error::MissingRecentRewards)?;
            let pick = |a: usize| {
                let b = ci(a, eta);
                if recency_is_up(seqs[a], window) {
                    b.ucb
                } else {
                    b.lcb
                }
            };
            (pick(0), pick(1))
        }
    };
    Ok(pair)
}

/// Thompson draw from `Beta(alpha, beta)` projected onto `[lcb, ucb]`.
pub fn thompson_index<R: Rng + ?Sized>(eta: f64, alpha: u64, beta: u64, lcb: f64, ucb: f64, rng: &mut R) -> Result<f64> {
    check_eta("eta", eta)?;
    if !(lcb <= ucb) {
        return Err(invalid("lcb, ucb", format!("[{lcb}, {ucb}] is not an interval")));
    }
    let nu = sample_beta(BetaParams::new(alpha, beta)?, rng);
    Ok(nu.clamp(lcb, ucb))
}

/// Argmax of the two indices; exact ties go to a fair coin.
#[inline]
pub fn choose_arm<R: Rng + ?Sized>(index1: f64, index2: f64, rng: &mut R) -> Result<crate::model::Arm> {
    use crate::model::Arm;
    if index1.is_nan() {
        return Err(Error::NanIndex(1));
    }
    if index2.is_nan() {
        return Err(Error::NanIndex(2));
    }
    Ok(if index1 > index2 {
        Arm::One
    } else if index2 > index1 {
        Arm::Two
    } else if rng.random::<bool>() {
        Arm::One
    } else {
        Arm::Two
    })
}

/// Checks the indices against the interval of [`BehaviorSpec::confidence_eta`]
/// and, for interval-optimistic agents, the sandwich `[ucb_eta, ucb_eta_max]`.
pub fn check_containment(behavior: &BehaviorSpec, stats: [&ArmStats; 2], indices: (f64, f64)) -> Result<()> {
    let Some(eta) = behavior.confidence_eta() else {
        return Ok(());
    };
    for (a, &value) in [indices.0, indices.1].iter().enumerate() {
        let mut ci = bounds_unchecked(stats[a].mean(), stats[a].pulls, eta);
        if let BehaviorSpec::IntervalOptimistic { eta, .. } = *behavior {
            ci.lcb = bounds_unchecked(stats[a].mean(), stats[a].pulls, eta).ucb;
        }
        if !ci.contains(value) {
            return Err(Error::ContainmentViolated {
                index: a as u8 + 1,
                value,
                lcb: ci.lcb,
                ucb: ci.ucb,
            });
        }
    }
    Ok(())
}

fn default_probability() -> f64 {
    1.0
}

/// One entry of a population mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    #[serde(flatten)]
    pub behavior: BehaviorSpec,
    #[serde(default = "default_probability")]
    pub probability: f64,
}

/// Mixture of agent types; each agent's type is drawn independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MixtureComponent>", into = "Vec<MixtureComponent>")]
pub struct PopulationSpec {
    components: Vec<MixtureComponent>,
}

impl TryFrom<Vec<MixtureComponent>> for PopulationSpec {
    type Error = Error;
    fn try_from(components: Vec<MixtureComponent>) -> Result<Self> {
        PopulationSpec::mixture(components.into_iter().map(|c| (c.behavior, c.probability)).collect())
    }
}

impl From<PopulationSpec> for Vec<MixtureComponent> {
    fn from(p: PopulationSpec) -> Self {
        p.components
    }
}

impl PopulationSpec {
    /// Every agent has the same type.
    pub fn single(behavior: BehaviorSpec) -> Self {
        PopulationSpec {
            components: vec![MixtureComponent {
                behavior,
                probability: 1.0,
            }],
        }
    }

    /// Probabilities must be nonnegative and sum to 1 within 1e-9.
    pub fn mixture(parts: Vec<(BehaviorSpec, f64)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("population", "needs at least one component"));
        }
        for (b, p) in &parts {
            b.validate()?;
            if !(*p >= 0.0) {
                return Err(invalid("probability", format!("{p} is negative or NaN")));
            }
        }
        let total: f64 = parts.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("probability", format!("mixture weights sum to {total}")));
        }
        Ok(PopulationSpec {
            components: parts
                .into_iter()
                .map(|(behavior, probability)| MixtureComponent { behavior, probability })
                .collect(),
        })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn validate(&self) -> Result<()> {
        self.components.iter().try_for_each(|c| c.behavior.validate())
    }

    pub fn needs_history(&self) -> bool {
        self.components.iter().any(|c| c.behavior.needs_history())
    }

    /// Agent type for one round. A single-type population makes no draw.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> &BehaviorSpec {
        if self.components.len() == 1 {
            return &self.components[0].behavior;
        }
        let x = rng.random::<f64>();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.probability;
            if x < acc {
                return &c.behavior;
            }
        }
        &self.components[self.components.len() - 1].behavior
    }

    /// Applies `f` to every component's behavior.
    pub fn map_behaviors(&self, f: impl Fn(&BehaviorSpec) -> BehaviorSpec) -> Self {
        PopulationSpec {
            components: self
                .components
                .iter()
                .map(|c| MixtureComponent {
                    behavior: f(&c.behavior),
                    probability: c.probability,
                })
                .collect(),
        }
    }

    /// Two-component mixture with the first component at probability `q`.
    pub fn with_first_probability(&self, q: f64) -> Result<Self> {
        if self.components.len() != 2 {
            return Err(invalid("q", "mixture probability needs exactly two components"));
        }
        check_unit("q", q)?;
        Self::mixture(vec![
            (self.components[0].behavior.clone(), q),
            (self.components[1].behavior.clone(), 1.0 - q),
        ])
    }
}
