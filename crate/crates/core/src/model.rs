//! Problem instances, reward tapes, running per-arm statistics and the
//! truncated confidence-bound arithmetic shared by every other module.
//!
//! Randomness is derived from a master seed with a counter scheme: the
//! master seed keys a ChaCha8 generator and the pair (trial, lane) selects
//! one of its 2^64 independent streams. A trial therefore owns three
//! streams (tape of arm 1, tape of arm 2, agent randomness) and its output
//! does not depend on which worker runs it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two arms. Arm one is the good arm whenever `mu1 > mu2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::One, Arm::Two];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Arm::One => 0,
            Arm::Two => 1,
        }
    }

    /// 1-based label used in reports.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

/// A two-armed Bernoulli instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub mu1: f64,
    pub mu2: f64,
    /// Initial samples per arm, revealed before the first agent arrives.
    pub n0: u64,
    /// Number of agents T.
    pub horizon: u64,
    /// Margin constant c of the mean-reward assumption; 0 disables the check.
    #[serde(default)]
    pub margin_c: f64,
}

/// Which of the lower-bound assumptions hold for an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AssumptionReport {
    /// `c < mu2 < mu1 < 1 - c`; `None` when no margin constant is set.
    pub means_within_margin: Option<bool>,
    /// `n0 >= 64 eta / c^2 + 1/c`; `None` when no margin constant is set.
    pub enough_initial_samples: Option<bool>,
}

impl Instance {
    pub fn new(mu1: f64, mu2: f64, n0: u64, horizon: u64) -> Result<Self> {
        let inst = Instance {
            mu1,
            mu2,
            n0,
            horizon,
            margin_c: 0.0,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_margin(mut self, c: f64) -> Result<Self> {
        self.margin_c = c;
        self.validate()?;
        Ok(self)
    }

    /// Symmetric instance around 1/2 with the given gap.
    pub fn centered(delta: f64, n0: u64, horizon: u64) -> Result<Self> {
        Instance::new(0.5 + delta / 2.0, 0.5 - delta / 2.0, n0, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, mu) in [("mu1", self.mu1), ("mu2", self.mu2)] {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::InvalidInstance(format!("{name} = {mu} is not in [0, 1]")));
            }
        }
        if self.n0 < 1 {
            return Err(Error::InvalidInstance("n0 must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidInstance("horizon must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.margin_c) {
            return Err(Error::InvalidInstance(format!(
                "margin_c = {} is not in [0, 1/2)",
                self.margin_c
            )));
        }
        Ok(())
    }

    /// Validation for failure-probability questions, which need a strictly
    /// better arm one.
    pub fn validate_good_arm_first(&self) -> Result<()> {
        self.validate()?;
        if self.mu1 <= self.mu2 {
            return Err(Error::InvalidInstance(format!(
                "failure semantics need mu1 > mu2, got {} <= {}",
                self.mu1, self.mu2
            )));
        }
        Ok(())
    }

    /// Absolute gap |mu1 - mu2|.
    pub fn gap(&self) -> f64 {
        (self.mu1 - self.mu2).abs()
    }

    pub fn mean(&self, arm: Arm) -> f64 {
        match arm {
            Arm::One => self.mu1,
            Arm::Two => self.mu2,
        }
    }

    /// The arm with the larger mean (arm one on ties).
    pub fn good_arm(&self) -> Arm {
        if self.mu1 >= self.mu2 {
            Arm::One
        } else {
            Arm::Two
        }
    }

    /// Entries per tape row: every arm can be pulled at most T times past
    /// its initial samples.
    pub fn tape_len(&self) -> u64 {
        self.n0 + self.horizon
    }

    pub fn assumptions(&self, eta: f64) -> AssumptionReport {
        let c = self.margin_c;
        if c <= 0.0 {
            return AssumptionReport {
                means_within_margin: None,
                enough_initial_samples: None,
            };
        }
        AssumptionReport {
            means_within_margin: Some(c < self.mu2 && self.mu2 < self.mu1 && self.mu1 < 1.0 - c),
            enough_initial_samples: Some(self.n0 as f64 >= 64.0 * eta / (c * c) + 1.0 / c),
        }
    }
}

/// Random-stream lanes owned by one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    Tape(Arm),
    Agents,
}

impl Lane {
    fn offset(self) -> u64 {
        match self {
            Lane::Tape(Arm::One) => 0,
            Lane::Tape(Arm::Two) => 1,
            Lane::Agents => 2,
        }
    }
}

/// Generator for one (trial, lane) pair under a master seed.
pub fn stream_rng(master_seed: u64, trial: u64, lane: Lane) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial.wrapping_mul(3).wrapping_add(lane.offset()));
    rng
}

/// Seed of row `index` of a sweep. Row 0 keeps the master seed and distinct
/// rows get distinct seeds (the map is a bijection of the index mod 2^64).
pub fn row_seed(master_seed: u64, index: u64) -> u64 {
    master_seed.wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[inline]
fn bernoulli_bit<R: Rng>(rng: &mut R, mu: f64) -> u8 {
    // random::<f64>() is in [0, 1), so mu = 0 and mu = 1 are exact.
    (rng.random::<f64>() < mu) as u8
}

/// Pre-drawn Bernoulli rewards, one row per arm. Entry `i` (0-based here)
/// of row `a` is the reward of the `(i+1)`-th pull of arm `a`, counting the
/// initial samples first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardTape {
    rows: [Vec<u8>; 2],
}

impl RewardTape {
    /// Tape of trial 0 under `seed`.
    pub fn generate(instance: &Instance, seed: u64) -> Self {
        Self::for_trial(instance, seed, 0)
    }

    pub fn for_trial(instance: &Instance, master_seed: u64, trial: u64) -> Self {
        let len = instance.tape_len() as usize;
        let rows = Arm::BOTH.map(|arm| {
            let mut rng = stream_rng(master_seed, trial, Lane::Tape(arm));
            let mu = instance.mean(arm);
            (0..len).map(|_| bernoulli_bit(&mut rng, mu)).collect()
        });
        RewardTape { rows }
    }

    /// Tape with explicit rows; entries must be 0 or 1.
    pub fn from_rows(row1: Vec<u8>, row2: Vec<u8>) -> Result<Self> {
        if row1.iter().chain(row2.iter()).any(|&b| b > 1) {
            return Err(Error::InvalidParameter {
                name: "tape",
                reason: "entries must be 0 or 1".into(),
            });
        }
        Ok(RewardTape { rows: [row1, row2] })
    }

    pub fn row(&self, arm: Arm) -> &[u8] {
        &self.rows[arm.index()]
    }

    pub fn len(&self, arm: Arm) -> usize {
        self.rows[arm.index()].len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    pub fn cursor(&self) -> TapeCursor<'_> {
        TapeCursor {
            tape: self,
            pos: [0, 0],
        }
    }
}

/// Anything that hands out the next reward of an arm in tape order.
pub trait TapeSource {
    fn next_reward(&mut self, arm: Arm) -> Result<u8>;
}

/// Sequential reader over a materialized tape.
#[derive(Debug, Clone)]
pub struct TapeCursor<'a> {
    tape: &'a RewardTape,
    pos: [usize; 2],
}

impl TapeSource for TapeCursor<'_> {
    fn next_reward(&mut self, arm: Arm) -> Result<u8> {
        let i = arm.index();
        let bit = *self.tape.rows[i]
            .get(self.pos[i])
            .ok_or(Error::TapeExhausted(arm.label()))?;
        self.pos[i] += 1;
        Ok(bit)
    }
}

/// Tape whose entries are drawn on demand from the same streams
/// [`RewardTape::for_trial`] uses, so both views see identical rewards.
#[derive(Debug, Clone)]
pub struct LazyTape {
    rngs: [ChaCha8Rng; 2],
    means: [f64; 2],
    remaining: [u64; 2],
}

impl LazyTape {
    pub fn for_trial(instance: &Instance, master_seed: u64, trial: u64) -> Self {
        LazyTape {
            rngs: Arm::BOTH.map(|arm| stream_rng(master_seed, trial, Lane::Tape(arm))),
            means: [instance.mu1, instance.mu2],
            remaining: [instance.tape_len(); 2],
        }
    }
}

impl TapeSource for LazyTape {
    #[inline]
    fn next_reward(&mut self, arm: Arm) -> Result<u8> {
        let i = arm.index();
        if self.remaining[i] == 0 {
            return Err(Error::TapeExhausted(arm.label()));
        }
        self.remaining[i] -= 1;
        Ok(bernoulli_bit(&mut self.rngs[i], self.means[i]))
    }
}

/// Pull count and reward sum of one arm. The mean is an exact integer ratio
/// evaluated on demand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ArmStats {
    pub pulls: u64,
    pub reward_sum: u64,
}

impl ArmStats {
    pub fn new(pulls: u64, reward_sum: u64) -> Result<Self> {
        if reward_sum > pulls {
            return Err(Error::InvalidParameter {
                name: "reward_sum",
                reason: format!("{reward_sum} exceeds pulls {pulls}"),
            });
        }
        Ok(ArmStats { pulls, reward_sum })
    }

    #[inline]
    pub fn record(&mut self, reward: u8) {
        self.pulls += 1;
        self.reward_sum += reward as u64;
    }

    /// Sample mean; 0 for an arm never pulled.
    #[inline]
    pub fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.reward_sum as f64 / self.pulls as f64
        }
    }

    pub fn failures(&self) -> u64 {
        self.pulls - self.reward_sum
    }
}

/// Truncated confidence interval around a sample mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub lcb: f64,
    pub ucb: f64,
    pub eta: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lcb <= x && x <= self.ucb
    }

    pub fn width(&self) -> f64 {
        self.ucb - self.lcb
    }
}

#[inline]
pub(crate) fn bounds_unchecked(mean: f64, pulls: u64, eta: f64) -> ConfidenceInterval {
    let half = (eta / pulls as f64).sqrt();
    ConfidenceInterval {
        lcb: (mean - half).max(0.0),
        ucb: (mean + half).min(1.0),
        eta,
    }
}

/// `ucb = min(1, mean + sqrt(eta/n))`, `lcb = max(0, mean - sqrt(eta/n))`.
pub fn confidence_bounds(stats: &ArmStats, eta: f64) -> Result<ConfidenceInterval> {
    if stats.pulls == 0 {
        return Err(Error::ZeroPulls);
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("{eta} is negative or NaN"),
        });
    }
    Ok(bounds_unchecked(stats.mean(), stats.pulls, eta))
}

/// Stats of the first `n` tape entries of an arm.
pub fn tape_prefix_stats(tape: &RewardTape, arm: Arm, n: u64) -> Result<ArmStats> {
    let row = tape.row(arm);
    if n < 1 || n as usize > row.len() {
        return Err(Error::OutOfRange {
            index: n,
            len: row.len() as u64,
        });
    }
    let sum = row[..n as usize].iter().map(|&b| b as u64).sum();
    Ok(ArmStats {
        pulls: n,
        reward_sum: sum,
    })
}

/// Confidence bounds computed from the first `n` tape entries of an arm.
pub fn tape_prefix_bounds(tape: &RewardTape, arm: Arm, n: u64, eta: f64) -> Result<ConfidenceInterval> {
    confidence_bounds(&tape_prefix_stats(tape, arm, n)?, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_tapes() {
        let inst = Instance::new(1.0, 0.0, 3, 7).unwrap();
        let tape = RewardTape::generate(&inst, 99);
        assert!(tape.row(Arm::One).iter().all(|&b| b == 1));
        assert!(tape.row(Arm::Two).iter().all(|&b| b == 0));
        assert_eq!(tape.len(Arm::One), 10);

        let inst = Instance::new(0.0, 0.0, 3, 7).unwrap();
        let tape = RewardTape::generate(&inst, 5);
        assert!(tape.row(Arm::One).iter().chain(tape.row(Arm::Two)).all(|&b| b == 0));
    }

    #[test]
    fn half_tape_mean_is_within_clt_band() {
        // 4 sigma of a fair coin over 10^6 draws is 0.002.
        let inst = Instance::new(0.5, 0.5, 1, 999_999).unwrap();
        let tape = RewardTape::generate(&inst, 2024);
        let row = tape.row(Arm::One);
        assert_eq!(row.len(), 1_000_000);
        let mean = row.iter().map(|&b| b as f64).sum::<f64>() / row.len() as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn generation_is_deterministic_and_lazy_view_agrees() {
        let inst = Instance::new(0.6, 0.4, 5, 200).unwrap();
        let a = RewardTape::for_trial(&inst, 7, 13);
        let b = RewardTape::for_trial(&inst, 7, 13);
        assert_eq!(a, b);
        assert_ne!(a, RewardTape::for_trial(&inst, 7, 14));

        let mut lazy = LazyTape::for_trial(&inst, 7, 13);
        let mut cursor = a.cursor();
        // Interleave arms in an arbitrary order; per-arm sequences must match.
        for i in 0..205 {
            let arm = if i % 3 == 0 { Arm::Two } else { Arm::One };
            assert_eq!(lazy.next_reward(arm).unwrap(), cursor.next_reward(arm).unwrap());
        }
    }

    #[test]
    fn lazy_tape_exhausts_at_tape_len() {
        let inst = Instance::new(0.5, 0.5, 1, 2).unwrap();
        let mut lazy = LazyTape::for_trial(&inst, 0, 0);
        for _ in 0..3 {
            lazy.next_reward(Arm::Two).unwrap();
        }
        assert_eq!(lazy.next_reward(Arm::Two), Err(Error::TapeExhausted(2)));
    }

    #[test]
    fn confidence_bound_examples() {
        let ci = confidence_bounds(&ArmStats::new(4, 2).unwrap(), 1.0).unwrap();
        assert_eq!((ci.lcb, ci.ucb), (0.0, 1.0));

        let ci = confidence_bounds(&ArmStats::new(100, 30).unwrap(), 0.0).unwrap();
        assert_eq!((ci.lcb, ci.ucb), (0.3, 0.3));

        // mean 0.9 from a single pull is impossible with 0/1 rewards, so use
        // the raw arithmetic directly.
        let ci = bounds_unchecked(0.9, 1, 1.0);
        assert_eq!((ci.lcb, ci.ucb), (0.0, 1.0));

        assert_eq!(
            confidence_bounds(&ArmStats::default(), 1.0),
            Err(Error::ZeroPulls)
        );
    }

    #[test]
    fn tape_prefix_examples() {
        let tape = RewardTape::from_rows(vec![1; 8], vec![0; 8]).unwrap();
        let ci = tape_prefix_bounds(&tape, Arm::One, 5, 0.25).unwrap();
        assert!((ci.lcb - (1.0 - 0.05f64.sqrt())).abs() < 1e-15);
        assert!((ci.lcb - 0.7764).abs() < 1e-4);
        assert_eq!(ci.ucb, 1.0);

        for arm in Arm::BOTH {
            let ci = tape_prefix_bounds(&tape, arm, 1, 4.0).unwrap();
            assert_eq!((ci.lcb, ci.ucb), (0.0, 1.0));
        }
        assert!(matches!(
            tape_prefix_bounds(&tape, Arm::One, 0, 1.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            tape_prefix_bounds(&tape, Arm::One, 9, 1.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn tape_prefix_bounds_match_counted_stats() {
        let inst = Instance::new(0.37, 0.81, 10, 990).unwrap();
        let tape = RewardTape::generate(&inst, 11);
        let mut rng = stream_rng(1, 0, Lane::Agents);
        for _ in 0..1000 {
            let arm = if rng.random::<bool>() { Arm::One } else { Arm::Two };
            let n = rng.random_range(1..=1000u64);
            let eta = rng.random_range(0.0..3.0);
            let ones = tape.row(arm)[..n as usize].iter().filter(|&&b| b == 1).count() as u64;
            let direct = confidence_bounds(&ArmStats::new(n, ones).unwrap(), eta).unwrap();
            assert_eq!(tape_prefix_bounds(&tape, arm, n, eta).unwrap(), direct);
        }
    }

    #[test]
    fn assumption_report() {
        let inst = Instance::new(0.55, 0.45, 100, 10).unwrap().with_margin(0.25).unwrap();
        let rep = inst.assumptions(0.0);
        assert_eq!(rep.means_within_margin, Some(true));
        assert_eq!(rep.enough_initial_samples, Some(true));
        assert_eq!(inst.assumptions(1.0).enough_initial_samples, Some(false));
        assert_eq!(Instance::new(0.5, 0.4, 1, 1).unwrap().assumptions(1.0).means_within_margin, None);
        assert!(Instance::new(1.2, 0.4, 1, 1).is_err());
        assert!(Instance::new(0.5, 0.4, 0, 1).is_err());
        assert!(Instance::new(0.4, 0.4, 1, 1).unwrap().validate_good_arm_first().is_err());
    }

    #[test]
    fn row_seeds_are_distinct() {
        assert_eq!(row_seed(42, 0), 42);
        let seeds: Vec<u64> = (0..3).map(|i| row_seed(42, i)).collect();
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    }

    proptest! {
        #[test]
        fn truncation_sandwich(pulls in 1u64..10_000, frac in 0.0f64..=1.0, eta in 0.0f64..20.0) {
            let sum = ((pulls as f64) * frac).floor() as u64;
            let stats = ArmStats::new(pulls, sum).unwrap();
            let ci = confidence_bounds(&stats, eta).unwrap();
            let m = stats.mean();
            prop_assert!(0.0 <= ci.lcb && ci.lcb <= m && m <= ci.ucb && ci.ucb <= 1.0);
            if eta == 0.0 {
                prop_assert!(ci.lcb == m && ci.ucb == m);
            }
        }

        #[test]
        fn bounds_are_monotone(pulls in 1u64..5_000, frac in 0.0f64..=1.0, eta in 0.0f64..10.0, d in 0.0f64..5.0) {
            let sum = ((pulls as f64) * frac).floor() as u64;
            let m = sum as f64 / pulls as f64;
            let base = bounds_unchecked(m, pulls, eta);
            let wider = bounds_unchecked(m, pulls, eta + d);
            prop_assert!(wider.ucb >= base.ucb && wider.lcb <= base.lcb);
            let more = bounds_unchecked(m, pulls * 2, eta);
            prop_assert!(more.ucb <= base.ucb && more.lcb >= base.lcb);
        }
    }
}
