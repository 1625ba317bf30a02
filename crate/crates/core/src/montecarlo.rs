//! Trial orchestration, estimators, parameter sweeps and the exhaustive
//! enumeration oracle for small instances.
//!
//! Trials are cut into fixed batches and reduced with integer sums, so an
//! estimate depends on the master seed only, never on the worker count.

use serde::{Deserialize, Serialize};

use crate::behaviors::{choose_arm, compute_indices, PopulationSpec};
use crate::engine::{detect_sampling_failure, simulate_trial, RunOptions};
use crate::error::{invalid, Error, Result};
use crate::model::{row_seed, Arm, ArmStats, Instance};
use crate::stats::{EstimateWithCI, DEFAULT_CI_LEVEL};

/// Trials per work item.
const BATCH: u64 = 256;

/// Trial budget, seed, worker count and interval level of one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub trials: u64,
    pub master_seed: u64,
    pub parallelism: usize,
    pub level: f64,
}

impl McSettings {
    pub fn new(trials: u64, master_seed: u64) -> Self {
        McSettings {
            trials,
            master_seed,
            parallelism: 1,
            level: DEFAULT_CI_LEVEL,
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism", "must be at least 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(invalid("level", format!("{} is not in (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// Which quantities a run estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum Estimator {
    /// n-sampling failure only; trials stop once the outcome is known.
    Failure { n: u64 },
    Regret,
    /// Both from the same full-length trials.
    Both { n: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub failure: Option<EstimateWithCI>,
    pub regret: Option<EstimateWithCI>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    trials: u64,
    failures: u64,
    bad_sum: u64,
    bad_sq: u128,
}

impl Tally {
    fn merge(&mut self, o: Tally) {
        self.trials += o.trials;
        self.failures += o.failures;
        self.bad_sum += o.bad_sum;
        self.bad_sq += o.bad_sq;
    }
}

fn run_batches<F>(trials: u64, parallelism: usize, per_trial: F) -> Result<Tally>
where
    F: Fn(u64) -> Result<Tally> + Sync,
{
    let batches = trials.div_ceil(BATCH);
    let batch = |b: u64| -> Result<Tally> {
        let mut t = Tally::default();
        for i in b * BATCH..((b + 1) * BATCH).min(trials) {
            t.merge(per_trial(i)?);
        }
        Ok(t)
    };
    let parts: Vec<Tally> = if parallelism <= 1 {
        (0..batches).map(batch).collect::<Result<_>>()?
    } else {
        parallel_map(batches, parallelism, &batch)?
    };
    let mut total = Tally::default();
    parts.into_iter().for_each(|p| total.merge(p));
    Ok(total)
}

#[cfg(feature = "parallel")]
fn parallel_map(batches: u64, parallelism: usize, batch: &(dyn Fn(u64) -> Result<Tally> + Sync)) -> Result<Vec<Tally>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| invalid("parallelism", e.to_string()))?;
    pool.install(|| (0..batches).into_par_iter().map(batch).collect())
}

#[cfg(not(feature = "parallel"))]
fn parallel_map(batches: u64, _parallelism: usize, batch: &(dyn Fn(u64) -> Result<Tally> + Sync)) -> Result<Vec<Tally>> {
    (0..batches).map(batch).collect()
}

/// Runs `estimator` over `settings.trials` trials.
pub fn estimate(
    instance: &Instance,
    population: &PopulationSpec,
    estimator: Estimator,
    settings: &McSettings,
) -> Result<Estimates> {
    settings.validate()?;
    population.validate()?;
    match estimator {
        Estimator::Failure { .. } | Estimator::Both { .. } => instance.validate_good_arm_first()?,
        Estimator::Regret => instance.validate()?,
    }
    let (options, n) = match estimator {
        Estimator::Failure { n } => (RunOptions::failure_only(n), Some(n)),
        Estimator::Regret => (RunOptions::default(), None),
        Estimator::Both { n } => (RunOptions::default(), Some(n)),
    };
    let tally = run_batches(settings.trials, settings.parallelism, |trial| {
        let tr = simulate_trial(instance, population, settings.master_seed, trial, options)?;
        let failed = match n {
            Some(n) => detect_sampling_failure(&tr, n)?,
            None => false,
        };
        let bad = tr.bad_arm_pulls_beyond_init;
        Ok(Tally {
            trials: 1,
            failures: failed as u64,
            bad_sum: bad,
            bad_sq: (bad as u128) * (bad as u128),
        })
    })?;
    let failure = n.map(|_| EstimateWithCI::proportion(tally.failures, tally.trials, settings.level));
    let regret = match estimator {
        Estimator::Failure { .. } => None,
        _ => Some(regret_estimate(&tally, instance.gap(), settings.level)),
    };
    Ok(Estimates { failure, regret })
}

fn regret_estimate(t: &Tally, gap: f64, level: f64) -> EstimateWithCI {
    let n = t.trials as u128;
    let mean_bad = t.bad_sum as f64 / t.trials as f64;
    // Exact integer numerator of the sample variance of bad-pull counts.
    let s = t.bad_sum as u128;
    let num = n * t.bad_sq - s * s;
    let var_bad = if t.trials > 1 {
        num as f64 / (t.trials as f64 * (t.trials - 1) as f64)
    } else {
        0.0
    };
    EstimateWithCI::mean_with_variance(gap * mean_bad, gap * gap * var_bad, t.trials, level)
}

/// Fraction of trials with an n-sampling failure, with a Wilson interval.
pub fn estimate_failure_probability(
    instance: &Instance,
    population: &PopulationSpec,
    n: u64,
    trials: u64,
    master_seed: u64,
    parallelism: usize,
) -> Result<EstimateWithCI> {
    let settings = McSettings::new(trials, master_seed).with_parallelism(parallelism);
    Ok(estimate(instance, population, Estimator::Failure { n }, &settings)?
        .failure
        .expect("failure requested"))
}

/// Mean pseudo-regret with a CLT interval.
pub fn estimate_regret(
    instance: &Instance,
    population: &PopulationSpec,
    trials: u64,
    master_seed: u64,
    parallelism: usize,
) -> Result<EstimateWithCI> {
    let settings = McSettings::new(trials, master_seed).with_parallelism(parallelism);
    Ok(estimate(instance, population, Estimator::Regret, &settings)?
        .regret
        .expect("regret requested"))
}

/// Largest `2 (n0 + T)` the enumeration oracle accepts.
pub const ENUMERATION_BIT_LIMIT: u64 = 24;

/// Exact law of a small instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactResult {
    /// `good_pulls_pmf[g]` is the probability of exactly `g` good-arm pulls
    /// beyond the initial samples.
    pub good_pulls_pmf: Vec<f64>,
    pub expected_regret: f64,
    /// Total branch weight; 1 up to rounding.
    pub total_mass: f64,
    pub tapes: u64,
}

impl ExactResult {
    pub fn failure_probability(&self, n: u64) -> f64 {
        let end = (n as usize + 1).min(self.good_pulls_pmf.len());
        self.good_pulls_pmf[..end].iter().sum()
    }
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn check_enumerable(instance: &Instance, population: &PopulationSpec) -> Result<()> {
    instance.validate()?;
    population.validate()?;
    for c in population.components() {
        if !c.behavior.is_deterministic() {
            return Err(Error::NotEnumerable(c.behavior.name().into()));
        }
    }
    Ok(())
}

/// Distribution of good-arm pulls on one fixed tape. Ties and mixture draws
/// branch with their exact weights instead of being sampled.
pub fn replay_tape(instance: &Instance, population: &PopulationSpec, rows: [&[u8]; 2]) -> Result<Vec<f64>> {
    check_enumerable(instance, population)?;
    let need = instance.tape_len() as usize;
    if rows.iter().any(|r| r.len() < need) {
        return Err(invalid("tape", format!("rows need {need} entries")));
    }
    let mut pmf = vec![0.0; instance.horizon as usize + 1];
    let mut stats = [ArmStats::default(); 2];
    for a in Arm::BOTH {
        for &b in &rows[a.index()][..instance.n0 as usize] {
            stats[a.index()].record(b);
        }
    }
    let mut replay = Replay {
        instance,
        population,
        rows,
        good: instance.good_arm(),
        pmf: &mut pmf,
        // Enumerable behaviors never draw; the generator only satisfies the signature.
        rng: crate::model::stream_rng(0, 0, crate::model::Lane::Agents),
    };
    replay.step(stats, 0, 0, 1.0)?;
    Ok(pmf)
}

struct Replay<'a> {
    instance: &'a Instance,
    population: &'a PopulationSpec,
    rows: [&'a [u8]; 2],
    good: Arm,
    pmf: &'a mut Vec<f64>,
    rng: rand_chacha::ChaCha8Rng,
}

impl Replay<'_> {
    fn step(&mut self, stats: [ArmStats; 2], round: u64, good_pulls: u64, weight: f64) -> Result<()> {
        if round == self.instance.horizon {
            self.pmf[good_pulls as usize] += weight;
            return Ok(());
        }
        let recent = [
            &self.rows[0][..stats[0].pulls as usize],
            &self.rows[1][..stats[1].pulls as usize],
        ];
        let mut arm_weight = [0.0f64; 2];
        for c in self.population.components() {
            if c.probability == 0.0 {
                continue;
            }
            let (i1, i2) = compute_indices(&c.behavior, &stats[0], &stats[1], Some(recent), &mut self.rng)?;
            if i1.is_nan() || i2.is_nan() {
                choose_arm(i1, i2, &mut self.rng)?;
            }
            if i1 > i2 {
                arm_weight[0] += c.probability;
            } else if i2 > i1 {
                arm_weight[1] += c.probability;
            } else {
                arm_weight[0] += 0.5 * c.probability;
                arm_weight[1] += 0.5 * c.probability;
            }
        }
        for arm in Arm::BOTH {
            let w = arm_weight[arm.index()];
            if w == 0.0 {
                continue;
            }
            let mut next = stats;
            let pos = next[arm.index()].pulls as usize;
            next[arm.index()].record(self.rows[arm.index()][pos]);
            let g = good_pulls + (arm == self.good) as u64;
            self.step(next, round + 1, g, weight * w)?;
        }
        Ok(())
    }
}

/// Iterates every tape realization, weights it by its Bernoulli
/// probability and replays it with [`replay_tape`].
pub fn enumerate_exact(instance: &Instance, population: &PopulationSpec) -> Result<ExactResult> {
    check_enumerable(instance, population)?;
    let len = instance.tape_len();
    let bits = 2 * len;
    if bits > ENUMERATION_BIT_LIMIT {
        return Err(Error::TooLargeForEnumeration {
            bits,
            limit: ENUMERATION_BIT_LIMIT,
        });
    }
    let l = len as usize;
    let powers = |mu: f64| -> Vec<f64> {
        (0..=l)
            .map(|k| mu.powi(k as i32) * (1.0 - mu).powi((l - k) as i32))
            .collect()
    };
    let (p1, p2) = (powers(instance.mu1), powers(instance.mu2));
    let t = instance.horizon as usize;
    let mut pmf_sums = vec![CompensatedSum::default(); t + 1];
    let mut mass = CompensatedSum::default();
    let mut row1 = vec![0u8; l];
    let mut row2 = vec![0u8; l];
    let mask = (1u64 << len) - 1;
    for code in 0..(1u64 << bits) {
        let (c1, c2) = (code & mask, code >> len);
        let w = p1[c1.count_ones() as usize] * p2[c2.count_ones() as usize];
        if w == 0.0 {
            continue;
        }
        for i in 0..l {
            row1[i] = ((c1 >> i) & 1) as u8;
            row2[i] = ((c2 >> i) & 1) as u8;
        }
        let pmf = replay_tape(instance, population, [&row1, &row2])?;
        for (g, &p) in pmf.iter().enumerate() {
            if p > 0.0 {
                pmf_sums[g].add(w * p);
                mass.add(w * p);
            }
        }
    }
    let good_pulls_pmf: Vec<f64> = pmf_sums.iter().map(CompensatedSum::value).collect();
    let expected_bad: f64 = good_pulls_pmf
        .iter()
        .enumerate()
        .map(|(g, &p)| p * (t - g) as f64)
        .sum();
    Ok(ExactResult {
        good_pulls_pmf,
        expected_regret: instance.gap() * expected_bad,
        total_mass: mass.value(),
        tapes: 1 << bits,
    })
}

/// Sweepable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// eta of every behavior that has one.
    Eta,
    /// eta_max of interval-optimistic behaviors.
    EtaMax,
    /// Gap around the base instance's midpoint `(mu1 + mu2) / 2`.
    Delta,
    N0,
    Horizon,
    /// Probability of the first component of a two-component mixture.
    Q,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Eta => "eta",
            SweepAxis::EtaMax => "eta_max",
            SweepAxis::Delta => "delta",
            SweepAxis::N0 => "n0",
            SweepAxis::Horizon => "horizon",
            SweepAxis::Q => "q",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Cross product of axes, enumerated row-major: the last axis varies
/// fastest and point `i` keeps index `i` across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AxisSpec>", into = "Vec<AxisSpec>")]
pub struct SweepGrid {
    axes: Vec<AxisSpec>,
}

impl TryFrom<Vec<AxisSpec>> for SweepGrid {
    type Error = Error;
    fn try_from(axes: Vec<AxisSpec>) -> Result<Self> {
        SweepGrid::new(axes)
    }
}

impl From<SweepGrid> for Vec<AxisSpec> {
    fn from(g: SweepGrid) -> Self {
        g.axes
    }
}

impl SweepGrid {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self> {
        if axes.is_empty() {
            return Err(invalid("grid", "needs at least one axis"));
        }
        for (i, a) in axes.iter().enumerate() {
            if a.values.is_empty() {
                return Err(invalid("grid", format!("axis {} has no values", a.axis.name())));
            }
            if axes[..i].iter().any(|b| b.axis == a.axis) {
                return Err(invalid("grid", format!("axis {} appears twice", a.axis.name())));
            }
            if matches!(a.axis, SweepAxis::N0 | SweepAxis::Horizon)
                && a.values.iter().any(|v| !(v.fract() == 0.0 && *v >= 1.0))
            {
                return Err(invalid("grid", format!("axis {} needs positive integers", a.axis.name())));
            }
        }
        Ok(SweepGrid { axes })
    }

    /// One-axis grid.
    pub fn single(axis: SweepAxis, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![AxisSpec { axis, values }])
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Axis values of point `index`.
    pub fn values(&self, index: usize) -> Result<Vec<(SweepAxis, f64)>> {
        if index >= self.len() {
            return Err(Error::OutOfRange {
                index: index as u64,
                len: self.len() as u64,
            });
        }
        let mut rest = index;
        let mut out = vec![(SweepAxis::Eta, 0.0); self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            out[k] = (a.axis, a.values[rest % a.values.len()]);
            rest /= a.values.len();
        }
        Ok(out)
    }

    /// Instance, population and seed of point `index`.
    pub fn point(
        &self,
        index: usize,
        base_instance: &Instance,
        base_population: &PopulationSpec,
        master_seed: u64,
    ) -> Result<SweepPoint> {
        let values = self.values(index)?;
        let mut instance = *base_instance;
        let mut population = base_population.clone();
        for &(axis, v) in &values {
            match axis {
                SweepAxis::Eta => population = population.map_behaviors(|b| b.with_eta(v)),
                SweepAxis::EtaMax => population = population.map_behaviors(|b| b.with_eta_max(v)),
                SweepAxis::Delta => {
                    let mid = 0.5 * (base_instance.mu1 + base_instance.mu2);
                    instance.mu1 = mid + v / 2.0;
                    instance.mu2 = mid - v / 2.0;
                }
                SweepAxis::N0 => instance.n0 = v as u64,
                SweepAxis::Horizon => instance.horizon = v as u64,
                SweepAxis::Q => population = population.with_first_probability(v)?,
            }
        }
        instance.validate()?;
        population.validate()?;
        Ok(SweepPoint {
            index,
            values,
            instance,
            population,
            seed: row_seed(master_seed, index as u64),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub values: Vec<(SweepAxis, f64)>,
    pub instance: Instance,
    pub population: PopulationSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub values: Vec<(SweepAxis, f64)>,
    pub seed: u64,
    pub estimates: Estimates,
}

/// Estimates at one grid point, seeded by [`row_seed`].
pub fn run_point(point: &SweepPoint, estimator: Estimator, settings: &McSettings) -> Result<SweepRow> {
    let s = McSettings {
        master_seed: point.seed,
        ..*settings
    };
    Ok(SweepRow {
        index: point.index,
        values: point.values.clone(),
        seed: point.seed,
        estimates: estimate(&point.instance, &point.population, estimator, &s)?,
    })
}

/// Rows `start..grid.len()` in grid order. A resumed sweep passes the
/// number of rows already written as `start`.
pub fn sweep(
    grid: &SweepGrid,
    base_instance: &Instance,
    base_population: &PopulationSpec,
    estimator: Estimator,
    settings: &McSettings,
    start: usize,
) -> Result<Vec<SweepRow>> {
    (start..grid.len())
        .map(|i| {
            let p = grid.point(i, base_instance, base_population, settings.master_seed)?;
            run_point(&p, estimator, settings)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behaviors::BehaviorSpec;
    use crate::engine::run_trajectory;
    use crate::model::{stream_rng, Lane, RewardTape};

    fn unbiased() -> PopulationSpec {
        PopulationSpec::single(BehaviorSpec::Unbiased)
    }

    fn small() -> Instance {
        Instance::new(0.6, 0.4, 1, 6).unwrap()
    }

    /// Independent oracle: recursion over the rewards actually revealed,
    /// branching on each Bernoulli outcome instead of iterating full tapes.
    fn lazy_tree(instance: &Instance, population: &PopulationSpec) -> (Vec<f64>, f64) {
        fn rec(
            inst: &Instance,
            pop: &PopulationSpec,
            hist: &mut [Vec<u8>; 2],
            round: u64,
            good: u64,
            w: f64,
            pmf: &mut Vec<f64>,
        ) {
            if round == inst.horizon {
                pmf[good as usize] += w;
                return;
            }
            let stats: Vec<ArmStats> = hist
                .iter()
                .map(|h| ArmStats::new(h.len() as u64, h.iter().map(|&b| b as u64).sum()).unwrap())
                .collect();
            let mut rng = stream_rng(0, 0, Lane::Agents);
            for c in pop.components() {
                let recent = [hist[0].clone(), hist[1].clone()];
                let (i1, i2) = compute_indices(&c.behavior, &stats[0], &stats[1], Some([&recent[0], &recent[1]]), &mut rng).unwrap();
                let choices: Vec<(usize, f64)> = if i1 == i2 {
                    vec![(0, 0.5), (1, 0.5)]
                } else if i1 > i2 {
                    vec![(0, 1.0)]
                } else {
                    vec![(1, 1.0)]
                };
                for (a, cw) in choices {
                    let mu = if a == 0 { inst.mu1 } else { inst.mu2 };
                    for (bit, pw) in [(1u8, mu), (0u8, 1.0 - mu)] {
                        if pw == 0.0 {
                            continue;
                        }
                        hist[a].push(bit);
                        rec(inst, pop, hist, round + 1, good + (a == 0) as u64, w * c.probability * cw * pw, pmf);
                        hist[a].pop();
                    }
                }
            }
        }
        let mut pmf = vec![0.0; instance.horizon as usize + 1];
        // Initial samples, enumerated explicitly.
        let n0 = instance.n0 as usize;
        for code in 0..(1u32 << (2 * n0)) {
            let bits: Vec<u8> = (0..2 * n0).map(|i| ((code >> i) & 1) as u8).collect();
            let mut w = 1.0;
            for (i, &b) in bits.iter().enumerate() {
                let mu = if i < n0 { instance.mu1 } else { instance.mu2 };
                w *= if b == 1 { mu } else { 1.0 - mu };
            }
            if w == 0.0 {
                continue;
            }
            let mut hist = [bits[..n0].to_vec(), bits[n0..].to_vec()];
            rec(instance, population, &mut hist, 0, 0, w, &mut pmf);
        }
        let t = instance.horizon as usize;
        let regret = instance.gap() * pmf.iter().enumerate().map(|(g, p)| p * (t - g) as f64).sum::<f64>();
        (pmf, regret)
    }

    #[test]
    fn single_agent_hand_value() {
        let inst = Instance::new(0.6, 0.4, 1, 1).unwrap();
        let ex = enumerate_exact(&inst, &unbiased()).unwrap();
        assert!((ex.failure_probability(0) - 0.40).abs() < 1e-12);
        assert!((ex.total_mass - 1.0).abs() < 1e-12);
        assert!((ex.expected_regret - 0.2 * 0.4).abs() < 1e-12);
    }

    #[test]
    fn degenerate_instance_is_exact_zero() {
        let inst = Instance::new(1.0, 0.0, 1, 3).unwrap();
        let ex = enumerate_exact(&inst, &unbiased()).unwrap();
        assert_eq!(ex.failure_probability(0), 0.0);
        assert_eq!(ex.expected_regret, 0.0);
        let mc = estimate_failure_probability(&inst, &unbiased(), 0, 500, 1, 1).unwrap();
        assert_eq!(mc.point, 0.0);
        assert_eq!(estimate_regret(&inst, &unbiased(), 500, 1, 1).unwrap().point, 0.0);
    }

    #[test]
    fn zero_gap_regret_is_zero() {
        let inst = Instance::new(0.5, 0.5, 2, 50).unwrap();
        assert_eq!(estimate_regret(&inst, &unbiased(), 300, 3, 1).unwrap().point, 0.0);
        // Failure semantics need a strictly better first arm.
        assert!(estimate_failure_probability(&inst, &unbiased(), 0, 10, 3, 1).is_err());
    }

    #[test]
    fn enumeration_matches_lazy_tree() {
        let mixed = PopulationSpec::mixture(vec![
            (BehaviorSpec::Optimistic { eta: 0.5 }, 0.3),
            (BehaviorSpec::ConfidentInterpolated { eta: 1.0, lambda1: 0.0, lambda2: 1.0 }, 0.7),
        ])
        .unwrap();
        let cases = [
            (small(), unbiased()),
            (Instance::new(0.7, 0.5, 2, 4).unwrap(), PopulationSpec::single(BehaviorSpec::Pessimistic { eta: 0.3 })),
            (Instance::new(0.55, 0.45, 1, 5).unwrap(), mixed),
            (Instance::new(0.8, 0.3, 2, 4).unwrap(), PopulationSpec::single(BehaviorSpec::RecencyOptimist { eta: 0.5, window: 2 })),
            (Instance::new(0.6, 0.4, 2, 3).unwrap(), PopulationSpec::single(BehaviorSpec::BayesUnbiased { prior_alpha: [1, 1], prior_beta: [1, 1] })),
        ];
        for (inst, pop) in cases {
            let ex = enumerate_exact(&inst, &pop).unwrap();
            let (pmf, regret) = lazy_tree(&inst, &pop);
            assert!((ex.total_mass - 1.0).abs() < 1e-12);
            for (a, b) in ex.good_pulls_pmf.iter().zip(&pmf) {
                assert!((a - b).abs() < 1e-12, "{inst:?}");
            }
            assert!((ex.expected_regret - regret).abs() < 1e-12);
            assert!(ex.expected_regret <= inst.gap() * inst.horizon as f64);
        }
    }

    #[test]
    fn enumeration_preconditions() {
        let big = Instance::new(0.6, 0.4, 2, 11).unwrap();
        assert!(matches!(
            enumerate_exact(&big, &unbiased()),
            Err(Error::TooLargeForEnumeration { bits: 26, limit: 24 })
        ));
        let thompson = PopulationSpec::single(BehaviorSpec::ThompsonProjected {
            eta: 1.0,
            prior_alpha: [1, 1],
            prior_beta: [1, 1],
        });
        assert!(matches!(enumerate_exact(&small(), &thompson), Err(Error::NotEnumerable(_))));
        let interval = PopulationSpec::single(BehaviorSpec::IntervalOptimistic { eta: 1.0, eta_max: 2.0 });
        assert!(matches!(enumerate_exact(&small(), &interval), Err(Error::NotEnumerable(_))));
        let degenerate = PopulationSpec::single(BehaviorSpec::IntervalOptimistic { eta: 1.0, eta_max: 1.0 });
        let a = enumerate_exact(&small(), &degenerate).unwrap();
        let b = enumerate_exact(&small(), &PopulationSpec::single(BehaviorSpec::Optimistic { eta: 1.0 })).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let inst = small();
        let ex = enumerate_exact(&inst, &unbiased()).unwrap();
        let p = ex.failure_probability(0);
        let trials = 20_000;
        let fail = estimate_failure_probability(&inst, &unbiased(), 0, trials, 11, 1).unwrap();
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((fail.point - p).abs() <= 3.0 * se, "{} vs {p}", fail.point);
        let reg = estimate_regret(&inst, &unbiased(), trials, 11, 1).unwrap();
        assert!((reg.point - ex.expected_regret).abs() <= 3.0 * reg.std_error);
    }

    #[test]
    fn repeated_oracle_audits() {
        let pops = [
            unbiased(),
            PopulationSpec::single(BehaviorSpec::Optimistic { eta: 0.5 }),
            PopulationSpec::single(BehaviorSpec::Pessimistic { eta: 0.5 }),
        ];
        let inst = small();
        let mut audits = 0;
        let mut within = 0;
        for pop in &pops {
            let ex = enumerate_exact(&inst, pop).unwrap();
            for n in [0u64, 2] {
                let p = ex.failure_probability(n);
                for rep in 0..40 {
                    let trials = 2_000;
                    let est = estimate_failure_probability(&inst, pop, n, trials, 1000 + rep, 1).unwrap();
                    let se = (p * (1.0 - p) / trials as f64).sqrt();
                    audits += 1;
                    within += ((est.point - p).abs() <= 3.0 * se) as u32;
                }
            }
        }
        assert!(within as f64 >= 0.99 * audits as f64, "{within}/{audits}");
    }

    #[test]
    fn trajectory_agrees_with_replay_on_a_fixed_tape() {
        let inst = small();
        for trial in 0..50 {
            let tape = RewardTape::for_trial(&inst, 5, trial);
            let pmf = replay_tape(&inst, &unbiased(), [tape.row(Arm::One), tape.row(Arm::Two)]).unwrap();
            let mut rng = stream_rng(5, trial, Lane::Agents);
            let tr = run_trajectory(&inst, &unbiased(), &mut tape.cursor(), &mut rng, RunOptions::full()).unwrap();
            assert!(pmf[tr.good_arm_pulls_beyond_init as usize] > 0.0);
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_determinism() {
        let inst = Instance::new(0.6, 0.4, 2, 200).unwrap();
        let pop = PopulationSpec::mixture(vec![
            (BehaviorSpec::ThompsonProjected { eta: 1.0, prior_alpha: [1, 1], prior_beta: [1, 1] }, 0.5),
            (BehaviorSpec::Unbiased, 0.5),
        ])
        .unwrap();
        let base = McSettings::new(3000, 123);
        let results: Vec<Estimates> = [1usize, 4, 16]
            .iter()
            .map(|&p| estimate(&inst, &pop, Estimator::Both { n: 3 }, &base.with_parallelism(p)).unwrap())
            .collect();
        assert_eq!(results[0], results[1]);
        assert_eq!(results[0], results[2]);
    }

    #[test]
    fn early_exit_and_full_runs_agree_on_failures() {
        let inst = Instance::new(0.6, 0.4, 2, 300).unwrap();
        let pop = PopulationSpec::single(BehaviorSpec::Pessimistic { eta: 0.2 });
        let s = McSettings::new(2000, 7);
        let fast = estimate(&inst, &pop, Estimator::Failure { n: 1 }, &s).unwrap().failure.unwrap();
        let full = estimate(&inst, &pop, Estimator::Both { n: 1 }, &s).unwrap().failure.unwrap();
        assert_eq!(fast, full);
    }

    #[test]
    fn optimism_lowers_failure() {
        let inst = Instance::new(0.6, 0.4, 2, 200).unwrap();
        let grid = SweepGrid::single(SweepAxis::Eta, vec![0.0, 0.1, 0.2, 0.4]).unwrap();
        let pop = PopulationSpec::single(BehaviorSpec::Optimistic { eta: 0.0 });
        let rows = sweep(&grid, &inst, &pop, Estimator::Failure { n: 0 }, &McSettings::new(20_000, 3), 0).unwrap();
        for w in rows.windows(2) {
            let (a, b) = (w[0].estimates.failure.unwrap(), w[1].estimates.failure.unwrap());
            assert!(b.point < a.point, "{} !< {}", b.point, a.point);
        }
    }

    #[test]
    fn sweep_seed_contract() {
        let grid = SweepGrid::single(SweepAxis::Eta, vec![0.5, 1.0, 1.5]).unwrap();
        let inst = Instance::new(0.6, 0.4, 2, 30).unwrap();
        let pop = PopulationSpec::single(BehaviorSpec::Optimistic { eta: 0.0 });
        let s = McSettings::new(400, 99);
        let rows = sweep(&grid, &inst, &pop, Estimator::Both { n: 0 }, &s, 0).unwrap();
        let seeds: std::collections::HashSet<u64> = rows.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 3);
        // A size-1 grid equals a direct call.
        let one = SweepGrid::single(SweepAxis::Eta, vec![1.0]).unwrap();
        let row = &sweep(&one, &inst, &pop, Estimator::Both { n: 0 }, &s, 0).unwrap()[0];
        let direct = estimate(&inst, &PopulationSpec::single(BehaviorSpec::Optimistic { eta: 1.0 }), Estimator::Both { n: 0 }, &s).unwrap();
        assert_eq!(row.estimates, direct);
        // Resuming yields the tail of a full run.
        let tail = sweep(&grid, &inst, &pop, Estimator::Both { n: 0 }, &s, 1).unwrap();
        assert_eq!(tail[..], rows[1..]);
    }

    #[test]
    fn grid_order_and_axes() {
        let grid = SweepGrid::new(vec![
            AxisSpec { axis: SweepAxis::N0, values: vec![1.0, 5.0] },
            AxisSpec { axis: SweepAxis::Delta, values: vec![0.1, 0.2, 0.3] },
        ])
        .unwrap();
        assert_eq!(grid.len(), 6);
        assert_eq!(grid.values(0).unwrap(), vec![(SweepAxis::N0, 1.0), (SweepAxis::Delta, 0.1)]);
        assert_eq!(grid.values(1).unwrap(), vec![(SweepAxis::N0, 1.0), (SweepAxis::Delta, 0.2)]);
        assert_eq!(grid.values(3).unwrap(), vec![(SweepAxis::N0, 5.0), (SweepAxis::Delta, 0.1)]);
        assert!(grid.values(6).is_err());
        let base = Instance::new(0.6, 0.4, 1, 10).unwrap();
        let p = grid.point(5, &base, &unbiased(), 0).unwrap();
        assert_eq!(p.instance.n0, 5);
        assert!((p.instance.mu1 - 0.65).abs() < 1e-12 && (p.instance.mu2 - 0.35).abs() < 1e-12);
        assert!(SweepGrid::new(vec![]).is_err());
        assert!(SweepGrid::single(SweepAxis::Horizon, vec![2.5]).is_err());

        let mix = PopulationSpec::mixture(vec![
            (BehaviorSpec::Optimistic { eta: 1.0 }, 0.5),
            (BehaviorSpec::Unbiased, 0.5),
        ])
        .unwrap();
        let q = SweepGrid::single(SweepAxis::Q, vec![0.2]).unwrap();
        let p = q.point(0, &base, &mix, 0).unwrap();
        assert_eq!(p.population.components()[0].probability, 0.2);
    }

    #[test]
    fn regret_interval_covers_exact_value() {
        let inst = Instance::new(0.6, 0.4, 2, 4).unwrap();
        let pop = PopulationSpec::single(BehaviorSpec::Optimistic { eta: 0.4 });
        let ex = enumerate_exact(&inst, &pop).unwrap();
        let est = estimate_regret(&inst, &pop, 50_000, 4, 1).unwrap();
        assert!(est.ci_low <= ex.expected_regret && ex.expected_regret <= est.ci_high);
    }
}
