//! Acceptance suites. Each suite returns a fixed list of checks; every check
//! carries the observed value, its threshold and the relation between them.

use std::fmt;

use clap::ValueEnum;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use social_bandits::bayes::{
    bayes_confidence_containment, beta_cdf, beta_quantile, posterior_deviation_check, run_bayes_greedy_with_prior,
    BayesIndexKind, BetaParams, FiniteSupportPrior,
};
use social_bandits::model::{row_seed, stream_rng, Lane, LazyTape};
use social_bandits::probtools::{
    binomial_tail_exact, kl_bernoulli, martingale_mean, martingale_u, n_star, simulate_uniform_prefix_event,
    uniform_prefix_floor, ville_check,
};
use social_bandits::stats::linear_fit;
use social_bandits::{
    enumerate_exact, estimate, Arm, BehaviorSpec, EstimateWithCI, Estimator, Instance, McSettings, PopulationSpec,
};

use crate::error::CliResult;

const LEVEL: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Oracle,
    FailureExponent,
    UnbiasedGap,
    Pessimism,
    OptimismRegret,
    RecurringOptimism,
    SmallN0,
    Probtools,
    Bayes,
    Priors,
}

impl Suite {
    /// Ordered as the numbered acceptance criteria.
    pub const ALL: [Suite; 10] = [
        Suite::Oracle,
        Suite::FailureExponent,
        Suite::UnbiasedGap,
        Suite::Pessimism,
        Suite::OptimismRegret,
        Suite::RecurringOptimism,
        Suite::SmallN0,
        Suite::Probtools,
        Suite::Bayes,
        Suite::Priors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::FailureExponent => "failure-exponent",
            Suite::UnbiasedGap => "unbiased-gap",
            Suite::Pessimism => "pessimism",
            Suite::OptimismRegret => "optimism-regret",
            Suite::RecurringOptimism => "recurring-optimism",
            Suite::SmallN0 => "small-n0",
            Suite::Probtools => "probtools",
            Suite::Bayes => "bayes",
            Suite::Priors => "priors",
        }
    }

    /// Number of report lines the suite emits.
    pub fn check_count(self) -> usize {
        match self {
            Suite::Oracle => 5,
            Suite::FailureExponent => 3,
            Suite::UnbiasedGap => 2,
            Suite::Pessimism => 2,
            Suite::OptimismRegret => 2,
            Suite::RecurringOptimism => 2,
            Suite::SmallN0 => 1,
            Suite::Probtools => 7,
            Suite::Bayes => 6,
            Suite::Priors => 3,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
        }
    }

    fn holds(self, observed: f64, threshold: f64) -> bool {
        match self {
            Relation::Lt => observed < threshold,
            Relation::Le => observed <= threshold,
            Relation::Gt => observed > threshold,
            Relation::Ge => observed >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub criterion: String,
    /// NaN (written as null) when the quantity is undefined; the check then fails.
    pub observed: Option<f64>,
    pub threshold: f64,
    pub relation: Relation,
    pub pass: bool,
    pub detail: Value,
}

impl Check {
    fn new(suite: Suite, criterion: &str, observed: f64, relation: Relation, threshold: f64, detail: Value) -> Self {
        Check {
            suite,
            criterion: criterion.into(),
            observed: (!observed.is_nan()).then_some(observed),
            threshold,
            relation,
            pass: !observed.is_nan() && relation.holds(observed, threshold),
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Multiplies every trial budget; 1 is the stated desk-scale run.
    pub scale: f64,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            scale: 1.0,
            seed: 1,
            parallelism: 1,
        }
    }
}

impl VerifyOptions {
    fn trials(&self, base: u64) -> u64 {
        ((base as f64 * self.scale).round() as u64).max(1)
    }

    fn settings(&self, base: u64, point: u64) -> McSettings {
        McSettings {
            trials: self.trials(base),
            master_seed: row_seed(self.seed, point),
            parallelism: self.parallelism,
            level: LEVEL,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let checks = match suite {
        Suite::Oracle => oracle(opts)?,
        Suite::FailureExponent => failure_exponent(opts)?,
        Suite::UnbiasedGap => unbiased_gap(opts)?,
        Suite::Pessimism => pessimism(opts)?,
        Suite::OptimismRegret => optimism_regret(opts)?,
        Suite::RecurringOptimism => recurring_optimism(opts)?,
        Suite::SmallN0 => small_n0(opts)?,
        Suite::Probtools => probtools(opts)?,
        Suite::Bayes => bayes(opts)?,
        Suite::Priors => priors(opts)?,
    };
    debug_assert_eq!(checks.len(), suite.check_count());
    Ok(checks)
}

fn est_json(e: &EstimateWithCI) -> Value {
    json!({ "point": e.point, "ci_low": e.ci_low, "ci_high": e.ci_high, "std_error": e.std_error, "trials": e.trials })
}

/// Exact values shipped with the crate, produced by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub instance: Instance,
    pub population: PopulationSpec,
    pub failure_probability: f64,
    pub expected_regret: f64,
    pub total_mass: f64,
    pub good_pulls_pmf: Vec<f64>,
}

pub const ORACLE_FIXTURES: &str = include_str!("../fixtures/oracle_fixtures.json");

pub fn oracle_fixture_cases() -> Vec<(Instance, PopulationSpec)> {
    let mut out = Vec::new();
    for horizon in [1u64, 4, 6, 8] {
        for b in [BehaviorSpec::Unbiased, BehaviorSpec::Pessimistic { eta: 0.5 }] {
            out.push((Instance::new(0.6, 0.4, 1, horizon).expect("valid"), PopulationSpec::single(b)));
        }
    }
    out
}

pub fn compute_oracle_fixtures() -> CliResult<Vec<OracleFixture>> {
    oracle_fixture_cases()
        .into_iter()
        .map(|(instance, population)| {
            let ex = enumerate_exact(&instance, &population)?;
            Ok(OracleFixture {
                failure_probability: ex.failure_probability(0),
                expected_regret: ex.expected_regret,
                total_mass: ex.total_mass,
                good_pulls_pmf: ex.good_pulls_pmf,
                instance,
                population,
            })
        })
        .collect()
}

pub fn shipped_oracle_fixtures() -> Vec<OracleFixture> {
    serde_json::from_str(ORACLE_FIXTURES).expect("shipped fixtures parse")
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff.abs() <= 1e-12 {
        0.0
    } else if se > 0.0 {
        diff.abs() / se
    } else {
        f64::INFINITY
    }
}

/// `diff / se`, with a zero standard error read as exact agreement or an
/// infinite excess.
fn signed_z(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn oracle(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::Oracle;
    let shipped = shipped_oracle_fixtures();
    let fresh = compute_oracle_fixtures()?;
    let mut max_diff = if shipped.len() == fresh.len() { 0.0f64 } else { f64::INFINITY };
    for (a, b) in shipped.iter().zip(&fresh) {
        if a.instance != b.instance || a.population != b.population || a.good_pulls_pmf.len() != b.good_pulls_pmf.len() {
            max_diff = f64::INFINITY;
            continue;
        }
        max_diff = max_diff
            .max((a.failure_probability - b.failure_probability).abs())
            .max((a.expected_regret - b.expected_regret).abs());
        for (x, y) in a.good_pulls_pmf.iter().zip(&b.good_pulls_pmf) {
            max_diff = max_diff.max((x - y).abs());
        }
    }
    let max_mass = fresh.iter().map(|f| (f.total_mass - 1.0).abs()).fold(0.0, f64::max);

    let mut worst_fail = 0.0f64;
    let mut worst_regret = 0.0f64;
    let mut rows = Vec::new();
    for (i, f) in fresh.iter().enumerate() {
        let st = opts.settings(1_000_000, i as u64);
        let e = estimate(&f.instance, &f.population, Estimator::Both { n: 0 }, &st)?;
        let fail = e.failure.expect("both");
        let regret = e.regret.expect("both");
        let p = f.failure_probability;
        let zf = z_score(fail.point - p, fail.std_error_at(p));
        let zr = z_score(regret.point - f.expected_regret, regret.std_error);
        worst_fail = worst_fail.max(zf);
        worst_regret = worst_regret.max(zr);
        rows.push(json!({
            "horizon": f.instance.horizon,
            "behavior": f.population.components()[0].behavior.name(),
            "exact_failure": p, "mc_failure": fail.point, "z_failure": zf,
            "exact_regret": f.expected_regret, "mc_regret": regret.point, "z_regret": zr,
        }));
    }
    let hand = fresh
        .iter()
        .find(|f| f.instance.horizon == 1 && f.population.components()[0].behavior == BehaviorSpec::Unbiased)
        .map_or(f64::NAN, |f| (f.failure_probability - 0.40).abs());
    Ok(vec![
        Check::new(s, "fixtures_match_enumeration", max_diff, Relation::Le, 1e-12, json!({ "fixtures": shipped.len() })),
        Check::new(s, "mass_conservation", max_mass, Relation::Le, 1e-12, Value::Null),
        Check::new(s, "mc_failure_within_3se", worst_fail, Relation::Le, 3.0, Value::Array(rows.clone())),
        Check::new(s, "mc_regret_within_3se", worst_regret, Relation::Le, 3.0, Value::Null),
        Check::new(s, "hand_value_t1", hand, Relation::Le, 1e-12, json!({ "expected": 0.40 })),
    ])
}

fn failure_sweep(
    opts: &VerifyOptions,
    trials: u64,
    points: &[(Instance, PopulationSpec)],
) -> CliResult<Vec<EstimateWithCI>> {
    points
        .iter()
        .enumerate()
        .map(|(i, (inst, pop))| {
            let e = estimate(inst, pop, Estimator::Failure { n: 0 }, &opts.settings(trials, i as u64))?;
            Ok(e.failure.expect("failure"))
        })
        .collect()
}

fn failure_exponent(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::FailureExponent;
    let etas = [0.0, 0.5, 1.0, 1.5, 2.0];
    let inst = Instance::new(0.55, 0.45, 100, 10_000)?;
    let points: Vec<_> = etas
        .iter()
        .map(|&eta| (inst, PopulationSpec::single(BehaviorSpec::Optimistic { eta })))
        .collect();
    let est = failure_sweep(opts, 100_000, &points)?;
    let separated = est.windows(2).filter(|w| w[1].ci_high < w[0].ci_low).count();
    let logs: Vec<f64> = est.iter().map(|e| e.point.ln()).collect();
    let (slope, r2) = if logs.iter().all(|l| l.is_finite()) {
        linear_fit(&etas, &logs).map_or((f64::NAN, f64::NAN), |f| (f.slope, f.r_squared))
    } else {
        (f64::NAN, f64::NAN)
    };
    let detail = Value::Array(
        etas.iter()
            .zip(&est)
            .map(|(eta, e)| json!({ "eta": eta, "estimate": est_json(e) }))
            .collect(),
    );
    Ok(vec![
        Check::new(s, "decreasing_beyond_ci_overlap", separated as f64, Relation::Ge, (etas.len() - 1) as f64, detail),
        Check::new(s, "log_fit_slope", slope, Relation::Lt, 0.0, json!({ "log_p": logs.iter().map(|l| if l.is_finite() { json!(l) } else { Value::Null }).collect::<Vec<_>>() })),
        Check::new(s, "log_fit_r_squared", r2, Relation::Ge, 0.9, Value::Null),
    ])
}

fn unbiased_gap(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::UnbiasedGap;
    let deltas = [0.05, 0.1, 0.2];
    let points = deltas
        .iter()
        .map(|&d| Ok((Instance::centered(d, 5, 10_000)?, PopulationSpec::single(BehaviorSpec::Unbiased))))
        .collect::<CliResult<Vec<_>>>()?;
    let est = failure_sweep(opts, 100_000, &points)?;
    let ratios: Vec<f64> = est.iter().zip(&deltas).map(|(e, d)| e.point / d).collect();
    let max = ratios.iter().copied().fold(f64::MIN, f64::max);
    let min = ratios.iter().copied().fold(f64::MAX, f64::min);
    let spread = if min > 0.0 { max / min } else { f64::INFINITY };
    let min_low = est.iter().map(|e| e.ci_low).fold(f64::INFINITY, f64::min);
    let detail = Value::Array(
        deltas
            .iter()
            .zip(&est)
            .zip(&ratios)
            .map(|((d, e), r)| json!({ "delta": d, "estimate": est_json(e), "p_over_delta": r }))
            .collect(),
    );
    Ok(vec![
        Check::new(s, "p_over_delta_factor3_band", spread, Relation::Le, 3.0, detail),
        Check::new(s, "ci_excludes_zero", min_low, Relation::Gt, 0.0, Value::Null),
    ])
}

fn pessimism(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::Pessimism;
    let inst = Instance::centered(0.1, 5, 10_000)?;
    let etas = [0.5, 1.0, 2.0];
    let mut points = vec![(inst, PopulationSpec::single(BehaviorSpec::Unbiased))];
    points.extend(etas.iter().map(|&eta| (inst, PopulationSpec::single(BehaviorSpec::Pessimistic { eta }))));
    let est = failure_sweep(opts, 100_000, &points)?;
    let floor = est[0].point / 3.0;
    let pess = &est[1..];
    let min_p = pess.iter().map(|e| e.point).fold(f64::INFINITY, f64::min);
    let detail = json!({
        "unbiased": est_json(&est[0]),
        "pessimistic": etas.iter().zip(pess).map(|(eta, e)| json!({ "eta": eta, "estimate": est_json(e) })).collect::<Vec<_>>(),
    });
    // A significant decrease would put the CI at the largest eta entirely
    // below the CI at the smallest.
    let first = &pess[0];
    let last = &pess[pess.len() - 1];
    Ok(vec![
        Check::new(s, "floor_unbiased_over_3", min_p, Relation::Ge, floor, detail),
        Check::new(
            s,
            "no_significant_decrease",
            last.ci_high,
            Relation::Ge,
            first.ci_low,
            json!({ "ci_largest_eta": [last.ci_low, last.ci_high], "ci_smallest_eta": [first.ci_low, first.ci_high] }),
        ),
    ])
}

const REGRET_HORIZONS: [u64; 3] = [1_000, 10_000, 100_000];

fn regret_at(opts: &VerifyOptions, horizon: u64, pop: &PopulationSpec, point: u64) -> CliResult<EstimateWithCI> {
    let inst = Instance::centered(0.1, 1, horizon)?;
    let e = estimate(&inst, pop, Estimator::Regret, &opts.settings(1_000, point))?;
    Ok(e.regret.expect("regret"))
}

fn optimism_regret(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::OptimismRegret;
    let mut per_round = Vec::new();
    let mut detail = Vec::new();
    let mut last = None;
    for (i, &t) in REGRET_HORIZONS.iter().enumerate() {
        let eta = (t as f64).ln();
        let r = regret_at(opts, t, &PopulationSpec::single(BehaviorSpec::Optimistic { eta }), i as u64)?;
        per_round.push(r.point / t as f64);
        detail.push(json!({ "horizon": t, "eta": eta, "regret": est_json(&r), "per_round": r.point / t as f64 }));
        last = Some(r);
    }
    let worst_ratio = per_round.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let t = REGRET_HORIZONS[2] as f64;
    let bound = 100.0 * t.ln() / 0.1;
    Ok(vec![
        Check::new(s, "per_round_regret_decreasing", worst_ratio, Relation::Lt, 1.0, Value::Array(detail)),
        Check::new(s, "regret_bound_at_1e5", last.expect("horizons").point, Relation::Le, bound, Value::Null),
    ])
}

fn recurring_optimism(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::RecurringOptimism;
    let mut pess = Vec::new();
    for (i, &t) in REGRET_HORIZONS[1..].iter().enumerate() {
        let eta = (t as f64).ln();
        pess.push(regret_at(opts, t, &PopulationSpec::single(BehaviorSpec::Pessimistic { eta }), i as u64)?);
    }
    let t = REGRET_HORIZONS[2];
    let eta = (t as f64).ln();
    let mix = PopulationSpec::mixture(vec![
        (BehaviorSpec::Optimistic { eta }, 0.1),
        (BehaviorSpec::Pessimistic { eta }, 0.9),
    ])?;
    let m = regret_at(opts, t, &mix, 2)?;
    let share = m.point / pess[1].point;
    let per: Vec<f64> = pess.iter().zip(&REGRET_HORIZONS[1..]).map(|(p, &t)| p.point / t as f64).collect();
    let spread = per[0].max(per[1]) / per[0].min(per[1]);
    Ok(vec![
        Check::new(
            s,
            "mixture_share_of_pessimist_regret",
            share,
            Relation::Le,
            0.2,
            json!({ "mixture": est_json(&m), "pessimist": est_json(&pess[1]) }),
        ),
        Check::new(
            s,
            "pessimist_regret_linear",
            spread,
            Relation::Le,
            2.0,
            json!({ "per_round": per, "horizons": &REGRET_HORIZONS[1..] }),
        ),
    ])
}

/// Margin constant used for the small-N0 run; the means 0.55 and 0.45 lie
/// in `[c, 1 - c]`.
pub const SMALL_N0_MARGIN: f64 = 0.25;

fn small_n0(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::SmallN0;
    let inst = Instance::new(0.55, 0.45, 1, 10_000)?.with_margin(SMALL_N0_MARGIN)?;
    let ns = n_star(0.0, SMALL_N0_MARGIN)?;
    let n = ns - 1;
    let pop = PopulationSpec::single(BehaviorSpec::Unbiased);
    let e = estimate(&inst, &pop, Estimator::Failure { n }, &opts.settings(100_000, 0))?;
    let f = e.failure.expect("failure");
    Ok(vec![Check::new(
        s,
        "failure_ci_excludes_zero",
        f.ci_low,
        Relation::Gt,
        0.0,
        json!({ "n_star": ns, "n": n, "c": SMALL_N0_MARGIN, "estimate": est_json(&f) }),
    )])
}

fn probtools(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::Probtools;
    let mut worst_res = 0.0f64;
    let mut worst_x0 = f64::NEG_INFINITY;
    for i in 0..10 {
        let p = 0.05 + 0.1 * i as f64;
        for j in 0..10 {
            let q = p * (0.05 + 0.1 * j as f64);
            let b = martingale_u(p, q)?;
            worst_res = worst_res.max(b.residual);
            worst_x0 = worst_x0.max(b.u - b.x0);
        }
    }

    let (p, q) = (0.6, 0.3);
    let paths = opts.trials(100_000);
    let mut worst_z = 0.0f64;
    let mut zs = Vec::new();
    for n in [10u64, 100] {
        let m = martingale_mean(p, q, n, paths, opts.seed)?;
        let z = z_score(m.mean - 1.0, m.std_error);
        worst_z = worst_z.max(z);
        zs.push(json!({ "n": n, "mean": m.mean, "std_error": m.std_error }));
    }

    let mut worst_ville = f64::NEG_INFINITY;
    let mut ville = Vec::new();
    for x in [2.0, 10.0] {
        let e = ville_check(p, q, x, paths, 1000, opts.seed, LEVEL)?;
        let sigma = e.std_error_at(1.0 / x);
        worst_ville = worst_ville.max(signed_z(e.point - 1.0 / x, sigma));
        ville.push(json!({ "x": x, "exceedance": e.point, "bound": 1.0 / x, "sigma": sigma }));
    }

    let mut worst_prefix = f64::NEG_INFINITY;
    let mut prefix = Vec::new();
    let runs = opts.trials(20_000);
    for p in [0.3, 0.5, 0.7] {
        for f in [0.25, 0.5, 0.75] {
            let q = p * f;
            let floor = uniform_prefix_floor(p, q)?;
            let e = simulate_uniform_prefix_event(p, q, runs, 2000, opts.seed, LEVEL)?;
            let z = signed_z(floor - e.point, e.std_error);
            worst_prefix = worst_prefix.max(z);
            prefix.push(json!({ "p": p, "q": q, "floor": floor, "simulated": e.point }));
        }
    }

    let draws = opts.trials(1_000_000);
    let (bn, bp, bk) = (100u64, 0.3, 20u64);
    let exact = binomial_tail_exact(bn, bp, bk)?;
    let mut rng = stream_rng(opts.seed, 0, Lane::Agents);
    let mut hits = 0u64;
    for _ in 0..draws {
        let x = (0..bn).filter(|_| rng.random::<f64>() < bp).count() as u64;
        hits += (x <= bk) as u64;
    }
    let freq = hits as f64 / draws as f64;
    let zb = z_score(freq - exact, (exact * (1.0 - exact) / draws as f64).sqrt());

    let mut worst_pinsker = 0.0f64;
    for i in 0..=12 {
        let p = 0.2 + 0.05 * i as f64;
        for j in 1..100 {
            let q = j as f64 / 100.0;
            if (q - p).abs() < 1e-12 {
                continue;
            }
            let d = kl_bernoulli(q, p)?;
            worst_pinsker = worst_pinsker.max(d / (2.0 * (p - q).powi(2) / p.min(1.0 - p)));
        }
    }

    Ok(vec![
        Check::new(s, "u_residual", worst_res, Relation::Le, 1e-12, json!({ "grid_points": 100 })),
        Check::new(s, "u_at_most_x0", worst_x0, Relation::Le, 0.0, Value::Null),
        Check::new(s, "martingale_mean_within_4sigma", worst_z, Relation::Le, 4.0, Value::Array(zs)),
        Check::new(s, "ville_exceedance_within_3sigma", worst_ville, Relation::Le, 3.0, Value::Array(ville)),
        Check::new(s, "prefix_floor_within_3sigma", worst_prefix, Relation::Le, 3.0, Value::Array(prefix)),
        Check::new(
            s,
            "binomial_tail_matches_sampling",
            zb,
            Relation::Le,
            4.0,
            json!({ "n": bn, "p": bp, "k": bk, "exact": exact, "frequency": freq, "draws": draws }),
        ),
        Check::new(s, "reverse_pinsker_ratio", worst_pinsker, Relation::Le, 1.0, Value::Null),
    ])
}

fn bayes(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::Bayes;
    let two_one = BetaParams::new(2, 1)?;
    let mut cdf_err = 0.0f64;
    for i in 0..=1000 {
        let y = i as f64 / 1000.0;
        cdf_err = cdf_err
            .max((beta_cdf(BetaParams::UNIFORM, y) - y).abs())
            .max((beta_cdf(two_one, y) - y * y).abs());
    }

    let mut round_trip = 0.0f64;
    for a in 1..=20 {
        for b in 1..=20 {
            let prm = BetaParams::new(a, b)?;
            for z in [1e-6, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0 - 1e-6] {
                round_trip = round_trip.max((beta_cdf(prm, beta_quantile(prm, z)?) - z).abs());
            }
        }
    }

    let priors = [BetaParams::UNIFORM, BetaParams::new(2, 3)?, BetaParams::new(5, 1)?, BetaParams::new(1, 8)?];
    let paths = opts.trials(1_000);
    let steps = 200;
    let inst = Instance::new(0.6, 0.4, 1, steps)?;
    let (mut mean_ratio, mut rho_ratio, mut identity) = (0.0f64, 0.0f64, true);
    for path in 0..paths {
        let prior = priors[(path % priors.len() as u64) as usize];
        let arm = if path % 2 == 0 { Arm::One } else { Arm::Two };
        let mut tape = LazyTape::for_trial(&inst, opts.seed, path);
        let d = posterior_deviation_check(prior, arm, &mut tape, steps)?;
        mean_ratio = mean_ratio.max(d.worst_mean_ratio);
        rho_ratio = rho_ratio.max(d.worst_rho_ratio);
        identity &= d.rho_identity_holds;
    }

    let mut etas = Vec::new();
    for n0 in [4u64, 16, 64, 256] {
        let inst = Instance::new(0.6, 0.4, n0, 200)?;
        let rep = bayes_confidence_containment(
            [BetaParams::UNIFORM; 2],
            &inst,
            BayesIndexKind::PosteriorMean,
            opts.trials(200),
            200,
            opts.seed,
        )?;
        etas.push(rep.max_eta);
    }
    let worst_step = etas.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);

    Ok(vec![
        Check::new(s, "cdf_closed_forms", cdf_err, Relation::Le, 1e-10, Value::Null),
        Check::new(s, "quantile_round_trip", round_trip, Relation::Le, 1e-9, Value::Null),
        Check::new(s, "posterior_mean_deviation_ratio", mean_ratio, Relation::Le, 1.0, json!({ "paths": paths, "steps": steps })),
        Check::new(s, "mode_deviation_ratio", rho_ratio, Relation::Le, 1.0, Value::Null),
        Check::new(s, "mode_gap_identity_violations", if identity { 0.0 } else { 1.0 }, Relation::Le, 0.0, Value::Null),
        Check::new(
            s,
            "containment_eta_decreasing_in_n0",
            worst_step,
            Relation::Lt,
            1.0,
            json!({ "n0": [4, 16, 64, 256], "max_eta": etas }),
        ),
    ])
}

fn priors(opts: &VerifyOptions) -> CliResult<Vec<Check>> {
    let s = Suite::Priors;
    let prior = FiniteSupportPrior::from_triples(&[(0.6, 0.4, 0.75), (0.4, 0.6, 0.25)])?;
    let rep = run_bayes_greedy_with_prior(&prior, 1_000, opts.trials(100_000), opts.seed, &[1, 10, 100], LEVEL)?;
    let e = &rep.never_arm2;
    let worst = rep
        .doob_means
        .iter()
        .map(|d| z_score(d.mean - rep.prior_gap, d.std_error))
        .fold(0.0, f64::max);
    Ok(vec![
        Check::new(
            s,
            "never_arm2_at_least_gap",
            e.point,
            Relation::Ge,
            rep.prior_gap - 3.0 * e.std_error,
            json!({ "estimate": est_json(e), "prior_gap": rep.prior_gap }),
        ),
        Check::new(
            s,
            "doob_mean_within_4sigma",
            worst,
            Relation::Le,
            4.0,
            serde_json::to_value(&rep.doob_means).expect("json"),
        ),
        Check::new(s, "posterior_weight_drift", rep.max_weight_drift, Relation::Le, 1e-12, Value::Null),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_fixtures_are_current() {
        let shipped = shipped_oracle_fixtures();
        let fresh = compute_oracle_fixtures().unwrap();
        assert_eq!(shipped.len(), fresh.len());
        for (a, b) in shipped.iter().zip(&fresh) {
            assert_eq!(a.instance, b.instance);
            assert!((a.failure_probability - b.failure_probability).abs() <= 1e-12);
            assert!((a.expected_regret - b.expected_regret).abs() <= 1e-12);
        }
    }

    /// Rewrites the shipped fixture file from the enumeration oracle.
    #[test]
    #[ignore]
    fn regenerate_oracle_fixtures() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/oracle_fixtures.json");
        let mut s = serde_json::to_string_pretty(&compute_oracle_fixtures().unwrap()).unwrap();
        s.push('\n');
        std::fs::write(path, s).unwrap();
    }

    #[test]
    fn relation_semantics() {
        let c = Check::new(Suite::Bayes, "x", f64::NAN, Relation::Le, 1.0, Value::Null);
        assert!(!c.pass && c.observed.is_none());
        assert!(Check::new(Suite::Bayes, "x", 1.0, Relation::Le, 1.0, Value::Null).pass);
        assert!(!Check::new(Suite::Bayes, "x", 1.0, Relation::Lt, 1.0, Value::Null).pass);
        assert!(!Check::new(Suite::Bayes, "x", f64::INFINITY, Relation::Le, 1.0, Value::Null).pass);
    }

    #[test]
    fn small_suites_at_reduced_scale_have_fixed_line_counts() {
        let opts = VerifyOptions { scale: 0.01, ..Default::default() };
        for suite in [Suite::Oracle, Suite::Bayes, Suite::Priors, Suite::Probtools] {
            let checks = run_suite(suite, &opts).unwrap();
            assert_eq!(checks.len(), suite.check_count(), "{suite}");
        }
    }
}
