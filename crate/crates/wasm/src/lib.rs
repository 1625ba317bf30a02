//! Browser bindings. Each export takes plain numbers and returns a JSON
//! string; the `*_json` functions are the same operations for native callers.

use serde::Serialize;
use social_bandits::bayes::{beta_cdf, beta_quantile, BetaParams};
use social_bandits::model::confidence_bounds;
use social_bandits::{
    estimate_failure_probability, simulate_trial, ArmStats, BehaviorSpec, Instance, PopulationSpec, RunOptions,
};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
struct CurvePoint {
    eta: f64,
    point: f64,
    ci_low: f64,
    ci_high: f64,
}

fn behavior(kind: &str, eta: f64) -> Result<BehaviorSpec, String> {
    match kind {
        "optimistic" => Ok(BehaviorSpec::Optimistic { eta }),
        "pessimistic" => Ok(BehaviorSpec::Pessimistic { eta }),
        "unbiased" => Ok(BehaviorSpec::Unbiased),
        other => Err(format!("unknown behavior `{other}`")),
    }
}

/// Failure probability (no good-arm pull after the initial samples) on an
/// evenly spaced eta grid from 0 to `eta_max`.
#[allow(clippy::too_many_arguments)]
pub fn failure_curve_json(
    kind: &str,
    mu1: f64,
    mu2: f64,
    n0: u32,
    horizon: u32,
    eta_max: f64,
    points: u32,
    trials: u32,
    seed: u32,
) -> Result<String, String> {
    let inst = Instance::new(mu1, mu2, n0 as u64, horizon as u64).map_err(|e| e.to_string())?;
    if points < 2 || !(eta_max >= 0.0) {
        return Err("need at least 2 points and eta_max >= 0".into());
    }
    let mut out = Vec::with_capacity(points as usize);
    for i in 0..points {
        let eta = eta_max * i as f64 / (points - 1) as f64;
        let pop = PopulationSpec::single(behavior(kind, eta)?);
        let e = estimate_failure_probability(&inst, &pop, 0, trials as u64, seed as u64 + i as u64, 1)
            .map_err(|e| e.to_string())?;
        out.push(CurvePoint {
            eta,
            point: e.point,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
        });
    }
    Ok(serde_json::to_string(&out).expect("json"))
}

#[derive(Debug, Serialize)]
struct RegretPaths {
    rounds: Vec<u64>,
    optimist: Vec<f64>,
    pessimist: Vec<f64>,
    mixture: Vec<f64>,
}

fn mean_cumulative_regret(inst: &Instance, pop: &PopulationSpec, rounds: &[u64], trials: u32, seed: u64) -> Result<Vec<f64>, String> {
    let opts = RunOptions {
        record_choices: true,
        ..Default::default()
    };
    let good = inst.good_arm();
    let mut sums = vec![0.0; rounds.len()];
    for trial in 0..trials as u64 {
        let tr = simulate_trial(inst, pop, seed, trial, opts).map_err(|e| e.to_string())?;
        let mut bad = 0u64;
        let mut k = 0;
        for (t, &arm) in tr.chosen_arms.iter().enumerate() {
            bad += (arm != good) as u64;
            while k < rounds.len() && rounds[k] == (t + 1) as u64 {
                sums[k] += bad as f64 * inst.gap();
                k += 1;
            }
        }
    }
    Ok(sums.into_iter().map(|s| s / trials.max(1) as f64).collect())
}

/// Mean cumulative regret over time for optimists, pessimists and a
/// mixture with optimist share `q`, all at confidence level `eta`.
#[allow(clippy::too_many_arguments)]
pub fn regret_paths_json(
    mu1: f64,
    mu2: f64,
    n0: u32,
    horizon: u32,
    eta: f64,
    q: f64,
    trials: u32,
    seed: u32,
) -> Result<String, String> {
    let inst = Instance::new(mu1, mu2, n0 as u64, horizon as u64).map_err(|e| e.to_string())?;
    let steps = 60u64.min(horizon as u64);
    let mut rounds: Vec<u64> = (1..=steps).map(|i| (i * horizon as u64).div_ceil(steps)).collect();
    rounds.dedup();
    let opt = BehaviorSpec::Optimistic { eta };
    let pess = BehaviorSpec::Pessimistic { eta };
    let mix = PopulationSpec::mixture(vec![(opt.clone(), q), (pess.clone(), 1.0 - q)]).map_err(|e| e.to_string())?;
    let seed = seed as u64;
    let r = RegretPaths {
        optimist: mean_cumulative_regret(&inst, &PopulationSpec::single(opt), &rounds, trials, seed)?,
        pessimist: mean_cumulative_regret(&inst, &PopulationSpec::single(pess), &rounds, trials, seed)?,
        mixture: mean_cumulative_regret(&inst, &mix, &rounds, trials, seed)?,
        rounds,
    };
    Ok(serde_json::to_string(&r).expect("json"))
}

#[derive(Debug, Serialize)]
struct PosteriorBand {
    alpha: u64,
    beta: u64,
    mean: f64,
    lower: f64,
    upper: f64,
    lcb: f64,
    ucb: f64,
    cdf: Vec<[f64; 2]>,
}

/// Beta posterior after `successes` and `failures` from a Beta prior: its
/// CDF, the `[Q(zeta), Q(1 - zeta)]` band and the eta confidence interval.
pub fn posterior_band_json(
    successes: u32,
    failures: u32,
    prior_alpha: u32,
    prior_beta: u32,
    zeta: f64,
    eta: f64,
) -> Result<String, String> {
    let prior = BetaParams::new(prior_alpha as u64, prior_beta as u64).map_err(|e| e.to_string())?;
    let stats = ArmStats::new((successes + failures) as u64, successes as u64).map_err(|e| e.to_string())?;
    let post = prior.posterior(&stats);
    if !(zeta > 0.0 && zeta < 0.5) {
        return Err("zeta must be in (0, 1/2)".into());
    }
    let (lcb, ucb) = if stats.pulls > 0 {
        let ci = confidence_bounds(&stats, eta).map_err(|e| e.to_string())?;
        (ci.lcb, ci.ucb)
    } else {
        (0.0, 1.0)
    };
    let band = PosteriorBand {
        alpha: post.alpha,
        beta: post.beta,
        mean: post.mean(),
        lower: beta_quantile(post, zeta).map_err(|e| e.to_string())?,
        upper: beta_quantile(post, 1.0 - zeta).map_err(|e| e.to_string())?,
        lcb,
        ucb,
        cdf: (0..=200).map(|i| i as f64 / 200.0).map(|y| [y, beta_cdf(post, y)]).collect(),
    };
    Ok(serde_json::to_string(&band).expect("json"))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn failure_curve(
    kind: &str,
    mu1: f64,
    mu2: f64,
    n0: u32,
    horizon: u32,
    eta_max: f64,
    points: u32,
    trials: u32,
    seed: u32,
) -> Result<String, JsValue> {
    failure_curve_json(kind, mu1, mu2, n0, horizon, eta_max, points, trials, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn regret_paths(mu1: f64, mu2: f64, n0: u32, horizon: u32, eta: f64, q: f64, trials: u32, seed: u32) -> Result<String, JsValue> {
    regret_paths_json(mu1, mu2, n0, horizon, eta, q, trials, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn posterior_band(successes: u32, failures: u32, prior_alpha: u32, prior_beta: u32, zeta: f64, eta: f64) -> Result<String, JsValue> {
    posterior_band_json(successes, failures, prior_alpha, prior_beta, zeta, eta).map_err(|e| JsValue::from_str(&e))
}
