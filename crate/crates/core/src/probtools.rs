//! Probability toolbox: Bernoulli KL divergence, exact binomial tails, the
//! exponential-martingale base `u`, Ville and Hoeffding maximal checks,
//! clean events on a reward tape, and evaluable bound shapes whose hidden
//! constants are explicit fields.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{stream_rng, Arm, Instance, Lane, RewardTape, AssumptionReport};
use crate::stats::{linear_fit, EstimateWithCI};

/// `D(q || p)` between Bernoulli(q) and Bernoulli(p), with `0 ln 0 = 0`.
pub fn kl_bernoulli(q: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) || !(0.0..=1.0).contains(&p) {
        return Err(invalid("p, q", format!("need probabilities, got q = {q}, p = {p}")));
    }
    if q == p {
        return Ok(0.0);
    }
    if p == 0.0 || p == 1.0 {
        return Err(invalid("p", format!("D({q} || {p}) is infinite")));
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    Ok((term(q, p) + term(1.0 - q, 1.0 - p)).max(0.0))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    if k < 64 {
        // Short products are more accurate than lgamma differences.
        (0..k)
            .map(|j| ((n - j) as f64 / (j + 1) as f64).ln())
            .sum()
    } else {
        libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
    }
}

fn ln_binomial_pmf(n: u64, p: f64, i: u64) -> f64 {
    ln_choose(n, i) + i as f64 * p.ln() + (n - i) as f64 * (-p).ln_1p()
}

/// `Pr[Binomial(n, p) <= k]`, summed in log-space from the boundary term
/// outward so that no term underflows before its neighbours.
pub fn binomial_cdf(n: u64, p: f64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::OutOfRange { index: k, len: n });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("p", format!("{p} is not a probability")));
    }
    if k == n || p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    let odds = p / (1.0 - p);
    if (k as f64) < n as f64 * p {
        // Lower tail: pmf(i-1) / pmf(i) = i / ((n-i+1) odds), decreasing below the mode.
        let mut rel = 1.0;
        let mut term = 1.0;
        let mut i = k;
        while i > 0 {
            term *= i as f64 / ((n - i + 1) as f64 * odds);
            rel += term;
            if term < rel * 1e-17 {
                break;
            }
            i -= 1;
        }
        Ok((ln_binomial_pmf(n, p, k) + rel.ln()).exp().min(1.0))
    } else {
        // 1 - upper tail from k+1; pmf(i+1) / pmf(i) = (n-i) odds / (i+1).
        let start = k + 1;
        let mut rel = 1.0;
        let mut term = 1.0;
        let mut i = start;
        while i < n {
            term *= (n - i) as f64 * odds / (i + 1) as f64;
            rel += term;
            if term < rel * 1e-17 {
                break;
            }
            i += 1;
        }
        let upper = (ln_binomial_pmf(n, p, start) + rel.ln()).exp();
        Ok((1.0 - upper).clamp(0.0, 1.0))
    }
}

/// Alias matching the oracle's role: exact `Pr[Binomial(n,p) <= k]`.
pub fn binomial_tail_exact(n: u64, p: f64, k: u64) -> Result<f64> {
    binomial_cdf(n, p, k)
}

/// Threshold index `floor(q n)` with a guard against representation error.
pub fn mean_threshold(n: u64, q: f64) -> u64 {
    ((q * n as f64) + 1e-9).floor().max(0.0) as u64
}

/// Hypotheses of the anti-concentration lower bound for a margin constant c.
pub fn check_anti_concentration_domain(n: u64, p: f64, q: f64, c: f64) -> Result<()> {
    if !(c > 0.0 && c < 0.5) {
        return Err(invalid("c", format!("{c} is not in (0, 1/2)")));
    }
    if (n as f64) < 1.0 / c {
        return Err(invalid("n", format!("{n} < 1/c = {}", 1.0 / c)));
    }
    if !(p > c && p < 1.0 - c) {
        return Err(invalid("p", format!("{p} is not in (c, 1-c)")));
    }
    if !(q > c / 8.0 && q < p) {
        return Err(invalid("q", format!("{q} is not in (c/8, p)")));
    }
    Ok(())
}

/// `lead * exp(-rate * n (p-q)^2)` clamped to [0, 1].
pub fn anti_concentration_floor(n: u64, p: f64, q: f64, c: f64, lead: f64, rate: f64) -> Result<f64> {
    check_anti_concentration_domain(n, p, q, c)?;
    Ok((lead * (-rate * n as f64 * (p - q).powi(2)).exp()).clamp(0.0, 1.0))
}

/// Fitted constants of the anti-concentration floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AntiConcentrationFit {
    pub lead: f64,
    pub rate: f64,
    /// `min(tail / floor)` over the grid; at least 1 when the fit is valid.
    pub min_ratio: f64,
    pub points: usize,
}

/// Fits `ln tail ~ ln lead - rate * n (p-q)^2` by least squares, then lowers
/// `lead` to the envelope so the floor holds at every grid point.
pub fn fit_anti_concentration(grid: &[(u64, f64, f64)], c: f64) -> Result<AntiConcentrationFit> {
    let mut xs = Vec::with_capacity(grid.len());
    let mut ys = Vec::with_capacity(grid.len());
    for &(n, p, q) in grid {
        check_anti_concentration_domain(n, p, q, c)?;
        let tail = binomial_cdf(n, p, mean_threshold(n, q))?;
        xs.push(n as f64 * (p - q).powi(2));
        ys.push(tail.ln());
    }
    let fit = linear_fit(&xs, &ys).ok_or_else(|| invalid("grid", "degenerate fit grid"))?;
    let rate = (-fit.slope).max(0.0);
    let lead = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y + rate * x).exp())
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    let min_ratio = grid
        .iter()
        .map(|&(n, p, q)| {
            let tail = binomial_cdf(n, p, mean_threshold(n, q)).unwrap_or(0.0);
            let floor = anti_concentration_floor(n, p, q, c, lead, rate).unwrap_or(1.0);
            tail / floor
        })
        .fold(f64::INFINITY, f64::min);
    Ok(AntiConcentrationFit {
        lead,
        rate,
        min_ratio,
        points: grid.len(),
    })
}

/// Root `u` of `p u^(1-q) + (1-p) u^(-q) = 1` on (0, 1), with the
/// certificate quantities of the bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleBase {
    pub u: f64,
    /// Stationary point `(1-p) q / (p (1-q))`; the root satisfies `u <= x0`.
    pub x0: f64,
    /// `|f(u) - 1|`.
    pub residual: f64,
}

fn u_equation(p: f64, q: f64, x: f64) -> f64 {
    p * x.powf(1.0 - q) + (1.0 - p) * x.powf(-q)
}

/// Exponential-martingale base for Bernoulli(p) steps centred at q.
pub fn martingale_u(p: f64, q: f64) -> Result<MartingaleBase> {
    if !(0.0 < q && q < p && p < 1.0) {
        return Err(invalid("p, q", format!("need 0 < q < p < 1, got p = {p}, q = {q}")));
    }
    let x0 = (1.0 - p) * q / (p * (1.0 - q));
    // f decreases on (0, x0) from +inf to f(x0) < f(1) = 1, so the root is
    // bracketed by (tiny, x0].
    let mut lo = f64::MIN_POSITIVE;
    let mut hi = x0;
    let g = |x: f64| u_equation(p, q, x) - 1.0;
    if !(g(lo) > 0.0 && g(hi) <= 0.0) {
        return Err(Error::NotBracketed { p, q });
    }
    for _ in 0..2000 {
        // Geometric midpoints while the bracket spans orders of magnitude.
        let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = if g(lo).abs() < g(hi).abs() { lo } else { hi };
    let residual = g(u).abs();
    debug_assert!(u <= x0);
    Ok(MartingaleBase { u, x0, residual })
}

/// Lower bound `p (1 - u^(1-q))` on `Pr[for all n >= 1: prefix mean >= q]`.
/// At `q = 0` the root degenerates to its limit `u = 0` and the floor is `p`.
pub fn uniform_prefix_floor(p: f64, q: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(invalid("p", format!("{p} must be interior")));
    }
    if !(0.0 <= q && q < p) {
        return Err(invalid("q", format!("need 0 <= q < p, got {q}")));
    }
    if q == 0.0 {
        return Ok(p);
    }
    let base = martingale_u(p, q)?;
    Ok(p * (1.0 - base.u.powf(1.0 - q)))
}

/// Frequency of `{for all n <= horizon: prefix mean >= q}` over simulated
/// Bernoulli(p) sequences.
///
/// A run is also counted as a success once its centred sum reaches a level
/// `L` with `u^L <= 1e-12`: by Ville's inequality the chance of a later
/// violation is below that, so the count can only be inflated, never
/// deflated. Finite horizons inflate it as well.
pub fn simulate_uniform_prefix_event(
    p: f64,
    q: f64,
    runs: u64,
    horizon: u64,
    seed: u64,
    level: f64,
) -> Result<EstimateWithCI> {
    let safe_level = if q > 0.0 {
        let u = martingale_u(p, q)?.u;
        (1e-12f64).ln() / u.ln()
    } else {
        0.0
    };
    let mut successes = 0u64;
    for run in 0..runs {
        let mut rng = stream_rng(seed, run, Lane::Agents);
        let mut centred = 0.0f64;
        let mut ok = true;
        for _ in 0..horizon {
            let x = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            centred += x - q;
            if centred < -1e-12 {
                ok = false;
                break;
            }
            if centred >= safe_level {
                break;
            }
        }
        successes += ok as u64;
    }
    Ok(EstimateWithCI::proportion(successes, runs, level))
}

/// Exceedance frequency of `max_n Z_n >= x` for `Z_n = u^(sum (X_i - q))`
/// over `paths` simulated sequences of length `horizon`.
pub fn ville_check(p: f64, q: f64, x: f64, paths: u64, horizon: u64, seed: u64, level: f64) -> Result<EstimateWithCI> {
    if !(x > 0.0) {
        return Err(invalid("x", format!("{x} must be positive")));
    }
    let u = martingale_u(p, q)?.u;
    // Z_n >= x  <=>  sum (X_i - q) <= ln x / ln u (ln u < 0).
    let threshold = x.ln() / u.ln();
    let mut hits = 0u64;
    for path in 0..paths {
        if threshold >= 0.0 {
            // Z_0 = 1 >= x already.
            hits += 1;
            continue;
        }
        let mut rng = stream_rng(seed, path, Lane::Agents);
        let mut centred = 0.0f64;
        for _ in 0..horizon {
            centred += if rng.random::<f64>() < p { 1.0 - q } else { -q };
            if centred <= threshold + 1e-12 {
                hits += 1;
                break;
            }
        }
    }
    Ok(EstimateWithCI::proportion(hits, paths, level))
}

/// Sample mean of `Z_n` at fixed `n`, with the exact standard error implied
/// by `E[Z_n^2] = (p u^(2-2q) + (1-p) u^(-2q))^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleMean {
    pub n: u64,
    pub mean: f64,
    pub std_error: f64,
}

pub fn martingale_mean(p: f64, q: f64, n: u64, paths: u64, seed: u64) -> Result<MartingaleMean> {
    let u = martingale_u(p, q)?.u;
    let up = u.powf(1.0 - q);
    let down = u.powf(-q);
    let mut sum = 0.0;
    for path in 0..paths {
        let mut rng = stream_rng(seed, path, Lane::Agents);
        let ones = (0..n).filter(|_| rng.random::<f64>() < p).count() as i32;
        sum += up.powi(ones) * down.powi(n as i32 - ones);
    }
    let second = (p * up * up + (1.0 - p) * down * down).powf(n as f64);
    Ok(MartingaleMean {
        n,
        mean: sum / paths as f64,
        std_error: ((second - 1.0).max(0.0) / paths as f64).sqrt(),
    })
}

/// Frequency of `exists i <= n: |sum_{j<=i} (X_j - mu)| > x` next to the
/// bound `2 exp(-2 x^2 / n)`.
pub fn maximal_deviation_frequency(mu: f64, n: u64, x: f64, runs: u64, seed: u64, level: f64) -> (EstimateWithCI, f64) {
    let mut hits = 0u64;
    for run in 0..runs {
        let mut rng = stream_rng(seed, run, Lane::Agents);
        let mut s = 0.0f64;
        for _ in 0..n {
            s += if rng.random::<f64>() < mu { 1.0 - mu } else { -mu };
            if s.abs() > x {
                hits += 1;
                break;
            }
        }
    }
    (
        EstimateWithCI::proportion(hits, runs, level),
        (2.0 * (-2.0 * x * x / n as f64).exp()).min(1.0),
    )
}

/// Outcome of the two clean events on a reward tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CleanEvents {
    /// Every prefix UCB of arm 1 is at least `mu1 - gap/2`.
    pub clean1: bool,
    /// Every prefix UCB of arm 2 of length at least `64 eta / gap^2` is at most `mu2 + gap/4`.
    pub clean2: bool,
}

impl CleanEvents {
    pub fn both(&self) -> bool {
        self.clean1 && self.clean2
    }
}

/// First prefix length covered by the second clean event.
pub fn clean2_start(eta: f64, delta: f64) -> u64 {
    ((64.0 * eta / (delta * delta)) - 1e-9).ceil().max(1.0) as u64
}

/// Single incremental scan over both tape rows. `eta1` is the optimism
/// level of the first event and `eta2` that of the second.
pub fn clean_events(tape: &RewardTape, mu1: f64, mu2: f64, eta1: f64, eta2: f64) -> Result<CleanEvents> {
    let delta = mu1 - mu2;
    if !(delta > 0.0) {
        return Err(Error::InvalidInstance("clean events need mu1 > mu2".into()));
    }
    let mut sum = 0u64;
    let mut clean1 = true;
    for (i, &b) in tape.row(Arm::One).iter().enumerate() {
        sum += b as u64;
        let n = (i + 1) as f64;
        let ucb = (sum as f64 / n + (eta1 / n).sqrt()).min(1.0);
        if ucb < mu1 - delta / 2.0 {
            clean1 = false;
            break;
        }
    }
    let start = clean2_start(eta2, delta);
    let mut sum = 0u64;
    let mut clean2 = true;
    for (i, &b) in tape.row(Arm::Two).iter().enumerate() {
        sum += b as u64;
        let n = (i + 1) as u64;
        if n < start {
            continue;
        }
        let nf = n as f64;
        let ucb = (sum as f64 / nf + (eta2 / nf).sqrt()).min(1.0);
        if ucb > mu2 + delta / 4.0 {
            clean2 = false;
            break;
        }
    }
    Ok(CleanEvents { clean1, clean2 })
}

/// Clean events with one confidence level for both arms.
pub fn clean_event_check(tape: &RewardTape, instance: &Instance, eta: f64) -> Result<CleanEvents> {
    clean_events(tape, instance.mu1, instance.mu2, eta, eta)
}

/// What a bound shape bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    Probability,
    Regret,
}

/// One named variable in the exponent, multiplied by a free constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentTerm {
    pub variable: &'static str,
    pub value: f64,
    pub coefficient: f64,
}

/// `lead * (prefactor * exp(-sum coef_i * value_i) + additive)`, clamped to
/// `[0, cap]`. All constants default to 1 and are meant to be fitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundShape {
    pub name: &'static str,
    pub kind: BoundKind,
    pub leading_coefficient: f64,
    pub prefactor: f64,
    pub exponent: Vec<ExponentTerm>,
    pub additive: f64,
    pub cap: f64,
}

impl BoundShape {
    fn probability(name: &'static str, prefactor: f64, exponent: Vec<(&'static str, f64)>) -> Self {
        BoundShape {
            name,
            kind: BoundKind::Probability,
            leading_coefficient: 1.0,
            prefactor,
            exponent: exponent
                .into_iter()
                .map(|(variable, value)| ExponentTerm {
                    variable,
                    value,
                    coefficient: 1.0,
                })
                .collect(),
            additive: 0.0,
            cap: 1.0,
        }
    }

    pub fn evaluate(&self) -> f64 {
        let e: f64 = self.exponent.iter().map(|t| t.coefficient * t.value).sum();
        let raw = self.leading_coefficient * (self.prefactor * (-e).exp() + self.additive);
        if raw.is_nan() {
            return 0.0;
        }
        raw.clamp(0.0, self.cap)
    }

    /// Copy with new constants; `coefficients` pairs with `exponent` in order.
    pub fn with_constants(&self, lead: f64, coefficients: &[f64]) -> Self {
        let mut out = self.clone();
        out.leading_coefficient = lead;
        for (t, &c) in out.exponent.iter_mut().zip(coefficients) {
            t.coefficient = c;
        }
        out
    }
}

/// `Delta (1 + ln(1/Delta))`, continuously extended by 0 at `Delta = 0`.
pub fn gap_log_term(delta: f64) -> f64 {
    if delta <= 0.0 {
        0.0
    } else {
        delta * (1.0 + (1.0 / delta).ln())
    }
}

/// `ceil(64 eta / c^2 + 1/c)`.
pub fn n_star(eta: f64, c: f64) -> Result<u64> {
    if !(c > 0.0 && c < 0.5) {
        return Err(invalid("c", format!("{c} is not in (0, 1/2)")));
    }
    Ok((64.0 * eta / (c * c) + 1.0 / c - 1e-9).ceil() as u64)
}

/// All theorem-shaped bounds for one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremShapes {
    pub assumptions: AssumptionReport,
    /// Failure floor for arbitrary eta-confident agents.
    pub confident: BoundShape,
    /// Same, small-gap form.
    pub confident_small_gap: BoundShape,
    /// Unbiased agents (also the pessimistic-agent floor).
    pub unbiased: BoundShape,
    /// Small-N0 floor `c^(2 N*)`; present when a margin constant is set.
    pub small_n0: Option<BoundShape>,
    pub n_star: Option<u64>,
    /// Failure threshold `max(0, N* - N0)` of the small-N0 floor.
    pub small_n0_threshold: Option<u64>,
    /// Regret upper bounds with `Phi = eta`, `eta_max`, `eta_max / q`.
    pub regret_optimistic: BoundShape,
    pub regret_interval: BoundShape,
    pub regret_recurring: BoundShape,
}

pub fn theorem_shapes(instance: &Instance, eta: f64, eta_max: f64, q: f64) -> Result<TheoremShapes> {
    instance.validate()?;
    if !(eta >= 0.0 && eta_max >= eta) {
        return Err(invalid("eta_max", format!("need 0 <= eta <= eta_max, got {eta}, {eta_max}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid("q", format!("{q} is not in (0, 1]")));
    }
    let delta = instance.gap();
    let n0 = instance.n0 as f64;
    let t = instance.horizon as f64;
    let width = (eta / n0).sqrt();

    let confident = BoundShape::probability(
        "confident",
        delta + width,
        vec![("eta", eta), ("n0_gap_sq", n0 * delta * delta)],
    );
    let confident_small_gap = BoundShape::probability("confident_small_gap", delta + width, vec![("eta", eta)]);
    let unbiased = BoundShape::probability("unbiased", delta, vec![("n0_gap_sq", n0 * delta * delta)]);

    let (small_n0, n_star_value, threshold) = if instance.margin_c > 0.0 {
        let c = instance.margin_c;
        let ns = n_star(eta, c)?;
        let mut shape = BoundShape::probability("small_n0", 1.0, vec![]);
        shape.prefactor = c.powf(2.0 * ns as f64);
        (Some(shape), Some(ns), Some(ns.saturating_sub(instance.n0)))
    } else {
        (None, None, None)
    };

    let regret = |name: &'static str, phi: f64| BoundShape {
        name,
        kind: BoundKind::Regret,
        leading_coefficient: 1.0,
        prefactor: t * gap_log_term(delta),
        exponent: vec![ExponentTerm {
            variable: "eta",
            value: eta,
            coefficient: 1.0,
        }],
        additive: if delta > 0.0 { phi / delta } else { 0.0 },
        cap: delta * t,
    };

    Ok(TheoremShapes {
        assumptions: instance.assumptions(eta),
        confident,
        confident_small_gap,
        unbiased,
        small_n0,
        n_star: n_star_value,
        small_n0_threshold: threshold,
        regret_optimistic: regret("regret_optimistic", eta),
        regret_interval: regret("regret_interval", eta_max),
        regret_recurring: regret("regret_recurring", eta_max / q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_binomial_cdf(n: u64, p: f64, k: u64) -> f64 {
        // Pascal-triangle coefficients in f64, exact for the small n used.
        let mut row = vec![1.0f64];
        for _ in 0..n {
            let mut next = vec![1.0; row.len() + 1];
            for i in 1..row.len() {
                next[i] = row[i - 1] + row[i];
            }
            row = next;
        }
        (0..=k)
            .map(|i| row[i as usize] * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32))
            .sum()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_bernoulli(0.3, 0.3).unwrap(), 0.0);
        // 0.25 ln 0.5 + 0.75 ln 1.5
        assert!((kl_bernoulli(0.25, 0.5).unwrap() - 0.130_812_035_941_136_97).abs() < 1e-15);
        assert!((kl_bernoulli(0.0, 0.5).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(kl_bernoulli(0.3, 0.0).is_err());
        assert!(kl_bernoulli(0.3, 1.0).is_err());
    }

    #[test]
    fn pinsker_and_reverse_pinsker_on_grid() {
        for i in 0..=60 {
            let p = 0.2 + 0.6 * i as f64 / 60.0;
            for j in 1..100 {
                let q = j as f64 / 100.0;
                let d = kl_bernoulli(q, p).unwrap();
                assert!(d >= 2.0 * (p - q).powi(2) - 1e-15, "pinsker p={p} q={q}");
                assert!(d <= 2.0 * (p - q).powi(2) / p.min(1.0 - p) + 1e-15, "reverse p={p} q={q}");
            }
        }
    }

    #[test]
    fn binomial_examples() {
        assert_eq!(binomial_cdf(4, 0.5, 4).unwrap(), 1.0);
        assert!((binomial_cdf(4, 0.5, 1).unwrap() - 0.3125).abs() < 1e-15);
        assert!(binomial_cdf(4, 0.5, 5).is_err());
        assert_eq!(binomial_cdf(10, 0.0, 0).unwrap(), 1.0);
        assert_eq!(binomial_cdf(10, 1.0, 9).unwrap(), 0.0);
    }

    #[test]
    fn binomial_matches_pascal_oracle() {
        for n in [1u64, 2, 7, 20, 50] {
            for &p in &[0.01, 0.3, 0.5, 0.77, 0.99] {
                for k in 0..=n {
                    let a = binomial_cdf(n, p, k).unwrap();
                    let b = brute_binomial_cdf(n, p, k).min(1.0);
                    assert!((a - b).abs() < 1e-12, "n={n} p={p} k={k}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn binomial_far_tail_stays_positive() {
        let v = binomial_cdf(1_000_000, 0.5, 400_000).unwrap();
        assert!(v > 0.0 && v < 1e-300 || v == 0.0);
        let w = binomial_cdf(1_000_000, 0.3, 299_000).unwrap();
        assert!(w > 0.01 && w < 0.5, "{w}");
    }

    #[test]
    fn binomial_matches_sampling() {
        let exact = binomial_cdf(100, 0.3, 20).unwrap();
        let draws = 200_000u64;
        let mut rng = stream_rng(3, 0, Lane::Agents);
        let hits = (0..draws)
            .filter(|_| (0..100).filter(|_| rng.random::<f64>() < 0.3).count() <= 20)
            .count() as f64;
        let freq = hits / draws as f64;
        let sigma = (exact * (1.0 - exact) / draws as f64).sqrt();
        assert!((freq - exact).abs() <= 4.0 * sigma, "{freq} vs {exact}");
    }

    #[test]
    fn anti_concentration_fit_holds_on_grid() {
        let c = 0.25;
        let mut grid = Vec::new();
        for n in [10u64, 20, 50, 100, 200, 500, 1000] {
            for p in [0.3, 0.4, 0.5, 0.6, 0.7] {
                for gap in [0.02, 0.05, 0.1, 0.15] {
                    grid.push((n, p, p - gap));
                }
            }
        }
        let fit = fit_anti_concentration(&grid, c).unwrap();
        assert!(fit.lead > 0.0 && fit.rate > 0.0);
        assert!(fit.min_ratio >= 1.0 - 1e-9, "{fit:?}");
        // q -> p: floor tends to the leading constant.
        let near = anti_concentration_floor(100, 0.5, 0.5 - 1e-9, c, fit.lead, fit.rate).unwrap();
        assert!((near - fit.lead).abs() < 1e-9);
        let a = anti_concentration_floor(100, 0.5, 0.4, c, fit.lead, fit.rate).unwrap();
        let b = anti_concentration_floor(200, 0.5, 0.4, c, fit.lead, fit.rate).unwrap();
        assert!(b <= a);
        assert!(anti_concentration_floor(2, 0.5, 0.4, c, 1.0, 1.0).is_err());
        assert!(anti_concentration_floor(10, 0.5, 0.01, c, 1.0, 1.0).is_err());
    }

    #[test]
    fn martingale_u_examples() {
        let base = martingale_u(0.5, 0.25).unwrap();
        assert!(base.residual <= 1e-12);
        assert!((base.x0 - 1.0 / 3.0).abs() < 1e-15);
        assert!(base.u > 0.0 && base.u <= base.x0);
        assert!(martingale_u(0.5, 0.5).is_err());
        assert!(martingale_u(0.5, 0.0).is_err());
    }

    #[test]
    fn martingale_u_grid_and_drift_bound() {
        for i in 1..10 {
            let p = 0.2 + 0.6 * i as f64 / 10.0;
            for j in 1..=10 {
                let q = p * j as f64 / 11.0;
                let b = martingale_u(p, q).unwrap();
                assert!(b.residual <= 1e-12, "p={p} q={q} r={}", b.residual);
                assert!(0.0 < b.u && b.u < 1.0 && b.u <= b.x0);
                assert!(b.x0.powf(1.0 - q) <= 1.0 - p + q + 1e-15);
                assert!(p * (1.0 - b.u.powf(1.0 - q)) >= p * (p - q) - 1e-15);
            }
        }
    }

    #[test]
    fn uniform_prefix_floor_basics() {
        assert_eq!(uniform_prefix_floor(0.6, 0.0).unwrap(), 0.6);
        for (p, q) in [(0.6, 0.3), (0.5, 0.1), (0.8, 0.7)] {
            let f = uniform_prefix_floor(p, q).unwrap();
            assert!(f > 0.0 && f <= p);
        }
        // q = 0 makes the event certain.
        let sim = simulate_uniform_prefix_event(0.6, 0.0, 1000, 100, 1, 0.99).unwrap();
        assert_eq!(sim.point, 1.0);
    }

    #[test]
    fn uniform_prefix_floor_below_simulation() {
        let floor = uniform_prefix_floor(0.6, 0.3).unwrap();
        let sim = simulate_uniform_prefix_event(0.6, 0.3, 20_000, 100_000, 9, 0.99).unwrap();
        assert!(floor <= sim.point + 3.0 * sim.std_error, "{floor} vs {sim:?}");
    }

    #[test]
    fn ville_and_martingale_mean() {
        let v = ville_check(0.6, 0.3, 1.0, 100, 50, 1, 0.99).unwrap();
        assert_eq!(v.point, 1.0);
        let v = ville_check(0.6, 0.3, 10.0, 20_000, 500, 2, 0.99).unwrap();
        assert!(v.point <= 0.1 + 3.0 * v.std_error, "{v:?}");
        let m = martingale_mean(0.6, 0.3, 10, 20_000, 5).unwrap();
        assert!((m.mean - 1.0).abs() <= 4.0 * m.std_error, "{m:?}");
    }

    #[test]
    fn hoeffding_maximal_inequality_grid() {
        for (k, &(mu, n, x)) in [(0.5, 100u64, 15.0), (0.3, 200, 20.0), (0.8, 50, 8.0)].iter().enumerate() {
            let (freq, bound) = maximal_deviation_frequency(mu, n, x, 20_000, k as u64, 0.99);
            assert!(freq.point <= bound + 3.0 * freq.std_error, "{mu} {n} {x}: {freq:?} vs {bound}");
        }
    }

    #[test]
    fn clean_event_examples() {
        let inst = Instance::new(0.6, 0.4, 1, 9).unwrap();
        let tape = RewardTape::from_rows(vec![1; 10], vec![1; 10]).unwrap();
        let ev = clean_event_check(&tape, &inst, 0.0).unwrap();
        assert!(ev.clean1);
        assert!(!ev.clean2);
        // 64 eta / gap^2 = 1600 * eta beyond the 10 entries: vacuous.
        let ev = clean_event_check(&tape, &inst, 1.0).unwrap();
        assert!(ev.clean2);
    }

    fn clean_events_direct(tape: &RewardTape, inst: &Instance, eta: f64) -> CleanEvents {
        use crate::model::tape_prefix_bounds;
        let delta = inst.mu1 - inst.mu2;
        let len = tape.len(Arm::One) as u64;
        let clean1 = (1..=len).all(|i| tape_prefix_bounds(tape, Arm::One, i, eta).unwrap().ucb >= inst.mu1 - delta / 2.0);
        let clean2 = (1..=len)
            .filter(|&i| i as f64 >= 64.0 * eta / (delta * delta) - 1e-9)
            .all(|i| tape_prefix_bounds(tape, Arm::Two, i, eta).unwrap().ucb <= inst.mu2 + delta / 4.0);
        CleanEvents { clean1, clean2 }
    }

    #[test]
    fn clean_scan_matches_direct_recomputation() {
        let inst = Instance::new(0.7, 0.3, 5, 300).unwrap();
        for seed in 0..40 {
            let tape = RewardTape::generate(&inst, seed);
            for eta in [0.0, 0.05, 0.2, 0.5] {
                assert_eq!(clean_event_check(&tape, &inst, eta).unwrap(), clean_events_direct(&tape, &inst, eta));
            }
        }
    }

    #[test]
    fn clean2_failure_rate_drops_with_eta() {
        let inst = Instance::new(0.6, 0.4, 1, 20_000).unwrap();
        let fails = |eta: f64| {
            (0..2_000u64)
                .filter(|&s| !clean_event_check(&RewardTape::generate(&inst, s), &inst, eta).unwrap().clean2)
                .count()
        };
        let (f1, f4) = (fails(1.0), fails(4.0));
        assert!(f4 < f1, "{f4} !< {f1}");
    }

    #[test]
    fn shape_examples() {
        let inst = Instance::new(0.5, 0.5, 10, 100).unwrap();
        let s = theorem_shapes(&inst, 1.0, 2.0, 0.5).unwrap();
        assert_eq!(gap_log_term(0.0), 0.0);
        assert_eq!(s.regret_optimistic.evaluate(), 0.0);

        let inst = Instance::new(0.6, 0.4, 10, 100).unwrap();
        let s = theorem_shapes(&inst, 0.0, 0.0, 1.0).unwrap();
        assert!((s.confident.evaluate() - s.unbiased.with_constants(1.0, &[1.0]).evaluate()).abs() < 1e-15);

        assert_eq!(n_star(1.0, 0.25).unwrap(), 1028);
        let inst = Instance::new(0.55, 0.45, 1, 100).unwrap().with_margin(0.25).unwrap();
        let s = theorem_shapes(&inst, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(s.n_star, Some(4));
        assert_eq!(s.small_n0_threshold, Some(3));
        assert!((s.small_n0.unwrap().evaluate() - 0.25f64.powi(8)).abs() < 1e-18);
        assert_eq!(s.assumptions.means_within_margin, Some(true));
    }

    proptest! {
        #[test]
        fn shapes_are_clamped(eta in 0.0f64..50.0, gap in 0.0f64..0.9, lead in 0.0f64..1e6) {
            let inst = Instance::new(0.5 + gap / 2.0, 0.5 - gap / 2.0, 3, 1000).unwrap();
            let s = theorem_shapes(&inst, eta, eta + 1.0, 0.3).unwrap();
            for shape in [&s.confident, &s.confident_small_gap, &s.unbiased] {
                let v = shape.with_constants(lead, &[0.1, 0.1]).evaluate();
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let r = s.regret_recurring.with_constants(lead, &[0.1]).evaluate();
            prop_assert!(r >= 0.0 && r <= gap * 1000.0 + 1e-9);
        }

        #[test]
        fn binomial_monotone_in_k(n in 1u64..400, p in 0.01f64..0.99) {
            let mut prev = 0.0;
            for k in 0..=n {
                let v = binomial_cdf(n, p, k).unwrap();
                prop_assert!(v + 1e-12 >= prev);
                prev = v;
            }
        }

        #[test]
        fn binomial_diagonal_nonincreasing(p in 0.2f64..0.8, tenths in 1u64..8) {
            // q n stays an integer along n = 10 m, so the diagonal has no floor jitter.
            let q = tenths as f64 / 10.0;
            prop_assume!(q < p);
            let mut prev = 1.0;
            for m in 1u64..60 {
                let n = 10 * m;
                let v = binomial_cdf(n, p, mean_threshold(n, q)).unwrap();
                prop_assert!(v <= prev + 1e-12, "n={} v={} prev={}", n, v, prev);
                prev = v;
            }
        }
    }
}
