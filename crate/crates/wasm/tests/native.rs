use bandit_lab_wasm::{failure_curve_json, posterior_band_json, regret_paths_json};
use serde_json::Value;

#[test]
fn failure_curve_has_requested_points() {
    let v: Value = serde_json::from_str(&failure_curve_json("optimistic", 0.6, 0.4, 3, 200, 2.0, 5, 300, 1).unwrap()).unwrap();
    let pts = v.as_array().unwrap();
    assert_eq!(pts.len(), 5);
    assert_eq!(pts[0]["eta"], 0.0);
    assert_eq!(pts[4]["eta"], 2.0);
    for p in pts {
        let (lo, x, hi) = (p["ci_low"].as_f64().unwrap(), p["point"].as_f64().unwrap(), p["ci_high"].as_f64().unwrap());
        assert!(0.0 <= lo && lo <= x && x <= hi && hi <= 1.0);
    }
    // The curve is a plain Monte Carlo estimate: same seed, same numbers.
    assert_eq!(
        failure_curve_json("pessimistic", 0.6, 0.4, 3, 200, 1.0, 3, 100, 9).unwrap(),
        failure_curve_json("pessimistic", 0.6, 0.4, 3, 200, 1.0, 3, 100, 9).unwrap()
    );
    assert!(failure_curve_json("sceptical", 0.6, 0.4, 3, 200, 1.0, 3, 10, 1).is_err());
    assert!(failure_curve_json("optimistic", 1.6, 0.4, 3, 200, 1.0, 3, 10, 1).is_err());
}

#[test]
fn regret_paths_are_monotone_and_end_at_horizon() {
    let v: Value = serde_json::from_str(&regret_paths_json(0.6, 0.4, 1, 500, 2.0, 0.2, 50, 3).unwrap()).unwrap();
    let rounds: Vec<u64> = v["rounds"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(*rounds.last().unwrap(), 500);
    for key in ["optimist", "pessimist", "mixture"] {
        let ys: Vec<f64> = v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(ys.len(), rounds.len());
        assert!(ys.windows(2).all(|w| w[1] >= w[0]), "{key}");
        assert!(*ys.last().unwrap() <= 0.2 * 500.0 + 1e-9);
    }
    let flat: Value = serde_json::from_str(&regret_paths_json(0.5, 0.5, 1, 100, 1.0, 0.5, 10, 3).unwrap()).unwrap();
    assert!(flat["mixture"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap() == 0.0));
}

#[test]
fn posterior_band_brackets_the_mean() {
    let v: Value = serde_json::from_str(&posterior_band_json(7, 3, 1, 1, 0.05, 1.0).unwrap()).unwrap();
    assert_eq!(v["alpha"], 8);
    assert_eq!(v["beta"], 4);
    let mean = v["mean"].as_f64().unwrap();
    assert!((mean - 8.0 / 12.0).abs() < 1e-12);
    assert!(v["lower"].as_f64().unwrap() < mean && mean < v["upper"].as_f64().unwrap());
    let cdf = v["cdf"].as_array().unwrap();
    assert_eq!(cdf.first().unwrap()[1], 0.0);
    assert_eq!(cdf.last().unwrap()[1], 1.0);
    // Uniform prior, no data: the band is [zeta, 1 - zeta].
    let u: Value = serde_json::from_str(&posterior_band_json(0, 0, 1, 1, 0.1, 1.0).unwrap()).unwrap();
    assert!((u["lower"].as_f64().unwrap() - 0.1).abs() < 1e-9);
    assert!(posterior_band_json(1, 1, 0, 1, 0.1, 1.0).is_err());
    assert!(posterior_band_json(1, 1, 1, 1, 0.7, 1.0).is_err());
}
