//! Property bodies and input strategies shared by the property tests and the
//! acceptance report.

use cmhe::model::baseline::breslow_update;
use cmhe::model::likelihood::{e_step, predict_survival, Posteriors};
use cmhe::network::{log_softmax, softmax};
use cmhe::phenotype::{membership, threshold_for_size};
use cmhe::{fit, FitConfig, SurvivalDataset, SurvivalRecord};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::Rng;

use super::checks::planted_baselines;
use super::*;

pub const CASES: u32 = 128;

/// Slack for rounding inside one cubic segment.
const ROUNDING: f64 = 1e-14;

pub fn config() -> ProptestConfig {
    ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() }
}

/// Deterministic runner for reporting outside the test harness.
pub fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases: CASES, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

pub fn model_shape() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..=4, 1usize..=4)
}

pub fn posterior_normalization((seed, k, m): (u64, usize, usize)) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let params = random_params(3, &[5], k, m, 2.0, &mut r);
    let rates: Vec<f64> = (0..k).map(|_| r.random_range(0.2..3.0)).collect();
    let b = planted_baselines(&rates);
    let batch = random_records(12, 3, &mut r);
    let post = e_step(&params, &b, &batch, &mut r).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for i in 0..batch.len() {
        for row in [&post.gamma[i], &post.zeta[i]] {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        prop_assert!(post.psi[i] < k && post.xi[i] < m);
    }
    Ok(())
}

/// Baselines refreshed by Breslow plus spline smoothing from random
/// assignments, then predictions at random times.
pub fn survival_monotone((seed, k, m): (u64, usize, usize)) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let params = random_params(2, &[], k, m, 1.0, &mut r);
    let n = 40;
    let records = random_records(n, 2, &mut r);
    let post = Posteriors::from_hard(
        (0..n).map(|_| r.random_range(0..k)).collect(),
        (0..n).map(|_| r.random_range(0..m)).collect(),
        k,
        m,
    )
    .unwrap();
    let b = breslow_update(&params, &records, &post, None, None).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mut times: Vec<f64> = (0..30).map(|_| r.random_range(0.0..4.0)).collect();
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    for c in 0..k {
        let mut prev = 1.0;
        for &t in &times {
            let s = b.survival(c, t);
            prop_assert!(s <= prev + ROUNDING && s >= 1e-8 && s <= 1.0, "cluster {c} at {t}: {s} after {prev}");
            prev = s;
        }
        prop_assert_eq!(b.survival(c, 0.0), 1.0);
    }
    for rec in records.iter().take(5) {
        for treated in [false, true] {
            let s = predict_survival(&params, &b, &rec.x, treated, &times).unwrap();
            prop_assert_eq!(s[0], 1.0);
            prop_assert!(s.iter().all(|v| *v > 0.0 && *v <= 1.0));
            prop_assert!(s.windows(2).all(|w| w[1] <= w[0] + ROUNDING));
        }
    }
    Ok(())
}

pub fn logits_and_shift() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (prop::collection::vec(-30.0f64..30.0, 1..8), -500.0f64..500.0)
}

pub fn softmax_shift((v, c): (Vec<f64>, f64)) -> Result<(), TestCaseError> {
    let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
    let (a, b) = (softmax(&v), softmax(&shifted));
    prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (x, y) in a.iter().zip(&b) {
        prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
    for (x, y) in log_softmax(&v).iter().zip(log_softmax(&shifted)) {
        prop_assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
    Ok(())
}

fn tiny_dataset(seed: u64) -> SurvivalDataset {
    let mut r = rng(seed);
    let records: Vec<SurvivalRecord> = random_records(40, 3, &mut r);
    SurvivalDataset::new(records, vec!["a".into(), "b".into(), "c".into()]).unwrap()
}

pub fn fit_seeds() -> impl Strategy<Value = (u64, u64)> {
    (any::<u64>(), any::<u64>())
}

/// Two fits with identical inputs serialize to identical bytes, and the
/// file parses back to the same model.
pub fn deterministic_model_file((data_seed, fit_seed): (u64, u64)) -> Result<(), TestCaseError> {
    let data = tiny_dataset(data_seed);
    let cfg = FitConfig { k: 2, m: 2, hidden: vec![4], batch_size: 16, max_epochs: 3, seed: fit_seed, ..FitConfig::default() };
    let a = fit(&data, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let b = fit(&data, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let (ja, jb) = (a.to_json().unwrap(), b.to_json().unwrap());
    prop_assert_eq!(&ja, &jb);
    let back = cmhe::CmheModel::from_json(&ja).unwrap();
    prop_assert_eq!(back.to_json().unwrap(), ja);
    Ok(())
}

pub fn probs_and_fractions() -> impl Strategy<Value = (Vec<f64>, f64, f64)> {
    (
        prop::collection::vec(prop_oneof![0.0f64..=1.0, (0u8..=10).prop_map(|v| f64::from(v) / 10.0)], 1..200),
        0.001f64..=1.0,
        0.001f64..=1.0,
    )
}

/// Larger target fractions select supersets, and every selection holds at
/// least `ceil(f n)` samples unless all probabilities are zero.
pub fn threshold_monotone((p, f1, f2): (Vec<f64>, f64, f64)) -> Result<(), TestCaseError> {
    let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
    let small = membership(&p, threshold_for_size(&p, lo).unwrap());
    let large = membership(&p, threshold_for_size(&p, hi).unwrap());
    prop_assert!(small.iter().zip(&large).all(|(s, l)| !s || *l));
    let positive = p.iter().filter(|&&v| v > 0.0).count();
    for (f, sel) in [(lo, &small), (hi, &large)] {
        let want = ((f * p.len() as f64 - 1e-9).ceil() as usize).clamp(1, p.len());
        let got = sel.iter().filter(|&&s| s).count();
        prop_assert!(got >= want.min(positive), "fraction {f}: {got} selected, wanted {want}");
    }
    Ok(())
}
