//! Oracle comparisons shared by the oracle tests and the acceptance report.
//! Each returns the worst discrepancy seen, or a description of the failure.

use cmhe::metrics::{brier_score, concordance_td, integrated_brier, kaplan_meier, rmst, roc_auc};
use cmhe::model::baseline::{breslow, BaselineSurvival};
use cmhe::model::likelihood::{e_step, full_loglik, predict_survival, Posteriors};
use cmhe::model::objective::{partial_loglik_k, q_hat, q_hat_with_grad};
use cmhe::network::CmheParams;
use cmhe::SurvivalRecord;
use rand::Rng;

use super::*;

pub type Check = Result<f64, String>;

fn within(err: f64, tol: f64, what: &str) -> Check {
    if err <= tol {
        Ok(err)
    } else {
        Err(format!("{what}: error {err:e} exceeds {tol:e}"))
    }
}

pub fn planted_baselines(rates: &[f64]) -> BaselineSurvival {
    BaselineSurvival::new(rates.iter().map(|&r| exponential_baseline(r)).collect(), 0.0).unwrap()
}

/// Joint `P(Z=k|x) P(phi=m|x) P(t|k,m)` for every `(k, m)`, computed in
/// linear space from the gates, heads and baseline values.
pub fn joint_table(params: &CmheParams, b: &BaselineSurvival, r: &SurvivalRecord) -> Vec<Vec<f64>> {
    let out = params.forward(&r.x).unwrap();
    let pi = softmax_direct(&out.f_logits);
    let rho = softmax_direct(&out.g_logits);
    let a = if r.treated { 1.0 } else { 0.0 };
    (0..params.k())
        .map(|k| {
            (0..params.m())
                .map(|m| {
                    let mult = (out.h_values[k] + a * params.omega[m]).exp();
                    let s = b.survival(k, r.time);
                    let lik = if r.event {
                        (-b.derivative(k, r.time) * mult * s.powf(mult - 1.0)).max(1e-12)
                    } else {
                        s.powf(mult)
                    };
                    pi[k] * rho[m] * lik
                })
                .collect()
        })
        .collect()
}

/// Posteriors of a random `K = M = 2` model on `n <= 5` samples against the
/// enumeration of the four joint terms.
pub fn e_step_enumeration(seed: u64) -> Check {
    let mut r = rng(seed);
    let params = random_params(2, &[3], 2, 2, 1.0, &mut r);
    let b = planted_baselines(&[0.6, 1.7]);
    let n = r.random_range(3..=5);
    let batch = random_records(n, 2, &mut r);
    let post = e_step(&params, &b, &batch, &mut r).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (i, rec) in batch.iter().enumerate() {
        let t = joint_table(&params, &b, rec);
        let total: f64 = t.iter().flatten().sum();
        for k in 0..2 {
            worst = worst.max((post.gamma[i][k] - (t[k][0] + t[k][1]) / total).abs());
        }
        for m in 0..2 {
            worst = worst.max((post.zeta[i][m] - (t[0][m] + t[1][m]) / total).abs());
        }
    }
    within(worst, 1e-10, "e-step posteriors")
}

pub fn full_loglik_enumeration(seed: u64) -> Check {
    let mut r = rng(seed);
    let params = random_params(2, &[3], 2, 2, 1.0, &mut r);
    let b = planted_baselines(&[0.9, 0.4]);
    let batch = random_records(5, 2, &mut r);
    let expected: f64 = batch.iter().map(|rec| joint_table(&params, &b, rec).iter().flatten().sum::<f64>().ln()).sum();
    let got = full_loglik(&params, &b, &batch).map_err(|e| e.to_string())?;
    within((got - expected).abs(), 1e-10, "full log-likelihood")
}

/// Mixture prediction against the explicit double sum.
pub fn prediction_double_sum(seed: u64) -> Check {
    let mut r = rng(seed);
    let params = random_params(3, &[4], 3, 2, 1.0, &mut r);
    let b = planted_baselines(&[0.3, 1.0, 2.2]);
    let times = [0.0, 0.05, 0.4, 1.0, 2.5, 6.0];
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        let out = params.forward(&x).unwrap();
        let pi = softmax_direct(&out.f_logits);
        let rho = softmax_direct(&out.g_logits);
        for treated in [false, true] {
            let got = predict_survival(&params, &b, &x, treated, &times).map_err(|e| e.to_string())?;
            let a = if treated { 1.0 } else { 0.0 };
            for (ti, &t) in times.iter().enumerate() {
                let mut s = 0.0;
                for k in 0..3 {
                    for m in 0..2 {
                        s += pi[k] * rho[m] * b.survival(k, t).powf((out.h_values[k] + a * params.omega[m]).exp());
                    }
                }
                worst = worst.max((got[ti] - s).abs());
            }
        }
    }
    within(worst, 1e-12, "prediction double sum")
}

/// Nelson-Aalen increments for uncensored times (1, 2, 3), compared exactly.
pub fn nelson_aalen_hand() -> Check {
    let h = breslow(&[1.0, 2.0, 3.0], &[true, true, true], &[0.0; 3]).map_err(|e| e.to_string())?;
    if h.times != [1.0, 2.0, 3.0] || h.increments != [1.0 / 3.0, 0.5, 1.0] {
        return Err(format!("got times {:?} increments {:?}", h.times, h.increments));
    }
    Ok(0.0)
}

/// Breslow with covariates and ties against the quadratic reference.
pub fn breslow_reference_check(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = 30;
    let times: Vec<f64> = (0..n).map(|_| (r.random_range(0.1..5.0f64) * 4.0).round() / 4.0).collect();
    let events: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
    let eta: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let h = breslow(&times, &events, &eta).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..=60 {
        let t = i as f64 * 0.1;
        worst = worst.max((h.eval(t) - breslow_at(&times, &events, &eta, t)).abs());
    }
    within(worst, 1e-8, "breslow")
}

/// `ln PL` of a single-cluster model against the plain Cox partial likelihood.
pub fn partial_likelihood_reference(seed: u64) -> Check {
    let mut r = rng(seed);
    let params = random_params(3, &[4], 1, 1, 1.0, &mut r);
    let batch = random_records(20, 3, &mut r);
    let post = Posteriors::from_hard(vec![0; 20], vec![0; 20], 1, 1).unwrap();
    let got = partial_loglik_k(&params, &batch, &post, 0).map_err(|e| e.to_string())?;
    let eta: Vec<f64> = batch
        .iter()
        .map(|rec| params.forward(&rec.x).unwrap().h_values[0] + if rec.treated { params.omega[0] } else { 0.0 })
        .collect();
    let times: Vec<f64> = batch.iter().map(|x| x.time).collect();
    let events: Vec<bool> = batch.iter().map(|x| x.event).collect();
    within((got - cox_loglik(&times, &events, &eta)).abs(), 1e-8, "partial likelihood")
}

fn random_distribution(n: usize, r: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Every entry of the analytic gradient of `Q_hat` against central finite
/// differences (step 1e-5) on one random instance. Passes when
/// `|g - fd| <= 1e-4 max(|g|, |fd|) + 1e-7`.
pub fn gradient_instance(seed: u64) -> Check {
    let mut r = rng(seed);
    let d = r.random_range(2..=3);
    let hidden: Vec<usize> = match r.random_range(0..3) {
        0 => vec![],
        1 => vec![4],
        _ => vec![4, 3],
    };
    let k = r.random_range(1..=3);
    let m = r.random_range(1..=3);
    let n = r.random_range(6..=10);
    let params = random_params(d, &hidden, k, m, 0.8, &mut r);
    let batch = random_records(n, d, &mut r);
    let post = Posteriors {
        gamma: (0..n).map(|_| random_distribution(k, &mut r)).collect(),
        zeta: (0..n).map(|_| random_distribution(m, &mut r)).collect(),
        psi: (0..n).map(|_| r.random_range(0..k)).collect(),
        xi: (0..n).map(|_| r.random_range(0..m)).collect(),
    };
    let (_, grad) = q_hat_with_grad(&params, &batch, &post).map_err(|e| e.to_string())?;
    let analytic: Vec<(String, Vec<f64>)> = grad.blocks().into_iter().map(|(s, v)| (s, v.to_vec())).collect();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for (b, (name, g)) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.blocks_mut()[b][j] += delta;
                q_hat(&p, &batch, &post).unwrap()
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            let err = (g[j] - fd).abs();
            let tol = 1e-4 * g[j].abs().max(fd.abs()) + 1e-7;
            if err > tol {
                return Err(format!("seed {seed}, {name}[{j}]: analytic {} vs difference {fd}", g[j]));
            }
            worst = worst.max(err / (g[j].abs().max(fd.abs()) + 1e-3));
        }
    }
    Ok(worst)
}

pub fn gradient_suite(instances: u64) -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        worst = worst.max(gradient_instance(1000 + seed)?);
    }
    Ok(worst)
}

pub fn kaplan_meier_hand() -> Check {
    let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true, true, true]).map_err(|e| e.to_string())?;
    let want = [2.0 / 3.0, 1.0 / 3.0, 0.0];
    let worst = km.values.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if km.times != [1.0, 2.0, 3.0] {
        return Err(format!("drop times {:?}", km.times));
    }
    within(worst, 1e-15, "kaplan-meier")
}

fn censored_toy(n: usize, r: &mut impl Rng) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let times = (0..n).map(|_| (r.random_range(0.1..4.0f64) * 10.0).round() / 10.0).collect();
    let events = (0..n).map(|_| r.random_bool(0.6)).collect();
    let pred = (0..n).map(|_| (r.random_range(0.0..1.0f64) * 20.0).round() / 20.0).collect();
    (times, events, pred)
}

pub fn brier_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let (times, events, pred) = censored_toy(20, &mut r);
    let mut worst: f64 = 0.0;
    for t in [0.5, 1.0, 2.0, 3.0] {
        let got = brier_score(&pred, &times, &events, t).map_err(|e| e.to_string())?;
        worst = worst.max((got - brier_reference(&pred, &times, &events, t)).abs());
    }
    within(worst, 1e-10, "brier")
}

pub fn concordance_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let (times, events, pred) = censored_toy(50, &mut r);
    let mut worst: f64 = 0.0;
    for t in [1.0, 2.0, 3.5] {
        let got = concordance_td(&pred, &times, &events, t).map_err(|e| e.to_string())?;
        worst = worst.max((got - concordance_reference(&pred, &times, &events, t)).abs());
    }
    within(worst, 1e-10, "concordance")
}

pub fn integrated_brier_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let h: Vec<f64> = {
        let mut v: Vec<f64> = (0..5).map(|_| r.random_range(0.1..10.0)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let s: Vec<f64> = (0..5).map(|_| r.random_range(0.0..0.3)).collect();
    let t_max = h[4];
    let mut expected = 0.0;
    for j in 0..5 {
        expected += h[j] / t_max * s[j];
    }
    let got = integrated_brier(&h, &s).map_err(|e| e.to_string())?;
    within((got - expected).abs(), 1e-12, "integrated brier")
}

pub fn rmst_closed_forms() -> Check {
    let run = |f: &dyn Fn(f64) -> f64, t: f64| rmst(f, t, 100_000).map_err(|e| e.to_string());
    let e1 = (run(&|_| 1.0, 3.0)? - 3.0).abs();
    let e2 = (run(&|u: f64| (-u).exp(), 50.0)? - 1.0).abs();
    let e3 = (run(&|u: f64| (-u).exp(), 1.0)? - (1.0 - (-1f64).exp())).abs();
    within(e1.max(e2).max(e3), 1e-6, "rmst")
}

pub fn auc_oracle(seed: u64) -> Check {
    let mut r = rng(seed);
    let scores: Vec<f64> = (0..100).map(|_| (r.random_range(0.0..1.0f64) * 30.0).round()).collect();
    let labels: Vec<bool> = (0..100).map(|_| r.random_bool(0.4)).collect();
    let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
    within((got - auc_pairwise(&scores, &labels)).abs(), 1e-12, "auc")
}

/// Runs a check over several seeds and keeps the worst error.
pub fn over_seeds(seeds: std::ops::Range<u64>, f: impl Fn(u64) -> Check) -> Check {
    let mut worst: f64 = 0.0;
    for s in seeds {
        worst = worst.max(f(s)?);
    }
    Ok(worst)
}
