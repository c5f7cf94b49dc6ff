//! Independent reference implementations used as test oracles. They are kept
//! deliberately naive (quadratic loops, no sorting tricks).

#![allow(dead_code)]

pub mod checks;
pub mod props;

use cmhe::network::CmheParams;
use cmhe::spline::MonotoneSpline;
use cmhe::SurvivalRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Breslow-tie Cox partial log-likelihood, one risk-set sum per event.
pub fn cox_loglik(times: &[f64], events: &[bool], eta: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        let risk: f64 = (0..times.len()).filter(|&j| times[j] >= times[i]).map(|j| eta[j].exp()).sum();
        total += eta[i] - risk.ln();
    }
    total
}

/// Plain Cox regression by damped Newton-Raphson on the Breslow partial
/// likelihood. Returns the coefficients.
pub fn cox_newton(x: &[Vec<f64>], times: &[f64], events: &[bool]) -> Vec<f64> {
    let d = x[0].len();
    let n = x.len();
    let mut beta = vec![0.0; d];
    let eta_of = |b: &[f64]| -> Vec<f64> { x.iter().map(|r| r.iter().zip(b).map(|(a, c)| a * c).sum()).collect() };
    for _ in 0..100 {
        let eta = eta_of(&beta);
        let mut grad = vec![0.0; d];
        let mut hess = vec![vec![0.0; d]; d];
        for i in 0..n {
            if !events[i] {
                continue;
            }
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; d];
            let mut s2 = vec![vec![0.0; d]; d];
            for j in (0..n).filter(|&j| times[j] >= times[i]) {
                let w = eta[j].exp();
                s0 += w;
                for a in 0..d {
                    s1[a] += w * x[j][a];
                    for b in 0..d {
                        s2[a][b] += w * x[j][a] * x[j][b];
                    }
                }
            }
            for a in 0..d {
                grad[a] += x[i][a] - s1[a] / s0;
                for b in 0..d {
                    hess[a][b] -= s2[a][b] / s0 - s1[a] * s1[b] / (s0 * s0);
                }
            }
        }
        let neg: Vec<Vec<f64>> = hess.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let step = solve(neg, grad.clone());
        let before = cox_loglik(times, events, &eta);
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            if cox_loglik(times, events, &eta_of(&trial)) >= before || scale < 1e-8 {
                beta = trial;
                break;
            }
            scale *= 0.5;
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) * scale < 1e-12 {
            break;
        }
    }
    beta
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Breslow cumulative hazard at `t`: sum over event times `s <= t` of
/// `d(s) / sum_{T_j >= s} exp(eta_j)`.
pub fn breslow_at(times: &[f64], events: &[bool], eta: &[f64], t: f64) -> f64 {
    let mut distinct: Vec<f64> = (0..times.len()).filter(|&i| events[i] && times[i] <= t).map(|i| times[i]).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    distinct
        .iter()
        .map(|&s| {
            let d = (0..times.len()).filter(|&i| events[i] && times[i] == s).count() as f64;
            let r: f64 = (0..times.len()).filter(|&j| times[j] >= s).map(|j| eta[j].exp()).sum();
            d / r
        })
        .sum()
}

/// Product-limit estimate over event times `s` with `s <= t` (or `s < t`
/// when `left` is set).
pub fn product_limit(times: &[f64], events: &[bool], t: f64, left: bool) -> f64 {
    let mut s = 1.0;
    let mut distinct: Vec<f64> = (0..times.len()).filter(|&i| events[i]).map(|i| times[i]).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    for u in distinct {
        if u > t || (left && u == t) {
            break;
        }
        let d = (0..times.len()).filter(|&i| events[i] && times[i] == u).count() as f64;
        let n = times.iter().filter(|&&v| v >= u).count() as f64;
        s *= 1.0 - d / n;
    }
    s
}

fn censoring_left(times: &[f64], events: &[bool], t: f64) -> f64 {
    let flipped: Vec<bool> = events.iter().map(|e| !e).collect();
    product_limit(times, &flipped, t, true)
}

/// IPCW Brier score written as a direct sum.
pub fn brier_reference(pred: &[f64], times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..times.len() {
        let g = censoring_left(times, events, times[i].min(t));
        if g < 1e-6 {
            continue;
        }
        count += 1.0;
        let died = times[i] <= t && events[i];
        let alive = times[i] > t;
        if died {
            sum += pred[i] * pred[i] / g;
        }
        if alive {
            sum += (1.0 - pred[i]) * (1.0 - pred[i]) / g;
        }
    }
    sum / count
}

/// Time-dependent concordance over all ordered pairs.
pub fn concordance_reference(pred: &[f64], times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..times.len() {
        if !events[i] || times[i] > t {
            continue;
        }
        let g = censoring_left(times, events, times[i]);
        if g < 1e-6 {
            continue;
        }
        for j in 0..times.len() {
            if times[j] <= times[i] {
                continue;
            }
            let w = 1.0 / (g * g);
            den += w;
            if pred[i] < pred[j] {
                num += w;
            } else if pred[i] == pred[j] {
                num += 0.5 * w;
            }
        }
    }
    num / den
}

/// Fraction of (positive, negative) pairs ranked correctly, ties one half.
pub fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..j] {
            r[k] = (i + j - 1) as f64 / 2.0;
        }
        i = j;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// `S(t) = exp(-rate t)` sampled densely with exact slopes, up to the time
/// where it reaches `exp(-18)`.
pub fn exponential_baseline(rate: f64) -> MonotoneSpline {
    let end = (18.0 / rate).min(10.0);
    let knots: Vec<f64> = (0..=1000).map(|i| i as f64 * end / 1000.0).collect();
    let values = knots.iter().map(|t| (-rate * t).exp()).collect();
    let slopes = knots.iter().map(|t| -rate * (-rate * t).exp()).collect();
    MonotoneSpline::new(knots, values, slopes).unwrap()
}

/// Parameters with every entry drawn uniformly from `[-scale, scale]`.
pub fn random_params(d: usize, hidden: &[usize], k: usize, m: usize, scale: f64, r: &mut impl Rng) -> CmheParams {
    let mut p = CmheParams::init(d, hidden, k, m, 0).unwrap();
    for block in p.blocks_mut() {
        for v in block.iter_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
    p
}

pub fn random_records(n: usize, d: usize, r: &mut impl Rng) -> Vec<SurvivalRecord> {
    (0..n)
        .map(|_| {
            let x = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
            SurvivalRecord::new(x, r.random_range(0.05..3.0), r.random_bool(0.7), r.random_bool(0.5)).unwrap()
        })
        .collect()
}

/// `exp(v) / sum exp`, computed directly.
pub fn softmax_direct(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}
