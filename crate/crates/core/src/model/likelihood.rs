//! Conditional survival, per-component likelihood terms, posteriors and the
//! marginal log-likelihood. Inputs are records already in model space
//! (standardized features).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalRecord;
use crate::error::{CmheError, Result};
use crate::network::{log_softmax, CmheParams, ForwardOutput};

use super::baseline::BaselineSurvival;

/// Lower bound on the event density used in uncensored terms.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Soft and hard posterior assignments for a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posteriors {
    /// `gamma[i][k]`: posterior probability of latent cluster `k`.
    pub gamma: Vec<Vec<f64>>,
    /// `zeta[i][m]`: posterior probability of phenogroup `m`.
    pub zeta: Vec<Vec<f64>>,
    /// Sampled cluster per sample.
    pub psi: Vec<usize>,
    /// Sampled phenogroup per sample.
    pub xi: Vec<usize>,
}

impl Posteriors {
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// Hard assignments only, with one-hot soft parts.
    pub fn from_hard(psi: Vec<usize>, xi: Vec<usize>, k: usize, m: usize) -> Result<Self> {
        if psi.len() != xi.len() {
            return Err(CmheError::shape("psi and xi must be equally long"));
        }
        if psi.iter().any(|&p| p >= k) || xi.iter().any(|&p| p >= m) {
            return Err(CmheError::invalid("hard assignment out of range"));
        }
        let one_hot = |i: usize, n: usize| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        Ok(Self {
            gamma: psi.iter().map(|&p| one_hot(p, k)).collect(),
            zeta: xi.iter().map(|&p| one_hot(p, m)).collect(),
            psi,
            xi,
        })
    }
}

fn check_component(params: &CmheParams, k: usize, m: usize) -> Result<()> {
    if k >= params.k() || m >= params.m() {
        return Err(CmheError::invalid(format!(
            "component ({k}, {m}) out of range for K={}, M={}",
            params.k(),
            params.m()
        )));
    }
    Ok(())
}

fn check_baselines(params: &CmheParams, baselines: &BaselineSurvival) -> Result<()> {
    if baselines.k() != params.k() {
        return Err(CmheError::shape(format!(
            "{} baseline curves for K={}",
            baselines.k(),
            params.k()
        )));
    }
    Ok(())
}

/// Log hazard multiplier `h^k(x) + a * omega_m`.
fn log_multiplier(out: &ForwardOutput, omega: &[f64], treated: bool, k: usize, m: usize) -> f64 {
    out.h_values[k] + if treated { omega[m] } else { 0.0 }
}

/// `ln S^m_k(t)` and `ln f^m_k(t)` for one component.
fn component_terms(baselines: &BaselineSurvival, k: usize, log_mult: f64, t: f64) -> (f64, f64) {
    let s = baselines.survival(k, t);
    let mult = log_mult.exp();
    let log_surv = mult * s.ln();
    let base_hazard = -baselines.derivative(k, t) / s;
    let log_density = if base_hazard > 0.0 {
        (base_hazard.ln() + log_mult + log_surv).max(DENSITY_FLOOR.ln())
    } else {
        DENSITY_FLOOR.ln()
    };
    (log_surv, log_density)
}

fn record_term(baselines: &BaselineSurvival, k: usize, log_mult: f64, record: &SurvivalRecord) -> f64 {
    let (log_surv, log_density) = component_terms(baselines, k, log_mult, record.time);
    if record.event {
        log_density
    } else {
        log_surv
    }
}

/// `S^m_k(t | x, a) = S_k(t)^{exp(h^k(x)) * exp(omega_m)^a}`.
pub fn conditional_survival(
    params: &CmheParams,
    baselines: &BaselineSurvival,
    x: &[f64],
    treated: bool,
    k: usize,
    m: usize,
    t: f64,
) -> Result<f64> {
    check_component(params, k, m)?;
    check_baselines(params, baselines)?;
    if !(t >= 0.0) {
        return Err(CmheError::invalid(format!("time must be non-negative, got {t}")));
    }
    let out = params.forward(x)?;
    let (log_surv, _) = component_terms(baselines, k, log_multiplier(&out, &params.omega, treated, k, m), t);
    Ok(log_surv.exp().max(f64::MIN_POSITIVE))
}

/// Log density (events) or log survival (censored) under component `(k, m)`.
pub fn conditional_hazard_loglik(
    params: &CmheParams,
    baselines: &BaselineSurvival,
    record: &SurvivalRecord,
    k: usize,
    m: usize,
) -> Result<f64> {
    check_component(params, k, m)?;
    check_baselines(params, baselines)?;
    let out = params.forward(&record.x)?;
    Ok(record_term(baselines, k, log_multiplier(&out, &params.omega, record.treated, k, m), record))
}

/// Row-major `K x M` table of `ln P(t | k, m)` for one record.
pub fn component_logliks(params: &CmheParams, baselines: &BaselineSurvival, record: &SurvivalRecord) -> Result<Vec<f64>> {
    check_baselines(params, baselines)?;
    let out = params.forward(&record.x)?;
    Ok(component_table(params, baselines, &out, record))
}

fn component_table(params: &CmheParams, baselines: &BaselineSurvival, out: &ForwardOutput, record: &SurvivalRecord) -> Vec<f64> {
    let (k_n, m_n) = (params.k(), params.m());
    let mut table = Vec::with_capacity(k_n * m_n);
    for k in 0..k_n {
        for m in 0..m_n {
            table.push(record_term(baselines, k, log_multiplier(out, &params.omega, record.treated, k, m), record));
        }
    }
    table
}

/// Row-major `K x M` joint log terms `ln P(t|k,m) + ln P(Z=k|x) + ln P(phi=m|x)`.
fn joint_terms(params: &CmheParams, baselines: &BaselineSurvival, record: &SurvivalRecord) -> Result<Vec<f64>> {
    let out = params.forward(&record.x)?;
    let log_pi = log_softmax(&out.f_logits);
    let log_rho = log_softmax(&out.g_logits);
    let m_n = params.m();
    let mut table = component_table(params, baselines, &out, record);
    for (idx, v) in table.iter_mut().enumerate() {
        *v += log_pi[idx / m_n] + log_rho[idx % m_n];
    }
    Ok(table)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Soft posteriors of the joint `(Z, phi)` marginalized to `gamma` and `zeta`,
/// plus hard draws `psi ~ gamma`, `xi ~ zeta`.
pub fn e_step<R: Rng + ?Sized>(
    params: &CmheParams,
    baselines: &BaselineSurvival,
    batch: &[SurvivalRecord],
    rng: &mut R,
) -> Result<Posteriors> {
    if batch.is_empty() {
        return Err(CmheError::invalid("e-step needs a non-empty batch"));
    }
    check_baselines(params, baselines)?;
    let (k_n, m_n) = (params.k(), params.m());
    let mut post = Posteriors {
        gamma: Vec::with_capacity(batch.len()),
        zeta: Vec::with_capacity(batch.len()),
        psi: Vec::with_capacity(batch.len()),
        xi: Vec::with_capacity(batch.len()),
    };
    for (i, record) in batch.iter().enumerate() {
        let joint = joint_terms(params, baselines, record)?;
        let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(CmheError::Sample {
                sample: i,
                message: "every joint posterior term is non-finite".into(),
            });
        }
        let weights: Vec<f64> = joint.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut gamma = vec![0.0; k_n];
        let mut zeta = vec![0.0; m_n];
        for (idx, w) in weights.iter().enumerate() {
            let p = w / total;
            gamma[idx / m_n] += p;
            zeta[idx % m_n] += p;
        }
        gamma.iter_mut().chain(zeta.iter_mut()).for_each(|p| *p = p.min(1.0));
        post.psi.push(sample_categorical(&gamma, rng));
        post.xi.push(sample_categorical(&zeta, rng));
        post.gamma.push(gamma);
        post.zeta.push(zeta);
    }
    Ok(post)
}

/// Hard draws from the prior gates `P(Z|x)` and `P(phi|x)`.
pub fn sample_prior<R: Rng + ?Sized>(params: &CmheParams, batch: &[SurvivalRecord], rng: &mut R) -> Result<Posteriors> {
    let mut psi = Vec::with_capacity(batch.len());
    let mut xi = Vec::with_capacity(batch.len());
    for r in batch {
        let out = params.forward(&r.x)?;
        psi.push(sample_categorical(&crate::network::softmax(&out.f_logits), rng));
        xi.push(sample_categorical(&crate::network::softmax(&out.g_logits), rng));
    }
    Posteriors::from_hard(psi, xi, params.k(), params.m())
}

/// `sum_i ln sum_{k,m} P(Z=k|x_i) P(phi=m|x_i) P(t_i | k, m)`.
pub fn full_loglik(params: &CmheParams, baselines: &BaselineSurvival, records: &[SurvivalRecord]) -> Result<f64> {
    check_baselines(params, baselines)?;
    let mut total = 0.0;
    for (i, record) in records.iter().enumerate() {
        let v = log_sum_exp(&joint_terms(params, baselines, record)?);
        if !v.is_finite() {
            return Err(CmheError::Sample {
                sample: i,
                message: format!("non-finite log-likelihood {v}"),
            });
        }
        total += v;
    }
    Ok(total)
}

/// Mixture survival under the intervention `do(A = treated)` at each time.
pub fn predict_survival(
    params: &CmheParams,
    baselines: &BaselineSurvival,
    x: &[f64],
    treated: bool,
    times: &[f64],
) -> Result<Vec<f64>> {
    check_baselines(params, baselines)?;
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(CmheError::invalid("prediction times must be non-negative"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CmheError::invalid("prediction times must be ascending"));
    }
    let out = params.forward(x)?;
    let pi = crate::network::softmax(&out.f_logits);
    let rho = crate::network::softmax(&out.g_logits);
    let mut curve = Vec::with_capacity(times.len());
    for &t in times {
        if t == 0.0 {
            curve.push(1.0);
            continue;
        }
        let mut s = 0.0;
        for (k, pk) in pi.iter().enumerate() {
            for (m, rm) in rho.iter().enumerate() {
                let (log_surv, _) = component_terms(baselines, k, log_multiplier(&out, &params.omega, treated, k, m), t);
                s += pk * rm * log_surv.exp();
            }
        }
        curve.push(s.clamp(f64::MIN_POSITIVE, 1.0));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::MonotoneSpline;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Hermite curve matching `exp(-rate * t)` value and slope on a fine grid.
    fn exponential_baseline(rate: f64) -> MonotoneSpline {
        let knots: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.005).collect();
        let values = knots.iter().map(|t| (-rate * t).exp()).collect();
        let slopes = knots.iter().map(|t| -rate * (-rate * t).exp()).collect();
        MonotoneSpline::new(knots, values, slopes).unwrap()
    }

    fn zero_params(k: usize, m: usize) -> CmheParams {
        let mut p = CmheParams::init(2, &[], k, m, 0).unwrap();
        p.blocks_mut().into_iter().for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
        p
    }

    #[test]
    fn exponential_density_at_one() {
        let p = zero_params(1, 1);
        let b = BaselineSurvival::new(vec![exponential_baseline(1.0)], 0.0).unwrap();
        let r = SurvivalRecord::new(vec![0.3, -0.2], 1.0, true, false).unwrap();
        let v = conditional_hazard_loglik(&p, &b, &r, 0, 0).unwrap();
        assert!((v + 1.0).abs() < 1e-9, "{v}");
        let c = SurvivalRecord::new(vec![0.3, -0.2], 1.0, false, false).unwrap();
        let s = conditional_survival(&p, &b, &c.x, false, 0, 0, 1.0).unwrap();
        assert_eq!(conditional_hazard_loglik(&p, &b, &c, 0, 0).unwrap(), s.ln());
    }

    #[test]
    fn treatment_squares_survival() {
        let mut p = zero_params(1, 2);
        p.omega[1] = 2f64.ln();
        let b = BaselineSurvival::new(vec![exponential_baseline(0.7)], 0.0).unwrap();
        for t in [0.0, 0.3, 1.1, 4.0] {
            let c = conditional_survival(&p, &b, &[0.1, 0.2], false, 0, 1, t).unwrap();
            let a = conditional_survival(&p, &b, &[0.1, 0.2], true, 0, 1, t).unwrap();
            assert!((a - c * c).abs() < 1e-14);
        }
        assert!(conditional_survival(&p, &b, &[0.0, 0.0], true, 0, 2, 1.0).is_err());
    }

    #[test]
    fn single_component_posteriors_are_trivial() {
        let p = CmheParams::init(2, &[3], 1, 1, 4).unwrap();
        let b = BaselineSurvival::new(vec![exponential_baseline(1.0)], 0.0).unwrap();
        let batch: Vec<_> = (0..5)
            .map(|i| SurvivalRecord::new(vec![i as f64, 1.0], 0.5 + i as f64, i % 2 == 0, i % 3 == 0).unwrap())
            .collect();
        let post = e_step(&p, &b, &batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(post.gamma.iter().all(|g| g == &vec![1.0]));
        assert!(post.psi.iter().all(|&v| v == 0) && post.xi.iter().all(|&v| v == 0));
        let ll = full_loglik(&p, &b, &batch).unwrap();
        let direct: f64 = batch.iter().map(|r| conditional_hazard_loglik(&p, &b, r, 0, 0).unwrap()).sum();
        assert!((ll - direct).abs() < 1e-10);
    }

    #[test]
    fn symmetric_model_has_uniform_posteriors() {
        let p = zero_params(3, 2);
        let b = BaselineSurvival::new(vec![exponential_baseline(1.0); 3], 0.0).unwrap();
        let batch = vec![SurvivalRecord::new(vec![1.0, 2.0], 0.4, true, true).unwrap(); 3];
        let post = e_step(&p, &b, &batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (g, z) in post.gamma.iter().zip(&post.zeta) {
            assert!(g.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
            assert!(z.iter().all(|v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn prediction_without_effect_ignores_arm() {
        let p = CmheParams::init(2, &[4], 2, 2, 9).unwrap();
        let b = BaselineSurvival::new(vec![exponential_baseline(1.0), exponential_baseline(0.2)], 0.0).unwrap();
        let times = [0.0, 0.5, 1.0, 3.0];
        let c = predict_survival(&p, &b, &[0.5, -1.0], false, &times).unwrap();
        let a = predict_survival(&p, &b, &[0.5, -1.0], true, &times).unwrap();
        assert_eq!(c, a);
        assert_eq!(c[0], 1.0);
        assert!(c.windows(2).all(|w| w[1] <= w[0]));
        assert!(predict_survival(&p, &b, &[0.5, -1.0], true, &[1.0, 0.5]).is_err());
    }
}
