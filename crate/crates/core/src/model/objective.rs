//! Cluster-local Cox partial likelihoods and the stochastic EM objective.

use log::warn;

use crate::data::SurvivalRecord;
use crate::error::{CmheError, Result};
use crate::network::{log_softmax, softmax, CmheParams, ForwardOutput};

use super::baseline::BaselineSurvival;
use super::likelihood::{component_logliks, Posteriors};

fn check_batch(params: &CmheParams, batch: &[SurvivalRecord], posteriors: &Posteriors) -> Result<()> {
    if batch.len() != posteriors.len() {
        return Err(CmheError::shape(format!(
            "{} posteriors for a batch of {}",
            posteriors.len(),
            batch.len()
        )));
    }
    if posteriors.psi.iter().any(|&p| p >= params.k()) || posteriors.xi.iter().any(|&p| p >= params.m()) {
        return Err(CmheError::invalid("hard assignment out of range"));
    }
    Ok(())
}

/// Breslow-tied Cox partial log-likelihood over one group and its gradient
/// with respect to each member's log risk.
pub(crate) fn cox_partial(times: &[f64], events: &[bool], eta: &[f64]) -> (f64, Vec<f64>) {
    let n = times.len();
    let mut grad = vec![0.0; n];
    if n == 0 {
        return (0.0, grad);
    }
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    // Tie groups in ascending time: (start, end) into `order`.
    let mut groups = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && times[order[j]] == times[order[i]] {
            j += 1;
        }
        groups.push((i, j));
        i = j;
    }

    let mut risk = vec![0.0; groups.len()];
    let mut acc = 0.0;
    for (g, &(s, e)) in groups.iter().enumerate().rev() {
        acc += order[s..e].iter().map(|&j| (eta[j] - shift).exp()).sum::<f64>();
        risk[g] = acc;
    }

    let mut value = 0.0;
    let mut cum = 0.0;
    for (g, &(s, e)) in groups.iter().enumerate() {
        let deaths = order[s..e].iter().filter(|&&j| events[j]).count();
        if deaths > 0 {
            let log_risk = risk[g].ln();
            for &j in &order[s..e] {
                if events[j] {
                    value += eta[j] - shift - log_risk;
                }
            }
            cum += deaths as f64 / risk[g];
        }
        for &j in &order[s..e] {
            grad[j] = f64::from(u8::from(events[j])) - (eta[j] - shift).exp() * cum;
        }
    }
    (value, grad)
}

struct ClusterTerms {
    value: f64,
    /// Gradient of the log partial likelihood w.r.t. each sample's log risk.
    grad: Vec<f64>,
}

fn cluster_terms(
    params: &CmheParams,
    outputs: &[ForwardOutput],
    batch: &[SurvivalRecord],
    posteriors: &Posteriors,
    k: usize,
) -> ClusterTerms {
    let members: Vec<usize> = (0..batch.len()).filter(|&i| posteriors.psi[i] == k).collect();
    let times: Vec<f64> = members.iter().map(|&i| batch[i].time).collect();
    let events: Vec<bool> = members.iter().map(|&i| batch[i].event).collect();
    let eta: Vec<f64> = members
        .iter()
        .map(|&i| outputs[i].h_values[k] + if batch[i].treated { params.omega[posteriors.xi[i]] } else { 0.0 })
        .collect();
    let (value, local) = cox_partial(&times, &events, &eta);
    let mut grad = vec![0.0; batch.len()];
    for (g, &i) in local.iter().zip(&members) {
        grad[i] = *g;
    }
    ClusterTerms { value, grad }
}

fn forward_all(params: &CmheParams, batch: &[SurvivalRecord]) -> Result<Vec<ForwardOutput>> {
    batch.iter().map(|r| params.forward(&r.x)).collect()
}

/// `ln PL_k`: Cox partial log-likelihood of the events hard-assigned to
/// cluster `k`, with risk sets restricted to the same cluster.
pub fn partial_loglik_k(params: &CmheParams, batch: &[SurvivalRecord], posteriors: &Posteriors, k: usize) -> Result<f64> {
    check_batch(params, batch, posteriors)?;
    if k >= params.k() {
        return Err(CmheError::invalid(format!("cluster {k} out of range for K={}", params.k())));
    }
    let outputs = forward_all(params, batch)?;
    Ok(cluster_terms(params, &outputs, batch, posteriors, k).value)
}

/// `Q_hat = sum_k ln PL_k + sum_i sum_k gamma_ik ln P(Z=k|x_i) + sum_i sum_m zeta_im ln P(phi=m|x_i)`.
pub fn q_hat(params: &CmheParams, batch: &[SurvivalRecord], posteriors: &Posteriors) -> Result<f64> {
    Ok(q_hat_with_grad(params, batch, posteriors)?.0)
}

/// `Q_hat` and its exact gradient with respect to every parameter block.
pub fn q_hat_with_grad(params: &CmheParams, batch: &[SurvivalRecord], posteriors: &Posteriors) -> Result<(f64, CmheParams)> {
    check_batch(params, batch, posteriors)?;
    let outputs = forward_all(params, batch)?;
    let (k_n, m_n) = (params.k(), params.m());
    let mut upstream: Vec<ForwardOutput> = (0..batch.len())
        .map(|_| ForwardOutput::zeros(params.repr_dim(), k_n, m_n))
        .collect();
    let mut omega_grad = vec![0.0; m_n];
    let mut value = 0.0;

    for k in 0..k_n {
        let terms = cluster_terms(params, &outputs, batch, posteriors, k);
        value += terms.value;
        for (i, g) in terms.grad.iter().enumerate() {
            if posteriors.psi[i] != k {
                continue;
            }
            upstream[i].h_values[k] += g;
            if batch[i].treated {
                omega_grad[posteriors.xi[i]] += g;
            }
        }
    }

    for (i, out) in outputs.iter().enumerate() {
        let (gamma, zeta) = (&posteriors.gamma[i], &posteriors.zeta[i]);
        if gamma.len() != k_n || zeta.len() != m_n {
            return Err(CmheError::shape(format!("posterior row {i} has the wrong width")));
        }
        let log_pi = log_softmax(&out.f_logits);
        let log_rho = log_softmax(&out.g_logits);
        value += gamma.iter().zip(&log_pi).map(|(a, b)| a * b).sum::<f64>();
        value += zeta.iter().zip(&log_rho).map(|(a, b)| a * b).sum::<f64>();
        // d/dlogits of sum_k w_k log softmax_k = w - (sum w) softmax.
        let gw: f64 = gamma.iter().sum();
        let zw: f64 = zeta.iter().sum();
        for (u, (w, p)) in upstream[i].f_logits.iter_mut().zip(gamma.iter().zip(softmax(&out.f_logits))) {
            *u = w - gw * p;
        }
        for (u, (w, p)) in upstream[i].g_logits.iter_mut().zip(zeta.iter().zip(softmax(&out.g_logits))) {
            *u = w - zw * p;
        }
    }

    if !value.is_finite() {
        warn!("non-finite objective value {value}");
    }
    let xs: Vec<&[f64]> = batch.iter().map(|r| r.x.as_slice()).collect();
    let mut grad = params.backward(&xs, &upstream)?;
    grad.omega = omega_grad;
    Ok((value, grad))
}

/// `sum_i ln P(t_i | psi_i, xi_i)`: the survival term under the hard draws.
pub fn hard_event_loglik(
    params: &CmheParams,
    baselines: &BaselineSurvival,
    batch: &[SurvivalRecord],
    posteriors: &Posteriors,
) -> Result<f64> {
    check_batch(params, batch, posteriors)?;
    let m_n = params.m();
    let mut total = 0.0;
    for (i, r) in batch.iter().enumerate() {
        total += component_logliks(params, baselines, r)?[posteriors.psi[i] * m_n + posteriors.xi[i]];
    }
    Ok(total)
}

/// `sum_i sum_k sum_m gamma_ik zeta_im ln P(t_i | k, m)`: the posterior-weighted
/// survival term.
pub fn soft_event_loglik(
    params: &CmheParams,
    baselines: &BaselineSurvival,
    batch: &[SurvivalRecord],
    posteriors: &Posteriors,
) -> Result<f64> {
    check_batch(params, batch, posteriors)?;
    let m_n = params.m();
    let mut total = 0.0;
    for (i, r) in batch.iter().enumerate() {
        let table = component_logliks(params, baselines, r)?;
        for (idx, v) in table.iter().enumerate() {
            total += posteriors.gamma[i][idx / m_n] * posteriors.zeta[i][idx % m_n] * v;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(x: f64, t: f64, e: bool, a: bool) -> SurvivalRecord {
        SurvivalRecord::new(vec![x], t, e, a).unwrap()
    }

    fn zero_params(k: usize, m: usize) -> CmheParams {
        let mut p = CmheParams::init(1, &[], k, m, 0).unwrap();
        p.blocks_mut().into_iter().for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
        p
    }

    #[test]
    fn single_event_contributes_zero() {
        let p = zero_params(1, 1);
        let batch = vec![rec(0.0, 1.0, true, false)];
        let post = Posteriors::from_hard(vec![0], vec![0], 1, 1).unwrap();
        assert_eq!(partial_loglik_k(&p, &batch, &post, 0).unwrap(), 0.0);
    }

    #[test]
    fn two_events_give_minus_ln_two() {
        let p = zero_params(2, 1);
        let batch = vec![rec(0.3, 1.0, true, false), rec(-0.3, 2.0, true, true)];
        let post = Posteriors::from_hard(vec![1, 1], vec![0, 0], 2, 1).unwrap();
        let v = partial_loglik_k(&p, &batch, &post, 1).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-15);
        assert_eq!(partial_loglik_k(&p, &batch, &post, 0).unwrap(), 0.0);
    }

    #[test]
    fn uniform_gate_terms() {
        let p = zero_params(2, 2);
        let batch = vec![rec(0.1, 1.0, false, false), rec(0.2, 2.0, false, true), rec(0.4, 3.0, false, false)];
        let mut post = Posteriors::from_hard(vec![0, 1, 0], vec![1, 0, 0], 2, 2).unwrap();
        post.gamma = vec![vec![0.5, 0.5]; 3];
        post.zeta = vec![vec![0.5, 0.5]; 3];
        let v = q_hat(&p, &batch, &post).unwrap();
        assert!((v - 3.0 * 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cox_gradient_matches_differences() {
        let times = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0];
        let events = [true, true, false, true, true, true];
        let eta = [0.1, -0.4, 0.3, 0.8, -0.2, 0.5];
        let (_, grad) = cox_partial(&times, &events, &eta);
        for j in 0..eta.len() {
            let mut up = eta;
            let mut dn = eta;
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            let fd = (cox_partial(&times, &events, &up).0 - cox_partial(&times, &events, &dn).0) / 2e-6;
            assert!((fd - grad[j]).abs() < 1e-7, "{j}: {fd} vs {}", grad[j]);
        }
    }
}
