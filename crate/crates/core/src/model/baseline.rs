//! Per-cluster baseline survival: Breslow's cumulative hazard, then a
//! smoothing spline on `exp(-Lambda)`, made monotone and anchored at (0, 1).

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalRecord;
use crate::error::{CmheError, Result};
use crate::network::CmheParams;
use crate::spline::{MonotoneSpline, SmoothingSpline};

use super::likelihood::Posteriors;

/// Lower clamp on baseline survival values.
pub const SURVIVAL_FLOOR: f64 = 1e-8;

/// Maximum number of knots in a re-interpolated baseline curve.
const MAX_GRID_KNOTS: usize = 120;

/// Candidate smoothing penalties, on time rescaled to [0, 1].
fn smoothing_grid() -> Vec<f64> {
    (0..=22).map(|i| 10f64.powf(-10.0 + 0.5 * i as f64)).collect()
}

/// Right-continuous step function `Lambda(t) = sum_{event times s <= t} dLambda(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeHazard {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// Jump sizes at each event time.
    pub increments: Vec<f64>,
}

impl CumulativeHazard {
    pub fn eval(&self, t: f64) -> f64 {
        let upto = self.times.partition_point(|&s| s <= t);
        self.increments[..upto].iter().sum()
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.eval(t)).exp()
    }

    pub fn is_zero(&self) -> bool {
        self.times.is_empty()
    }
}

/// Breslow estimator for one group. Tied events share a risk set and each
/// contributes one increment: the jump at an event time with `d` events is
/// `d / sum_{j: t_j >= t} exp(log_risk_j)`.
pub fn breslow(times: &[f64], events: &[bool], log_risk: &[f64]) -> Result<CumulativeHazard> {
    let n = times.len();
    if events.len() != n || log_risk.len() != n {
        return Err(CmheError::shape("breslow inputs must be equally long"));
    }
    if log_risk.iter().any(|v| !v.is_finite()) {
        return Err(CmheError::invalid("non-finite log risk in breslow estimator"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let shift = log_risk.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut out_times = Vec::new();
    let mut out_inc = Vec::new();
    let mut risk = 0.0;
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut j = i;
        let mut deaths = 0usize;
        while j < n && times[order[j]] == t {
            risk += (log_risk[order[j]] - shift).exp();
            if events[order[j]] {
                deaths += 1;
            }
            j += 1;
        }
        if deaths > 0 {
            out_times.push(t);
            out_inc.push(deaths as f64 * (-shift).exp() / risk);
        }
        i = j;
    }
    out_times.reverse();
    out_inc.reverse();
    Ok(CumulativeHazard { times: out_times, increments: out_inc })
}

/// Monotone baseline survival for each latent cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSurvival {
    pub clusters: Vec<MonotoneSpline>,
    /// Smoothing penalty used for the underlying spline fits.
    pub smoothing: f64,
}

impl BaselineSurvival {
    /// Validates the anchoring and monotonicity invariants.
    pub fn new(clusters: Vec<MonotoneSpline>, smoothing: f64) -> Result<Self> {
        if clusters.is_empty() {
            return Err(CmheError::invalid("baseline needs at least one cluster"));
        }
        for (k, c) in clusters.iter().enumerate() {
            if c.knots[0] != 0.0 || c.values[0] != 1.0 {
                return Err(CmheError::invalid(format!("baseline {k} is not anchored at (0, 1)")));
            }
            if c.values.windows(2).any(|w| w[1] > w[0]) || c.slopes.iter().any(|&s| s > 0.0) {
                return Err(CmheError::invalid(format!("baseline {k} is not non-increasing")));
            }
            if c.values.iter().any(|&v| !(v >= SURVIVAL_FLOOR && v <= 1.0)) {
                return Err(CmheError::invalid(format!("baseline {k} leaves [{SURVIVAL_FLOOR}, 1]")));
            }
        }
        Ok(Self { clusters, smoothing })
    }

    /// `S(t) = 1` for every cluster.
    pub fn constant(k: usize, smoothing: f64) -> Self {
        let flat = MonotoneSpline { knots: vec![0.0], values: vec![1.0], slopes: vec![0.0] };
        Self { clusters: vec![flat; k], smoothing }
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    /// Baseline survival of cluster `k`, clamped to `[SURVIVAL_FLOOR, 1]`.
    pub fn survival(&self, k: usize, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        self.clusters[k].eval(t).clamp(SURVIVAL_FLOOR, 1.0)
    }

    /// Time derivative of the baseline survival (never positive).
    pub fn derivative(&self, k: usize, t: f64) -> f64 {
        self.clusters[k].derivative(t).min(0.0)
    }
}

/// Points `(t_i, S_hat(t_i))` over all members, merged by distinct time.
fn smoothing_data(hazard: &CumulativeHazard, member_times: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut sorted = member_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scale = sorted.last().copied().unwrap_or(1.0);
    let mut x = vec![0.0];
    let mut y = vec![1.0];
    let mut w = vec![0.0];
    for &t in &sorted {
        let xt = t / scale;
        let last = *x.last().expect("non-empty");
        if xt - last <= 1e-12 {
            *w.last_mut().expect("non-empty") += 1.0;
        } else {
            x.push(xt);
            y.push(hazard.survival(t));
            w.push(1.0);
        }
    }
    // The anchor carries as much weight as all members together.
    w[0] += sorted.len() as f64;
    let mean_w = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|v| *v /= mean_w);
    (x, y, w)
}

/// GCV score of the cluster's smoothing problem at `lambda`.
fn cluster_gcv(hazard: &CumulativeHazard, member_times: &[f64], lambda: f64) -> Result<f64> {
    let (x, y, w) = smoothing_data(hazard, member_times);
    Ok(SmoothingSpline::fit(&x, &y, &w, lambda)?.gcv())
}

/// Smooths `exp(-Lambda)` over the member times, then re-interpolates a
/// monotone, anchored, clamped curve.
pub fn smooth_survival(hazard: &CumulativeHazard, member_times: &[f64], lambda: f64) -> Result<MonotoneSpline> {
    if hazard.is_zero() || member_times.is_empty() {
        return Ok(MonotoneSpline { knots: vec![0.0], values: vec![1.0], slopes: vec![0.0] });
    }
    let (x, y, w) = smoothing_data(hazard, member_times);
    let scale = member_times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spline = SmoothingSpline::fit(&x, &y, &w, lambda)?.spline;

    // Grid: zero plus evenly ranked distinct member times.
    let distinct = &x[1..];
    let mut grid = vec![0.0];
    if distinct.len() <= MAX_GRID_KNOTS {
        grid.extend_from_slice(distinct);
    } else {
        let step = (distinct.len() - 1) as f64 / (MAX_GRID_KNOTS - 1) as f64;
        for g in 0..MAX_GRID_KNOTS {
            let idx = ((g as f64 * step).round() as usize).min(distinct.len() - 1);
            if distinct[idx] > *grid.last().expect("non-empty") {
                grid.push(distinct[idx]);
            }
        }
    }

    let mut running = 1.0f64;
    let mut values = Vec::with_capacity(grid.len());
    for (i, &g) in grid.iter().enumerate() {
        let v = if i == 0 { 1.0 } else { spline.eval(g) };
        running = running.min(v).clamp(SURVIVAL_FLOOR, 1.0);
        values.push(running);
    }

    // Keep the strictly decreasing points so that the re-interpolated curve
    // only flattens after its final drop.
    let mut knots = vec![0.0];
    let mut kept = vec![1.0];
    for i in 1..grid.len() {
        if values[i] < *kept.last().expect("non-empty") {
            knots.push(grid[i] * scale);
            kept.push(values[i]);
        }
    }
    let end = grid[grid.len() - 1] * scale;
    if end > *knots.last().expect("non-empty") {
        knots.push(end);
        kept.push(*kept.last().expect("non-empty"));
    }
    let mut curve = MonotoneSpline::pchip(knots, kept)?;
    curve.slopes.iter_mut().for_each(|s| *s = s.min(0.0));
    Ok(curve)
}

/// Per-cluster log risks `h^k(x_j) + a_j omega_{xi_j}` and membership.
fn cluster_members(
    params: &CmheParams,
    records: &[SurvivalRecord],
    posteriors: &Posteriors,
    k: usize,
) -> Result<(Vec<f64>, Vec<bool>, Vec<f64>)> {
    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut log_risk = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if posteriors.psi[i] != k {
            continue;
        }
        let out = params.forward(&r.x)?;
        let treat = if r.treated { params.omega[posteriors.xi[i]] } else { 0.0 };
        times.push(r.time);
        events.push(r.event);
        log_risk.push(out.h_values[k] + treat);
    }
    Ok((times, events, log_risk))
}

/// Shifts each cluster's log hazard head so that its lowest-risk assigned
/// member has `h^k = 0`. Partial likelihoods and predictions are unchanged
/// once the baselines are re-estimated; the baseline then describes a
/// low-risk subject and stays well above `SURVIVAL_FLOOR`.
pub fn recenter_hazard_heads(params: &mut CmheParams, records: &[SurvivalRecord], posteriors: &Posteriors) -> Result<()> {
    if posteriors.len() != records.len() {
        return Err(CmheError::shape("posteriors do not cover the dataset"));
    }
    let mut lowest = vec![f64::INFINITY; params.k()];
    for (r, &k) in records.iter().zip(&posteriors.psi) {
        lowest[k] = lowest[k].min(params.forward(&r.x)?.h_values[k]);
    }
    for (b, low) in params.head_h.bias.iter_mut().zip(lowest) {
        if low.is_finite() {
            *b -= low;
        }
    }
    Ok(())
}

/// Raw per-cluster Breslow estimates with cluster-local risk sets.
pub fn breslow_by_cluster(
    params: &CmheParams,
    records: &[SurvivalRecord],
    posteriors: &Posteriors,
) -> Result<Vec<(CumulativeHazard, Vec<f64>)>> {
    if posteriors.len() != records.len() {
        return Err(CmheError::shape("posteriors do not cover the dataset"));
    }
    (0..params.k())
        .map(|k| {
            let (times, events, log_risk) = cluster_members(params, records, posteriors, k)?;
            Ok((breslow(&times, &events, &log_risk)?, times))
        })
        .collect()
}

/// Picks the penalty minimizing the summed GCV score over clusters that have
/// events.
pub fn select_smoothing(raw: &[(CumulativeHazard, Vec<f64>)]) -> Result<f64> {
    let mut best = (f64::INFINITY, 1e-4);
    for lambda in smoothing_grid() {
        let mut total = 0.0;
        let mut any = false;
        for (hazard, times) in raw {
            if hazard.is_zero() {
                continue;
            }
            any = true;
            total += cluster_gcv(hazard, times, lambda)?;
        }
        if !any {
            return Ok(best.1);
        }
        if total < best.0 {
            best = (total, lambda);
        }
    }
    Ok(best.1)
}

/// Refreshes every cluster's baseline from hard assignments. Clusters without
/// any assigned event keep their previous curve (or `S = 1` when there is
/// none). `smoothing = None` selects the penalty by GCV.
pub fn breslow_update(
    params: &CmheParams,
    records: &[SurvivalRecord],
    posteriors: &Posteriors,
    previous: Option<&BaselineSurvival>,
    smoothing: Option<f64>,
) -> Result<BaselineSurvival> {
    let raw = breslow_by_cluster(params, records, posteriors)?;
    let lambda = match smoothing {
        Some(l) => l,
        None => select_smoothing(&raw)?,
    };
    let mut clusters = Vec::with_capacity(raw.len());
    for (k, (hazard, times)) in raw.iter().enumerate() {
        if hazard.is_zero() {
            warn!("cluster {k} has no assigned events; keeping its previous baseline");
            clusters.push(match previous {
                Some(p) if p.k() == raw.len() => p.clusters[k].clone(),
                _ => BaselineSurvival::constant(1, lambda).clusters.remove(0),
            });
            continue;
        }
        clusters.push(smooth_survival(hazard, times, lambda)?);
    }
    BaselineSurvival::new(clusters, lambda)
}
