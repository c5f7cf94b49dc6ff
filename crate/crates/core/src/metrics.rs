//! Censoring-aware evaluation metrics.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{CmheError, Result};
use crate::model::CmheModel;
use crate::rng::{substream, Stream};

/// Inverse-probability weights below this censoring survival are dropped.
pub const IPCW_FLOOR: f64 = 1e-6;

pub const DEFAULT_BOOTSTRAP: usize = 500;

pub const DEFAULT_RMST_STEPS: usize = 1000;

/// Right-continuous step function starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurvivalCurve {
    /// Times at which the curve drops, ascending.
    pub times: Vec<f64>,
    /// Value from each time onwards.
    pub values: Vec<f64>,
}

impl StepSurvivalCurve {
    /// `S(t)`, including a drop at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 { 1.0 } else { self.values[i - 1] }
    }

    /// `S(t-)`, the value just before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 { 1.0 } else { self.values[i - 1] }
    }
}

fn check_pairs(times: &[f64], events: &[bool]) -> Result<()> {
    if times.is_empty() || times.len() != events.len() {
        return Err(CmheError::shape("times and events must be non-empty and equally long"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(CmheError::invalid("times must be finite"));
    }
    Ok(())
}

/// Product-limit estimator; tied times are grouped.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<StepSurvivalCurve> {
    check_pairs(times, events)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut curve = StepSurvivalCurve { times: Vec::new(), values: Vec::new() };
    let mut at_risk = times.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut deaths = 0;
        while j < order.len() && times[order[j]] == t {
            deaths += usize::from(events[order[j]]);
            j += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            curve.times.push(t);
            curve.values.push(s);
        }
        at_risk -= j - i;
        i = j;
    }
    Ok(curve)
}

/// Kaplan-Meier estimate of the censoring distribution (roles of events and
/// censorings swapped).
pub fn censoring_survival(times: &[f64], events: &[bool]) -> Result<StepSurvivalCurve> {
    let flipped: Vec<bool> = events.iter().map(|e| !e).collect();
    kaplan_meier(times, &flipped)
}

fn check_predictions(predicted: &[f64], times: &[f64]) -> Result<()> {
    if predicted.len() != times.len() {
        return Err(CmheError::shape(format!(
            "{} predictions for {} samples",
            predicted.len(),
            times.len()
        )));
    }
    if predicted.iter().any(|p| !p.is_finite()) {
        return Err(CmheError::invalid("predictions must be finite"));
    }
    Ok(())
}

/// IPCW Brier score of predicted survival probabilities `P(T > t | x_i)`.
/// Weights use the censoring survival just before `min(T_i, t)`.
pub fn brier_score(predicted: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<f64> {
    check_pairs(times, events)?;
    check_predictions(predicted, times)?;
    let g = censoring_survival(times, events)?;
    let mut total = 0.0;
    let mut used = 0usize;
    let mut dropped = 0usize;
    for i in 0..times.len() {
        let w = g.eval_left(times[i].min(t));
        if w < IPCW_FLOOR {
            dropped += 1;
            continue;
        }
        used += 1;
        if times[i] <= t && events[i] {
            total += predicted[i].powi(2) / w;
        } else if times[i] > t {
            total += (1.0 - predicted[i]).powi(2) / w;
        }
    }
    if dropped > 0 {
        warn!("brier score at {t}: {dropped} samples dropped for tiny censoring weights");
    }
    if used == 0 {
        return Err(CmheError::Degenerate(format!("no usable samples for the Brier score at {t}")));
    }
    Ok(total / used as f64)
}

/// `sum_j (t_j / t_max) BS(t_j)`.
pub fn integrated_brier(horizons: &[f64], scores: &[f64]) -> Result<f64> {
    if horizons.is_empty() || horizons.len() != scores.len() {
        return Err(CmheError::shape("need one score per horizon and at least one horizon"));
    }
    let t_max = horizons.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(t_max > 0.0) {
        return Err(CmheError::invalid("horizons must be positive"));
    }
    Ok(horizons.iter().zip(scores).map(|(t, s)| t / t_max * s).sum())
}

/// Time-dependent concordance at `t` from predicted survival `P(T > t | x_i)`.
/// Comparable pairs have `delta_i = 1`, `T_i < T_j` and `T_i <= t`, weighted
/// by `G(T_i-)^-2`; equal predicted risks count one half.
pub fn concordance_td(predicted: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<f64> {
    check_pairs(times, events)?;
    check_predictions(predicted, times)?;
    let g = censoring_survival(times, events)?;
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut num = 0.0;
    let mut den = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        if !events[i] || times[i] > t {
            continue;
        }
        let gi = g.eval_left(times[i]);
        if gi < IPCW_FLOOR {
            continue;
        }
        let w = 1.0 / (gi * gi);
        let risk_i = 1.0 - predicted[i];
        let start = pos + order[pos..].partition_point(|&j| times[j] <= times[i]);
        for &j in &order[start..] {
            let risk_j = 1.0 - predicted[j];
            den += w;
            if risk_i > risk_j {
                num += w;
            } else if risk_i == risk_j {
                num += 0.5 * w;
            }
        }
    }
    if den == 0.0 {
        return Err(CmheError::Degenerate(format!("no comparable pairs at horizon {t}")));
    }
    Ok(num / den)
}

/// `int_0^t S(u) du` by the trapezoid rule on `steps` equal intervals.
pub fn rmst<F: Fn(f64) -> f64>(curve: F, t: f64, steps: usize) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) || steps == 0 {
        return Err(CmheError::invalid(format!("RMST needs a positive horizon and steps, got {t}, {steps}")));
    }
    Ok(trapezoid(&rmst_grid(t, steps).iter().map(|&u| curve(u)).collect::<Vec<_>>(), t / steps as f64))
}

/// Uniform grid `0, h, ..., t` with `steps` intervals.
pub fn rmst_grid(t: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| t * i as f64 / steps as f64).collect()
}

/// Trapezoid rule over equally spaced values.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

/// Point estimate with a percentile-bootstrap 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub half_width: f64,
    pub n: usize,
}

/// Mean of per-member RMST differences `RMST_1 - RMST_0`, with a percentile
/// bootstrap over members.
pub fn cate_rmst(differences: &[f64], resamples: usize, seed: u64) -> Result<EffectEstimate> {
    if differences.is_empty() {
        return Err(CmheError::Degenerate("CATE needs a non-empty group".into()));
    }
    let n = differences.len();
    let mean = differences.iter().sum::<f64>() / n as f64;
    if resamples == 0 {
        return Ok(EffectEstimate { estimate: mean, half_width: 0.0, n });
    }
    let mut rng = substream(seed, Stream::Bootstrap);
    let mut boots: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| differences[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    boots.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&boots, 0.025);
    let hi = quantile_sorted(&boots, 0.975);
    Ok(EffectEstimate { estimate: mean, half_width: 0.5 * (hi - lo), n })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Area under the ROC curve by the Mann-Whitney statistic (midranks).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CmheError::shape("scores and labels must be equally long"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CmheError::invalid("scores must not be NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CmheError::Degenerate("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum += order[i..j].iter().filter(|&&k| labels[k]).count() as f64 * midrank;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: f64,
    pub concordance: f64,
    pub brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizons: Vec<HorizonMetrics>,
    pub integrated_brier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate_rmst: Option<EffectEstimate>,
}

/// `predicted[i][h]` is the survival of sample `i` at `horizons[h]`.
pub fn evaluate_predictions(predicted: &[Vec<f64>], times: &[f64], events: &[bool], horizons: &[f64]) -> Result<MetricsReport> {
    if horizons.is_empty() {
        return Err(CmheError::invalid("need at least one horizon"));
    }
    if predicted.len() != times.len() || predicted.iter().any(|p| p.len() != horizons.len()) {
        return Err(CmheError::shape("prediction table does not match samples x horizons"));
    }
    let t_last = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rows = Vec::with_capacity(horizons.len());
    for (h, &t) in horizons.iter().enumerate() {
        if t > t_last {
            warn!("horizon {t} lies beyond the last observed time {t_last}");
        }
        let column: Vec<f64> = predicted.iter().map(|p| p[h]).collect();
        rows.push(HorizonMetrics {
            horizon: t,
            concordance: concordance_td(&column, times, events, t)?,
            brier: brier_score(&column, times, events, t)?,
        });
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.brier).collect();
    Ok(MetricsReport { integrated_brier: integrated_brier(horizons, &scores)?, horizons: rows, ate_rmst: None })
}

/// Factual predictions (each sample under its observed arm) at the horizons.
pub fn factual_predictions(model: &CmheModel, dataset: &SurvivalDataset, horizons: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut sorted = horizons.to_vec();
    sorted.sort_by(f64::total_cmp);
    let back: Vec<usize> = horizons.iter().map(|h| sorted.partition_point(|s| s < h)).collect();
    dataset
        .records()
        .iter()
        .map(|r| {
            let curve = model.predict_survival(&r.x, r.treated, &sorted)?;
            Ok(back.iter().map(|&i| curve[i]).collect())
        })
        .collect()
}

pub fn evaluate_model(model: &CmheModel, dataset: &SurvivalDataset, horizons: &[f64]) -> Result<MetricsReport> {
    let predicted = factual_predictions(model, dataset, horizons)?;
    evaluate_predictions(&predicted, &dataset.times(), &dataset.events(), horizons)
}

/// Quantiles of the observed event times, e.g. for default horizons.
pub fn event_time_quantiles(dataset: &SurvivalDataset, qs: &[f64]) -> Result<Vec<f64>> {
    let mut t: Vec<f64> = dataset.records().iter().filter(|r| r.event).map(|r| r.time).collect();
    if t.is_empty() {
        return Err(CmheError::Degenerate("no events".into()));
    }
    t.sort_by(f64::total_cmp);
    Ok(qs.iter().map(|&q| quantile_sorted(&t, q)).collect())
}
