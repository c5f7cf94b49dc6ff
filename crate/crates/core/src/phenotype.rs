//! Treatment effect phenogroups: membership by thresholding `P(phi = m | x)`
//! and ranking groups by their RMST treatment effect.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, SurvivalRecord};
use crate::error::{CmheError, Result};
use crate::metrics::{cate_rmst, rmst_grid, trapezoid, EffectEstimate, DEFAULT_BOOTSTRAP, DEFAULT_RMST_STEPS};
use crate::model::CmheModel;
use crate::synthetic::{oracle_survival, GroundTruth, SyntheticConfig};

/// `P(phi | x)` for every record, one row per sample.
pub fn phi_probabilities(model: &CmheModel, dataset: &SurvivalDataset) -> Result<Vec<Vec<f64>>> {
    dataset.records().iter().map(|r| model.phi_probabilities(&r.x)).collect()
}

/// Threshold `alpha` so that `p > alpha` selects the `ceil(target * n)`
/// highest probabilities (plus any ties with the last selected value).
/// The returned value sits halfway to the next strictly lower probability.
pub fn threshold_for_size(probs: &[f64], target_fraction: f64) -> Result<f64> {
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(CmheError::invalid(format!("target fraction must lie in (0, 1], got {target_fraction}")));
    }
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite()) {
        return Err(CmheError::invalid("probabilities must be finite and non-empty"));
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let count = ((target_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let cutoff = sorted[count - 1];
    match sorted[count..].iter().find(|&&p| p < cutoff) {
        Some(&next) => Ok(0.5 * (cutoff + next)),
        None if cutoff > 0.0 => Ok(0.5 * cutoff),
        None => {
            warn!("degenerate probabilities: no threshold reaches fraction {target_fraction}");
            Ok(0.0)
        }
    }
}

pub fn membership(probs: &[f64], alpha: f64) -> Vec<bool> {
    probs.iter().map(|&p| p > alpha).collect()
}

/// Source of counterfactual survival curves for the rows of a dataset.
pub trait CounterfactualEstimator {
    /// Label written to reports.
    fn label(&self) -> &str;

    /// Survival of row `row` under `do(A = treated)` at ascending `times`.
    fn survival(&self, row: usize, record: &SurvivalRecord, treated: bool, times: &[f64]) -> Result<Vec<f64>>;
}

/// Uses the model's own predictions.
pub struct ModelEstimator<'a> {
    pub model: &'a CmheModel,
}

impl CounterfactualEstimator for ModelEstimator<'_> {
    fn label(&self) -> &str {
        "self-evaluated"
    }

    fn survival(&self, _row: usize, record: &SurvivalRecord, treated: bool, times: &[f64]) -> Result<Vec<f64>> {
        self.model.predict_survival(&record.x, treated, times)
    }
}

/// Closed-form curves from the synthetic generator's latent labels.
pub struct OracleEstimator<'a> {
    pub config: &'a SyntheticConfig,
    pub truth: &'a [GroundTruth],
}

impl CounterfactualEstimator for OracleEstimator<'_> {
    fn label(&self) -> &str {
        "oracle"
    }

    fn survival(&self, row: usize, record: &SurvivalRecord, treated: bool, times: &[f64]) -> Result<Vec<f64>> {
        let g = self
            .truth
            .get(row)
            .ok_or_else(|| CmheError::shape(format!("no ground truth for row {row}")))?;
        oracle_survival(self.config, &record.x, g.z_true, g.phi_true, treated, times)
    }
}

/// Per-sample `RMST_1(t) - RMST_0(t)` under the estimator.
pub fn rmst_differences<E: CounterfactualEstimator + ?Sized>(
    estimator: &E,
    dataset: &SurvivalDataset,
    horizon: f64,
) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CmheError::invalid(format!("horizon must be positive, got {horizon}")));
    }
    let grid = rmst_grid(horizon, DEFAULT_RMST_STEPS);
    let h = horizon / DEFAULT_RMST_STEPS as f64;
    dataset
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s1 = estimator.survival(i, r, true, &grid)?;
            let s0 = estimator.survival(i, r, false, &grid)?;
            Ok(trapezoid(&s1, h) - trapezoid(&s0, h))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeSettings {
    pub horizon: f64,
    pub target_fraction: f64,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for PhenotypeSettings {
    fn default() -> Self {
        Self { horizon: 5.0, target_fraction: 0.15, bootstrap: DEFAULT_BOOTSTRAP, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEffect {
    pub group: usize,
    pub alpha: f64,
    pub size: usize,
    pub fraction: f64,
    pub cate: EffectEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenogroupRanking {
    /// Groups ordered by estimated effect, largest first.
    pub groups: Vec<GroupEffect>,
    pub ate: EffectEstimate,
    pub estimator: String,
}

impl PhenogroupRanking {
    pub fn enhanced(&self) -> &GroupEffect {
        &self.groups[0]
    }

    pub fn diminished(&self) -> &GroupEffect {
        &self.groups[self.groups.len() - 1]
    }
}

/// Effect of group `m` selected at the target size on `dataset`.
pub fn group_effect(
    probs: &[Vec<f64>],
    differences: &[f64],
    m: usize,
    settings: &PhenotypeSettings,
) -> Result<Option<GroupEffect>> {
    let column: Vec<f64> = probs.iter().map(|p| p[m]).collect();
    let alpha = threshold_for_size(&column, settings.target_fraction)?;
    let members: Vec<f64> = membership(&column, alpha)
        .iter()
        .zip(differences)
        .filter(|(m, _)| **m)
        .map(|(_, d)| *d)
        .collect();
    if members.is_empty() {
        warn!("phenogroup {m} is empty at the target size");
        return Ok(None);
    }
    Ok(Some(GroupEffect {
        group: m,
        alpha,
        size: members.len(),
        fraction: members.len() as f64 / probs.len() as f64,
        cate: cate_rmst(&members, settings.bootstrap, settings.seed)?,
    }))
}

/// Orders phenogroups by the CATE of their top `target_fraction` members.
pub fn rank_phenogroups<E: CounterfactualEstimator + ?Sized>(
    model: &CmheModel,
    dataset: &SurvivalDataset,
    estimator: &E,
    settings: &PhenotypeSettings,
) -> Result<PhenogroupRanking> {
    let probs = phi_probabilities(model, dataset)?;
    let diffs = rmst_differences(estimator, dataset, settings.horizon)?;
    let mut groups = Vec::new();
    for m in 0..model.m() {
        if let Some(g) = group_effect(&probs, &diffs, m, settings)? {
            groups.push(g);
        }
    }
    if groups.is_empty() {
        return Err(CmheError::Degenerate("every phenogroup is empty".into()));
    }
    groups.sort_by(|a, b| b.cate.estimate.total_cmp(&a.cate.estimate).then(a.group.cmp(&b.group)));
    Ok(PhenogroupRanking {
        groups,
        ate: cate_rmst(&diffs, settings.bootstrap, settings.seed)?,
        estimator: estimator.label().to_string(),
    })
}
