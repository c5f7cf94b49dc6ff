//! Stochastic EM training loop.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, SurvivalDataset, SurvivalRecord, StandardizationStats};
use crate::error::{CmheError, Result};
use crate::network::{adam_step, CmheParams, OptimizerState};
use crate::rng::{substream, Stream};

use super::baseline::{breslow_update, recenter_hazard_heads, BaselineSurvival};
use super::likelihood::{e_step, full_loglik, sample_prior};
use super::objective::q_hat_with_grad;
use super::CmheModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Number of baseline survival clusters.
    pub k: usize,
    /// Number of treatment effect phenogroups.
    pub m: usize,
    /// Widths of the tanh encoder layers; empty for a linear model.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Spline penalty; `None` selects it by GCV on the first refresh.
    pub smoothing: Option<f64>,
    pub seed: u64,
    pub standardize: bool,
    /// Fraction of the training data held out for early stopping.
    pub validation_fraction: f64,
    /// Keep the treatment effects at zero.
    pub freeze_omega: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 3,
            m: 2,
            hidden: vec![50],
            batch_size: 256,
            learning_rate: 1e-3,
            max_epochs: 1000,
            patience: 50,
            smoothing: None,
            seed: 0,
            standardize: true,
            validation_fraction: 0.25,
            freeze_omega: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CmheError::invalid(msg));
        if self.k == 0 || self.m == 0 {
            return fail(format!("K and M must be at least 1 (K={}, M={})", self.k, self.m));
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if let Some(l) = self.smoothing {
            if !(l.is_finite() && l >= 0.0) {
                return fail(format!("smoothing must be finite and non-negative, got {l}"));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail(format!("validation_fraction must lie in (0, 1), got {}", self.validation_fraction));
        }
        Ok(())
    }
}

/// One row of the training log. Epoch 0 is the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample `Q_hat` over the epoch's minibatches (zero at epoch 0).
    pub mean_q_hat: f64,
    pub train_loglik: f64,
    pub validation_loglik: f64,
    /// Whether this epoch's model became the retained checkpoint.
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: CmheModel,
    pub history: Vec<EpochRecord>,
}

impl FitOutcome {
    pub fn best_epoch(&self) -> usize {
        self.history.iter().rev().find(|r| r.best).map_or(0, |r| r.epoch)
    }
}

/// Fits a model and returns it with its per-epoch history.
pub fn fit(dataset: &SurvivalDataset, config: &FitConfig) -> Result<CmheModel> {
    Ok(fit_with_history(dataset, config)?.model)
}

fn holdout(n: usize, fraction: f64, seed: u64, records: &[SurvivalRecord]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, Stream::Validation));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    if train.len() < 2 || !train.iter().any(|&i| records[i].event) {
        return Err(CmheError::Degenerate("training part of the holdout split has no events".into()));
    }
    Ok((train, val))
}

pub fn fit_with_history(dataset: &SurvivalDataset, config: &FitConfig) -> Result<FitOutcome> {
    config.validate()?;
    let (data, stats) = if config.standardize {
        standardize(dataset)?
    } else {
        (dataset.clone(), StandardizationStats::identity(dataset.feature_names()))
    };
    let all = data.records();
    let (train_idx, val_idx) = holdout(all.len(), config.validation_fraction, config.seed, all)?;
    let train: Vec<SurvivalRecord> = train_idx.iter().map(|&i| all[i].clone()).collect();
    let val: Vec<SurvivalRecord> = val_idx.iter().map(|&i| all[i].clone()).collect();

    let mut params = CmheParams::init(stats.output_dim(), &config.hidden, config.k, config.m, config.seed)?;
    let mut optimizer = OptimizerState::for_params(&params, config.learning_rate);
    let mut batch_rng = substream(config.seed, Stream::Minibatch);
    let mut post_rng = substream(config.seed, Stream::HardPosterior);

    let prior = sample_prior(&params, &train, &mut post_rng)?;
    recenter_hazard_heads(&mut params, &train, &prior)?;
    let mut baselines = breslow_update(&params, &train, &prior, None, config.smoothing)?;
    let smoothing = Some(baselines.smoothing);
    debug!("baseline smoothing penalty {}", baselines.smoothing);

    let diverged = |epoch: usize, e: CmheError| CmheError::Divergence { epoch, message: e.to_string() };
    let mut best_ll = full_loglik(&params, &baselines, &val).map_err(|e| diverged(0, e))?;
    let mut best: (CmheParams, BaselineSurvival) = (params.clone(), baselines.clone());
    let mut history = vec![EpochRecord {
        epoch: 0,
        mean_q_hat: 0.0,
        train_loglik: full_loglik(&params, &baselines, &train).map_err(|e| diverged(0, e))?,
        validation_loglik: best_ll,
        best: true,
    }];
    info!("epoch 0: validation log-likelihood {best_ll:.4}");

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut batch_rng);
        let mut q_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<SurvivalRecord> = chunk.iter().map(|&i| train[i].clone()).collect();
            let post = e_step(&params, &baselines, &batch, &mut post_rng).map_err(|e| diverged(epoch, e))?;
            let (q, mut grad) = q_hat_with_grad(&params, &batch, &post)?;
            if !q.is_finite() {
                return Err(diverged(epoch, CmheError::NonFinite { block: "objective".into() }));
            }
            q_total += q;
            if config.freeze_omega {
                grad.omega.iter_mut().for_each(|g| *g = 0.0);
            }
            let scale = -1.0 / batch.len() as f64;
            grad.blocks_mut().into_iter().for_each(|b| b.iter_mut().for_each(|g| *g *= scale));
            adam_step(&mut params, &grad, &mut optimizer).map_err(|e| diverged(epoch, e))?;
        }

        let post = e_step(&params, &baselines, &train, &mut post_rng).map_err(|e| diverged(epoch, e))?;
        recenter_hazard_heads(&mut params, &train, &post)?;
        baselines = breslow_update(&params, &train, &post, Some(&baselines), smoothing)?;
        let train_ll = full_loglik(&params, &baselines, &train).map_err(|e| diverged(epoch, e))?;
        let val_ll = full_loglik(&params, &baselines, &val).map_err(|e| diverged(epoch, e))?;
        let improved = val_ll > best_ll;
        if improved {
            best_ll = val_ll;
            best = (params.clone(), baselines.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(EpochRecord {
            epoch,
            mean_q_hat: q_total / train.len() as f64,
            train_loglik: train_ll,
            validation_loglik: val_ll,
            best: improved,
        });
        info!("epoch {epoch}: validation log-likelihood {val_ll:.4}{}", if improved { " (best)" } else { "" });
        if stale >= config.patience {
            debug!("early stop after epoch {epoch}");
            break;
        }
    }

    let (params, mut baselines) = best;
    baselines.smoothing = smoothing.unwrap_or(baselines.smoothing);
    let model = CmheModel::new(params, baselines, stats, config.clone())?;
    Ok(FitOutcome { model, history })
}
