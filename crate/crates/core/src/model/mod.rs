//! The mixture model: parameters, baselines and the standardization applied to
//! raw features, plus prediction and persistence.

pub mod baseline;
pub mod likelihood;
pub mod objective;
pub mod train;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{StandardizationStats, SurvivalDataset, SurvivalRecord};
use crate::error::{CmheError, Result};
use crate::network::{softmax, CmheParams};

pub use baseline::{breslow, breslow_update, BaselineSurvival, CumulativeHazard, SURVIVAL_FLOOR};
pub use likelihood::{
    conditional_hazard_loglik, conditional_survival, e_step, full_loglik, predict_survival, Posteriors,
};
pub use objective::{partial_loglik_k, q_hat, q_hat_with_grad};
pub use train::{fit, fit_with_history, EpochRecord, FitConfig, FitOutcome};

/// Current model file format version.
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmheModel {
    pub params: CmheParams,
    pub baselines: BaselineSurvival,
    pub standardization: StandardizationStats,
    pub config: FitConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(flatten)]
    model: CmheModel,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl CmheModel {
    pub fn new(
        params: CmheParams,
        baselines: BaselineSurvival,
        standardization: StandardizationStats,
        config: FitConfig,
    ) -> Result<Self> {
        let model = Self { params, baselines, standardization, config };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.baselines.k() != self.params.k() {
            return Err(CmheError::shape("baseline count differs from K"));
        }
        if self.standardization.output_dim() != self.params.input_dim() {
            return Err(CmheError::shape("standardized width differs from the encoder input"));
        }
        BaselineSurvival::new(self.baselines.clusters.clone(), self.baselines.smoothing)?;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn m(&self) -> usize {
        self.params.m()
    }

    /// Raw feature width expected by the prediction methods.
    pub fn input_dim(&self) -> usize {
        self.standardization.input_dim
    }

    /// Maps raw features into the model's input space.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.standardization.apply(x)
    }

    pub fn transform_record(&self, record: &SurvivalRecord) -> Result<SurvivalRecord> {
        Ok(SurvivalRecord { x: self.transform(&record.x)?, ..record.clone() })
    }

    pub fn transform_records(&self, dataset: &SurvivalDataset) -> Result<Vec<SurvivalRecord>> {
        dataset.records().iter().map(|r| self.transform_record(r)).collect()
    }

    /// Mixture survival of a raw feature vector under `do(A = treated)`.
    pub fn predict_survival(&self, x: &[f64], treated: bool, times: &[f64]) -> Result<Vec<f64>> {
        predict_survival(&self.params, &self.baselines, &self.transform(x)?, treated, times)
    }

    /// `P(phi = m | x)` for a raw feature vector.
    pub fn phi_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.params.forward(&self.transform(x)?)?.g_logits))
    }

    /// `P(Z = k | x)` for a raw feature vector.
    pub fn cluster_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.params.forward(&self.transform(x)?)?.f_logits))
    }

    /// `h^k(x)` for a raw feature vector.
    pub fn log_hazards(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.params.forward(&self.transform(x)?)?.h_values)
    }

    pub fn full_loglik(&self, dataset: &SurvivalDataset) -> Result<f64> {
        full_loglik(&self.params, &self.baselines, &self.transform_records(dataset)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile { version: MODEL_VERSION, model: self.clone() };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != MODEL_VERSION {
            return Err(CmheError::Version { found: probe.version, expected: MODEL_VERSION });
        }
        let file: ModelFile = serde_json::from_str(text)?;
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
