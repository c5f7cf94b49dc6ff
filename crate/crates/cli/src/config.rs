//! Per-command run configurations. Each one can be read from a JSON document
//! (or from the `config` field of a manifest written by an earlier run) and
//! is then overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cmhe::data::ColumnSchema;
use cmhe::synthetic::SyntheticConfig;
use cmhe::FitConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(obj) = value.as_object_mut() {
        if obj.contains_key("command") && obj.contains_key("config") {
            value = obj.remove("config").unwrap_or_default();
        }
    }
    serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
}

fn require<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| anyhow!("missing required setting `{name}`"))
}

fn check_fraction(value: f64, name: &str, closed_right: bool) -> Result<()> {
    let ok = value > 0.0 && (value < 1.0 || (closed_right && value == 1.0));
    if !ok {
        bail!("{name} must lie in (0, 1{}, got {value}", if closed_right { "]" } else { ")" });
    }
    Ok(())
}

fn check_times(times: &[f64], name: &str, strictly_positive: bool) -> Result<()> {
    if times.is_empty() {
        bail!("{name} must not be empty");
    }
    for w in times.windows(2) {
        if !(w[0] < w[1]) {
            bail!("{name} must be strictly ascending");
        }
    }
    let low_ok = if strictly_positive { times[0] > 0.0 } else { times[0] >= 0.0 };
    if !low_ok || !times.iter().all(|t| t.is_finite()) {
        bail!("{name} must be finite and {}", if strictly_positive { "positive" } else { "non-negative" });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub out_dir: Option<PathBuf>,
    /// When set, also writes a train/test split with this train fraction.
    pub train_fraction: Option<f64>,
    pub synthetic: SyntheticConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { out_dir: None, train_fraction: None, synthetic: SyntheticConfig::default() }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.out_dir, "out_dir")?;
        if let Some(f) = self.train_fraction {
            check_fraction(f, "train_fraction", false)?;
        }
        self.synthetic.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub data: Option<PathBuf>,
    pub columns: ColumnSchema,
    pub model: Option<PathBuf>,
    /// Per-epoch CSV log; defaults to `<model stem>.log.csv`.
    pub log: Option<PathBuf>,
    pub fit: FitConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.data, "data")?;
        require(&self.model, "model")?;
        self.fit.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub columns: ColumnSchema,
    /// Defaults to the quartiles of the observed event times.
    pub horizons: Option<Vec<f64>>,
    pub report: Option<PathBuf>,
    /// Mean survival per arm; defaults to `<report stem>.curves.csv`.
    pub curves: Option<PathBuf>,
    pub curve_points: usize,
    /// Restriction time for the RMST average treatment effect, if wanted.
    pub ate_horizon: Option<f64>,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            columns: ColumnSchema::default(),
            horizons: None,
            report: None,
            curves: None,
            curve_points: 100,
            ate_horizon: None,
            bootstrap: cmhe::metrics::DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

impl EvaluateConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.model, "model")?;
        require(&self.data, "data")?;
        require(&self.report, "report")?;
        if let Some(h) = &self.horizons {
            check_times(h, "horizons", true)?;
        }
        if self.curve_points < 2 {
            bail!("curve_points must be at least 2");
        }
        if let Some(t) = self.ate_horizon {
            check_times(&[t], "ate_horizon", true)?;
        }
        Ok(())
    }
}

/// Ground truth for the oracle counterfactual estimator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleFiles {
    /// Manifest written by `simulate`.
    pub manifest: Option<PathBuf>,
    pub train_truth: Option<PathBuf>,
    pub test_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhenotypeConfig {
    pub model: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub columns: ColumnSchema,
    pub target_fraction: f64,
    /// Defaults to the 0.75 quantile of the training event times.
    pub horizon: Option<f64>,
    pub bootstrap: usize,
    pub seed: u64,
    pub oracle: Option<OracleFiles>,
    pub report: Option<PathBuf>,
    /// Per-sample test-split assignments; defaults to `<report stem>.groups.csv`.
    pub assignments: Option<PathBuf>,
}

impl Default for PhenotypeConfig {
    fn default() -> Self {
        Self {
            model: None,
            train: None,
            test: None,
            columns: ColumnSchema::default(),
            target_fraction: 0.15,
            horizon: None,
            bootstrap: cmhe::metrics::DEFAULT_BOOTSTRAP,
            seed: 0,
            oracle: None,
            report: None,
            assignments: None,
        }
    }
}

impl PhenotypeConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.model, "model")?;
        require(&self.train, "train")?;
        require(&self.test, "test")?;
        require(&self.report, "report")?;
        check_fraction(self.target_fraction, "target_fraction", true)?;
        if let Some(h) = self.horizon {
            check_times(&[h], "horizon", true)?;
        }
        if let Some(o) = &self.oracle {
            require(&o.manifest, "oracle.manifest")?;
            require(&o.train_truth, "oracle.train_truth")?;
            require(&o.test_truth, "oracle.test_truth")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treated,
    Control,
    #[default]
    Observed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub columns: ColumnSchema,
    pub arm: Arm,
    pub times: Vec<f64>,
    pub out: Option<PathBuf>,
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.model, "model")?;
        require(&self.data, "data")?;
        require(&self.out, "out")?;
        check_times(&self.times, "times", false)?;
        Ok(())
    }
}

pub fn path(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("validated")
}
