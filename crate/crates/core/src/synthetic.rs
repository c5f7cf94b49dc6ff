//! Synthetic benchmark with known latent structure: Gaussian blobs drive the
//! baseline cluster, an L1-ball rule on two uniform features decides who
//! benefits from treatment, and event times are Gompertz.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, SurvivalRecord};
use crate::error::{CmheError, Result};
use crate::rng::{substream, Stream};

/// Per-cluster coefficients on `(x1, x2, x3, x4)`, drawn once from a standard
/// normal (ChaCha8, seed 0) and rounded to four decimals.
pub const DEFAULT_BETA: [[f64; 4]; 3] = [
    [0.7, -0.1441, 0.3029, -1.3745],
    [1.2003, 0.1108, 1.3579, 0.9929],
    [1.0702, -2.0595, 1.5146, 0.9174],
];

pub const DEFAULT_CENTERS: [[f64; 2]; 3] = [[-3.0, 0.0], [3.0, 0.0], [0.0, 4.0]];

pub const FEATURE_NAMES: [&str; 4] = ["x1", "x2", "x3", "x4"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub centers: Vec<[f64; 2]>,
    pub blob_sd: f64,
    pub beta: Vec<[f64; 4]>,
    pub gompertz_shape: f64,
    /// Size of the treatment shift in the log hazard scale.
    pub effect_magnitude: f64,
    /// Probability that the event is observed rather than censored.
    pub p_event: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            centers: DEFAULT_CENTERS.to_vec(),
            blob_sd: 1.0,
            beta: DEFAULT_BETA.to_vec(),
            gompertz_shape: 1.0,
            effect_magnitude: 1.0,
            p_event: 0.75,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(CmheError::invalid(format!("n must be at least 10, got {}", self.n)));
        }
        if self.centers.is_empty() || self.centers.len() != self.beta.len() {
            return Err(CmheError::invalid("need one coefficient vector per blob center"));
        }
        for (i, a) in self.centers.iter().enumerate() {
            if self.centers[..i].contains(a) {
                return Err(CmheError::invalid("blob centers must be pairwise distinct"));
            }
        }
        let finite = self.centers.iter().flatten().chain(self.beta.iter().flatten()).all(|v| v.is_finite());
        if !finite || !self.effect_magnitude.is_finite() {
            return Err(CmheError::invalid("generator constants must be finite"));
        }
        if !(self.blob_sd.is_finite() && self.blob_sd > 0.0) {
            return Err(CmheError::invalid(format!("blob_sd must be positive, got {}", self.blob_sd)));
        }
        if !(self.gompertz_shape.is_finite() && self.gompertz_shape > 0.0) {
            return Err(CmheError::invalid(format!("gompertz_shape must be positive, got {}", self.gompertz_shape)));
        }
        if !(self.p_event > 0.0 && self.p_event <= 1.0) {
            return Err(CmheError::invalid(format!("p_event must lie in (0, 1], got {}", self.p_event)));
        }
        Ok(())
    }

    /// Treatment shift: benefit (hazard down) for `phi = 1`, harm for `phi = 0`,
    /// nothing for controls.
    pub fn effect(&self, phi: u8, treated: bool) -> f64 {
        match (treated, phi) {
            (false, _) => 0.0,
            (true, 1) => -self.effect_magnitude,
            (true, _) => self.effect_magnitude,
        }
    }

    /// `ln eta = beta_z . x + effect(a, phi)`.
    pub fn log_scale(&self, x: &[f64], z: usize, phi: u8, treated: bool) -> f64 {
        self.beta[z].iter().zip(x).map(|(b, v)| b * v).sum::<f64>() + self.effect(phi, treated)
    }
}

/// Latent labels and the uncensored event time of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Blob cluster, 0-based.
    pub z_true: usize,
    /// 1 when the subject benefits from treatment.
    pub phi_true: u8,
    pub t_star: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: SurvivalDataset,
    pub truth: Vec<GroundTruth>,
}

pub fn phi_rule(x3: f64, x4: f64) -> u8 {
    u8::from(x3.abs() + x4.abs() > 2.0)
}

/// Gompertz survival `exp((eta / b) (1 - e^{b t}))`.
pub fn gompertz_survival(log_eta: f64, shape: f64, t: f64) -> f64 {
    (log_eta.exp() / shape * -(shape * t).exp_m1()).exp()
}

/// Inverse of the Gompertz survival at `u`.
pub fn gompertz_quantile(log_eta: f64, shape: f64, u: f64) -> f64 {
    (-(shape / log_eta.exp()) * u.ln()).ln_1p() / shape
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = substream(config.seed, Stream::Synthetic);
    let k = config.centers.len();
    let mut labels: Vec<usize> = (0..config.n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let blob = Normal::new(0.0, config.blob_sd).map_err(|e| CmheError::invalid(e.to_string()))?;
    let box_u = Uniform::new(-2.0, 2.0).map_err(|e| CmheError::invalid(e.to_string()))?;
    let mut records = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    for &z in &labels {
        let c = config.centers[z];
        let x = vec![
            c[0] + blob.sample(&mut rng),
            c[1] + blob.sample(&mut rng),
            box_u.sample(&mut rng),
            box_u.sample(&mut rng),
        ];
        let phi = phi_rule(x[2], x[3]);
        let treated = rng.random_bool(0.5);
        let log_eta = config.log_scale(&x, z, phi, treated);
        // 1 - U keeps the uniform draw away from zero.
        let u = 1.0 - rng.random::<f64>();
        let t_star = gompertz_quantile(log_eta, config.gompertz_shape, u).max(f64::MIN_POSITIVE);
        let event = rng.random_bool(config.p_event);
        let time = if event {
            t_star
        } else {
            let c = t_star * (1.0 - rng.random::<f64>());
            if c < t_star { c } else { t_star * (1.0 - f64::EPSILON) }
        };
        records.push(SurvivalRecord::new(x, time, event, treated)?);
        truth.push(GroundTruth { z_true: z, phi_true: phi, t_star });
    }
    let names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    Ok(SyntheticData { dataset: SurvivalDataset::new(records, names)?, truth })
}

/// Writes `z_true,phi_true,t_star` rows.
pub fn write_truth_csv<W: std::io::Write>(truth: &[GroundTruth], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for g in truth {
        w.serialize(g)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: std::io::Read>(reader: R) -> Result<Vec<GroundTruth>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<GroundTruth>().enumerate() {
        let g = row.map_err(|e| CmheError::Validation {
            row: i + 1,
            column: "truth".into(),
            message: e.to_string(),
        })?;
        if g.phi_true > 1 || !(g.t_star > 0.0) {
            return Err(CmheError::Validation {
                row: i + 1,
                column: "truth".into(),
                message: "phi_true must be 0/1 and t_star positive".into(),
            });
        }
        out.push(g);
    }
    Ok(out)
}

/// Closed-form counterfactual survival for given latent labels.
pub fn oracle_survival(config: &SyntheticConfig, x: &[f64], z: usize, phi: u8, treated: bool, times: &[f64]) -> Result<Vec<f64>> {
    if z >= config.beta.len() {
        return Err(CmheError::invalid(format!("cluster {z} out of range")));
    }
    if x.len() != 4 {
        return Err(CmheError::shape(format!("expected 4 features, got {}", x.len())));
    }
    let log_eta = config.log_scale(x, z, phi, treated);
    Ok(times.iter().map(|&t| gompertz_survival(log_eta, config.gompertz_shape, t.max(0.0))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_survival() {
        for &(le, b) in &[(0.0, 1.0), (-2.0, 0.5), (1.5, 2.0)] {
            for &u in &[0.01, 0.3, 0.9] {
                let t = gompertz_quantile(le, b, u);
                assert!((gompertz_survival(le, b, t) - u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_and_consistent() {
        let cfg = SyntheticConfig { n: 300, seed: 5, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        for (r, g) in a.dataset.records().iter().zip(&a.truth) {
            assert_eq!(g.phi_true, phi_rule(r.x[2], r.x[3]));
            if r.event {
                assert_eq!(r.time, g.t_star);
            } else {
                assert!(r.time < g.t_star);
            }
        }
    }

    #[test]
    fn oracle_without_effect_ignores_arm() {
        let cfg = SyntheticConfig { effect_magnitude: 0.0, ..Default::default() };
        let x = [0.5, -1.0, 1.5, 0.2];
        let times = [0.0, 0.1, 0.5, 2.0];
        let c = oracle_survival(&cfg, &x, 2, 1, false, &times).unwrap();
        let a = oracle_survival(&cfg, &x, 2, 1, true, &times).unwrap();
        assert_eq!(c, a);
        assert_eq!(c[0], 1.0);
    }

    #[test]
    fn truth_round_trip() {
        let data = generate(&SyntheticConfig { n: 20, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&data.truth, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("z_true,phi_true,t_star\n"));
        assert_eq!(read_truth_csv(&buf[..]).unwrap(), data.truth);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SyntheticConfig { n: 5, ..Default::default() }.validate().is_err());
        assert!(SyntheticConfig { p_event: 0.0, ..Default::default() }.validate().is_err());
        let dup = vec![[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]];
        assert!(SyntheticConfig { centers: dup, ..Default::default() }.validate().is_err());
    }
}
