use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cmhe::data::{load_csv, split_indices, write_csv, ColumnSchema};
use cmhe::metrics::{cate_rmst, evaluate_model, event_time_quantiles, EffectEstimate};
use cmhe::model::fit_with_history;
use cmhe::phenotype::{
    group_effect, membership, phi_probabilities, rank_phenogroups, rmst_differences, CounterfactualEstimator,
    GroupEffect, ModelEstimator, OracleEstimator, PhenogroupRanking, PhenotypeSettings,
};
use cmhe::synthetic::{generate, read_truth_csv, write_truth_csv, GroundTruth, SyntheticConfig};
use cmhe::{CmheModel, SurvivalDataset};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{self, path, Arm, EvaluateConfig, PhenotypeConfig, PredictConfig, SimulateConfig, TrainConfig};
use crate::output::{sibling, OutputSet};
use crate::{ColumnArgs, EvaluateArgs, PhenotypeArgs, PredictArgs, SimulateArgs, TrainArgs};

/// Written next to every command's outputs. `config` is the fully resolved
/// configuration and can be passed back through `--config`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub command: String,
    pub version: String,
    pub config: C,
    pub outputs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

fn finish<C: Serialize>(
    mut out: OutputSet,
    manifest_path: PathBuf,
    command: &str,
    config: &C,
    summary: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config,
        outputs: out.paths(),
        summary,
    };
    out.add_json(manifest_path, &manifest)?;
    for p in out.commit()? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn override_columns(schema: &mut ColumnSchema, args: ColumnArgs) {
    if let Some(v) = args.time_col {
        schema.time = v;
    }
    if let Some(v) = args.event_col {
        schema.event = v;
    }
    if let Some(v) = args.treatment_col {
        schema.treatment = v;
    }
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

fn set_opt<T>(target: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *target = value;
    }
}

fn load_data(p: &Path, schema: &ColumnSchema) -> Result<SurvivalDataset> {
    load_csv(p, schema).with_context(|| format!("loading {}", p.display()))
}

fn load_model(p: &Path) -> Result<CmheModel> {
    CmheModel::load(p).with_context(|| format!("loading model {}", p.display()))
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn dataset_bytes(ds: &SurvivalDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(ds, &mut buf)?;
    Ok(buf)
}

fn truth_bytes(truth: &[GroundTruth]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_truth_csv(truth, &mut buf)?;
    Ok(buf)
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimulateConfig = config::load(a.config.as_deref())?;
    set_opt(&mut cfg.out_dir, a.out);
    set_opt(&mut cfg.train_fraction, a.train_fraction);
    set(&mut cfg.synthetic.n, a.n);
    set(&mut cfg.synthetic.seed, a.seed);
    set(&mut cfg.synthetic.effect_magnitude, a.effect_magnitude);
    set(&mut cfg.synthetic.p_event, a.p_event);
    cfg.validate()?;

    let data = generate(&cfg.synthetic)?;
    let dir = path(&cfg.out_dir);
    let mut out = OutputSet::default();
    out.add(dir.join("data.csv"), dataset_bytes(&data.dataset)?);
    out.add(dir.join("truth.csv"), truth_bytes(&data.truth)?);
    if let Some(f) = cfg.train_fraction {
        let (train, test) = split_indices(&data.dataset, f, cfg.synthetic.seed)?;
        for (name, idx) in [("train", train), ("test", test)] {
            out.add(dir.join(format!("{name}.csv")), dataset_bytes(&data.dataset.subset(&idx)?)?);
            let truth: Vec<GroundTruth> = idx.iter().map(|&i| data.truth[i]).collect();
            out.add(dir.join(format!("{name}_truth.csv")), truth_bytes(&truth)?);
        }
    }
    let summary = serde_json::json!({
        "n": data.dataset.n(),
        "events": data.dataset.n_events(),
        "phi_true_fraction": data.truth.iter().filter(|g| g.phi_true == 1).count() as f64 / data.truth.len() as f64,
    });
    finish(out, dir.join("manifest.json"), "simulate", &cfg, summary)
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| w.trim().parse::<usize>().with_context(|| format!("bad hidden width `{w}`")))
        .collect()
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = config::load(a.config.as_deref())?;
    set_opt(&mut cfg.data, a.data);
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.log, a.log);
    override_columns(&mut cfg.columns, a.columns);
    let fit = &mut cfg.fit;
    set(&mut fit.k, a.k);
    set(&mut fit.m, a.m);
    if let Some(h) = a.hidden {
        fit.hidden = parse_hidden(&h)?;
    }
    set(&mut fit.batch_size, a.batch_size);
    set(&mut fit.learning_rate, a.learning_rate);
    set(&mut fit.max_epochs, a.max_epochs);
    set(&mut fit.patience, a.patience);
    set_opt(&mut fit.smoothing, a.smoothing);
    set(&mut fit.seed, a.seed);
    set(&mut fit.validation_fraction, a.validation_fraction);
    if a.no_standardize {
        fit.standardize = false;
    }
    if a.freeze_omega {
        fit.freeze_omega = true;
    }
    let model_path = path(&cfg.model).to_path_buf();
    cfg.log.get_or_insert_with(|| sibling(&model_path, "log.csv"));
    cfg.validate()?;

    let data = load_data(path(&cfg.data), &cfg.columns)?;
    let outcome = fit_with_history(&data, &cfg.fit)?;
    let json = outcome.model.to_json()?;
    CmheModel::from_json(&json).context("serialized model failed validation")?;

    let header = ["epoch", "mean_q_hat", "train_loglik", "validation_loglik", "best"].map(String::from);
    let rows = outcome.history.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            r.mean_q_hat.to_string(),
            r.train_loglik.to_string(),
            r.validation_loglik.to_string(),
            u8::from(r.best).to_string(),
        ]
    });
    let mut out = OutputSet::default();
    out.add(&model_path, json.into_bytes());
    out.add(path(&cfg.log), csv_bytes(&header, rows)?);
    let best = outcome.best_epoch();
    let summary = serde_json::json!({
        "epochs": outcome.history.len() - 1,
        "best_epoch": best,
        "best_validation_loglik": outcome.history.iter().find(|r| r.epoch == best).map(|r| r.validation_loglik),
        "smoothing": outcome.model.baselines.smoothing,
    });
    finish(out, sibling(&model_path, "manifest.json"), "train", &cfg, summary)
}

/// Strictly ascending horizons from the event-time quantiles.
fn default_horizons(ds: &SurvivalDataset, qs: &[f64]) -> Result<Vec<f64>> {
    let mut h: Vec<f64> = event_time_quantiles(ds, qs)?.into_iter().filter(|&t| t > 0.0).collect();
    h.dedup();
    if h.is_empty() {
        bail!("could not derive positive horizons from the event times");
    }
    Ok(h)
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg: EvaluateConfig = config::load(a.config.as_deref())?;
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.data, a.data);
    override_columns(&mut cfg.columns, a.columns);
    set_opt(&mut cfg.horizons, a.horizons);
    set_opt(&mut cfg.report, a.report);
    set_opt(&mut cfg.curves, a.curves);
    set(&mut cfg.curve_points, a.curve_points);
    set_opt(&mut cfg.ate_horizon, a.ate_horizon);
    set(&mut cfg.bootstrap, a.bootstrap);
    set(&mut cfg.seed, a.seed);
    let report_path = path(&cfg.report).to_path_buf();
    cfg.curves.get_or_insert_with(|| sibling(&report_path, "curves.csv"));
    cfg.validate()?;

    let model = load_model(path(&cfg.model))?;
    let data = load_data(path(&cfg.data), &cfg.columns)?;
    if cfg.horizons.is_none() {
        cfg.horizons = Some(default_horizons(&data, &[0.25, 0.5, 0.75])?);
    }
    let horizons = cfg.horizons.clone().unwrap_or_default();
    let mut report = evaluate_model(&model, &data, &horizons)?;
    if let Some(t) = cfg.ate_horizon {
        let diffs = rmst_differences(&ModelEstimator { model: &model }, &data, t)?;
        report.ate_rmst = Some(cate_rmst(&diffs, cfg.bootstrap, cfg.seed)?);
    }

    let t_max = data.times().into_iter().fold(0.0, f64::max);
    let steps = cfg.curve_points - 1;
    let grid: Vec<f64> = (0..=steps).map(|i| t_max * i as f64 / steps as f64).collect();
    let mut mean = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
    for r in data.records() {
        for (arm, treated) in [(0, true), (1, false)] {
            let s = model.predict_survival(&r.x, treated, &grid)?;
            mean[arm].iter_mut().zip(s).for_each(|(m, v)| *m += v);
        }
    }
    let n = data.n() as f64;
    let header = ["time", "treated", "control"].map(String::from);
    let rows = (0..grid.len()).map(|i| {
        vec![grid[i].to_string(), (mean[0][i] / n).to_string(), (mean[1][i] / n).to_string()]
    });

    let mut out = OutputSet::default();
    out.add_json(&report_path, &report)?;
    out.add(path(&cfg.curves), csv_bytes(&header, rows)?);
    finish(out, sibling(&report_path, "manifest.json"), "evaluate", &cfg, serde_json::Value::Null)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PhenotypeReport {
    pub estimator: String,
    pub horizon: f64,
    pub target_fraction: f64,
    /// Test-split effect of the group ranked first on the training split.
    pub enhanced: Option<GroupEffect>,
    /// Test-split effect of the group ranked last on the training split.
    pub diminished: Option<GroupEffect>,
    /// Test-split effects in training-rank order.
    pub test_groups: Vec<GroupEffect>,
    pub test_ate: EffectEstimate,
    pub train_ranking: PhenogroupRanking,
}

struct Oracle {
    config: SyntheticConfig,
    train: Vec<GroundTruth>,
    test: Vec<GroundTruth>,
}

fn read_truth(p: &Path, n: usize) -> Result<Vec<GroundTruth>> {
    let truth = read_truth_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)
        .with_context(|| format!("reading {}", p.display()))?;
    if truth.len() != n {
        bail!("{} has {} rows but the data has {n}", p.display(), truth.len());
    }
    Ok(truth)
}

pub fn phenotype(a: PhenotypeArgs) -> Result<()> {
    let mut cfg: PhenotypeConfig = config::load(a.config.as_deref())?;
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.train, a.train);
    set_opt(&mut cfg.test, a.test);
    override_columns(&mut cfg.columns, a.columns);
    set(&mut cfg.target_fraction, a.target_fraction);
    set_opt(&mut cfg.horizon, a.horizon);
    set(&mut cfg.bootstrap, a.bootstrap);
    set(&mut cfg.seed, a.seed);
    set_opt(&mut cfg.report, a.report);
    set_opt(&mut cfg.assignments, a.assignments);
    if a.oracle_manifest.is_some() {
        cfg.oracle = Some(config::OracleFiles {
            manifest: a.oracle_manifest,
            train_truth: a.train_truth,
            test_truth: a.test_truth,
        });
    }
    let report_path = path(&cfg.report).to_path_buf();
    cfg.assignments.get_or_insert_with(|| sibling(&report_path, "groups.csv"));
    cfg.validate()?;

    let model = load_model(path(&cfg.model))?;
    let train = load_data(path(&cfg.train), &cfg.columns)?;
    let test = load_data(path(&cfg.test), &cfg.columns)?;
    if cfg.horizon.is_none() {
        cfg.horizon = Some(default_horizons(&train, &[0.75])?[0]);
    }
    let settings = PhenotypeSettings {
        horizon: cfg.horizon.unwrap_or_default(),
        target_fraction: cfg.target_fraction,
        bootstrap: cfg.bootstrap,
        seed: cfg.seed,
    };

    let oracle = match &cfg.oracle {
        Some(o) => {
            let sim: SimulateConfig = config::load(Some(path(&o.manifest)))?;
            Some(Oracle {
                config: sim.synthetic,
                train: read_truth(path(&o.train_truth), train.n())?,
                test: read_truth(path(&o.test_truth), test.n())?,
            })
        }
        None => None,
    };
    let model_est = ModelEstimator { model: &model };
    let (train_est, test_est): (Box<dyn CounterfactualEstimator + '_>, Box<dyn CounterfactualEstimator + '_>) =
        match &oracle {
            Some(o) => (
                Box::new(OracleEstimator { config: &o.config, truth: &o.train }),
                Box::new(OracleEstimator { config: &o.config, truth: &o.test }),
            ),
            None => (Box::new(ModelEstimator { model: &model }), Box::new(model_est)),
        };

    let ranking = rank_phenogroups(&model, &train, train_est.as_ref(), &settings)?;
    let probs = phi_probabilities(&model, &test)?;
    let diffs = rmst_differences(test_est.as_ref(), &test, settings.horizon)?;
    let mut test_groups = Vec::new();
    for g in &ranking.groups {
        if let Some(e) = group_effect(&probs, &diffs, g.group, &settings)? {
            test_groups.push(e);
        }
    }
    let on_test = |group: usize| test_groups.iter().find(|e| e.group == group).cloned();
    let report = PhenotypeReport {
        estimator: ranking.estimator.clone(),
        horizon: settings.horizon,
        target_fraction: settings.target_fraction,
        enhanced: on_test(ranking.enhanced().group),
        diminished: on_test(ranking.diminished().group),
        test_ate: cate_rmst(&diffs, settings.bootstrap, settings.seed)?,
        test_groups: test_groups.clone(),
        train_ranking: ranking,
    };

    let flags = |g: &Option<GroupEffect>| -> Vec<bool> {
        match g {
            Some(e) => membership(&probs.iter().map(|p| p[e.group]).collect::<Vec<_>>(), e.alpha),
            None => vec![false; probs.len()],
        }
    };
    let enhanced = flags(&report.enhanced);
    let diminished = flags(&report.diminished);
    let mut header = vec!["row".to_string()];
    header.extend((0..model.m()).map(|m| format!("phi_{m}")));
    header.extend(["enhanced".to_string(), "diminished".to_string()]);
    let rows = probs.iter().enumerate().map(|(i, p)| {
        let mut row = vec![i.to_string()];
        row.extend(p.iter().map(f64::to_string));
        row.push(u8::from(enhanced[i]).to_string());
        row.push(u8::from(diminished[i]).to_string());
        row
    });

    let mut out = OutputSet::default();
    out.add_json(&report_path, &report)?;
    out.add(path(&cfg.assignments), csv_bytes(&header, rows)?);
    finish(out, sibling(&report_path, "manifest.json"), "phenotype", &cfg, serde_json::Value::Null)
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let mut cfg: PredictConfig = config::load(a.config.as_deref())?;
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.data, a.data);
    override_columns(&mut cfg.columns, a.columns);
    set(&mut cfg.arm, a.arm);
    set(&mut cfg.times, a.times);
    set_opt(&mut cfg.out, a.out);
    cfg.validate()?;

    let model = load_model(path(&cfg.model))?;
    let data = load_data(path(&cfg.data), &cfg.columns)?;
    let mut rows = Vec::with_capacity(data.n());
    for (i, r) in data.records().iter().enumerate() {
        let treated = match cfg.arm {
            Arm::Treated => true,
            Arm::Control => false,
            Arm::Observed => r.treated,
        };
        let s = model.predict_survival(&r.x, treated, &cfg.times)?;
        if let Some(v) = s.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            bail!("row {i}: survival {v} outside (0, 1]");
        }
        let mut row = vec![i.to_string()];
        row.extend(s.iter().map(f64::to_string));
        rows.push(row);
    }
    let mut header = vec!["row".to_string()];
    header.extend(cfg.times.iter().map(f64::to_string));

    let out_path = path(&cfg.out).to_path_buf();
    let mut out = OutputSet::default();
    out.add(&out_path, csv_bytes(&header, rows)?);
    finish(out, sibling(&out_path, "manifest.json"), "predict", &cfg, serde_json::Value::Null)
}
