//! Metrics, the per-kilometer Average baseline, variant runs, long-tail
//! reports and sensitivity sweeps.

use std::io::Write;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureScalers, LabelScaler};
use crate::ingest::make_splits;
use crate::model::params::ModelParams;
use crate::model::{Model, ModelConfig, PreparedDriver, Variant};
use crate::training::{
    fine_tune, meta_tasks, meta_train, pooled_train, split_batches, MetaConfig, ModelObjective, TrainOutcome,
    TripBatch,
};
use crate::types::{group_by_driver, DriverHistory, RoadNetwork, Route, Trip};

/// Denominator floor for MAPE, in energy units.
pub const MAPE_EPS: f64 = 1e-2;
pub const LONG_TAIL_THRESHOLD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// Percent.
    pub mape: f64,
    pub count: usize,
}

/// MSE, MAE and MAPE (percent, denominator `max(|y|, 1e-2)`).
pub fn metrics(preds: &[f64], labels: &[f64]) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Contract("metrics need at least one prediction".into()));
    }
    let n = preds.len() as f64;
    let (mut se, mut ae, mut ape) = (0.0, 0.0, 0.0);
    for (p, y) in preds.iter().zip(labels) {
        let e = y - p;
        se += e * e;
        ae += e.abs();
        ape += e.abs() / y.abs().max(MAPE_EPS);
    }
    Ok(Metrics { mse: se / n, mae: ae / n, mape: 100.0 * ape / n, count: preds.len() })
}

/// Mean energy per kilometer over trips with a label and a positive
/// travelled distance.
pub fn energy_rate_per_km<'a>(trips: impl IntoIterator<Item = &'a Trip>) -> Option<f64> {
    let rates: Vec<f64> = trips
        .into_iter()
        .filter_map(|t| {
            let (y, d) = (t.y_total?, t.distance_m()?);
            (d > 0.0).then(|| y / (d / 1000.0))
        })
        .collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Average baseline: the driver's mean energy per km over training trips
/// times the route length. Drivers without usable history use
/// `global_rate`.
pub fn baseline_average(history: &DriverHistory, route: &Route, network: &RoadNetwork, global_rate: f64) -> Result<f64> {
    let rate = energy_rate_per_km(history.train_trips()).unwrap_or(global_rate);
    Ok(rate * network.route_length_m(route)? / 1000.0)
}

/// Test predictions of one driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverResult {
    pub driver_id: String,
    pub train_count: usize,
    pub trip_ids: Vec<String>,
    pub preds: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverMetrics {
    pub driver_id: String,
    pub train_count: usize,
    pub metrics: Metrics,
}

/// Metrics in energy units and in label-scaler units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitMetrics {
    pub raw: Metrics,
    pub normalized: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    /// Scaler defining the normalized units.
    pub label_scaler: LabelScaler,
    pub val: Option<UnitMetrics>,
    pub test: Option<UnitMetrics>,
    pub per_driver: Vec<DriverMetrics>,
    pub long_tail_threshold: usize,
    pub long_tail: Option<UnitMetrics>,
    pub long_tail_drivers: usize,
}

fn pooled(results: &[&DriverResult]) -> Option<Metrics> {
    let preds: Vec<f64> = results.iter().flat_map(|r| r.preds.iter().copied()).collect();
    let labels: Vec<f64> = results.iter().flat_map(|r| r.labels.iter().copied()).collect();
    metrics(&preds, &labels).ok()
}

fn pooled_units(results: &[&DriverResult], scaler: &LabelScaler) -> Option<UnitMetrics> {
    let raw = pooled(results)?;
    let norm = |v: &[f64]| v.iter().map(|&y| scaler.forward(y)).collect::<Vec<f64>>();
    let preds: Vec<f64> = results.iter().flat_map(|r| norm(&r.preds)).collect();
    let labels: Vec<f64> = results.iter().flat_map(|r| norm(&r.labels)).collect();
    Some(UnitMetrics { raw, normalized: metrics(&preds, &labels).ok()? })
}

/// Metrics over drivers with fewer than `threshold` training trips; `None`
/// when there are no such drivers (or they have no test trips).
pub fn long_tail_report(results: &[DriverResult], threshold: usize) -> Option<Metrics> {
    let tail: Vec<&DriverResult> = results.iter().filter(|r| r.train_count < threshold).collect();
    pooled(&tail)
}

impl EvalReport {
    pub fn build(
        variant: &str,
        val: &[DriverResult],
        test: &[DriverResult],
        threshold: usize,
        label_scaler: LabelScaler,
    ) -> Self {
        let per_driver = test
            .iter()
            .filter_map(|r| {
                metrics(&r.preds, &r.labels).ok().map(|m| DriverMetrics {
                    driver_id: r.driver_id.clone(),
                    train_count: r.train_count,
                    metrics: m,
                })
            })
            .collect();
        let tail: Vec<&DriverResult> = test.iter().filter(|r| r.train_count < threshold).collect();
        Self {
            variant: variant.to_string(),
            val: pooled_units(&val.iter().collect::<Vec<_>>(), &label_scaler),
            test: pooled_units(&test.iter().collect::<Vec<_>>(), &label_scaler),
            per_driver,
            long_tail_threshold: threshold,
            long_tail: pooled_units(&tail, &label_scaler),
            long_tail_drivers: tail.len(),
            label_scaler,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat rows `variant,split,units,metric,value`. Per-driver splits are
    /// named `driver:<id>` and reported in raw units.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["variant", "split", "units", "metric", "value"])?;
        let mut rows = |split: &str, units: &str, m: &Metrics| -> Result<()> {
            let count = m.count as f64;
            for (metric, value) in [("mse", m.mse), ("mae", m.mae), ("mape", m.mape), ("count", count)] {
                out.write_record([self.variant.as_str(), split, units, metric, &value.to_string()])?;
            }
            Ok(())
        };
        for (split, m) in [("val", &self.val), ("test", &self.test), ("long_tail", &self.long_tail)] {
            if let Some(m) = m {
                rows(split, "raw", &m.raw)?;
                rows(split, "normalized", &m.normalized)?;
            }
        }
        for d in &self.per_driver {
            rows(&format!("driver:{}", d.driver_id), "raw", &d.metrics)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Road network plus split driver histories.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub network: RoadNetwork,
    pub histories: Vec<DriverHistory>,
    pub utc_offset_s: i32,
}

impl Dataset {
    /// Groups trips by driver and splits each driver with `split_seed`.
    pub fn from_trips(network: RoadNetwork, trips: Vec<Trip>, split_seed: u64, utc_offset_s: i32) -> Self {
        let histories = group_by_driver(trips).iter().map(|h| make_splits(h, split_seed)).collect();
        Self { network, histories, utc_offset_s }
    }

    pub fn global_rate(&self) -> f64 {
        energy_rate_per_km(self.histories.iter().flat_map(|h| h.train_trips())).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub meta: MetaConfig,
    /// Fine-tune per driver after global training (meta variants only).
    pub fine_tune: bool,
    pub long_tail_threshold: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), meta: MetaConfig::default(), fine_tune: true, long_tail_threshold: LONG_TAIL_THRESHOLD }
    }
}

/// Everything produced by one variant run.
pub struct VariantRun {
    pub model: Model,
    pub global: ModelParams,
    /// Per-driver parameters, aligned with the dataset's histories; `None`
    /// where the global parameters are used.
    pub personal: Vec<Option<ModelParams>>,
    pub training: TrainOutcome,
    pub report: EvalReport,
}

/// Fits scalers, encodes every driver, and builds a model for `config`.
pub fn prepare(data: &Dataset, config: &ModelConfig) -> Result<(Model, Vec<PreparedDriver>)> {
    let scalers = FeatureScalers::fit(&data.histories, &data.network, data.utc_offset_s)?;
    let model = Model::new(config.clone(), scalers)?;
    let prepared = data
        .histories
        .par_iter()
        .map(|h| model.prepare_driver(h, &data.network))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, prepared))
}

/// Global training: meta-learning for meta variants, pooled training over
/// all training trips for `pec`.
pub fn train_global(model: &Model, prepared: &[PreparedDriver], meta: &MetaConfig) -> Result<(ModelParams, TrainOutcome)> {
    meta.validate()?;
    let obj = ModelObjective { model, drivers: prepared };
    let theta0 = model.init_params(meta.seed);
    let val = split_batches(prepared, |d| &d.splits.val);
    let outcome = if model.config.variant.meta_trained() {
        let tasks = meta_tasks(prepared);
        if tasks.is_empty() {
            return Err(Error::InvalidData("no driver has both support and query trips".into()));
        }
        meta_train(&obj, &theta0.values, &tasks, &val, meta)
    } else {
        let train = split_batches(prepared, |d| &d.splits.train);
        let mean = train.iter().map(|b| b.targets.len()).sum::<usize>() as f64 / train.len().max(1) as f64;
        let weights: Vec<f64> = train.iter().map(|b| b.targets.len() as f64 / mean).collect();
        pooled_train(&obj, &theta0.values, &train, &weights, &val, meta)
    };
    let params = ModelParams::new(model.layout.clone(), outcome.theta.clone())?;
    Ok((params, outcome))
}

/// Fine-tunes `global` on driver `u`'s training trips, monitoring its
/// validation trips when it has any. Returns the adapted parameters and
/// the number of steps taken, or `None` when the driver has no labeled
/// training trips.
pub fn fine_tune_driver(
    model: &Model,
    prepared: &[PreparedDriver],
    u: usize,
    global: &ModelParams,
    meta: &MetaConfig,
) -> Result<Option<(ModelParams, usize)>> {
    let obj = ModelObjective { model, drivers: prepared };
    let d = &prepared[u];
    let pick = |idx: &[usize]| {
        let t: Vec<usize> = idx.iter().copied().filter(|&i| d.is_labeled(i)).collect();
        (!t.is_empty()).then_some(TripBatch { driver: u, targets: t })
    };
    let train = pick(&d.splits.train);
    let val = pick(&d.splits.val);
    let out = fine_tune(&obj, &global.values, train.as_ref(), val.as_ref(), meta.finetune_lr, meta.finetune_max_steps, meta);
    if out.untouched {
        return Ok(None);
    }
    Ok(Some((ModelParams::new(global.layout.clone(), out.theta)?, out.steps)))
}

/// Predictions for the trips `pick` selects from each driver.
pub fn predict_split(
    model: &Model,
    prepared: &[PreparedDriver],
    data: &Dataset,
    global: &ModelParams,
    personal: &[Option<ModelParams>],
    pick: impl Fn(&PreparedDriver) -> &[usize] + Sync,
) -> Vec<DriverResult> {
    prepared
        .par_iter()
        .enumerate()
        .map(|(u, d)| {
            let params = personal.get(u).and_then(|p| p.as_ref()).unwrap_or(global);
            let history = &data.histories[u];
            let mut r = DriverResult {
                driver_id: d.driver_id.clone(),
                train_count: d.train_count(),
                trip_ids: Vec::new(),
                preds: Vec::new(),
                labels: Vec::new(),
            };
            for &i in pick(d) {
                let trip = &history.trips[i];
                let Some(y) = trip.y_total else { continue };
                let est = model.predict(params, d, i, &trip.route.segments);
                r.trip_ids.push(trip.id.clone());
                r.preds.push(est.total);
                r.labels.push(y);
            }
            r
        })
        .collect()
}

/// Average-baseline predictions on each driver's test trips.
pub fn baseline_results(data: &Dataset) -> Result<Vec<DriverResult>> {
    let global = data.global_rate();
    data.histories
        .iter()
        .map(|h| {
            let mut r = DriverResult {
                driver_id: h.driver_id.clone(),
                train_count: h.splits.train.len(),
                trip_ids: Vec::new(),
                preds: Vec::new(),
                labels: Vec::new(),
            };
            for &i in &h.splits.test {
                let t = &h.trips[i];
                let Some(y) = t.y_total else { continue };
                r.trip_ids.push(t.id.clone());
                r.preds.push(baseline_average(h, &t.route, &data.network, global)?);
                r.labels.push(y);
            }
            Ok(r)
        })
        .collect()
}

pub fn baseline_report(data: &Dataset, threshold: usize) -> Result<EvalReport> {
    let test = baseline_results(data)?;
    let labels: Vec<f64> = data.histories.iter().flat_map(|h| h.train_trips()).filter_map(|t| t.y_total).collect();
    Ok(EvalReport::build("average", &[], &test, threshold, LabelScaler::fit(&labels)))
}

/// Trains and evaluates one variant end to end.
pub fn run_variant(variant: Variant, data: &Dataset, config: &ExperimentConfig) -> Result<VariantRun> {
    let model_cfg = ModelConfig { variant, ..config.model.clone() };
    let (model, prepared) = prepare(data, &model_cfg)?;
    let (global, training) = train_global(&model, &prepared, &config.meta)?;
    info!("{variant}: global training kept epoch {} (val {:?})", training.best_epoch, training.best_val);
    let personal: Vec<Option<ModelParams>> = if config.fine_tune && variant.meta_trained() {
        (0..prepared.len())
            .into_par_iter()
            .map(|u| Ok(fine_tune_driver(&model, &prepared, u, &global, &config.meta)?.map(|(p, _)| p)))
            .collect::<Result<_>>()?
    } else {
        vec![None; prepared.len()]
    };
    let val = predict_split(&model, &prepared, data, &global, &personal, |d| &d.splits.val);
    let test = predict_split(&model, &prepared, data, &global, &personal, |d| &d.splits.test);
    let report = EvalReport::build(variant.as_str(), &val, &test, config.long_tail_threshold, model.scalers.label);
    Ok(VariantRun { model, global, personal, training, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `top_k` or `window`.
    pub param: String,
    pub value: usize,
    pub mape: f64,
    pub mae: f64,
    pub mse: f64,
}

pub const SWEEP_TOP_K: [usize; 5] = [1, 3, 5, 7, 9];
pub const SWEEP_WINDOW: [usize; 4] = [1, 2, 4, 8];

/// Full-model test metrics over `top_k` values (at the configured window)
/// and `window` values (at the configured `top_k`).
pub fn sensitivity_sweep(data: &Dataset, config: &ExperimentConfig, top_ks: &[usize], windows: &[usize]) -> Result<Vec<SweepRow>> {
    let grid = top_ks
        .iter()
        .map(|&k| ("top_k", k, ModelConfig { top_k: k, ..config.model.clone() }))
        .chain(windows.iter().map(|&q| ("window", q, ModelConfig { window: q, ..config.model.clone() })));
    let mut rows = Vec::new();
    for (param, value, model) in grid {
        let run = run_variant(Variant::Full, data, &ExperimentConfig { model, ..config.clone() })?;
        let m = run.report.test.ok_or_else(|| Error::InvalidData("no test trips".into()))?.raw;
        rows.push(SweepRow { param: param.into(), value, mape: m.mape, mae: m.mae, mse: m.mse });
    }
    Ok(rows)
}

/// Rows `param,value,mape,mae,mse`.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
