use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{event_confusion, event_confusion_flags, rmse, ConfusionCounts, DEFAULT_TRIGGER};
use super::ttest::PValueMatrix;
use super::Method;
use crate::domain::{spatial_features, GeoPoint, StationAttributes, StationId, StationSeries, N_SPATIAL_FEATURES};
use crate::ensemble::{baseline_split, intermediate_weight, mean, station_distances, weighted_mean, weighted_vote, SubmodelBank};
use crate::error::{Error, Result};
use crate::features::{self, climate_features, DEFAULT_HORIZON};
use crate::geostats::{
    fallback_variogram, fit_samples, fit_variogram, idw, ordinary_kriging, pooled_semivariogram, SamplePoint,
    VariogramKind, VariogramModel, DEFAULT_BINS,
};
use crate::neuralnet::Samples;

pub const REPORT_VERSION: u64 = 1;

/// Rows per target used to fit a frozen variogram.
const FROZEN_ROWS_PER_TARGET: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub horizon: usize,
    pub trigger: f64,
    /// Only timestamps divisible by this many minutes are evaluated.
    pub eval_stride: i64,
    pub idw_power: f64,
    pub variogram: VariogramKind,
    pub variogram_bins: usize,
    /// Fit one variogram per fold and station subset instead of one per
    /// timestep.
    pub freeze_variogram: bool,
    /// Trailing share of each station's rows the baseline is scored on.
    pub baseline_holdout: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![Method::Average, Method::WeightedAverage, Method::WeightedVote, Method::Baseline],
            horizon: DEFAULT_HORIZON,
            trigger: DEFAULT_TRIGGER,
            eval_stride: 1,
            idw_power: 2.0,
            variogram: VariogramKind::Spherical,
            variogram_bins: DEFAULT_BINS,
            freeze_variogram: false,
            baseline_holdout: 0.2,
        }
    }
}

/// Submodel predictions for one test station, computed once and shared by
/// every method and station subset.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub target: StationId,
    pub attrs: StationAttributes,
    pub timestamps: Vec<i64>,
    pub labels: Vec<f64>,
    pub sources: Vec<StationId>,
    pub source_locations: Vec<GeoPoint>,
    /// Row-major `[timestep][source]`; NaN where the source has no
    /// observation at that timestamp.
    pub predictions: Vec<f64>,
    /// Unnormalized weight of each source for this target.
    pub raw_weights: Vec<f64>,
    /// On-site model predictions and labels over its held-out rows.
    pub baseline: Option<(Vec<f64>, Vec<f64>)>,
}

impl PredictionTable {
    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.sources.len();
        &self.predictions[t * n..(t + 1) * n]
    }
}

fn find_series<'a>(stations: &'a [StationSeries], id: &StationId) -> Result<&'a StationSeries> {
    stations
        .iter()
        .find(|s| &s.id == id)
        .ok_or_else(|| Error::UnknownStation(id.to_string()))
}

fn prediction_table(
    bank: &SubmodelBank,
    stations: &[StationSeries],
    target_id: &StationId,
    cfg: &ExperimentConfig,
) -> Result<PredictionTable> {
    if bank.members.contains_key(target_id) {
        return Err(Error::Leakage {
            station: target_id.to_string(),
            fold: bank.fold,
        });
    }
    let target = find_series(stations, target_id)?;
    let keep = |ts: i64| ts.rem_euclid(cfg.eval_stride) == 0;
    let (timestamps, labels): (Vec<i64>, Vec<f64>) = features::label_next_hour_min(target, cfg.horizon)
        .into_iter()
        .filter(|(ts, _)| keep(*ts))
        .unzip();

    let sources = bank.source_ids();
    let n_src = sources.len();
    let mut predictions = vec![f64::NAN; timestamps.len() * n_src];
    let mut source_locations = Vec::with_capacity(n_src);
    let mut raw_weights = Vec::with_capacity(n_src);
    for (s, id) in sources.iter().enumerate() {
        let src_attrs = bank.attributes(id)?;
        source_locations.push(src_attrs.location);
        let normalized = bank.distance_scaler.normalize(&station_distances(src_attrs, &target.attrs));
        raw_weights.push(intermediate_weight(&normalized, &bank.coefficients));

        let series = find_series(stations, id)?;
        let mut rows = Vec::new();
        let mut x = Vec::new();
        for (t, ts) in timestamps.iter().enumerate() {
            if let Some(i) = series.position(*ts) {
                let climate = climate_features(&series.observations[i])?;
                x.extend(spatial_features(src_attrs, &target.attrs, &climate));
                rows.push(t);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let y = vec![0.0; rows.len()];
        let values = bank.members[id].predict_rows(&Samples::new(N_SPATIAL_FEATURES, x, y)?)?;
        for (t, v) in rows.into_iter().zip(values) {
            predictions[t * n_src + s] = v;
        }
    }

    let baseline = match bank.baselines.get(target_id) {
        Some(model) => {
            let rows = features::baseline_rows(target, cfg.horizon)?;
            let held_out: Vec<_> = rows[baseline_split(rows.len(), cfg.baseline_holdout)..]
                .iter()
                .filter(|r| keep(r.0))
                .collect();
            let x = held_out.iter().flat_map(|r| r.1).collect();
            let y: Vec<f64> = held_out.iter().map(|r| r.2).collect();
            let pred = model.predict_rows(&Samples::new(5, x, y.clone())?)?;
            Some((pred, y))
        }
        None => None,
    };

    Ok(PredictionTable {
        target: target_id.clone(),
        attrs: target.attrs,
        timestamps,
        labels,
        sources,
        source_locations,
        predictions,
        raw_weights,
        baseline,
    })
}

/// Prediction tables for every test station of the bank's fold, in sorted
/// station order.
pub fn build_prediction_tables(
    bank: &SubmodelBank,
    stations: &[StationSeries],
    cfg: &ExperimentConfig,
) -> Result<Vec<PredictionTable>> {
    if cfg.eval_stride <= 0 {
        return Err(Error::InvalidInput("eval stride must be positive".into()));
    }
    if bank.is_empty() {
        return Err(Error::InvalidInput(format!("bank for fold {} has no submodels", bank.fold)));
    }
    let mut targets = bank.test_stations.clone();
    targets.sort();
    targets.par_iter().map(|id| prediction_table(bank, stations, id, cfg)).collect()
}

/// Metrics of one method at one station count within one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub fold: usize,
    pub method: Method,
    pub station_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of scored timesteps, pooled over the fold's test stations.
    pub evaluated: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fdr: Option<f64>,
    pub counts: ConfusionCounts,
}

impl AblationResult {
    /// True when every metric matches `other`, ignoring the seed.
    pub fn same_metrics(&self, other: &AblationResult) -> bool {
        self.evaluated == other.evaluated
            && self.rmse == other.rmse
            && self.tpr == other.tpr
            && self.fdr == other.fdr
            && self.counts == other.counts
    }
}

#[derive(Default)]
struct Scores {
    pred: Vec<f64>,
    flags: Vec<bool>,
    actual: Vec<f64>,
}

impl Scores {
    fn extend(&mut self, other: Scores) {
        self.pred.extend(other.pred);
        self.flags.extend(other.flags);
        self.actual.extend(other.actual);
    }
}

fn samples_of(table: &PredictionTable, t: usize, subset: &[usize]) -> Vec<SamplePoint> {
    let row = table.row(t);
    subset
        .iter()
        .filter(|&&s| !row[s].is_nan())
        .map(|&s| SamplePoint {
            location: table.source_locations[s],
            value: row[s],
        })
        .collect()
}

/// A variogram fitted to predictions pooled over evenly spaced rows of every
/// table.
fn frozen_variogram(tables: &[PredictionTable], subset: &[usize], cfg: &ExperimentConfig) -> Result<VariogramModel> {
    let mut fields = Vec::new();
    for table in tables {
        let n = table.timestamps.len();
        let step = (n / FROZEN_ROWS_PER_TARGET).max(1);
        fields.extend((0..n).step_by(step).map(|t| samples_of(table, t, subset)).filter(|f| f.len() >= 2));
    }
    if fields.is_empty() {
        return Err(Error::EmptyData("no rows to fit a variogram".into()));
    }
    let bins = pooled_semivariogram(&fields, cfg.variogram_bins)?;
    match fit_variogram(&bins, cfg.variogram) {
        Ok(m) => Ok(m),
        Err(Error::Fit(_)) => Ok(fallback_variogram(&fields.concat())),
        Err(e) => Err(e),
    }
}

fn score_table(
    table: &PredictionTable,
    subset: &[usize],
    methods: &[Method],
    frozen: Option<&VariogramModel>,
    cfg: &ExperimentConfig,
) -> Result<BTreeMap<Method, Scores>> {
    let mut out: BTreeMap<Method, Scores> = methods.iter().map(|m| (*m, Scores::default())).collect();
    let mut values = Vec::with_capacity(subset.len());
    let mut weights = Vec::with_capacity(subset.len());
    for t in 0..table.timestamps.len() {
        let row = table.row(t);
        values.clear();
        weights.clear();
        for &s in subset {
            if !row[s].is_nan() {
                values.push(row[s]);
                weights.push(table.raw_weights[s]);
            }
        }
        if values.is_empty() {
            continue;
        }
        let actual = table.labels[t];
        for (method, scores) in out.iter_mut() {
            let pred = match method {
                Method::Average => mean(&values)?,
                Method::WeightedAverage => weighted_mean(&values, &weights)?,
                Method::WeightedVote => {
                    scores.flags.push(weighted_vote(&values, &weights, cfg.trigger)?.frost);
                    scores.actual.push(actual);
                    continue;
                }
                Method::Idw => idw(&samples_of(table, t, subset), table.attrs.location, cfg.idw_power)?,
                Method::Ok => {
                    let samples = samples_of(table, t, subset);
                    if samples.len() == 1 {
                        // The unit-sum constraint leaves a single weight of 1.
                        samples[0].value
                    } else {
                        let model = match frozen {
                            Some(m) => *m,
                            None => fit_samples(&samples, cfg.variogram, cfg.variogram_bins)?,
                        };
                        ordinary_kriging(&samples, table.attrs.location, &model)?.0
                    }
                }
                Method::Baseline => continue,
            };
            scores.pred.push(pred);
            scores.actual.push(actual);
        }
    }
    if let (Some(scores), Some((pred, actual))) = (out.get_mut(&Method::Baseline), &table.baseline) {
        scores.pred.extend_from_slice(pred);
        scores.actual.extend_from_slice(actual);
    }
    Ok(out)
}

fn evaluate_subset(
    fold: usize,
    tables: &[PredictionTable],
    subset: &[usize],
    seed: Option<u64>,
    cfg: &ExperimentConfig,
) -> Result<Vec<AblationResult>> {
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    if methods.contains(&Method::Baseline) && tables.iter().any(|t| t.baseline.is_none()) {
        return Err(Error::InvalidInput(format!("fold {fold} bank has no baseline models")));
    }
    let frozen = if cfg.freeze_variogram && methods.contains(&Method::Ok) {
        Some(frozen_variogram(tables, subset, cfg)?)
    } else {
        None
    };
    let per_table: Vec<BTreeMap<Method, Scores>> = tables
        .par_iter()
        .map(|t| score_table(t, subset, &methods, frozen.as_ref(), cfg))
        .collect::<Result<_>>()?;
    let mut pooled: BTreeMap<Method, Scores> = methods.iter().map(|m| (*m, Scores::default())).collect();
    for table in per_table {
        for (m, s) in table {
            pooled.get_mut(&m).unwrap().extend(s);
        }
    }
    pooled
        .into_iter()
        .map(|(method, s)| {
            let (rmse_value, counts) = if method == Method::WeightedVote {
                (None, event_confusion_flags(&s.flags, &s.actual, cfg.trigger)?)
            } else {
                let r = if s.pred.is_empty() { None } else { Some(rmse(&s.pred, &s.actual)?) };
                (r, event_confusion(&s.pred, &s.actual, cfg.trigger)?)
            };
            Ok(AblationResult {
                fold,
                method,
                station_count: subset.len(),
                seed,
                evaluated: s.actual.len(),
                rmse: rmse_value,
                tpr: counts.tpr(),
                fdr: counts.fdr(),
                counts,
            })
        })
        .collect()
}

/// Scores every requested method on the fold's test stations using all of
/// the bank's sources.
pub fn fold_from_tables(fold: usize, tables: &[PredictionTable], cfg: &ExperimentConfig) -> Result<Vec<AblationResult>> {
    let n = tables.first().map(|t| t.sources.len()).unwrap_or(0);
    let all: Vec<usize> = (0..n).collect();
    evaluate_subset(fold, tables, &all, None, cfg)
}

pub fn run_fold_experiment(
    bank: &SubmodelBank,
    stations: &[StationSeries],
    cfg: &ExperimentConfig,
) -> Result<Vec<AblationResult>> {
    let tables = build_prediction_tables(bank, stations, cfg)?;
    fold_from_tables(bank.fold, &tables, cfg)
}

/// Seeded subset of `k` of `n` source indices, sorted.
pub fn draw_subset(n: usize, k: usize, seed: u64, fold: usize) -> Vec<usize> {
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((fold as u64) << 32 | k as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Station-count sweep: for each `k`, a seeded subset of `k` sources shared
/// by every method.
pub fn ablation_from_tables(
    fold: usize,
    tables: &[PredictionTable],
    counts: &[usize],
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<Vec<AblationResult>> {
    let n = tables.first().map(|t| t.sources.len()).unwrap_or(0);
    if let Some(&k) = counts.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::InvalidInput(format!("station count {k} outside 1..={n}")));
    }
    let per_k: Vec<Vec<AblationResult>> = counts
        .par_iter()
        .map(|&k| evaluate_subset(fold, tables, &draw_subset(n, k, seed, fold), Some(seed), cfg))
        .collect::<Result<_>>()?;
    Ok(per_k.into_iter().flatten().collect())
}

pub fn run_station_ablation(
    bank: &SubmodelBank,
    stations: &[StationSeries],
    counts: &[usize],
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<Vec<AblationResult>> {
    if let Some(&k) = counts.iter().find(|&&k| k == 0 || k > bank.len()) {
        return Err(Error::InvalidInput(format!("station count {k} outside 1..={}", bank.len())));
    }
    let tables = build_prediction_tables(bank, stations, cfg)?;
    ablation_from_tables(bank.fold, &tables, counts, seed, cfg)
}

/// Evaluation output: per-(fold, method, station count) metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u64,
    /// Wall-clock creation time; omitted for reproducible output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub seed: u64,
    pub counts: Vec<usize>,
    pub config: ExperimentConfig,
    pub results: Vec<AblationResult>,
    /// Named pairwise t-test matrices, e.g. raster comparisons.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub p_values: BTreeMap<String, PValueMatrix>,
}

impl EvaluationReport {
    /// Results are ordered by fold, method and station count.
    pub fn new(seed: u64, counts: Vec<usize>, config: ExperimentConfig, mut results: Vec<AblationResult>) -> Self {
        results.sort_by(|a, b| (a.fold, a.method, a.station_count).cmp(&(b.fold, b.method, b.station_count)));
        EvaluationReport {
            version: REPORT_VERSION,
            generated_at: None,
            seed,
            counts,
            config,
            results,
            p_values: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvaluationReport = serde_json::from_str(text)?;
        if report.version != REPORT_VERSION {
            return Err(Error::UnsupportedVersion(report.version));
        }
        Ok(report)
    }

    /// Flat CSV of the results; absent metrics are empty cells.
    pub fn results_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fold", "method", "station_count", "evaluated", "rmse", "tpr", "fdr", "tp", "fp", "fn", "tn"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.results {
            w.write_record([
                r.fold.to_string(),
                r.method.name().to_string(),
                r.station_count.to_string(),
                r.evaluated.to_string(),
                opt(r.rmse),
                opt(r.tpr),
                opt(r.fdr),
                r.counts.tp.to_string(),
                r.counts.fp.to_string(),
                r.counts.fn_.to_string(),
                r.counts.tn.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}
