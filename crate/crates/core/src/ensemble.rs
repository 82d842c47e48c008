//! Per-fold submodel banks and their aggregation.
//!
//! Each submodel predicts a target site's next-hour minimum from one source
//! station's climate. Predictions are combined by plain averaging, by
//! inverse-distance-style weights built from geographic, elevation and NDVI
//! differences, or by a weighted frost vote.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    spatial_features, StationAttributes, StationId, StationSeries, TrainingEntry,
    N_CLIMATE_FEATURES,
};
use crate::error::{Error, Result};
use crate::features::{self, fit_scaler, ScalerStats, DEFAULT_HORIZON};
use crate::neuralnet::{self, init_network, train, Network, NetworkSpec, Samples, TrainConfig};

/// Lower bound on the weight denominator, for sources colocated with the target.
pub const WEIGHT_DENOMINATOR_FLOOR: f64 = 1e-6;

/// Normalized vote scores this close to zero are treated as ties, so that
/// rounding in the weight sums cannot flip a tie.
pub const VOTE_TIE_TOLERANCE: f64 = 1e-12;

pub const BANK_MANIFEST_VERSION: u64 = 1;

/// Importance of geographic distance (`a`), DEM difference (`b`) and NDVI
/// difference (`c`) in the station weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Published per-fold coefficients.
const PUBLISHED_PRESETS: [[f64; 3]; 5] = [
    [0.1629, 0.0132, 0.0290],
    [0.1768, 0.0205, 0.0238],
    [0.1612, 0.0222, 0.0177],
    [0.1804, 0.0114, 0.0269],
    [0.1601, 0.0110, 0.0260],
];

impl WeightCoefficients {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let w = WeightCoefficients { a, b, c };
        if w.is_valid() {
            Ok(w)
        } else {
            Err(Error::InvalidInput(format!(
                "weight coefficients must be non-negative with a positive sum, got ({a}, {b}, {c})"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.a, self.b, self.c].iter().all(|v| v.is_finite() && *v >= 0.0) && self.a + self.b + self.c > 0.0
    }

    /// Geographic distance only.
    pub fn fallback() -> Self {
        WeightCoefficients { a: 1.0, b: 0.0, c: 0.0 }
    }

    pub fn published_preset(fold: usize) -> Result<Self> {
        PUBLISHED_PRESETS
            .get(fold)
            .map(|&[a, b, c]| WeightCoefficients { a, b, c })
            .ok_or_else(|| Error::InvalidInput(format!("no preset for fold {fold}")))
    }
}

/// Geographic, DEM and NDVI separation between two sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub geo: f64,
    pub dem: f64,
    pub ndvi: f64,
}

impl Distances {
    fn as_array(&self) -> [f64; 3] {
        [self.geo, self.dem, self.ndvi]
    }

    fn from_array([geo, dem, ndvi]: [f64; 3]) -> Self {
        Distances { geo, dem, ndvi }
    }
}

/// Raw separations: planar lon/lat distance and absolute DEM/NDVI differences.
pub fn station_distances(source: &StationAttributes, target: &StationAttributes) -> Distances {
    Distances {
        geo: source.location.distance(&target.location),
        dem: (source.dem - target.dem).abs(),
        ndvi: (source.ndvi - target.ndvi).abs(),
    }
}

/// Per-dimension min-max normalization over the given set. A dimension with
/// no spread maps to 0.
pub fn normalize_distances(raw: &[Distances]) -> Vec<Distances> {
    let scaler = DistanceScaler::fit(raw);
    raw.iter().map(|d| scaler.normalize(d)).collect()
}

/// Frozen min-max statistics for distance normalization; values outside the
/// fitted range are clamped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceScaler {
    pub min: Distances,
    pub max: Distances,
}

impl DistanceScaler {
    pub fn fit(raw: &[Distances]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for d in raw {
            for (k, v) in d.as_array().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        if raw.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        DistanceScaler {
            min: Distances::from_array(lo),
            max: Distances::from_array(hi),
        }
    }

    /// Statistics over every ordered pair of distinct stations.
    pub fn fit_pairs<'a>(stations: impl IntoIterator<Item = &'a StationAttributes> + Clone) -> Self {
        let all: Vec<&StationAttributes> = stations.into_iter().collect();
        let mut raw = Vec::with_capacity(all.len() * all.len());
        for (i, s) in all.iter().enumerate() {
            for (j, t) in all.iter().enumerate() {
                if i != j {
                    raw.push(station_distances(s, t));
                }
            }
        }
        DistanceScaler::fit(&raw)
    }

    pub fn normalize(&self, d: &Distances) -> Distances {
        let lo = self.min.as_array();
        let hi = self.max.as_array();
        let v = d.as_array();
        let mut out = [0.0; 3];
        for k in 0..3 {
            let span = hi[k] - lo[k];
            out[k] = if span > 0.0 {
                ((v[k] - lo[k]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        Distances::from_array(out)
    }
}

/// `1 / (a·g + b·d + c·n)` with the denominator floored at
/// [`WEIGHT_DENOMINATOR_FLOOR`].
pub fn intermediate_weight(normalized: &Distances, coeff: &WeightCoefficients) -> f64 {
    let denom = coeff.a * normalized.geo + coeff.b * normalized.dem + coeff.c * normalized.ndvi;
    1.0 / denom.max(WEIGHT_DENOMINATOR_FLOOR)
}

/// Normalized station weights summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationWeights(pub BTreeMap<StationId, f64>);

impl StationWeights {
    pub fn get(&self, id: &StationId) -> Option<f64> {
        self.0.get(id).copied()
    }

    pub fn sum(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn uniform<'a>(ids: impl IntoIterator<Item = &'a StationId>) -> Self {
        let ids: Vec<&StationId> = ids.into_iter().collect();
        let w = 1.0 / ids.len() as f64;
        StationWeights(ids.into_iter().map(|id| (id.clone(), w)).collect())
    }
}

pub fn station_weights(
    normalized: &[(StationId, Distances)],
    coeff: &WeightCoefficients,
) -> StationWeights {
    let raw: Vec<f64> = normalized.iter().map(|(_, d)| intermediate_weight(d, coeff)).collect();
    let total: f64 = raw.iter().sum();
    StationWeights(
        normalized
            .iter()
            .zip(raw)
            .map(|((id, _), w)| (id.clone(), w / total))
            .collect(),
    )
}

/// Pearson correlation; 0 when either series has fewer than two distinct
/// values.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let (x, y) = (&x[..n], &y[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Coefficients from absolute correlations between each normalized distance
/// and the absolute prediction error. All-zero correlations fall back to
/// [`WeightCoefficients::fallback`].
pub fn coefficients_from_errors(normalized: &[Distances], abs_errors: &[f64]) -> WeightCoefficients {
    let col = |f: fn(&Distances) -> f64| normalized.iter().map(f).collect::<Vec<f64>>();
    let w = WeightCoefficients {
        a: pearson(&col(|d| d.geo), abs_errors).abs(),
        b: pearson(&col(|d| d.dem), abs_errors).abs(),
        c: pearson(&col(|d| d.ndvi), abs_errors).abs(),
    };
    if w.is_valid() {
        w
    } else {
        WeightCoefficients::fallback()
    }
}

/// Calibrates coefficients on held-out source→target entries scored by the
/// bank's own submodels.
pub fn calibrate_coefficients(bank: &SubmodelBank, entries: &[TrainingEntry]) -> Result<WeightCoefficients> {
    let targets: BTreeSet<&StationId> = entries.iter().map(|e| &e.provenance.target).collect();
    if targets.len() < 2 {
        return Err(Error::InvalidInput("calibration needs entries for at least two target stations".into()));
    }
    let mut normalized = Vec::with_capacity(entries.len());
    let mut errors = Vec::with_capacity(entries.len());
    for e in entries {
        let pred = bank.predict_single(&e.provenance.source, &e.climate, &e.target_attrs)?;
        errors.push((pred - e.label).abs());
        normalized.push(bank.distance_scaler.normalize(&station_distances(&e.source_attrs, &e.target_attrs)));
    }
    Ok(coefficients_from_errors(&normalized, &errors))
}

/// Arithmetic mean of the predictions.
pub fn aggregate_average(predictions: &BTreeMap<StationId, f64>) -> Result<f64> {
    let v: Vec<f64> = predictions.values().copied().collect();
    mean(&v)
}

/// Weighted mean with weights renormalized over the stations present.
pub fn aggregate_weighted(predictions: &BTreeMap<StationId, f64>, weights: &StationWeights) -> Result<f64> {
    let (p, w) = aligned(predictions, weights)?;
    weighted_mean(&p, &w)
}

/// Outcome of a weighted frost vote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub frost: bool,
    /// Weighted sum of ±1 votes with weights renormalized to sum to 1.
    pub score: f64,
}

/// Each station votes +1 when its prediction is below `trigger`, −1
/// otherwise. A tied score counts as frost; scores within
/// [`VOTE_TIE_TOLERANCE`] of zero are ties.
pub fn aggregate_vote(
    predictions: &BTreeMap<StationId, f64>,
    weights: &StationWeights,
    trigger: f64,
) -> Result<Vote> {
    let (p, w) = aligned(predictions, weights)?;
    weighted_vote(&p, &w, trigger)
}

fn aligned(predictions: &BTreeMap<StationId, f64>, weights: &StationWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = Vec::with_capacity(predictions.len());
    let mut w = Vec::with_capacity(predictions.len());
    for (id, v) in predictions {
        let wi = weights.get(id).ok_or_else(|| Error::UnknownStation(format!("{id} has no weight")))?;
        p.push(*v);
        w.push(wi);
    }
    Ok((p, w))
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyData("no predictions to aggregate".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyData("no predictions to aggregate".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("weights sum to zero".into()));
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * (w / total)).sum())
}

pub fn weighted_vote(values: &[f64], weights: &[f64], trigger: f64) -> Result<Vote> {
    if values.is_empty() {
        return Err(Error::EmptyData("no predictions to aggregate".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("weights sum to zero".into()));
    }
    let (mut yes, mut no) = (0.0, 0.0);
    for (v, w) in values.iter().zip(weights) {
        if *v < trigger {
            yes += w;
        } else {
            no += w;
        }
    }
    let score = (yes - no) / total;
    Ok(Vote {
        frost: score >= -VOTE_TIE_TOLERANCE,
        score,
    })
}

/// A trained network and the scaler fitted on its training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Submodel {
    pub network: Network,
    pub scaler: ScalerStats,
}

impl Submodel {
    /// Un-scaled prediction for raw (unscaled) features.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.scaler.dim() {
            return Err(Error::Dimension {
                expected: self.scaler.dim(),
                actual: features.len(),
            });
        }
        let z = self.network.forward(&self.scaler.scale_features(features))?;
        Ok(self.scaler.invert_label(z))
    }

    /// [`Submodel::predict`] over every row of `raw`; labels are ignored.
    pub fn predict_rows(&self, raw: &Samples) -> Result<Vec<f64>> {
        let z = self.network.predict_all(&self.scaler.apply(raw)?)?;
        Ok(z.into_iter().map(|v| self.scaler.invert_label(v)).collect())
    }
}

/// Trained submodels of one fold, keyed by source station.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmodelBank {
    pub fold: usize,
    pub members: BTreeMap<StationId, Submodel>,
    /// Attributes of every training station.
    pub stations: BTreeMap<StationId, StationAttributes>,
    pub test_stations: Vec<StationId>,
    pub coefficients: WeightCoefficients,
    pub distance_scaler: DistanceScaler,
    /// On-site models for test stations, when trained.
    pub baselines: BTreeMap<StationId, Submodel>,
}

impl SubmodelBank {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn source_ids(&self) -> Vec<StationId> {
        self.members.keys().cloned().collect()
    }

    pub fn attributes(&self, id: &StationId) -> Result<&StationAttributes> {
        self.stations.get(id).ok_or_else(|| Error::UnknownStation(id.to_string()))
    }

    /// Prediction of one submodel for a target site.
    pub fn predict_single(&self, source: &StationId, climate: &[f64], target: &StationAttributes) -> Result<f64> {
        let model = self.members.get(source).ok_or_else(|| Error::UnknownStation(source.to_string()))?;
        let climate: &[f64; N_CLIMATE_FEATURES] = climate.try_into().map_err(|_| Error::Dimension {
            expected: N_CLIMATE_FEATURES,
            actual: climate.len(),
        })?;
        let x = spatial_features(self.attributes(source)?, target, climate);
        model.predict(&x)
    }

    /// Normalized distances from each listed source to `target`, using the
    /// fold's frozen statistics.
    pub fn normalized_distances(&self, target: &StationAttributes, sources: &[StationId]) -> Result<Vec<(StationId, Distances)>> {
        sources
            .iter()
            .map(|id| {
                let raw = station_distances(self.attributes(id)?, target);
                Ok((id.clone(), self.distance_scaler.normalize(&raw)))
            })
            .collect()
    }

    /// Weights of the listed sources for `target`.
    pub fn weights_for(&self, target: &StationAttributes, sources: &[StationId]) -> Result<StationWeights> {
        Ok(station_weights(&self.normalized_distances(target, sources)?, &self.coefficients))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("models"))?;
        let mut stations = Vec::new();
        for (id, attrs) in &self.stations {
            let model = match self.members.get(id) {
                Some(m) => {
                    let rel = format!("models/{id}.json");
                    neuralnet::save_network(&dir.join(&rel), &m.network, Some(&m.scaler))?;
                    Some(rel)
                }
                None => None,
            };
            stations.push(ManifestStation {
                id: id.clone(),
                attrs: *attrs,
                model,
            });
        }
        let mut baselines = Vec::new();
        for (id, m) in &self.baselines {
            let rel = format!("models/baseline-{id}.json");
            neuralnet::save_network(&dir.join(&rel), &m.network, Some(&m.scaler))?;
            baselines.push(ManifestBaseline { id: id.clone(), model: rel });
        }
        let manifest = BankManifest {
            version: BANK_MANIFEST_VERSION,
            fold: self.fold,
            test_stations: self.test_stations.clone(),
            coefficients: self.coefficients,
            distance_scaler: self.distance_scaler,
            stations,
            baselines,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(BANK_MANIFEST_VERSION) => {}
            Some(v) => return Err(Error::UnsupportedVersion(v)),
            None => return Err(Error::Format("bank manifest has no version".into())),
        }
        let manifest: BankManifest = serde_json::from_value(value)?;
        let load = |rel: &str| -> Result<Submodel> {
            let (network, scaler) = neuralnet::load_network(&dir.join(rel))?;
            let scaler = scaler.ok_or_else(|| Error::Format(format!("{rel} has no scaler")))?;
            Ok(Submodel { network, scaler })
        };
        let mut members = BTreeMap::new();
        let mut stations = BTreeMap::new();
        for s in &manifest.stations {
            stations.insert(s.id.clone(), s.attrs);
            if let Some(rel) = &s.model {
                members.insert(s.id.clone(), load(rel)?);
            }
        }
        let mut baselines = BTreeMap::new();
        for b in &manifest.baselines {
            baselines.insert(b.id.clone(), load(&b.model)?);
        }
        Ok(SubmodelBank {
            fold: manifest.fold,
            members,
            stations,
            test_stations: manifest.test_stations,
            coefficients: manifest.coefficients,
            distance_scaler: manifest.distance_scaler,
            baselines,
        })
    }

    /// Rewrites only the coefficients in an existing bank directory.
    pub fn store_coefficients(dir: &Path, coefficients: WeightCoefficients) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut manifest: BankManifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        manifest.coefficients = coefficients;
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct BankManifest {
    version: u64,
    fold: usize,
    test_stations: Vec<StationId>,
    coefficients: WeightCoefficients,
    distance_scaler: DistanceScaler,
    stations: Vec<ManifestStation>,
    baselines: Vec<ManifestBaseline>,
}

#[derive(Serialize, Deserialize)]
struct ManifestStation {
    id: StationId,
    attrs: StationAttributes,
    model: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestBaseline {
    id: StationId,
    model: String,
}

/// How the weighting coefficients of a new bank are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientSource {
    /// Correlate held-out errors with distances.
    Calibrate,
    /// Published coefficients of the given fold.
    PublishedPreset(usize),
    Fixed(WeightCoefficients),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    /// Label window, in observations.
    pub horizon: usize,
    /// Keep one training timestamp per `train_stride` minutes for each
    /// source→target pair. The phase differs between targets.
    pub train_stride: i64,
    /// Timestamp spacing of the held-out calibration entries.
    pub calibration_stride: i64,
    pub submodel: TrainConfig,
    pub coefficients: CoefficientSource,
    pub train_baselines: bool,
    pub baseline: TrainConfig,
    /// Trailing share of each station's rows withheld from its baseline model.
    pub baseline_holdout: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            horizon: DEFAULT_HORIZON,
            train_stride: 30,
            calibration_stride: 240,
            submodel: TrainConfig::default(),
            coefficients: CoefficientSource::Calibrate,
            train_baselines: true,
            baseline: TrainConfig::default(),
            baseline_holdout: 0.2,
        }
    }
}

/// Audit record of what went into a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankTrainingReport {
    pub fold: usize,
    /// Every station that appeared as an entry source or target.
    pub entry_stations: BTreeSet<StationId>,
    pub entries_per_source: BTreeMap<StationId, usize>,
    pub best_loss: BTreeMap<StationId, f64>,
    pub baseline_loss: BTreeMap<StationId, f64>,
    pub coefficients: WeightCoefficients,
}

fn station_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

/// Training entries from `source` to every other training station, one
/// timestamp per stride and target with a target-dependent phase.
fn source_entries(
    source: &StationSeries,
    targets: &[(&StationSeries, Vec<(i64, f64)>)],
    stride: i64,
    phase_shift: i64,
) -> Result<Vec<TrainingEntry>> {
    let mut out = Vec::new();
    for (k, (target, labels)) in targets.iter().enumerate() {
        if target.id == source.id {
            continue;
        }
        let phase = (k as i64 * 7 + phase_shift).rem_euclid(stride);
        out.extend(features::pair_entries_with_labels(source, target, labels, |ts| {
            ts.rem_euclid(stride) == phase
        })?);
    }
    Ok(out)
}

/// Pair entries at a different timestamp phase from every training pair.
fn held_out_entries(labelled: &[(&StationSeries, Vec<(i64, f64)>)], stride: i64) -> Result<Vec<TrainingEntry>> {
    let half = stride / 2 + 3;
    let mut entries = Vec::new();
    for (source, _) in labelled {
        entries.extend(source_entries(source, labelled, stride, half)?);
    }
    Ok(entries)
}

/// Held-out calibration entries among the bank's training stations, as
/// drawn by [`train_bank`] with the same configuration.
pub fn calibration_entries(bank: &SubmodelBank, stations: &[StationSeries], cfg: &BankConfig) -> Result<Vec<TrainingEntry>> {
    if cfg.calibration_stride <= 0 {
        return Err(Error::InvalidInput("strides must be positive".into()));
    }
    let mut series: Vec<&StationSeries> = stations.iter().filter(|s| bank.members.contains_key(&s.id)).collect();
    if series.len() != bank.len() {
        return Err(Error::UnknownStation("a bank member is missing from the data".into()));
    }
    series.sort_by(|a, b| a.id.cmp(&b.id));
    let labelled: Vec<(&StationSeries, Vec<(i64, f64)>)> = series
        .iter()
        .map(|s| (*s, features::label_next_hour_min(s, cfg.horizon)))
        .collect();
    held_out_entries(&labelled, cfg.calibration_stride)
}

fn fit_submodel(samples: &Samples, spec: &NetworkSpec, cfg: &TrainConfig, seed: u64) -> Result<(Submodel, f64)> {
    let scaler = fit_scaler(samples)?;
    let scaled = scaler.apply(samples)?;
    let net = init_network(spec, seed)?;
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let outcome = train(&net, &scaled, &cfg)?;
    let best = outcome
        .history
        .iter()
        .find(|h| h.epoch == outcome.best_epoch)
        .map(|h| h.validation.unwrap_or(h.train))
        .unwrap_or(f64::NAN);
    Ok((
        Submodel {
            network: outcome.network,
            scaler,
        },
        best,
    ))
}

/// Trains one fold's bank: a submodel per training station, optional on-site
/// baselines for the test stations, and the weighting coefficients.
///
/// Test stations never contribute entries; the returned report lists every
/// station that did, and training fails with [`Error::Leakage`] otherwise.
pub fn train_bank(
    stations: &[StationSeries],
    training: &[StationId],
    test: &[StationId],
    fold: usize,
    cfg: &BankConfig,
) -> Result<(SubmodelBank, BankTrainingReport)> {
    if cfg.train_stride <= 0 || cfg.calibration_stride <= 0 {
        return Err(Error::InvalidInput("strides must be positive".into()));
    }
    let find = |id: &StationId| -> Result<&StationSeries> {
        stations
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| Error::UnknownStation(id.to_string()))
    };
    let mut train_series: Vec<&StationSeries> = training.iter().map(find).collect::<Result<_>>()?;
    train_series.sort_by(|a, b| a.id.cmp(&b.id));
    let test_set: BTreeSet<&StationId> = test.iter().collect();
    if let Some(s) = train_series.iter().find(|s| test_set.contains(&s.id)) {
        return Err(Error::Leakage {
            station: s.id.to_string(),
            fold,
        });
    }
    let labelled: Vec<(&StationSeries, Vec<(i64, f64)>)> = train_series
        .iter()
        .map(|s| (*s, features::label_next_hour_min(s, cfg.horizon)))
        .collect();

    let spec = NetworkSpec::submodel();
    let trained: Vec<(StationId, Submodel, f64, usize, BTreeSet<StationId>)> = train_series
        .par_iter()
        .enumerate()
        .map(|(i, source)| {
            let entries = source_entries(source, &labelled, cfg.train_stride, 0)?;
            if entries.is_empty() {
                return Err(Error::EmptyData(format!("source {} has no training entries", source.id)));
            }
            let seen: BTreeSet<StationId> = entries
                .iter()
                .flat_map(|e| [e.provenance.source.clone(), e.provenance.target.clone()])
                .collect();
            let samples = Samples::from_entries(&entries);
            let (model, loss) = fit_submodel(&samples, &spec, &cfg.submodel, station_seed(cfg.submodel.seed, i))?;
            Ok((source.id.clone(), model, loss, entries.len(), seen))
        })
        .collect::<Result<_>>()?;

    let mut members = BTreeMap::new();
    let mut entry_stations = BTreeSet::new();
    let mut entries_per_source = BTreeMap::new();
    let mut best_loss = BTreeMap::new();
    for (id, model, loss, n, seen) in trained {
        entry_stations.extend(seen);
        entries_per_source.insert(id.clone(), n);
        best_loss.insert(id.clone(), loss);
        members.insert(id, model);
    }
    if let Some(leak) = entry_stations.iter().find(|id| test_set.contains(id)) {
        return Err(Error::Leakage {
            station: leak.to_string(),
            fold,
        });
    }

    let station_attrs: BTreeMap<StationId, StationAttributes> =
        train_series.iter().map(|s| (s.id.clone(), s.attrs)).collect();
    let distance_scaler = DistanceScaler::fit_pairs(station_attrs.values());
    let mut bank = SubmodelBank {
        fold,
        members,
        stations: station_attrs,
        test_stations: test.to_vec(),
        coefficients: WeightCoefficients::fallback(),
        distance_scaler,
        baselines: BTreeMap::new(),
    };

    bank.coefficients = match cfg.coefficients {
        CoefficientSource::Calibrate => {
            let entries = held_out_entries(&labelled, cfg.calibration_stride)?;
            calibrate_coefficients(&bank, &entries)?
        }
        CoefficientSource::PublishedPreset(k) => WeightCoefficients::published_preset(k)?,
        CoefficientSource::Fixed(w) => {
            WeightCoefficients::new(w.a, w.b, w.c)?;
            w
        }
    };

    let mut baseline_loss = BTreeMap::new();
    if cfg.train_baselines {
        let test_series: Vec<&StationSeries> = test.iter().map(find).collect::<Result<_>>()?;
        let fitted: Vec<(StationId, Submodel, f64)> = test_series
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let rows = features::baseline_rows(s, cfg.horizon)?;
                let n_train = baseline_split(rows.len(), cfg.baseline_holdout);
                if n_train == 0 {
                    return Err(Error::EmptyData(format!("station {} has no baseline rows", s.id)));
                }
                let x = rows[..n_train].iter().flat_map(|r| r.1).collect();
                let y = rows[..n_train].iter().map(|r| r.2).collect();
                let samples = Samples::new(N_CLIMATE_FEATURES, x, y)?;
                let seed = station_seed(cfg.baseline.seed ^ 0xB45E, i);
                let (model, loss) = fit_submodel(&samples, &NetworkSpec::baseline(), &cfg.baseline, seed)?;
                Ok((s.id.clone(), model, loss))
            })
            .collect::<Result<_>>()?;
        for (id, model, loss) in fitted {
            baseline_loss.insert(id.clone(), loss);
            bank.baselines.insert(id, model);
        }
    }

    let report = BankTrainingReport {
        fold,
        entry_stations,
        entries_per_source,
        best_loss,
        baseline_loss,
        coefficients: bank.coefficients,
    };
    Ok((bank, report))
}

/// Number of leading rows used to train a baseline model.
pub fn baseline_split(n_rows: usize, holdout: f64) -> usize {
    let n_test = (n_rows as f64 * holdout).ceil() as usize;
    n_rows.saturating_sub(n_test)
}
