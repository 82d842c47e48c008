//! Domain types shared by every stage of the pipeline.
//!
//! Nothing here performs I/O or learning. Constructors check the invariants
//! that are cheap to check; [`validate_series`] reports the rest without
//! failing.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of folds used by the cross-validation protocol.
pub const N_FOLDS: usize = 5;

/// Accepted excess of dew point over air temperature, in °C.
pub const DEW_POINT_TOLERANCE: f64 = 0.5;

/// Weather-station identifier, e.g. `"63291"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StationId(String);

impl StationId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::InvalidInput("station id must be non-empty".into()));
        }
        Ok(StationId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for StationId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        StationId::new(s)
    }
}

impl From<StationId> for String {
    fn from(id: StationId) -> String {
        id.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// WGS-84 longitude/latitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        let p = GeoPoint { lon, lat };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::Domain(format!("coordinate ({lon}, {lat}) out of range")))
        }
    }

    pub fn is_valid(&self) -> bool {
        (-180.0..=180.0).contains(&self.lon) && (-90.0..=90.0).contains(&self.lat)
    }

    /// Planar distance in degree space.
    pub fn distance(&self, other: &GeoPoint) -> f64 {
        (self.lon - other.lon).hypot(self.lat - other.lat)
    }
}

/// Static site description: location, elevation and vegetation index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationAttributes {
    pub location: GeoPoint,
    pub dem: f64,
    pub ndvi: f64,
}

impl StationAttributes {
    pub fn new(location: GeoPoint, dem: f64, ndvi: f64) -> Result<Self> {
        let attrs = StationAttributes { location, dem, ndvi };
        match attrs.violations().first() {
            None => Ok(attrs),
            Some(v) => Err(Error::Domain(format!("station attribute {} violates {}", v.field, v.rule))),
        }
    }

    /// `[lon, lat, dem, ndvi]`, the column order used in feature vectors.
    pub fn as_array(&self) -> [f64; 4] {
        [self.location.lon, self.location.lat, self.dem, self.ndvi]
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !self.location.is_valid() {
            out.push(Violation::new("location", None, "range"));
        }
        if !self.dem.is_finite() {
            out.push(Violation::new("dem", None, "finite"));
        }
        if !(-1.0..=1.0).contains(&self.ndvi) {
            out.push(Violation::new("ndvi", None, "range"));
        }
        out
    }
}

/// One sensor reading. Timestamps are integer minutes since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClimateObservation {
    pub timestamp: i64,
    pub temperature: f64,
    pub dew_point: f64,
    pub rh: f64,
    pub wind_speed: f64,
    /// Meteorological direction the wind blows *from*, degrees in `[0, 360)`.
    pub wind_dir: f64,
}

impl ClimateObservation {
    /// Rule names broken by this reading, ignoring ordering constraints.
    pub fn broken_rules(&self) -> Vec<(&'static str, &'static str)> {
        let mut out = Vec::new();
        let fields = [
            ("temperature", self.temperature),
            ("dew_point", self.dew_point),
            ("rh", self.rh),
            ("wind_speed", self.wind_speed),
            ("wind_dir", self.wind_dir),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                out.push((name, "finite"));
            }
        }
        if self.rh.is_finite() && !(0.0..=100.0).contains(&self.rh) {
            out.push(("rh", "range"));
        }
        if self.wind_speed.is_finite() && self.wind_speed < 0.0 {
            out.push(("wind_speed", "non-negative"));
        }
        if self.wind_dir.is_finite() && !(0.0..360.0).contains(&self.wind_dir) {
            out.push(("wind_dir", "range"));
        }
        if self.dew_point.is_finite()
            && self.temperature.is_finite()
            && self.dew_point > self.temperature + DEW_POINT_TOLERANCE
        {
            out.push(("dew_point", "dew point above temperature"));
        }
        out
    }
}

/// Time-ordered observations of one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    pub id: StationId,
    pub attrs: StationAttributes,
    pub observations: Vec<ClimateObservation>,
}

impl StationSeries {
    pub fn temperatures(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.temperature)
    }

    /// Index of the observation taken at `timestamp`, if any.
    pub fn position(&self, timestamp: i64) -> Option<usize> {
        self.observations
            .binary_search_by_key(&timestamp, |o| o.timestamp)
            .ok()
    }

    /// Intervals `(before, after)` where consecutive samples are further apart
    /// than the most common sampling interval.
    pub fn gaps(&self) -> Vec<(i64, i64)> {
        let steps: Vec<i64> = self
            .observations
            .windows(2)
            .map(|w| w[1].timestamp - w[0].timestamp)
            .collect();
        let Some(step) = modal(&steps) else {
            return Vec::new();
        };
        self.observations
            .windows(2)
            .filter(|w| w[1].timestamp - w[0].timestamp > step)
            .map(|w| (w[0].timestamp, w[1].timestamp))
            .collect()
    }
}

fn modal(values: &[i64]) -> Option<i64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(i64, usize)> = None;
    for chunk in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, n)| chunk.len() > n) {
            best = Some((chunk[0], chunk.len()));
        }
    }
    best.map(|(v, _)| v)
}

/// A single invariant breach found by [`validate_series`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    /// Observation index; `None` for station-level attributes.
    pub index: Option<usize>,
    pub rule: String,
}

impl Violation {
    pub fn new(field: &str, index: Option<usize>, rule: &str) -> Self {
        Violation {
            field: field.to_string(),
            index,
            rule: rule.to_string(),
        }
    }
}

/// Lists every invariant the series breaks. An empty list means valid.
pub fn validate_series(series: &StationSeries) -> Vec<Violation> {
    let mut out = series.attrs.violations();
    let mut prev: Option<i64> = None;
    for (i, obs) in series.observations.iter().enumerate() {
        if let Some(p) = prev {
            if obs.timestamp <= p {
                out.push(Violation::new("timestamp", Some(i), "strictly increasing"));
            }
        }
        prev = Some(obs.timestamp);
        for (field, rule) in obs.broken_rules() {
            out.push(Violation::new(field, Some(i), rule));
        }
    }
    out
}

/// Partition of stations into disjoint test folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FoldsFile", into = "FoldsFile")]
pub struct FoldAssignment {
    folds: Vec<Vec<StationId>>,
}

#[derive(Serialize, Deserialize)]
struct FoldsFile {
    folds: Vec<Vec<StationId>>,
}

impl TryFrom<FoldsFile> for FoldAssignment {
    type Error = Error;

    fn try_from(f: FoldsFile) -> Result<Self> {
        FoldAssignment::new(f.folds)
    }
}

impl From<FoldAssignment> for FoldsFile {
    fn from(f: FoldAssignment) -> Self {
        FoldsFile { folds: f.folds }
    }
}

impl FoldAssignment {
    pub fn new(folds: Vec<Vec<StationId>>) -> Result<Self> {
        if folds.len() != N_FOLDS {
            return Err(Error::InvalidInput(format!(
                "expected {N_FOLDS} folds, got {}",
                folds.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for id in folds.iter().flatten() {
            if !seen.insert(id) {
                return Err(Error::InvalidInput(format!("station {id} appears in two folds")));
            }
        }
        Ok(FoldAssignment { folds })
    }

    pub fn folds(&self) -> &[Vec<StationId>] {
        &self.folds
    }

    pub fn test_stations(&self, fold: usize) -> Result<&[StationId]> {
        self.folds
            .get(fold)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput(format!("fold {fold} out of range")))
    }

    /// All stations outside `fold`, in fold order.
    pub fn training_stations(&self, fold: usize) -> Result<Vec<StationId>> {
        self.test_stations(fold)?;
        Ok(self
            .folds
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != fold)
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect())
    }

    pub fn fold_of(&self, id: &StationId) -> Option<usize> {
        self.folds.iter().position(|ids| ids.contains(id))
    }

    pub fn all_stations(&self) -> BTreeSet<&StationId> {
        self.folds.iter().flatten().collect()
    }
}

/// Where a training entry came from; used to audit fold leakage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: StationId,
    pub target: StationId,
    pub timestamp: i64,
}

/// One source→target training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEntry {
    pub source_attrs: StationAttributes,
    pub target_attrs: StationAttributes,
    /// Source climate: temperature, dew point, RH, northward wind, eastward wind.
    pub climate: [f64; 5],
    /// Target next-hour minimum temperature.
    pub label: f64,
    pub provenance: Provenance,
}

pub const N_SPATIAL_FEATURES: usize = 13;
pub const N_CLIMATE_FEATURES: usize = 5;

impl TrainingEntry {
    /// Source attributes, target attributes, then source climate.
    pub fn features(&self) -> [f64; N_SPATIAL_FEATURES] {
        spatial_features(&self.source_attrs, &self.target_attrs, &self.climate)
    }

    pub fn is_finite(&self) -> bool {
        self.features().iter().all(|v| v.is_finite()) && self.label.is_finite()
    }
}

/// Assembles the 13-column feature vector used by spatial submodels.
pub fn spatial_features(
    source: &StationAttributes,
    target: &StationAttributes,
    climate: &[f64; N_CLIMATE_FEATURES],
) -> [f64; N_SPATIAL_FEATURES] {
    let mut out = [0.0; N_SPATIAL_FEATURES];
    out[..4].copy_from_slice(&source.as_array());
    out[4..8].copy_from_slice(&target.as_array());
    out[8..].copy_from_slice(climate);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs() -> StationAttributes {
        StationAttributes::new(GeoPoint::new(149.0, -35.0).unwrap(), 580.0, 0.4).unwrap()
    }

    fn obs(ts: i64, rh: f64) -> ClimateObservation {
        ClimateObservation {
            timestamp: ts,
            temperature: 5.0,
            dew_point: 2.0,
            rh,
            wind_speed: 3.0,
            wind_dir: 90.0,
        }
    }

    fn series(observations: Vec<ClimateObservation>) -> StationSeries {
        StationSeries {
            id: StationId::new("63291").unwrap(),
            attrs: attrs(),
            observations,
        }
    }

    #[test]
    fn rh_out_of_range_is_reported_with_index() {
        let s = series((0..5).map(|i| obs(i, if i == 3 { 150.0 } else { 60.0 })).collect());
        assert_eq!(validate_series(&s), vec![Violation::new("rh", Some(3), "range")]);
    }

    #[test]
    fn empty_series_is_valid() {
        assert!(validate_series(&series(vec![])).is_empty());
    }

    #[test]
    fn duplicate_timestamp_is_reported() {
        let s = series(vec![obs(10, 50.0), obs(10, 50.0)]);
        assert_eq!(
            validate_series(&s),
            vec![Violation::new("timestamp", Some(1), "strictly increasing")]
        );
    }

    #[test]
    fn dew_point_tolerance() {
        let mut o = obs(0, 50.0);
        o.dew_point = o.temperature + 0.4;
        assert!(validate_series(&series(vec![o])).is_empty());
        o.dew_point = o.temperature + 0.6;
        assert_eq!(validate_series(&series(vec![o])).len(), 1);
    }

    #[test]
    fn empty_station_id_rejected() {
        assert!(StationId::new("").is_err());
        assert!(serde_json::from_str::<StationId>("\"\"").is_err());
    }

    #[test]
    fn gaps_are_recorded() {
        let s = series(vec![obs(0, 50.0), obs(1, 50.0), obs(2, 50.0), obs(7, 50.0), obs(8, 50.0)]);
        assert_eq!(s.gaps(), vec![(2, 7)]);
    }

    #[test]
    fn fold_assignment_rejects_overlap() {
        let id = |s: &str| StationId::new(s).unwrap();
        let folds = vec![vec![id("a")], vec![id("a")], vec![], vec![], vec![]];
        assert!(FoldAssignment::new(folds).is_err());
        assert!(FoldAssignment::new(vec![vec![id("a")]]).is_err());
    }

    #[test]
    fn feature_order() {
        let e = TrainingEntry {
            source_attrs: attrs(),
            target_attrs: StationAttributes::new(GeoPoint::new(150.0, -34.0).unwrap(), 10.0, -0.2)
                .unwrap(),
            climate: [1.0, 2.0, 3.0, 4.0, 5.0],
            label: 0.0,
            provenance: Provenance {
                source: StationId::new("a").unwrap(),
                target: StationId::new("b").unwrap(),
                timestamp: 0,
            },
        };
        assert_eq!(
            e.features(),
            [149.0, -35.0, 580.0, 0.4, 150.0, -34.0, 10.0, -0.2, 1.0, 2.0, 3.0, 4.0, 5.0]
        );
    }
}
