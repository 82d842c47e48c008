//! Preprocessing: wind decomposition, next-hour minimum labels, source→target
//! pair assembly and z-score scaling.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{
    ClimateObservation, Provenance, StationSeries, TrainingEntry, N_CLIMATE_FEATURES,
};
use crate::error::{Error, Result};
use crate::neuralnet::Samples;

/// Default label horizon in one-minute steps.
pub const DEFAULT_HORIZON: usize = 60;

/// Eastward and northward wind components, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindComponents {
    pub v_e: f64,
    pub v_n: f64,
}

/// Turns a "blowing from" direction into the "blowing towards" direction.
pub fn reverse_direction(met: f64) -> f64 {
    if met < 180.0 {
        met + 180.0
    } else {
        met - 180.0
    }
}

/// Decomposes a meteorological wind report (direction the wind comes from,
/// degrees clockwise from north) into vector components.
pub fn wind_to_components(met: f64, speed: f64) -> Result<WindComponents> {
    if !(0.0..360.0).contains(&met) {
        return Err(Error::Domain(format!("wind direction {met} outside [0, 360)")));
    }
    if !(speed >= 0.0) {
        return Err(Error::Domain(format!("wind speed {speed} is negative")));
    }
    let toward = reverse_direction(met).to_radians();
    Ok(WindComponents {
        v_e: speed * toward.sin(),
        v_n: speed * toward.cos(),
    })
}

/// Climate feature block for one observation: temperature, dew point, RH,
/// northward wind, eastward wind.
pub fn climate_features(obs: &ClimateObservation) -> Result<[f64; N_CLIMATE_FEATURES]> {
    let w = wind_to_components(obs.wind_dir, obs.wind_speed)?;
    Ok([obs.temperature, obs.dew_point, obs.rh, w.v_n, w.v_e])
}

/// Minimum temperature over the `horizon` observations after each index.
///
/// Index `t` is labelled with `min(temp[t+1..=t+horizon])`; the last
/// `horizon` indices have no complete window and are skipped.
pub fn label_next_hour_min(series: &StationSeries, horizon: usize) -> Vec<(i64, f64)> {
    let obs = &series.observations;
    let n = obs.len();
    if horizon == 0 || n <= horizon {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n - horizon);
    // Monotone deque of indices with increasing temperatures over the window.
    let mut window: VecDeque<usize> = VecDeque::with_capacity(horizon + 1);
    let push = |window: &mut VecDeque<usize>, j: usize| {
        while window.back().is_some_and(|&k| obs[k].temperature >= obs[j].temperature) {
            window.pop_back();
        }
        window.push_back(j);
    };
    for j in 1..=horizon {
        push(&mut window, j);
    }
    for t in 0..(n - horizon) {
        if t > 0 {
            push(&mut window, t + horizon);
            while window.front().is_some_and(|&k| k <= t) {
                window.pop_front();
            }
        }
        out.push((obs[t].timestamp, obs[window[0]].temperature));
    }
    out
}

/// Joins source observations with target labels on exact timestamps.
///
/// `target_labels` must be sorted by timestamp, as returned by
/// [`label_next_hour_min`]. `keep` filters timestamps (e.g. for subsampling).
pub fn pair_entries_with_labels(
    source: &StationSeries,
    target: &StationSeries,
    target_labels: &[(i64, f64)],
    mut keep: impl FnMut(i64) -> bool,
) -> Result<Vec<TrainingEntry>> {
    let mut out = Vec::new();
    let mut j = 0;
    for obs in &source.observations {
        while j < target_labels.len() && target_labels[j].0 < obs.timestamp {
            j += 1;
        }
        if j == target_labels.len() {
            break;
        }
        if target_labels[j].0 != obs.timestamp || !keep(obs.timestamp) {
            continue;
        }
        out.push(TrainingEntry {
            source_attrs: source.attrs,
            target_attrs: target.attrs,
            climate: climate_features(obs)?,
            label: target_labels[j].1,
            provenance: Provenance {
                source: source.id.clone(),
                target: target.id.clone(),
                timestamp: obs.timestamp,
            },
        });
    }
    Ok(out)
}

/// Every source→target entry on the two series' shared labelled timestamps.
pub fn build_pair_entries(
    source: &StationSeries,
    target: &StationSeries,
    horizon: usize,
) -> Result<Vec<TrainingEntry>> {
    let labels = label_next_hour_min(target, horizon);
    pair_entries_with_labels(source, target, &labels, |_| true)
}

/// On-site rows for a baseline model: the station's own climate against its
/// own next-hour minimum, with timestamps.
pub fn baseline_rows(series: &StationSeries, horizon: usize) -> Result<Vec<(i64, [f64; 5], f64)>> {
    let labels = label_next_hour_min(series, horizon);
    labels
        .iter()
        .enumerate()
        .map(|(i, &(ts, label))| Ok((ts, climate_features(&series.observations[i])?, label)))
        .collect()
}

/// Per-column mean and standard deviation for features and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    pub label_mean: f64,
    pub label_sd: f64,
}

const MIN_SD: f64 = 1e-12;

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > MIN_SD { sd } else { 1.0 })
}

/// Fits z-score statistics (population standard deviation). Columns with no
/// spread get a standard deviation of 1.
pub fn fit_scaler(samples: &Samples) -> Result<ScalerStats> {
    if samples.is_empty() {
        return Err(Error::EmptyData("cannot fit a scaler on zero samples".into()));
    }
    let dim = samples.dim();
    let mut feature_mean = Vec::with_capacity(dim);
    let mut feature_sd = Vec::with_capacity(dim);
    for c in 0..dim {
        let (m, s) = mean_sd(samples.rows().map(move |r| r[c]));
        feature_mean.push(m);
        feature_sd.push(s);
    }
    let (label_mean, label_sd) = mean_sd(samples.labels().iter().copied());
    Ok(ScalerStats {
        feature_mean,
        feature_sd,
        label_mean,
        label_sd,
    })
}

/// Convenience wrapper over [`fit_scaler`] for spatial training entries.
pub fn fit_scaler_entries(entries: &[TrainingEntry]) -> Result<ScalerStats> {
    fit_scaler(&Samples::from_entries(entries))
}

impl ScalerStats {
    pub fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn scale_features_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (x[k] - self.feature_mean[k]) / self.feature_sd[k];
        }
    }

    pub fn scale_features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.scale_features_into(x, &mut out);
        out
    }

    pub fn scale_label(&self, y: f64) -> f64 {
        (y - self.label_mean) / self.label_sd
    }

    pub fn invert_label(&self, z: f64) -> f64 {
        z * self.label_sd + self.label_mean
    }

    /// Scaled copy of `samples`.
    pub fn apply(&self, samples: &Samples) -> Result<Samples> {
        if samples.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: samples.dim(),
            });
        }
        let mut x = Vec::with_capacity(samples.len() * self.dim());
        for row in samples.rows() {
            x.extend(row.iter().enumerate().map(|(k, v)| (v - self.feature_mean[k]) / self.feature_sd[k]));
        }
        let y = samples.labels().iter().map(|v| self.scale_label(*v)).collect();
        Samples::new(self.dim(), x, y)
    }
}

/// Writes entries as CSV in feature-table order, for debugging.
pub fn write_entries_csv<W: Write>(entries: &[TrainingEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "source", "target", "timestamp", "src_lon", "src_lat", "src_dem", "src_ndvi", "tgt_lon",
        "tgt_lat", "tgt_dem", "tgt_ndvi", "temperature", "dew_point", "rh", "n_wind", "e_wind",
        "label",
    ])?;
    for e in entries {
        let mut rec = vec![
            e.provenance.source.to_string(),
            e.provenance.target.to_string(),
            e.provenance.timestamp.to_string(),
        ];
        rec.extend(e.features().iter().map(f64::to_string));
        rec.push(e.label.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GeoPoint, StationAttributes, StationId};
    use proptest::prelude::*;

    fn series_from(id: &str, temps: &[f64], ts0: i64) -> StationSeries {
        StationSeries {
            id: StationId::new(id).unwrap(),
            attrs: StationAttributes::new(GeoPoint::new(149.0, -35.0).unwrap(), 100.0, 0.2).unwrap(),
            observations: temps
                .iter()
                .enumerate()
                .map(|(i, &t)| ClimateObservation {
                    timestamp: ts0 + i as i64,
                    temperature: t,
                    dew_point: t - 2.0,
                    rh: 80.0,
                    wind_speed: 2.0,
                    wind_dir: 270.0,
                })
                .collect(),
        }
    }

    #[test]
    fn north_wind_blows_south() {
        let w = wind_to_components(0.0, 5.0).unwrap();
        assert!(w.v_e.abs() < 1e-12);
        assert!((w.v_n + 5.0).abs() < 1e-12);
    }

    #[test]
    fn calm_wind() {
        assert_eq!(wind_to_components(180.0, 0.0).unwrap(), WindComponents { v_e: 0.0, v_n: 0.0 });
    }

    #[test]
    fn west_wind_blows_east() {
        // From 270° the wind blows toward 90°: sin 90° = 1, cos 90° = 0.
        let w = wind_to_components(270.0, 4.0).unwrap();
        assert!((w.v_e - 4.0).abs() < 1e-12);
        assert!(w.v_n.abs() < 1e-12);
    }

    #[test]
    fn direction_domain() {
        assert!(wind_to_components(360.0, 1.0).is_err());
        assert!(wind_to_components(-1.0, 1.0).is_err());
        assert!(wind_to_components(10.0, -1.0).is_err());
    }

    #[test]
    fn window_minimum() {
        let s = series_from("a", &[1.0, 0.5, -0.2], 0);
        assert_eq!(label_next_hour_min(&s, 2), vec![(0, -0.2)]);
    }

    #[test]
    fn constant_series_labels() {
        let s = series_from("a", &[3.0; 100], 0);
        let l = label_next_hour_min(&s, 60);
        assert_eq!(l.len(), 40);
        assert!(l.iter().all(|(_, v)| *v == 3.0));
    }

    #[test]
    fn increasing_series_labels_next_value() {
        let temps: Vec<f64> = (0..20).map(f64::from).collect();
        let s = series_from("a", &temps, 0);
        for (t, (_, v)) in label_next_hour_min(&s, 5).iter().enumerate() {
            assert_eq!(*v, temps[t + 1]);
        }
    }

    #[test]
    fn full_join() {
        let src = series_from("s", &[1.0; 10], 0);
        let tgt = series_from("t", &[2.0; 12], 0);
        let entries = build_pair_entries(&src, &tgt, 2).unwrap();
        assert_eq!(entries.len(), 10);
        assert!(entries.iter().all(|e| e.label == 2.0 && e.is_finite()));
    }

    #[test]
    fn disjoint_timestamps() {
        let src = series_from("s", &[1.0; 10], 0);
        let tgt = series_from("t", &[2.0; 12], 100);
        assert!(build_pair_entries(&src, &tgt, 2).unwrap().is_empty());
    }

    #[test]
    fn self_pairing_matches_baseline_rows() {
        let s = series_from("s", &[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0], 0);
        let entries = build_pair_entries(&s, &s, 3).unwrap();
        let base = baseline_rows(&s, 3).unwrap();
        assert_eq!(entries.len(), base.len());
        for (e, (ts, climate, label)) in entries.iter().zip(&base) {
            assert_eq!(e.provenance.timestamp, *ts);
            assert_eq!(&e.climate, climate);
            assert_eq!(e.label, *label);
            assert_eq!(e.source_attrs, e.target_attrs);
        }
    }

    #[test]
    fn scaler_single_entry() {
        let s = Samples::new(2, vec![3.0, 4.0], vec![1.0]).unwrap();
        let st = fit_scaler(&s).unwrap();
        assert_eq!(st.feature_sd, vec![1.0, 1.0]);
        assert_eq!(st.apply(&s).unwrap().row(0), &[0.0, 0.0]);
    }

    #[test]
    fn scaler_two_points() {
        let s = Samples::new(1, vec![0.0, 2.0], vec![0.0, 0.0]).unwrap();
        let st = fit_scaler(&s).unwrap();
        assert_eq!((st.feature_mean[0], st.feature_sd[0]), (1.0, 1.0));
        let scaled = st.apply(&s).unwrap();
        assert_eq!(scaled.row(0), &[-1.0]);
        assert_eq!(scaled.row(1), &[1.0]);
    }

    #[test]
    fn scaler_label_round_trip() {
        let s = Samples::new(1, vec![0.0, 1.0, 5.0], vec![-3.1, 5.3, 7.7]).unwrap();
        let st = fit_scaler(&s).unwrap();
        assert!((st.invert_label(st.scale_label(5.3)) - 5.3).abs() < 1e-12);
    }

    #[test]
    fn scaler_empty() {
        let s = Samples::new(3, vec![], vec![]).unwrap();
        assert!(fit_scaler(&s).is_err());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let src = series_from("s", &[1.0; 4], 0);
        let entries = build_pair_entries(&src, &src, 1).unwrap();
        let mut buf = Vec::new();
        write_entries_csv(&entries, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + entries.len());
        assert!(text.starts_with("source,target,timestamp,src_lon"));
    }

    proptest! {
        #[test]
        fn wind_magnitude_preserved(met in 0.0f64..360.0, v in 0.0f64..60.0) {
            let w = wind_to_components(met, v).unwrap();
            prop_assert!((w.v_e.hypot(w.v_n) - v).abs() < 1e-9);
        }

        #[test]
        fn reversal_is_involution(met in 0.0f64..360.0) {
            prop_assert!((reverse_direction(reverse_direction(met)) - met).abs() < 1e-12);
        }

        #[test]
        fn label_count_and_brute_force(
            temps in prop::collection::vec(-10.0f64..10.0, 0..80),
            horizon in 1usize..20,
        ) {
            let s = series_from("a", &temps, 0);
            let labels = label_next_hour_min(&s, horizon);
            prop_assert_eq!(labels.len(), temps.len().saturating_sub(horizon));
            for (t, (ts, v)) in labels.iter().enumerate() {
                let brute = temps[t + 1..=t + horizon].iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(*ts, t as i64);
                prop_assert_eq!(*v, brute);
            }
        }

        #[test]
        fn pairing_is_symmetric_in_length(len_a in 5usize..40, len_b in 5usize..40, off in 0i64..10) {
            let a = series_from("a", &vec![1.0; len_a], 0);
            let b = series_from("b", &vec![2.0; len_b], off);
            // Shared timestamps that both series can label.
            let la = label_next_hour_min(&a, 3);
            let lb = label_next_hour_min(&b, 3);
            let shared: Vec<i64> = la.iter().map(|x| x.0).filter(|t| lb.iter().any(|y| y.0 == *t)).collect();
            let ab = pair_entries_with_labels(&a, &b, &lb, |t| shared.contains(&t)).unwrap();
            let ba = pair_entries_with_labels(&b, &a, &la, |t| shared.contains(&t)).unwrap();
            prop_assert_eq!(ab.len(), ba.len());
        }
    }
}
