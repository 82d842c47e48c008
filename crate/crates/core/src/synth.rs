//! Seeded synthetic worlds: terrain and vegetation grids, a closed-form
//! temperature field, and station series sampled from it.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ClimateObservation, GeoPoint, StationAttributes, StationId, StationSeries};
use crate::error::{Error, Result};
use crate::ingest::{
    apply_boundary_mask, lookup_attribute, write_ascii_grid, write_station_csv, AttributeGrid, BoundaryPolygon,
    Dataset, StationMeta,
};

/// 2018-06-01T00:00Z in minutes since the Unix epoch.
pub const DEFAULT_START_MINUTE: i64 = 25_463_520;

const MINUTES_PER_DAY: f64 = 1440.0;
/// Time of day (minutes) of the diurnal temperature peak.
const PEAK_MINUTE: f64 = 900.0;
const MAGNUS_A: f64 = 17.625;
const MAGNUS_B: f64 = 243.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    pub n_stations: usize,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub cell_size: f64,
    pub days: u32,
    /// Minutes between observations.
    pub sample_interval: i64,
    pub start_minute: i64,
    pub mean_temperature: f64,
    pub diurnal_amplitude: f64,
    pub synoptic_amplitude: f64,
    /// °C per metre.
    pub lapse_rate: f64,
    pub dem_floor: f64,
    pub dem_amplitude: f64,
    /// °C per unit NDVI.
    pub ndvi_coupling: f64,
    /// Amplitudes of static spatial temperature harmonics, °C.
    pub spatial_harmonics: Vec<f64>,
    /// Amplitude of travelling weather waves, °C.
    pub weather_amplitude: f64,
    /// Night-time cooling under calm air, °C.
    pub radiative_cooling: f64,
    /// Wind speed (m/s) over which radiative cooling decays by 1/e.
    pub calm_wind: f64,
    pub wind_mean: f64,
    pub wind_amplitude: f64,
    /// Typical wavelength of wind-speed patches, degrees.
    pub wind_wavelength: f64,
    /// Typical wavelength of travelling weather waves, degrees.
    pub weather_wavelength: f64,
    pub noise_sd: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 1,
            n_stations: 75,
            lon_min: 148.5,
            lon_max: 150.5,
            lat_min: -36.0,
            lat_max: -34.0,
            cell_size: 0.01,
            days: 7,
            sample_interval: 1,
            start_minute: DEFAULT_START_MINUTE,
            mean_temperature: 14.0,
            diurnal_amplitude: 5.0,
            synoptic_amplitude: 2.0,
            lapse_rate: 0.0065,
            dem_floor: 100.0,
            dem_amplitude: 400.0,
            ndvi_coupling: 1.0,
            spatial_harmonics: vec![1.0, 0.5],
            weather_amplitude: 4.0,
            radiative_cooling: 13.0,
            calm_wind: 0.8,
            wind_mean: 1.0,
            wind_amplitude: 4.0,
            wind_wavelength: 0.25,
            weather_wavelength: 1.0,
            noise_sd: 0.5,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("world spec: {msg}")));
        if self.n_stations < 5 {
            return bad("n_stations must be at least 5");
        }
        if self.days < 1 {
            return bad("days must be at least 1");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative");
        }
        if self.sample_interval <= 0 {
            return bad("sample_interval must be positive");
        }
        if !(self.cell_size > 0.0) {
            return bad("cell_size must be positive");
        }
        if !(self.lon_min < self.lon_max && self.lat_min < self.lat_max) {
            return bad("empty region");
        }
        if GeoPoint::new(self.lon_min, self.lat_min).is_err() || GeoPoint::new(self.lon_max, self.lat_max).is_err() {
            return bad("region outside lon/lat bounds");
        }
        if self.grid_dims().0 == 0 || self.grid_dims().1 == 0 {
            return bad("region smaller than one cell");
        }
        if !(self.dem_floor >= 0.0 && self.dem_amplitude >= 0.0) {
            return bad("dem_floor and dem_amplitude must be non-negative");
        }
        if !(self.calm_wind > 0.0) || !(self.wind_mean >= 0.0) || !(self.wind_amplitude >= 0.0) {
            return bad("wind parameters must be non-negative and calm_wind positive");
        }
        if !(self.wind_wavelength > 0.0 && self.weather_wavelength > 0.0) {
            return bad("wavelengths must be positive");
        }
        Ok(())
    }

    fn grid_dims(&self) -> (usize, usize) {
        (
            ((self.lon_max - self.lon_min) / self.cell_size).round() as usize,
            ((self.lat_max - self.lat_min) / self.cell_size).round() as usize,
        )
    }

    fn center(&self) -> (f64, f64) {
        (0.5 * (self.lon_min + self.lon_max), 0.5 * (self.lat_min + self.lat_max))
    }
}

/// `amp * sin(kx*x + ky*y - omega*t + phase)` with `x, y` in degrees from
/// the region center and `t` in minutes from the world start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amp: f64,
    pub kx: f64,
    pub ky: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amp: f64, wavelength: (f64, f64), period_minutes: Option<(f64, f64)>) -> Self {
        let lambda = rng.random_range(wavelength.0..wavelength.1);
        let theta = rng.random_range(0.0..2.0 * PI);
        let k = 2.0 * PI / lambda;
        let omega = match period_minutes {
            Some((lo, hi)) => 2.0 * PI / rng.random_range(lo..hi),
            None => 0.0,
        };
        Wave {
            amp,
            kx: k * theta.cos(),
            ky: k * theta.sin(),
            omega,
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, x: f64, y: f64, t: f64) -> f64 {
        self.amp * (self.kx * x + self.ky * y - self.omega * t + self.phase).sin()
    }

    /// Bound on the spatial gradient magnitude.
    fn slope(&self) -> f64 {
        self.amp.abs() * self.kx.hypot(self.ky)
    }
}

fn sum_at(waves: &[Wave], x: f64, y: f64, t: f64) -> f64 {
    waves.iter().map(|w| w.at(x, y, t)).sum()
}

fn sum_slope(waves: &[Wave]) -> f64 {
    waves.iter().map(Wave::slope).sum()
}

/// Noiseless closed-form climate, queryable at any point and minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthField {
    pub center: (f64, f64),
    pub start_minute: i64,
    pub mean_temperature: f64,
    pub diurnal_amplitude: f64,
    pub synoptic: Wave,
    pub lapse_rate: f64,
    pub dem_floor: f64,
    pub dem_waves: Vec<Wave>,
    pub ndvi_offset: f64,
    pub ndvi_waves: Vec<Wave>,
    pub ndvi_coupling: f64,
    pub harmonics: Vec<Wave>,
    pub weather: Vec<Wave>,
    pub radiative_cooling: f64,
    pub calm_wind: f64,
    pub wind_mean: f64,
    pub wind_waves: Vec<Wave>,
    pub wind_dir_base: f64,
    pub wind_dir_waves: Vec<Wave>,
    pub dew_waves: Vec<Wave>,
}

impl TruthField {
    fn xy(&self, p: GeoPoint) -> (f64, f64) {
        (p.lon - self.center.0, p.lat - self.center.1)
    }

    fn rel(&self, minute: i64) -> f64 {
        (minute - self.start_minute) as f64
    }

    /// Terrain height, metres; never negative.
    pub fn dem(&self, p: GeoPoint) -> f64 {
        let (x, y) = self.xy(p);
        let amp: f64 = self.dem_waves.iter().map(|w| w.amp).sum();
        (self.dem_floor + amp + sum_at(&self.dem_waves, x, y, 0.0)).max(0.0)
    }

    /// Vegetation index in (-1, 1).
    pub fn ndvi(&self, p: GeoPoint) -> f64 {
        let (x, y) = self.xy(p);
        (self.ndvi_offset + sum_at(&self.ndvi_waves, x, y, 0.0)).tanh()
    }

    /// 0 by day, rising to 1 at the coldest time of night.
    pub fn night(&self, minute: i64) -> f64 {
        (-self.diurnal_phase(minute).cos()).max(0.0)
    }

    fn diurnal_phase(&self, minute: i64) -> f64 {
        let tod = minute.rem_euclid(MINUTES_PER_DAY as i64) as f64;
        2.0 * PI * (tod - PEAK_MINUTE) / MINUTES_PER_DAY
    }

    pub fn wind_speed(&self, p: GeoPoint, minute: i64) -> f64 {
        let (x, y) = self.xy(p);
        (self.wind_mean + sum_at(&self.wind_waves, x, y, self.rel(minute))).max(0.0)
    }

    /// Meteorological direction the wind blows from, degrees in [0, 360).
    pub fn wind_dir(&self, p: GeoPoint, minute: i64) -> f64 {
        let (x, y) = self.xy(p);
        let d = (self.wind_dir_base + sum_at(&self.wind_dir_waves, x, y, self.rel(minute))).rem_euclid(360.0);
        if d >= 360.0 {
            0.0
        } else {
            d
        }
    }

    /// Dew-point depression, °C; never negative.
    pub fn dew_depression(&self, p: GeoPoint, minute: i64) -> f64 {
        let (x, y) = self.xy(p);
        (3.5 + sum_at(&self.dew_waves, x, y, self.rel(minute)) - 2.0 * self.night(minute)).max(0.0)
    }

    pub fn temperature(&self, p: GeoPoint, minute: i64) -> f64 {
        let (x, y) = self.xy(p);
        let t = self.rel(minute);
        let calm = (-self.wind_speed(p, minute) / self.calm_wind).exp();
        self.mean_temperature + self.diurnal_amplitude * self.diurnal_phase(minute).cos() + self.synoptic.at(0.0, 0.0, t)
            - self.lapse_rate * self.dem(p)
            + self.ndvi_coupling * self.ndvi(p)
            + sum_at(&self.harmonics, x, y, 0.0)
            + sum_at(&self.weather, x, y, t)
            - self.radiative_cooling * self.night(minute) * calm
    }

    /// Upper bound on |T(p) - T(q)| / |p - q| at any fixed time.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lapse_rate.abs() * sum_slope(&self.dem_waves)
            + self.ndvi_coupling.abs() * sum_slope(&self.ndvi_waves)
            + sum_slope(&self.harmonics)
            + sum_slope(&self.weather)
            + self.radiative_cooling.abs() * sum_slope(&self.wind_waves) / self.calm_wind
    }
}

/// Relative humidity (%) from temperature and dew point (Magnus).
pub fn magnus_rh(temperature: f64, dew_point: f64) -> f64 {
    let rh = 100.0 * (MAGNUS_A * dew_point / (MAGNUS_B + dew_point) - MAGNUS_A * temperature / (MAGNUS_B + temperature)).exp();
    rh.clamp(0.0, 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub stations: Vec<StationSeries>,
    /// Unmasked terrain grid over the whole region.
    pub dem: AttributeGrid,
    /// Unmasked vegetation grid over the whole region.
    pub ndvi: AttributeGrid,
    pub boundary: BoundaryPolygon,
    pub truth: TruthField,
}

impl World {
    pub fn station_ids(&self) -> Vec<StationId> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    /// The dataset ingesting this world's files would produce.
    pub fn dataset(&self) -> Dataset {
        Dataset {
            stations: self.stations.clone(),
            dem: apply_boundary_mask(&self.dem, &self.boundary),
            ndvi: apply_boundary_mask(&self.ndvi, &self.boundary),
            boundary: Some(self.boundary.clone()),
            dropped_rows: self.stations.iter().map(|s| (s.id.clone(), 0)).collect(),
        }
    }
}

fn truth_field(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> TruthField {
    let span = (spec.lon_max - spec.lon_min).min(spec.lat_max - spec.lat_min);
    let day = MINUTES_PER_DAY;
    let dem_waves = [0.5, 0.3, 0.2]
        .iter()
        .map(|share| Wave::random(rng, share * spec.dem_amplitude, (0.4 * span, 1.5 * span), None))
        .collect();
    let ndvi_waves = [0.7, 0.4]
        .iter()
        .map(|a| Wave::random(rng, *a, (0.3 * span, 1.2 * span), None))
        .collect();
    let harmonics = spec
        .spatial_harmonics
        .iter()
        .map(|a| Wave::random(rng, *a, (0.25 * span, 1.0 * span), None))
        .collect();
    let band = |l: f64| (0.6 * l, 1.4 * l);
    let weather = (0..2)
        .map(|_| Wave::random(rng, 0.5 * spec.weather_amplitude, band(spec.weather_wavelength), Some((day, 3.0 * day))))
        .collect();
    let wind_waves = (0..3)
        .map(|_| Wave::random(rng, spec.wind_amplitude / 3.0, band(spec.wind_wavelength), Some((0.5 * day, 2.0 * day))))
        .collect();
    let wind_dir_waves = vec![
        Wave::random(rng, 70.0, (2.0 * span, 4.0 * span), Some((day, 4.0 * day))),
        Wave::random(rng, 40.0, (0.5 * span, 1.5 * span), None),
    ];
    let dew_waves = vec![Wave::random(rng, 1.5, (0.5 * span, 2.0 * span), Some((day, 3.0 * day)))];
    let synoptic = Wave {
        amp: spec.synoptic_amplitude,
        kx: 0.0,
        ky: 0.0,
        omega: 2.0 * PI / rng.random_range(3.0 * day..5.0 * day),
        phase: rng.random_range(0.0..2.0 * PI),
    };
    TruthField {
        center: spec.center(),
        start_minute: spec.start_minute,
        mean_temperature: spec.mean_temperature,
        diurnal_amplitude: spec.diurnal_amplitude,
        synoptic,
        lapse_rate: spec.lapse_rate,
        dem_floor: spec.dem_floor,
        dem_waves,
        ndvi_offset: 0.4,
        ndvi_waves,
        ndvi_coupling: spec.ndvi_coupling,
        harmonics,
        weather,
        radiative_cooling: spec.radiative_cooling,
        calm_wind: spec.calm_wind,
        wind_mean: spec.wind_mean,
        wind_waves,
        wind_dir_base: rng.random_range(0.0..360.0),
        wind_dir_waves,
        dew_waves,
    }
}

/// Star-shaped polygon around the region center, inside the region box.
fn boundary_polygon(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<BoundaryPolygon> {
    const VERTICES: usize = 14;
    let (cx, cy) = spec.center();
    let (hw, hh) = (0.5 * (spec.lon_max - spec.lon_min), 0.5 * (spec.lat_max - spec.lat_min));
    let ring = (0..VERTICES)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / VERTICES as f64;
            let r = rng.random_range(0.75..0.95);
            GeoPoint::new(cx + r * hw * a.cos(), cy + r * hh * a.sin())
        })
        .collect::<Result<Vec<_>>>()?;
    BoundaryPolygon::new(vec![ring])
}

fn station_series(
    spec: &WorldSpec,
    truth: &TruthField,
    id: StationId,
    attrs: StationAttributes,
    index: usize,
) -> Result<StationSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(index as u64 + 1));
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let n = spec.days as i64 * MINUTES_PER_DAY as i64 / spec.sample_interval;
    let p = attrs.location;
    let observations = (0..n)
        .map(|k| {
            let ts = spec.start_minute + k * spec.sample_interval;
            let temperature = truth.temperature(p, ts) + noise.sample(&mut rng);
            let dew_point = temperature - truth.dew_depression(p, ts);
            ClimateObservation {
                timestamp: ts,
                temperature,
                dew_point,
                rh: magnus_rh(temperature, dew_point),
                wind_speed: truth.wind_speed(p, ts),
                wind_dir: truth.wind_dir(p, ts),
            }
        })
        .collect();
    Ok(StationSeries {
        id,
        attrs,
        observations,
    })
}

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = truth_field(spec, &mut rng);
    let boundary = boundary_polygon(spec, &mut rng)?;
    let (ncols, nrows) = spec.grid_dims();
    let dem = AttributeGrid::from_fn(spec.lon_min, spec.lat_min, spec.cell_size, ncols, nrows, |p| truth.dem(p))?;
    let ndvi = AttributeGrid::from_fn(spec.lon_min, spec.lat_min, spec.cell_size, ncols, nrows, |p| truth.ndvi(p))?;
    let dem_masked = apply_boundary_mask(&dem, &boundary);
    let ndvi_masked = apply_boundary_mask(&ndvi, &boundary);

    let mut sites = Vec::with_capacity(spec.n_stations);
    while sites.len() < spec.n_stations {
        let p = GeoPoint::new(
            rng.random_range(spec.lon_min..spec.lon_max),
            rng.random_range(spec.lat_min..spec.lat_max),
        )?;
        if boundary.contains(p) && dem_masked.locate(p).is_ok() {
            sites.push(p);
        }
    }
    let stations = sites
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let id = StationId::new(format!("{}", 60000 + i))?;
            let attrs = StationAttributes::new(p, lookup_attribute(&dem_masked, p)?, lookup_attribute(&ndvi_masked, p)?)?;
            station_series(spec, &truth, id, attrs, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(World {
        spec: spec.clone(),
        stations,
        dem,
        ndvi,
        boundary,
        truth,
    })
}

/// Writes the world in the ingest formats: `stations.json`, one `<id>.csv`
/// per station, `dem.asc`, `ndvi.asc`, `boundary.json`, plus the generating
/// `world.json`.
pub fn write_world(world: &World, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let metas: Vec<StationMeta> = world
        .stations
        .iter()
        .map(|s| StationMeta {
            id: s.id.clone(),
            lon: s.attrs.location.lon,
            lat: s.attrs.location.lat,
        })
        .collect();
    std::fs::write(dir.join("stations.json"), serde_json::to_string_pretty(&metas)? + "\n")?;
    for s in &world.stations {
        std::fs::write(dir.join(format!("{}.csv", s.id)), write_station_csv(s)?)?;
    }
    std::fs::write(dir.join("dem.asc"), write_ascii_grid(&world.dem))?;
    std::fs::write(dir.join("ndvi.asc"), write_ascii_grid(&world.ndvi))?;
    std::fs::write(dir.join("boundary.json"), world.boundary.to_json())?;
    std::fs::write(dir.join("world.json"), serde_json::to_string_pretty(&world.spec)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_series;

    fn small() -> WorldSpec {
        WorldSpec {
            n_stations: 8,
            days: 1,
            sample_interval: 10,
            lon_max: 149.0,
            lat_max: -35.5,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        assert_eq!(generate_world(&small()).unwrap(), generate_world(&small()).unwrap());
        let other = WorldSpec { seed: 2, ..small() };
        assert_ne!(generate_world(&small()).unwrap().stations, generate_world(&other).unwrap().stations);
    }

    #[test]
    fn noiseless_stations_follow_truth() {
        let w = generate_world(&WorldSpec { noise_sd: 0.0, ..small() }).unwrap();
        for s in &w.stations {
            for o in &s.observations {
                assert_eq!(o.temperature, w.truth.temperature(s.attrs.location, o.timestamp));
            }
        }
    }

    #[test]
    fn flat_world_shares_one_series() {
        let spec = WorldSpec {
            lapse_rate: 0.0,
            ndvi_coupling: 0.0,
            spatial_harmonics: vec![],
            weather_amplitude: 0.0,
            radiative_cooling: 0.0,
            noise_sd: 0.0,
            ..small()
        };
        let w = generate_world(&spec).unwrap();
        let first: Vec<f64> = w.stations[0].temperatures().collect();
        for s in &w.stations[1..] {
            assert_eq!(s.temperatures().collect::<Vec<_>>(), first);
        }
    }

    #[test]
    fn series_are_valid_and_inside_boundary() {
        let w = generate_world(&small()).unwrap();
        assert_eq!(w.stations.len(), 8);
        for s in &w.stations {
            assert!(validate_series(s).is_empty(), "{:?}", validate_series(s));
            assert!(w.boundary.contains(s.attrs.location));
            assert_eq!(s.observations.len(), 144);
            assert!(s.observations.iter().all(|o| o.dew_point <= o.temperature));
        }
        assert!(w.dem.values.iter().all(|v| *v >= 0.0));
        assert!(w.ndvi.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn spec_validation() {
        assert!(generate_world(&WorldSpec { n_stations: 4, ..small() }).is_err());
        assert!(generate_world(&WorldSpec { days: 0, ..small() }).is_err());
        assert!(generate_world(&WorldSpec { noise_sd: -1.0, ..small() }).is_err());
    }

    #[test]
    fn magnus_saturates_at_dew_point() {
        assert!((magnus_rh(10.0, 10.0) - 100.0).abs() < 1e-12);
        let rh = magnus_rh(20.0, 10.0);
        assert!(rh > 50.0 && rh < 55.0, "{rh}");
    }
}
