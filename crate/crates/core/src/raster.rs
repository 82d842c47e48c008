//! Predicted minimum-temperature maps over the masked attribute grid, and
//! paired comparisons between maps.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{StationAttributes, StationId, StationSeries, N_CLIMATE_FEATURES};
use crate::ensemble::{intermediate_weight, station_distances, SubmodelBank};
use crate::error::{Error, Result};
use crate::evaluate::{paired_t_test, PValueMatrix, TTest};
use crate::features::climate_features;
use crate::ingest::{AttributeGrid, NODATA};

pub type Climate = [f64; N_CLIMATE_FEATURES];

/// How a cell's prediction is formed from the bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RasterMethod {
    /// One submodel's map.
    Single(StationId),
    /// Plain mean over every source with climate.
    Average,
    /// Per-cell inverse-distance weights with the fold's frozen statistics.
    WeightedAverage,
}

/// Climate features of the sources at the map's snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub enum RasterClimate {
    PerSource(BTreeMap<StationId, Climate>),
    /// The same features for every source.
    Shared(Climate),
}

impl RasterClimate {
    fn resolve(&self, bank: &SubmodelBank) -> Result<Vec<(StationId, Climate)>> {
        let out: Vec<(StationId, Climate)> = match self {
            RasterClimate::Shared(c) => bank.members.keys().map(|id| (id.clone(), *c)).collect(),
            RasterClimate::PerSource(map) => {
                for id in map.keys() {
                    if !bank.members.contains_key(id) {
                        return Err(Error::UnknownStation(format!("{id} is not a bank member")));
                    }
                }
                map.iter().map(|(id, c)| (id.clone(), *c)).collect()
            }
        };
        if out.is_empty() {
            return Err(Error::EmptyData("no source climate for the raster".into()));
        }
        Ok(out)
    }
}

/// Climate features of every bank member observed at `timestamp`. Members
/// without an observation at that minute are left out.
pub fn climate_snapshot(bank: &SubmodelBank, stations: &[StationSeries], timestamp: i64) -> Result<RasterClimate> {
    let mut map = BTreeMap::new();
    for s in stations.iter().filter(|s| bank.members.contains_key(&s.id)) {
        if let Some(i) = s.position(timestamp) {
            map.insert(s.id.clone(), climate_features(&s.observations[i])?);
        }
    }
    if map.is_empty() {
        return Err(Error::EmptyData(format!("no bank member observed at timestamp {timestamp}")));
    }
    Ok(RasterClimate::PerSource(map))
}

fn predict_cell(
    bank: &SubmodelBank,
    sources: &[(StationId, Climate)],
    target: &StationAttributes,
    method: &RasterMethod,
) -> Result<f64> {
    match method {
        RasterMethod::Single(id) => {
            let (_, c) = sources
                .iter()
                .find(|(s, _)| s == id)
                .ok_or_else(|| Error::UnknownStation(format!("{id} has no climate for the raster")))?;
            bank.predict_single(id, c, target)
        }
        RasterMethod::Average => {
            let mut sum = 0.0;
            for (id, c) in sources {
                sum += bank.predict_single(id, c, target)?;
            }
            Ok(sum / sources.len() as f64)
        }
        RasterMethod::WeightedAverage => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (id, c) in sources {
                let raw = station_distances(bank.attributes(id)?, target);
                let w = intermediate_weight(&bank.distance_scaler.normalize(&raw), &bank.coefficients);
                num += w * bank.predict_single(id, c, target)?;
                den += w;
            }
            Ok(num / den)
        }
    }
}

/// Predicts every cell unmasked in both `dem` and `ndvi`; other cells are
/// masked and hold [`NODATA`]. The output has the DEM's geometry.
pub fn generate_raster(
    bank: &SubmodelBank,
    climate: &RasterClimate,
    dem: &AttributeGrid,
    ndvi: &AttributeGrid,
    method: &RasterMethod,
) -> Result<AttributeGrid> {
    if !dem.same_geometry(ndvi) {
        return Err(Error::Format("DEM and NDVI grids differ in geometry".into()));
    }
    let sources = climate.resolve(bank)?;
    if let RasterMethod::Single(id) = method {
        if !sources.iter().any(|(s, _)| s == id) {
            return Err(Error::UnknownStation(format!("{id} has no climate for the raster")));
        }
    }
    let rows: Vec<Vec<(f64, bool)>> = (0..dem.nrows)
        .into_par_iter()
        .map(|row| {
            (0..dem.ncols)
                .map(|col| {
                    let i = dem.index(col, row);
                    if !(dem.mask[i] && ndvi.mask[i]) {
                        return Ok((NODATA, false));
                    }
                    let target = StationAttributes::new(dem.cell_center(col, row), dem.values[i], ndvi.values[i])?;
                    let v = predict_cell(bank, &sources, &target, method)?;
                    if !v.is_finite() {
                        return Err(Error::Numerical(format!("non-finite prediction at cell ({col}, {row})")));
                    }
                    Ok((v, true))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let (values, mask) = rows.into_iter().flatten().unzip();
    AttributeGrid::new(dem.xllcorner, dem.yllcorner, dem.cell_size, dem.ncols, dem.nrows, values, mask)
}

/// Values of the cells unmasked in both grids, row-major from the south.
pub fn joint_cells(a: &AttributeGrid, b: &AttributeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    if !a.same_geometry(b) {
        return Err(Error::Format("rasters differ in geometry".into()));
    }
    Ok((0..a.len())
        .filter(|&i| a.mask[i] && b.mask[i])
        .map(|i| (a.values[i], b.values[i]))
        .unzip())
}

/// Paired t-test over the jointly unmasked cells.
pub fn compare_rasters(a: &AttributeGrid, b: &AttributeGrid) -> Result<TTest> {
    let (x, y) = joint_cells(a, b)?;
    paired_t_test(&x, &y)
}

/// p-values of every pair of labelled rasters.
pub fn raster_matrix(rasters: &BTreeMap<String, AttributeGrid>) -> Result<PValueMatrix> {
    if rasters.len() < 2 {
        return Err(Error::InvalidInput("a p-value matrix needs at least two rasters".into()));
    }
    let labels: Vec<String> = rasters.keys().cloned().collect();
    let grids: Vec<&AttributeGrid> = rasters.values().collect();
    PValueMatrix::build(labels, |i, j| Ok(compare_rasters(grids[i], grids[j])?.p))
}

/// Value range written next to a heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapLegend {
    pub min: f64,
    pub max: f64,
    /// Colors at `min` and `max`; the ramp is linear between them.
    pub low_rgb: [u8; 3],
    pub high_rgb: [u8; 3],
}

const LOW_RGB: [u8; 3] = [49, 54, 149];
const HIGH_RGB: [u8; 3] = [215, 48, 39];

/// Renders the grid north-up as an RGBA PNG (masked cells transparent) and
/// writes the legend to the same path with a `.json` extension.
pub fn write_heatmap(grid: &AttributeGrid, path: &Path) -> Result<HeatmapLegend> {
    let unmasked = || (0..grid.len()).filter(|&i| grid.mask[i]).map(|i| grid.values[i]);
    let (min, max) = unmasked().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !min.is_finite() {
        return Err(Error::EmptyData("raster has no unmasked cells".into()));
    }
    let span = max - min;
    let mut img = image::RgbaImage::new(grid.ncols as u32, grid.nrows as u32);
    for row in 0..grid.nrows {
        for col in 0..grid.ncols {
            let i = grid.index(col, row);
            let px = if grid.mask[i] {
                let t = if span > 0.0 { (grid.values[i] - min) / span } else { 0.5 };
                let mix = |k: usize| (LOW_RGB[k] as f64 + t * (HIGH_RGB[k] as f64 - LOW_RGB[k] as f64)).round() as u8;
                image::Rgba([mix(0), mix(1), mix(2), 255])
            } else {
                image::Rgba([0, 0, 0, 0])
            };
            img.put_pixel(col as u32, (grid.nrows - 1 - row) as u32, px);
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))?;
    let legend = HeatmapLegend {
        min,
        max,
        low_rgb: LOW_RGB,
        high_rgb: HIGH_RGB,
    };
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&legend)? + "\n")?;
    Ok(legend)
}
