//! Readers and writers for station CSVs, ESRI ASCII rasters and boundary
//! polygons, plus grid resampling, masking and point lookup.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_series, ClimateObservation, GeoPoint, StationAttributes, StationId, StationSeries,
};
use crate::error::{Error, Result};

/// Sentinel written for masked cells.
pub const NODATA: f64 = -9999.0;

pub const STATION_CSV_HEADER: [&str; 6] =
    ["timestamp", "temperature", "dew_point", "rh", "wind_speed", "wind_dir"];

/// Regular lon/lat raster of one scalar.
///
/// Rows are stored south-up: row 0 is the southernmost row. `mask[i]` is
/// `true` when cell `i` lies inside the region and carries data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGrid {
    /// Lower-left corner of the lower-left cell.
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cell_size: f64,
    pub ncols: usize,
    pub nrows: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl AttributeGrid {
    pub fn new(
        xllcorner: f64,
        yllcorner: f64,
        cell_size: f64,
        ncols: usize,
        nrows: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::Format(format!("cell size must be positive, got {cell_size}")));
        }
        if ncols == 0 || nrows == 0 {
            return Err(Error::Format("grid dimensions must be positive".into()));
        }
        let n = ncols * nrows;
        if values.len() != n || mask.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: if values.len() != n { values.len() } else { mask.len() },
            });
        }
        Ok(AttributeGrid {
            xllcorner,
            yllcorner,
            cell_size,
            ncols,
            nrows,
            values,
            mask,
        })
    }

    /// Grid with every cell filled by `f(cell_center)` and unmasked.
    pub fn from_fn(
        xllcorner: f64,
        yllcorner: f64,
        cell_size: f64,
        ncols: usize,
        nrows: usize,
        mut f: impl FnMut(GeoPoint) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(ncols * nrows);
        for row in 0..nrows {
            for col in 0..ncols {
                let c = GeoPoint {
                    lon: xllcorner + (col as f64 + 0.5) * cell_size,
                    lat: yllcorner + (row as f64 + 0.5) * cell_size,
                };
                values.push(f(c));
            }
        }
        let mask = vec![true; values.len()];
        AttributeGrid::new(xllcorner, yllcorner, cell_size, ncols, nrows, values, mask)
    }

    /// Center of the lower-left cell.
    pub fn origin(&self) -> GeoPoint {
        self.cell_center(0, 0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.ncols + col
    }

    pub fn cell_center(&self, col: usize, row: usize) -> GeoPoint {
        GeoPoint {
            lon: self.xllcorner + (col as f64 + 0.5) * self.cell_size,
            lat: self.yllcorner + (row as f64 + 0.5) * self.cell_size,
        }
    }

    pub fn center_of_index(&self, i: usize) -> GeoPoint {
        self.cell_center(i % self.ncols, i / self.ncols)
    }

    pub fn same_geometry(&self, other: &AttributeGrid) -> bool {
        self.xllcorner == other.xllcorner
            && self.yllcorner == other.yllcorner
            && self.cell_size == other.cell_size
            && self.ncols == other.ncols
            && self.nrows == other.nrows
    }

    /// Column and row of the cell containing `p`. Points on the north or east
    /// edge belong to the last cell.
    pub fn locate(&self, p: GeoPoint) -> Result<(usize, usize)> {
        let fx = (p.lon - self.xllcorner) / self.cell_size;
        let fy = (p.lat - self.yllcorner) / self.cell_size;
        let (w, h) = (self.ncols as f64, self.nrows as f64);
        if !(0.0..=w).contains(&fx) || !(0.0..=h).contains(&fy) {
            return Err(Error::OutOfExtent { lon: p.lon, lat: p.lat });
        }
        let col = (fx.floor() as usize).min(self.ncols - 1);
        let row = (fy.floor() as usize).min(self.nrows - 1);
        Ok((col, row))
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Index of the unmasked cell whose center is closest to `p`.
    ///
    /// Searches square rings around the cell nearest to `p` and stops once no
    /// unsearched ring can hold a closer center.
    pub fn nearest_unmasked(&self, p: GeoPoint) -> Option<usize> {
        if self.unmasked_count() == 0 {
            return None;
        }
        let cs = self.cell_size;
        let fc = ((p.lon - self.xllcorner) / cs - 0.5).round();
        let fr = ((p.lat - self.yllcorner) / cs - 0.5).round();
        let c0 = fc.clamp(0.0, (self.ncols - 1) as f64) as i64;
        let r0 = fr.clamp(0.0, (self.nrows - 1) as f64) as i64;
        let max_ring = self.ncols.max(self.nrows) as i64;
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..=max_ring {
            if let Some((d, _)) = best {
                // Every center in this ring is at least (ring - 1) cells away
                // from p, since p lies within half a cell of (c0, r0) or
                // outside the grid on that side.
                if (ring as f64 - 1.0) * cs > d {
                    break;
                }
            }
            for (c, r) in ring_cells(c0, r0, ring) {
                if c < 0 || r < 0 || c >= self.ncols as i64 || r >= self.nrows as i64 {
                    continue;
                }
                let i = self.index(c as usize, r as usize);
                if !self.mask[i] {
                    continue;
                }
                let d = self.center_of_index(i).distance(&p);
                if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                    best = Some((d, i));
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

fn ring_cells(c0: i64, r0: i64, ring: i64) -> Vec<(i64, i64)> {
    if ring == 0 {
        return vec![(c0, r0)];
    }
    let mut out = Vec::with_capacity((8 * ring) as usize);
    for dc in -ring..=ring {
        out.push((c0 + dc, r0 - ring));
        out.push((c0 + dc, r0 + ring));
    }
    for dr in (-ring + 1)..ring {
        out.push((c0 - ring, r0 + dr));
        out.push((c0 + ring, r0 + dr));
    }
    out
}

/// Reads an ESRI ASCII grid. Header keywords are case-insensitive; the body
/// lists rows north first.
pub fn parse_ascii_grid<R: Read>(reader: R) -> Result<AttributeGrid> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text)?;
    let mut tokens = text.split_ascii_whitespace().peekable();
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    while let Some(tok) = tokens.peek() {
        if tok.parse::<f64>().is_ok() {
            break;
        }
        let key = tokens.next().unwrap().to_ascii_lowercase();
        let value = tokens
            .next()
            .ok_or_else(|| Error::Format(format!("header keyword {key} has no value")))?;
        header.insert(key, value.to_string());
    }
    let get = |k: &str| -> Result<&str> {
        header
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing header keyword {k}")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("header {k} is not a positive integer")))
    };
    let parse_f64 = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("header {k} is not a number")))
    };
    let ncols = parse_usize("ncols")?;
    let nrows = parse_usize("nrows")?;
    let cell_size = parse_f64("cellsize")?;
    let (xll, yll) = match (header.contains_key("xllcorner"), header.contains_key("xllcenter")) {
        (true, _) => (parse_f64("xllcorner")?, parse_f64("yllcorner")?),
        (false, true) => (
            parse_f64("xllcenter")? - cell_size / 2.0,
            parse_f64("yllcenter")? - cell_size / 2.0,
        ),
        _ => return Err(Error::Format("missing header keyword xllcorner".into())),
    };
    let nodata = if header.contains_key("nodata_value") {
        Some(parse_f64("nodata_value")?)
    } else {
        None
    };

    let body: Vec<f64> = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("unparsable grid value {t:?}")))
        })
        .collect::<Result<_>>()?;
    let n = ncols * nrows;
    if body.len() != n {
        return Err(Error::Format(format!(
            "header declares {ncols}x{nrows} = {n} cells but body has {}",
            body.len()
        )));
    }
    let mut values = vec![0.0; n];
    let mut mask = vec![true; n];
    for (k, v) in body.into_iter().enumerate() {
        let file_row = k / ncols;
        let col = k % ncols;
        let row = nrows - 1 - file_row;
        let i = row * ncols + col;
        values[i] = v;
        mask[i] = !(nodata == Some(v) || v.is_nan());
    }
    AttributeGrid::new(xll, yll, cell_size, ncols, nrows, values, mask)
}

/// Writes an ESRI ASCII grid; masked cells are written as [`NODATA`].
pub fn write_ascii_grid(grid: &AttributeGrid) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ncols {}", grid.ncols);
    let _ = writeln!(out, "nrows {}", grid.nrows);
    let _ = writeln!(out, "xllcorner {}", grid.xllcorner);
    let _ = writeln!(out, "yllcorner {}", grid.yllcorner);
    let _ = writeln!(out, "cellsize {}", grid.cell_size);
    let _ = writeln!(out, "NODATA_value {}", NODATA);
    for row in (0..grid.nrows).rev() {
        let line: Vec<String> = (0..grid.ncols)
            .map(|col| {
                let i = grid.index(col, row);
                if grid.mask[i] {
                    format!("{}", grid.values[i])
                } else {
                    format!("{}", NODATA)
                }
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_ascii_grid_file(path: &Path) -> Result<AttributeGrid> {
    parse_ascii_grid(std::fs::File::open(path)?)
}

/// Block-mean downsampling to `target_cell` degrees.
///
/// The output shares the source's lower-left corner. Each output cell averages
/// the unmasked source cells whose centers fall inside it; an output cell
/// with no such source cell takes the nearest unmasked source value and is
/// masked.
pub fn resample_grid(src: &AttributeGrid, target_cell: f64) -> Result<AttributeGrid> {
    if !(target_cell > 0.0) {
        return Err(Error::InvalidInput(format!("target cell size must be positive, got {target_cell}")));
    }
    if target_cell < src.cell_size {
        return Err(Error::UnsupportedUpsample {
            target: target_cell,
            source_cell: src.cell_size,
        });
    }
    let width = src.ncols as f64 * src.cell_size;
    let height = src.nrows as f64 * src.cell_size;
    let ncols = ((width / target_cell) - 1e-9).ceil().max(1.0) as usize;
    let nrows = ((height / target_cell) - 1e-9).ceil().max(1.0) as usize;

    let mut sums = vec![0.0; ncols * nrows];
    let mut counts = vec![0usize; ncols * nrows];
    for i in 0..src.len() {
        if !src.mask[i] {
            continue;
        }
        let c = src.center_of_index(i);
        let col = (((c.lon - src.xllcorner) / target_cell).floor() as usize).min(ncols - 1);
        let row = (((c.lat - src.yllcorner) / target_cell).floor() as usize).min(nrows - 1);
        sums[row * ncols + col] += src.values[i];
        counts[row * ncols + col] += 1;
    }
    let mut out = AttributeGrid::new(
        src.xllcorner,
        src.yllcorner,
        target_cell,
        ncols,
        nrows,
        vec![NODATA; ncols * nrows],
        vec![false; ncols * nrows],
    )?;
    for i in 0..out.len() {
        if counts[i] > 0 {
            out.values[i] = sums[i] / counts[i] as f64;
            out.mask[i] = true;
        } else if let Some(j) = src.nearest_unmasked(out.center_of_index(i)) {
            out.values[i] = src.values[j];
        }
    }
    Ok(out)
}

/// Study-region polygon. The first ring is the outer boundary, the rest are
/// holes; rings are implicitly closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolygonFile", into = "PolygonFile")]
pub struct BoundaryPolygon {
    rings: Vec<Vec<GeoPoint>>,
}

#[derive(Serialize, Deserialize)]
struct PolygonFile {
    rings: Vec<Vec<[f64; 2]>>,
}

impl TryFrom<PolygonFile> for BoundaryPolygon {
    type Error = Error;

    fn try_from(f: PolygonFile) -> Result<Self> {
        BoundaryPolygon::new(
            f.rings
                .into_iter()
                .map(|r| r.into_iter().map(|[lon, lat]| GeoPoint { lon, lat }).collect())
                .collect(),
        )
    }
}

impl From<BoundaryPolygon> for PolygonFile {
    fn from(p: BoundaryPolygon) -> Self {
        PolygonFile {
            rings: p
                .rings
                .into_iter()
                .map(|r| r.into_iter().map(|g| [g.lon, g.lat]).collect())
                .collect(),
        }
    }
}

impl BoundaryPolygon {
    pub fn new(rings: Vec<Vec<GeoPoint>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::Format("polygon has no rings".into()));
        }
        if let Some(r) = rings.iter().find(|r| r.len() < 3) {
            return Err(Error::Format(format!("polygon ring has {} vertices, need 3", r.len())));
        }
        Ok(BoundaryPolygon { rings })
    }

    pub fn rings(&self) -> &[Vec<GeoPoint>] {
        &self.rings
    }

    /// Even–odd containment over all rings together, so holes subtract.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            let n = ring.len();
            let mut j = n - 1;
            for i in 0..n {
                let (a, b) = (ring[i], ring[j]);
                if (a.lat > p.lat) != (b.lat > p.lat) {
                    let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                    if p.lon < x {
                        inside = !inside;
                    }
                }
                j = i;
            }
        }
        inside
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("polygon serializes")
    }
}

/// Masks every cell whose center lies outside `poly`. Never unmasks.
pub fn apply_boundary_mask(grid: &AttributeGrid, poly: &BoundaryPolygon) -> AttributeGrid {
    let mut out = grid.clone();
    for i in 0..out.len() {
        if out.mask[i] && !poly.contains(out.center_of_index(i)) {
            out.mask[i] = false;
        }
    }
    out
}

/// Value of the cell containing `p`, falling back to the nearest unmasked
/// cell center when that cell is masked.
pub fn lookup_attribute(grid: &AttributeGrid, p: GeoPoint) -> Result<f64> {
    let (col, row) = grid.locate(p)?;
    let i = grid.index(col, row);
    if grid.mask[i] {
        return Ok(grid.values[i]);
    }
    grid.nearest_unmasked(p)
        .map(|j| grid.values[j])
        .ok_or_else(|| Error::EmptyData("grid has no unmasked cells".into()))
}

/// Parsed station file and the number of rows discarded.
#[derive(Debug, Clone)]
pub struct ParsedSeries {
    pub series: StationSeries,
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeFormat {
    Minutes,
    Iso,
}

fn parse_timestamp(s: &str, fmt: TimeFormat) -> Option<i64> {
    match fmt {
        TimeFormat::Minutes => s.parse::<i64>().ok(),
        TimeFormat::Iso => {
            let secs = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                dt.timestamp()
            } else {
                ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
                    .iter()
                    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())?
                    .and_utc()
                    .timestamp()
            };
            Some(secs.div_euclid(60))
        }
    }
}

/// Parses a station CSV with header
/// `timestamp,temperature,dew_point,rh,wind_speed,wind_dir`.
///
/// Timestamps are either integer minutes or ISO-8601 UTC, detected from the
/// first data row. Rows that fail to parse, break an observation invariant or
/// do not advance time are dropped and counted. A wind direction of exactly
/// 360 is read as 0.
pub fn parse_station_csv<R: Read>(
    reader: R,
    id: StationId,
    attrs: StationAttributes,
) -> Result<ParsedSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    if header != STATION_CSV_HEADER {
        return Err(Error::Format(format!(
            "station csv header must be {:?}, got {:?}",
            STATION_CSV_HEADER, header
        )));
    }
    let mut observations: Vec<ClimateObservation> = Vec::new();
    let mut dropped = 0;
    let mut time_format = None;
    for record in rdr.records() {
        let Ok(record) = record else {
            dropped += 1;
            continue;
        };
        if record.len() != STATION_CSV_HEADER.len() {
            dropped += 1;
            continue;
        }
        let fmt = *time_format.get_or_insert_with(|| {
            if record[0].parse::<i64>().is_ok() {
                TimeFormat::Minutes
            } else {
                TimeFormat::Iso
            }
        });
        let Some(timestamp) = parse_timestamp(&record[0], fmt) else {
            dropped += 1;
            continue;
        };
        let nums: Option<Vec<f64>> = (1..6).map(|k| record[k].parse::<f64>().ok()).collect();
        let Some(nums) = nums else {
            dropped += 1;
            continue;
        };
        let wind_dir = if nums[4] == 360.0 { 0.0 } else { nums[4] };
        let obs = ClimateObservation {
            timestamp,
            temperature: nums[0],
            dew_point: nums[1],
            rh: nums[2],
            wind_speed: nums[3],
            wind_dir,
        };
        let advances = observations.last().is_none_or(|p| timestamp > p.timestamp);
        if !obs.broken_rules().is_empty() || !advances {
            dropped += 1;
            continue;
        }
        observations.push(obs);
    }
    if observations.is_empty() {
        return Err(Error::EmptyData(format!("station {id} has no valid rows")));
    }
    let series = StationSeries { id, attrs, observations };
    debug_assert!(validate_series(&series).iter().all(|v| v.index.is_none()));
    Ok(ParsedSeries { series, dropped })
}

/// Writes observations with integer-minute timestamps.
pub fn write_station_csv(series: &StationSeries) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STATION_CSV_HEADER)?;
    for o in &series.observations {
        w.write_record([
            o.timestamp.to_string(),
            o.temperature.to_string(),
            o.dew_point.to_string(),
            o.rh.to_string(),
            o.wind_speed.to_string(),
            o.wind_dir.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Entry of `stations.json`, the station directory index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub id: StationId,
    pub lon: f64,
    pub lat: f64,
}

/// Validated inputs for training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub stations: Vec<StationSeries>,
    pub dem: AttributeGrid,
    pub ndvi: AttributeGrid,
    pub boundary: Option<BoundaryPolygon>,
    /// Rows dropped while parsing, per station.
    pub dropped_rows: BTreeMap<StationId, usize>,
}

impl Dataset {
    pub fn station(&self, id: &StationId) -> Option<&StationSeries> {
        self.stations.iter().find(|s| &s.id == id)
    }

    pub fn station_ids(&self) -> Vec<StationId> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Reads `stations.json` plus one `<id>.csv` per station from `dir`, takes
/// DEM/NDVI attributes from the grids, and masks the grids to `boundary`.
pub fn load_dataset(
    dir: &Path,
    dem: AttributeGrid,
    ndvi: AttributeGrid,
    boundary: Option<BoundaryPolygon>,
) -> Result<Dataset> {
    let meta_text = std::fs::read_to_string(dir.join("stations.json"))?;
    let metas: Vec<StationMeta> = serde_json::from_str(&meta_text)?;
    let (dem, ndvi) = match &boundary {
        Some(poly) => (apply_boundary_mask(&dem, poly), apply_boundary_mask(&ndvi, poly)),
        None => (dem, ndvi),
    };
    let mut stations = Vec::with_capacity(metas.len());
    let mut dropped_rows = BTreeMap::new();
    for meta in metas {
        let location = GeoPoint::new(meta.lon, meta.lat)?;
        let attrs = StationAttributes::new(
            location,
            lookup_attribute(&dem, location)?,
            lookup_attribute(&ndvi, location)?,
        )?;
        let file = std::fs::File::open(dir.join(format!("{}.csv", meta.id)))?;
        let parsed = parse_station_csv(file, meta.id.clone(), attrs)?;
        dropped_rows.insert(meta.id, parsed.dropped);
        stations.push(parsed.series);
    }
    Ok(Dataset {
        stations,
        dem,
        ndvi,
        boundary,
        dropped_rows,
    })
}
