//! `frostmap`: synthetic data, training, evaluation and mapping from the
//! command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frostmap_core::domain::{FoldAssignment, StationId};
use frostmap_core::ensemble::{
    calibrate_coefficients, calibration_entries, train_bank, BankConfig, CoefficientSource, SubmodelBank,
    WeightCoefficients,
};
use frostmap_core::error::ErrorClass;
use frostmap_core::evaluate::{make_folds, parse_counts, run_station_ablation, EvaluationReport, ExperimentConfig, Method};
use frostmap_core::geostats::VariogramKind;
use frostmap_core::ingest::{load_dataset, read_ascii_grid_file, resample_grid, write_ascii_grid, BoundaryPolygon, Dataset};
use frostmap_core::neuralnet::TrainConfig;
use frostmap_core::raster::{climate_snapshot, generate_raster, raster_matrix, write_heatmap, RasterMethod};
use frostmap_core::synth::{generate_world, write_world, WorldSpec};
use frostmap_core::Error;

#[derive(Parser)]
#[command(name = "frostmap", version, about = "Spatial frost prediction from weather-station networks")]
struct Cli {
    /// Omit wall-clock fields so reruns produce identical files.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic world.
    Synth(SynthArgs),
    /// Validate station files and grids into one dataset bundle.
    Ingest(IngestArgs),
    /// Split the dataset's stations into five folds.
    Folds(FoldsArgs),
    /// Train one fold's submodel bank and baselines.
    Train(TrainArgs),
    /// Recompute or replace a bank's weighting coefficients.
    Calibrate(CalibrateArgs),
    /// Score aggregation methods over a station-count sweep.
    Eval(EvalArgs),
    /// Predict a minimum-temperature map at one timestamp.
    Raster(RasterArgs),
    /// Pairwise paired t-tests between rasters.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// WorldSpec JSON; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory with stations.json and one CSV per station.
    #[arg(long)]
    stations: PathBuf,
    #[arg(long)]
    dem: PathBuf,
    #[arg(long)]
    ndvi: PathBuf,
    #[arg(long)]
    boundary: Option<PathBuf>,
    /// Resample both grids to this cell size in degrees.
    #[arg(long)]
    cell_size: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FoldsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    folds: PathBuf,
    #[arg(long)]
    fold: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Minutes between training timestamps of each station pair.
    #[arg(long)]
    train_stride: Option<i64>,
    /// Use published coefficients (`paper-fold-K`) instead of calibrating.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    no_baselines: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    calibration_stride: Option<i64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated: avg, wavg, vote, idw, ok, baseline.
    #[arg(long, default_value = "avg,wavg,vote,baseline")]
    methods: String,
    /// Station counts, e.g. `1..10,10..60:10`.
    #[arg(long)]
    counts: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate only timestamps divisible by this many minutes.
    #[arg(long, default_value_t = 1)]
    eval_stride: i64,
    #[arg(long)]
    trigger: Option<f64>,
    /// spherical or exponential.
    #[arg(long, default_value = "spherical")]
    variogram: String,
    /// Fit one variogram per station subset rather than per timestep.
    #[arg(long)]
    freeze_variogram: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RasterArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// avg, wavg or single.
    #[arg(long)]
    method: String,
    /// Source station for `--method single`.
    #[arg(long)]
    station: Option<String>,
    /// Minutes since the Unix epoch, or `YYYY-MM-DDTHH:MM` in UTC.
    #[arg(long)]
    timestamp: String,
    #[arg(long)]
    out: PathBuf,
    /// Also render a PNG heatmap with a JSON legend beside it.
    #[arg(long)]
    png: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, num_args = 2.., required = true)]
    rasters: Vec<PathBuf>,
    /// Comma-separated labels; defaults to file stems.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Attach the matrix to this evaluation report under `--name`.
    #[arg(long, requires = "name")]
    report: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Names the file in I/O and format errors.
fn at<T>(path: &Path, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn read_text(path: &Path) -> Result<String, Error> {
    at(path, std::fs::read_to_string(path).map_err(Error::from))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    at(path, serde_json::from_str(&read_text(path)?).map_err(Error::from))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    let write = || -> Result<(), Error> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, text)?;
        Ok(())
    };
    at(path, write())
}

fn parse_preset(s: &str) -> Result<WeightCoefficients, Error> {
    let k = s
        .strip_prefix("paper-fold-")
        .and_then(|k| k.parse::<usize>().ok())
        .ok_or_else(|| usage(format!("preset must look like paper-fold-K, got {s:?}")))?;
    WeightCoefficients::published_preset(k).map_err(|e| usage(e.to_string()))
}

fn parse_methods(s: &str) -> Result<Vec<Method>, Error> {
    s.split(',')
        .map(|t| t.trim().parse::<Method>().map_err(|_| usage(format!("unknown method {t:?}"))))
        .collect()
}

fn parse_timestamp(s: &str) -> Result<i64, Error> {
    if let Ok(m) = s.parse::<i64>() {
        return Ok(m);
    }
    let dt = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M")
        .map_err(|_| usage(format!("timestamp must be minutes or YYYY-MM-DDTHH:MM, got {s:?}")))?;
    Ok(dt.and_utc().timestamp().div_euclid(60))
}

fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let mut spec: WorldSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => WorldSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let world = generate_world(&spec)?;
    at(&a.out, write_world(&world, &a.out))?;
    println!("wrote {} stations to {}", world.stations.len(), a.out.display());
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<(), Error> {
    let mut dem = at(&a.dem, read_ascii_grid_file(&a.dem))?;
    let mut ndvi = at(&a.ndvi, read_ascii_grid_file(&a.ndvi))?;
    if let Some(cell) = a.cell_size {
        dem = resample_grid(&dem, cell)?;
        ndvi = resample_grid(&ndvi, cell)?;
    }
    let boundary = match &a.boundary {
        Some(p) => Some(at(p, BoundaryPolygon::from_json(&read_text(p)?))?),
        None => None,
    };
    let data = at(&a.stations, load_dataset(&a.stations, dem, ndvi, boundary))?;
    at(&a.out, data.save(&a.out))?;
    let dropped: usize = data.dropped_rows.values().sum();
    println!("ingested {} stations, {} rows dropped", data.stations.len(), dropped);
    Ok(())
}

fn folds(a: FoldsArgs) -> Result<(), Error> {
    let data = at(&a.data, Dataset::load(&a.data))?;
    let folds = make_folds(&data.station_ids(), a.seed)?;
    write_text(&a.out, &(serde_json::to_string_pretty(&folds)? + "\n"))?;
    let sizes: Vec<String> = folds.folds().iter().map(|f| f.len().to_string()).collect();
    println!("fold sizes {}", sizes.join(" "));
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let data = at(&a.data, Dataset::load(&a.data))?;
    let folds: FoldAssignment = read_json(&a.folds)?;
    let test = folds.test_stations(a.fold)?.to_vec();
    let training = folds.training_stations(a.fold)?;
    let mut tc = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(p) = a.patience {
        tc.patience = p;
    }
    let mut cfg = BankConfig {
        submodel: tc.clone(),
        baseline: tc,
        train_baselines: !a.no_baselines,
        ..BankConfig::default()
    };
    if let Some(s) = a.train_stride {
        cfg.train_stride = s;
    }
    if let Some(p) = &a.preset {
        cfg.coefficients = CoefficientSource::Fixed(parse_preset(p)?);
    }
    let (bank, report) = train_bank(&data.stations, &training, &test, a.fold, &cfg)?;
    at(&a.out, bank.save(&a.out))?;
    write_text(&a.out.join("training.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    for (id, loss) in &report.best_loss {
        println!("submodel {id} loss {loss}");
    }
    for (id, loss) in &report.baseline_loss {
        println!("baseline {id} loss {loss}");
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<(), Error> {
    let coeff = match (&a.preset, &a.data) {
        (Some(p), _) => parse_preset(p)?,
        (None, Some(data)) => {
            let bank = at(&a.bank, SubmodelBank::load(&a.bank))?;
            let data = at(data, Dataset::load(data))?;
            let mut cfg = BankConfig::default();
            if let Some(s) = a.calibration_stride {
                cfg.calibration_stride = s;
            }
            let entries = calibration_entries(&bank, &data.stations, &cfg)?;
            calibrate_coefficients(&bank, &entries)?
        }
        (None, None) => return Err(usage("calibrate needs --data or --preset")),
    };
    at(&a.bank, SubmodelBank::store_coefficients(&a.bank, coeff))?;
    println!("{}", serde_json::to_string(&coeff)?);
    Ok(())
}

fn eval(a: EvalArgs, deterministic: bool) -> Result<(), Error> {
    let methods = parse_methods(&a.methods)?;
    let counts = parse_counts(&a.counts)?;
    let variogram = match a.variogram.as_str() {
        "spherical" => VariogramKind::Spherical,
        "exponential" => VariogramKind::Exponential,
        other => return Err(usage(format!("unknown variogram {other:?}"))),
    };
    let bank = at(&a.bank, SubmodelBank::load(&a.bank))?;
    let data = at(&a.data, Dataset::load(&a.data))?;
    let mut cfg = ExperimentConfig {
        methods,
        eval_stride: a.eval_stride,
        variogram,
        freeze_variogram: a.freeze_variogram,
        ..ExperimentConfig::default()
    };
    if let Some(t) = a.trigger {
        cfg.trigger = t;
    }
    let results = run_station_ablation(&bank, &data.stations, &counts, a.seed, &cfg)?;
    let mut report = EvaluationReport::new(a.seed, counts, cfg, results);
    if !deterministic {
        report.generated_at = Some(now_utc());
    }
    write_text(&a.out, &report.to_json()?)?;
    if let Some(p) = &a.csv {
        write_text(p, &report.results_csv()?)?;
    }
    println!("{} results written to {}", report.results.len(), a.out.display());
    Ok(())
}

fn raster(a: RasterArgs) -> Result<(), Error> {
    let method = match (a.method.as_str(), &a.station) {
        ("avg" | "average", None) => RasterMethod::Average,
        ("wavg" | "weighted_average", None) => RasterMethod::WeightedAverage,
        ("single", Some(id)) => RasterMethod::Single(StationId::new(id.as_str())?),
        ("single", None) => return Err(usage("--method single needs --station")),
        (_, Some(_)) => return Err(usage("--station only applies to --method single")),
        (other, None) => return Err(usage(format!("unknown raster method {other:?}"))),
    };
    let timestamp = parse_timestamp(&a.timestamp)?;
    let bank = at(&a.bank, SubmodelBank::load(&a.bank))?;
    let data = at(&a.data, Dataset::load(&a.data))?;
    let climate = climate_snapshot(&bank, &data.stations, timestamp)?;
    let grid = generate_raster(&bank, &climate, &data.dem, &data.ndvi, &method)?;
    write_text(&a.out, &write_ascii_grid(&grid))?;
    if let Some(png) = &a.png {
        at(png, write_heatmap(&grid, png))?;
    }
    println!("{} cells predicted", grid.unmasked_count());
    Ok(())
}

fn compare(a: CompareArgs) -> Result<(), Error> {
    let labels: Vec<String> = match &a.labels {
        Some(l) => l.split(',').map(|s| s.trim().to_string()).collect(),
        None => a
            .rasters
            .iter()
            .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
    };
    if labels.len() != a.rasters.len() {
        return Err(usage(format!("{} labels for {} rasters", labels.len(), a.rasters.len())));
    }
    let mut rasters = BTreeMap::new();
    for (label, path) in labels.into_iter().zip(&a.rasters) {
        if rasters.insert(label.clone(), at(path, read_ascii_grid_file(path))?).is_some() {
            return Err(usage(format!("duplicate raster label {label:?}")));
        }
    }
    let matrix = raster_matrix(&rasters)?;
    write_text(&a.out, &matrix.to_csv())?;
    if let (Some(path), Some(name)) = (&a.report, &a.name) {
        let mut report = at(path, EvaluationReport::from_json(&read_text(path)?))?;
        report.p_values.insert(name.clone(), matrix);
        write_text(path, &report.to_json()?)?;
    }
    println!("compared {} rasters", rasters.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Folds(a) => folds(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Eval(a) => eval(a, cli.deterministic),
        Command::Raster(a) => raster(a),
        Command::Compare(a) => compare(a),
    }
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    let message = serde_json::to_string(message).unwrap_or_else(|_| "\"\"".into());
    eprintln!("error kind={kind} code={code} message={message}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let message: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            return fail("usage", 2, message.join(" ").trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            };
            fail(e.kind(), code, &e.to_string())
        }
    }
}
