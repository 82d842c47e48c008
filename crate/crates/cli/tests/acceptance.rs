//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//! With FROSTMAP_ACCEPTANCE_STRICT=1 any failure makes the run exit nonzero.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use frostmap_core::domain::{GeoPoint, StationId};
use frostmap_core::ensemble::{
    aggregate_average, aggregate_weighted, intermediate_weight, station_weights, train_bank, BankConfig,
    BankTrainingReport, CoefficientSource, Distances, StationWeights, SubmodelBank, WeightCoefficients,
};
use frostmap_core::evaluate::{
    ablation_from_tables, build_prediction_tables, event_confusion, make_folds, paired_t_test, rmse, AblationResult,
    ExperimentConfig, Method, PredictionTable,
};
use frostmap_core::geostats::{
    fit_variogram, idw, ordinary_kriging_full, pooled_semivariogram, SamplePoint, VariogramKind, VariogramModel,
};
use frostmap_core::ingest::AttributeGrid;
use frostmap_core::neuralnet::{gradients, init_network, mse, Network, NetworkSpec, Samples, TrainConfig};
use frostmap_core::raster::{climate_snapshot, generate_raster, RasterMethod};
use frostmap_core::synth::{generate_world, World, WorldSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sp(x: f64, y: f64, v: f64) -> SamplePoint {
    SamplePoint {
        location: GeoPoint::new(x, y).unwrap(),
        value: v,
    }
}

// ---------------------------------------------------------------- 1

fn random_biases(mut net: Network, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in net.layers_mut() {
        for b in &mut l.biases {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    net
}

fn random_batch(dim: usize, n: usize, seed: u64) -> Samples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..dim * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Samples::new(dim, x, y).unwrap()
}

/// Smallest |pre-activation| of any hidden unit; a central difference whose
/// step crosses a kink is not a derivative.
fn kink_margin(net: &Network, batch: &Samples) -> f64 {
    let hidden = net.layers().len() - 1;
    let mut margin = f64::INFINITY;
    for row in batch.rows() {
        let mut a = row.to_vec();
        for l in &net.layers()[..hidden] {
            let z: Vec<f64> = (0..l.outputs)
                .map(|j| l.biases[j] + (0..l.inputs).map(|i| a[i] * l.weights[i * l.outputs + j]).sum::<f64>())
                .collect();
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    margin
}

fn max_rel_error(net: &Network, batch: &Samples) -> f64 {
    let analytic = gradients(net, batch).unwrap().flatten();
    let p0 = net.parameters();
    let eps = 1e-5;
    let loss = |p: &[f64]| {
        let mut n = net.clone();
        n.set_parameters(p).unwrap();
        mse(&n, batch).unwrap()
    };
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + eps;
        let up = loss(&p);
        p[i] = p0[i] - eps;
        let numeric = (up - loss(&p)) / (2.0 * eps);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

fn gradient_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut details = Vec::new();
    for (name, spec) in [("5-7-1", NetworkSpec::baseline()), ("13-10-14-9-8-1", NetworkSpec::submodel())] {
        let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
        let mut seed = 0u64;
        while checked < 10 {
            seed += 1;
            let net = random_biases(init_network(&spec, seed).unwrap(), seed + 1000);
            let batch = random_batch(spec.input_dim, 8, seed + 2000);
            if kink_margin(&net, &batch) <= 1e-3 {
                skipped += 1;
                continue;
            }
            worst = worst.max(max_rel_error(&net, &batch));
            checked += 1;
        }
        check(worst < 1e-4, || format!("{name}: max relative error {worst:e}"))?;
        details.push(format!("{name} max rel err {worst:.1e} over {checked} nets ({skipped} near-kink skipped)"));
    }
    let secs = t0.elapsed().as_secs_f64();
    check(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{}; {secs:.2}s", details.join(", ")))
}

// ---------------------------------------------------------------- 2

fn weight_oracle() -> Outcome {
    let fold0 = WeightCoefficients::published_preset(0).unwrap();
    let unit = Distances { geo: 1.0, dem: 1.0, ndvi: 1.0 };
    let w = intermediate_weight(&unit, &fold0);
    check((w - 4.8757).abs() <= 1e-3, || format!("W = {w}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..2000 {
        let coeff = WeightCoefficients::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.01..1.0))
            .unwrap();
        let n = rng.random_range(1..70);
        let d: Vec<(StationId, Distances)> = (0..n)
            .map(|i| {
                let dist = Distances {
                    geo: rng.random_range(0.0..1.0),
                    dem: rng.random_range(0.0..1.0),
                    ndvi: if case % 7 == 0 { 0.0 } else { rng.random_range(0.0..1.0) },
                };
                (StationId::new(format!("s{i}")).unwrap(), dist)
            })
            .collect();
        worst = worst.max((station_weights(&d, &coeff).sum() - 1.0).abs());
    }
    check(worst <= 1e-9, || format!("weight sum off by {worst:e}"))?;
    Ok(format!("W = {w:.4}; max |sum - 1| = {worst:.1e} over 2000 weight vectors"))
}

// ---------------------------------------------------------------- 3

fn det(m: &[Vec<f64>]) -> f64 {
    if m.len() == 1 {
        return m[0][0];
    }
    (0..m.len())
        .map(|c| {
            let minor: Vec<Vec<f64>> = m[1..]
                .iter()
                .map(|r| r.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, v)| *v).collect())
                .collect();
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][c] * det(&minor)
        })
        .sum()
}

fn cramer(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let d = det(a);
    (0..b.len())
        .map(|c| {
            let m: Vec<Vec<f64>> = a
                .iter()
                .zip(b)
                .map(|(row, bi)| row.iter().enumerate().map(|(k, v)| if k == c { *bi } else { *v }).collect())
                .collect();
            det(&m) / d
        })
        .collect()
}

fn spherical(h: f64, sill: f64, range: f64) -> f64 {
    if h >= range {
        sill
    } else {
        let r = h / range;
        sill * (1.5 * r - 0.5 * r.powi(3))
    }
}

fn interpolator_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = VariogramModel::new(VariogramKind::Spherical, 0.0, 1.0, 3.0).unwrap();
    let (mut exact_err, mut sum_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let n = rng.random_range(3..12);
        let samples: Vec<SamplePoint> = (0..n)
            .map(|_| sp(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        for s in &samples {
            exact_err = exact_err.max((idw(&samples, s.location, 2.0).unwrap() - s.value).abs());
            exact_err = exact_err.max((ordinary_kriging_full(&samples, s.location, &model).unwrap().estimate - s.value).abs());
        }
        let q = GeoPoint::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)).unwrap();
        let k = ordinary_kriging_full(&samples, q, &model).unwrap();
        sum_err = sum_err.max((k.weights.iter().sum::<f64>() - 1.0).abs());
    }
    check(exact_err <= 1e-6, || format!("exactness error {exact_err:e}"))?;
    check(sum_err <= 1e-9, || format!("weight sum error {sum_err:e}"))?;

    let pts = [(0.0, 0.0, 1.0), (1.0, 0.0, 2.0), (0.0, 1.0, 4.0)];
    let q = (0.3, 0.6);
    let g = |a: (f64, f64), b: (f64, f64)| spherical(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(), 1.0, 2.0);
    let mut a = vec![vec![1.0; 4]; 4];
    let mut b = vec![1.0; 4];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = g((pts[i].0, pts[i].1), (pts[j].0, pts[j].1));
        }
        b[i] = g((pts[i].0, pts[i].1), q);
    }
    a[3][3] = 0.0;
    let sol = cramer(&a, &b);
    let expected: f64 = (0..3).map(|i| sol[i] * pts[i].2).sum();
    let samples: Vec<SamplePoint> = pts.iter().map(|&(x, y, v)| sp(x, y, v)).collect();
    let model = VariogramModel::new(VariogramKind::Spherical, 0.0, 1.0, 2.0).unwrap();
    let k = ordinary_kriging_full(&samples, GeoPoint::new(q.0, q.1).unwrap(), &model).unwrap();
    let werr = (0..3).map(|i| (k.weights[i] - sol[i]).abs()).fold(0.0, f64::max);
    check(werr <= 1e-9 && (k.estimate - expected).abs() <= 1e-9, || {
        format!("3-point system: weights {:?} vs {:?}, estimate {} vs {expected}", k.weights, &sol[..3], k.estimate)
    })?;
    Ok(format!(
        "max sample error {exact_err:.1e}, max |sum w - 1| {sum_err:.1e}; 3-point estimate {expected:.6} matches"
    ))
}

// ---------------------------------------------------------------- 4

fn cholesky(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = c.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (c[i][i] - s).max(0.0).sqrt() } else { (c[i][j] - s) / l[j][j] };
        }
    }
    l
}

fn variogram_recovery() -> Outcome {
    let t0 = Instant::now();
    let (n, extent, sill, range, replicates) = (200, 8.0, 1.0, 2.0, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let locs: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..extent), rng.random_range(0.0..extent))).collect();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let h = ((locs[i].0 - locs[j].0).powi(2) + (locs[i].1 - locs[j].1).powi(2)).sqrt();
            c[i][j] = sill - spherical(h, sill, range);
        }
        c[i][i] += 1e-9;
    }
    let l = cholesky(&c);
    let fields: Vec<Vec<SamplePoint>> = (0..replicates)
        .map(|_| {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            (0..n).map(|i| sp(locs[i].0, locs[i].1, (0..=i).map(|k| l[i][k] * z[k]).sum())).collect()
        })
        .collect();
    let bins = pooled_semivariogram(&fields, 15).map_err(|e| e.to_string())?;
    let m = fit_variogram(&bins, VariogramKind::Spherical).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!("nugget {:.3}, sill {:.3}, range {:.3} (true 0, 1, 2); {secs:.2}s", m.nugget, m.sill, m.range);
    check(
        m.nugget <= 0.25 * sill && (m.sill - sill).abs() <= 0.25 * sill && (m.range - range).abs() <= 0.25 * range,
        || detail.clone(),
    )?;
    check(secs < 30.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 5

fn t_test_oracle() -> Outcome {
    let d = [-1.0, 0.0, 1.0, 2.0, 3.0];
    let r = paired_t_test(&d, &[0.0; 5]).map_err(|e| e.to_string())?;
    let reference = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 4.0).unwrap().cdf(r.t.abs()));
    check((r.t - 1.4142).abs() < 1e-4, || format!("t = {}", r.t))?;
    check((r.p - reference).abs() < 1e-4 && (r.p - 0.2302).abs() < 1e-4, || format!("p = {} vs {reference}", r.p))?;
    let x = [1.5, -2.0, 3.25, 0.0];
    let same = paired_t_test(&x, &x).map_err(|e| e.to_string())?;
    check(same.p == 1.0, || format!("identical inputs gave p = {}", same.p))?;
    let shifted: Vec<f64> = x.iter().map(|v| v + 2.0).collect();
    let shift = paired_t_test(&shifted, &x).map_err(|e| e.to_string())?;
    check(shift.p == 0.0, || format!("constant difference gave p = {}", shift.p))?;
    Ok(format!("t = {:.4}, p = {:.4} (reference {reference:.4}); degenerate p = 1 and p = 0", r.t, r.p))
}

// ---------------------------------------------------------------- 6

fn metric_oracle() -> Outcome {
    let c = event_confusion(&[-1.0, 1.0, -1.0], &[-1.0, -1.0, 1.0], 0.0).map_err(|e| e.to_string())?;
    check(c.tpr() == Some(0.5) && c.fdr() == Some(0.5), || format!("{c:?}"))?;
    let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).map_err(|e| e.to_string())?;
    check((r - 12.5f64.sqrt()).abs() <= 1e-12, || format!("rmse {r}"))?;
    Ok(format!("TPR {} FDR {}; RMSE {r}", c.tpr().unwrap(), c.fdr().unwrap()))
}

// ---------------------------------------------------------------- shared world

struct Experiment {
    world: World,
    test: Vec<StationId>,
    training: Vec<StationId>,
    bank: SubmodelBank,
    report: BankTrainingReport,
    tables: Vec<PredictionTable>,
    config: ExperimentConfig,
    build_secs: f64,
}

const SUBSET_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let t0 = Instant::now();
        let world = generate_world(&WorldSpec::default()).unwrap();
        let folds = make_folds(&world.station_ids(), 1).unwrap();
        let training = folds.training_stations(0).unwrap();
        let test = folds.test_stations(0).unwrap().to_vec();
        let tc = TrainConfig {
            epochs: 30,
            patience: 5,
            seed: 1,
            ..TrainConfig::default()
        };
        let cfg = BankConfig {
            train_stride: 60,
            submodel: tc.clone(),
            baseline: tc,
            ..BankConfig::default()
        };
        let (bank, report) = train_bank(&world.stations, &training, &test, 0, &cfg).unwrap();
        let config = ExperimentConfig {
            methods: vec![Method::Average, Method::WeightedAverage, Method::WeightedVote, Method::Baseline],
            ..ExperimentConfig::default()
        };
        let tables = build_prediction_tables(&bank, &world.stations, &config).unwrap();
        Experiment {
            world,
            test,
            training,
            bank,
            report,
            tables,
            config,
            build_secs: t0.elapsed().as_secs_f64(),
        }
    })
}

// ---------------------------------------------------------------- 7

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn trend_reproduction() -> Outcome {
    let t0 = Instant::now();
    let e = experiment();
    check(e.world.stations.len() == 75 && e.training.len() == 60 && e.test.len() == 15, || "world shape".into())?;
    let counts: Vec<usize> = (1..=10).chain((20..=60).step_by(10)).collect();
    let runs: Vec<Vec<AblationResult>> = SUBSET_SEEDS
        .iter()
        .map(|&s| ablation_from_tables(0, &e.tables, &counts, s, &e.config).unwrap())
        .collect();
    let med = |m: Method, k: usize, f: fn(&AblationResult) -> Option<f64>| {
        median(
            runs.iter()
                .map(|r| f(r.iter().find(|x| x.method == m && x.station_count == k).unwrap()).unwrap())
                .collect(),
        )
    };
    let rmse_of = |r: &AblationResult| r.rmse;
    let tpr_of = |r: &AblationResult| r.tpr;
    let fdr_of = |r: &AblationResult| r.fdr;
    let (avg, wavg, vote) = (Method::Average, Method::WeightedAverage, Method::WeightedVote);

    let mut failures = Vec::new();
    let bad_a: Vec<String> = (10..=60)
        .step_by(10)
        .filter(|&k| med(wavg, k, rmse_of) > med(avg, k, rmse_of))
        .map(|k| format!("k={k} wavg {:.3} > avg {:.3}", med(wavg, k, rmse_of), med(avg, k, rmse_of)))
        .collect();
    if !bad_a.is_empty() {
        failures.push(format!("(a) {}", bad_a.join(", ")));
    }
    for m in [avg, wavg] {
        let (r10, r60) = (med(m, 10, rmse_of), med(m, 60, rmse_of));
        if r60 >= r10 {
            failures.push(format!("(b) {} RMSE 60 {r60:.3} >= 10 {r10:.3}", m.token()));
        }
        for (name, f) in [("TPR", tpr_of as fn(&AblationResult) -> Option<f64>), ("FDR", fdr_of)] {
            let (a1, a60) = (med(m, 1, f), med(m, 60, f));
            if a60 >= a1 {
                failures.push(format!("(c) {} {name} k=1 {a1:.3} -> k=60 {a60:.3}", m.token()));
            }
        }
    }
    let bad_d: Vec<String> = counts
        .iter()
        .filter(|&&k| med(vote, k, tpr_of) < med(wavg, k, tpr_of))
        .map(|&k| format!("k={k} vote {:.3} < wavg {:.3}", med(vote, k, tpr_of), med(wavg, k, tpr_of)))
        .collect();
    if !bad_d.is_empty() {
        failures.push(format!("(d) {}", bad_d.join(", ")));
    }
    let secs = e.build_secs + t0.elapsed().as_secs_f64();
    if secs >= 900.0 {
        failures.push(format!("runtime {secs:.0}s"));
    }
    let summary = format!(
        "median RMSE avg/wavg k=10 {:.3}/{:.3} k=60 {:.3}/{:.3}; TPR avg k=1 {:.3} k=60 {:.3}; {secs:.0}s",
        med(avg, 10, rmse_of),
        med(wavg, 10, rmse_of),
        med(avg, 60, rmse_of),
        med(wavg, 60, rmse_of),
        med(avg, 1, tpr_of),
        med(avg, 60, tpr_of),
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------- 8

fn ensemble_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..61);
        let preds: BTreeMap<StationId, f64> = (0..n)
            .map(|i| (StationId::new(format!("{}", 60000 + i)).unwrap(), rng.random_range(-10.0..15.0)))
            .collect();
        let w = StationWeights::uniform(preds.keys());
        let d = aggregate_weighted(&preds, &w).unwrap() - aggregate_average(&preds).unwrap();
        worst = worst.max(d.abs());
    }
    check(worst <= 1e-12, || format!("uniform aggregate differs by {worst:e}"))?;

    let e = experiment();
    for seed in SUBSET_SEEDS {
        let res = ablation_from_tables(0, &e.tables, &[1], seed, &e.config).unwrap();
        let get = |m| res.iter().find(|r| r.method == m).unwrap();
        check(get(Method::Average).same_metrics(get(Method::WeightedAverage)), || {
            format!("k=1 avg and wavg differ for seed {seed}")
        })?;
    }

    let (dem, ndvi) = (window(&e.world.dataset().dem), window(&e.world.dataset().ndvi));
    let night = e.world.spec.start_minute + 2 * 1440 + 3 * 60;
    let climate = climate_snapshot(&e.bank, &e.world.stations, night).unwrap();
    let avg = generate_raster(&e.bank, &climate, &dem, &ndvi, &RasterMethod::Average).unwrap();
    let singles: Vec<AttributeGrid> = e
        .bank
        .source_ids()
        .into_iter()
        .map(|id| generate_raster(&e.bank, &climate, &dem, &ndvi, &RasterMethod::Single(id)).unwrap())
        .collect();
    let cells: Vec<usize> = (0..avg.len()).filter(|&i| avg.mask[i]).collect();
    check(!cells.is_empty(), || "raster window is fully masked".into())?;
    let raster_err = cells
        .iter()
        .map(|&i| (avg.values[i] - singles.iter().map(|g| g.values[i]).sum::<f64>() / singles.len() as f64).abs())
        .fold(0.0, f64::max);
    check(raster_err <= 1e-9, || format!("average raster differs by {raster_err:e}"))?;
    Ok(format!(
        "uniform vs average {worst:.1e}; k=1 identical over {} seeds; raster {raster_err:.1e} over {} cells x {} stations",
        SUBSET_SEEDS.len(),
        cells.len(),
        singles.len()
    ))
}

/// A 40×40 block from the middle of the region.
fn window(g: &AttributeGrid) -> AttributeGrid {
    let (nc, nr) = (40, 40);
    let (c0, r0) = (g.ncols / 2 - nc / 2, g.nrows / 2 - nr / 2);
    let idx: Vec<usize> = (r0..r0 + nr).flat_map(|r| (c0..c0 + nc).map(move |c| (c, r))).map(|(c, r)| g.index(c, r)).collect();
    AttributeGrid::new(
        g.xllcorner + c0 as f64 * g.cell_size,
        g.yllcorner + r0 as f64 * g.cell_size,
        g.cell_size,
        nc,
        nr,
        idx.iter().map(|&i| g.values[i]).collect(),
        idx.iter().map(|&i| g.mask[i]).collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------- 9

fn frostmap(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_frostmap"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("frostmap {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

const PIPELINE_OUTPUTS: [&str; 5] = ["report.json", "results.csv", "wavg.asc", "wavg.png", "pmatrix.csv"];

fn pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(
        dir.join("spec.json"),
        r#"{"seed": 9, "n_stations": 10, "days": 2, "lon_max": 149.5, "lat_max": -35.0}"#,
    )
    .map_err(|e| e.to_string())?;
    let steps: [&[&str]; 10] = [
        &["synth", "--spec", "spec.json", "--out", "world"],
        &["ingest", "--stations", "world", "--dem", "world/dem.asc", "--ndvi", "world/ndvi.asc", "--boundary", "world/boundary.json", "--out", "data.json"],
        &["folds", "--data", "data.json", "--seed", "4", "--out", "folds.json"],
        &["train", "--data", "data.json", "--folds", "folds.json", "--fold", "1", "--out", "bank", "--seed", "4", "--epochs", "3", "--train-stride", "60"],
        &["calibrate", "--bank", "bank", "--data", "data.json"],
        &["--deterministic", "eval", "--bank", "bank", "--data", "data.json", "--methods", "avg,wavg,vote,idw,ok,baseline", "--counts", "1..4,8", "--eval-stride", "15", "--seed", "4", "--out", "report.json", "--csv", "results.csv"],
        &["raster", "--bank", "bank", "--data", "data.json", "--method", "wavg", "--timestamp", "2018-06-01T22:00", "--out", "wavg.asc", "--png", "wavg.png"],
        &["raster", "--bank", "bank", "--data", "data.json", "--method", "avg", "--timestamp", "2018-06-01T22:00", "--out", "avg.asc"],
        &["compare", "--rasters", "wavg.asc", "avg.asc", "--out", "pmatrix.csv", "--report", "report.json", "--name", "maps"],
        &["--deterministic", "eval", "--bank", "bank", "--data", "data.json", "--counts", "8", "--out", "check.json"],
    ];
    for args in steps {
        frostmap(dir, args)?;
    }
    Ok(())
}

fn pipeline_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path())?;
    pipeline(b.path())?;
    let mut bytes = 0;
    for f in PIPELINE_OUTPUTS {
        let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        check(x == y, || format!("{f} differs between runs"))?;
        bytes += x.len();
    }
    let report = std::fs::read_to_string(a.path().join("report.json")).unwrap();
    check(!report.contains("generated_at") && report.contains("\"maps\""), || "report content".into())?;
    frostmap(a.path(), &["eval", "--bank", "bank", "--data", "data.json", "--counts", "8", "--out", "clock.json"])?;
    let clock = std::fs::read_to_string(a.path().join("clock.json")).unwrap();
    check(clock.contains("generated_at"), || "non-deterministic run lacks a timestamp".into())?;
    Ok(format!("{} files ({bytes} bytes) identical across two runs", PIPELINE_OUTPUTS.len()))
}

// ---------------------------------------------------------------- 10

fn fold_protocol() -> Outcome {
    let e = experiment();
    let ids = e.world.station_ids();
    let folds = make_folds(&ids, 1).unwrap();
    let mut seen = BTreeSet::new();
    for k in 0..5 {
        let fold = folds.test_stations(k).unwrap();
        check(fold.len() == 15, || format!("fold {k} has {} stations", fold.len()))?;
        for id in fold {
            check(seen.insert(id.clone()), || format!("{id} is in two folds"))?;
        }
    }
    check(seen.len() == 75 && seen == ids.iter().cloned().collect(), || "folds do not cover the stations".into())?;

    let test0: BTreeSet<StationId> = e.test.iter().cloned().collect();
    check(e.report.entry_stations.is_disjoint(&test0), || "fold 0 bank saw a test station".into())?;

    let quick = BankConfig {
        train_stride: 720,
        submodel: TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
        coefficients: CoefficientSource::PublishedPreset(0),
        train_baselines: false,
        ..BankConfig::default()
    };
    let eval = ExperimentConfig {
        methods: vec![Method::Average],
        eval_stride: 720,
        ..ExperimentConfig::default()
    };
    for k in 0..5 {
        let test = folds.test_stations(k).unwrap().to_vec();
        let training = folds.training_stations(k).unwrap();
        let (bank, report) = train_bank(&e.world.stations, &training, &test, k, &quick).map_err(|e| e.to_string())?;
        let test_set: BTreeSet<StationId> = test.iter().cloned().collect();
        let train_set: BTreeSet<StationId> = training.iter().cloned().collect();
        check(report.entry_stations.is_disjoint(&test_set), || format!("fold {k}: test station in entries"))?;
        check(report.entry_stations == train_set, || format!("fold {k}: entries do not span the training set"))?;
        build_prediction_tables(&bank, &e.world.stations, &eval).map_err(|e| format!("fold {k}: {e}"))?;
    }
    Ok("5 disjoint folds of 15; no test station among entry provenance in any fold".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient oracle", gradient_oracle),
        ("weighting oracle", weight_oracle),
        ("interpolator exactness", interpolator_oracle),
        ("variogram recovery", variogram_recovery),
        ("t-test oracle", t_test_oracle),
        ("metric oracle", metric_oracle),
        ("trend reproduction", trend_reproduction),
        ("ensemble identities", ensemble_identities),
        ("pipeline determinism", pipeline_determinism),
        ("fold protocol", fold_protocol),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {reason}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    // Failures are always reported; they fail the run only when asked to, so
    // a known shortfall does not hide every later test target.
    if failed > 0 && std::env::var("FROSTMAP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
