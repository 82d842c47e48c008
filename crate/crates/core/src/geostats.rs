//! Inverse distance weighting and ordinary kriging, used as alternative ways
//! to combine per-station predictions at a target location.

use serde::{Deserialize, Serialize};

use crate::domain::GeoPoint;
use crate::error::{Error, Result};

/// Samples closer than this to the query are returned verbatim by IDW.
pub const IDW_EXACT_DISTANCE: f64 = 1e-9;

/// Diagonal regularization of the kriging matrix.
pub const KRIGING_JITTER: f64 = 1e-10;

pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramKind {
    Spherical,
    /// Reaches 95% of the partial sill at `range` (practical range).
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
    /// Set when the fit saw no variance at all.
    #[serde(default)]
    pub degenerate: bool,
}

impl VariogramModel {
    pub fn new(kind: VariogramKind, nugget: f64, sill: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0) || !(sill >= nugget) || !(range > 0.0) || !sill.is_finite() || !range.is_finite() {
            return Err(Error::InvalidInput(format!(
                "invalid variogram: nugget {nugget}, sill {sill}, range {range}"
            )));
        }
        Ok(VariogramModel {
            kind,
            nugget,
            sill,
            range,
            degenerate: false,
        })
    }

    pub fn partial_sill(&self) -> f64 {
        self.sill - self.nugget
    }

    /// Semivariance at separation `h`; zero at `h == 0`.
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        self.nugget + self.partial_sill() * shape(self.kind, h / self.range)
    }
}

/// Unit-sill structure function of scaled lag `u = h / range`.
fn shape(kind: VariogramKind, u: f64) -> f64 {
    match kind {
        VariogramKind::Spherical => {
            if u >= 1.0 {
                1.0
            } else {
                1.5 * u - 0.5 * u * u * u
            }
        }
        VariogramKind::Exponential => 1.0 - (-3.0 * u).exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub location: GeoPoint,
    pub value: f64,
}

/// Inverse distance weighting with planar degree distances.
pub fn idw(samples: &[SamplePoint], query: GeoPoint, power: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyData("idw needs at least one sample".into()));
    }
    if !(power > 0.0) {
        return Err(Error::InvalidInput(format!("idw power must be positive, got {power}")));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let d = s.location.distance(&query);
        if d < IDW_EXACT_DISTANCE {
            return Ok(s.value);
        }
        let w = d.powf(-power);
        num += w * s.value;
        den += w;
    }
    Ok(num / den)
}

/// One lag class of an empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean separation of the pairs in the bin.
    pub lag: f64,
    pub semivariance: f64,
    pub pairs: usize,
}

/// Half mean squared difference per equal-width lag bin up to the largest
/// pair distance. Empty bins are omitted.
pub fn empirical_semivariogram(samples: &[SamplePoint], n_bins: usize) -> Result<Vec<VariogramBin>> {
    pooled_semivariogram(std::slice::from_ref(&samples.to_vec()), n_bins)
}

/// Empirical semivariogram over the pairs of several fields at once (for
/// example one field per timestep); bins span the largest pair distance in
/// any field.
pub fn pooled_semivariogram(fields: &[Vec<SamplePoint>], n_bins: usize) -> Result<Vec<VariogramBin>> {
    if n_bins == 0 {
        return Err(Error::InvalidInput("semivariogram needs at least one bin".into()));
    }
    let mut pairs = Vec::new();
    let mut max_d: f64 = 0.0;
    for samples in fields {
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                let d = samples[i].location.distance(&samples[j].location);
                let g = 0.5 * (samples[i].value - samples[j].value).powi(2);
                max_d = max_d.max(d);
                pairs.push((d, g));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("semivariogram needs at least two samples".into()));
    }
    let width = if max_d > 0.0 { max_d / n_bins as f64 } else { 1.0 };
    let mut acc = vec![(0.0, 0.0, 0usize); n_bins];
    for (d, g) in pairs {
        let k = ((d / width).floor() as usize).min(n_bins - 1);
        acc[k].0 += d;
        acc[k].1 += g;
        acc[k].2 += 1;
    }
    Ok(acc
        .into_iter()
        .filter(|a| a.2 > 0)
        .map(|(sd, sg, n)| VariogramBin {
            lag: sd / n as f64,
            semivariance: sg / n as f64,
            pairs: n,
        })
        .collect())
}

/// Best non-negative (nugget, partial sill) for a fixed range, by weighted
/// least squares; returns `(nugget, partial_sill, sse)`.
fn fit_linear_part(bins: &[VariogramBin], kind: VariogramKind, range: f64) -> (f64, f64, f64) {
    let (mut sw, mut sf, mut sff, mut sg, mut sfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for b in bins {
        let w = b.pairs as f64;
        let f = shape(kind, b.lag / range);
        sw += w;
        sf += w * f;
        sff += w * f * f;
        sg += w * b.semivariance;
        sfg += w * f * b.semivariance;
    }
    let sse = |n: f64, p: f64| -> f64 {
        bins.iter()
            .map(|b| b.pairs as f64 * (b.semivariance - n - p * shape(kind, b.lag / range)).powi(2))
            .sum()
    };
    let mut candidates = Vec::with_capacity(3);
    let det = sw * sff - sf * sf;
    if det.abs() > 1e-300 {
        let n = (sg * sff - sf * sfg) / det;
        let p = (sw * sfg - sf * sg) / det;
        if n >= 0.0 && p >= 0.0 {
            candidates.push((n, p));
        }
    }
    if sff > 0.0 {
        candidates.push((0.0, (sfg / sff).max(0.0)));
    }
    candidates.push(((sg / sw).max(0.0), 0.0));
    candidates
        .into_iter()
        .map(|(n, p)| (n, p, sse(n, p)))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap()
}

/// Weighted least-squares variogram fit (weights = pair counts) over the
/// bins within half the largest lag.
///
/// For each candidate range the nugget and partial sill are solved in closed
/// form; the range itself is found by a coarse grid followed by golden-section
/// refinement around the best grid point.
pub fn fit_variogram(empirical: &[VariogramBin], kind: VariogramKind) -> Result<VariogramModel> {
    if empirical.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 lag bins, got {}", empirical.len())));
    }
    let max_lag = empirical.iter().map(|b| b.lag).fold(0.0, f64::max);
    if !(max_lag > 0.0) {
        return Err(Error::Fit("all lags are zero".into()));
    }
    if empirical.iter().all(|b| b.semivariance == 0.0) {
        return Ok(VariogramModel {
            kind,
            nugget: 0.0,
            sill: 0.0,
            range: max_lag,
            degenerate: true,
        });
    }
    // Long lags rest on few, edge-dominated pairs; fit within half the
    // largest lag when that still leaves enough bins.
    let near: Vec<VariogramBin> = empirical.iter().copied().filter(|b| b.lag <= 0.5 * max_lag).collect();
    let empirical: &[VariogramBin] = if near.len() >= 3 { &near } else { empirical };
    let max_lag = empirical.iter().map(|b| b.lag).fold(0.0, f64::max);
    const GRID: usize = 40;
    let lo = max_lag / GRID as f64;
    let hi = 2.0 * max_lag;
    let grid: Vec<f64> = (0..=GRID).map(|k| lo + (hi - lo) * k as f64 / GRID as f64).collect();
    let scored: Vec<f64> = grid.iter().map(|&r| fit_linear_part(empirical, kind, r).2).collect();
    let best = (0..grid.len()).min_by(|&a, &b| scored[a].total_cmp(&scored[b])).unwrap();
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(GRID)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let cost = |r: f64| fit_linear_part(empirical, kind, r).2;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..60 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = cost(d);
        }
    }
    let mut range = 0.5 * (a + b);
    if scored[best] < cost(range) {
        range = grid[best];
    }
    let (nugget, psill, _) = fit_linear_part(empirical, kind, range);
    Ok(VariogramModel {
        kind,
        nugget,
        sill: nugget + psill,
        range,
        degenerate: false,
    })
}

/// Kriging estimate with its variance and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingResult {
    pub estimate: f64,
    pub variance: f64,
    /// One weight per deduplicated sample location.
    pub weights: Vec<f64>,
    pub lagrange: f64,
}

/// Averages the values of samples sharing a location.
pub fn deduplicate(samples: &[SamplePoint]) -> Vec<SamplePoint> {
    let mut groups: Vec<(GeoPoint, f64, usize)> = Vec::new();
    for s in samples {
        match groups
            .iter_mut()
            .find(|g| g.0.distance(&s.location) < IDW_EXACT_DISTANCE)
        {
            Some(g) => {
                g.1 += s.value;
                g.2 += 1;
            }
            None => groups.push((s.location, s.value, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(location, sum, n)| SamplePoint {
            location,
            value: sum / n as f64,
        })
        .collect()
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Numerical("singular kriging system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kriging solution is not finite".into()));
    }
    Ok(x)
}

/// Ordinary kriging from the semivariogram form of the system.
pub fn ordinary_kriging_full(samples: &[SamplePoint], query: GeoPoint, model: &VariogramModel) -> Result<KrigingResult> {
    let pts = deduplicate(samples);
    if samples.len() < 2 {
        return Err(Error::InvalidInput("ordinary kriging needs at least two samples".into()));
    }
    let n = pts.len();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    let mut b = vec![0.0; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = model.gamma(pts[i].location.distance(&pts[j].location));
        }
        a[i][i] += KRIGING_JITTER;
        a[i][n] = 1.0;
        a[n][i] = 1.0;
        b[i] = model.gamma(pts[i].location.distance(&query));
    }
    b[n] = 1.0;
    let x = solve_linear(a, b.clone())?;
    let weights = x[..n].to_vec();
    let lagrange = x[n];
    let estimate = weights.iter().zip(&pts).map(|(w, p)| w * p.value).sum();
    let variance = weights.iter().zip(&b[..n]).map(|(w, g)| w * g).sum::<f64>() + lagrange;
    Ok(KrigingResult {
        estimate,
        variance: variance.max(0.0),
        weights,
        lagrange,
    })
}

/// Ordinary kriging estimate and kriging variance.
pub fn ordinary_kriging(samples: &[SamplePoint], query: GeoPoint, model: &VariogramModel) -> Result<(f64, f64)> {
    let r = ordinary_kriging_full(samples, query, model)?;
    Ok((r.estimate, r.variance))
}

/// Variogram used when too few lag bins exist to fit one: spherical, no
/// nugget, sill at the sample variance, range at the largest separation.
pub fn fallback_variogram(samples: &[SamplePoint]) -> VariogramModel {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|s| s.value).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / n;
    let mut max_d: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        for t in &samples[i + 1..] {
            max_d = max_d.max(s.location.distance(&t.location));
        }
    }
    VariogramModel {
        kind: VariogramKind::Spherical,
        nugget: 0.0,
        sill: var,
        range: if max_d > 0.0 { max_d } else { 1.0 },
        degenerate: var == 0.0,
    }
}

/// Fits a variogram to `samples`, falling back to [`fallback_variogram`] when
/// there are fewer than three non-empty lag bins.
pub fn fit_samples(samples: &[SamplePoint], kind: VariogramKind, n_bins: usize) -> Result<VariogramModel> {
    let bins = empirical_semivariogram(samples, n_bins)?;
    match fit_variogram(&bins, kind) {
        Ok(m) => Ok(m),
        Err(Error::Fit(_)) => Ok(fallback_variogram(samples)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Interpolator {
    Idw { power: f64 },
    /// Ordinary kriging; the variogram is refitted per call unless `frozen`
    /// is given.
    Ok {
        kind: VariogramKind,
        n_bins: usize,
        frozen: Option<VariogramModel>,
    },
}

impl Interpolator {
    pub fn idw() -> Self {
        Interpolator::Idw { power: 2.0 }
    }

    pub fn ok() -> Self {
        Interpolator::Ok {
            kind: VariogramKind::Spherical,
            n_bins: DEFAULT_BINS,
            frozen: None,
        }
    }
}

/// Treats each source station's prediction as a sample at the station and
/// interpolates to `target`.
pub fn aggregate_by_interpolation(samples: &[SamplePoint], target: GeoPoint, method: &Interpolator) -> Result<f64> {
    match method {
        Interpolator::Idw { power } => idw(samples, target, *power),
        Interpolator::Ok { kind, n_bins, frozen } => {
            if samples.len() < 2 {
                return Err(Error::InvalidInput("ordinary kriging needs at least two predictions".into()));
            }
            let model = match frozen {
                Some(m) => *m,
                None => fit_samples(samples, *kind, *n_bins)?,
            };
            Ok(ordinary_kriging(samples, target, &model)?.0)
        }
    }
}
