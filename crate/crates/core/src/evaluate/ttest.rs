use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// p-values below this are reported as exactly zero.
pub const P_UNDERFLOW: f64 = 1e-300;

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Paired two-sided t-test on `x - y`.
///
/// All-zero differences give `t = 0, p = 1`; constant nonzero differences
/// give an infinite `t` and `p = 0`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), actual: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite paired difference".into()));
    }
    let df = n - 1;
    if d.iter().all(|v| *v == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(TTest {
            t: f64::INFINITY.copysign(mean),
            p: 0.0,
            df,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let mut p = student_t_two_sided(t, df as f64);
    if p < P_UNDERFLOW {
        p = 0.0;
    }
    Ok(TTest { t, p, df })
}

/// Symmetric matrix of pairwise p-values with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueMatrix {
    pub labels: Vec<String>,
    pub p: Vec<Vec<Option<f64>>>,
}

impl PValueMatrix {
    /// Runs `test` on every unordered pair of `labels` indices.
    pub fn build(labels: Vec<String>, mut test: impl FnMut(usize, usize) -> Result<f64>) -> Result<Self> {
        let n = labels.len();
        let mut p = vec![vec![None; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = test(i, j)?;
                p[i][j] = Some(v);
                p[j][i] = Some(v);
            }
        }
        Ok(PValueMatrix { labels, p })
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.p.get(i).and_then(|r| r.get(j).copied().flatten())
    }

    /// CSV table with the labels as header row and column; the diagonal
    /// reads `N/A`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.p) {
            out.push_str(label);
            for v in row {
                match v {
                    Some(p) => write!(out, ",{p}").unwrap(),
                    None => out.push_str(",N/A"),
                }
            }
            out.push('\n');
        }
        out
    }
}
