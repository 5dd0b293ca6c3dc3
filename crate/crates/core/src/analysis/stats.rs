//! Paired t-tests with Bonferroni correction.
//!
//! The Student t tail comes from the regularized incomplete beta function,
//! evaluated with a Lentz continued fraction and a Lanczos log-gamma.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
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
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    #[default]
    TwoSided,
    /// Alternative: mean of `xs - ys` is positive.
    Greater,
    /// Alternative: mean of `xs - ys` is negative.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    /// `None` when the differences have zero variance.
    pub t: Option<f64>,
    pub df: usize,
    pub p_two_sided: f64,
    pub p_greater: f64,
    pub p_less: f64,
    pub degenerate: bool,
}

impl PairedTTest {
    pub fn p(&self, tail: Tail) -> f64 {
        match tail {
            Tail::TwoSided => self.p_two_sided,
            Tail::Greater => self.p_greater,
            Tail::Less => self.p_less,
        }
    }
}

/// Paired t-test on `xs - ys` with `n - 1` degrees of freedom.
///
/// Zero variance of the differences leaves `t` undefined; every p-value is
/// then 1 and the result is flagged as degenerate.
pub fn paired_t_test(xs: &[f64], ys: &[f64]) -> Result<PairedTTest> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            what: "ys",
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired differences".into()));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(PairedTTest {
            t: None,
            df,
            p_two_sided: 1.0,
            p_greater: 1.0,
            p_less: 1.0,
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let upper = student_t_sf(t, df as f64);
    let lower = student_t_sf(-t, df as f64);
    Ok(PairedTTest {
        t: Some(t),
        df,
        p_two_sided: (2.0 * upper.min(lower)).min(1.0),
        p_greater: upper,
        p_less: lower,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub metric_name: String,
    pub t_statistic: Option<f64>,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

impl TestResult {
    /// An uncorrected result; [`bonferroni`] fills in the adjusted fields.
    pub fn new(metric_name: impl Into<String>, test: &PairedTTest, tail: Tail) -> Self {
        let p = test.p(tail);
        Self {
            metric_name: metric_name.into(),
            t_statistic: test.t,
            p_raw: p,
            p_adjusted: p,
            significant: false,
        }
    }
}

/// `p_adjusted = min(1, p_raw * k)` over a family of `k` tests.
pub fn bonferroni(results: &[TestResult], alpha: f64) -> Vec<TestResult> {
    let k = results.len() as f64;
    results
        .iter()
        .map(|r| {
            let p_adjusted = (r.p_raw * k).min(1.0);
            TestResult {
                p_adjusted,
                significant: p_adjusted < alpha,
                ..r.clone()
            }
        })
        .collect()
}
