//! Ranking, correlation, least squares and bootstrap resampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::RegressionFit;

/// Spearman p-values are enumerated exactly up to this many observations.
pub const EXACT_SPEARMAN_MAX_N: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub values: Vec<f64>,
    pub ties_present: bool,
}

/// Increasing ranks starting at 1; tied values share the mean of the ranks
/// they span.
pub fn rank(x: &[f64]) -> Result<RankVector> {
    if x.is_empty() {
        return Err(Error::invalid("cannot rank an empty vector"));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite value at index {i}")));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));

    let mut values = vec![0.0; x.len()];
    let mut ties_present = false;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        if end - start > 1 {
            ties_present = true;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            values[i] = avg;
        }
        start = end;
    }
    Ok(RankVector {
        values,
        ties_present,
    })
}

/// Ranks with 1 assigned to the largest value.
pub fn rank_descending(x: &[f64]) -> Result<RankVector> {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    rank(&neg)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::invalid("correlation needs at least 3 observations"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&rank(x)?.values, &rank(y)?.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMethod {
    ExactPermutation,
    TApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTest {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// Spearman's rho with a two-sided p-value: exact permutation enumeration
/// for n <= 10, otherwise the t approximation with n - 2 degrees of freedom.
pub fn spearman_test(x: &[f64], y: &[f64]) -> Result<CorrelationTest> {
    let rho = spearman(x, y)?;
    let n = x.len();
    if n <= EXACT_SPEARMAN_MAX_N {
        let p_value = exact_spearman_p(&rank(x)?.values, &rank(y)?.values, rho);
        return Ok(CorrelationTest {
            rho,
            p_value,
            n,
            method: PValueMethod::ExactPermutation,
        });
    }
    Ok(CorrelationTest {
        rho,
        p_value: t_approx_p(rho, n),
        n,
        method: PValueMethod::TApproximation,
    })
}

fn t_approx_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let dof = (n - 2) as f64;
    let t = rho * (dof / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

// Heap's algorithm over the y ranks. Means and variances are permutation
// invariant, so only the cross product changes.
fn exact_spearman_p(rx: &[f64], ry: &[f64], rho: f64) -> f64 {
    let n = rx.len();
    let cx: Vec<f64> = {
        let m = mean(rx);
        rx.iter().map(|v| v - m).collect()
    };
    let mut cy: Vec<f64> = {
        let m = mean(ry);
        ry.iter().map(|v| v - m).collect()
    };
    let denom =
        (cx.iter().map(|v| v * v).sum::<f64>() * cy.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let target = rho.abs() - 1e-12;
    let dot = |cy: &[f64]| cx.iter().zip(cy).map(|(a, b)| a * b).sum::<f64>() / denom;

    let mut hits: u64 = 0;
    let mut total: u64 = 0;
    let mut c = vec![0usize; n];
    let mut visit = |cy: &[f64]| {
        total += 1;
        if dot(cy).abs() >= target {
            hits += 1;
        }
    };
    visit(&cy);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                cy.swap(0, i);
            } else {
                cy.swap(c[i], i);
            }
            visit(&cy);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

/// Named-column design matrix.
#[derive(Debug, Clone)]
pub struct Design {
    n_rows: usize,
    terms: Vec<String>,
    columns: Vec<Vec<f64>>,
    intercept: bool,
}

pub const INTERCEPT: &str = "(Intercept)";

impl Design {
    pub fn new(n_rows: usize) -> Self {
        Design {
            n_rows,
            terms: Vec::new(),
            columns: Vec::new(),
            intercept: false,
        }
    }

    pub fn with_intercept(mut self) -> Self {
        if !self.intercept {
            self.terms.insert(0, INTERCEPT.to_string());
            self.columns.insert(0, vec![1.0; self.n_rows]);
            self.intercept = true;
        }
        self
    }

    pub fn column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.n_rows {
            return Err(Error::invalid(format!(
                "column {name} has {} rows, design has {}",
                values.len(),
                self.n_rows
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "column {name} has non-finite values"
            )));
        }
        self.terms.push(name);
        self.columns.push(values);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows, self.columns.len(), |r, c| self.columns[c][r])
    }
}

/// Relative tolerance on the diagonal of R below which a design is treated as
/// rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares by Householder QR, with homoskedastic standard
/// errors from sigma^2 (X'X)^-1 and sigma^2 = SSE / (n - p).
pub fn ols_fit(design: &Design, response: &[f64]) -> Result<RegressionFit> {
    let (n, p) = (design.n_rows(), design.n_cols());
    if p == 0 {
        return Err(Error::invalid("design has no columns"));
    }
    if response.len() != n {
        return Err(Error::invalid(format!(
            "response has {} rows, design has {n}",
            response.len()
        )));
    }
    if n < p + 1 {
        return Err(Error::invalid(format!(
            "{n} observations cannot identify {p} coefficients with residual variance"
        )));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response has non-finite values"));
    }

    let x = design.matrix();
    let y = DVector::from_column_slice(response);
    let scale = x.column_iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    let qr = x.clone().qr();
    let r = qr.r();
    for k in 0..p {
        if r[(k, k)].abs() <= RANK_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Collinear(format!(
                "column {} is a linear combination of the others",
                design.terms()[k]
            )));
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Collinear("triangular solve failed".into()))?;
    let fitted = &x * &beta;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    let dof = n - p;
    let sigma2 = sse / dof as f64;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Collinear("triangular inverse failed".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let std_errors: Vec<f64> = (0..p).map(|k| (sigma2 * xtx_inv[(k, k)]).sqrt()).collect();

    let tdist = StudentsT::new(0.0, 1.0, dof as f64).expect("positive dof");
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let p_values = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(&b, &se)| {
            if se > 0.0 {
                (2.0 * (1.0 - tdist.cdf((b / se).abs()))).clamp(0.0, 1.0)
            } else if b == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    let sst: f64 = if design.has_intercept() {
        let m = mean(response);
        response.iter().map(|v| (v - m) * (v - m)).sum()
    } else {
        response.iter().map(|v| v * v).sum()
    };
    // a constant response leaves nothing to explain
    let r_squared = if sst > 0.0 {
        (1.0 - sse / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };

    Ok(RegressionFit {
        terms: design.terms().to_vec(),
        coefficients,
        std_errors,
        p_values,
        residual_std_error: sigma2.sqrt(),
        r_squared,
        n_obs: n,
        dof,
        residuals,
    })
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub const MIN_BOOTSTRAP_RESAMPLES: usize = 100;

/// Evaluates `statistic` on `resamples` index resamples (with replacement)
/// of `0..n_units`. Resample `b` draws from its own ChaCha stream, so the
/// output depends only on `seed` and not on thread scheduling.
pub fn bootstrap_replicates<T, E, F>(
    statistic: F,
    n_units: usize,
    resamples: usize,
    seed: u64,
) -> Result<Vec<T>>
where
    T: Send,
    E: std::fmt::Display,
    F: Fn(&[usize]) -> std::result::Result<T, E> + Sync,
{
    if resamples < MIN_BOOTSTRAP_RESAMPLES {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_RESAMPLES} resamples, got {resamples}"
        )));
    }
    if n_units == 0 {
        return Err(Error::invalid("bootstrap over zero units"));
    }
    (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let idx: Vec<usize> = (0..n_units).map(|_| rng.random_range(0..n_units)).collect();
            statistic(&idx).map_err(|e| Error::ResampleFailed {
                resample: b,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Bootstrap standard error: the standard deviation of the statistic over
/// the resamples.
pub fn bootstrap_se<E, F>(statistic: F, n_units: usize, resamples: usize, seed: u64) -> Result<f64>
where
    E: std::fmt::Display,
    F: Fn(&[usize]) -> std::result::Result<f64, E> + Sync,
{
    let reps = bootstrap_replicates(statistic, n_units, resamples, seed)?;
    Ok(std_dev(&reps))
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}
