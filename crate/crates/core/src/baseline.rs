//! Non-event baseline traffic Z and marginal traffic S - Z.
//!
//! Adjacency is counted in weekdays: the day before a Monday is the Friday
//! before it. Mean imputation averages the `X` weekdays on each side of the
//! target. Regression imputation fits one pooled OLS model over
//! (POI, training day) points with the `k` weekdays on each side as features.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Table;
use crate::model::{PoiId, RegressionFit, TrafficPanel};
use crate::stats::{ols_fit, Design};

pub const MAX_WINDOW: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "method", content = "window", rename_all = "kebab-case")]
pub enum BaselineMethod {
    Mean(usize),
    Regression(usize),
}

impl BaselineMethod {
    pub fn window(&self) -> usize {
        match self {
            BaselineMethod::Mean(w) | BaselineMethod::Regression(w) => *w,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Mean(_) => "mean",
            BaselineMethod::Regression(_) => "regression",
        }
    }

    /// Parses `mean:2` / `regression:4`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, window) = spec
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("expected METHOD:WINDOW, got {spec:?}")))?;
        let window: usize = window
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad window in {spec:?}")))?;
        check_window(window)?;
        match name.trim() {
            "mean" => Ok(BaselineMethod::Mean(window)),
            "regression" => Ok(BaselineMethod::Regression(window)),
            other => Err(Error::invalid(format!("unknown baseline method {other:?}"))),
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.window())
    }
}

fn check_window(window: usize) -> Result<()> {
    if !(1..=MAX_WINDOW).contains(&window) {
        return Err(Error::invalid(format!(
            "window {window} outside [1, {MAX_WINDOW}]"
        )));
    }
    Ok(())
}

pub fn is_weekday(day: NaiveDate) -> bool {
    !matches!(day.weekday(), Weekday::Sat | Weekday::Sun)
}

/// The weekday `steps` weekdays away (negative = earlier).
pub fn weekday_offset(day: NaiveDate, steps: i64) -> NaiveDate {
    let dir = if steps < 0 { -1 } else { 1 };
    let mut d = day;
    let mut left = steps.abs();
    while left > 0 {
        d += Duration::days(dir);
        if is_weekday(d) {
            left -= 1;
        }
    }
    d
}

/// The `x` weekdays before and after `day`, nearest first on each side.
pub fn adjacent_weekdays(day: NaiveDate, x: usize) -> (Vec<NaiveDate>, Vec<NaiveDate>) {
    let before = (1..=x as i64).map(|k| weekday_offset(day, -k)).collect();
    let after = (1..=x as i64).map(|k| weekday_offset(day, k)).collect();
    (before, after)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineEstimate {
    pub pois: Vec<PoiId>,
    pub day: NaiveDate,
    pub z_values: Vec<f64>,
    pub method: BaselineMethod,
}

fn usable(panel: &TrafficPanel, day: NaiveDate, excluded: &BTreeSet<NaiveDate>) -> Option<usize> {
    if excluded.contains(&day) {
        return None;
    }
    panel.day_index(day)
}

/// Day indices of the strict mean window, or the list of unusable dates.
pub fn mean_window(
    panel: &TrafficPanel,
    target: NaiveDate,
    window: usize,
    excluded: &BTreeSet<NaiveDate>,
) -> Result<Vec<usize>> {
    check_window(window)?;
    let (before, after) = adjacent_weekdays(target, window);
    let mut idx = Vec::with_capacity(2 * window);
    let mut missing = Vec::new();
    for d in before.into_iter().chain(after) {
        match usable(panel, d, excluded) {
            Some(i) => idx.push(i),
            None => missing.push(d),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::InsufficientWindow {
            day: target,
            missing,
        });
    }
    Ok(idx)
}

/// Z_i = mean of the 2X adjacent-weekday counts.
pub fn mean_baseline(
    panel: &TrafficPanel,
    target: NaiveDate,
    window: usize,
    excluded: &BTreeSet<NaiveDate>,
) -> Result<BaselineEstimate> {
    let idx = mean_window(panel, target, window, excluded)?;
    let z_values = (0..panel.n_pois())
        .map(|p| idx.iter().map(|&d| panel.count(p, d) as f64).sum::<f64>() / idx.len() as f64)
        .collect();
    Ok(BaselineEstimate {
        pois: panel.pois().to_vec(),
        day: target,
        z_values,
        method: BaselineMethod::Mean(window),
    })
}

/// Feature day indices for the regression imputer: the `k` weekdays before
/// (nearest first) then the `k` after. A feature day that is absent from the
/// panel or excluded falls back to the next weekday toward the target, then
/// outward.
pub fn regression_features(
    panel: &TrafficPanel,
    target: NaiveDate,
    k: usize,
    excluded: &BTreeSet<NaiveDate>,
) -> Result<Vec<usize>> {
    check_window(k)?;
    let mut out = Vec::with_capacity(2 * k);
    for sign in [-1i64, 1] {
        for m in 1..=k as i64 {
            let fallback = (1..m).rev().chain(m + 1..=m + k as i64);
            let found = std::iter::once(m)
                .chain(fallback)
                .find_map(|s| usable(panel, weekday_offset(target, sign * s), excluded));
            match found {
                Some(i) => out.push(i),
                None => {
                    return Err(Error::InsufficientWindow {
                        day: target,
                        missing: vec![weekday_offset(target, sign * m)],
                    })
                }
            }
        }
    }
    Ok(out)
}

pub fn feature_names(k: usize) -> Vec<String> {
    (1..=k)
        .map(|m| format!("prev{m}"))
        .chain((1..=k).map(|m| format!("next{m}")))
        .collect()
}

/// A fitted pooled regression imputer.
#[derive(Debug, Clone)]
pub struct RegressionImputer {
    pub window: usize,
    pub fit: RegressionFit,
}

impl RegressionImputer {
    pub fn predict_row(&self, features: &[f64]) -> f64 {
        self.fit.coefficients[0]
            + self.fit.coefficients[1..]
                .iter()
                .zip(features)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    pub fn predict(
        &self,
        panel: &TrafficPanel,
        target: NaiveDate,
        excluded: &BTreeSet<NaiveDate>,
    ) -> Result<BaselineEstimate> {
        let idx = regression_features(panel, target, self.window, excluded)?;
        let z_values = (0..panel.n_pois())
            .map(|p| {
                let row: Vec<f64> = idx.iter().map(|&d| panel.count(p, d) as f64).collect();
                self.predict_row(&row)
            })
            .collect();
        Ok(BaselineEstimate {
            pois: panel.pois().to_vec(),
            day: target,
            z_values,
            method: BaselineMethod::Regression(self.window),
        })
    }
}

fn fit_rows(k: usize, rows: &[Vec<f64>], response: &[f64]) -> Result<RegressionFit> {
    let n = rows.len();
    if n < 2 * k + 2 {
        return Err(Error::invalid(format!(
            "regression imputation with window {k} needs at least {} training points, got {n}",
            2 * k + 2
        )));
    }
    let mut design = Design::new(n).with_intercept();
    for (j, name) in feature_names(k).into_iter().enumerate() {
        design = design.column(name, rows.iter().map(|r| r[j]).collect())?;
    }
    match ols_fit(&design, response) {
        Ok(fit) => Ok(fit),
        // all-zero traffic: every coefficient vector fits; take the zero model
        Err(Error::Collinear(_))
            if response.iter().all(|&v| v == 0.0) && rows.iter().flatten().all(|&v| v == 0.0) =>
        {
            let p = 2 * k + 1;
            Ok(RegressionFit {
                terms: design.terms().to_vec(),
                coefficients: vec![0.0; p],
                std_errors: vec![0.0; p],
                p_values: vec![1.0; p],
                residual_std_error: 0.0,
                r_squared: 0.0,
                n_obs: n,
                dof: n - p,
                residuals: vec![0.0; n],
            })
        }
        Err(Error::Collinear(msg)) => Err(Error::Collinear(format!("collinear features: {msg}"))),
        Err(e) => Err(e),
    }
}

struct TrainingSet {
    rows: Vec<Vec<f64>>,
    response: Vec<f64>,
}

fn training_set(
    panel: &TrafficPanel,
    k: usize,
    days: &[NaiveDate],
    excluded: &BTreeSet<NaiveDate>,
) -> Result<TrainingSet> {
    let mut rows = Vec::with_capacity(days.len() * panel.n_pois());
    let mut response = Vec::with_capacity(rows.capacity());
    for &day in days {
        let t = panel
            .day_index(day)
            .ok_or_else(|| Error::invalid(format!("training day {day} not in panel")))?;
        let idx = regression_features(panel, day, k, excluded)?;
        for p in 0..panel.n_pois() {
            rows.push(idx.iter().map(|&d| panel.count(p, d) as f64).collect());
            response.push(panel.count(p, t) as f64);
        }
    }
    Ok(TrainingSet { rows, response })
}

pub fn fit_regression_imputer(
    panel: &TrafficPanel,
    k: usize,
    training_days: &[NaiveDate],
    excluded: &BTreeSet<NaiveDate>,
) -> Result<RegressionImputer> {
    check_window(k)?;
    let set = training_set(panel, k, training_days, excluded)?;
    let fit = fit_rows(k, &set.rows, &set.response)?;
    Ok(RegressionImputer { window: k, fit })
}

/// Fits the pooled imputer on `training_days` and predicts `target`.
pub fn regression_baseline(
    panel: &TrafficPanel,
    target: NaiveDate,
    k: usize,
    training_days: &[NaiveDate],
    excluded: &BTreeSet<NaiveDate>,
) -> Result<BaselineEstimate> {
    fit_regression_imputer(panel, k, training_days, excluded)?.predict(panel, target, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImputationMetrics {
    pub rmse: f64,
    pub r2: f64,
    pub mae: f64,
    pub n_points: usize,
}

pub fn imputation_metrics(truth: &[f64], predicted: &[f64]) -> Result<ImputationMetrics> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::invalid(
            "metrics need equal-length non-empty vectors",
        ));
    }
    let n = truth.len() as f64;
    let m = truth.iter().sum::<f64>() / n;
    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for (t, p) in truth.iter().zip(predicted) {
        sse += (t - p) * (t - p);
        sae += (t - p).abs();
        sst += (t - m) * (t - m);
    }
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(ImputationMetrics {
        rmse: (sse / n).sqrt(),
        r2,
        mae: sae / n,
        n_points: truth.len(),
    })
}

/// Metrics per group label, e.g. per POI category.
pub fn metrics_by_group<G: Ord + Clone>(
    truth: &[f64],
    predicted: &[f64],
    groups: &[G],
) -> Result<BTreeMap<G, ImputationMetrics>> {
    if groups.len() != truth.len() {
        return Err(Error::invalid(
            "group labels do not match the number of points",
        ));
    }
    let mut split: BTreeMap<G, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((t, p), g) in truth.iter().zip(predicted).zip(groups) {
        let e = split.entry(g.clone()).or_default();
        e.0.push(*t);
        e.1.push(*p);
    }
    split
        .into_iter()
        .map(|(g, (t, p))| imputation_metrics(&t, &p).map(|m| (g, m)))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            repeats: 3,
            seed: 0,
        }
    }
}

/// Held-out truth and predictions over all (POI, eval day) cells. Mean
/// imputation has nothing to fit, so every cell is predicted once; regression
/// imputation is cross-validated with cells assigned to folds uniformly at
/// random, once per repeat.
pub fn imputation_predictions(
    panel: &TrafficPanel,
    method: BaselineMethod,
    eval_days: &[NaiveDate],
    excluded: &BTreeSet<NaiveDate>,
    cv: CvConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_cells = eval_days.len() * panel.n_pois();
    if cv.folds < 2 {
        return Err(Error::invalid("cross validation needs at least 2 folds"));
    }
    if n_cells < cv.folds {
        return Err(Error::invalid(format!(
            "{n_cells} evaluation cells is fewer than {} folds",
            cv.folds
        )));
    }
    match method {
        BaselineMethod::Mean(x) => {
            let mut truth = Vec::with_capacity(n_cells);
            let mut pred = Vec::with_capacity(n_cells);
            for &day in eval_days {
                let t = panel
                    .day_index(day)
                    .ok_or_else(|| Error::invalid(format!("evaluation day {day} not in panel")))?;
                let z = mean_baseline(panel, day, x, excluded)?;
                truth.extend((0..panel.n_pois()).map(|p| panel.count(p, t) as f64));
                pred.extend(z.z_values);
            }
            Ok((truth, pred))
        }
        BaselineMethod::Regression(k) => {
            check_window(k)?;
            let set = training_set(panel, k, eval_days, excluded)?;
            let mut truth = Vec::with_capacity(n_cells * cv.repeats);
            let mut pred = Vec::with_capacity(n_cells * cv.repeats);
            for r in 0..cv.repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(cv.seed);
                rng.set_stream(r as u64);
                let mut order: Vec<usize> = (0..n_cells).collect();
                order.shuffle(&mut rng);
                let mut fold_of = vec![0usize; n_cells];
                for (pos, &cell) in order.iter().enumerate() {
                    fold_of[cell] = pos % cv.folds;
                }
                let per_fold: Vec<Vec<(usize, f64)>> = (0..cv.folds)
                    .into_par_iter()
                    .map(|f| {
                        let (mut rows, mut resp) = (Vec::new(), Vec::new());
                        for c in (0..n_cells).filter(|&c| fold_of[c] != f) {
                            rows.push(set.rows[c].clone());
                            resp.push(set.response[c]);
                        }
                        let imputer = RegressionImputer {
                            window: k,
                            fit: fit_rows(k, &rows, &resp)?,
                        };
                        Ok((0..n_cells)
                            .filter(|&c| fold_of[c] == f)
                            .map(|c| (c, imputer.predict_row(&set.rows[c])))
                            .collect())
                    })
                    .collect::<Result<_>>()?;
                let mut repeat_pred = vec![0.0; n_cells];
                for (c, v) in per_fold.into_iter().flatten() {
                    repeat_pred[c] = v;
                }
                truth.extend_from_slice(&set.response);
                pred.extend(repeat_pred);
            }
            Ok((truth, pred))
        }
    }
}

pub fn evaluate_imputation(
    panel: &TrafficPanel,
    method: BaselineMethod,
    eval_days: &[NaiveDate],
    excluded: &BTreeSet<NaiveDate>,
    cv: CvConfig,
) -> Result<ImputationMetrics> {
    let (truth, pred) = imputation_predictions(panel, method, eval_days, excluded, cv)?;
    imputation_metrics(&truth, &pred)
}

/// `imputation_eval.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationRow {
    pub method: String,
    pub window: usize,
    pub rmse: f64,
    pub r2: f64,
    pub mae: f64,
}

impl Table for ImputationRow {
    const HEADER: &'static [&'static str] = &["method", "window", "rmse", "r2", "mae"];
}

impl ImputationRow {
    pub fn new(method: BaselineMethod, m: &ImputationMetrics) -> Self {
        ImputationRow {
            method: method.name().to_string(),
            window: method.window(),
            rmse: m.rmse,
            r2: m.r2,
            mae: m.mae,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalTraffic {
    pub pois: Vec<PoiId>,
    pub day: NaiveDate,
    pub values: Vec<f64>,
    /// POIs whose marginal traffic is below zero.
    pub negative: Vec<PoiId>,
}

/// S - Z for the baseline's day, element-wise. Negative values are kept and
/// listed.
pub fn marginal_traffic(
    panel: &TrafficPanel,
    baseline: &BaselineEstimate,
) -> Result<MarginalTraffic> {
    if baseline.pois.as_slice() != panel.pois() {
        return Err(Error::invalid("baseline POI set does not match the panel"));
    }
    let d = panel
        .day_index(baseline.day)
        .ok_or_else(|| Error::invalid(format!("baseline day {} not in panel", baseline.day)))?;
    let values: Vec<f64> = (0..panel.n_pois())
        .map(|p| panel.count(p, d) as f64 - baseline.z_values[p])
        .collect();
    let negative: Vec<PoiId> = values
        .iter()
        .zip(panel.pois())
        .filter(|(v, _)| **v < 0.0)
        .map(|(_, p)| p.clone())
        .collect();
    if !negative.is_empty() {
        log::warn!(
            "{}: {} POIs have negative marginal traffic",
            baseline.day,
            negative.len()
        );
    }
    Ok(MarginalTraffic {
        pois: panel.pois().to_vec(),
        day: baseline.day,
        values,
        negative,
    })
}
