//! Coverage statistics and placebo inference.
//!
//! Each placebo procedure computes one statistic per day in the placebo set
//! using that day's marginal traffic S^j - Z^j against the fixed focal-day
//! profiles (V, A, R), then ranks the focal statistic within the set.

use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{adjacent_weekdays, fit_regression_imputer, mean_baseline, BaselineMethod};
use crate::error::{Error, Result};
use crate::ingest::Table;
use crate::model::{
    CoverageVector, DayValue, PlaceboResult, PoiId, PoiProfile, RegressionFit, TailDirection,
    TrafficPanel,
};
use crate::stats::{ols_fit, spearman, spearman_test, CorrelationTest, Design};

pub const AGE_TERM: &str = "pct_over_65";
pub const RACE_TERM: &str = "pct_non_white";
pub const INTERACTION_TERM: &str = "pct_over_65:pct_non_white";

/// C(S, T) = S / T element-wise.
pub fn coverage(pois: &[PoiId], numerator: &[f64], denominator: &[f64]) -> Result<CoverageVector> {
    if numerator.len() != denominator.len() || pois.len() != numerator.len() {
        return Err(Error::invalid(format!(
            "coverage needs equal lengths, got {} POIs, {} numerators, {} denominators",
            pois.len(),
            numerator.len(),
            denominator.len()
        )));
    }
    if let Some((p, &v)) = pois.iter().zip(denominator).find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveDenominator {
            poi: p.to_string(),
            value: v,
        });
    }
    CoverageVector::new(
        pois.to_vec(),
        numerator
            .iter()
            .zip(denominator)
            .map(|(s, t)| s / t)
            .collect(),
    )
}

/// Spearman association between marginal traffic and ground-truth visits.
pub fn measurement_signal(marginal: &[f64], turnout: &[f64]) -> Result<CorrelationTest> {
    spearman_test(marginal, turnout)
}

/// Spearman association between coverage and a demographic share.
pub fn preliminary_disparity(
    coverage: &CoverageVector,
    demographic: &[f64],
) -> Result<CorrelationTest> {
    spearman_test(&coverage.values, demographic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Demographic {
    Age,
    Race,
    Joint,
}

impl Demographic {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "age" => Ok(Demographic::Age),
            "race" => Ok(Demographic::Race),
            "joint" => Ok(Demographic::Joint),
            other => Err(Error::invalid(format!("unknown demographic {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Demographic::Age => "age",
            Demographic::Race => "race",
            Demographic::Joint => "joint",
        }
    }
}

impl fmt::Display for Demographic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Panel days whose `window` weekdays on each side are present and not
/// excluded and which do not borrow the focal day; the focal day itself is
/// kept when its own window is complete.
pub fn placebo_days(
    panel_days: &[NaiveDate],
    focal: NaiveDate,
    window: usize,
    excluded: &BTreeSet<NaiveDate>,
) -> Vec<NaiveDate> {
    let present: BTreeSet<NaiveDate> = panel_days.iter().copied().collect();
    panel_days
        .iter()
        .copied()
        .filter(|d| !excluded.contains(d))
        .filter(|&d| {
            let (before, after) = adjacent_weekdays(d, window);
            before.iter().chain(&after).all(|n| {
                present.contains(n) && !excluded.contains(n) && (d == focal || *n != focal)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConfig {
    pub election_date: NaiveDate,
    pub placebo_days: Vec<NaiveDate>,
    pub baseline: BaselineMethod,
    pub exclude_negative_marginal: bool,
    pub demographic: Demographic,
    /// Keep the focal day in its own placebo set.
    pub include_focal: bool,
    pub excluded_dates: BTreeSet<NaiveDate>,
}

impl AuditConfig {
    /// A config whose placebo set is derived from the panel calendar.
    pub fn for_panel(
        panel: &TrafficPanel,
        election_date: NaiveDate,
        baseline: BaselineMethod,
        excluded_dates: BTreeSet<NaiveDate>,
    ) -> Self {
        AuditConfig {
            election_date,
            placebo_days: placebo_days(
                panel.days(),
                election_date,
                baseline.window(),
                &excluded_dates,
            ),
            baseline,
            exclude_negative_marginal: false,
            demographic: Demographic::Age,
            include_focal: true,
            excluded_dates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.placebo_days.contains(&self.election_date) {
            return Err(Error::invalid(format!(
                "placebo days must contain the election date {}",
                self.election_date
            )));
        }
        if self.excluded_dates.contains(&self.election_date) {
            return Err(Error::invalid("the election date is excluded"));
        }
        if self.placebo_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("placebo days must be strictly increasing"));
        }
        let (before, after) = adjacent_weekdays(self.election_date, self.baseline.window());
        let near: BTreeSet<NaiveDate> = before.into_iter().chain(after).collect();
        if let Some(d) = self
            .placebo_days
            .iter()
            .find(|d| near.contains(d) || self.excluded_dates.contains(d))
        {
            return Err(Error::invalid(format!(
                "placebo day {d} is excluded or inside the election day's baseline window"
            )));
        }
        if self.placebo_days.len() < 2 {
            return Err(Error::invalid(
                "placebo set needs at least one non-focal day",
            ));
        }
        Ok(())
    }
}

/// Marginal traffic on every placebo day, restricted to POIs with a profile.
#[derive(Debug, Clone)]
pub struct DayMarginals {
    pub pois: Vec<PoiId>,
    pub turnout: Vec<f64>,
    /// Share over 65, in [0, 1].
    pub prop_over_65: Vec<f64>,
    /// Non-white share, in [0, 1].
    pub prop_non_white: Vec<f64>,
    pub days: Vec<NaiveDate>,
    /// One vector per day, aligned with `pois`.
    pub marginal: Vec<Vec<f64>>,
    pub focal_index: usize,
    /// POIs removed for negative focal-day marginal traffic.
    pub excluded_pois: Vec<PoiId>,
}

impl DayMarginals {
    pub fn focal_day(&self) -> NaiveDate {
        self.days[self.focal_index]
    }

    pub fn focal_marginal(&self) -> &[f64] {
        &self.marginal[self.focal_index]
    }

    pub fn n_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn demographic(&self, d: Demographic) -> Result<&[f64]> {
        match d {
            Demographic::Age => Ok(&self.prop_over_65),
            Demographic::Race => Ok(&self.prop_non_white),
            Demographic::Joint => Err(Error::invalid(
                "joint demographic needs the joint procedure",
            )),
        }
    }

    pub fn focal_coverage(&self) -> Result<CoverageVector> {
        coverage(&self.pois, self.focal_marginal(), &self.turnout)
    }
}

/// Computes S^j - Z^j for every placebo day. Profiles with zero turnout or
/// whose POI is absent from the panel are left out. The election day is
/// never used as a baseline input.
pub fn compute_marginals(
    panel: &TrafficPanel,
    profiles: &[PoiProfile],
    config: &AuditConfig,
) -> Result<DayMarginals> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut kept = Vec::new();
    let mut missing = 0usize;
    for p in profiles.iter().filter(|p| p.turnout >= 1) {
        match panel.poi_index(&p.poi_id) {
            Some(i) => {
                rows.push(i);
                kept.push(p);
            }
            None => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{missing} profiled POIs are absent from the traffic panel");
    }
    if kept.len() < 3 {
        return Err(Error::invalid(format!(
            "only {} POIs have both traffic and turnout",
            kept.len()
        )));
    }

    let mut excluded = config.excluded_dates.clone();
    excluded.insert(config.election_date);
    let days = config.placebo_days.clone();
    let imputer = match config.baseline {
        BaselineMethod::Regression(k) => {
            let training: Vec<NaiveDate> = days
                .iter()
                .copied()
                .filter(|d| *d != config.election_date)
                .collect();
            Some(fit_regression_imputer(panel, k, &training, &excluded)?)
        }
        BaselineMethod::Mean(_) => None,
    };
    let marginal: Vec<Vec<f64>> = days
        .par_iter()
        .map(|&day| {
            let t = panel
                .day_index(day)
                .ok_or_else(|| Error::invalid(format!("placebo day {day} not in panel")))?;
            let z = match (&imputer, config.baseline) {
                (Some(imp), _) => imp.predict(panel, day, &excluded)?,
                (None, BaselineMethod::Mean(x)) => mean_baseline(panel, day, x, &excluded)?,
                (None, BaselineMethod::Regression(_)) => unreachable!(),
            };
            Ok(rows
                .iter()
                .map(|&i| panel.count(i, t) as f64 - z.z_values[i])
                .collect())
        })
        .collect::<Result<_>>()?;
    let focal_index = days
        .iter()
        .position(|d| *d == config.election_date)
        .expect("validated");

    let mut out = DayMarginals {
        pois: kept.iter().map(|p| p.poi_id.clone()).collect(),
        turnout: kept.iter().map(|p| p.turnout as f64).collect(),
        prop_over_65: kept.iter().map(|p| p.prop_over_65).collect(),
        prop_non_white: kept.iter().map(|p| p.prop_non_white).collect(),
        days,
        marginal,
        focal_index,
        excluded_pois: Vec::new(),
    };
    let negative: Vec<usize> = (0..out.n_pois())
        .filter(|&i| out.focal_marginal()[i] < 0.0)
        .collect();
    if !negative.is_empty() {
        log::warn!(
            "{} POIs have negative marginal traffic on {}",
            negative.len(),
            config.election_date
        );
    }
    if config.exclude_negative_marginal && !negative.is_empty() {
        let keep: Vec<bool> = (0..out.n_pois())
            .map(|i| out.focal_marginal()[i] >= 0.0)
            .collect();
        let filter = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| *x)
                .collect()
        };
        out.excluded_pois = negative.iter().map(|&i| out.pois[i].clone()).collect();
        out.pois = out
            .pois
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(p, _)| p.clone())
            .collect();
        out.turnout = filter(&out.turnout);
        out.prop_over_65 = filter(&out.prop_over_65);
        out.prop_non_white = filter(&out.prop_non_white);
        out.marginal = out.marginal.iter().map(|m| filter(m)).collect();
        if out.n_pois() < 3 {
            return Err(Error::invalid(
                "fewer than 3 POIs remain after excluding negative marginal traffic",
            ));
        }
    }
    Ok(out)
}

/// Focal value, kept placebo values, dropped days.
type PerDay<T> = (T, Vec<(NaiveDate, T)>, Vec<NaiveDate>);

/// Evaluates `stat` on every day in parallel. Degenerate non-focal days are
/// dropped with a warning; a degenerate focal day is an error.
fn per_day<T, F>(
    m: &DayMarginals,
    include_focal: bool,
    stat: F,
) -> Result<PerDay<T>>
where
    T: Send + Copy,
    F: Fn(&[f64]) -> Result<T> + Sync,
{
    let results: Vec<(NaiveDate, Result<T>)> = m
        .days
        .par_iter()
        .zip(&m.marginal)
        .map(|(&d, v)| (d, stat(v)))
        .collect();
    let focal = m.focal_day();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut focal_value = None;
    for (day, r) in results {
        match r {
            Ok(v) => {
                if day == focal {
                    focal_value = Some(v);
                    if !include_focal {
                        continue;
                    }
                }
                kept.push((day, v));
            }
            Err(Error::Degenerate(msg)) if day != focal => {
                log::warn!("dropping placebo day {day}: degenerate ({msg})");
                dropped.push(day);
            }
            Err(e) => {
                return Err(Error::DayFailed {
                    day,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((focal_value.expect("focal day evaluated"), kept, dropped))
}

fn to_result(
    name: &str,
    m: &DayMarginals,
    focal_value: f64,
    kept: Vec<(NaiveDate, f64)>,
    dropped: Vec<NaiveDate>,
    direction: TailDirection,
) -> Result<PlaceboResult> {
    let values = kept
        .into_iter()
        .map(|(day, value)| DayValue { day, value })
        .collect();
    PlaceboResult::from_values(name, m.focal_day(), focal_value, values, direction, dropped)
}

/// Lower-tail placebo test on spearman(C(S^j - Z^j, V), D).
pub fn placebo_disparate_from(
    m: &DayMarginals,
    demographic: Demographic,
    include_focal: bool,
) -> Result<PlaceboResult> {
    let d = m.demographic(demographic)?;
    let (focal, kept, dropped) = per_day(m, include_focal, |marg| {
        let c = coverage(&m.pois, marg, &m.turnout)?;
        spearman(&c.values, d)
    })?;
    to_result(
        &format!("disparate-{demographic}"),
        m,
        focal,
        kept,
        dropped,
        TailDirection::LowerTail,
    )
}

pub fn placebo_disparate(
    panel: &TrafficPanel,
    profiles: &[PoiProfile],
    config: &AuditConfig,
) -> Result<PlaceboResult> {
    let m = compute_marginals(panel, profiles, config)?;
    placebo_disparate_from(&m, config.demographic, config.include_focal)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointPlaceboResult {
    pub age: PlaceboResult,
    pub race: PlaceboResult,
}

fn pct(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 100.0 * x).collect()
}

/// Per-day OLS of percent coverage on percentage-point A and R with an
/// intercept; lower-tail tests on both slopes.
pub fn placebo_joint_from(m: &DayMarginals, include_focal: bool) -> Result<JointPlaceboResult> {
    let design = Design::new(m.n_pois())
        .with_intercept()
        .column(AGE_TERM, pct(&m.prop_over_65))?
        .column(RACE_TERM, pct(&m.prop_non_white))?;
    // the design is shared by every day, so check rank once up front
    ols_fit(&design, &vec![0.0; m.n_pois()]).map_err(|e| match e {
        Error::Collinear(msg) => Error::Collinear(format!("A and R: {msg}")),
        e => e,
    })?;
    let (focal, kept, dropped) = per_day(m, include_focal, |marg| {
        let c = coverage(&m.pois, marg, &m.turnout)?;
        let fit = ols_fit(&design, &pct(&c.values))?;
        Ok((fit.coefficients[1], fit.coefficients[2]))
    })?;
    let split = |k: usize| -> Vec<(NaiveDate, f64)> {
        kept.iter()
            .map(|(d, (a, r))| (*d, if k == 0 { *a } else { *r }))
            .collect()
    };
    Ok(JointPlaceboResult {
        age: to_result(
            "joint-age",
            m,
            focal.0,
            split(0),
            dropped.clone(),
            TailDirection::LowerTail,
        )?,
        race: to_result(
            "joint-race",
            m,
            focal.1,
            split(1),
            dropped,
            TailDirection::LowerTail,
        )?,
    })
}

pub fn placebo_joint(
    panel: &TrafficPanel,
    profiles: &[PoiProfile],
    config: &AuditConfig,
) -> Result<JointPlaceboResult> {
    let m = compute_marginals(panel, profiles, config)?;
    placebo_joint_from(&m, config.include_focal)
}

/// Upper-tail placebo test on spearman(S^j - Z^j, V).
pub fn placebo_measurement_from(m: &DayMarginals, include_focal: bool) -> Result<PlaceboResult> {
    let (focal, kept, dropped) = per_day(m, include_focal, |marg| spearman(marg, &m.turnout))?;
    to_result(
        "measurement",
        m,
        focal,
        kept,
        dropped,
        TailDirection::UpperTail,
    )
}

pub fn placebo_measurement(
    panel: &TrafficPanel,
    profiles: &[PoiProfile],
    config: &AuditConfig,
) -> Result<PlaceboResult> {
    let m = compute_marginals(panel, profiles, config)?;
    placebo_measurement_from(&m, config.include_focal)
}

/// `placebo_distribution.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboRow {
    pub day: NaiveDate,
    pub value: f64,
    pub is_focal: bool,
}

impl Table for PlaceboRow {
    const HEADER: &'static [&'static str] = &["day", "value", "is_focal"];
}

pub fn placebo_rows(r: &PlaceboResult) -> Vec<PlaceboRow> {
    r.placebo_values
        .iter()
        .map(|dv| PlaceboRow {
            day: dv.day,
            value: dv.value,
            is_focal: dv.day == r.focal_day,
        })
        .collect()
}

/// Coverage on A alone, on A and R, and on A, R and A·R.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionFits {
    pub age_only: RegressionFit,
    pub age_race: RegressionFit,
    pub interaction: RegressionFit,
}

/// Fits the three nested coverage models on the vectors as given.
pub fn interaction_regression(coverage: &[f64], a: &[f64], r: &[f64]) -> Result<InteractionFits> {
    let n = coverage.len();
    if a.len() != n || r.len() != n {
        return Err(Error::invalid(
            "interaction regression needs equal-length vectors",
        ));
    }
    let ar: Vec<f64> = a.iter().zip(r).map(|(x, y)| x * y).collect();
    let base = Design::new(n)
        .with_intercept()
        .column(AGE_TERM, a.to_vec())?;
    let age_only = ols_fit(&base, coverage)?;
    let both = base.column(RACE_TERM, r.to_vec())?;
    let age_race = ols_fit(&both, coverage)?;
    let full = both.column(INTERACTION_TERM, ar)?;
    let interaction = ols_fit(&full, coverage)?;
    Ok(InteractionFits {
        age_only,
        age_race,
        interaction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinScheme {
    VentileByA,
    VentileByR,
    QuartileHeatmap,
    MedianSplitByALines,
}

impl BinScheme {
    pub const ALL: [BinScheme; 4] = [
        BinScheme::VentileByA,
        BinScheme::VentileByR,
        BinScheme::QuartileHeatmap,
        BinScheme::MedianSplitByALines,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BinScheme::VentileByA => "ventile-by-A",
            BinScheme::VentileByR => "ventile-by-R",
            BinScheme::QuartileHeatmap => "quartile-heatmap",
            BinScheme::MedianSplitByALines => "median-split-by-A-lines",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        BinScheme::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown bin scheme {s:?}")))
    }
}

/// `figure_bins.csv` row. For ventiles the bounds are the binned covariate's
/// range. Heatmap cell `qa * 4 + qr` carries the bounds of its A quartile.
/// Median-split bins 0-19 are the younger half and 20-39 the older half,
/// each by ventile of R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub scheme: String,
    pub bin_index: usize,
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub mean_coverage: f64,
    pub n_pois: usize,
}

impl Table for BinSummary {
    const HEADER: &'static [&'static str] = &[
        "scheme",
        "bin_index",
        "bin_lower",
        "bin_upper",
        "mean_coverage",
        "n_pois",
    ];
}

/// Equal-count bin of each element when ordered by `key` (ties broken by
/// position).
fn quantile_bins(key: &[f64], members: &[usize], n_bins: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = members.to_vec();
    order.sort_by(|&i, &j| key[i].total_cmp(&key[j]).then(i.cmp(&j)));
    let n = order.len();
    order
        .into_iter()
        .enumerate()
        .map(|(pos, i)| (i, pos * n_bins / n))
        .collect()
}

fn summarize(
    scheme: BinScheme,
    n_bins: usize,
    assign: &[(usize, usize)],
    bound_key: &[f64],
    cov: &[f64],
) -> Vec<BinSummary> {
    let mut acc = vec![(f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize); n_bins];
    for &(i, b) in assign {
        let e = &mut acc[b];
        e.0 = e.0.min(bound_key[i]);
        e.1 = e.1.max(bound_key[i]);
        e.2 += cov[i];
        e.3 += 1;
    }
    acc.into_iter()
        .enumerate()
        .map(|(b, (lo, hi, sum, n))| BinSummary {
            scheme: scheme.as_str().to_string(),
            bin_index: b,
            bin_lower: if n > 0 { lo } else { f64::NAN },
            bin_upper: if n > 0 { hi } else { f64::NAN },
            mean_coverage: if n > 0 { sum / n as f64 } else { f64::NAN },
            n_pois: n,
        })
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

pub fn bin_summaries(
    coverage: &[f64],
    a: &[f64],
    r: &[f64],
    scheme: BinScheme,
) -> Result<Vec<BinSummary>> {
    let n = coverage.len();
    if a.len() != n || r.len() != n {
        return Err(Error::invalid("bin summaries need equal-length vectors"));
    }
    let all: Vec<usize> = (0..n).collect();
    let need = |k: usize, what: &str| {
        if n < k {
            Err(Error::invalid(format!(
                "{what} needs at least {k} POIs, got {n}"
            )))
        } else {
            Ok(())
        }
    };
    match scheme {
        BinScheme::VentileByA => {
            need(20, scheme.as_str())?;
            Ok(summarize(
                scheme,
                20,
                &quantile_bins(a, &all, 20),
                a,
                coverage,
            ))
        }
        BinScheme::VentileByR => {
            need(20, scheme.as_str())?;
            Ok(summarize(
                scheme,
                20,
                &quantile_bins(r, &all, 20),
                r,
                coverage,
            ))
        }
        BinScheme::QuartileHeatmap => {
            need(4, scheme.as_str())?;
            let qa = quantile_bins(a, &all, 4);
            let mut qr = vec![0; n];
            for (i, b) in quantile_bins(r, &all, 4) {
                qr[i] = b;
            }
            let cells: Vec<(usize, usize)> =
                qa.into_iter().map(|(i, b)| (i, b * 4 + qr[i])).collect();
            Ok(summarize(scheme, 16, &cells, a, coverage))
        }
        BinScheme::MedianSplitByALines => {
            let m = median(a);
            let young: Vec<usize> = all.iter().copied().filter(|&i| a[i] <= m).collect();
            let older: Vec<usize> = all.iter().copied().filter(|&i| a[i] > m).collect();
            if young.len() < 20 || older.len() < 20 {
                return Err(Error::invalid(format!(
                    "{} needs at least 20 POIs on each side of the median",
                    scheme.as_str()
                )));
            }
            let mut cells = quantile_bins(r, &young, 20);
            cells.extend(
                quantile_bins(r, &older, 20)
                    .into_iter()
                    .map(|(i, b)| (i, b + 20)),
            );
            Ok(summarize(scheme, 40, &cells, r, coverage))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<PoiId> {
        (0..n)
            .map(|i| PoiId::new(format!("p{i:03}")).unwrap())
            .collect()
    }

    #[test]
    fn coverage_examples() {
        let p = ids(2);
        assert_eq!(
            coverage(&p, &[3.0, 7.0], &[3.0, 7.0]).unwrap().values,
            vec![1.0, 1.0]
        );
        assert_eq!(
            coverage(&p, &[2.0, 1.0], &[4.0, 4.0]).unwrap().values,
            vec![0.5, 0.25]
        );
        assert_eq!(
            coverage(&p[..1], &[-1.0], &[100.0]).unwrap().values,
            vec![-0.01]
        );
        match coverage(&p, &[1.0, 1.0], &[4.0, 0.0]).unwrap_err() {
            Error::NonPositiveDenominator { poi, .. } => assert_eq!(poi, "p001"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn coverage_times_turnout_reconstructs() {
        let p = ids(5);
        let m = [3.5, -2.0, 0.0, 11.25, 7.0];
        let v = [3.0, 17.0, 1.0, 999.0, 0.7];
        let c = coverage(&p, &m, &v).unwrap();
        for i in 0..5 {
            assert!((c.values[i] * v[i] - m[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn signal_examples() {
        let v: Vec<f64> = (1..=30).map(f64::from).collect();
        let m: Vec<f64> = v.iter().map(|x| x * x + 3.0).collect();
        assert_eq!(measurement_signal(&m, &v).unwrap().rho, 1.0);
        let p = ids(30);
        let c = CoverageVector::new(p, v.iter().map(|x| x / 30.0).collect()).unwrap();
        let d: Vec<f64> = c.values.iter().map(|x| 1.0 - x).collect();
        assert!((preliminary_disparity(&c, &d).unwrap().rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn placebo_day_selection() {
        let days: Vec<NaiveDate> = NaiveDate::from_ymd_opt(2018, 10, 29)
            .unwrap()
            .iter_days()
            .take(14)
            .filter(|d| crate::baseline::is_weekday(*d))
            .collect();
        let e = NaiveDate::from_ymd_opt(2018, 11, 6).unwrap();
        let p = placebo_days(&days, e, 1, &BTreeSet::new());
        let fmt: Vec<String> = p.iter().map(|d| d.format("%m-%d").to_string()).collect();
        assert_eq!(
            fmt,
            vec!["10-30", "10-31", "11-01", "11-02", "11-06", "11-08"]
        );
        let excl = BTreeSet::from([NaiveDate::from_ymd_opt(2018, 11, 1).unwrap()]);
        let p = placebo_days(&days, e, 1, &excl);
        assert_eq!(p.len(), 3);
    }

    // A panel where each POI's traffic is flat except the focal-day bump.
    struct Toy {
        panel: TrafficPanel,
        profiles: Vec<PoiProfile>,
        config: AuditConfig,
    }

    fn toy(n_pois: usize, bump: impl Fn(usize) -> u64) -> Toy {
        let days: Vec<NaiveDate> = NaiveDate::from_ymd_opt(2018, 10, 1)
            .unwrap()
            .iter_days()
            .take(61)
            .filter(|d| crate::baseline::is_weekday(*d))
            .collect();
        let e = NaiveDate::from_ymd_opt(2018, 11, 6).unwrap();
        let pois = ids(n_pois);
        let mut counts = Vec::new();
        for p in 0..n_pois {
            for (j, d) in days.iter().enumerate() {
                // deterministic day-to-day wobble so no day is degenerate
                let wobble = ((p * 7919 + j * 104_729) % 13) as u64;
                counts.push(20 + wobble + if *d == e { bump(p) } else { 0 });
            }
        }
        let panel = TrafficPanel::new(pois.clone(), days, counts).unwrap();
        let profiles = pois
            .iter()
            .enumerate()
            .map(|(i, p)| PoiProfile {
                poi_id: p.clone(),
                turnout: 1000 + (i as u64 * 37) % 500,
                prop_over_65: (i as f64 + 0.5) / n_pois as f64,
                prop_non_white: ((i * 17) % n_pois) as f64 / n_pois as f64,
            })
            .collect();
        let config = AuditConfig::for_panel(&panel, e, BaselineMethod::Mean(1), BTreeSet::new());
        Toy {
            panel,
            profiles,
            config,
        }
    }

    #[test]
    fn planted_focal_day_is_extreme() {
        // focal bump shrinks with age, so coverage falls in A
        let t = toy(60, |p| 200 - 3 * p as u64);
        assert_eq!(t.config.placebo_days.len(), 41);
        let r = placebo_disparate(&t.panel, &t.profiles, &t.config).unwrap();
        assert_eq!(r.n, 41);
        assert!((r.p_value - 1.0 / 41.0).abs() < 1e-15);
        let m = placebo_measurement(&t.panel, &t.profiles, &t.config).unwrap();
        assert_eq!(m.direction, TailDirection::UpperTail);
        assert!(m.p_value >= 1.0 / 41.0);

        let flipped: Vec<PoiProfile> = t
            .profiles
            .iter()
            .map(|p| PoiProfile {
                prop_over_65: 1.0 - p.prop_over_65,
                ..p.clone()
            })
            .collect();
        let r2 = placebo_disparate(&t.panel, &flipped, &t.config).unwrap();
        assert_eq!(r2.p_value, 1.0);
        let upper = PlaceboResult::from_values(
            "x",
            r.focal_day,
            r.focal_value,
            r.placebo_values.clone(),
            TailDirection::UpperTail,
            vec![],
        )
        .unwrap();
        assert_eq!(upper.p_value, 1.0);
    }

    #[test]
    fn excluding_focal_uses_remaining_days() {
        let t = toy(60, |p| 200 - 3 * p as u64);
        let cfg = AuditConfig {
            include_focal: false,
            ..t.config.clone()
        };
        let r = placebo_disparate(&t.panel, &t.profiles, &cfg).unwrap();
        assert_eq!(r.n, 40);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn rank_statistic_is_transform_invariant() {
        let t = toy(60, |p| (p as u64 * 31) % 50);
        let r = placebo_disparate(&t.panel, &t.profiles, &t.config).unwrap();
        let m = compute_marginals(&t.panel, &t.profiles, &t.config).unwrap();
        // cube every coverage value on every day: ranks unchanged
        let cubed: Vec<f64> = m
            .marginal
            .iter()
            .map(|v| {
                let c: Vec<f64> = v
                    .iter()
                    .zip(&m.turnout)
                    .map(|(x, n)| (x / n).powi(3))
                    .collect();
                spearman(&c, &m.prop_over_65).unwrap()
            })
            .collect();
        for (dv, c) in r.placebo_values.iter().zip(&cubed) {
            assert_eq!(dv.value, *c);
        }
    }

    #[test]
    fn joint_errors_on_collinear_or_constant() {
        let t = toy(60, |_| 10);
        let same: Vec<PoiProfile> = t
            .profiles
            .iter()
            .map(|p| PoiProfile {
                prop_non_white: p.prop_over_65,
                ..p.clone()
            })
            .collect();
        let err = placebo_joint(&t.panel, &same, &t.config).unwrap_err();
        assert!(err.to_string().contains("collinear"), "{err}");
        let constant: Vec<PoiProfile> = t
            .profiles
            .iter()
            .map(|p| PoiProfile {
                prop_non_white: 0.3,
                ..p.clone()
            })
            .collect();
        assert!(matches!(
            placebo_joint(&t.panel, &constant, &t.config),
            Err(Error::Collinear(_))
        ));
    }

    #[test]
    fn joint_detects_planted_age_effect() {
        let t = toy(80, |p| 300 - 3 * p as u64);
        let j = placebo_joint(&t.panel, &t.profiles, &t.config).unwrap();
        assert!((j.age.p_value - 1.0 / 41.0).abs() < 1e-15);
        assert!(j.age.focal_value < 0.0);
        assert_eq!(j.race.n, 41);
    }

    #[test]
    fn degenerate_days_are_dropped() {
        // flat traffic: every non-focal day has zero marginal traffic
        let days: Vec<NaiveDate> = NaiveDate::from_ymd_opt(2018, 11, 1)
            .unwrap()
            .iter_days()
            .take(14)
            .filter(|d| crate::baseline::is_weekday(*d))
            .collect();
        let e = NaiveDate::from_ymd_opt(2018, 11, 6).unwrap();
        let pois = ids(10);
        let counts: Vec<u64> = (0..10)
            .flat_map(|p| {
                days.iter()
                    .map(move |d| if *d == e { 10 + p as u64 } else { 5 })
            })
            .collect();
        let panel = TrafficPanel::new(pois.clone(), days, counts).unwrap();
        let profiles: Vec<PoiProfile> = pois
            .iter()
            .enumerate()
            .map(|(i, p)| PoiProfile {
                poi_id: p.clone(),
                turnout: 100 + i as u64,
                prop_over_65: i as f64 / 10.0,
                prop_non_white: 0.5,
            })
            .collect();
        let cfg = AuditConfig::for_panel(&panel, e, BaselineMethod::Mean(1), BTreeSet::new());
        let r = placebo_measurement(&panel, &profiles, &cfg).unwrap();
        assert_eq!(r.n, 1);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.dropped_days.len(), cfg.placebo_days.len() - 1);

        // a degenerate focal day is an error
        let flat =
            TrafficPanel::new(pois, panel.days().to_vec(), vec![5; panel.counts().len()]).unwrap();
        let err = placebo_measurement(&flat, &profiles, &cfg).unwrap_err();
        assert!(matches!(err, Error::DayFailed { day, .. } if day == e));
    }

    #[test]
    fn negative_focal_pois_are_excluded_on_every_day() {
        let t = toy(30, |p| if p < 3 { 0 } else { 50 });
        let mut panel_counts = t.panel.counts().to_vec();
        let e = t.panel.day_index(t.config.election_date).unwrap();
        for p in 0..3 {
            panel_counts[p * t.panel.n_days() + e] = 0;
        }
        let panel = TrafficPanel::new(
            t.panel.pois().to_vec(),
            t.panel.days().to_vec(),
            panel_counts,
        )
        .unwrap();
        let cfg = AuditConfig {
            exclude_negative_marginal: true,
            ..t.config.clone()
        };
        let m = compute_marginals(&panel, &t.profiles, &cfg).unwrap();
        assert_eq!(m.excluded_pois.len(), 3);
        assert!(m.marginal.iter().all(|v| v.len() == 27));
        let m = compute_marginals(&panel, &t.profiles, &t.config).unwrap();
        assert_eq!(m.n_pois(), 30);
    }

    #[test]
    fn config_validation() {
        let t = toy(10, |_| 0);
        let mut cfg = t.config.clone();
        cfg.placebo_days
            .push(NaiveDate::from_ymd_opt(2018, 11, 7).unwrap());
        cfg.placebo_days.sort();
        assert!(cfg.validate().is_err());
        let mut cfg = t.config.clone();
        cfg.placebo_days.retain(|d| *d != cfg.election_date);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn interaction_recovers_linear_model() {
        let n = 50;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 7.3) % 60.0 + 5.0).collect();
        let r: Vec<f64> = (0..n).map(|i| (i as f64 * 13.1) % 80.0 + 2.0).collect();
        let c: Vec<f64> = a
            .iter()
            .zip(&r)
            .map(|(x, y)| 2.5 - 0.03 * x - 0.01 * y)
            .collect();
        let f = interaction_regression(&c, &a, &r).unwrap();
        let full = &f.interaction;
        assert!((full.coef(crate::stats::INTERCEPT).unwrap() - 2.5).abs() < 1e-8);
        assert!((full.coef(AGE_TERM).unwrap() + 0.03).abs() < 1e-8);
        assert!((full.coef(RACE_TERM).unwrap() + 0.01).abs() < 1e-8);
        assert!(full.coef(INTERACTION_TERM).unwrap().abs() < 1e-8);
        assert_eq!(f.age_only.terms.len(), 2);
        assert_eq!(f.age_race.terms.len(), 3);

        let flat = interaction_regression(&vec![0.7; n], &a, &r).unwrap();
        for t in [AGE_TERM, RACE_TERM, INTERACTION_TERM] {
            assert!(flat.interaction.coef(t).unwrap().abs() < 1e-10);
        }
        assert!(interaction_regression(&c, &a, &a).is_err());
    }

    #[test]
    fn bins_examples() {
        let c: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let a: Vec<f64> = (0..20).map(|i| 1.0 - i as f64 / 20.0).collect();
        let r: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let bins = bin_summaries(&c, &a, &r, BinScheme::VentileByA).unwrap();
        assert_eq!(bins.len(), 20);
        for b in &bins {
            assert_eq!(b.n_pois, 1);
            assert_eq!(b.bin_lower, b.bin_upper);
            // bin 0 holds the smallest A, which is the last POI
            assert_eq!(b.mean_coverage, c[19 - b.bin_index]);
        }
        let flat = bin_summaries(&[0.3; 20], &a, &r, BinScheme::VentileByR).unwrap();
        assert!(flat.iter().all(|b| b.mean_coverage == 0.3));
        assert!(bin_summaries(&c[..19], &a[..19], &r[..19], BinScheme::VentileByA).is_err());

        let heat = bin_summaries(&c, &a, &r, BinScheme::QuartileHeatmap).unwrap();
        assert_eq!(heat.len(), 16);
        assert_eq!(heat.iter().map(|b| b.n_pois).sum::<usize>(), 20);
        // A and R are perfectly anti-ordered: only cells (qa, 3 - qa) filled
        for b in &heat {
            let (qa, qr) = (b.bin_index / 4, b.bin_index % 4);
            assert_eq!(b.n_pois > 0, qa + qr == 3, "{b:?}");
        }
    }

    #[test]
    fn median_split_lines() {
        let n = 60;
        let c: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let a: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let r: Vec<f64> = (0..n).map(|i| i as f64).collect();
        // median of {0, 1} x 30 is 0.5: odd POIs are older
        let bins = bin_summaries(&c, &a, &r, BinScheme::MedianSplitByALines).unwrap();
        assert_eq!(bins.len(), 40);
        assert!(bins[..20].iter().all(|b| (b.bin_lower as usize).is_multiple_of(2)));
        assert!(bins[20..].iter().all(|b| b.bin_lower as usize % 2 == 1));
    }
}
