//! The structured `audit_report.json` and the entry point that fills it.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::audit::{
    interaction_regression, measurement_signal, placebo_disparate_from, placebo_joint_from,
    placebo_measurement_from, placebo_rows, preliminary_disparity, DayMarginals, Demographic,
    PlaceboRow,
};
use crate::baseline::BaselineMethod;
use crate::error::{Error, Result};
use crate::model::{DayValue, PlaceboResult, RegressionFit, TailDirection};
use crate::policy::{coefficient_rows, CoefficientRow};
use crate::stats::CorrelationTest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Measurement,
    Disparate,
    Joint,
    Interaction,
}

impl Analysis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "measurement" => Ok(Analysis::Measurement),
            "disparate" => Ok(Analysis::Disparate),
            "joint" => Ok(Analysis::Joint),
            "interaction" => Ok(Analysis::Interaction),
            other => Err(Error::invalid(format!("unknown analysis {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Analysis::Measurement => "measurement",
            Analysis::Disparate => "disparate",
            Analysis::Joint => "joint",
            Analysis::Interaction => "interaction",
        }
    }
}

/// One placebo-tested statistic with its full distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboStatistic {
    pub statistic: String,
    pub value: f64,
    pub p_value: f64,
    pub direction: TailDirection,
    pub n: usize,
    pub dropped_days: Vec<NaiveDate>,
    pub placebo_distribution: Vec<DayValue>,
}

impl From<&PlaceboResult> for PlaceboStatistic {
    fn from(r: &PlaceboResult) -> Self {
        PlaceboStatistic {
            statistic: r.statistic_name.clone(),
            value: r.focal_value,
            p_value: r.p_value,
            direction: r.direction,
            n: r.n,
            dropped_days: r.dropped_days.clone(),
            placebo_distribution: r.placebo_values.clone(),
        }
    }
}

/// Focal-day correlation reported next to the placebo tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub statistic: String,
    #[serde(flatten)]
    pub test: CorrelationTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub coefficients: Vec<CoefficientRow>,
    pub r_squared: f64,
    pub n_obs: usize,
}

impl ModelSummary {
    fn new(model: &str, fit: &RegressionFit) -> Self {
        ModelSummary {
            model: model.to_string(),
            coefficients: coefficient_rows(fit),
            r_squared: fit.r_squared,
            n_obs: fit.n_obs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub analysis: Analysis,
    pub election_date: NaiveDate,
    pub baseline: String,
    pub n_pois: usize,
    pub excluded_pois: Vec<String>,
    pub statistics: Vec<PlaceboStatistic>,
    pub correlations: Vec<CorrelationSummary>,
    pub models: Vec<ModelSummary>,
}

/// A report plus the placebo rows behind each tested statistic, keyed by
/// statistic name.
#[derive(Debug, Clone)]
pub struct AuditOutput {
    pub report: AuditReport,
    pub placebo: Vec<(String, Vec<PlaceboRow>)>,
}

/// Runs one analysis on precomputed marginals. `demographic` only matters
/// for the disparate analysis; `Joint` there is the joint procedure.
pub fn run_audit(
    m: &DayMarginals,
    analysis: Analysis,
    demographic: Demographic,
    baseline: BaselineMethod,
    include_focal: bool,
) -> Result<AuditOutput> {
    let mut tested: Vec<PlaceboResult> = Vec::new();
    let mut correlations = Vec::new();
    let mut models = Vec::new();
    let corr = |statistic: &str, test: CorrelationTest| CorrelationSummary {
        statistic: statistic.to_string(),
        test,
    };

    let analysis = match (analysis, demographic) {
        (Analysis::Disparate, Demographic::Joint) => Analysis::Joint,
        (a, _) => a,
    };
    match analysis {
        Analysis::Measurement => {
            tested.push(placebo_measurement_from(m, include_focal)?);
            correlations.push(corr(
                "measurement-signal",
                measurement_signal(m.focal_marginal(), &m.turnout)?,
            ));
        }
        Analysis::Disparate => {
            tested.push(placebo_disparate_from(m, demographic, include_focal)?);
            let c = m.focal_coverage()?;
            correlations.push(corr(
                &format!("preliminary-{demographic}"),
                preliminary_disparity(&c, m.demographic(demographic)?)?,
            ));
        }
        Analysis::Joint => {
            let j = placebo_joint_from(m, include_focal)?;
            tested.push(j.age);
            tested.push(j.race);
            let c = m.focal_coverage()?;
            for d in [Demographic::Age, Demographic::Race] {
                correlations.push(corr(
                    &format!("preliminary-{d}"),
                    preliminary_disparity(&c, m.demographic(d)?)?,
                ));
            }
        }
        Analysis::Interaction => {
            let c = m.focal_coverage()?;
            let fits = interaction_regression(&c.values, &m.prop_over_65, &m.prop_non_white)?;
            models.push(ModelSummary::new("age", &fits.age_only));
            models.push(ModelSummary::new("age+race", &fits.age_race));
            models.push(ModelSummary::new("age*race", &fits.interaction));
        }
    }

    let placebo = tested
        .iter()
        .map(|r| (r.statistic_name.clone(), placebo_rows(r)))
        .collect();
    let report = AuditReport {
        analysis,
        election_date: m.focal_day(),
        baseline: baseline.to_string(),
        n_pois: m.n_pois(),
        excluded_pois: m
            .excluded_pois
            .iter()
            .map(|p| p.as_str().to_string())
            .collect(),
        statistics: tested.iter().map(PlaceboStatistic::from).collect(),
        correlations,
        models,
    };
    Ok(AuditOutput { report, placebo })
}
