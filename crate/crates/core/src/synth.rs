//! Synthetic worlds with known capture rates.
//!
//! Each POI gets a baseline rate λ_i, a turnout V_i and a demographic mix
//! (A_i, R_i). Non-event days draw Poisson(λ_i · jitter). On the election day
//! the panel also captures Binomial(V_i, c_i) voters, with
//! c_i = c0 · exp(βA·A_i + βR·R_i + βAR·A_i·R_i) clamped to [0, 1].

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::audit::placebo_days;
use crate::baseline::is_weekday;
use crate::error::{Error, Result};
use crate::ingest::Table;
use crate::model::{
    AdminVisitRecord, CrosswalkEntry, PoiCategory, PoiDirectory, PoiEntry, PoiId, Race,
    TrafficPanel,
};

/// Fraction of POIs allowed to hit the capture clamp before generation fails.
pub const MAX_SATURATED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub n_pois: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub election_date: NaiveDate,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub turnout_median: f64,
    pub turnout_sigma: f64,
    /// Beta shape parameters of the share over 65.
    pub age_shape: (f64, f64),
    /// Beta shape parameters of the non-white share.
    pub race_shape: (f64, f64),
    /// Gaussian-copula correlation between the two shares.
    pub age_race_correlation: f64,
    pub c0: f64,
    pub beta_age: f64,
    pub beta_race: f64,
    pub beta_interaction: f64,
    pub jitter_sigma: f64,
    pub unknown_race_rate: f64,
    pub inject_voters: bool,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let d = |m, day| NaiveDate::from_ymd_opt(2018, m, day).unwrap();
        ScenarioSpec {
            n_pois: 558,
            start: d(10, 1),
            end: d(11, 30),
            election_date: d(11, 6),
            lambda_min: 2.0,
            lambda_max: 20.0,
            turnout_median: 1000.0,
            turnout_sigma: 0.5,
            age_shape: (5.0, 14.33),
            race_shape: (1.5, 3.056),
            age_race_correlation: -0.5,
            c0: 0.02,
            beta_age: -1.5,
            beta_race: -0.5,
            beta_interaction: 0.0,
            jitter_sigma: 0.1,
            unknown_race_rate: 0.02,
            inject_voters: true,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    /// The same world parameters with uniform capture.
    pub fn null(&self) -> Self {
        ScenarioSpec {
            beta_age: 0.0,
            beta_race: 0.0,
            beta_interaction: 0.0,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScenarioSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn days(&self) -> Vec<NaiveDate> {
        self.start
            .iter_days()
            .take_while(|d| *d <= self.end)
            .filter(|d| is_weekday(*d))
            .collect()
    }

    pub fn election_index(&self) -> Option<usize> {
        self.days().iter().position(|d| *d == self.election_date)
    }

    /// Days usable for placebo inference with a mean window of `window`:
    /// every panel day with a complete window that does not borrow the
    /// election day, plus the election day itself.
    pub fn placebo_days(&self, window: usize) -> Vec<NaiveDate> {
        placebo_days(&self.days(), self.election_date, window, &BTreeSet::new())
    }

    pub fn capture_rate(&self, a: f64, r: f64) -> f64 {
        self.c0 * (self.beta_age * a + self.beta_race * r + self.beta_interaction * a * r).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pois == 0 {
            return Err(Error::invalid("n_pois must be positive"));
        }
        if !(self.lambda_min > 0.0 && self.lambda_max >= self.lambda_min) {
            return Err(Error::invalid("need 0 < lambda_min <= lambda_max"));
        }
        if !(self.turnout_median >= 1.0 && self.turnout_sigma >= 0.0) {
            return Err(Error::invalid("turnout median must be >= 1 and sigma >= 0"));
        }
        if !(self.age_race_correlation > -1.0 && self.age_race_correlation < 1.0) {
            return Err(Error::invalid("age-race correlation must lie in (-1, 1)"));
        }
        if !(self.c0 >= 0.0 && self.jitter_sigma >= 0.0) {
            return Err(Error::invalid("c0 and jitter sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.unknown_race_rate) {
            return Err(Error::invalid("unknown race rate must lie in [0, 1]"));
        }
        if self.election_index().is_none() {
            return Err(Error::invalid(format!(
                "election date {} is not a weekday in [{}, {}]",
                self.election_date, self.start, self.end
            )));
        }
        Beta::new(self.age_shape.0, self.age_shape.1)
            .map_err(|e| Error::invalid(format!("age shape: {e}")))?;
        Beta::new(self.race_shape.0, self.race_shape.1)
            .map_err(|e| Error::invalid(format!("race shape: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiTruth {
    pub poi_id: PoiId,
    pub capture_rate: f64,
    pub lambda: f64,
    pub turnout: u64,
    pub prop_over_65: f64,
    pub prop_non_white: f64,
}

/// `ground_truth.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub poi_id: String,
    pub capture_rate: f64,
    pub lambda: f64,
}

impl Table for GroundTruthRow {
    const HEADER: &'static [&'static str] = &["poi_id", "capture_rate", "lambda"];
}

impl From<&PoiTruth> for GroundTruthRow {
    fn from(t: &PoiTruth) -> Self {
        GroundTruthRow {
            poi_id: t.poi_id.to_string(),
            capture_rate: t.capture_rate,
            lambda: t.lambda,
        }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub spec: ScenarioSpec,
    pub panel: TrafficPanel,
    pub records: Vec<AdminVisitRecord>,
    pub crosswalk: Vec<CrosswalkEntry>,
    pub directory: PoiDirectory,
    pub truth: Vec<PoiTruth>,
}

struct PoiDraw {
    truth: PoiTruth,
    counts: Vec<u64>,
    records: Vec<AdminVisitRecord>,
    saturated: bool,
}

const CATEGORIES: [PoiCategory; 4] = [
    PoiCategory::FireStation,
    PoiCategory::Church,
    PoiCategory::CommunityCenter,
    PoiCategory::Other,
];

const STREETS: [&str; 8] = [
    "Main", "Oak", "Elm", "Pine", "Maple", "Cedar", "Church", "Mill",
];

const TOWNS: [&str; 24] = [
    "Ashby", "Bexley", "Carrow", "Dunmore", "Elston", "Fairlea", "Glenby", "Harlow", "Ivyton",
    "Jessup", "Kirby", "Lanston", "Milford", "Norwood", "Oakham", "Pellston", "Quarry", "Redcliff",
    "Stanton", "Thorne", "Upton", "Vale", "Westby", "Yardley",
];

fn poi_id(i: usize) -> PoiId {
    PoiId::new(format!("poi-{i:04}")).unwrap()
}

/// `prefix` followed by `k` zero-padded to five digits; `format!` is a
/// measurable share of generation time at this volume.
fn person_id(prefix: &str, k: u64) -> String {
    let mut digits = [b'0'; 20];
    let mut n = k;
    let mut len = 0;
    while n > 0 || len < 5 {
        digits[19 - len] = b'0' + (n % 10) as u8;
        n /= 10;
        len += 1;
    }
    let mut id = String::with_capacity(prefix.len() + len);
    id.push_str(prefix);
    id.extend(digits[20 - len..].iter().map(|&b| b as char));
    id
}

fn precinct_id(i: usize) -> String {
    format!("PR-{i:04}")
}

fn draw_race<R: Rng>(rng: &mut R, p_non_white: f64, unknown_rate: f64) -> Race {
    if rng.random_bool(unknown_rate) {
        return Race::Unknown;
    }
    if !rng.random_bool(p_non_white) {
        return Race::White;
    }
    match rng.random_range(0..100) {
        0..=66 => Race::Black,
        67..=79 => Race::Hispanic,
        _ => Race::OtherNonwhite,
    }
}

fn draw_poi(spec: &ScenarioSpec, i: usize, days: &[NaiveDate], election: usize) -> PoiDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);

    let (lo, hi) = (spec.lambda_min.ln(), spec.lambda_max.ln());
    let lambda = (lo + (hi - lo) * rng.random::<f64>()).exp();
    let turnout_dist = LogNormal::new(spec.turnout_median.ln(), spec.turnout_sigma).unwrap();
    let turnout = (turnout_dist.sample(&mut rng).round() as u64).max(1);

    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let rho = spec.age_race_correlation;
    let z2 = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
    let phi = Normal::standard();
    let a = Beta::new(spec.age_shape.0, spec.age_shape.1)
        .unwrap()
        .inverse_cdf(phi.cdf(z1))
        .clamp(0.0, 1.0);
    let r = Beta::new(spec.race_shape.0, spec.race_shape.1)
        .unwrap()
        .inverse_cdf(phi.cdf(z2))
        .clamp(0.0, 1.0);

    let raw = spec.capture_rate(a, r);
    let capture = raw.clamp(0.0, 1.0);

    let sigma = spec.jitter_sigma;
    let jitter = LogNormal::new(-sigma * sigma / 2.0, sigma).unwrap();
    let counts = (0..days.len())
        .map(|d| {
            let rate = lambda
                * if sigma > 0.0 {
                    jitter.sample(&mut rng)
                } else {
                    1.0
                };
            let mut c = Poisson::new(rate).unwrap().sample(&mut rng) as u64;
            if d == election && spec.inject_voters && capture > 0.0 {
                c += Binomial::new(turnout, capture).unwrap().sample(&mut rng);
            }
            c
        })
        .collect();

    let pr = precinct_id(i);
    let prefix = format!("v{i:04}-");
    let records = (0..turnout)
        .map(|k| {
            let age = if rng.random_bool(a) {
                rng.random_range(65..=95)
            } else {
                rng.random_range(18..=64)
            };
            AdminVisitRecord {
                person_id: person_id(&prefix, k),
                precinct_id: pr.clone(),
                date: spec.election_date,
                age,
                race: draw_race(&mut rng, r, spec.unknown_race_rate),
            }
        })
        .collect();

    PoiDraw {
        truth: PoiTruth {
            poi_id: poi_id(i),
            capture_rate: capture,
            lambda,
            turnout,
            prop_over_65: a,
            prop_non_white: r,
        },
        counts,
        records,
        saturated: raw > 1.0,
    }
}

fn directory_entry(i: usize) -> PoiEntry {
    PoiEntry {
        poi_id: poi_id(i),
        name: format!("Polling Hall {i:04}"),
        street_address: format!("{} {} St", 100 + i, STREETS[i % STREETS.len()]),
        city: TOWNS[i % TOWNS.len()].to_string(),
        state: "NC".to_string(),
        zip: format!("27{:03}", 100 + i % TOWNS.len()),
        category: CATEGORIES[i % CATEGORIES.len()],
    }
}

fn crosswalk_entry(i: usize) -> CrosswalkEntry {
    CrosswalkEntry {
        precinct_id: precinct_id(i),
        location_name: format!("POLLING HALL {i:04}"),
        street_address: format!("{} {} Street", 100 + i, STREETS[i % STREETS.len()]),
        city: TOWNS[i % TOWNS.len()].to_string(),
        state: "NC".to_string(),
        zip: format!("27{:03}", 100 + i % TOWNS.len()),
    }
}

/// Generates one world. POIs are drawn in parallel from independent
/// ChaCha streams, so the output depends only on the spec.
pub fn generate(spec: &ScenarioSpec) -> Result<World> {
    spec.validate()?;
    let days = spec.days();
    let election = spec.election_index().expect("validated");
    let draws: Vec<PoiDraw> = (0..spec.n_pois)
        .into_par_iter()
        .map(|i| draw_poi(spec, i, &days, election))
        .collect();

    let saturated = draws.iter().filter(|d| d.saturated).count() as f64 / spec.n_pois as f64;
    if saturated > MAX_SATURATED_FRACTION {
        return Err(Error::CaptureSaturated {
            fraction: saturated,
        });
    }

    let mut counts = Vec::with_capacity(spec.n_pois * days.len());
    let mut records = Vec::with_capacity(draws.iter().map(|d| d.records.len()).sum());
    let mut truth = Vec::with_capacity(spec.n_pois);
    for d in draws {
        counts.extend(d.counts);
        records.extend(d.records);
        truth.push(d.truth);
    }
    let pois = truth.iter().map(|t| t.poi_id.clone()).collect();
    Ok(World {
        spec: spec.clone(),
        panel: TrafficPanel::new(pois, days, counts)?,
        records,
        crosswalk: (0..spec.n_pois).map(crosswalk_entry).collect(),
        directory: PoiDirectory::new((0..spec.n_pois).map(directory_entry).collect())?,
        truth,
    })
}

/// [`generate`] with uniform capture and no captured voters added on the
/// election day, so every panel day is drawn from the same law.
pub fn null_scenario(spec: &ScenarioSpec) -> Result<World> {
    generate(&ScenarioSpec {
        inject_voters: false,
        ..spec.null()
    })
}

/// Panels for comparing imputation windows. Every weekday other than a
/// Tuesday is Poisson(λ_i); a Tuesday is the mean of the `rule_window`
/// weekdays on each side, plus Poisson noise when `noise` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationSpec {
    pub n_pois: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rule_window: usize,
    pub noise: bool,
    pub seed: u64,
}

impl Default for ImputationSpec {
    fn default() -> Self {
        ImputationSpec {
            n_pois: 200,
            start: NaiveDate::from_ymd_opt(2018, 10, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2018, 11, 30).unwrap(),
            lambda_min: 5.0,
            lambda_max: 60.0,
            rule_window: 2,
            noise: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImputationPanel {
    pub panel: TrafficPanel,
    /// Tuesdays generated from the rule.
    pub rule_days: Vec<NaiveDate>,
}

pub fn generate_imputation_panel(spec: &ImputationSpec) -> Result<ImputationPanel> {
    if !(1..=2).contains(&spec.rule_window) {
        return Err(Error::invalid("rule window must be 1 or 2"));
    }
    if !(spec.lambda_min > 0.0 && spec.lambda_max >= spec.lambda_min) || spec.n_pois == 0 {
        return Err(Error::invalid(
            "need n_pois > 0 and 0 < lambda_min <= lambda_max",
        ));
    }
    let days: Vec<NaiveDate> = spec
        .start
        .iter_days()
        .take_while(|d| *d <= spec.end)
        .filter(|d| is_weekday(*d))
        .collect();
    let k = spec.rule_window;
    // a Tuesday's window of 2 reaches back to Friday and forward to Thursday,
    // so rule days never feed each other
    let rule: Vec<usize> = (0..days.len())
        .filter(|&i| days[i].weekday() == Weekday::Tue && i >= k && i + k < days.len())
        .collect();
    let rows: Vec<Vec<u64>> = (0..spec.n_pois)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(p as u64);
            let (lo, hi) = (spec.lambda_min.ln(), spec.lambda_max.ln());
            let lambda = (lo + (hi - lo) * rng.random::<f64>()).exp();
            let pois = Poisson::new(lambda).unwrap();
            let mut row: Vec<u64> = (0..days.len())
                .map(|_| pois.sample(&mut rng) as u64)
                .collect();
            for &t in &rule {
                let last = t + k;
                if !spec.noise {
                    let s: u64 = (t - k..=t + k).filter(|&i| i != t).map(|i| row[i]).sum();
                    row[last] += (2 * k as u64 - s % (2 * k as u64)) % (2 * k as u64);
                }
                let s: u64 = (t - k..=t + k).filter(|&i| i != t).map(|i| row[i]).sum();
                let mean = s as f64 / (2 * k) as f64;
                row[t] = if spec.noise && mean > 0.0 {
                    Poisson::new(mean).unwrap().sample(&mut rng) as u64
                } else {
                    mean.round() as u64
                };
            }
            row
        })
        .collect();
    let pois = (0..spec.n_pois).map(poi_id).collect();
    let rule_days = rule.iter().map(|&i| days[i]).collect();
    Ok(ImputationPanel {
        panel: TrafficPanel::new(pois, days, rows.concat())?,
        rule_days,
    })
}
