//! Domain types shared across the pipeline.
//!
//! Everything here is immutable once constructed. Constructors validate the
//! invariants that downstream code relies on, so a `TrafficPanel` or a
//! `CoverageVector` in hand is always dense and finite.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoiId(String);

impl PoiId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::invalid("empty POI id"));
        }
        Ok(PoiId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PoiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoiCategory {
    School,
    FireStation,
    Church,
    CommunityCenter,
    Other,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 5] = [
        PoiCategory::School,
        PoiCategory::FireStation,
        PoiCategory::Church,
        PoiCategory::CommunityCenter,
        PoiCategory::Other,
    ];

    /// Unrecognised tokens fall into `Other`.
    pub fn parse(token: &str) -> Self {
        match token.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "school" => PoiCategory::School,
            "fire-station" => PoiCategory::FireStation,
            "church" => PoiCategory::Church,
            "community-center" => PoiCategory::CommunityCenter,
            _ => PoiCategory::Other,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PoiCategory::School => "school",
            PoiCategory::FireStation => "fire-station",
            PoiCategory::Church => "church",
            PoiCategory::CommunityCenter => "community-center",
            PoiCategory::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiEntry {
    pub poi_id: PoiId,
    pub name: String,
    pub street_address: String,
    pub city: String,
    pub state: String,
    pub zip: String,
    pub category: PoiCategory,
}

#[derive(Debug, Clone, Default)]
pub struct PoiDirectory {
    entries: Vec<PoiEntry>,
    index: HashMap<PoiId, usize>,
}

impl PoiDirectory {
    pub fn new(entries: Vec<PoiEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.poi_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate poi_id {}", e.poi_id)));
            }
        }
        Ok(PoiDirectory { entries, index })
    }

    pub fn entries(&self) -> &[PoiEntry] {
        &self.entries
    }

    pub fn get(&self, id: &PoiId) -> Option<&PoiEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One row of the precinct → polling-location crosswalk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrosswalkEntry {
    pub precinct_id: String,
    pub location_name: String,
    pub street_address: String,
    pub city: String,
    pub state: String,
    pub zip: String,
}

/// Precinct id (as spelled in the administrative records) → POI.
pub type ResolvedCrosswalk = BTreeMap<String, PoiId>;

/// Dense per-POI, per-day visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficPanel {
    pois: Vec<PoiId>,
    days: Vec<NaiveDate>,
    // row-major, one row per POI
    counts: Vec<u64>,
    poi_index: HashMap<PoiId, usize>,
}

impl TrafficPanel {
    pub fn new(pois: Vec<PoiId>, days: Vec<NaiveDate>, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != pois.len() * days.len() {
            return Err(Error::invalid(format!(
                "counts has {} cells, expected {} x {}",
                counts.len(),
                pois.len(),
                days.len()
            )));
        }
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("panel days must be strictly increasing"));
        }
        let mut poi_index = HashMap::with_capacity(pois.len());
        for (i, p) in pois.iter().enumerate() {
            if poi_index.insert(p.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate POI {p} in panel")));
            }
        }
        Ok(TrafficPanel {
            pois,
            days,
            counts,
            poi_index,
        })
    }

    pub fn pois(&self) -> &[PoiId] {
        &self.pois
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn n_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn day_index(&self, day: NaiveDate) -> Option<usize> {
        self.days.binary_search(&day).ok()
    }

    pub fn poi_index(&self, poi: &PoiId) -> Option<usize> {
        self.poi_index.get(poi).copied()
    }

    pub fn count(&self, poi: usize, day: usize) -> u64 {
        self.counts[poi * self.days.len() + day]
    }

    /// The S^j column for one day, in panel POI order.
    pub fn day_counts(&self, day: usize) -> Vec<f64> {
        (0..self.pois.len())
            .map(|p| self.count(p, day) as f64)
            .collect()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Race {
    White,
    Black,
    Hispanic,
    OtherNonwhite,
    Unknown,
}

impl Race {
    /// Maps a raw race token onto the closed set. The flag is false when the
    /// token was not recognised and defaulted to `Unknown`.
    pub fn parse_token(token: &str) -> (Race, bool) {
        let t = token.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        let race = match t.as_str() {
            "white" | "caucasian" | "w" => Race::White,
            "black" | "african-american" | "b" => Race::Black,
            "hispanic" | "latino" | "latinx" | "h" => Race::Hispanic,
            "other-nonwhite" | "asian" | "native" | "american-indian" | "pacific-islander"
            | "multiracial" | "two-or-more" | "other" => Race::OtherNonwhite,
            "unknown" | "" | "u" => Race::Unknown,
            _ => return (Race::Unknown, false),
        };
        (race, true)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Hispanic => "hispanic",
            Race::OtherNonwhite => "other-nonwhite",
            Race::Unknown => "unknown",
        }
    }

    pub fn is_non_white(&self) -> bool {
        matches!(self, Race::Black | Race::Hispanic | Race::OtherNonwhite)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdminVisitRecord {
    pub person_id: String,
    pub precinct_id: String,
    pub date: NaiveDate,
    pub age: u32,
    pub race: Race,
}

pub const MIN_AGE: u32 = 17;
pub const MAX_AGE: u32 = 120;

/// Per-POI ground truth: turnout V, proportion aged 65+ A, proportion
/// non-white R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiProfile {
    pub poi_id: PoiId,
    pub turnout: u64,
    pub prop_over_65: f64,
    pub prop_non_white: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileConfig {
    /// Records with age at or above this count as "over 65".
    pub older_age: u32,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { older_age: 65 }
    }
}

#[derive(Debug, Clone)]
pub struct ProfileSummary {
    /// Sorted by POI id.
    pub profiles: Vec<PoiProfile>,
    pub unmatched: usize,
}

/// Aggregates individual visit records into per-POI profiles.
///
/// Records whose precinct is absent from the crosswalk are counted in
/// `unmatched`. Race `Unknown` is left out of both numerator and denominator
/// of the non-white share; a POI whose records are all unknown gets share 0.
pub fn summarize_profiles<'a>(
    records: &[AdminVisitRecord],
    crosswalk: &'a ResolvedCrosswalk,
    focal_day: NaiveDate,
    config: ProfileConfig,
) -> Result<ProfileSummary> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }

    #[derive(Default)]
    struct Tally {
        turnout: u64,
        older: u64,
        non_white: u64,
        unknown: u64,
    }

    // records usually arrive grouped by precinct, so remember the last hit
    let mut tallies: BTreeMap<&PoiId, Tally> = BTreeMap::new();
    let mut unmatched = 0usize;
    let mut last: Option<(&str, Option<&PoiId>)> = None;
    let mut run = Tally::default();
    let flush =
        |tallies: &mut BTreeMap<&'a PoiId, Tally>, poi: Option<&'a PoiId>, run: &mut Tally| {
            if let Some(poi) = poi {
                let t = tallies.entry(poi).or_default();
                t.turnout += run.turnout;
                t.older += run.older;
                t.non_white += run.non_white;
                t.unknown += run.unknown;
            }
            *run = Tally::default();
        };
    for r in records {
        if r.date != focal_day {
            return Err(Error::invalid(format!(
                "record {} dated {} but focal day is {focal_day}",
                r.person_id, r.date
            )));
        }
        let poi = match last {
            Some((pr, poi)) if pr == r.precinct_id => poi,
            _ => {
                if let Some((_, prev)) = last {
                    flush(&mut tallies, prev, &mut run);
                }
                let poi = crosswalk.get(&r.precinct_id);
                last = Some((&r.precinct_id, poi));
                poi
            }
        };
        if poi.is_none() {
            unmatched += 1;
            continue;
        }
        run.turnout += 1;
        if r.age >= config.older_age {
            run.older += 1;
        }
        match r.race {
            Race::Unknown => run.unknown += 1,
            race if race.is_non_white() => run.non_white += 1,
            _ => {}
        }
    }
    if let Some((_, prev)) = last {
        flush(&mut tallies, prev, &mut run);
    }
    if tallies.is_empty() {
        return Err(Error::AllUnmatched(records.len()));
    }

    let profiles = tallies
        .into_iter()
        .map(|(poi, t)| {
            let known = t.turnout - t.unknown;
            let prop_non_white = if known == 0 {
                log::warn!("POI {poi}: race unknown for all {} records", t.turnout);
                0.0
            } else {
                t.non_white as f64 / known as f64
            };
            PoiProfile {
                poi_id: poi.clone(),
                turnout: t.turnout,
                prop_over_65: t.older as f64 / t.turnout as f64,
                prop_non_white,
            }
        })
        .collect();
    Ok(ProfileSummary {
        profiles,
        unmatched,
    })
}

/// C(S, T) for an ordered set of POIs. Values may be negative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageVector {
    pub pois: Vec<PoiId>,
    pub values: Vec<f64>,
}

impl CoverageVector {
    pub fn new(pois: Vec<PoiId>, values: Vec<f64>) -> Result<Self> {
        if pois.len() != values.len() {
            return Err(Error::invalid("coverage length does not match POI list"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coverage for POI {}",
                pois[i]
            )));
        }
        Ok(CoverageVector { pois, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailDirection {
    /// Count days with value <= focal.
    LowerTail,
    /// Count days with value >= focal.
    UpperTail,
}

impl TailDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            TailDirection::LowerTail => "lower-tail",
            TailDirection::UpperTail => "upper-tail",
        }
    }

    pub fn flipped(&self) -> Self {
        match self {
            TailDirection::LowerTail => TailDirection::UpperTail,
            TailDirection::UpperTail => TailDirection::LowerTail,
        }
    }

    pub fn counts(&self, value: f64, focal: f64) -> bool {
        match self {
            TailDirection::LowerTail => value <= focal,
            TailDirection::UpperTail => value >= focal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayValue {
    pub day: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboResult {
    pub focal_day: NaiveDate,
    pub statistic_name: String,
    pub focal_value: f64,
    /// Every evaluated day in calendar order, the focal day included when the
    /// placebo set contains it.
    pub placebo_values: Vec<DayValue>,
    pub p_value: f64,
    pub direction: TailDirection,
    pub n: usize,
    /// Days removed because their statistic was undefined.
    pub dropped_days: Vec<NaiveDate>,
}

impl PlaceboResult {
    /// Builds the result and computes the empirical p-value. When the focal
    /// day is part of `values` the denominator is the full set size, so the
    /// smallest attainable p is 1/n.
    pub fn from_values(
        statistic_name: impl Into<String>,
        focal_day: NaiveDate,
        focal_value: f64,
        values: Vec<DayValue>,
        direction: TailDirection,
        dropped_days: Vec<NaiveDate>,
    ) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::invalid("empty placebo set"));
        }
        let hits = values
            .iter()
            .filter(|dv| direction.counts(dv.value, focal_value))
            .count();
        Ok(PlaceboResult {
            focal_day,
            statistic_name: statistic_name.into(),
            focal_value,
            placebo_values: values,
            p_value: hits as f64 / n as f64,
            direction,
            n,
            dropped_days,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Two-sided t-test p-values against zero.
    pub p_values: Vec<f64>,
    pub residual_std_error: f64,
    pub r_squared: f64,
    pub n_obs: usize,
    pub dof: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl RegressionFit {
    fn position(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    pub fn coef(&self, term: &str) -> Option<f64> {
        self.position(term).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, term: &str) -> Option<f64> {
        self.position(term).map(|i| self.std_errors[i])
    }

    pub fn p_value(&self, term: &str) -> Option<f64> {
        self.position(term).map(|i| self.p_values[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 11, 6).unwrap()
    }

    fn rec(id: &str, precinct: &str, age: u32, race: Race) -> AdminVisitRecord {
        AdminVisitRecord {
            person_id: id.into(),
            precinct_id: precinct.into(),
            date: day(),
            age,
            race,
        }
    }

    fn xwalk() -> ResolvedCrosswalk {
        let mut m = ResolvedCrosswalk::new();
        m.insert("PR-1".into(), PoiId::new("P").unwrap());
        m.insert("PR-2".into(), PoiId::new("Q").unwrap());
        m
    }

    #[test]
    fn three_records_one_poi() {
        let recs = vec![
            rec("a", "PR-1", 70, Race::White),
            rec("b", "PR-1", 40, Race::Black),
            rec("c", "PR-1", 66, Race::White),
        ];
        let s = summarize_profiles(&recs, &xwalk(), day(), ProfileConfig::default()).unwrap();
        assert_eq!(s.profiles.len(), 1);
        let p = &s.profiles[0];
        assert_eq!(p.turnout, 3);
        assert_eq!(p.prop_over_65, 2.0 / 3.0);
        assert_eq!(p.prop_non_white, 1.0 / 3.0);
    }

    #[test]
    fn age_64_is_not_older() {
        let recs = vec![rec("a", "PR-1", 64, Race::White)];
        let s = summarize_profiles(&recs, &xwalk(), day(), ProfileConfig::default()).unwrap();
        assert_eq!(s.profiles[0].prop_over_65, 0.0);
        let recs = vec![rec("a", "PR-1", 65, Race::White)];
        let s = summarize_profiles(&recs, &xwalk(), day(), ProfileConfig::default()).unwrap();
        assert_eq!(s.profiles[0].prop_over_65, 1.0);
    }

    #[test]
    fn unknown_race_leaves_both_sides() {
        let recs = vec![
            rec("a", "PR-1", 30, Race::Unknown),
            rec("b", "PR-1", 30, Race::Black),
        ];
        let s = summarize_profiles(&recs, &xwalk(), day(), ProfileConfig::default()).unwrap();
        assert_eq!(s.profiles[0].prop_non_white, 1.0);
        assert_eq!(s.profiles[0].turnout, 2);
    }

    #[test]
    fn unmatched_and_errors() {
        let recs = vec![
            rec("a", "PR-1", 30, Race::White),
            rec("b", "PR-9", 30, Race::White),
        ];
        let s = summarize_profiles(&recs, &xwalk(), day(), ProfileConfig::default()).unwrap();
        assert_eq!(s.unmatched, 1);
        assert!(matches!(
            summarize_profiles(&[], &xwalk(), day(), ProfileConfig::default()),
            Err(Error::NoRecords)
        ));
        let recs = vec![rec("b", "PR-9", 30, Race::White)];
        assert!(matches!(
            summarize_profiles(&recs, &xwalk(), day(), ProfileConfig::default()),
            Err(Error::AllUnmatched(1))
        ));
    }

    #[test]
    fn panel_rejects_unsorted_days() {
        let d1 = NaiveDate::from_ymd_opt(2018, 11, 5).unwrap();
        let p = vec![PoiId::new("P").unwrap()];
        assert!(TrafficPanel::new(p.clone(), vec![day(), d1], vec![1, 2]).is_err());
        assert!(TrafficPanel::new(p, vec![d1, day()], vec![1]).is_err());
    }

    #[test]
    fn placebo_p_value_includes_focal() {
        let d = |k| NaiveDate::from_ymd_opt(2018, 10, k).unwrap();
        let values: Vec<DayValue> = (1..=4)
            .map(|k| DayValue {
                day: d(k),
                value: k as f64,
            })
            .collect();
        let r = PlaceboResult::from_values(
            "x",
            d(1),
            1.0,
            values.clone(),
            TailDirection::LowerTail,
            vec![],
        )
        .unwrap();
        assert_eq!(r.p_value, 0.25);
        let r =
            PlaceboResult::from_values("x", d(1), 1.0, values, TailDirection::UpperTail, vec![])
                .unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_records() -> impl Strategy<Value = Vec<AdminVisitRecord>> {
            let race = prop_oneof![
                Just(Race::White),
                Just(Race::Black),
                Just(Race::Hispanic),
                Just(Race::OtherNonwhite),
                Just(Race::Unknown)
            ];
            prop::collection::vec((0usize..3, 17u32..=120, race), 1..60).prop_map(|rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (p, age, race))| AdminVisitRecord {
                        person_id: format!("v{i}"),
                        precinct_id: format!("PR-{p}"),
                        date: NaiveDate::from_ymd_opt(2018, 11, 6).unwrap(),
                        age,
                        race,
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn conservation_and_permutation(mut recs in arb_records(), seed in any::<u64>()) {
                let xw = xwalk();
                let focal = NaiveDate::from_ymd_opt(2018, 11, 6).unwrap();
                let Ok(a) = summarize_profiles(&recs, &xw, focal, ProfileConfig::default()) else {
                    return Ok(());
                };
                let total: u64 = a.profiles.iter().map(|p| p.turnout).sum();
                prop_assert_eq!(total as usize + a.unmatched, recs.len());
                for p in &a.profiles {
                    prop_assert!((0.0..=1.0).contains(&p.prop_over_65));
                    prop_assert!((0.0..=1.0).contains(&p.prop_non_white));
                }
                // deterministic shuffle
                let n = recs.len();
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    recs.swap(i, (s >> 33) as usize % (i + 1));
                }
                let b = summarize_profiles(&recs, &xw, focal, ProfileConfig::default()).unwrap();
                prop_assert_eq!(a.profiles, b.profiles);
                prop_assert_eq!(a.unmatched, b.unmatched);
            }
        }
    }
}
