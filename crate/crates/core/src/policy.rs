//! Policy distortion: ranking POIs by mobility traffic instead of turnout,
//! and proportional allocation across the 2x2 age-race grid.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::audit::{AGE_TERM, RACE_TERM};
use crate::error::{Error, Result};
use crate::ingest::Table;
use crate::model::RegressionFit;
use crate::stats::{bootstrap_replicates, ols_fit, rank, rank_descending, std_dev, Design};

pub const MOBILITY_RANK_TERM: &str = "mobility_rank";
pub const DEFAULT_RESAMPLES: usize = 1000;
/// Normal critical value for a two-sided 5% test.
pub const Z_CRIT: f64 = 1.96;
/// Share differences at or below this are rounding noise.
const SHARE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankOrder {
    /// Rank 1 is the largest value.
    Descending,
    /// Rank 1 is the smallest value.
    Ascending,
}

impl RankOrder {
    fn ranks(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            RankOrder::Descending => rank_descending(x)?.values,
            RankOrder::Ascending => rank(x)?.values,
        })
    }
}

/// OLS of rank(V) on rank(S - Z), A and R (shares in [0, 1], entered in
/// percentage points) with an intercept.
pub fn rank_regression(
    turnout: &[f64],
    marginal: &[f64],
    a: &[f64],
    r: &[f64],
    order: RankOrder,
) -> Result<RegressionFit> {
    let n = turnout.len();
    if marginal.len() != n || a.len() != n || r.len() != n {
        return Err(Error::invalid("rank regression needs equal-length vectors"));
    }
    if n < 10 {
        return Err(Error::invalid(format!(
            "rank regression needs at least 10 POIs, got {n}"
        )));
    }
    let design = Design::new(n)
        .with_intercept()
        .column(MOBILITY_RANK_TERM, order.ranks(marginal)?)?
        .column(AGE_TERM, a.iter().map(|x| 100.0 * x).collect())?
        .column(RACE_TERM, r.iter().map(|x| 100.0 * x).collect())?;
    ols_fit(&design, &order.ranks(turnout)?)
}

/// `rank_regression.csv` row; also used for any coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub p_value: f64,
}

impl Table for CoefficientRow {
    const HEADER: &'static [&'static str] = &["term", "coefficient", "std_error", "p_value"];
}

pub fn coefficient_rows(fit: &RegressionFit) -> Vec<CoefficientRow> {
    (0..fit.terms.len())
        .map(|i| CoefficientRow {
            term: fit.terms[i].clone(),
            coefficient: fit.coefficients[i],
            std_error: fit.std_errors[i],
            p_value: fit.p_values[i],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgeRaceGroup {
    YoungWhite,
    YoungNonwhite,
    OlderWhite,
    OlderNonwhite,
}

impl AgeRaceGroup {
    pub const ALL: [AgeRaceGroup; 4] = [
        AgeRaceGroup::YoungWhite,
        AgeRaceGroup::YoungNonwhite,
        AgeRaceGroup::OlderWhite,
        AgeRaceGroup::OlderNonwhite,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgeRaceGroup::YoungWhite => "young-white",
            AgeRaceGroup::YoungNonwhite => "young-nonwhite",
            AgeRaceGroup::OlderWhite => "older-white",
            AgeRaceGroup::OlderNonwhite => "older-nonwhite",
        }
    }

    fn of(older: bool, nonwhite: bool) -> Self {
        match (older, nonwhite) {
            (false, false) => AgeRaceGroup::YoungWhite,
            (false, true) => AgeRaceGroup::YoungNonwhite,
            (true, false) => AgeRaceGroup::OlderWhite,
            (true, true) => AgeRaceGroup::OlderNonwhite,
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for AgeRaceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where to cut A and R. A POI goes to the older (non-white) side only when
/// its share is strictly above the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Median,
    Custom { age: f64, race: f64 },
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

/// Group of every POI under `split`.
pub fn assign_groups(a: &[f64], r: &[f64], split: Split) -> Result<Vec<AgeRaceGroup>> {
    if a.len() != r.len() || a.is_empty() {
        return Err(Error::invalid(
            "group assignment needs equal-length non-empty vectors",
        ));
    }
    let (ta, tr) = match split {
        Split::Median => (median(a), median(r)),
        Split::Custom { age, race } => (age, race),
    };
    Ok(a.iter()
        .zip(r)
        .map(|(&x, &y)| AgeRaceGroup::of(x > ta, y > tr))
        .collect())
}

fn shares_of(
    weights: &[f64],
    groups: &[AgeRaceGroup],
    idx: impl Iterator<Item = usize>,
) -> Result<[f64; 4]> {
    let mut sums = [0.0; 4];
    for i in idx {
        sums[groups[i].index()] += weights[i];
    }
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("all allocation weights are zero"));
    }
    Ok(sums.map(|s| s / total))
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!(
            "allocation weight {w} is negative or not finite"
        )));
    }
    Ok(())
}

/// Share of total weight falling in each group, indexed like
/// [`AgeRaceGroup::ALL`].
pub fn allocate(weights: &[f64], a: &[f64], r: &[f64], split: Split) -> Result<[f64; 4]> {
    if weights.len() != a.len() {
        return Err(Error::invalid("weights and profiles differ in length"));
    }
    check_weights(weights)?;
    let groups = assign_groups(a, r, split)?;
    shares_of(weights, &groups, 0..weights.len())
}

/// `allocation.csv` row. `percent_difference` is a fraction:
/// (observed - optimal) / optimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub group: String,
    pub observed_share: f64,
    pub optimal_share: f64,
    pub observed_se: f64,
    pub optimal_se: f64,
    pub percent_difference: f64,
    pub significant: bool,
}

impl Table for AllocationRow {
    const HEADER: &'static [&'static str] = &[
        "group",
        "observed_share",
        "optimal_share",
        "observed_se",
        "optimal_se",
        "percent_difference",
        "significant",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationTable {
    pub rows: Vec<AllocationRow>,
    /// Bootstrap SE of observed - optimal, per group.
    pub difference_se: Vec<f64>,
    /// Bootstrap SE of the percent difference, per group.
    pub percent_difference_se: Vec<f64>,
    pub resamples: usize,
    pub seed: u64,
}

impl AllocationTable {
    pub fn row(&self, group: AgeRaceGroup) -> &AllocationRow {
        &self.rows[group.index()]
    }

    pub fn percent_difference_se(&self, group: AgeRaceGroup) -> f64 {
        self.percent_difference_se[group.index()]
    }
}

fn pct_diff(obs: f64, opt: f64) -> f64 {
    if opt > 0.0 {
        (obs - opt) / opt
    } else {
        f64::NAN
    }
}

fn finite_sd(v: impl Iterator<Item = f64>) -> f64 {
    let finite: Vec<f64> = v.filter(|x| x.is_finite()).collect();
    std_dev(&finite)
}

/// Allocation by marginal traffic (floored at 0) against allocation by
/// turnout, with bootstrap-over-POIs standard errors. Groups are fixed on the
/// full sample before resampling. A group is flagged significant when
/// |observed - optimal| exceeds 1.96 bootstrap SEs of that paired difference.
pub fn compare_allocations(
    marginal: &[f64],
    turnout: &[f64],
    a: &[f64],
    r: &[f64],
    split: Split,
    resamples: usize,
    seed: u64,
) -> Result<AllocationTable> {
    let n = marginal.len();
    if turnout.len() != n || a.len() != n || r.len() != n {
        return Err(Error::invalid("allocation inputs differ in length"));
    }
    let observed_w: Vec<f64> = marginal.iter().map(|m| m.max(0.0)).collect();
    check_weights(turnout)?;
    let groups = assign_groups(a, r, split)?;
    let observed = shares_of(&observed_w, &groups, 0..n)?;
    let optimal = shares_of(turnout, &groups, 0..n)?;

    let reps = bootstrap_replicates(
        |idx: &[usize]| -> Result<([f64; 4], [f64; 4])> {
            Ok((
                shares_of(&observed_w, &groups, idx.iter().copied())?,
                shares_of(turnout, &groups, idx.iter().copied())?,
            ))
        },
        n,
        resamples,
        seed,
    )?;

    let mut rows = Vec::with_capacity(4);
    let mut difference_se = Vec::with_capacity(4);
    let mut percent_difference_se = Vec::with_capacity(4);
    for g in AgeRaceGroup::ALL {
        let k = g.index();
        let obs_se = finite_sd(reps.iter().map(|(o, _)| o[k]));
        let opt_se = finite_sd(reps.iter().map(|(_, p)| p[k]));
        let diff_se = finite_sd(reps.iter().map(|(o, p)| o[k] - p[k]));
        let pd_se = finite_sd(reps.iter().map(|(o, p)| pct_diff(o[k], p[k])));
        let diff = observed[k] - optimal[k];
        rows.push(AllocationRow {
            group: g.as_str().to_string(),
            observed_share: observed[k],
            optimal_share: optimal[k],
            observed_se: obs_se,
            optimal_se: opt_se,
            percent_difference: pct_diff(observed[k], optimal[k]),
            significant: diff.abs() > Z_CRIT * diff_se && diff.abs() > SHARE_TOLERANCE,
        });
        difference_se.push(diff_se);
        percent_difference_se.push(pd_se);
    }
    Ok(AllocationTable {
        rows,
        difference_se,
        percent_difference_se,
        resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::INTERCEPT;
    use proptest::prelude::*;

    fn grid(n: usize) -> (Vec<f64>, Vec<f64>) {
        // a balanced 2x2 layout: cycle through the four corners
        let a = (0..n).map(|i| if i % 4 >= 2 { 0.4 } else { 0.1 }).collect();
        let r = (0..n).map(|i| if i % 2 == 1 { 0.6 } else { 0.2 }).collect();
        (a, r)
    }

    #[test]
    fn perfect_ranking() {
        let n = 40;
        let v: Vec<f64> = (0..n).map(|i| 100.0 + (i * 37 % 41) as f64).collect();
        let m: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        // A and R independent of everything so the design is full rank
        let a: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64 / 10.0).collect();
        let r: Vec<f64> = (0..n).map(|i| ((i * 5) % 11) as f64 / 20.0).collect();
        let fit = rank_regression(&v, &m, &a, &r, RankOrder::Descending).unwrap();
        assert!((fit.coef(MOBILITY_RANK_TERM).unwrap() - 1.0).abs() < 1e-10);
        assert!(fit.coef(AGE_TERM).unwrap().abs() < 1e-10);
        assert!(fit.coef(RACE_TERM).unwrap().abs() < 1e-10);
        assert!(fit.coef(INTERCEPT).unwrap().abs() < 1e-9);
        assert!(
            rank_regression(&v[..9], &m[..9], &a[..9], &r[..9], RankOrder::Descending).is_err()
        );
        assert!(rank_regression(&v, &m, &a, &a, RankOrder::Descending).is_err());
    }

    #[test]
    fn order_flip_keeps_agreement_and_negates_demographics() {
        let n = 60;
        let v: Vec<f64> = (0..n).map(|i| ((i * 29) % 61) as f64).collect();
        let m: Vec<f64> = (0..n)
            .map(|i| ((i * 17) % 53) as f64 + v[i] / 3.0)
            .collect();
        let a: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64 / 10.0).collect();
        let r: Vec<f64> = (0..n).map(|i| ((i * 5) % 11) as f64 / 20.0).collect();
        let d = rank_regression(&v, &m, &a, &r, RankOrder::Descending).unwrap();
        let u = rank_regression(&v, &m, &a, &r, RankOrder::Ascending).unwrap();
        assert!(
            (d.coef(MOBILITY_RANK_TERM).unwrap() - u.coef(MOBILITY_RANK_TERM).unwrap()).abs()
                < 1e-10
        );
        assert!((d.coef(AGE_TERM).unwrap() + u.coef(AGE_TERM).unwrap()).abs() < 1e-9);
        assert!((d.coef(RACE_TERM).unwrap() + u.coef(RACE_TERM).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn allocate_examples() {
        let (a, r) = grid(8);
        assert_eq!(
            allocate(&[1.0; 8], &a, &r, Split::Median).unwrap(),
            [0.25; 4]
        );
        let mut w = vec![0.0; 8];
        w[3] = 5.0;
        let s = allocate(&w, &a, &r, Split::Median).unwrap();
        assert_eq!(s[AgeRaceGroup::OlderNonwhite.index()], 1.0);
        w[0] = -1.0;
        assert!(allocate(&w, &a, &r, Split::Median).is_err());
        assert!(allocate(&[0.0; 8], &a, &r, Split::Median).is_err());
    }

    #[test]
    fn median_ties_go_young_white() {
        let a = [0.1, 0.2, 0.2, 0.3];
        let r = [0.5, 0.5, 0.5, 0.5];
        let g = assign_groups(&a, &r, Split::Median).unwrap();
        assert_eq!(
            g,
            vec![
                AgeRaceGroup::YoungWhite,
                AgeRaceGroup::YoungWhite,
                AgeRaceGroup::YoungWhite,
                AgeRaceGroup::OlderWhite
            ]
        );
        let g = assign_groups(
            &a,
            &r,
            Split::Custom {
                age: 0.15,
                race: 0.4,
            },
        )
        .unwrap();
        assert_eq!(g[0], AgeRaceGroup::YoungNonwhite);
        assert_eq!(g[1], AgeRaceGroup::OlderNonwhite);
    }

    #[test]
    fn proportional_marginal_matches_optimal() {
        let (a, r) = grid(40);
        let v: Vec<f64> = (0..40).map(|i| 500.0 + (i * 71 % 97) as f64).collect();
        let m: Vec<f64> = v.iter().map(|x| 0.02 * x).collect();
        let t = compare_allocations(&m, &v, &a, &r, Split::Median, 200, 1).unwrap();
        for row in &t.rows {
            assert!((row.observed_share - row.optimal_share).abs() < 1e-12);
            assert!(row.percent_difference.abs() < 1e-10);
            assert!(!row.significant);
        }
        let sum: f64 = t.rows.iter().map(|r| r.observed_share).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let again = compare_allocations(&m, &v, &a, &r, Split::Median, 200, 1).unwrap();
        assert_eq!(t, again);
        assert!(compare_allocations(&m, &v, &a, &r, Split::Median, 99, 1).is_err());
    }

    #[test]
    fn single_group_populated() {
        let a = vec![0.2; 12];
        let r = vec![0.3; 12];
        let v: Vec<f64> = (1..=12).map(f64::from).collect();
        let m: Vec<f64> = v.iter().map(|x| 12.0 - x).collect();
        let t = compare_allocations(&m, &v, &a, &r, Split::Median, 100, 0).unwrap();
        let yw = t.row(AgeRaceGroup::YoungWhite);
        assert_eq!((yw.observed_share, yw.optimal_share), (1.0, 1.0));
        assert!(t
            .row(AgeRaceGroup::OlderNonwhite)
            .percent_difference
            .is_nan());
    }

    #[test]
    fn negative_marginal_is_floored() {
        let (a, r) = grid(8);
        let m = [-5.0, 1.0, 1.0, 1.0, -3.0, 1.0, 1.0, 1.0];
        let t = compare_allocations(&m, &[1.0; 8], &a, &r, Split::Median, 100, 0).unwrap();
        assert_eq!(t.row(AgeRaceGroup::YoungWhite).observed_share, 0.0);
    }

    proptest! {
        #[test]
        fn allocate_is_scale_invariant(w in proptest::collection::vec(0.0f64..100.0, 12), c in 0.01f64..1e6) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let (a, r) = grid(12);
            let s1 = allocate(&w, &a, &r, Split::Median).unwrap();
            let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
            let s2 = allocate(&scaled, &a, &r, Split::Median).unwrap();
            for k in 0..4 {
                prop_assert!((s1[k] - s2[k]).abs() < 1e-12);
            }
            prop_assert!((s1.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
