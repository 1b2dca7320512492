use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use serde::Serialize;

use mobility_audit::audit::{
    bin_summaries, placebo_days, AuditConfig, BinSummary, DayMarginals, Demographic,
};
use mobility_audit::baseline::{evaluate_imputation, BaselineMethod, CvConfig, ImputationRow};
use mobility_audit::ingest::{
    create_file, load_json, resolved_rows, save_json, save_table, write_rejects, DatasetManifest,
    Reject,
};
use mobility_audit::linkage::{match_pois, LinkageConfig};
use mobility_audit::model::PoiCategory;
use mobility_audit::pipeline::{
    admin_precincts, dataset_in, link_and_profile, load_dataset, marginals, save_world, Inputs,
};
use mobility_audit::policy::{coefficient_rows, compare_allocations, rank_regression, Split};
use mobility_audit::report::{run_audit, Analysis};
use mobility_audit::synth::{generate, ScenarioSpec};
use mobility_audit::{Error, Result};

use crate::args::{
    AllocateArgs, AuditArgs, CalendarArgs, ImputeArgs, InputArgs, LinkArgs, MatchArgs, RankArgs,
    ReportArgs, StudyArgs, SynthArgs,
};
use crate::manifest::Run;
use crate::output::{f3, print_table};

fn snapshot<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn out_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir.to_path_buf())
}

fn dataset(input: &InputArgs, calendar: &CalendarArgs) -> Result<DatasetManifest> {
    let mut m = match &input.dataset {
        Some(path) => load_json::<DatasetManifest>(path)?,
        None => {
            let e = calendar.election_date.ok_or_else(|| {
                Error::Invalid("--election-date is required without --dataset".into())
            })?;
            dataset_in(&input.input, e, Vec::new())
        }
    };
    if let Some(e) = calendar.election_date {
        m.election_date = e;
    }
    if !calendar.exclude_dates.is_empty() {
        m.excluded_dates = calendar.exclude_dates.clone();
    }
    m.validate()?;
    Ok(m)
}

fn input_paths(m: &DatasetManifest) -> Vec<PathBuf> {
    vec![
        m.traffic_path.clone(),
        m.admin_path.clone(),
        m.crosswalk_path.clone(),
        m.poi_directory_path.clone(),
    ]
}

fn load(m: &DatasetManifest) -> Result<Inputs> {
    let inputs = load_dataset(m)?;
    for (name, rejects) in [
        ("admin records", &inputs.admin_rejects),
        ("crosswalk", &inputs.crosswalk_rejects),
        ("POI directory", &inputs.directory_rejects),
    ] {
        if !rejects.is_empty() {
            warn!("{} {name} rows rejected", rejects.len());
        }
    }
    Ok(inputs)
}

fn linkage_config(m: &MatchArgs) -> Result<LinkageConfig> {
    let mut exclude = BTreeSet::new();
    for token in &m.exclude_categories {
        let token = token.trim();
        if token.eq_ignore_ascii_case("none") || token.is_empty() {
            continue;
        }
        let category = PoiCategory::parse(token);
        if category == PoiCategory::Other && !token.eq_ignore_ascii_case("other") {
            return Err(Error::Invalid(format!("unknown POI category {token:?}")));
        }
        exclude.insert(category);
    }
    Ok(LinkageConfig {
        token_threshold: m.token_threshold,
        exclude_categories: exclude,
        ..LinkageConfig::default()
    })
}

/// Inputs loaded, linked and reduced to per-day marginal traffic.
struct Study {
    files: Vec<PathBuf>,
    method: BaselineMethod,
    marginals: DayMarginals,
}

fn study(args: &StudyArgs) -> Result<Study> {
    let m = dataset(&args.input, &args.calendar)?;
    let inputs = load(&m)?;
    let e = m.election_date;
    let linked = link_and_profile(
        &inputs.records,
        &inputs.crosswalk,
        &inputs.directory,
        e,
        &linkage_config(&args.matching)?,
    )?;
    info!(
        "linked {} precincts, {} POI profiles",
        linked.linkage.resolved.len(),
        linked.profiles.profiles.len()
    );
    let method = args.baseline.method();
    let mut config = AuditConfig::for_panel(&inputs.panel, e, method, m.excluded_set());
    config.exclude_negative_marginal = args.baseline.exclude_negative_marginal;
    let marginals = marginals(&inputs.panel, &linked, &config)?;
    if !marginals.excluded_pois.is_empty() {
        warn!(
            "{} POIs dropped for negative focal-day marginal traffic",
            marginals.excluded_pois.len()
        );
    }
    Ok(Study {
        files: input_paths(&m),
        method,
        marginals,
    })
}

pub fn synth(args: &SynthArgs) -> Result<Run> {
    let mut spec = match &args.scenario {
        Some(path) => load_json::<ScenarioSpec>(path)?,
        None => ScenarioSpec::default(),
    };
    spec.seed = args.seed;
    macro_rules! apply {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { spec.$field = v; })* };
    }
    apply!(
        n_pois,
        election_date,
        c0,
        beta_age,
        beta_race,
        beta_interaction,
        lambda_min,
        lambda_max,
        jitter_sigma
    );
    if args.null {
        spec = spec.null();
    }
    if args.no_inject {
        spec.inject_voters = false;
    }
    spec.validate()?;
    let world = generate(&spec)?;
    let dir = out_dir(&args.out.out)?;
    let mut outputs = save_world(&world, &dir)?;
    let scenario = dir.join("scenario.json");
    save_json(&scenario, &spec)?;
    outputs.push(scenario);
    println!(
        "{} POIs, {} days, {} visit records, election {}",
        world.panel.n_pois(),
        world.panel.n_days(),
        world.records.len(),
        spec.election_date
    );
    let mut inputs = Vec::new();
    inputs.extend(args.scenario.clone());
    Ok(Run {
        out_dir: dir,
        config: snapshot(&spec),
        seed: Some(spec.seed),
        inputs,
        outputs,
    })
}

pub fn link(args: &LinkArgs) -> Result<Run> {
    let placeholder = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    let m = match &args.input.dataset {
        Some(path) => load_json::<DatasetManifest>(path)?,
        None => dataset_in(&args.input.input, placeholder, Vec::new()),
    };
    let inputs = load(&m)?;
    let admin = admin_precincts(&inputs.records);
    let outcome = match_pois(
        &inputs.crosswalk,
        &inputs.directory,
        Some(&admin),
        &linkage_config(&args.matching)?,
    )?;

    let dir = out_dir(&args.out.out)?;
    let mut outputs = Vec::new();
    let resolved = dir.join("resolved_crosswalk.csv");
    save_table(&resolved, &resolved_rows(&outcome.resolved))?;
    outputs.push(resolved);
    let funnel = dir.join("linkage_funnel.csv");
    let rows = outcome.funnel.rows();
    save_table(&funnel, &rows)?;
    outputs.push(funnel);
    let reject_files: [(&str, &Vec<Reject>); 3] = [
        ("admin_rejects.csv", &inputs.admin_rejects),
        ("crosswalk_rejects.csv", &inputs.crosswalk_rejects),
        ("poi_directory_rejects.csv", &inputs.directory_rejects),
    ];
    for (name, rejects) in reject_files {
        let p = dir.join(name);
        write_rejects(create_file(&p)?, rejects)?;
        outputs.push(p);
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.stage.clone(), r.count.to_string(), f3(r.rate)])
        .collect();
    print_table(&["stage", "count", "rate"], &table);
    Ok(Run {
        out_dir: dir,
        config: snapshot(args),
        seed: None,
        inputs: input_paths(&m),
        outputs,
    })
}

pub fn impute(args: &ImputeArgs) -> Result<Run> {
    if args.methods.is_empty() {
        return Err(Error::Invalid("no imputation methods given".into()));
    }
    let m = dataset(&args.input, &args.calendar)?;
    let inputs = load(&m)?;
    let e = m.election_date;
    let widest = args
        .methods
        .iter()
        .map(BaselineMethod::window)
        .max()
        .unwrap_or(1);
    let excluded = m.excluded_set();
    let eval_days: Vec<NaiveDate> = placebo_days(inputs.panel.days(), e, widest, &excluded)
        .into_iter()
        .filter(|d| *d != e)
        .collect();
    if eval_days.is_empty() {
        return Err(Error::Invalid(format!(
            "no evaluation days with {widest} weekdays on each side"
        )));
    }
    let mut never_inputs = excluded.clone();
    never_inputs.insert(e);
    let cv = CvConfig {
        folds: args.folds,
        repeats: args.repeats,
        seed: args.seed,
    };
    let rows = args
        .methods
        .iter()
        .map(|&method| {
            let metrics =
                evaluate_imputation(&inputs.panel, method, &eval_days, &never_inputs, cv)?;
            Ok(ImputationRow::new(method, &metrics))
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = out_dir(&args.out.out)?;
    let path = dir.join("imputation_eval.csv");
    save_table(&path, &rows)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.window.to_string(),
                f3(r.rmse),
                f3(r.r2),
                f3(r.mae),
            ]
        })
        .collect();
    print_table(&["method", "window", "rmse", "r2", "mae"], &table);
    println!("{} evaluation days", eval_days.len());
    Ok(Run {
        out_dir: dir,
        config: snapshot(args),
        seed: Some(args.seed),
        inputs: input_paths(&m),
        outputs: vec![path],
    })
}

pub fn audit(analysis: Analysis, args: &AuditArgs) -> Result<Run> {
    let s = study(&args.study)?;
    let demographic: Demographic = args.demographic.into();
    let out = run_audit(
        &s.marginals,
        analysis,
        demographic,
        s.method,
        !args.exclude_focal,
    )?;

    let dir = out_dir(&args.out.out)?;
    let report = dir.join("audit_report.json");
    save_json(&report, &out.report)?;
    let mut outputs = vec![report];
    let single = out.placebo.len() == 1;
    for (name, rows) in &out.placebo {
        let file = if single {
            "placebo_distribution.csv".to_string()
        } else {
            let suffix = name.rsplit('-').next().unwrap_or(name);
            format!("placebo_distribution_{suffix}.csv")
        };
        let p = dir.join(file);
        save_table(&p, rows)?;
        outputs.push(p);
    }

    let r = &out.report;
    if !r.statistics.is_empty() {
        let table: Vec<Vec<String>> = r
            .statistics
            .iter()
            .map(|st| {
                vec![
                    st.statistic.clone(),
                    f3(st.value),
                    f3(st.p_value),
                    st.n.to_string(),
                ]
            })
            .collect();
        print_table(&["statistic", "value", "p_value", "n"], &table);
    }
    if !r.correlations.is_empty() {
        let table: Vec<Vec<String>> = r
            .correlations
            .iter()
            .map(|c| {
                vec![
                    c.statistic.clone(),
                    f3(c.test.rho),
                    f3(c.test.p_value),
                    c.test.n.to_string(),
                ]
            })
            .collect();
        print_table(&["correlation", "rho", "p_value", "n"], &table);
    }
    for model in &r.models {
        println!(
            "model {} (r2 {}, n {})",
            model.model,
            f3(model.r_squared),
            model.n_obs
        );
        let table: Vec<Vec<String>> = model
            .coefficients
            .iter()
            .map(|c| {
                vec![
                    c.term.clone(),
                    f3(c.coefficient),
                    f3(c.std_error),
                    f3(c.p_value),
                ]
            })
            .collect();
        print_table(&["term", "coefficient", "std_error", "p_value"], &table);
    }
    Ok(Run {
        out_dir: dir,
        config: snapshot(args),
        seed: None,
        inputs: s.files,
        outputs,
    })
}

pub fn rank(args: &RankArgs) -> Result<Run> {
    let s = study(&args.study)?;
    let m = &s.marginals;
    let fit = rank_regression(
        &m.turnout,
        m.focal_marginal(),
        &m.prop_over_65,
        &m.prop_non_white,
        args.order.into(),
    )?;
    let rows = coefficient_rows(&fit);
    let dir = out_dir(&args.out.out)?;
    let path = dir.join("rank_regression.csv");
    save_table(&path, &rows)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|c| {
            vec![
                c.term.clone(),
                f3(c.coefficient),
                f3(c.std_error),
                f3(c.p_value),
            ]
        })
        .collect();
    print_table(&["term", "coefficient", "std_error", "p_value"], &table);
    println!("r2 {}, n {}", f3(fit.r_squared), fit.n_obs);
    Ok(Run {
        out_dir: dir,
        config: snapshot(args),
        seed: None,
        inputs: s.files,
        outputs: vec![path],
    })
}

pub fn allocate(args: &AllocateArgs) -> Result<Run> {
    let s = study(&args.study)?;
    let m = &s.marginals;
    let split = match (args.split_age, args.split_race) {
        (Some(age), Some(race)) => Split::Custom { age, race },
        _ => Split::Median,
    };
    let t = compare_allocations(
        m.focal_marginal(),
        &m.turnout,
        &m.prop_over_65,
        &m.prop_non_white,
        split,
        args.bootstrap,
        args.seed,
    )?;
    let dir = out_dir(&args.out.out)?;
    let path = dir.join("allocation.csv");
    save_table(&path, &t.rows)?;
    let table: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            vec![
                r.group.clone(),
                f3(r.observed_share),
                f3(r.optimal_share),
                f3(r.observed_se),
                f3(r.optimal_se),
                f3(r.percent_difference),
                r.significant.to_string(),
            ]
        })
        .collect();
    print_table(
        &[
            "group",
            "observed",
            "optimal",
            "observed_se",
            "optimal_se",
            "pct_diff",
            "significant",
        ],
        &table,
    );
    Ok(Run {
        out_dir: dir,
        config: snapshot(args),
        seed: Some(args.seed),
        inputs: s.files,
        outputs: vec![path],
    })
}

pub fn report(args: &ReportArgs) -> Result<Run> {
    let s = study(&args.study)?;
    let m = &s.marginals;
    let cov = m.focal_coverage()?;
    let mut bins: Vec<BinSummary> = Vec::new();
    for &scheme in &args.schemes {
        bins.extend(bin_summaries(
            &cov.values,
            &m.prop_over_65,
            &m.prop_non_white,
            scheme,
        )?);
    }
    let dir = out_dir(&args.out.out)?;
    let path = dir.join("figure_bins.csv");
    save_table(&path, &bins)?;
    for &scheme in &args.schemes {
        let n = bins.iter().filter(|b| b.scheme == scheme.as_str()).count();
        println!("{}: {n} bins", scheme.as_str());
    }
    Ok(Run {
        out_dir: dir,
        config: snapshot(args),
        seed: None,
        inputs: s.files,
        outputs: vec![path],
    })
}
