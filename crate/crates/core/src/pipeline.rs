//! End-to-end glue: link the crosswalk, aggregate profiles, and compute
//! per-day marginal traffic.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::audit::{compute_marginals, AuditConfig, DayMarginals};
use crate::baseline::BaselineMethod;
use crate::error::Result;
use crate::ingest::{
    create_file, load_admin_records, load_crosswalk, load_poi_directory, load_traffic_panel,
    save_table, write_admin_records, write_crosswalk, write_poi_directory, write_traffic_panel,
    DatasetManifest, Reject,
};
use crate::linkage::{match_pois, LinkageConfig, LinkageOutcome};
use crate::model::{
    summarize_profiles, AdminVisitRecord, CrosswalkEntry, PoiDirectory, ProfileConfig,
    ProfileSummary, TrafficPanel,
};
use crate::synth::{GroundTruthRow, World};

pub const TRAFFIC_FILE: &str = "traffic.csv";
pub const ADMIN_FILE: &str = "admin_visits.csv";
pub const CROSSWALK_FILE: &str = "crosswalk.csv";
pub const DIRECTORY_FILE: &str = "poi_directory.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

/// Writes the four input tables and `ground_truth.csv` into `dir`, returning
/// the paths in that order.
pub fn save_world(world: &World, dir: &Path) -> Result<Vec<PathBuf>> {
    let path = |f: &str| dir.join(f);
    write_traffic_panel(create_file(&path(TRAFFIC_FILE))?, &world.panel)?;
    write_admin_records(create_file(&path(ADMIN_FILE))?, &world.records)?;
    write_crosswalk(create_file(&path(CROSSWALK_FILE))?, &world.crosswalk)?;
    write_poi_directory(create_file(&path(DIRECTORY_FILE))?, &world.directory)?;
    let truth: Vec<GroundTruthRow> = world.truth.iter().map(GroundTruthRow::from).collect();
    save_table(&path(GROUND_TRUTH_FILE), &truth)?;
    Ok([
        TRAFFIC_FILE,
        ADMIN_FILE,
        CROSSWALK_FILE,
        DIRECTORY_FILE,
        GROUND_TRUTH_FILE,
    ]
    .iter()
    .map(|f| path(f))
    .collect())
}

/// The four input tables as loaded, with the rows each loader set aside.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub panel: TrafficPanel,
    pub records: Vec<AdminVisitRecord>,
    pub crosswalk: Vec<CrosswalkEntry>,
    pub directory: PoiDirectory,
    pub admin_rejects: Vec<Reject>,
    pub crosswalk_rejects: Vec<Reject>,
    pub directory_rejects: Vec<Reject>,
}

/// A dataset manifest pointing at the conventional file names in `dir`.
pub fn dataset_in(
    dir: &Path,
    election_date: NaiveDate,
    excluded_dates: Vec<NaiveDate>,
) -> DatasetManifest {
    DatasetManifest {
        traffic_path: dir.join(TRAFFIC_FILE),
        admin_path: dir.join(ADMIN_FILE),
        crosswalk_path: dir.join(CROSSWALK_FILE),
        poi_directory_path: dir.join(DIRECTORY_FILE),
        election_date,
        excluded_dates,
    }
}

/// Loads the four input tables from their conventional names in `dir`.
pub fn load_inputs(dir: &Path) -> Result<Inputs> {
    load_tables(
        &dir.join(TRAFFIC_FILE),
        &dir.join(ADMIN_FILE),
        &dir.join(CROSSWALK_FILE),
        &dir.join(DIRECTORY_FILE),
    )
}

pub fn load_dataset(m: &DatasetManifest) -> Result<Inputs> {
    m.validate()?;
    load_tables(
        &m.traffic_path,
        &m.admin_path,
        &m.crosswalk_path,
        &m.poi_directory_path,
    )
}

fn load_tables(traffic: &Path, admin: &Path, crosswalk: &Path, directory: &Path) -> Result<Inputs> {
    let panel = load_traffic_panel(traffic)?;
    let admin = load_admin_records(admin)?;
    let crosswalk = load_crosswalk(crosswalk)?;
    let (directory, directory_rejects) = load_poi_directory(directory)?;
    Ok(Inputs {
        panel,
        records: admin.accepted,
        crosswalk: crosswalk.accepted,
        directory,
        admin_rejects: admin.rejects,
        crosswalk_rejects: crosswalk.rejects,
        directory_rejects,
    })
}

#[derive(Debug, Clone)]
pub struct Linked {
    pub linkage: LinkageOutcome,
    pub profiles: ProfileSummary,
}

/// Distinct precinct ids as spelled in the records.
pub fn admin_precincts(records: &[AdminVisitRecord]) -> BTreeSet<String> {
    let mut admin: BTreeSet<String> = BTreeSet::new();
    let mut last: Option<&str> = None;
    for r in records {
        if last != Some(r.precinct_id.as_str()) && !admin.contains(&r.precinct_id) {
            admin.insert(r.precinct_id.clone());
        }
        last = Some(&r.precinct_id);
    }
    admin
}

/// Links precincts to POIs and aggregates the focal-day records.
pub fn link_and_profile(
    records: &[AdminVisitRecord],
    crosswalk: &[CrosswalkEntry],
    directory: &PoiDirectory,
    focal_day: NaiveDate,
    linkage: &LinkageConfig,
) -> Result<Linked> {
    let admin = admin_precincts(records);
    let outcome = match_pois(crosswalk, directory, Some(&admin), linkage)?;
    let profiles = summarize_profiles(
        records,
        &outcome.resolved,
        focal_day,
        ProfileConfig::default(),
    )?;
    Ok(Linked {
        linkage: outcome,
        profiles,
    })
}

/// Marginal traffic for a generated world under the default linkage rules
/// and the world's own calendar.
pub fn world_marginals(world: &World, baseline: BaselineMethod) -> Result<DayMarginals> {
    let e = world.spec.election_date;
    let linked = link_and_profile(
        &world.records,
        &world.crosswalk,
        &world.directory,
        e,
        &LinkageConfig::default(),
    )?;
    let config = AuditConfig::for_panel(&world.panel, e, baseline, BTreeSet::new());
    marginals(&world.panel, &linked, &config)
}

pub fn marginals(
    panel: &TrafficPanel,
    linked: &Linked,
    config: &AuditConfig,
) -> Result<DayMarginals> {
    compute_marginals(panel, &linked.profiles.profiles, config)
}
