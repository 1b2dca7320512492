//! CSV/JSON readers and writers for every dataset the pipeline consumes or
//! emits.
//!
//! Input loaders validate row by row. Fatal problems (negative counts,
//! duplicate cells, gaps, ambiguous precincts) return an error; recoverable
//! row problems go to a rejects list with the file line number.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AdminVisitRecord, CrosswalkEntry, PoiCategory, PoiDirectory, PoiEntry, PoiId, Race,
    TrafficPanel, MAX_AGE, MIN_AGE,
};

/// A fixed-header CSV table.
pub trait Table {
    const HEADER: &'static [&'static str];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

impl Table for Reject {
    const HEADER: &'static [&'static str] = &["line", "reason"];
}

/// Rows accepted by a loader plus the rows it set aside.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub accepted: Vec<T>,
    pub rejects: Vec<Reject>,
}

impl<T> Loaded<T> {
    pub fn n_rows(&self) -> usize {
        self.accepted.len() + self.rejects.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficRow {
    pub poi_id: String,
    pub date: NaiveDate,
    pub visits: u64,
}

impl Table for TrafficRow {
    const HEADER: &'static [&'static str] = &["poi_id", "date", "visits"];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminRow {
    pub person_id: String,
    pub precinct_id: String,
    pub date: NaiveDate,
    pub age: u32,
    pub race: String,
}

impl Table for AdminRow {
    const HEADER: &'static [&'static str] = &["person_id", "precinct_id", "date", "age", "race"];
}

impl From<&AdminVisitRecord> for AdminRow {
    fn from(r: &AdminVisitRecord) -> Self {
        AdminRow {
            person_id: r.person_id.clone(),
            precinct_id: r.precinct_id.clone(),
            date: r.date,
            age: r.age,
            race: r.race.as_str().to_string(),
        }
    }
}

impl Table for CrosswalkEntry {
    const HEADER: &'static [&'static str] = &[
        "precinct_id",
        "location_name",
        "street_address",
        "city",
        "state",
        "zip",
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoiDirectoryRow {
    pub poi_id: String,
    pub location_name: String,
    pub street_address: String,
    pub city: String,
    pub state: String,
    pub zip: String,
    pub category: String,
}

impl Table for PoiDirectoryRow {
    const HEADER: &'static [&'static str] = &[
        "poi_id",
        "location_name",
        "street_address",
        "city",
        "state",
        "zip",
        "category",
    ];
}

impl From<&PoiEntry> for PoiDirectoryRow {
    fn from(e: &PoiEntry) -> Self {
        PoiDirectoryRow {
            poi_id: e.poi_id.to_string(),
            location_name: e.name.clone(),
            street_address: e.street_address.clone(),
            city: e.city.clone(),
            state: e.state.clone(),
            zip: e.zip.clone(),
            category: e.category.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedRow {
    pub precinct_id: String,
    pub poi_id: String,
}

impl Table for ResolvedRow {
    const HEADER: &'static [&'static str] = &["precinct_id", "poi_id"];
}

/// Input file locations and the event calendar for one audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub traffic_path: PathBuf,
    pub admin_path: PathBuf,
    pub crosswalk_path: PathBuf,
    pub poi_directory_path: PathBuf,
    pub election_date: NaiveDate,
    #[serde(default)]
    pub excluded_dates: Vec<NaiveDate>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.excluded_dates.contains(&self.election_date) {
            return Err(Error::invalid(format!(
                "election date {} is in the excluded dates",
                self.election_date
            )));
        }
        let paths: BTreeSet<&PathBuf> = [
            &self.traffic_path,
            &self.admin_path,
            &self.crosswalk_path,
            &self.poi_directory_path,
        ]
        .into_iter()
        .collect();
        if paths.len() != 4 {
            return Err(Error::invalid("dataset paths must be distinct"));
        }
        Ok(())
    }

    pub fn excluded_set(&self) -> BTreeSet<NaiveDate> {
        self.excluded_dates.iter().copied().collect()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Reads all records after checking the header. Each record carries its
/// 1-based file line.
fn records<R: Read>(reader: R, source: &Path, header: &[&str]) -> Result<Vec<(u64, StringRecord)>> {
    let mut rdr = ReaderBuilder::new()
        .trim(Trim::All)
        .flexible(true)
        .from_reader(reader);
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(source, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(Error::Header {
            path: source.to_path_buf(),
            expected: header.iter().map(|s| s.to_string()).collect(),
            found,
        });
    }
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| csv_err(source, e))?;
            let line = r.position().map_or(0, |p| p.line());
            Ok((line, r))
        })
        .collect()
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

pub fn read_traffic_panel<R: Read>(reader: R, source: &Path) -> Result<TrafficPanel> {
    let mut cells: BTreeMap<(String, NaiveDate), u64> = BTreeMap::new();
    for (line, rec) in records(reader, source, TrafficRow::HEADER)? {
        if rec.len() != 3 {
            return Err(Error::invalid(format!(
                "{}: line {line}: expected 3 fields",
                source.display()
            )));
        }
        let poi = rec[0].to_string();
        if poi.is_empty() {
            return Err(Error::invalid(format!(
                "{}: line {line}: empty poi_id",
                source.display()
            )));
        }
        let date = parse_date(&rec[1]).ok_or_else(|| {
            Error::invalid(format!(
                "{}: line {line}: unparseable date {:?}",
                source.display(),
                &rec[1]
            ))
        })?;
        let visits: i64 = rec[2].parse().map_err(|_| {
            Error::invalid(format!(
                "{}: line {line}: unparseable count {:?}",
                source.display(),
                &rec[2]
            ))
        })?;
        if visits < 0 {
            return Err(Error::NegativeCount { line });
        }
        if cells.insert((poi.clone(), date), visits as u64).is_some() {
            return Err(Error::DuplicateCell { poi, date, line });
        }
    }
    if cells.is_empty() {
        return Err(Error::NoRecords);
    }
    let pois: Vec<String> = cells
        .keys()
        .map(|(p, _)| p.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let days: Vec<NaiveDate> = cells
        .keys()
        .map(|(_, d)| *d)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut counts = Vec::with_capacity(pois.len() * days.len());
    let mut gaps = Vec::new();
    for p in &pois {
        for d in &days {
            match cells.get(&(p.clone(), *d)) {
                Some(&v) => counts.push(v),
                None => {
                    gaps.push((p.clone(), *d));
                    counts.push(0);
                }
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::MissingCells(gaps));
    }
    let pois = pois
        .into_iter()
        .map(PoiId::new)
        .collect::<Result<Vec<_>>>()?;
    TrafficPanel::new(pois, days, counts)
}

pub fn load_traffic_panel(path: &Path) -> Result<TrafficPanel> {
    read_traffic_panel(open(path)?, path)
}

pub fn read_admin_records<R: Read>(reader: R, source: &Path) -> Result<Loaded<AdminVisitRecord>> {
    let mut out = Loaded {
        accepted: Vec::new(),
        rejects: Vec::new(),
    };
    let mut unknown_tokens = BTreeSet::new();
    for (line, rec) in records(reader, source, AdminRow::HEADER)? {
        let reject = |reason: &str| Reject {
            line,
            reason: reason.to_string(),
        };
        if rec.len() != 5 {
            out.rejects.push(reject("wrong number of fields"));
            continue;
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            out.rejects.push(reject("missing identifier"));
            continue;
        }
        let Some(date) = parse_date(&rec[2]) else {
            out.rejects.push(reject("unparseable date"));
            continue;
        };
        let Ok(age) = rec[3].parse::<i64>() else {
            out.rejects.push(reject("unparseable age"));
            continue;
        };
        if !(MIN_AGE as i64..=MAX_AGE as i64).contains(&age) {
            out.rejects.push(reject("age out of range"));
            continue;
        }
        let (race, recognized) = Race::parse_token(&rec[4]);
        if !recognized {
            unknown_tokens.insert(rec[4].to_string());
        }
        out.accepted.push(AdminVisitRecord {
            person_id: rec[0].to_string(),
            precinct_id: rec[1].to_string(),
            date,
            age: age as u32,
            race,
        });
    }
    if !unknown_tokens.is_empty() {
        log::warn!(
            "{}: unrecognized race tokens mapped to unknown: {:?}",
            source.display(),
            unknown_tokens
        );
    }
    Ok(out)
}

pub fn load_admin_records(path: &Path) -> Result<Loaded<AdminVisitRecord>> {
    read_admin_records(open(path)?, path)
}

pub fn read_crosswalk<R: Read>(reader: R, source: &Path) -> Result<Loaded<CrosswalkEntry>> {
    let mut out = Loaded {
        accepted: Vec::new(),
        rejects: Vec::new(),
    };
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (line, rec) in records(reader, source, CrosswalkEntry::HEADER)? {
        let reject = |reason: &str| Reject {
            line,
            reason: reason.to_string(),
        };
        if rec.len() != 6 {
            out.rejects.push(reject("wrong number of fields"));
            continue;
        }
        if rec[0].is_empty() {
            out.rejects.push(reject("empty precinct_id"));
            continue;
        }
        if rec[2].is_empty() {
            out.rejects.push(reject("empty street_address"));
            continue;
        }
        let entry = CrosswalkEntry {
            precinct_id: rec[0].to_string(),
            location_name: rec[1].to_string(),
            street_address: rec[2].to_string(),
            city: rec[3].to_string(),
            state: rec[4].to_string(),
            zip: rec[5].to_string(),
        };
        match seen.get(&entry.precinct_id) {
            Some(&i) if out.accepted[i] == entry => out.rejects.push(reject("duplicate row")),
            Some(_) => return Err(Error::AmbiguousPrecinct(entry.precinct_id)),
            None => {
                seen.insert(entry.precinct_id.clone(), out.accepted.len());
                out.accepted.push(entry);
            }
        }
    }
    Ok(out)
}

pub fn load_crosswalk(path: &Path) -> Result<Loaded<CrosswalkEntry>> {
    read_crosswalk(open(path)?, path)
}

/// Reads a POI directory. The second and later rows for a POI id are
/// rejected.
pub fn read_poi_directory<R: Read>(
    reader: R,
    source: &Path,
) -> Result<(PoiDirectory, Vec<Reject>)> {
    let mut entries = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, rec) in records(reader, source, PoiDirectoryRow::HEADER)? {
        let reject = |reason: &str| Reject {
            line,
            reason: reason.to_string(),
        };
        if rec.len() != 7 {
            rejects.push(reject("wrong number of fields"));
            continue;
        }
        let Ok(poi_id) = PoiId::new(&rec[0]) else {
            rejects.push(reject("empty poi_id"));
            continue;
        };
        if !seen.insert(poi_id.clone()) {
            rejects.push(reject("duplicate poi_id"));
            continue;
        }
        entries.push(PoiEntry {
            poi_id,
            name: rec[1].to_string(),
            street_address: rec[2].to_string(),
            city: rec[3].to_string(),
            state: rec[4].to_string(),
            zip: rec[5].to_string(),
            category: PoiCategory::parse(&rec[6]),
        });
    }
    Ok((PoiDirectory::new(entries)?, rejects))
}

pub fn load_poi_directory(path: &Path) -> Result<(PoiDirectory, Vec<Reject>)> {
    read_poi_directory(open(path)?, path)
}

/// Reads a fixed-header table of any output schema.
pub fn read_table<T: Table + DeserializeOwned, R: Read>(
    reader: R,
    source: &Path,
) -> Result<Vec<T>> {
    let mut rdr = ReaderBuilder::new().from_reader(reader);
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(source, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != T::HEADER {
        return Err(Error::Header {
            path: source.to_path_buf(),
            expected: T::HEADER.iter().map(|s| s.to_string()).collect(),
            found,
        });
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(source, e)))
        .collect()
}

pub fn load_table<T: Table + DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_table(open(path)?, path)
}

/// Writes the header then one line per row, always with `\n` terminators.
pub fn write_table<'a, T, W, I>(writer: W, rows: I) -> Result<()>
where
    T: Table + Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    let label = Path::new("<output>");
    let mut w = WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(T::HEADER).map_err(|e| csv_err(label, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(label, e))?;
    }
    w.flush().map_err(|e| io_err(label, e))
}

pub fn save_table<'a, T, I>(path: &Path, rows: I) -> Result<()>
where
    T: Table + Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut f = create(path)?;
    write_table(&mut f, rows)?;
    f.flush().map_err(|e| io_err(path, e))
}

pub fn traffic_rows(panel: &TrafficPanel) -> Vec<TrafficRow> {
    panel
        .pois()
        .iter()
        .enumerate()
        .flat_map(|(p, poi)| {
            panel
                .days()
                .iter()
                .enumerate()
                .map(move |(d, day)| TrafficRow {
                    poi_id: poi.to_string(),
                    date: *day,
                    visits: panel.count(p, d),
                })
        })
        .collect()
}

pub fn write_traffic_panel<W: Write>(writer: W, panel: &TrafficPanel) -> Result<()> {
    write_table(writer, &traffic_rows(panel))
}

pub fn write_admin_records<W: Write>(writer: W, records: &[AdminVisitRecord]) -> Result<()> {
    let rows: Vec<AdminRow> = records.iter().map(AdminRow::from).collect();
    write_table(writer, &rows)
}

pub fn write_crosswalk<W: Write>(writer: W, entries: &[CrosswalkEntry]) -> Result<()> {
    write_table(writer, entries)
}

pub fn write_poi_directory<W: Write>(writer: W, directory: &PoiDirectory) -> Result<()> {
    let rows: Vec<PoiDirectoryRow> = directory
        .entries()
        .iter()
        .map(PoiDirectoryRow::from)
        .collect();
    write_table(writer, &rows)
}

pub fn write_rejects<W: Write>(writer: W, rejects: &[Reject]) -> Result<()> {
    write_table(writer, rejects)
}

pub fn resolved_rows(resolved: &BTreeMap<String, PoiId>) -> Vec<ResolvedRow> {
    resolved
        .iter()
        .map(|(pr, poi)| ResolvedRow {
            precinct_id: pr.clone(),
            poi_id: poi.to_string(),
        })
        .collect()
}

/// Opens a file for writing, for callers that stream their own output.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    create(path)
}

pub fn write_json<T: Serialize, W: Write>(mut writer: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer
        .write_all(b"\n")
        .and_then(|_| writer.flush())
        .map_err(|e| io_err(Path::new("<output>"), e))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(create(path)?, value)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src() -> &'static Path {
        Path::new("test.csv")
    }

    #[test]
    fn traffic_two_by_three() {
        let text = "poi_id,date,visits\n\
                    P2,2018-11-06,4\nP1,2018-11-05,1\nP1,2018-11-06,2\n\
                    P1,2018-11-07,3\nP2,2018-11-05,5\nP2,2018-11-07,6\n";
        let panel = read_traffic_panel(text.as_bytes(), src()).unwrap();
        assert_eq!((panel.n_pois(), panel.n_days()), (2, 3));
        assert_eq!(panel.counts(), &[1, 2, 3, 5, 4, 6]);
    }

    #[test]
    fn traffic_errors() {
        let dup = "poi_id,date,visits\nP1,2018-11-06,1\nP1,2018-11-06,2\n";
        let err = read_traffic_panel(dup.as_bytes(), src()).unwrap_err();
        assert!(err.to_string().contains("duplicate cell"), "{err}");

        let neg = "poi_id,date,visits\nP1,2018-11-05,1\nP1,2018-11-06,-3\n";
        let err = read_traffic_panel(neg.as_bytes(), src()).unwrap_err();
        assert_eq!(err.to_string(), "negative count at line 3");

        let gap = "poi_id,date,visits\nP1,2018-11-05,1\nP1,2018-11-06,1\nP2,2018-11-05,1\n";
        match read_traffic_panel(gap.as_bytes(), src()).unwrap_err() {
            Error::MissingCells(g) => assert_eq!(
                g,
                vec![(
                    "P2".to_string(),
                    NaiveDate::from_ymd_opt(2018, 11, 6).unwrap()
                )]
            ),
            e => panic!("{e}"),
        }

        let header = "poi,date,visits\nP1,2018-11-05,1\n";
        assert!(matches!(
            read_traffic_panel(header.as_bytes(), src()),
            Err(Error::Header { .. })
        ));
    }

    #[test]
    fn admin_rows() {
        let text = "person_id,precinct_id,date,age,race\n\
                    v1,PR-03,2018-11-06,72,white\n\
                    v2,PR-03,2018-11-06,150,white\n\
                    v3,PR-03,2018-11-06,30,asian\n\
                    v4,PR-03,2018-13-06,30,black\n\
                    v5,PR-03,2018-11-06,40,martian\n";
        let loaded = read_admin_records(text.as_bytes(), src()).unwrap();
        assert_eq!(loaded.accepted.len(), 3);
        assert_eq!(loaded.n_rows(), 5);
        assert_eq!(loaded.accepted[0].age, 72);
        assert_eq!(loaded.accepted[1].race, Race::OtherNonwhite);
        assert_eq!(loaded.accepted[2].race, Race::Unknown);
        assert_eq!(
            loaded.rejects,
            vec![
                Reject {
                    line: 3,
                    reason: "age out of range".into()
                },
                Reject {
                    line: 5,
                    reason: "unparseable date".into()
                },
            ]
        );
    }

    #[test]
    fn crosswalk_rows() {
        let ok = "precinct_id,location_name,street_address,city,state,zip\n\
                  PR-01,Fire Hall,12 Main St,Springfield,NC,27601\n\
                  PR-02,Church,,Springfield,NC,27601\n\
                  PR-01,Fire Hall,12 Main St,Springfield,NC,27601\n";
        let loaded = read_crosswalk(ok.as_bytes(), src()).unwrap();
        assert_eq!(loaded.accepted.len(), 1);
        assert_eq!(loaded.rejects[0].reason, "empty street_address");
        assert_eq!(loaded.rejects[1].reason, "duplicate row");

        let amb = "precinct_id,location_name,street_address,city,state,zip\n\
                   PR-01,Fire Hall,12 Main St,Springfield,NC,27601\n\
                   PR-01,Library,4 Oak Rd,Springfield,NC,27601\n";
        let err = read_crosswalk(amb.as_bytes(), src()).unwrap_err();
        assert!(err.to_string().contains("ambiguous precinct"));
    }

    #[test]
    fn poi_directory_rows() {
        let text = "poi_id,location_name,street_address,city,state,zip,category\n\
                    a,Elm School,1 Elm St,X,NC,1,school\n\
                    b,Hall,2 Elm St,X,NC,1,bowling-alley\n\
                    a,Dup,3 Elm St,X,NC,1,church\n";
        let (dir, rejects) = read_poi_directory(text.as_bytes(), src()).unwrap();
        assert_eq!(dir.len(), 2);
        assert_eq!(dir.entries()[1].category, PoiCategory::Other);
        assert_eq!(
            rejects,
            vec![Reject {
                line: 4,
                reason: "duplicate poi_id".into()
            }]
        );
    }

    #[test]
    fn input_round_trips() {
        let traffic = "poi_id,date,visits\nP1,2018-11-05,1\nP1,2018-11-06,2\nP2,2018-11-05,3\nP2,2018-11-06,0\n";
        let panel = read_traffic_panel(traffic.as_bytes(), src()).unwrap();
        let mut out = Vec::new();
        write_traffic_panel(&mut out, &panel).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), traffic);

        let admin = "person_id,precinct_id,date,age,race\nv1,PR-03,2018-11-06,72,white\nv2,7,2018-11-06,17,other-nonwhite\n";
        let recs = read_admin_records(admin.as_bytes(), src())
            .unwrap()
            .accepted;
        let mut out = Vec::new();
        write_admin_records(&mut out, &recs).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), admin);

        let cw = "precinct_id,location_name,street_address,city,state,zip\nPR-01,\"Hall, North\",12 Main St,Springfield,NC,02760\n";
        let entries = read_crosswalk(cw.as_bytes(), src()).unwrap().accepted;
        let mut out = Vec::new();
        write_crosswalk(&mut out, &entries).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), cw);

        let dir = "poi_id,location_name,street_address,city,state,zip,category\na,Elm School,1 Elm St,X,NC,1,fire-station\n";
        let (d, _) = read_poi_directory(dir.as_bytes(), src()).unwrap();
        let mut out = Vec::new();
        write_poi_directory(&mut out, &d).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), dir);
    }

    #[test]
    fn generic_table_round_trip_with_floats() {
        #[derive(Debug, PartialEq, Serialize, Deserialize)]
        struct Row {
            name: String,
            x: f64,
            flag: bool,
        }
        impl Table for Row {
            const HEADER: &'static [&'static str] = &["name", "x", "flag"];
        }
        let rows = vec![
            Row {
                name: "a".into(),
                x: 0.1 + 0.2,
                flag: true,
            },
            Row {
                name: "b".into(),
                x: -1e-300,
                flag: false,
            },
            Row {
                name: "c".into(),
                x: 12.0,
                flag: false,
            },
        ];
        let mut first = Vec::new();
        write_table(&mut first, &rows).unwrap();
        let back: Vec<Row> = read_table(first.as_slice(), src()).unwrap();
        assert_eq!(back, rows);
        let mut second = Vec::new();
        write_table(&mut second, &back).unwrap();
        assert_eq!(first, second);
        let mut empty = Vec::new();
        write_table::<Row, _, _>(&mut empty, &[]).unwrap();
        assert_eq!(empty, b"name,x,flag\n");
    }

    #[test]
    fn manifest_validation() {
        let d = NaiveDate::from_ymd_opt(2018, 11, 6).unwrap();
        let mut m = DatasetManifest {
            traffic_path: "t.csv".into(),
            admin_path: "a.csv".into(),
            crosswalk_path: "c.csv".into(),
            poi_directory_path: "p.csv".into(),
            election_date: d,
            excluded_dates: vec![],
        };
        m.validate().unwrap();
        m.excluded_dates.push(d);
        assert!(m.validate().is_err());
        m.excluded_dates.clear();
        m.admin_path = "t.csv".into();
        assert!(m.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn admin_rows_are_conserved(ages in proptest::collection::vec(0i64..200, 1..40),
                                        bad_dates in proptest::collection::vec(any::<bool>(), 40)) {
                let mut text = String::from("person_id,precinct_id,date,age,race\n");
                for (i, age) in ages.iter().enumerate() {
                    let date = if bad_dates[i] { "2018-02-30" } else { "2018-11-06" };
                    text.push_str(&format!("v{i},P1,{date},{age},white\n"));
                }
                let loaded = read_admin_records(text.as_bytes(), Path::new("p.csv")).unwrap();
                prop_assert_eq!(loaded.n_rows(), ages.len());
                let mut out = Vec::new();
                write_admin_records(&mut out, &loaded.accepted).unwrap();
                let again = read_admin_records(out.as_slice(), Path::new("p.csv")).unwrap();
                prop_assert_eq!(again.accepted, loaded.accepted);
            }

            #[test]
            fn traffic_round_trip(counts in proptest::collection::vec(0u64..100_000, 1..5usize).prop_flat_map(|row| {
                let n = row.len();
                proptest::collection::vec(proptest::collection::vec(0u64..100_000, n), 1..6)
            })) {
                let n_days = counts[0].len();
                let days: Vec<NaiveDate> = (0..n_days)
                    .map(|d| NaiveDate::from_ymd_opt(2018, 10, 1 + d as u32).unwrap())
                    .collect();
                let pois = (0..counts.len()).map(|i| PoiId::new(format!("poi{i:03}")).unwrap()).collect();
                let panel = TrafficPanel::new(pois, days, counts.concat()).unwrap();
                let mut first = Vec::new();
                write_traffic_panel(&mut first, &panel).unwrap();
                let back = read_traffic_panel(first.as_slice(), Path::new("t.csv")).unwrap();
                prop_assert_eq!(&back, &panel);
                let mut second = Vec::new();
                write_traffic_panel(&mut second, &back).unwrap();
                prop_assert_eq!(first, second);
            }
        }
    }
}
