//! Matching polling-location crosswalk entries to POIs.
//!
//! Candidate generation is a local stand-in for a vendor matcher: within the
//! same state and (zip or city) block, the POIs with the highest name-token
//! Jaccard similarity are kept, ties broken by the smaller street-address
//! token distance. The filters after that are the substance:
//!
//! 1. candidate found
//! 2. address token distance below the threshold
//! 3. exactly one surviving candidate
//! 4. precinct name resolves against the administrative precinct ids
//! 5. POI category not excluded

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Table;
use crate::model::{CrosswalkEntry, PoiCategory, PoiDirectory, PoiId, ResolvedCrosswalk};

fn canonical_suffix(token: &str) -> &str {
    match token {
        "ST" | "STR" => "STREET",
        "RD" => "ROAD",
        "CIR" => "CIRCLE",
        "AVE" | "AV" => "AVENUE",
        "DR" => "DRIVE",
        other => other,
    }
}

/// Uppercases, strips punctuation and canonicalises common street suffixes.
pub fn normalize_address(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .filter(|c| !matches!(c, '.' | '\''))
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                ' '
            }
        })
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| canonical_suffix(t).to_string())
        .collect()
}

/// Multiset edit distance with unit substitution cost:
/// `max(|a|, |b|) - |a ∩ b|`.
pub fn token_distance(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in a {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0;
    for t in b {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    a.len().max(b.len()) - common
}

/// Uppercase, drop `WARD`, strip leading zeros from numeric tokens, collapse
/// whitespace.
pub fn normalize_precinct(raw: &str) -> String {
    raw.split_whitespace()
        .map(|t| t.to_ascii_uppercase())
        .filter(|t| t != "WARD")
        .map(|t| {
            if t.chars().all(|c| c.is_ascii_digit()) {
                let trimmed = t.trim_start_matches('0');
                if trimmed.is_empty() {
                    "0".to_string()
                } else {
                    trimmed.to_string()
                }
            } else {
                t
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn name_tokens(raw: &str) -> BTreeSet<String> {
    normalize_address(raw).into_iter().collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchCandidate {
    pub precinct_id: String,
    pub poi_id: PoiId,
    pub name_similarity: f64,
    pub address_token_distance: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkageStage {
    Candidate,
    AddressFilter,
    UniqueCandidate,
    PrecinctResolved,
    CategoryFilter,
}

impl LinkageStage {
    pub const ALL: [LinkageStage; 5] = [
        LinkageStage::Candidate,
        LinkageStage::AddressFilter,
        LinkageStage::UniqueCandidate,
        LinkageStage::PrecinctResolved,
        LinkageStage::CategoryFilter,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LinkageStage::Candidate => "candidate",
            LinkageStage::AddressFilter => "address-filter",
            LinkageStage::UniqueCandidate => "unique-candidate",
            LinkageStage::PrecinctResolved => "precinct-resolved",
            LinkageStage::CategoryFilter => "category-filter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkageFunnel {
    pub initial: usize,
    pub stage_names: Vec<String>,
    pub counts: Vec<usize>,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrecinctDecision {
    pub precinct_id: String,
    /// First stage the precinct failed, `None` when it was resolved.
    pub dropped_at: Option<LinkageStage>,
    pub candidates: Vec<MatchCandidate>,
}

#[derive(Debug, Clone)]
pub struct LinkageConfig {
    /// Matches whose address distance is at least this are removed.
    pub token_threshold: usize,
    pub exclude_categories: BTreeSet<PoiCategory>,
    /// Minimum name similarity for a candidate to exist at all.
    pub min_name_similarity: f64,
}

impl Default for LinkageConfig {
    fn default() -> Self {
        LinkageConfig {
            token_threshold: 3,
            exclude_categories: BTreeSet::from([PoiCategory::School]),
            min_name_similarity: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkageOutcome {
    pub resolved: ResolvedCrosswalk,
    pub funnel: LinkageFunnel,
    pub decisions: Vec<PrecinctDecision>,
}

struct IndexedPoi {
    name: BTreeSet<String>,
    address: Vec<String>,
}

fn block_key(s: &str) -> String {
    s.split_whitespace()
        .map(|t| t.to_ascii_uppercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Links crosswalk entries to directory POIs.
///
/// `admin_precincts` are the precinct ids as spelled in the administrative
/// records; when given, a crosswalk precinct survives stage 4 only if some
/// admin id normalises to the same string, and the resolved map is keyed by
/// those admin spellings. Without it, stage 4 passes everything and the map
/// is keyed by crosswalk precinct id.
pub fn match_pois(
    crosswalk: &[CrosswalkEntry],
    directory: &PoiDirectory,
    admin_precincts: Option<&BTreeSet<String>>,
    config: &LinkageConfig,
) -> Result<LinkageOutcome> {
    if directory.is_empty() {
        return Err(Error::invalid("empty POI directory"));
    }

    let entries = directory.entries();
    let indexed: Vec<IndexedPoi> = entries
        .iter()
        .map(|e| IndexedPoi {
            name: name_tokens(&e.name),
            address: normalize_address(&e.street_address),
        })
        .collect();
    let mut by_zip: HashMap<(String, String), Vec<usize>> = HashMap::new();
    let mut by_city: HashMap<(String, String), Vec<usize>> = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        let state = block_key(&e.state);
        by_zip
            .entry((state.clone(), e.zip.trim().to_string()))
            .or_default()
            .push(i);
        by_city
            .entry((state, block_key(&e.city)))
            .or_default()
            .push(i);
    }

    let admin_by_norm: Option<BTreeMap<String, Vec<&String>>> = admin_precincts.map(|set| {
        let mut m: BTreeMap<String, Vec<&String>> = BTreeMap::new();
        for p in set {
            m.entry(normalize_precinct(p)).or_default().push(p);
        }
        m
    });

    let decisions: Vec<PrecinctDecision> = crosswalk
        .par_iter()
        .map(|entry| {
            let state = block_key(&entry.state);
            let mut block: BTreeSet<usize> = BTreeSet::new();
            if let Some(v) = by_zip.get(&(state.clone(), entry.zip.trim().to_string())) {
                block.extend(v);
            }
            if let Some(v) = by_city.get(&(state, block_key(&entry.city))) {
                block.extend(v);
            }

            let name = name_tokens(&entry.location_name);
            let address = normalize_address(&entry.street_address);
            let mut best: Vec<MatchCandidate> = Vec::new();
            for &i in &block {
                let sim = jaccard(&name, &indexed[i].name);
                if sim <= config.min_name_similarity {
                    continue;
                }
                let cand = MatchCandidate {
                    precinct_id: entry.precinct_id.clone(),
                    poi_id: entries[i].poi_id.clone(),
                    name_similarity: sim,
                    address_token_distance: token_distance(&address, &indexed[i].address),
                };
                let better = match best.first() {
                    None => true,
                    Some(b) => {
                        sim > b.name_similarity
                            || (sim == b.name_similarity
                                && cand.address_token_distance < b.address_token_distance)
                    }
                };
                let tie = best.first().is_some_and(|b| {
                    sim == b.name_similarity
                        && cand.address_token_distance == b.address_token_distance
                });
                if better {
                    best.clear();
                    best.push(cand);
                } else if tie {
                    best.push(cand);
                }
            }

            let decide =
                |stage: Option<LinkageStage>, candidates: Vec<MatchCandidate>| PrecinctDecision {
                    precinct_id: entry.precinct_id.clone(),
                    dropped_at: stage,
                    candidates,
                };
            if best.is_empty() {
                return decide(Some(LinkageStage::Candidate), best);
            }
            let surviving: Vec<&MatchCandidate> = best
                .iter()
                .filter(|c| c.address_token_distance < config.token_threshold)
                .collect();
            if surviving.is_empty() {
                return decide(Some(LinkageStage::AddressFilter), best);
            }
            if surviving.len() > 1 {
                return decide(Some(LinkageStage::UniqueCandidate), best);
            }
            if let Some(m) = &admin_by_norm {
                if !m.contains_key(&normalize_precinct(&entry.precinct_id)) {
                    return decide(Some(LinkageStage::PrecinctResolved), best);
                }
            }
            let poi = surviving[0].poi_id.clone();
            let category = directory
                .get(&poi)
                .map(|e| e.category)
                .unwrap_or(PoiCategory::Other);
            if config.exclude_categories.contains(&category) {
                return decide(Some(LinkageStage::CategoryFilter), best);
            }
            decide(None, best)
        })
        .collect();

    let mut resolved = ResolvedCrosswalk::new();
    for d in decisions.iter().filter(|d| d.dropped_at.is_none()) {
        let poi = d
            .candidates
            .iter()
            .find(|c| c.address_token_distance < config.token_threshold)
            .map(|c| c.poi_id.clone())
            .expect("resolved precinct has a surviving candidate");
        match &admin_by_norm {
            Some(m) => {
                for admin_id in &m[&normalize_precinct(&d.precinct_id)] {
                    if let Some(prev) = resolved.insert((*admin_id).clone(), poi.clone()) {
                        if prev != poi {
                            return Err(Error::AmbiguousPrecinct((*admin_id).clone()));
                        }
                    }
                }
            }
            None => {
                resolved.insert(d.precinct_id.clone(), poi);
            }
        }
    }

    let initial = crosswalk.len();
    let counts: Vec<usize> = LinkageStage::ALL
        .iter()
        .map(|stage| {
            decisions
                .iter()
                .filter(|d| d.dropped_at.is_none_or(|s| s > *stage))
                .count()
        })
        .collect();
    let rates = counts
        .iter()
        .map(|&c| {
            if initial == 0 {
                0.0
            } else {
                c as f64 / initial as f64
            }
        })
        .collect();
    let funnel = LinkageFunnel {
        initial,
        stage_names: LinkageStage::ALL
            .iter()
            .map(|s| s.as_str().to_string())
            .collect(),
        counts,
        rates,
    };
    Ok(LinkageOutcome {
        resolved,
        funnel,
        decisions,
    })
}

/// `linkage_funnel.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelRow {
    pub stage: String,
    pub count: usize,
    pub rate: f64,
}

impl Table for FunnelRow {
    const HEADER: &'static [&'static str] = &["stage", "count", "rate"];
}

impl LinkageFunnel {
    pub fn rows(&self) -> Vec<FunnelRow> {
        self.stage_names
            .iter()
            .zip(&self.counts)
            .zip(&self.rates)
            .map(|((stage, &count), &rate)| FunnelRow {
                stage: stage.clone(),
                count,
                rate,
            })
            .collect()
    }
}
