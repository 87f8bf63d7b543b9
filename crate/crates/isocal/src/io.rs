//! File formats and artifact plumbing: edge-list / score CSVs, report and
//! partition JSON, audit fixtures, metrics emission, config loading, and
//! run manifests with content digests.
//!
//! All writers go through an atomic temp-file-then-rename path, and every
//! JSON artifact can embed a [`RunManifest`] whose hash covers the
//! command, resolved config, seed, and input digests.

use crate::experiment::{ExperimentError, MetricsReport, TradeoffReport};
use crate::incentive::{
    best_response, AuditResult, CalibratorSpec, ExpectationMode, IncentiveError, NoiseModel,
    UtilityModel,
};
use crate::isotonic::{IsotonicError, Ranking, ScoreVector};
use crate::mechanism::{MechanismError, OwnerCredentials, ReportProfile};
use crate::ownership::{OwnershipError, OwnershipGraph, Partition};
use crate::partition::{
    greedy_partition, PartitionError, PartitionObjectiveReport, SizeObjective,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Ownership(#[from] OwnershipError),
    #[error(transparent)]
    Isotonic(#[from] IsotonicError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("{path}: expected header {expected:?}, got {got:?}")]
    BadHeader {
        path: String,
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("{path}:{line}: expected {expected} fields, got {got}")]
    BadFieldCount {
        path: String,
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: cannot parse {field} value {value:?} as a number")]
    BadNumber {
        path: String,
        line: u64,
        field: String,
        value: String,
    },
    #[error("{path}:{line}: duplicate edge ({owner}, {item}) first seen on line {first_line}")]
    DuplicateEdgeAt {
        path: String,
        line: u64,
        first_line: u64,
        owner: String,
        item: String,
    },
    #[error("{path}: no data rows")]
    EmptyTable { path: String },
    #[error("{path}:{line}: unknown {what} id {value:?}")]
    UnknownId {
        path: String,
        line: u64,
        what: String,
        value: String,
    },
    #[error("{path}:{line}: duplicate score for item {item:?}")]
    DuplicateScore {
        path: String,
        line: u64,
        item: String,
    },
    #[error("{path}: missing score for item {item:?}")]
    MissingScore { path: String, item: String },
    #[error("{path}: cannot determine config format; use a .toml or .json extension")]
    UnknownConfigFormat { path: String },
    #[error("{path}: {message}")]
    ConfigParse { path: String, message: String },
    #[error("partition file block {block} stores owners {stored:?} but the graph implies {computed:?}")]
    StoredOwnersMismatch {
        block: usize,
        stored: Vec<usize>,
        computed: Vec<usize>,
    },
    #[error("audit fixture names unknown mechanism {name:?} (use complete, naive, or partition)")]
    UnknownMechanism { name: String },
    #[error("audit fixture owner {owner} is out of range for {num_owners} owners")]
    AuditOwnerOutOfRange { owner: usize, num_owners: usize },
    #[error("failed to persist {path}: {message}")]
    Persist { path: String, message: String },
}

fn display_path(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------------------
// Hashing, manifests, atomic writes
// ---------------------------------------------------------------------------

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Provenance record embedded in emitted artifacts. The hash covers every
/// field with the hash itself blanked, so artifacts can be traced back to
/// the exact command, config, seed, and inputs that produced them.
/// Wall-clock timings are opt-in because they break byte-level
/// reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub input_digests: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
    pub manifest_hash: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: serde_json::Value, version: &str) -> Self {
        Self {
            command: command.into(),
            config,
            input_digests: BTreeMap::new(),
            seed: None,
            version: version.to_string(),
            timings_ms: None,
            manifest_hash: String::new(),
        }
    }

    pub fn digest_input(&mut self, path: &Path) -> Result<(), IoError> {
        self.input_digests
            .insert(display_path(path), sha256_file(path)?);
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn set_timings(&mut self, timings_ms: BTreeMap<String, f64>) {
        self.timings_ms = Some(timings_ms);
    }

    /// Computes the manifest hash; call after all other fields are final.
    pub fn finalize(mut self) -> Self {
        self.manifest_hash.clear();
        let serialized = serde_json::to_vec(&self).expect("manifest serializes");
        self.manifest_hash = sha256_hex(&serialized);
        self
    }
}

/// Writes bytes to a temp file in the target directory, then renames over
/// the destination, so readers never observe partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut file = tempfile::NamedTempFile::new_in(dir)?;
    file.write_all(bytes)?;
    file.persist(path).map_err(|e| IoError::Persist {
        path: display_path(path),
        message: e.error.to_string(),
    })?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    write_atomic(path, &body)
}

// ---------------------------------------------------------------------------
// Edge-list CSV
// ---------------------------------------------------------------------------

/// Original string ids in first-seen order; index = dense id used by the
/// graph. Present only when an ingested column was not fully numeric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdMapping {
    pub owners: Vec<String>,
    pub items: Vec<String>,
}

impl IdMapping {
    pub fn owner_label(&self, id: usize) -> String {
        self.owners
            .get(id)
            .cloned()
            .unwrap_or_else(|| id.to_string())
    }

    pub fn item_label(&self, id: usize) -> String {
        self.items.get(id).cloned().unwrap_or_else(|| id.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: OwnershipGraph,
    /// Present when owner or item ids were strings.
    pub mapping: Option<IdMapping>,
}

fn check_header(
    path: &Path,
    headers: &csv::StringRecord,
    expected: &[&str],
) -> Result<(), IoError> {
    let got: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if got != expected {
        return Err(IoError::BadHeader {
            path: display_path(path),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            got,
        });
    }
    Ok(())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Resolves one id column: all-numeric columns keep their numeric values;
/// otherwise ids are assigned densely in first-seen order and the original
/// strings are returned for the sidecar mapping.
fn resolve_ids(raw: &[String]) -> (Vec<usize>, Option<Vec<String>>) {
    let numeric: Option<Vec<usize>> = raw.iter().map(|s| s.parse::<usize>().ok()).collect();
    if let Some(ids) = numeric {
        return (ids, None);
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut ids = Vec::with_capacity(raw.len());
    for value in raw {
        let next = labels.len();
        let id = *seen.entry(value.as_str()).or_insert_with(|| {
            labels.push(value.clone());
            next
        });
        ids.push(id);
    }
    (ids, Some(labels))
}

/// Reads an `owner_id,item_id` CSV into an ownership graph. Ids may be
/// numbers (used directly, sizing the graph as max+1) or arbitrary strings
/// (mapped densely in first-seen order, reported via the mapping).
pub fn read_edge_csv(path: &Path) -> Result<LoadedGraph, IoError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    check_header(path, reader.headers()?, &["owner_id", "item_id"])?;
    let mut raw_owners = Vec::new();
    let mut raw_items = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != 2 {
            return Err(IoError::BadFieldCount {
                path: display_path(path),
                line,
                expected: 2,
                got: record.len(),
            });
        }
        raw_owners.push(record[0].trim().to_string());
        raw_items.push(record[1].trim().to_string());
        lines.push(line);
    }
    if raw_owners.is_empty() {
        return Err(IoError::EmptyTable {
            path: display_path(path),
        });
    }
    let (owner_ids, owner_labels) = resolve_ids(&raw_owners);
    let (item_ids, item_labels) = resolve_ids(&raw_items);
    let mut first_seen: HashMap<(usize, usize), u64> = HashMap::new();
    let mut edges = Vec::with_capacity(owner_ids.len());
    for i in 0..owner_ids.len() {
        let key = (owner_ids[i], item_ids[i]);
        if let Some(&first_line) = first_seen.get(&key) {
            return Err(IoError::DuplicateEdgeAt {
                path: display_path(path),
                line: lines[i],
                first_line,
                owner: raw_owners[i].clone(),
                item: raw_items[i].clone(),
            });
        }
        first_seen.insert(key, lines[i]);
        edges.push(key);
    }
    let num_owners = match &owner_labels {
        Some(labels) => labels.len(),
        None => owner_ids.iter().max().unwrap() + 1,
    };
    let num_items = match &item_labels {
        Some(labels) => labels.len(),
        None => item_ids.iter().max().unwrap() + 1,
    };
    let graph = OwnershipGraph::new(num_owners, num_items, &edges)?;
    let mapping = if owner_labels.is_some() || item_labels.is_some() {
        Some(IdMapping {
            owners: owner_labels
                .unwrap_or_else(|| (0..num_owners).map(|i| i.to_string()).collect()),
            items: item_labels
                .unwrap_or_else(|| (0..num_items).map(|i| i.to_string()).collect()),
        })
    } else {
        None
    };
    Ok(LoadedGraph { graph, mapping })
}

/// Writes the graph back out as an `owner_id,item_id` CSV with numeric ids
/// (or original labels when a mapping is supplied).
pub fn write_edge_csv(
    path: &Path,
    g: &OwnershipGraph,
    mapping: Option<&IdMapping>,
) -> Result<(), IoError> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer.write_record(["owner_id", "item_id"])?;
        for (owner, item) in g.edges() {
            match mapping {
                Some(m) => writer.write_record([m.owner_label(owner), m.item_label(item)])?,
                None => writer.write_record([owner.to_string(), item.to_string()])?,
            }
        }
        writer.flush()?;
    }
    write_atomic(path, &buffer)
}

// ---------------------------------------------------------------------------
// Score CSV
// ---------------------------------------------------------------------------

fn lookup_item(
    path: &Path,
    line: u64,
    value: &str,
    num_items: usize,
    mapping: Option<&IdMapping>,
) -> Result<usize, IoError> {
    let id = match mapping {
        Some(m) => m.items.iter().position(|label| label == value),
        None => value.parse::<usize>().ok().filter(|&i| i < num_items),
    };
    id.ok_or_else(|| IoError::UnknownId {
        path: display_path(path),
        line,
        what: "item".into(),
        value: value.to_string(),
    })
}

/// Reads an `item_id,score` CSV covering every item exactly once.
pub fn read_score_csv(
    path: &Path,
    num_items: usize,
    mapping: Option<&IdMapping>,
) -> Result<ScoreVector, IoError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    check_header(path, reader.headers()?, &["item_id", "score"])?;
    let mut scores: Vec<Option<f64>> = vec![None; num_items];
    let mut any = false;
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != 2 {
            return Err(IoError::BadFieldCount {
                path: display_path(path),
                line,
                expected: 2,
                got: record.len(),
            });
        }
        any = true;
        let raw_id = record[0].trim();
        let item = lookup_item(path, line, raw_id, num_items, mapping)?;
        let value: f64 = record[1].trim().parse().map_err(|_| IoError::BadNumber {
            path: display_path(path),
            line,
            field: "score".into(),
            value: record[1].to_string(),
        })?;
        if scores[item].is_some() {
            return Err(IoError::DuplicateScore {
                path: display_path(path),
                line,
                item: raw_id.to_string(),
            });
        }
        scores[item] = Some(value);
    }
    if !any {
        return Err(IoError::EmptyTable {
            path: display_path(path),
        });
    }
    let mut out = Vec::with_capacity(num_items);
    for (item, slot) in scores.into_iter().enumerate() {
        match slot {
            Some(v) => out.push(v),
            None => {
                return Err(IoError::MissingScore {
                    path: display_path(path),
                    item: mapping
                        .map(|m| m.item_label(item))
                        .unwrap_or_else(|| item.to_string()),
                })
            }
        }
    }
    Ok(ScoreVector::new(out)?)
}

/// Writes the calibration result as `item_id,raw,adjusted`.
pub fn write_calibration_csv(
    path: &Path,
    raw: &ScoreVector,
    adjusted: &ScoreVector,
    mapping: Option<&IdMapping>,
) -> Result<(), IoError> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer.write_record(["item_id", "raw", "adjusted"])?;
        for item in 0..raw.len() {
            let label = mapping
                .map(|m| m.item_label(item))
                .unwrap_or_else(|| item.to_string());
            writer.write_record([
                label,
                format!("{}", raw.values()[item]),
                format!("{}", adjusted.values()[item]),
            ])?;
        }
        writer.flush()?;
    }
    write_atomic(path, &buffer)
}

// ---------------------------------------------------------------------------
// Reports JSON
// ---------------------------------------------------------------------------

/// A numeric dense id or an original string label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IdRef {
    Num(usize),
    Name(String),
}

impl IdRef {
    fn resolve(
        &self,
        labels: Option<&[String]>,
        bound: usize,
        path: &Path,
        what: &str,
    ) -> Result<usize, IoError> {
        let found = match (self, labels) {
            (IdRef::Num(i), None) if *i < bound => Some(*i),
            (IdRef::Num(i), Some(l)) => {
                // With a mapping, numeric JSON values may still be labels.
                let text = i.to_string();
                l.iter().position(|x| *x == text).or(Some(*i).filter(|&i| i < bound))
            }
            (IdRef::Name(s), Some(l)) => l.iter().position(|x| x == s),
            (IdRef::Name(s), None) => s.parse::<usize>().ok().filter(|&i| i < bound),
            _ => None,
        };
        found.ok_or_else(|| IoError::UnknownId {
            path: display_path(path),
            line: 0,
            what: what.into(),
            value: match self {
                IdRef::Num(i) => i.to_string(),
                IdRef::Name(s) => s.clone(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub owner_id: IdRef,
    pub ranking: Vec<IdRef>,
}

/// Reads owner rankings from a JSON array of {owner_id, ranking} objects.
pub fn read_reports_json(
    path: &Path,
    g: &OwnershipGraph,
    mapping: Option<&IdMapping>,
) -> Result<Vec<(usize, Ranking)>, IoError> {
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<ReportEntry> = serde_json::from_str(&text)?;
    let owner_labels = mapping.map(|m| m.owners.as_slice());
    let item_labels = mapping.map(|m| m.items.as_slice());
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let owner = entry
            .owner_id
            .resolve(owner_labels, g.num_owners(), path, "owner")?;
        let mut order = Vec::with_capacity(entry.ranking.len());
        for id in &entry.ranking {
            order.push(id.resolve(item_labels, g.num_items(), path, "item")?);
        }
        out.push((owner, Ranking::new(order)?));
    }
    Ok(out)
}

pub fn write_reports_json(
    path: &Path,
    reports: &[(usize, Ranking)],
    mapping: Option<&IdMapping>,
) -> Result<(), IoError> {
    let entries: Vec<ReportEntry> = reports
        .iter()
        .map(|(owner, ranking)| ReportEntry {
            owner_id: match mapping {
                Some(m) => IdRef::Name(m.owner_label(*owner)),
                None => IdRef::Num(*owner),
            },
            ranking: ranking
                .order()
                .iter()
                .map(|&i| match mapping {
                    Some(m) => IdRef::Name(m.item_label(i)),
                    None => IdRef::Num(i),
                })
                .collect(),
        })
        .collect();
    write_json_atomic(path, &entries)
}

// ---------------------------------------------------------------------------
// Partition JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionBlockEntry {
    pub items: Vec<usize>,
    pub owners: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strong_l: Option<usize>,
    pub blocks: Vec<PartitionBlockEntry>,
    /// Primary objective (first of `objectives`).
    pub objective: ObjectiveValue,
    /// Both built-in objectives evaluated on these blocks.
    pub objectives: Vec<ObjectiveValue>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub manifest: Option<RunManifest>,
}

/// Builds the emission record: the primary objective first, followed by
/// any built-in objectives not already covered.
pub fn partition_to_file(
    p: &Partition,
    method: &str,
    strong_l: Option<usize>,
    primary: &SizeObjective,
    manifest: Option<RunManifest>,
) -> PartitionFile {
    let blocks = p
        .blocks()
        .iter()
        .enumerate()
        .map(|(k, items)| PartitionBlockEntry {
            items: items.clone(),
            owners: p.common_owners(k).to_vec(),
        })
        .collect();
    let mut objectives: Vec<ObjectiveValue> = vec![ObjectiveValue {
        name: primary.name(),
        value: crate::partition::objective(p, primary),
    }];
    for w in [SizeObjective::Comparison, SizeObjective::SizeFocused] {
        if !objectives.iter().any(|o| o.name == w.name()) {
            objectives.push(ObjectiveValue {
                name: w.name(),
                value: crate::partition::objective(p, &w),
            });
        }
    }
    PartitionFile {
        method: method.to_string(),
        strong_l,
        blocks,
        objective: objectives[0].clone(),
        objectives,
        manifest,
    }
}

pub fn write_partition_json(
    path: &Path,
    p: &Partition,
    method: &str,
    strong_l: Option<usize>,
    primary: &SizeObjective,
    manifest: Option<RunManifest>,
) -> Result<(), IoError> {
    write_json_atomic(
        path,
        &partition_to_file(p, method, strong_l, primary, manifest),
    )
}

/// Reads a partition file and revalidates it against the graph. Stored
/// common-owner sets, when present and nonempty, must match the graph.
pub fn read_partition_json(path: &Path, g: &OwnershipGraph) -> Result<Partition, IoError> {
    let text = std::fs::read_to_string(path)?;
    let file: PartitionFile = serde_json::from_str(&text)?;
    let blocks: Vec<Vec<usize>> = file.blocks.iter().map(|b| b.items.clone()).collect();
    let partition = Partition::new(g, blocks)?;
    for (k, entry) in file.blocks.iter().enumerate() {
        if !entry.owners.is_empty() {
            let mut stored = entry.owners.clone();
            stored.sort_unstable();
            // Blocks may have been reordered by validation; find the
            // matching block by items.
            let mut items = entry.items.clone();
            items.sort_unstable();
            let idx = partition
                .blocks()
                .iter()
                .position(|b| *b == items)
                .unwrap_or(k);
            if stored != partition.common_owners(idx) {
                return Err(IoError::StoredOwnersMismatch {
                    block: k,
                    stored,
                    computed: partition.common_owners(idx).to_vec(),
                });
            }
        }
    }
    Ok(partition)
}

// ---------------------------------------------------------------------------
// Audit fixtures and reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedReport {
    pub owner_id: usize,
    pub ranking: Vec<usize>,
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_mode() -> ExpectationMode {
    ExpectationMode::Exact
}

/// A self-contained audit instance: graph, true scores, noise, utilities,
/// the mechanism to audit, and optionally some owners' forced
/// (non-truthful) reports. Owners without forced reports are audited
/// against the rest reporting truthfully (or as forced).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    pub num_items: usize,
    /// Item set per owner.
    pub owner_sets: Vec<Vec<usize>>,
    pub true_scores: Vec<f64>,
    pub noise: NoiseModel,
    /// One utility model per owner.
    pub utilities: Vec<UtilityModel>,
    #[serde(default)]
    pub credentials: Option<Vec<f64>>,
    /// "complete", "naive", or "partition".
    pub mechanism: String,
    /// Blocks for the partition mechanism; greedy on the graph if absent.
    #[serde(default)]
    pub partition_blocks: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub forced_reports: Vec<ForcedReport>,
    /// Owners to audit; defaults to every owner without a forced report.
    #[serde(default)]
    pub audit_owners: Option<Vec<usize>>,
    #[serde(default = "default_mode")]
    pub mode: ExpectationMode,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

pub fn read_audit_spec(path: &Path) -> Result<AuditSpec, IoError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Materialized audit outcome: one result per audited owner.
#[derive(Debug, Clone)]
pub struct AuditRun {
    pub mechanism: String,
    pub results: Vec<AuditResult>,
    pub all_truthful: bool,
}

/// Runs the fixture, optionally overriding its mechanism name.
pub fn run_audit_spec(
    spec: &AuditSpec,
    mechanism_override: Option<&str>,
) -> Result<AuditRun, IoError> {
    let g = OwnershipGraph::from_owner_sets(&spec.owner_sets, spec.num_items)?;
    let cred = match &spec.credentials {
        Some(alpha) => OwnerCredentials::new(alpha.clone())?,
        None => OwnerCredentials::uniform(g.num_owners()),
    };
    let mechanism_name = mechanism_override.unwrap_or(&spec.mechanism).to_string();
    let mech = match mechanism_name.as_str() {
        "complete" => CalibratorSpec::CompleteOverlap { cred },
        "naive" => CalibratorSpec::NaiveAverage,
        "partition" => {
            let partition = match &spec.partition_blocks {
                Some(blocks) => Partition::new(&g, blocks.clone())?,
                None => greedy_partition(&g),
            };
            CalibratorSpec::Partition { partition, cred }
        }
        other => {
            return Err(IoError::UnknownMechanism {
                name: other.to_string(),
            })
        }
    };
    let r_true = ScoreVector::new(spec.true_scores.clone())?;
    let mut others = ReportProfile::truthful(&g, r_true.values())?;
    for forced in &spec.forced_reports {
        if forced.owner_id >= g.num_owners() {
            return Err(IoError::AuditOwnerOutOfRange {
                owner: forced.owner_id,
                num_owners: g.num_owners(),
            });
        }
        others.insert(forced.owner_id, Ranking::new(forced.ranking.clone())?);
    }
    let targets: Vec<usize> = match &spec.audit_owners {
        Some(owners) => owners.clone(),
        None => (0..g.num_owners())
            .filter(|o| !spec.forced_reports.iter().any(|f| f.owner_id == *o))
            .collect(),
    };
    let mut results = Vec::with_capacity(targets.len());
    for &owner in &targets {
        if owner >= g.num_owners() {
            return Err(IoError::AuditOwnerOutOfRange {
                owner,
                num_owners: g.num_owners(),
            });
        }
        let utility = spec
            .utilities
            .get(owner)
            .ok_or(IncentiveError::UtilityCount {
                expected: g.num_owners(),
                got: spec.utilities.len(),
            })?;
        results.push(best_response(
            &mech,
            &g,
            &r_true,
            &spec.noise,
            &others,
            owner,
            utility,
            spec.tolerance,
            spec.mode,
        )?);
    }
    let all_truthful = results.iter().all(|r| r.truthful_is_best);
    Ok(AuditRun {
        mechanism: mechanism_name,
        results,
        all_truthful,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub ranking: Vec<usize>,
    pub utility: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntryFile {
    pub owner: usize,
    pub truthful_is_best: bool,
    pub gap: f64,
    pub best_reports: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub utility_table: Option<Vec<UtilityRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFile {
    pub mechanism: String,
    pub tolerance: f64,
    pub all_truthful: bool,
    pub results: Vec<AuditEntryFile>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub manifest: Option<RunManifest>,
}

/// Converts an audit run for emission; the factorial-sized utility tables
/// are included only on request.
pub fn audit_to_file(
    run: &AuditRun,
    tolerance: f64,
    full_table: bool,
    manifest: Option<RunManifest>,
) -> AuditFile {
    AuditFile {
        mechanism: run.mechanism.clone(),
        tolerance,
        all_truthful: run.all_truthful,
        results: run
            .results
            .iter()
            .map(|r| AuditEntryFile {
                owner: r.owner,
                truthful_is_best: r.truthful_is_best,
                gap: r.gap,
                best_reports: r
                    .best_reports
                    .iter()
                    .map(|rk| rk.order().to_vec())
                    .collect(),
                utility_table: full_table.then(|| {
                    r.utility_table
                        .iter()
                        .map(|e| UtilityRow {
                            ranking: e.ranking.order().to_vec(),
                            utility: e.utility,
                            std_error: e.std_error,
                        })
                        .collect()
                }),
            })
            .collect(),
        manifest,
    }
}

// ---------------------------------------------------------------------------
// Metrics emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub report: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub manifest: Option<RunManifest>,
}

/// Flat per-trial table: `trial,method,metric,value`.
pub fn metrics_csv_bytes(report: &MetricsReport) -> Result<Vec<u8>, IoError> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer.write_record(["trial", "method", "metric", "value"])?;
        for row in &report.trial_rows {
            writer.write_record([
                row.trial.to_string(),
                row.method.clone(),
                "mse".to_string(),
                format!("{}", row.mse),
            ])?;
            if let Some(pct) = row.pct_change {
                writer.write_record([
                    row.trial.to_string(),
                    row.method.clone(),
                    "pct_change".to_string(),
                    format!("{pct}"),
                ])?;
            }
            for (label, value) in &row.accept_accuracy {
                writer.write_record([
                    row.trial.to_string(),
                    row.method.clone(),
                    format!("accept_accuracy@{label}"),
                    format!("{value}"),
                ])?;
            }
        }
        writer.flush()?;
    }
    Ok(buffer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffFile {
    pub report: TradeoffReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub manifest: Option<RunManifest>,
}

/// Flat sweep table: `sigma,perception_sd,level,trial,mse`.
pub fn tradeoff_csv_bytes(report: &TradeoffReport) -> Result<Vec<u8>, IoError> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer.write_record(["sigma", "perception_sd", "level", "trial", "mse"])?;
        for cell in &report.cells {
            for (trial, value) in cell.per_trial.iter().enumerate() {
                writer.write_record([
                    format!("{}", cell.sigma),
                    format!("{}", cell.perception_sd),
                    cell.level.to_string(),
                    trial.to_string(),
                    format!("{value}"),
                ])?;
            }
        }
        writer.flush()?;
    }
    Ok(buffer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub reports: Vec<PartitionObjectiveReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub manifest: Option<RunManifest>,
}

/// Flat benchmark table: `method,objective,value,blocks,largest_block`.
pub fn benchmark_csv_bytes(reports: &[PartitionObjectiveReport]) -> Result<Vec<u8>, IoError> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer.write_record(["method", "objective", "value", "blocks", "largest_block"])?;
        for r in reports {
            writer.write_record([
                r.method.clone(),
                r.objective_name.clone(),
                format!("{}", r.objective_value),
                r.block_sizes.len().to_string(),
                r.block_sizes.first().copied().unwrap_or(0).to_string(),
            ])?;
        }
        writer.flush()?;
    }
    Ok(buffer)
}

// ---------------------------------------------------------------------------
// Config loading
// ---------------------------------------------------------------------------

/// Loads a config file; TOML is primary, JSON is accepted. Unknown
/// extensions try TOML first, then JSON.
pub fn read_config_file<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path)?;
    let extension = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let parse_toml = |text: &str| -> Result<T, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    let parse_json = |text: &str| -> Result<T, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    };
    match extension.as_deref() {
        Some("toml") => parse_toml(&text).map_err(|message| IoError::ConfigParse {
            path: display_path(path),
            message,
        }),
        Some("json") => parse_json(&text).map_err(|message| IoError::ConfigParse {
            path: display_path(path),
            message,
        }),
        _ => parse_toml(&text).or_else(|toml_err| {
            parse_json(&text).map_err(|json_err| IoError::ConfigParse {
                path: display_path(path),
                message: format!("not valid TOML ({toml_err}) or JSON ({json_err})"),
            })
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::ExperimentConfig;
    use crate::incentive::NoiseKind;

    fn temp_dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn write(path: &Path, text: &str) {
        std::fs::write(path, text).unwrap();
    }

    #[test]
    fn numeric_edge_csv_round_trip() {
        let dir = temp_dir();
        let path = dir.path().join("edges.csv");
        write(&path, "owner_id,item_id\n0,0\n0,1\n1,0\n1,1\n2,1\n2,2\n");
        let loaded = read_edge_csv(&path).unwrap();
        assert!(loaded.mapping.is_none());
        assert_eq!(loaded.graph.num_owners(), 3);
        assert_eq!(loaded.graph.num_items(), 3);
        assert_eq!(loaded.graph.items_of(2), &[1, 2]);
        let out = dir.path().join("copy.csv");
        write_edge_csv(&out, &loaded.graph, None).unwrap();
        let reloaded = read_edge_csv(&out).unwrap();
        assert_eq!(reloaded.graph, loaded.graph);
    }

    #[test]
    fn string_ids_map_in_first_seen_order() {
        let dir = temp_dir();
        let path = dir.path().join("edges.csv");
        write(
            &path,
            "owner_id,item_id\nalice,paper-9\nbob,paper-9\nalice,paper-3\n",
        );
        let loaded = read_edge_csv(&path).unwrap();
        let mapping = loaded.mapping.unwrap();
        assert_eq!(mapping.owners, vec!["alice", "bob"]);
        assert_eq!(mapping.items, vec!["paper-9", "paper-3"]);
        assert_eq!(loaded.graph.items_of(0), &[0, 1]);
        assert_eq!(loaded.graph.items_of(1), &[0]);
    }

    #[test]
    fn mixed_numeric_column_falls_back_to_string_mode() {
        let dir = temp_dir();
        let path = dir.path().join("edges.csv");
        write(&path, "owner_id,item_id\n0,x\n1,0\n");
        let loaded = read_edge_csv(&path).unwrap();
        let mapping = loaded.mapping.unwrap();
        // Owner column is numeric; item column is not, so item ids map
        // first-seen while owner labels echo the numbers.
        assert_eq!(mapping.items, vec!["x", "0"]);
        assert_eq!(mapping.owners, vec!["0", "1"]);
    }

    #[test]
    fn edge_csv_errors_are_line_numbered() {
        let dir = temp_dir();
        let bad_header = dir.path().join("h.csv");
        write(&bad_header, "owner,item\n0,0\n");
        assert!(matches!(
            read_edge_csv(&bad_header),
            Err(IoError::BadHeader { .. })
        ));
        let dup = dir.path().join("dup.csv");
        write(&dup, "owner_id,item_id\n0,0\n1,1\n0,0\n");
        match read_edge_csv(&dup) {
            Err(IoError::DuplicateEdgeAt {
                line, first_line, ..
            }) => {
                assert_eq!(line, 4);
                assert_eq!(first_line, 2);
            }
            other => panic!("expected duplicate edge error, got {other:?}"),
        }
        let empty = dir.path().join("empty.csv");
        write(&empty, "owner_id,item_id\n");
        assert!(matches!(
            read_edge_csv(&empty),
            Err(IoError::EmptyTable { .. })
        ));
    }

    #[test]
    fn score_csv_reads_and_validates() {
        let dir = temp_dir();
        let path = dir.path().join("scores.csv");
        write(&path, "item_id,score\n0,9\n2,4\n1,8\n");
        let scores = read_score_csv(&path, 3, None).unwrap();
        assert_eq!(scores.values(), &[9.0, 8.0, 4.0]);

        let missing = dir.path().join("missing.csv");
        write(&missing, "item_id,score\n0,9\n1,8\n");
        assert!(matches!(
            read_score_csv(&missing, 3, None),
            Err(IoError::MissingScore { .. })
        ));
        let dup = dir.path().join("dup.csv");
        write(&dup, "item_id,score\n0,9\n0,8\n");
        assert!(matches!(
            read_score_csv(&dup, 2, None),
            Err(IoError::DuplicateScore { line: 3, .. })
        ));
        let unknown = dir.path().join("unknown.csv");
        write(&unknown, "item_id,score\n7,9\n");
        assert!(matches!(
            read_score_csv(&unknown, 2, None),
            Err(IoError::UnknownId { .. })
        ));
        let bad = dir.path().join("bad.csv");
        write(&bad, "item_id,score\n0,high\n");
        assert!(matches!(
            read_score_csv(&bad, 1, None),
            Err(IoError::BadNumber { line: 2, .. })
        ));
    }

    #[test]
    fn score_csv_with_mapping() {
        let dir = temp_dir();
        let path = dir.path().join("scores.csv");
        write(&path, "item_id,score\npaper-9,4.5\npaper-3,2.5\n");
        let mapping = IdMapping {
            owners: vec!["alice".into()],
            items: vec!["paper-9".into(), "paper-3".into()],
        };
        let scores = read_score_csv(&path, 2, Some(&mapping)).unwrap();
        assert_eq!(scores.values(), &[4.5, 2.5]);
    }

    #[test]
    fn reports_json_round_trip() {
        let dir = temp_dir();
        let g = OwnershipGraph::from_owner_sets(&[vec![0, 1], vec![1, 2]], 3).unwrap();
        let path = dir.path().join("reports.json");
        let reports = vec![
            (0usize, Ranking::new(vec![1, 0]).unwrap()),
            (1usize, Ranking::new(vec![1, 2]).unwrap()),
        ];
        write_reports_json(&path, &reports, None).unwrap();
        let loaded = read_reports_json(&path, &g, None).unwrap();
        assert_eq!(loaded, reports);
    }

    #[test]
    fn partition_json_round_trip() {
        let dir = temp_dir();
        let g =
            OwnershipGraph::from_owner_sets(&[vec![0, 1], vec![0, 1], vec![1, 2]], 3).unwrap();
        let p = Partition::new(&g, vec![vec![0, 1], vec![2]]).unwrap();
        let path = dir.path().join("partition.json");
        write_partition_json(&path, &p, "greedy", Some(1), &SizeObjective::Comparison, None)
            .unwrap();
        let loaded = read_partition_json(&path, &g).unwrap();
        assert_eq!(loaded, p);
        let text = std::fs::read_to_string(&path).unwrap();
        let file: PartitionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(file.method, "greedy");
        assert_eq!(file.objectives.len(), 2);
        assert_eq!(file.objective.value, 5.0);
    }

    #[test]
    fn partition_json_rejects_wrong_owner_annotations() {
        let dir = temp_dir();
        let g =
            OwnershipGraph::from_owner_sets(&[vec![0, 1], vec![0, 1], vec![1, 2]], 3).unwrap();
        let path = dir.path().join("partition.json");
        write(
            &path,
            r#"{"method":"greedy","blocks":[{"items":[0,1],"owners":[2]},{"items":[2],"owners":[]}],
               "objective":{"name":"comparison","value":5.0},
               "objectives":[{"name":"comparison","value":5.0}]}"#,
        );
        assert!(matches!(
            read_partition_json(&path, &g),
            Err(IoError::StoredOwnersMismatch { .. })
        ));
    }

    #[test]
    fn manifest_hash_is_deterministic_and_content_sensitive() {
        let config = serde_json::json!({"trials": 3});
        let a = RunManifest::new("simulate", config.clone(), "0.1.0").finalize();
        let b = RunManifest::new("simulate", config, "0.1.0").finalize();
        assert_eq!(a.manifest_hash, b.manifest_hash);
        let c = RunManifest::new("simulate", serde_json::json!({"trials": 4}), "0.1.0")
            .finalize();
        assert_ne!(a.manifest_hash, c.manifest_hash);
        assert_eq!(a.manifest_hash.len(), 64);
    }

    #[test]
    fn manifest_digests_inputs() {
        let dir = temp_dir();
        let path = dir.path().join("input.csv");
        write(&path, "hello");
        let mut m = RunManifest::new("partition", serde_json::Value::Null, "0.1.0");
        m.digest_input(&path).unwrap();
        let m = m.finalize();
        let digest = m.input_digests.values().next().unwrap();
        assert_eq!(digest, &sha256_hex(b"hello"));
    }

    #[test]
    fn atomic_write_replaces_existing_files() {
        let dir = temp_dir();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
    }

    #[test]
    fn config_file_formats() {
        let dir = temp_dir();
        let toml_path = dir.path().join("cfg.toml");
        write(&toml_path, "trials = 2\nnoise_sigma = 1.5\n");
        let cfg: ExperimentConfig = read_config_file(&toml_path).unwrap();
        assert_eq!(cfg.trials, 2);
        assert_eq!(cfg.noise_sigma, 1.5);

        let json_path = dir.path().join("cfg.json");
        write(&json_path, r#"{"trials": 4}"#);
        let cfg: ExperimentConfig = read_config_file(&json_path).unwrap();
        assert_eq!(cfg.trials, 4);

        let other = dir.path().join("cfg.conf");
        write(&other, r#"{"trials": 6}"#);
        let cfg: ExperimentConfig = read_config_file(&other).unwrap();
        assert_eq!(cfg.trials, 6);

        let bad = dir.path().join("bad.toml");
        write(&bad, "trials = \"many\"");
        assert!(matches!(
            read_config_file::<ExperimentConfig>(&bad),
            Err(IoError::ConfigParse { .. })
        ));
    }

    fn chain_audit_spec() -> AuditSpec {
        AuditSpec {
            num_items: 3,
            owner_sets: vec![vec![0, 1], vec![0, 1], vec![1, 2]],
            true_scores: vec![9.0, 8.0, 4.0],
            noise: NoiseModel {
                kind: NoiseKind::ExchangeableBase {
                    base: vec![0.0, 0.0, 0.0],
                },
                seed: 0,
            },
            utilities: vec![UtilityModel::Hinge { threshold: 5.0 }; 3],
            credentials: None,
            mechanism: "naive".into(),
            partition_blocks: Some(vec![vec![0, 1], vec![2]]),
            forced_reports: Vec::new(),
            audit_owners: None,
            mode: ExpectationMode::Exact,
            tolerance: 1e-9,
        }
    }

    #[test]
    fn audit_spec_runs_both_mechanisms() {
        let spec = chain_audit_spec();
        let naive = run_audit_spec(&spec, None).unwrap();
        assert!(!naive.all_truthful);
        let flagged: Vec<usize> = naive
            .results
            .iter()
            .filter(|r| !r.truthful_is_best)
            .map(|r| r.owner)
            .collect();
        assert_eq!(flagged, vec![2]);
        assert!((naive.results[2].gap - 1.0 / 3.0).abs() < 1e-12);

        let partition = run_audit_spec(&spec, Some("partition")).unwrap();
        assert!(partition.all_truthful);
    }

    #[test]
    fn audit_spec_round_trips_through_json() {
        let dir = temp_dir();
        let path = dir.path().join("audit.json");
        let spec = chain_audit_spec();
        write_json_atomic(&path, &spec).unwrap();
        let loaded = read_audit_spec(&path).unwrap();
        assert_eq!(loaded, spec);
    }

    #[test]
    fn audit_file_gates_the_table() {
        let spec = chain_audit_spec();
        let run = run_audit_spec(&spec, None).unwrap();
        let without = audit_to_file(&run, 1e-9, false, None);
        assert!(without.results[0].utility_table.is_none());
        let with = audit_to_file(&run, 1e-9, true, None);
        assert!(with.results[0].utility_table.is_some());
    }

    #[test]
    fn metrics_and_benchmark_csv_shapes() {
        let cfg = ExperimentConfig {
            graph: crate::experiment::GraphSpec::Conference {
                num_items: 20,
                num_owners: 15,
                law: Default::default(),
            },
            trials: 2,
            ..ExperimentConfig::default()
        };
        let report = crate::experiment::run_conference_study(&cfg).unwrap();
        let csv_bytes = metrics_csv_bytes(&report).unwrap();
        let text = String::from_utf8(csv_bytes).unwrap();
        assert!(text.starts_with("trial,method,metric,value\n"));
        assert!(text.contains("pct_change"));
        assert!(text.contains("accept_accuracy@30"));

        let g = OwnershipGraph::from_owner_sets(&[vec![0, 1, 2]], 3).unwrap();
        let reports =
            crate::experiment::run_partition_benchmark(&g, &[SizeObjective::Comparison], 1)
                .unwrap();
        let text = String::from_utf8(benchmark_csv_bytes(&reports).unwrap()).unwrap();
        assert!(text.starts_with("method,objective,value,blocks,largest_block\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn tradeoff_csv_shape() {
        let report =
            crate::experiment::run_tree_tradeoff(2, &[1.0], &[0.0], 2, 0).unwrap();
        let text = String::from_utf8(tradeoff_csv_bytes(&report).unwrap()).unwrap();
        assert!(text.starts_with("sigma,perception_sd,level,trial,mse\n"));
        // 1 sigma × 1 perception × 2 levels × 2 trials data rows.
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn calibration_csv_uses_labels() {
        let dir = temp_dir();
        let path = dir.path().join("adjusted.csv");
        let raw = ScoreVector::new(vec![9.0, 8.0]).unwrap();
        let adjusted = ScoreVector::new(vec![9.0, 7.5]).unwrap();
        let mapping = IdMapping {
            owners: vec!["a".into()],
            items: vec!["p1".into(), "p2".into()],
        };
        write_calibration_csv(&path, &raw, &adjusted, Some(&mapping)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "item_id,raw,adjusted\np1,9,9\np2,8,7.5\n");
    }
}
