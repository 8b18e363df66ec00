//! Readers and writers for the history formats, plus the chronological
//! train/validation split.
//!
//! Native formats are line-delimited JSON:
//!
//! ```text
//! commit log:   {"id": str, "ts": int, "author": str,
//!                "files": [{"path": str, "type": "added|modified|deleted|renamed|copied",
//!                           "add": int, "del": int}]}
//! test results: {"cycle": str, "ts": int, "commits": [str],
//!                "results": [{"test": str, "path": str?, "verdict": "passed|failed",
//!                             "flaky": bool?, "broken": bool?, "duration": float?}]}
//! ```
//!
//! Public CI datasets (IOF/ROL, GSDTSR) come as `;`-separated CSV.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, NaiveDateTime};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::datamodel::{
    normalize_path, ChangeType, CiCycle, CommitRecord, FileChange, TestCase, TestVerdict, Verdict,
    SECONDS_PER_DAY,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: invalid JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: unknown change type `{value}`")]
    UnknownChangeType { line: usize, value: String },
    #[error("line {line}: unknown verdict `{value}` (expected passed or failed)")]
    UnknownVerdict { line: usize, value: String },
    #[error("line {line}: duplicate path `{path}` in commit `{commit_id}`")]
    DuplicatePath {
        line: usize,
        commit_id: String,
        path: String,
    },
    #[error("line {line}: duplicate result for test `{test_id}` in cycle `{cycle_id}`")]
    DuplicateVerdict {
        line: usize,
        cycle_id: String,
        test_id: String,
    },
    #[error("line {line}: duplicate cycle `{cycle_id}`")]
    DuplicateCycle { line: usize, cycle_id: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("csv record {record}: {message}")]
    Csv { record: usize, message: String },
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

fn field_err(line: usize, field: &str, message: impl Into<String>) -> IngestError {
    IngestError::Field {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn get_str<'a>(obj: &'a Map<String, Value>, line: usize, field: &str) -> Result<&'a str> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(field_err(line, field, "expected a string")),
        None => Err(field_err(line, field, "missing")),
    }
}

fn get_i64(obj: &Map<String, Value>, line: usize, field: &str) -> Result<i64> {
    match obj.get(field) {
        Some(v) => v
            .as_i64()
            .ok_or_else(|| field_err(line, field, "expected an integer")),
        None => Err(field_err(line, field, "missing")),
    }
}

fn get_count(obj: &Map<String, Value>, line: usize, field: &str) -> Result<u32> {
    match obj.get(field) {
        Some(v) => v
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| field_err(line, field, "expected a non-negative integer")),
        None => Err(field_err(line, field, "missing")),
    }
}

fn get_opt_bool(obj: &Map<String, Value>, line: usize, field: &str) -> Result<bool> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(_) => Err(field_err(line, field, "expected a boolean")),
    }
}

fn get_array<'a>(obj: &'a Map<String, Value>, line: usize, field: &str) -> Result<&'a Vec<Value>> {
    match obj.get(field) {
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(field_err(line, field, "expected an array")),
        None => Err(field_err(line, field, "missing")),
    }
}

/// Yields `(1-based line number, parsed object)` for every non-blank line.
fn json_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, Map<String, Value>)>> {
    reader.lines().enumerate().filter_map(|(idx, line)| {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(IngestError::Io(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => Ok((line_no, obj)),
            Ok(_) => Err(IngestError::Json {
                line: line_no,
                message: "expected an object".into(),
            }),
            Err(e) => Err(IngestError::Json {
                line: line_no,
                message: e.to_string(),
            }),
        })
    })
}

fn parse_file_change(line: usize, value: &Value) -> Result<FileChange> {
    let obj = value
        .as_object()
        .ok_or_else(|| field_err(line, "files", "entries must be objects"))?;
    let raw_path = get_str(obj, line, "path")?;
    let path = normalize_path(raw_path);
    if path.is_empty() {
        return Err(field_err(line, "path", "empty path"));
    }
    let type_str = get_str(obj, line, "type")?;
    let change_type: ChangeType = type_str.parse().map_err(|_| IngestError::UnknownChangeType {
        line,
        value: type_str.to_string(),
    })?;
    let lines_added = get_count(obj, line, "add")?;
    let lines_deleted = get_count(obj, line, "del")?;
    if change_type == ChangeType::Deleted && lines_added != 0 {
        return Err(field_err(line, "add", "deleted files cannot add lines"));
    }
    Ok(FileChange {
        path,
        change_type,
        lines_added,
        lines_deleted,
    })
}

/// Reads the line-delimited commit log. Input order is preserved.
pub fn parse_commit_log<R: BufRead>(reader: R) -> Result<Vec<CommitRecord>> {
    let mut commits = Vec::new();
    for item in json_lines(reader) {
        let (line, obj) = item?;
        let commit_id = get_str(&obj, line, "id")?.to_string();
        let timestamp = get_i64(&obj, line, "ts")?;
        let author_id = get_str(&obj, line, "author")?.to_string();
        let mut changes = Vec::new();
        let mut seen = HashSet::new();
        for entry in get_array(&obj, line, "files")? {
            let change = parse_file_change(line, entry)?;
            if !seen.insert(change.path.clone()) {
                return Err(IngestError::DuplicatePath {
                    line,
                    commit_id,
                    path: change.path,
                });
            }
            changes.push(change);
        }
        commits.push(CommitRecord {
            commit_id,
            timestamp,
            author_id,
            changes,
        });
    }
    Ok(commits)
}

pub fn commit_to_json(commit: &CommitRecord) -> Value {
    json!({
        "id": commit.commit_id,
        "ts": commit.timestamp,
        "author": commit.author_id,
        "files": commit.changes.iter().map(|c| json!({
            "path": c.path,
            "type": c.change_type.as_str(),
            "add": c.lines_added,
            "del": c.lines_deleted,
        })).collect::<Vec<_>>(),
    })
}

pub fn write_commit_log<W: Write>(commits: &[CommitRecord], mut writer: W) -> Result<()> {
    for commit in commits {
        serde_json::to_writer(&mut writer, &commit_to_json(commit))
            .map_err(|e| IngestError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Cycles plus the tests they mention (with paths where the source has them).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TestHistory {
    pub cycles: Vec<CiCycle>,
    pub tests: BTreeMap<String, TestCase>,
}

impl TestHistory {
    pub fn test_list(&self) -> Vec<TestCase> {
        self.tests.values().cloned().collect()
    }
}

/// Reads the line-delimited test-results log. Cycles come back sorted by
/// timestamp (stable for equal timestamps).
pub fn parse_test_results<R: BufRead>(reader: R) -> Result<TestHistory> {
    let mut cycles = Vec::new();
    let mut tests: BTreeMap<String, TestCase> = BTreeMap::new();
    let mut seen_cycles = HashSet::new();
    for item in json_lines(reader) {
        let (line, obj) = item?;
        let cycle_id = get_str(&obj, line, "cycle")?.to_string();
        if !seen_cycles.insert(cycle_id.clone()) {
            return Err(IngestError::DuplicateCycle { line, cycle_id });
        }
        let timestamp = get_i64(&obj, line, "ts")?;
        let commit_ids = match obj.get("commits") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(ids)) => ids
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| field_err(line, "commits", "expected strings"))
                })
                .collect::<Result<Vec<_>>>()?,
            Some(_) => return Err(field_err(line, "commits", "expected an array")),
        };
        let mut verdicts = Vec::new();
        let mut seen_tests = HashSet::new();
        for entry in get_array(&obj, line, "results")? {
            let r = entry
                .as_object()
                .ok_or_else(|| field_err(line, "results", "entries must be objects"))?;
            let test_id = get_str(r, line, "test")?.to_string();
            if !seen_tests.insert(test_id.clone()) {
                return Err(IngestError::DuplicateVerdict {
                    line,
                    cycle_id,
                    test_id,
                });
            }
            let verdict = match get_str(r, line, "verdict")? {
                "passed" => Verdict::Passed,
                "failed" => Verdict::Failed,
                other => {
                    return Err(IngestError::UnknownVerdict {
                        line,
                        value: other.to_string(),
                    })
                }
            };
            let duration = match r.get("duration") {
                None | Some(Value::Null) => None,
                Some(v) => Some(
                    v.as_f64()
                        .filter(|d| d.is_finite() && *d >= 0.0)
                        .ok_or_else(|| field_err(line, "duration", "expected a non-negative number"))?,
                ),
            };
            let path = match r.get("path") {
                None | Some(Value::Null) => String::new(),
                Some(Value::String(p)) => normalize_path(p),
                Some(_) => return Err(field_err(line, "path", "expected a string")),
            };
            let entry = tests
                .entry(test_id.clone())
                .or_insert_with(|| TestCase::new(test_id.clone(), ""));
            if !path.is_empty() {
                entry.test_path = path;
            }
            verdicts.push(TestVerdict {
                cycle_id: cycle_id.clone(),
                test_id,
                timestamp,
                verdict,
                duration,
                flaky: get_opt_bool(r, line, "flaky")?,
                broken: get_opt_bool(r, line, "broken")?,
            });
        }
        cycles.push(CiCycle {
            cycle_id,
            timestamp,
            commit_ids,
            verdicts,
        });
    }
    cycles.sort_by_key(|c| c.timestamp);
    Ok(TestHistory { cycles, tests })
}

pub fn cycle_to_json(cycle: &CiCycle, tests: &BTreeMap<String, TestCase>) -> Value {
    let results: Vec<Value> = cycle
        .verdicts
        .iter()
        .map(|v| {
            let mut r = Map::new();
            r.insert("test".into(), json!(v.test_id));
            if let Some(t) = tests.get(&v.test_id).filter(|t| !t.test_path.is_empty()) {
                r.insert("path".into(), json!(t.test_path));
            }
            r.insert(
                "verdict".into(),
                json!(if v.verdict.is_failed() { "failed" } else { "passed" }),
            );
            if v.flaky {
                r.insert("flaky".into(), json!(true));
            }
            if v.broken {
                r.insert("broken".into(), json!(true));
            }
            if let Some(d) = v.duration {
                r.insert("duration".into(), json!(d));
            }
            Value::Object(r)
        })
        .collect();
    json!({
        "cycle": cycle.cycle_id,
        "ts": cycle.timestamp,
        "commits": cycle.commit_ids,
        "results": results,
    })
}

pub fn write_test_results<W: Write>(history: &TestHistory, mut writer: W) -> Result<()> {
    for cycle in &history.cycles {
        serde_json::to_writer(&mut writer, &cycle_to_json(cycle, &history.tests))
            .map_err(|e| IngestError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Known public CSV layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvSchema {
    /// Layout shared by the IOF/ROL and GSDTSR datasets.
    IofrolGsdtsr,
}

impl std::str::FromStr for CsvSchema {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iofrol_gsdtsr" | "iofrol" | "gsdtsr" => Ok(CsvSchema::IofrolGsdtsr),
            other => Err(IngestError::InvalidArgument(format!("unknown csv schema `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Verdict codes meaning "failed"; anything else is a pass.
    pub failed_codes: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            failed_codes: vec!["1".to_string()],
        }
    }
}

/// Accepts epoch seconds or the usual date-time spellings.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(n) = s.parse::<i64>() {
        return Some(n);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    const FORMATS: [&str; 6] = [
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .map(|dt| dt.and_utc().timestamp())
        })
}

/// Reads a public CI dataset. These carry no change data, so every cycle has
/// empty `commit_ids`.
///
/// The test identifier is `Name` when that column exists (in this layout `Id`
/// numbers executions), otherwise `Id`. Cycles are ordered by the `Cycle`
/// value; a cycle's timestamp is the latest `LastRun` among its rows, held
/// non-decreasing across cycles. A test listed twice in one cycle collapses
/// into a single verdict, failed if either row failed.
pub fn parse_ci_csv<R: Read>(reader: R, schema: CsvSchema, options: &CsvOptions) -> Result<Vec<CiCycle>> {
    let CsvSchema::IofrolGsdtsr = schema;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b';')
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Csv {
            record: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("Id").ok_or_else(|| IngestError::MissingColumn("Id".into()))?;
    let cycle_col = col("Cycle").ok_or_else(|| IngestError::MissingColumn("Cycle".into()))?;
    let verdict_col = col("Verdict").ok_or_else(|| IngestError::MissingColumn("Verdict".into()))?;
    let last_run_col = col("LastRun").ok_or_else(|| IngestError::MissingColumn("LastRun".into()))?;
    let duration_col = col("Duration");
    let name_col = col("Name");
    let test_col = name_col.unwrap_or(id_col);

    struct Acc {
        ts: i64,
        verdicts: Vec<TestVerdict>,
        by_test: HashMap<String, usize>,
    }
    let mut by_cycle: BTreeMap<(i128, String), Acc> = BTreeMap::new();

    for (idx, record) in rdr.records().enumerate() {
        let rec_no = idx + 1;
        let record = record.map_err(|e| IngestError::Csv {
            record: rec_no,
            message: e.to_string(),
        })?;
        let get = |c: usize, name: &str| {
            record.get(c).ok_or_else(|| IngestError::Csv {
                record: rec_no,
                message: format!("missing value for `{name}`"),
            })
        };
        let test_id = get(test_col, "test id")?.to_string();
        let cycle_raw = get(cycle_col, "Cycle")?.to_string();
        let verdict_raw = get(verdict_col, "Verdict")?;
        let last_run_raw = get(last_run_col, "LastRun")?;
        let ts = parse_timestamp(last_run_raw).ok_or_else(|| IngestError::Csv {
            record: rec_no,
            message: format!("unparseable LastRun `{last_run_raw}`"),
        })?;
        let verdict = if options.failed_codes.iter().any(|c| c == verdict_raw) {
            Verdict::Failed
        } else {
            Verdict::Passed
        };
        let duration = duration_col
            .and_then(|c| record.get(c))
            .and_then(|d| d.parse::<f64>().ok())
            .filter(|d| d.is_finite() && *d >= 0.0);
        let order = cycle_raw
            .parse::<f64>()
            .ok()
            .filter(|f| f.is_finite())
            .map(|f| f as i128)
            .unwrap_or(i128::MAX);
        let acc = by_cycle.entry((order, cycle_raw.clone())).or_insert_with(|| Acc {
            ts: i64::MIN,
            verdicts: Vec::new(),
            by_test: HashMap::new(),
        });
        acc.ts = acc.ts.max(ts);
        match acc.by_test.get(&test_id) {
            Some(&pos) => {
                let v = &mut acc.verdicts[pos];
                if verdict.is_failed() {
                    v.verdict = Verdict::Failed;
                }
                v.duration = match (v.duration, duration) {
                    (Some(a), Some(b)) => Some(a + b),
                    (a, b) => a.or(b),
                };
            }
            None => {
                acc.by_test.insert(test_id.clone(), acc.verdicts.len());
                acc.verdicts.push(TestVerdict {
                    cycle_id: cycle_raw.clone(),
                    test_id,
                    timestamp: ts,
                    verdict,
                    duration,
                    flaky: false,
                    broken: false,
                });
            }
        }
    }

    let mut cycles = Vec::with_capacity(by_cycle.len());
    let mut running = i64::MIN;
    for ((_, cycle_id), acc) in by_cycle {
        running = running.max(acc.ts);
        let mut verdicts = acc.verdicts;
        for v in &mut verdicts {
            v.timestamp = running;
        }
        cycles.push(CiCycle {
            cycle_id,
            timestamp: running,
            commit_ids: Vec::new(),
            verdicts,
        });
    }
    Ok(cycles)
}

/// Summary numbers in the shape of a dataset overview table.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n_tests: usize,
    pub n_cycles: usize,
    pub n_verdicts: usize,
    pub failed_fraction: f64,
}

pub fn dataset_stats(cycles: &[CiCycle]) -> DatasetStats {
    let mut tests = HashSet::new();
    let mut n_verdicts = 0usize;
    let mut n_failed = 0usize;
    for cycle in cycles {
        for v in &cycle.verdicts {
            tests.insert(v.test_id.as_str());
            n_verdicts += 1;
            n_failed += usize::from(v.verdict.is_failed());
        }
    }
    DatasetStats {
        n_tests: tests.len(),
        n_cycles: cycles.len(),
        n_verdicts,
        failed_fraction: if n_verdicts == 0 {
            0.0
        } else {
            n_failed as f64 / n_verdicts as f64
        },
    }
}

/// Splits sorted cycles into a training window followed by a validation
/// window, both measured back from the last cycle in whole 86 400 s days:
/// validation is `(last - val_days, last]`, training is the `train_days`
/// before it. Older cycles are dropped.
pub fn chronological_split(
    cycles: &[CiCycle],
    train_days: u32,
    val_days: u32,
) -> Result<(Vec<CiCycle>, Vec<CiCycle>)> {
    if train_days == 0 || val_days == 0 {
        return Err(IngestError::InvalidArgument(
            "train_days and val_days must be positive".into(),
        ));
    }
    if cycles.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(IngestError::InvalidArgument("cycles must be sorted by timestamp".into()));
    }
    if cycles.len() < 2 {
        return Err(IngestError::InsufficientHistory(format!(
            "{} cycle(s), need at least 2",
            cycles.len()
        )));
    }
    let last = cycles.last().map(|c| c.timestamp).unwrap_or_default();
    let val_start = last - i64::from(val_days) * SECONDS_PER_DAY;
    let train_start = val_start - i64::from(train_days) * SECONDS_PER_DAY;
    let val: Vec<CiCycle> = cycles.iter().filter(|c| c.timestamp > val_start).cloned().collect();
    let train: Vec<CiCycle> = cycles
        .iter()
        .filter(|c| c.timestamp > train_start && c.timestamp <= val_start)
        .cloned()
        .collect();
    if train.is_empty() || val.is_empty() {
        return Err(IngestError::InsufficientHistory(format!(
            "{} training and {} validation cycles in the requested windows",
            train.len(),
            val.len()
        )));
    }
    Ok((train, val))
}
