//! In-memory representation of repository history, test history and the
//! sparse rows derived from them.
//!
//! Everything here is immutable once built. Timestamps are UTC epoch seconds
//! and paths are repository-relative, `/`-separated and NFC-normalized.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Seconds in one day. Window arithmetic never uses calendar days.
pub const SECONDS_PER_DAY: i64 = 86_400;

/// Normalize a repository path: backslashes become `/`, leading `./` and `/`
/// are dropped, repeated separators collapse and the result is NFC.
pub fn normalize_path(raw: &str) -> String {
    let unified: String = raw.replace('\\', "/").nfc().collect();
    unified
        .split('/')
        .filter(|seg| !seg.is_empty() && *seg != ".")
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeType {
    Added,
    Modified,
    Deleted,
    Renamed,
    Copied,
}

impl ChangeType {
    pub const ALL: [ChangeType; 5] = [
        ChangeType::Added,
        ChangeType::Modified,
        ChangeType::Deleted,
        ChangeType::Renamed,
        ChangeType::Copied,
    ];

    /// Position in the one-hot encoding.
    pub fn index(self) -> usize {
        match self {
            ChangeType::Added => 0,
            ChangeType::Modified => 1,
            ChangeType::Deleted => 2,
            ChangeType::Renamed => 3,
            ChangeType::Copied => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeType::Added => "added",
            ChangeType::Modified => "modified",
            ChangeType::Deleted => "deleted",
            ChangeType::Renamed => "renamed",
            ChangeType::Copied => "copied",
        }
    }
}

impl std::str::FromStr for ChangeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChangeType::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown change type `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: String,
    pub change_type: ChangeType,
    pub lines_added: u32,
    pub lines_deleted: u32,
}

impl FileChange {
    pub fn new(path: &str, change_type: ChangeType, lines_added: u32, lines_deleted: u32) -> Self {
        Self {
            path: normalize_path(path),
            change_type,
            lines_added,
            lines_deleted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub commit_id: String,
    pub timestamp: i64,
    pub author_id: String,
    pub changes: Vec<FileChange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub test_id: String,
    /// Empty when the source has no path information (public CI datasets).
    #[serde(default)]
    pub test_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_id: Option<String>,
}

impl TestCase {
    pub fn new(test_id: impl Into<String>, test_path: &str) -> Self {
        Self {
            test_id: test_id.into(),
            test_path: normalize_path(test_path),
            module_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Passed,
    Failed,
}

impl Verdict {
    pub fn is_failed(self) -> bool {
        self == Verdict::Failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub cycle_id: String,
    pub test_id: String,
    pub timestamp: i64,
    pub verdict: Verdict,
    /// Seconds; absent when the source does not record it.
    pub duration: Option<f64>,
    pub flaky: bool,
    pub broken: bool,
}

impl TestVerdict {
    /// Flaky or broken verdicts carry no signal about the change.
    pub fn is_unstable(&self) -> bool {
        self.flaky || self.broken
    }
}

/// One batch execution of tests against the changes accumulated since the
/// previous batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiCycle {
    pub cycle_id: String,
    pub timestamp: i64,
    pub commit_ids: Vec<String>,
    pub verdicts: Vec<TestVerdict>,
}

/// A change to be scored: a single commit at inference time, or the union of
/// a cycle's commits at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub change_id: String,
    pub timestamp: i64,
    pub files: Vec<FileChange>,
    /// Commits that make up this change. They are excluded from the history
    /// windows so the change never describes itself.
    #[serde(default)]
    pub commit_ids: Vec<String>,
}

impl ChangeSet {
    pub fn from_commit(commit: &CommitRecord) -> Self {
        Self {
            change_id: commit.commit_id.clone(),
            timestamp: commit.timestamp,
            files: commit.changes.clone(),
            commit_ids: vec![commit.commit_id.clone()],
        }
    }

    /// Union of the changes of several commits. A path touched more than once
    /// keeps the change type of its latest commit and the summed line counts.
    pub fn union_of<'a>(
        change_id: &str,
        timestamp: i64,
        commits: impl IntoIterator<Item = &'a CommitRecord>,
    ) -> Self {
        let mut commits: Vec<&CommitRecord> = commits.into_iter().collect();
        commits.sort_by(|a, b| (a.timestamp, &a.commit_id).cmp(&(b.timestamp, &b.commit_id)));
        let mut merged: BTreeMap<String, FileChange> = BTreeMap::new();
        for commit in &commits {
            for change in &commit.changes {
                merged
                    .entry(change.path.clone())
                    .and_modify(|m| {
                        m.change_type = change.change_type;
                        m.lines_added = m.lines_added.saturating_add(change.lines_added);
                        m.lines_deleted = m.lines_deleted.saturating_add(change.lines_deleted);
                    })
                    .or_insert_with(|| change.clone());
            }
        }
        Self {
            change_id: change_id.to_string(),
            timestamp,
            files: merged.into_values().collect(),
            commit_ids: commits.iter().map(|c| c.commit_id.clone()).collect(),
        }
    }
}

/// Sparse `(feature_id, value)` pairs, sorted by id, zeros omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Builds from unordered pairs. Later duplicates overwrite earlier ones
    /// and explicit zeros are dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for (id, value) in pairs {
            map.insert(id, value);
        }
        Self {
            entries: map.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    /// Keeps explicit zeros. Only used to check that storing a zero and
    /// omitting it behave the same downstream.
    pub fn from_pairs_keep_zeros(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let map: BTreeMap<u32, f64> = pairs.into_iter().collect();
        Self {
            entries: map.into_iter().collect(),
        }
    }

    pub fn get(&self, id: u32) -> f64 {
        match self.entries.binary_search_by_key(&id, |(k, _)| *k) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_id(&self) -> Option<u32> {
        self.entries.last().map(|(k, _)| *k)
    }

    /// Count of entries that are not zero.
    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|(_, v)| *v != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// Cycle id for training rows, change id at inference time.
    pub key: String,
    pub test_id: String,
    pub features: SparseVector,
    pub label: Option<u8>,
}

/// Number of slots describing one file.
pub const FILE_DIM: usize = 12;
/// Failure rate over 7, 14 and 28 days.
pub const TEST_DIM: usize = 3;
/// Number of nearest changed files per test.
pub const CROSS_NEIGHBORS: usize = 3;
/// Filtered-file count, summed lines added/deleted, mean changes over 3/14/56 days.
pub const UNKNOWN_DIM: usize = 6;

/// Offsets inside one file block.
pub mod file_slot {
    pub const CHANGE_FLAG: usize = 0;
    pub const DISTINCT_AUTHORS: usize = 1;
    pub const LINES_ADDED: usize = 2;
    pub const LINES_DELETED: usize = 3;
    pub const CHANGE_TYPE: usize = 4;
    pub const CHANGES_3D: usize = 9;
    pub const CHANGES_14D: usize = 10;
    pub const CHANGES_56D: usize = 11;
}

/// Which feature families a vocabulary lays out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroups {
    pub file: bool,
    pub test: bool,
    pub cross: bool,
    pub unknown: bool,
}

impl Default for FeatureGroups {
    fn default() -> Self {
        Self::all()
    }
}

impl FeatureGroups {
    pub fn all() -> Self {
        Self {
            file: true,
            test: true,
            cross: true,
            unknown: true,
        }
    }

    pub fn test_only() -> Self {
        Self {
            file: false,
            test: true,
            cross: false,
            unknown: false,
        }
    }
}

/// Semantic group of a feature id, used for group-averaged importances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    File,
    Test,
    Cross,
    Unknown,
}

/// Layout of the sparse feature space. Built once from the training history
/// and persisted next to the model so inference rows line up exactly.
///
/// ```text
/// [ file_0 .. file_{N-1} | test | cross_0 cross_1 cross_2 | unknown ]
///   N * FILE_DIM           3      3 * (FILE_DIM + E + 1)    6
/// ```
/// where `E` is the number of extension slots (frequent extensions plus one
/// shared "other" slot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocabulary {
    pub files: Vec<String>,
    pub extensions: Vec<String>,
    pub distance_sentinel: u32,
    pub groups: FeatureGroups,
    #[serde(skip)]
    file_lookup: HashMap<String, usize>,
    #[serde(skip)]
    ext_lookup: HashMap<String, usize>,
}

impl FeatureVocabulary {
    /// `files` and `extensions` are sorted and deduplicated so the layout
    /// only depends on the sets.
    pub fn new(
        files: impl IntoIterator<Item = String>,
        extensions: impl IntoIterator<Item = String>,
        distance_sentinel: u32,
        groups: FeatureGroups,
    ) -> Self {
        let files: Vec<String> = files
            .into_iter()
            .map(|p| normalize_path(&p))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let extensions: Vec<String> = extensions.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut vocab = Self {
            files: if groups.file { files } else { Vec::new() },
            extensions: if groups.cross { extensions } else { Vec::new() },
            distance_sentinel,
            groups,
            file_lookup: HashMap::new(),
            ext_lookup: HashMap::new(),
        };
        vocab.rebuild_lookups();
        vocab
    }

    /// Restores the lookup tables after deserialization.
    pub fn rebuild_lookups(&mut self) {
        self.file_lookup = self.files.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        self.ext_lookup = self
            .extensions
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
    }

    pub fn n_files(&self) -> usize {
        self.files.len()
    }

    pub fn file_slot(&self, path: &str) -> Option<usize> {
        self.file_lookup.get(path).copied()
    }

    /// Extension one-hot position; unseen extensions share the last slot.
    pub fn extension_slot(&self, ext: &str) -> usize {
        self.ext_lookup.get(ext).copied().unwrap_or(self.extensions.len())
    }

    pub fn extension_dim(&self) -> usize {
        self.extensions.len() + 1
    }

    pub fn cross_slot_dim(&self) -> usize {
        FILE_DIM + self.extension_dim() + 1
    }

    pub fn file_block_offset(&self, slot: usize) -> usize {
        slot * FILE_DIM
    }

    pub fn test_offset(&self) -> usize {
        if self.groups.file {
            self.files.len() * FILE_DIM
        } else {
            0
        }
    }

    pub fn cross_offset(&self) -> usize {
        self.test_offset() + if self.groups.test { TEST_DIM } else { 0 }
    }

    pub fn unknown_offset(&self) -> usize {
        self.cross_offset()
            + if self.groups.cross {
                CROSS_NEIGHBORS * self.cross_slot_dim()
            } else {
                0
            }
    }

    /// Total number of feature ids.
    pub fn dim(&self) -> usize {
        self.unknown_offset() + if self.groups.unknown { UNKNOWN_DIM } else { 0 }
    }

    pub fn group_of(&self, feature: usize) -> Option<FeatureGroup> {
        if feature >= self.dim() {
            None
        } else if feature < self.test_offset() {
            Some(FeatureGroup::File)
        } else if feature < self.cross_offset() {
            Some(FeatureGroup::Test)
        } else if feature < self.unknown_offset() {
            Some(FeatureGroup::Cross)
        } else {
            Some(FeatureGroup::Unknown)
        }
    }

    /// Hex SHA-256 over the canonical serialized layout.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    DuplicateCommitId { commit_id: String },
    DuplicateCycleId { cycle_id: String },
    DuplicateVerdict { cycle_id: String, test_id: String },
    DuplicatePath { commit_id: String, path: String },
    EmptyPath { commit_id: String },
    NonMonotoneCommitTimestamp { commit_id: String },
    NonMonotoneCycleTimestamp { cycle_id: String },
    DanglingCommitReference { cycle_id: String, commit_id: String },
    UnknownTest { cycle_id: String, test_id: String },
    VerdictCycleMismatch { cycle_id: String, test_id: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&ValidationIssue) -> bool) -> usize {
        self.issues.iter().filter(|i| pred(i)).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "history is consistent");
        }
        writeln!(f, "{} issue(s):", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  {issue:?}")?;
        }
        Ok(())
    }
}

/// Checks a history for consistency without touching it. `tests`, when
/// given, is the known test universe; verdicts for other ids are reported.
pub fn validate_history(
    commits: &[CommitRecord],
    cycles: &[CiCycle],
    tests: Option<&[TestCase]>,
) -> ValidationReport {
    let mut issues = Vec::new();

    let mut seen_commits = HashSet::new();
    let mut last_ts = i64::MIN;
    for commit in commits {
        if !seen_commits.insert(commit.commit_id.as_str()) {
            issues.push(ValidationIssue::DuplicateCommitId {
                commit_id: commit.commit_id.clone(),
            });
        }
        if commit.timestamp < last_ts {
            issues.push(ValidationIssue::NonMonotoneCommitTimestamp {
                commit_id: commit.commit_id.clone(),
            });
        }
        last_ts = last_ts.max(commit.timestamp);
        let mut paths = HashSet::new();
        for change in &commit.changes {
            if change.path.is_empty() {
                issues.push(ValidationIssue::EmptyPath {
                    commit_id: commit.commit_id.clone(),
                });
            } else if !paths.insert(change.path.as_str()) {
                issues.push(ValidationIssue::DuplicatePath {
                    commit_id: commit.commit_id.clone(),
                    path: change.path.clone(),
                });
            }
        }
    }

    let known_tests: Option<HashSet<&str>> =
        tests.map(|ts| ts.iter().map(|t| t.test_id.as_str()).collect());
    let mut seen_cycles = HashSet::new();
    let mut last_ts = i64::MIN;
    for cycle in cycles {
        if !seen_cycles.insert(cycle.cycle_id.as_str()) {
            issues.push(ValidationIssue::DuplicateCycleId {
                cycle_id: cycle.cycle_id.clone(),
            });
        }
        if cycle.timestamp < last_ts {
            issues.push(ValidationIssue::NonMonotoneCycleTimestamp {
                cycle_id: cycle.cycle_id.clone(),
            });
        }
        last_ts = last_ts.max(cycle.timestamp);
        for commit_id in &cycle.commit_ids {
            if !seen_commits.contains(commit_id.as_str()) {
                issues.push(ValidationIssue::DanglingCommitReference {
                    cycle_id: cycle.cycle_id.clone(),
                    commit_id: commit_id.clone(),
                });
            }
        }
        let mut seen_tests = HashSet::new();
        for verdict in &cycle.verdicts {
            if verdict.cycle_id != cycle.cycle_id {
                issues.push(ValidationIssue::VerdictCycleMismatch {
                    cycle_id: cycle.cycle_id.clone(),
                    test_id: verdict.test_id.clone(),
                });
            }
            if !seen_tests.insert(verdict.test_id.as_str()) {
                issues.push(ValidationIssue::DuplicateVerdict {
                    cycle_id: cycle.cycle_id.clone(),
                    test_id: verdict.test_id.clone(),
                });
            }
            if let Some(known) = &known_tests {
                if !known.contains(verdict.test_id.as_str()) {
                    issues.push(ValidationIssue::UnknownTest {
                        cycle_id: cycle.cycle_id.clone(),
                        test_id: verdict.test_id.clone(),
                    });
                }
            }
        }
    }

    ValidationReport { issues }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commit(id: &str, ts: i64, paths: &[&str]) -> CommitRecord {
        CommitRecord {
            commit_id: id.into(),
            timestamp: ts,
            author_id: "a".into(),
            changes: paths
                .iter()
                .map(|p| FileChange::new(p, ChangeType::Modified, 1, 0))
                .collect(),
        }
    }

    fn cycle(id: &str, ts: i64, commits: &[&str], tests: &[&str]) -> CiCycle {
        CiCycle {
            cycle_id: id.into(),
            timestamp: ts,
            commit_ids: commits.iter().map(|s| s.to_string()).collect(),
            verdicts: tests
                .iter()
                .map(|t| TestVerdict {
                    cycle_id: id.into(),
                    test_id: t.to_string(),
                    timestamp: ts,
                    verdict: Verdict::Passed,
                    duration: None,
                    flaky: false,
                    broken: false,
                })
                .collect(),
        }
    }

    #[test]
    fn normalizes_separators_and_unicode() {
        assert_eq!(normalize_path("src\\app//Main.kt"), "src/app/Main.kt");
        assert_eq!(normalize_path("./src/./a.kt"), "src/a.kt");
        // "e" + combining acute becomes the precomposed code point
        assert_eq!(normalize_path("caf\u{0065}\u{0301}.md"), "caf\u{00e9}.md");
    }

    #[test]
    fn duplicate_commit_id_reported_once() {
        let commits = vec![commit("c1", 1, &["a.kt"]), commit("c1", 2, &["b.kt"])];
        let report = validate_history(&commits, &[], None);
        assert_eq!(
            report.count(|i| matches!(i, ValidationIssue::DuplicateCommitId { .. })),
            1
        );
    }

    #[test]
    fn empty_inputs_are_clean() {
        assert!(validate_history(&[], &[], None).is_clean());
    }

    #[test]
    fn dangling_commit_reference() {
        let commits = vec![commit("c1", 1, &["a.kt"])];
        let cycles = vec![cycle("k1", 5, &["c1", "c9"], &["t1"])];
        let report = validate_history(&commits, &cycles, None);
        assert_eq!(report.issues.len(), 1);
        assert!(matches!(
            &report.issues[0],
            ValidationIssue::DanglingCommitReference { commit_id, .. } if commit_id == "c9"
        ));
    }

    #[test]
    fn reports_ordering_and_unknown_tests() {
        let commits = vec![commit("c1", 10, &["a.kt", "a.kt"]), commit("c2", 5, &["b.kt"])];
        let cycles = vec![cycle("k1", 20, &[], &["t1", "t2"]), cycle("k0", 10, &[], &["t1"])];
        let known = vec![TestCase::new("t1", "")];
        let report = validate_history(&commits, &cycles, Some(&known));
        assert_eq!(report.count(|i| matches!(i, ValidationIssue::DuplicatePath { .. })), 1);
        assert_eq!(
            report.count(|i| matches!(i, ValidationIssue::NonMonotoneCommitTimestamp { .. })),
            1
        );
        assert_eq!(
            report.count(|i| matches!(i, ValidationIssue::NonMonotoneCycleTimestamp { .. })),
            1
        );
        assert_eq!(report.count(|i| matches!(i, ValidationIssue::UnknownTest { .. })), 1);
    }

    #[test]
    fn union_merges_repeated_paths() {
        let mut c2 = commit("c2", 2, &["a.kt", "b.kt"]);
        c2.changes[0].change_type = ChangeType::Deleted;
        let c1 = commit("c1", 1, &["a.kt"]);
        let change = ChangeSet::union_of("k", 3, [&c2, &c1]);
        assert_eq!(change.files.len(), 2);
        assert_eq!(change.files[0].path, "a.kt");
        assert_eq!(change.files[0].lines_added, 2);
        assert_eq!(change.files[0].change_type, ChangeType::Deleted);
        assert_eq!(change.commit_ids, vec!["c1", "c2"]);
    }

    #[test]
    fn vocabulary_layout_is_deterministic() {
        let a = FeatureVocabulary::new(
            vec!["b/x.kt".to_string(), "a/y.kt".to_string()],
            vec!["kt".to_string()],
            4,
            FeatureGroups::all(),
        );
        let b = FeatureVocabulary::new(
            vec!["a/y.kt".to_string(), "b/x.kt".to_string(), "a/y.kt".to_string()],
            vec!["kt".to_string()],
            4,
            FeatureGroups::all(),
        );
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.file_slot("a/y.kt"), Some(0));
        assert_eq!(a.test_offset(), 2 * FILE_DIM);
        assert_eq!(a.cross_offset(), 2 * FILE_DIM + TEST_DIM);
        assert_eq!(
            a.dim(),
            2 * FILE_DIM + TEST_DIM + CROSS_NEIGHBORS * (FILE_DIM + 2 + 1) + UNKNOWN_DIM
        );
        assert_eq!(a.extension_slot("java"), 1);
    }

    #[test]
    fn test_only_layout() {
        let v = FeatureVocabulary::new(vec!["a.kt".to_string()], vec![], 1, FeatureGroups::test_only());
        assert_eq!(v.dim(), TEST_DIM);
        assert_eq!(v.group_of(0), Some(FeatureGroup::Test));
        assert_eq!(v.group_of(3), None);
    }

    #[test]
    fn sparse_vector_drops_zeros_and_sorts() {
        let v = SparseVector::from_pairs([(5, 1.0), (2, 0.0), (1, 3.0)]);
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![(1, 3.0), (5, 1.0)]);
        assert_eq!(v.get(2), 0.0);
        let z = SparseVector::from_pairs_keep_zeros([(2, 0.0)]);
        assert_eq!(z.len(), 1);
        assert_eq!(z.nnz(), 0);
    }
}
