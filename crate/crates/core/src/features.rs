//! File, test and cross-file features, and assembly of the sparse
//! commit-as-Bag-of-Words row for a (change, test) pair.
//!
//! Every windowed quantity looks at events in `[as_of - W, as_of)` and skips
//! the commits that make up the change being scored.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    file_slot, ChangeSet, ChangeType, CiCycle, CommitRecord, FeatureGroups, FeatureRow,
    FeatureVocabulary, FileChange, SparseVector, TestCase, CROSS_NEIGHBORS, FILE_DIM,
    SECONDS_PER_DAY,
};

/// Windows for the change-count features, in days.
pub const CHANGE_WINDOWS: [i64; 3] = [3, 14, 56];
/// Windows for the failure-rate features, in days.
pub const FAILURE_WINDOWS: [i64; 3] = [7, 14, 28];
/// Window for distinct authors and for the known/unknown partition.
const ACTIVITY_WINDOW_DAYS: i64 = 56;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Files with fewer changes than this in the activity window are unknown.
    pub min_changes_56d: u32,
    /// Files changed more often than this fraction of the window's cycles are unknown.
    pub max_change_fraction: f64,
    /// Extensions seen fewer times than this in training share the "other" slot.
    pub min_extension_count: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            min_changes_56d: 2,
            max_change_fraction: 0.20,
            min_extension_count: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FileFeatureVector {
    pub change_flag: bool,
    pub n_distinct_authors: u32,
    pub lines_added: u32,
    pub lines_deleted: u32,
    pub change_type: Option<ChangeType>,
    /// Changes over the last 3, 14 and 56 days.
    pub n_changes: [u32; 3],
}

impl FileFeatureVector {
    pub fn to_array(&self) -> [f64; FILE_DIM] {
        let mut out = [0.0; FILE_DIM];
        out[file_slot::CHANGE_FLAG] = f64::from(u8::from(self.change_flag));
        out[file_slot::DISTINCT_AUTHORS] = f64::from(self.n_distinct_authors);
        out[file_slot::LINES_ADDED] = f64::from(self.lines_added);
        out[file_slot::LINES_DELETED] = f64::from(self.lines_deleted);
        if let Some(t) = self.change_type {
            out[file_slot::CHANGE_TYPE + t.index()] = 1.0;
        }
        out[file_slot::CHANGES_3D] = f64::from(self.n_changes[0]);
        out[file_slot::CHANGES_14D] = f64::from(self.n_changes[1]);
        out[file_slot::CHANGES_56D] = f64::from(self.n_changes[2]);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TestFeatureVector {
    /// Failure rate over the last 7, 14 and 28 days.
    pub failure_rate: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossNeighbor {
    pub path: String,
    pub features: FileFeatureVector,
    pub extension_slot: usize,
    pub distance: u32,
}

/// Up to three nearest changed files, sorted by `(distance, path)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrossFeatureVector {
    pub neighbors: Vec<CrossNeighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnknownFilesAggregate {
    pub n_filtered_files: u32,
    pub lines_added: u64,
    pub lines_deleted: u64,
    pub mean_changes: [f64; 3],
}

impl UnknownFilesAggregate {
    pub fn to_array(&self) -> [f64; 6] {
        [
            f64::from(self.n_filtered_files),
            self.lines_added as f64,
            self.lines_deleted as f64,
            self.mean_changes[0],
            self.mean_changes[1],
            self.mean_changes[2],
        ]
    }
}

pub fn dir_components(path: &str) -> Vec<&str> {
    let mut parts: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    parts.pop();
    parts
}

/// Tree distance between two directories given as component lists.
pub fn tree_distance(a: &[&str], b: &[&str]) -> u32 {
    let common = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    ((a.len() - common) + (b.len() - common)) as u32
}

/// Hops between the directories containing two files: up from the first to
/// their deepest common ancestor, then down to the second.
pub fn directory_distance(path_a: &str, path_b: &str) -> u32 {
    tree_distance(&dir_components(path_a), &dir_components(path_b))
}

/// Lower-cased extension of the file name, empty when there is none.
pub fn extension_of(path: &str) -> String {
    let name = path.rsplit('/').next().unwrap_or(path);
    match name.rfind('.') {
        Some(pos) if pos > 0 => name[pos + 1..].to_lowercase(),
        _ => String::new(),
    }
}

#[derive(Debug, Clone, Copy)]
struct FileEvent {
    ts: i64,
    author: u32,
    commit: u32,
}

#[derive(Debug, Clone, Copy)]
struct TestEvent {
    ts: i64,
    failed: bool,
}

/// Read-only lookup structure over commit and test history.
#[derive(Debug, Default)]
pub struct HistoryIndex {
    file_events: HashMap<String, Vec<FileEvent>>,
    commit_lookup: HashMap<String, u32>,
    commits: Vec<CommitRecord>,
    test_events: HashMap<String, Vec<TestEvent>>,
    cycle_ts: Vec<i64>,
}

impl HistoryIndex {
    /// Flaky and broken verdicts do not count towards failure rates.
    pub fn new(commits: &[CommitRecord], cycles: &[CiCycle]) -> Self {
        let mut authors: HashMap<&str, u32> = HashMap::new();
        let mut file_events: HashMap<String, Vec<FileEvent>> = HashMap::new();
        let mut commit_lookup = HashMap::with_capacity(commits.len());
        for (idx, commit) in commits.iter().enumerate() {
            let next = authors.len() as u32;
            let author = *authors.entry(commit.author_id.as_str()).or_insert(next);
            commit_lookup.insert(commit.commit_id.clone(), idx as u32);
            for change in &commit.changes {
                file_events.entry(change.path.clone()).or_default().push(FileEvent {
                    ts: commit.timestamp,
                    author,
                    commit: idx as u32,
                });
            }
        }
        for events in file_events.values_mut() {
            events.sort_by_key(|e| (e.ts, e.commit));
        }

        let mut test_events: HashMap<String, Vec<TestEvent>> = HashMap::new();
        let mut cycle_ts = Vec::with_capacity(cycles.len());
        for cycle in cycles {
            cycle_ts.push(cycle.timestamp);
            for v in cycle.verdicts.iter().filter(|v| !v.is_unstable()) {
                test_events.entry(v.test_id.clone()).or_default().push(TestEvent {
                    ts: cycle.timestamp,
                    failed: v.verdict.is_failed(),
                });
            }
        }
        for events in test_events.values_mut() {
            events.sort_by_key(|e| e.ts);
        }
        cycle_ts.sort_unstable();

        Self {
            file_events,
            commit_lookup,
            commits: commits.to_vec(),
            test_events,
            cycle_ts,
        }
    }

    pub fn commit(&self, id: &str) -> Option<&CommitRecord> {
        self.commit_lookup.get(id).map(|&i| &self.commits[i as usize])
    }

    pub fn commits(&self) -> &[CommitRecord] {
        &self.commits
    }

    /// The change a cycle tested: union of its commits' file changes.
    pub fn cycle_change(&self, cycle: &CiCycle) -> ChangeSet {
        ChangeSet::union_of(
            &cycle.cycle_id,
            cycle.timestamp,
            cycle.commit_ids.iter().filter_map(|id| self.commit(id)),
        )
    }

    fn excluded_set(&self, change: &ChangeSet) -> HashSet<u32> {
        change
            .commit_ids
            .iter()
            .filter_map(|id| self.commit_lookup.get(id).copied())
            .collect()
    }

    fn window_events(&self, path: &str, as_of: i64, days: i64) -> &[FileEvent] {
        let Some(events) = self.file_events.get(path) else {
            return &[];
        };
        let from = as_of - days * SECONDS_PER_DAY;
        let lo = events.partition_point(|e| e.ts < from);
        let hi = events.partition_point(|e| e.ts < as_of);
        &events[lo..hi]
    }

    fn file_vector(
        &self,
        path: &str,
        as_of: i64,
        current: Option<&FileChange>,
        excluded: &HashSet<u32>,
    ) -> FileFeatureVector {
        let mut n_changes = [0u32; 3];
        for (slot, days) in CHANGE_WINDOWS.iter().enumerate() {
            n_changes[slot] = self
                .window_events(path, as_of, *days)
                .iter()
                .filter(|e| !excluded.contains(&e.commit))
                .count() as u32;
        }
        let authors: HashSet<u32> = self
            .window_events(path, as_of, ACTIVITY_WINDOW_DAYS)
            .iter()
            .filter(|e| !excluded.contains(&e.commit))
            .map(|e| e.author)
            .collect();
        let mut v = FileFeatureVector {
            n_distinct_authors: authors.len() as u32,
            n_changes,
            ..FileFeatureVector::default()
        };
        if let Some(change) = current {
            v.change_flag = true;
            v.lines_added = change.lines_added;
            v.lines_deleted = change.lines_deleted;
            v.change_type = Some(change.change_type);
        }
        v
    }

    fn test_vector(&self, test_id: &str, as_of: i64) -> TestFeatureVector {
        let mut out = TestFeatureVector::default();
        let Some(events) = self.test_events.get(test_id) else {
            return out;
        };
        let hi = events.partition_point(|e| e.ts < as_of);
        for (slot, days) in FAILURE_WINDOWS.iter().enumerate() {
            let lo = events.partition_point(|e| e.ts < as_of - days * SECONDS_PER_DAY);
            let window = &events[lo..hi];
            if !window.is_empty() {
                let failed = window.iter().filter(|e| e.failed).count();
                out.failure_rate[slot] = failed as f64 / window.len() as f64;
            }
        }
        out
    }

    /// Cycles with a timestamp in `[as_of - days, as_of)`.
    pub fn cycles_in_window(&self, as_of: i64, days: i64) -> usize {
        let lo = self.cycle_ts.partition_point(|&t| t < as_of - days * SECONDS_PER_DAY);
        let hi = self.cycle_ts.partition_point(|&t| t < as_of);
        hi - lo
    }
}

/// File features of `path` as of `as_of`. The commits listed in `change`
/// (if any) are left out of the windows; line counts and change type come
/// from `current_change`.
pub fn file_features(
    path: &str,
    index: &HistoryIndex,
    as_of: i64,
    current_change: Option<&FileChange>,
    change: Option<&ChangeSet>,
) -> FileFeatureVector {
    let excluded = change.map(|c| index.excluded_set(c)).unwrap_or_default();
    index.file_vector(path, as_of, current_change, &excluded)
}

/// Failure rates of a test over the 7/14/28 days before `as_of`; zero when
/// the test did not run in a window.
pub fn test_features(test_id: &str, index: &HistoryIndex, as_of: i64) -> TestFeatureVector {
    index.test_vector(test_id, as_of)
}

/// Splits changed files into those with usable history and those changed
/// too rarely or too often. `n_cycles_in_window` is the number of cycles in
/// the activity window; with zero cycles only the lower bound applies.
pub fn partition_known_files<'c>(
    changed: &'c [(FileChange, FileFeatureVector)],
    n_cycles_in_window: usize,
    config: &FeatureConfig,
) -> (Vec<&'c (FileChange, FileFeatureVector)>, Vec<&'c (FileChange, FileFeatureVector)>) {
    let max_changes = config.max_change_fraction * n_cycles_in_window as f64;
    changed.iter().partition(|(_, v)| {
        let n = v.n_changes[2];
        n >= config.min_changes_56d && (n_cycles_in_window == 0 || f64::from(n) <= max_changes)
    })
}

/// Three known changed files nearest to the test file, each with its file
/// features, extension slot and distance. Empty when the test has no path.
pub fn cross_file_features(
    test: &TestCase,
    known_changed: &[(FileChange, FileFeatureVector)],
    vocab: &FeatureVocabulary,
) -> CrossFeatureVector {
    if test.test_path.is_empty() {
        return CrossFeatureVector::default();
    }
    let test_dir = dir_components(&test.test_path);
    let mut scored: Vec<(u32, &str, &FileFeatureVector)> = known_changed
        .iter()
        .map(|(c, v)| (tree_distance(&test_dir, &dir_components(&c.path)), c.path.as_str(), v))
        .collect();
    scored.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    CrossFeatureVector {
        neighbors: scored
            .into_iter()
            .take(CROSS_NEIGHBORS)
            .map(|(distance, path, v)| CrossNeighbor {
                path: path.to_string(),
                features: *v,
                extension_slot: vocab.extension_slot(&extension_of(path)),
                distance,
            })
            .collect(),
    }
}

/// Per-change state shared by every test row of that change.
#[derive(Debug, Clone)]
pub struct PreparedChange {
    pub change_id: String,
    pub as_of: i64,
    /// Known changed files with their vectors and directory components, by path.
    known: Vec<(FileChange, FileFeatureVector)>,
    known_dirs: Vec<Vec<String>>,
    file_entries: Vec<(u32, f64)>,
    unknown: UnknownFilesAggregate,
}

impl PreparedChange {
    pub fn known_files(&self) -> &[(FileChange, FileFeatureVector)] {
        &self.known
    }

    pub fn unknown(&self) -> &UnknownFilesAggregate {
        &self.unknown
    }
}

/// Which verdicts become training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityPolicy {
    pub drop_flaky: bool,
    pub drop_broken: bool,
}

impl Default for StabilityPolicy {
    fn default() -> Self {
        Self {
            drop_flaky: true,
            drop_broken: true,
        }
    }
}

/// Builds rows against a fixed vocabulary and history.
pub struct FeatureBuilder<'a> {
    pub index: &'a HistoryIndex,
    pub vocab: &'a FeatureVocabulary,
    pub config: &'a FeatureConfig,
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(index: &'a HistoryIndex, vocab: &'a FeatureVocabulary, config: &'a FeatureConfig) -> Self {
        Self { index, vocab, config }
    }

    pub fn prepare_change(&self, change: &ChangeSet) -> PreparedChange {
        let as_of = change.timestamp;
        let excluded = self.index.excluded_set(change);
        let mut files: Vec<&FileChange> = change.files.iter().collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        files.dedup_by(|a, b| a.path == b.path);
        let described: Vec<(FileChange, FileFeatureVector)> = files
            .into_iter()
            .map(|f| ((*f).clone(), self.index.file_vector(&f.path, as_of, Some(f), &excluded)))
            .collect();
        let n_cycles = self.index.cycles_in_window(as_of, ACTIVITY_WINDOW_DAYS);
        let (active, filtered) = partition_known_files(&described, n_cycles, self.config);

        let mut known = Vec::new();
        let mut unknown_files = filtered;
        for item in active {
            if self.vocab.groups.file && self.vocab.file_slot(&item.0.path).is_none() {
                unknown_files.push(item);
            } else {
                known.push(item.clone());
            }
        }

        let mut file_entries = Vec::new();
        if self.vocab.groups.file {
            for (change, v) in &known {
                if let Some(slot) = self.vocab.file_slot(&change.path) {
                    let base = self.vocab.file_block_offset(slot);
                    for (k, value) in v.to_array().into_iter().enumerate() {
                        if value != 0.0 {
                            file_entries.push(((base + k) as u32, value));
                        }
                    }
                }
            }
        }

        let mut unknown = UnknownFilesAggregate::default();
        if !unknown_files.is_empty() {
            let n = unknown_files.len();
            unknown.n_filtered_files = n as u32;
            let mut sums = [0u64; 3];
            for (c, v) in &unknown_files {
                unknown.lines_added += u64::from(c.lines_added);
                unknown.lines_deleted += u64::from(c.lines_deleted);
                for k in 0..3 {
                    sums[k] += u64::from(v.n_changes[k]);
                }
            }
            for k in 0..3 {
                unknown.mean_changes[k] = sums[k] as f64 / n as f64;
            }
        }

        let known_dirs = known
            .iter()
            .map(|(c, _)| dir_components(&c.path).into_iter().map(str::to_string).collect())
            .collect();
        PreparedChange {
            change_id: change.change_id.clone(),
            as_of,
            known,
            known_dirs,
            file_entries,
            unknown,
        }
    }

    fn cross_for(&self, prepared: &PreparedChange, test: &TestCase) -> CrossFeatureVector {
        if test.test_path.is_empty() {
            return CrossFeatureVector::default();
        }
        let test_dir = dir_components(&test.test_path);
        let mut scored: Vec<(u32, usize)> = prepared
            .known_dirs
            .iter()
            .enumerate()
            .map(|(i, dir)| {
                let dir: Vec<&str> = dir.iter().map(String::as_str).collect();
                (tree_distance(&test_dir, &dir), i)
            })
            .collect();
        // known files are sorted by path, so index order breaks distance ties
        scored.sort_unstable();
        CrossFeatureVector {
            neighbors: scored
                .into_iter()
                .take(CROSS_NEIGHBORS)
                .map(|(distance, i)| {
                    let (change, v) = &prepared.known[i];
                    CrossNeighbor {
                        path: change.path.clone(),
                        features: *v,
                        extension_slot: self.vocab.extension_slot(&extension_of(&change.path)),
                        distance,
                    }
                })
                .collect(),
        }
    }

    pub fn row_for(&self, prepared: &PreparedChange, test: &TestCase, label: Option<u8>) -> FeatureRow {
        let vocab = self.vocab;
        let mut entries = prepared.file_entries.clone();

        if vocab.groups.test {
            let t = self.index.test_vector(&test.test_id, prepared.as_of);
            let base = vocab.test_offset();
            for (k, rate) in t.failure_rate.into_iter().enumerate() {
                entries.push(((base + k) as u32, rate));
            }
        }

        if vocab.groups.cross {
            let cross = self.cross_for(prepared, test);
            let slot_dim = vocab.cross_slot_dim();
            for s in 0..CROSS_NEIGHBORS {
                let base = vocab.cross_offset() + s * slot_dim;
                let distance_pos = base + FILE_DIM + vocab.extension_dim();
                match cross.neighbors.get(s) {
                    Some(n) => {
                        for (k, value) in n.features.to_array().into_iter().enumerate() {
                            entries.push(((base + k) as u32, value));
                        }
                        entries.push(((base + FILE_DIM + n.extension_slot) as u32, 1.0));
                        entries.push((distance_pos as u32, f64::from(n.distance)));
                    }
                    None => entries.push((distance_pos as u32, f64::from(vocab.distance_sentinel))),
                }
            }
        }

        if vocab.groups.unknown {
            let base = vocab.unknown_offset();
            for (k, value) in prepared.unknown.to_array().into_iter().enumerate() {
                entries.push(((base + k) as u32, value));
            }
        }

        FeatureRow {
            key: prepared.change_id.clone(),
            test_id: test.test_id.clone(),
            features: SparseVector::from_pairs(entries),
            label,
        }
    }

    /// Row for one (change, test) pair.
    pub fn build_row(&self, change: &ChangeSet, test: &TestCase) -> FeatureRow {
        self.row_for(&self.prepare_change(change), test, None)
    }
}

/// Builds the vocabulary from the commits up to the end of the training
/// window and the tests seen there.
pub fn build_vocabulary(
    commits: &[CommitRecord],
    train_cycles: &[CiCycle],
    tests: &[TestCase],
    config: &FeatureConfig,
    groups: FeatureGroups,
) -> FeatureVocabulary {
    let until = train_cycles.iter().map(|c| c.timestamp).max().unwrap_or(i64::MAX);
    let training_commits: Vec<&CommitRecord> = commits.iter().filter(|c| c.timestamp < until).collect();

    let mut ext_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut files = Vec::new();
    let mut file_dirs: HashSet<Vec<&str>> = HashSet::new();
    for commit in &training_commits {
        for change in &commit.changes {
            files.push(change.path.clone());
            *ext_counts.entry(extension_of(&change.path)).or_default() += 1;
            file_dirs.insert(dir_components(&change.path));
        }
    }
    let extensions = ext_counts
        .into_iter()
        .filter(|(_, n)| *n >= config.min_extension_count)
        .map(|(e, _)| e);

    let test_dirs: HashSet<Vec<&str>> = tests
        .iter()
        .filter(|t| !t.test_path.is_empty())
        .map(|t| dir_components(&t.test_path))
        .collect();
    let max_distance = test_dirs
        .iter()
        .flat_map(|t| file_dirs.iter().map(move |f| tree_distance(t, f)))
        .max()
        .unwrap_or(0);

    FeatureVocabulary::new(files, extensions, max_distance + 1, groups)
}

/// One labelled row per (cycle, executed test), features as of the cycle
/// timestamp. Verdicts rejected by `policy` produce no row. Rows come out in
/// cycle order, then verdict order.
pub fn build_training_matrix(
    cycles: &[CiCycle],
    tests: &BTreeMap<String, TestCase>,
    builder: &FeatureBuilder<'_>,
    policy: StabilityPolicy,
) -> Vec<FeatureRow> {
    cycles
        .par_iter()
        .map(|cycle| {
            let change = builder.index.cycle_change(cycle);
            let prepared = builder.prepare_change(&change);
            cycle
                .verdicts
                .iter()
                .filter(|v| !(policy.drop_flaky && v.flaky) && !(policy.drop_broken && v.broken))
                .map(|v| {
                    let fallback;
                    let test = match tests.get(&v.test_id) {
                        Some(t) => t,
                        None => {
                            fallback = TestCase::new(v.test_id.clone(), "");
                            &fallback
                        }
                    };
                    builder.row_for(&prepared, test, Some(u8::from(v.verdict.is_failed())))
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
