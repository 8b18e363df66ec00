//! Ranking, filtering and budgeted selection of tests for one change.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ChangeSet, CiCycle, TestCase};
use crate::features::{dir_components, extension_of, tree_distance, FeatureBuilder};
use crate::learner::{LearnError, Model};

pub const DEFAULT_BUDGET: usize = 50;
pub const DEFAULT_MODULE_MARKERS: [&str; 2] = ["build.gradle", "build.gradle.kts"];
pub const DEFAULT_DOC_EXTENSIONS: [&str; 1] = ["md"];
pub const DEFAULT_DEPENDENCY_HOPS: u32 = 1;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("unsupported language {0:?}: comment detection covers java and kotlin")]
    UnsupportedLanguage(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Unstable,
    WrongModule,
    DocsOnlyCommit,
    CommentOnlyCommit,
}

/// Scores every test against the change and sorts by score descending, then
/// test id ascending.
pub fn rank_tests(
    model: &Model,
    builder: &FeatureBuilder<'_>,
    change: &ChangeSet,
    tests: &[TestCase],
) -> Result<Vec<(String, f64)>, SelectorError> {
    model.check_fingerprint(&builder.vocab.fingerprint())?;
    let prepared = builder.prepare_change(change);
    let mut scored: Vec<(String, f64)> = tests
        .par_iter()
        .map(|t| {
            let row = builder.row_for(&prepared, t, None);
            (t.test_id.clone(), model.score(&row.features))
        })
        .collect();
    sort_ranked(&mut scored);
    Ok(scored)
}

pub fn sort_ranked(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Instability flags from a test's most recent verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StabilityFlags {
    pub flaky: bool,
    pub broken: bool,
}

/// Flags of each test's latest verdict, by cycle timestamp.
pub fn latest_flags(cycles: &[CiCycle]) -> BTreeMap<String, StabilityFlags> {
    let mut latest: BTreeMap<String, (i64, StabilityFlags)> = BTreeMap::new();
    for cycle in cycles {
        for v in &cycle.verdicts {
            let flags = StabilityFlags {
                flaky: v.flaky,
                broken: v.broken,
            };
            match latest.get(&v.test_id) {
                Some((ts, _)) if *ts > cycle.timestamp => {}
                _ => {
                    latest.insert(v.test_id.clone(), (cycle.timestamp, flags));
                }
            }
        }
    }
    latest.into_iter().map(|(k, (_, f))| (k, f)).collect()
}

pub type FilterOutcome = (Vec<String>, Vec<(String, FilterReason)>);

pub fn stability_filter(tests: &[String], flags: &BTreeMap<String, StabilityFlags>) -> FilterOutcome {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for t in tests {
        match flags.get(t) {
            Some(f) if f.flaky || f.broken => removed.push((t.clone(), FilterReason::Unstable)),
            _ => kept.push(t.clone()),
        }
    }
    (kept, removed)
}

/// Module roots: directories that contain a build marker file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleMap {
    roots: BTreeSet<String>,
}

impl ModuleMap {
    pub fn from_paths<'a>(paths: impl IntoIterator<Item = &'a str>, markers: &[&str]) -> Self {
        let roots = paths
            .into_iter()
            .filter(|p| {
                let name = p.rsplit('/').next().unwrap_or(p);
                markers.contains(&name)
            })
            .map(|p| dir_components(p).join("/"))
            .collect();
        Self { roots }
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn roots(&self) -> impl Iterator<Item = &str> {
        self.roots.iter().map(String::as_str)
    }

    /// Deepest marker directory above `path`, or "" for the root module.
    pub fn module_of(&self, path: &str) -> String {
        let dirs = dir_components(path);
        for len in (1..=dirs.len()).rev() {
            let candidate = dirs[..len].join("/");
            if self.roots.contains(&candidate) {
                return candidate;
            }
        }
        String::new()
    }
}

fn module_distance(a: &str, b: &str) -> u32 {
    let split = |s: &str| -> Vec<String> { s.split('/').filter(|c| !c.is_empty()).map(str::to_string).collect() };
    let (a, b) = (split(a), split(b));
    let a: Vec<&str> = a.iter().map(String::as_str).collect();
    let b: Vec<&str> = b.iter().map(String::as_str).collect();
    tree_distance(&a, &b)
}

/// Keeps tests whose module lies within `hops` directory-tree hops of a module
/// touched by the change. Nothing is removed when no markers exist, when
/// the change has no files, or for tests without a path or module.
pub fn modular_filter(tests: &[TestCase], changed_files: &[String], modules: &ModuleMap, hops: u32) -> FilterOutcome {
    let ids = || tests.iter().map(|t| t.test_id.clone()).collect::<Vec<_>>();
    if modules.is_empty() || changed_files.is_empty() {
        return (ids(), Vec::new());
    }
    let changed: BTreeSet<String> = changed_files.iter().map(|f| modules.module_of(f)).collect();
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for t in tests {
        let module = match (&t.module_id, t.test_path.is_empty()) {
            (Some(m), _) => m.clone(),
            (None, false) => modules.module_of(&t.test_path),
            (None, true) => {
                kept.push(t.test_id.clone());
                continue;
            }
        };
        if changed.iter().any(|c| module_distance(c, &module) <= hops) {
            kept.push(t.test_id.clone());
        } else {
            removed.push((t.test_id.clone(), FilterReason::WrongModule));
        }
    }
    (kept, removed)
}

/// Runs the stability and module filters and merges their removals. A test
/// removed by both is reported as unstable.
pub fn apply_filters(
    tests: &[TestCase],
    flags: &BTreeMap<String, StabilityFlags>,
    changed_files: &[String],
    modules: &ModuleMap,
    hops: u32,
) -> BTreeMap<String, FilterReason> {
    let ids: Vec<String> = tests.iter().map(|t| t.test_id.clone()).collect();
    let (_, unstable) = stability_filter(&ids, flags);
    let (_, wrong_module) = modular_filter(tests, changed_files, modules, hops);
    let mut out: BTreeMap<String, FilterReason> = wrong_module.into_iter().collect();
    out.extend(unstable);
    out
}

/// True iff the change is non-empty and every path has a documentation
/// extension.
pub fn is_docs_only(change: &ChangeSet, doc_extensions: &[String]) -> bool {
    !change.files.is_empty()
        && change
            .files
            .iter()
            .all(|f| doc_extensions.iter().any(|e| e.eq_ignore_ascii_case(&extension_of(&f.path))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Java,
    Kotlin,
}

impl FromStr for Language {
    type Err = SelectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "java" => Ok(Language::Java),
            "kotlin" | "kt" => Ok(Language::Kotlin),
            _ => Err(SelectorError::UnsupportedLanguage(s.to_string())),
        }
    }
}

impl Language {
    pub fn from_path(path: &str) -> Result<Self, SelectorError> {
        match extension_of(path).as_str() {
            "java" => Ok(Language::Java),
            "kt" | "kts" => Ok(Language::Kotlin),
            other => Err(SelectorError::UnsupportedLanguage(other.to_string())),
        }
    }
}

/// Lexer state carried from line to line on one side of a hunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct LexState {
    block_depth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineKind {
    /// Whitespace and comment text only.
    Comment,
    Code,
    /// Lexing cannot be trusted (unterminated or multi-line string).
    Ambiguous,
}

fn lex_line(line: &str, state: &mut LexState, lang: Language) -> LineKind {
    let b = line.as_bytes();
    let mut i = 0;
    let mut code = false;
    while i < b.len() {
        if state.block_depth > 0 {
            if b[i..].starts_with(b"*/") {
                state.block_depth -= 1;
                i += 2;
            } else if lang == Language::Kotlin && b[i..].starts_with(b"/*") {
                state.block_depth += 1;
                i += 2;
            } else {
                i += 1;
            }
            continue;
        }
        match b[i] {
            b' ' | b'\t' | b'\r' | b'\x0c' => i += 1,
            b'/' if b[i..].starts_with(b"//") => break,
            b'/' if b[i..].starts_with(b"/*") => {
                state.block_depth = 1;
                i += 2;
            }
            b'"' if b[i..].starts_with(b"\"\"\"") => return LineKind::Ambiguous,
            q @ (b'"' | b'\'') => {
                code = true;
                i += 1;
                loop {
                    match b.get(i) {
                        None => return LineKind::Ambiguous,
                        Some(b'\\') => i += 2,
                        Some(&c) if c == q => {
                            i += 1;
                            break;
                        }
                        Some(_) => i += 1,
                    }
                }
            }
            _ => {
                code = true;
                i += 1;
            }
        }
    }
    if code {
        LineKind::Code
    } else {
        LineKind::Comment
    }
}

fn hunk_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^@@ -\d+(?:,(\d+))? \+\d+(?:,(\d+))? @@").expect("valid regex"))
}

/// True iff every added or removed line of a single-file unified diff is
/// blank or comment text, and the edit leaves the comment structure of the
/// surrounding lines unchanged. Anything the lexer cannot vouch for yields
/// false, as does a diff without changed lines.
pub fn is_comment_only(diff: &str, lang: Language) -> bool {
    let mut lines = diff.lines().peekable();
    let mut saw_change = false;
    while let Some(line) = lines.next() {
        if line.starts_with("diff ")
            || line.starts_with("index ")
            || line.starts_with("--- ")
            || line.starts_with("+++ ")
            || line.starts_with("new file mode")
            || line.starts_with("deleted file mode")
            || line.starts_with("similarity ")
            || line.starts_with("rename ")
            || line.starts_with("old mode")
            || line.starts_with("new mode")
            || line.starts_with('\\')
        {
            continue;
        }
        let Some(caps) = hunk_header().captures(line) else {
            return false;
        };
        let count = |i: usize| caps.get(i).map_or(Ok(1), |m| m.as_str().parse::<usize>());
        let (Ok(mut old_left), Ok(mut new_left)) = (count(1), count(2)) else {
            return false;
        };
        let mut old = LexState::default();
        let mut new = LexState::default();
        while old_left > 0 || new_left > 0 {
            let Some(body) = lines.next() else {
                return false;
            };
            if body.starts_with('\\') {
                continue;
            }
            let (tag, text) = match body.chars().next() {
                Some(c @ (' ' | '+' | '-')) => (c, &body[1..]),
                // some tools drop the space of an empty context line
                None => (' ', ""),
                Some(_) => return false,
            };
            match tag {
                ' ' => {
                    if old != new || old_left == 0 || new_left == 0 {
                        return false;
                    }
                    if lex_line(text, &mut old, lang) == LineKind::Ambiguous {
                        return false;
                    }
                    new = old;
                    old_left -= 1;
                    new_left -= 1;
                }
                '-' => {
                    if old_left == 0 || lex_line(text, &mut old, lang) != LineKind::Comment {
                        return false;
                    }
                    old_left -= 1;
                    saw_change = true;
                }
                _ => {
                    if new_left == 0 || lex_line(text, &mut new, lang) != LineKind::Comment {
                        return false;
                    }
                    new_left -= 1;
                    saw_change = true;
                }
            }
        }
        if old != new {
            return false;
        }
        while lines.peek().is_some_and(|l| l.starts_with('\\')) {
            lines.next();
        }
    }
    saw_change
}

/// Splits a multi-file git diff on `diff --git` headers and requires every
/// file to be a comment-only Java or Kotlin edit.
pub fn is_comment_only_patch(patch: &str) -> bool {
    let mut sections: Vec<(String, String)> = Vec::new();
    for line in patch.lines() {
        if let Some(rest) = line.strip_prefix("diff --git ") {
            let path = rest.rsplit(" b/").next().unwrap_or(rest).to_string();
            sections.push((path, String::new()));
        }
        match sections.last_mut() {
            Some((_, body)) => {
                body.push_str(line);
                body.push('\n');
            }
            None if line.trim().is_empty() => {}
            None => return false,
        }
    }
    !sections.is_empty()
        && sections.iter().all(|(path, body)| match Language::from_path(path) {
            Ok(lang) => is_comment_only(body, lang),
            Err(_) => false,
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTest {
    pub test: String,
    pub score: f64,
    /// 1-based position in the full ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredTest {
    pub test: String,
    pub reason: FilterReason,
}

/// Selection report for one change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSelection {
    pub change_id: String,
    pub selected: Vec<SelectedTest>,
    pub filtered: Vec<FilteredTest>,
    pub budget: usize,
    pub model_version: u32,
}

impl RankedSelection {
    pub fn selected_ids(&self) -> Vec<&str> {
        self.selected.iter().map(|s| s.test.as_str()).collect()
    }

    /// Report for a change that needs no tests: every test filtered with
    /// the same reason.
    pub fn skipped(change_id: &str, tests: &[TestCase], reason: FilterReason, budget: usize, model_version: u32) -> Self {
        let mut ids: Vec<&str> = tests.iter().map(|t| t.test_id.as_str()).collect();
        ids.sort_unstable();
        Self {
            change_id: change_id.to_string(),
            selected: Vec::new(),
            filtered: ids
                .into_iter()
                .map(|t| FilteredTest {
                    test: t.to_string(),
                    reason,
                })
                .collect(),
            budget,
            model_version,
        }
    }
}

/// First `k` tests of the ranking that no filter removed.
pub fn select(
    change_id: &str,
    ranked: &[(String, f64)],
    k: usize,
    filtered: &BTreeMap<String, FilterReason>,
    model_version: u32,
) -> RankedSelection {
    let selected = ranked
        .iter()
        .enumerate()
        .filter(|(_, (id, _))| !filtered.contains_key(id))
        .take(k)
        .map(|(i, (id, score))| SelectedTest {
            test: id.clone(),
            score: *score,
            rank: i + 1,
        })
        .collect();
    RankedSelection {
        change_id: change_id.to_string(),
        selected,
        filtered: filtered
            .iter()
            .map(|(t, r)| FilteredTest {
                test: t.clone(),
                reason: *r,
            })
            .collect(),
        budget: k,
        model_version,
    }
}
