//! End-to-end operations: train, predict, evaluate and the public-dataset
//! benchmark.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ChangeSet, CiCycle, CommitRecord, FeatureGroups, FeatureVocabulary, TestCase};
use crate::eval::{self, EvalError, MetricReport, RankedCycle, ReplayTest, Strategy};
use crate::features::{build_training_matrix, build_vocabulary, FeatureBuilder, FeatureConfig, HistoryIndex, StabilityPolicy};
use crate::ingest::{chronological_split, IngestError, TestHistory};
use crate::learner::{self, FeatureSpace, LearnError, LearnerConfig, Model, TuneResult};
use crate::selector::{self, FilterReason, ModuleMap, RankedSelection, SelectorError};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("data error: {0}")]
    Data(String),
    #[error("model artifact error: {0}")]
    Artifact(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Everything needed to score new changes: the fitted model, the feature
/// layout it was trained on and the end of its training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub trained_until: i64,
    pub feature_config: FeatureConfig,
    pub vocabulary: FeatureVocabulary,
    pub model: Model,
    pub tuning: Vec<TuneResult>,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("artifact serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| PipelineError::Artifact(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(ARTIFACT_VERSION) => {}
            Some(v) => return Err(PipelineError::Artifact(format!("unsupported artifact version {v}"))),
            None => return Err(PipelineError::Artifact("missing version".into())),
        }
        let model_bytes = serde_json::to_vec(&value["model"]).map_err(|e| PipelineError::Artifact(e.to_string()))?;
        // runs the model's own version check
        Model::from_json(&model_bytes)?;
        let mut artifact: ModelArtifact =
            serde_json::from_value(value).map_err(|e| PipelineError::Artifact(e.to_string()))?;
        artifact.vocabulary.rebuild_lookups();
        artifact.model.check_fingerprint(&artifact.vocabulary.fingerprint())?;
        Ok(artifact)
    }

    pub fn feature_space(&self) -> FeatureSpace {
        FeatureSpace {
            dim: self.vocabulary.dim(),
            fingerprint: self.vocabulary.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub train_days: u32,
    pub val_days: u32,
    pub groups: FeatureGroups,
    pub feature_config: FeatureConfig,
    pub policy: StabilityPolicy,
    /// Defaults to [`learner::default_grid`] when absent.
    pub grid: Option<Vec<LearnerConfig>>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            train_days: 56,
            val_days: 14,
            groups: FeatureGroups::all(),
            feature_config: FeatureConfig::default(),
            policy: StabilityPolicy::default(),
            grid: None,
            seed: 0,
        }
    }
}

fn base_rate(rows: &[crate::datamodel::FeatureRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.label == Some(1)).count() as f64 / rows.len() as f64
}

/// Tunes on a training window and validates on the window after it.
fn fit_windows(
    commits: &[CommitRecord],
    cycles: &[CiCycle],
    tests: &BTreeMap<String, TestCase>,
    train: &[CiCycle],
    val: &[CiCycle],
    opts: &TrainOptions,
) -> Result<ModelArtifact> {
    let test_list: Vec<TestCase> = tests.values().cloned().collect();
    let vocabulary = build_vocabulary(commits, train, &test_list, &opts.feature_config, opts.groups);
    let index = HistoryIndex::new(commits, cycles);
    let builder = FeatureBuilder::new(&index, &vocabulary, &opts.feature_config);
    let train_rows = build_training_matrix(train, tests, &builder, opts.policy);
    let val_rows = build_training_matrix(val, tests, &builder, opts.policy);
    tracing::info!(
        train_cycles = train.len(),
        val_cycles = val.len(),
        train_rows = train_rows.len(),
        val_rows = val_rows.len(),
        dim = vocabulary.dim(),
        "built training matrix"
    );
    let grid = match &opts.grid {
        Some(g) => g.clone(),
        None => learner::default_grid(base_rate(&train_rows), opts.seed),
    };
    let space = FeatureSpace {
        dim: vocabulary.dim(),
        fingerprint: vocabulary.fingerprint(),
    };
    let outcome = learner::tune(&train_rows, &val_rows, &grid, &space)?;
    tracing::info!(config = ?outcome.best_config, "selected configuration");
    Ok(ModelArtifact {
        version: ARTIFACT_VERSION,
        trained_until: val.iter().map(|c| c.timestamp).max().unwrap_or_default(),
        feature_config: opts.feature_config.clone(),
        vocabulary,
        model: outcome.best_model,
        tuning: outcome.results,
    })
}

/// Trains on the last `train_days + val_days` of history.
pub fn train(commits: &[CommitRecord], history: &TestHistory, opts: &TrainOptions) -> Result<ModelArtifact> {
    let (train, val) = chronological_split(&history.cycles, opts.train_days, opts.val_days)?;
    fit_windows(commits, &history.cycles, &history.tests, &train, &val, opts)
}

/// How many top-ranked tests count as run when computing NAPFD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSize {
    TopK(usize),
    /// `ceil(fraction * n)` of each cycle's tests.
    Fraction(f64),
}

impl SelectionSize {
    pub fn count(self, n: usize) -> usize {
        match self {
            SelectionSize::TopK(k) => k.min(n),
            SelectionSize::Fraction(f) => ((f * n as f64).ceil() as usize).min(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    pub selection: SelectionSize,
    /// Only cycles strictly after this timestamp; defaults to the end of
    /// the model's training data.
    pub after: Option<i64>,
    pub seed: u64,
    pub curve_points: usize,
    /// Seconds charged for a test with no recorded duration.
    pub fallback_duration_secs: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: selector::DEFAULT_BUDGET,
            selection: SelectionSize::TopK(selector::DEFAULT_BUDGET),
            after: None,
            seed: 0,
            curve_points: 100,
            fallback_duration_secs: 60.0,
        }
    }
}

/// Ranks the stable verdicts of one cycle, features as of the cycle.
pub fn rank_cycle(
    artifact: &ModelArtifact,
    builder: &FeatureBuilder<'_>,
    cycle: &CiCycle,
    tests: &BTreeMap<String, TestCase>,
) -> Vec<ReplayTest> {
    let change = builder.index.cycle_change(cycle);
    let prepared = builder.prepare_change(&change);
    let mut out: Vec<ReplayTest> = cycle
        .verdicts
        .iter()
        .filter(|v| !v.is_unstable())
        .map(|v| {
            let fallback;
            let test = match tests.get(&v.test_id) {
                Some(t) => t,
                None => {
                    fallback = TestCase::new(v.test_id.clone(), "");
                    &fallback
                }
            };
            let row = builder.row_for(&prepared, test, None);
            ReplayTest {
                test_id: v.test_id.clone(),
                score: artifact.model.score(&row.features),
                failed: v.verdict.is_failed(),
                duration_secs: v.duration,
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.test_id.cmp(&b.test_id)));
    out
}

/// Replays held-out cycles: classification metrics over every stable
/// verdict, ranking metrics over cycles with a failure, and the
/// all / random-k / model strategy comparison.
pub fn evaluate(
    artifact: &ModelArtifact,
    commits: &[CommitRecord],
    history: &TestHistory,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let after = opts.after.unwrap_or(artifact.trained_until);
    let index = HistoryIndex::new(commits, &history.cycles);
    let builder = FeatureBuilder::new(&index, &artifact.vocabulary, &artifact.feature_config);
    let held_out: Vec<&CiCycle> = history.cycles.iter().filter(|c| c.timestamp > after).collect();
    if held_out.is_empty() {
        return Err(PipelineError::Data(format!("no cycles after timestamp {after} to evaluate")));
    }
    let replays: Vec<Vec<ReplayTest>> = held_out
        .iter()
        .map(|c| rank_cycle(artifact, &builder, c, &history.tests))
        .filter(|r| !r.is_empty())
        .collect();
    report_from_replays(&replays, opts)
}

pub fn report_from_replays(replays: &[Vec<ReplayTest>], opts: &EvalOptions) -> Result<MetricReport> {
    let ranked: Vec<RankedCycle> = replays
        .iter()
        .map(|r| RankedCycle {
            scores: r.iter().map(|t| t.score).collect(),
            labels: r.iter().map(|t| t.failed).collect(),
        })
        .collect();
    if ranked.is_empty() {
        return Err(PipelineError::Data("no stable verdicts to evaluate".into()));
    }
    let selection = opts.selection;
    let mut report = eval::report_from_cycles(&ranked, opts.k, |n| selection.count(n), opts.curve_points)?;
    report.strategies =
        eval::compare_strategies(replays, &Strategy::ALL, opts.k, opts.seed, opts.fallback_duration_secs);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    /// Fraction of each evaluation cycle that is run.
    pub budget: f64,
    /// Leading fraction of cycles used for training and validation.
    pub train_fraction: f64,
    /// Trailing fraction of the training cycles held out for tuning.
    pub val_fraction: f64,
    pub grid: Option<Vec<LearnerConfig>>,
    pub seed: u64,
    pub k: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            budget: 0.5,
            train_fraction: 0.5,
            val_fraction: 0.2,
            grid: None,
            seed: 0,
            k: selector::DEFAULT_BUDGET,
        }
    }
}

/// Reduced grid for the benchmark: depth and rate fixed, class weight tuned.
pub fn bench_grid(base_rate: f64, seed: u64) -> Vec<LearnerConfig> {
    let mut weights = vec![1.0];
    if base_rate > 0.0 && base_rate < 1.0 {
        weights.push(1.0 / base_rate);
    }
    weights
        .into_iter()
        .map(|positive_class_weight| LearnerConfig {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            positive_class_weight,
            seed,
            ..LearnerConfig::default()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub n_train_cycles: usize,
    pub n_val_cycles: usize,
    pub n_eval_cycles: usize,
    pub best_config: LearnerConfig,
    pub report: MetricReport,
}

/// Chronological benchmark on a verdict-only dataset with test features
/// alone: tune on the leading cycles, then rank every later cycle with
/// features computed from the history before it.
pub fn bench(cycles: &[CiCycle], opts: &BenchOptions) -> Result<BenchOutcome> {
    if !(opts.budget > 0.0 && opts.budget <= 1.0) {
        return Err(PipelineError::Data("budget must lie in (0, 1]".into()));
    }
    let mut cycles = cycles.to_vec();
    cycles.sort_by_key(|c| c.timestamp);
    let n_fit = ((cycles.len() as f64) * opts.train_fraction).round() as usize;
    let n_val = ((n_fit as f64) * opts.val_fraction).round().max(1.0) as usize;
    if n_fit < 2 || n_val >= n_fit || n_fit >= cycles.len() {
        return Err(IngestError::InsufficientHistory(format!(
            "{} cycles cannot be split into training, validation and evaluation",
            cycles.len()
        ))
        .into());
    }
    let (train, val) = cycles[..n_fit].split_at(n_fit - n_val);
    let tests: BTreeMap<String, TestCase> = cycles
        .iter()
        .flat_map(|c| c.verdicts.iter())
        .map(|v| (v.test_id.clone(), TestCase::new(v.test_id.clone(), "")))
        .collect();
    let mut train_opts = TrainOptions {
        groups: FeatureGroups::test_only(),
        grid: opts.grid.clone(),
        seed: opts.seed,
        ..TrainOptions::default()
    };
    if train_opts.grid.is_none() {
        let labels: usize = train.iter().flat_map(|c| &c.verdicts).filter(|v| !v.is_unstable()).count();
        let fails: usize = train
            .iter()
            .flat_map(|c| &c.verdicts)
            .filter(|v| !v.is_unstable() && v.verdict.is_failed())
            .count();
        let rate = if labels == 0 { 0.0 } else { fails as f64 / labels as f64 };
        train_opts.grid = Some(bench_grid(rate, opts.seed));
    }
    let artifact = fit_windows(&[], &cycles, &tests, train, val, &train_opts)?;
    let eval_cycles = &cycles[n_fit..];
    let index = HistoryIndex::new(&[], &cycles);
    let builder = FeatureBuilder::new(&index, &artifact.vocabulary, &artifact.feature_config);
    let replays: Vec<Vec<ReplayTest>> = eval_cycles
        .iter()
        .map(|c| rank_cycle(&artifact, &builder, c, &tests))
        .filter(|r| !r.is_empty())
        .collect();
    let eval_opts = EvalOptions {
        k: opts.k,
        selection: SelectionSize::Fraction(opts.budget),
        seed: opts.seed,
        fallback_duration_secs: 0.0,
        ..EvalOptions::default()
    };
    let report = report_from_replays(&replays, &eval_opts)?;
    Ok(BenchOutcome {
        n_train_cycles: train.len(),
        n_val_cycles: val.len(),
        n_eval_cycles: eval_cycles.len(),
        best_config: artifact.model.config.clone(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    pub k: usize,
    pub doc_extensions: Vec<String>,
    pub module_markers: Vec<String>,
    pub dependency_hops: u32,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            k: selector::DEFAULT_BUDGET,
            doc_extensions: selector::DEFAULT_DOC_EXTENSIONS.iter().map(|s| s.to_string()).collect(),
            module_markers: selector::DEFAULT_MODULE_MARKERS.iter().map(|s| s.to_string()).collect(),
            dependency_hops: selector::DEFAULT_DEPENDENCY_HOPS,
        }
    }
}

/// Inputs of a single selection beyond the model.
pub struct PredictInputs<'a> {
    pub commits: &'a [CommitRecord],
    pub cycles: &'a [CiCycle],
    pub change: &'a ChangeSet,
    pub tests: &'a [TestCase],
    /// Every path in the repository, for module detection.
    pub repo_files: Option<&'a [String]>,
    /// Unified diff of the change, for comment-only detection.
    pub diff: Option<&'a str>,
}

/// Selects tests for one change. Documentation-only and comment-only changes
/// short-circuit to an empty selection.
pub fn predict(artifact: &ModelArtifact, inputs: &PredictInputs<'_>, opts: &PredictOptions) -> Result<RankedSelection> {
    let change = inputs.change;
    let version = artifact.model.version;
    if selector::is_docs_only(change, &opts.doc_extensions) {
        return Ok(RankedSelection::skipped(
            &change.change_id,
            inputs.tests,
            FilterReason::DocsOnlyCommit,
            opts.k,
            version,
        ));
    }
    if inputs.diff.is_some_and(selector::is_comment_only_patch) {
        return Ok(RankedSelection::skipped(
            &change.change_id,
            inputs.tests,
            FilterReason::CommentOnlyCommit,
            opts.k,
            version,
        ));
    }
    let past: Vec<CiCycle> = inputs
        .cycles
        .iter()
        .filter(|c| c.timestamp < change.timestamp)
        .cloned()
        .collect();
    let index = HistoryIndex::new(inputs.commits, &past);
    let builder = FeatureBuilder::new(&index, &artifact.vocabulary, &artifact.feature_config);
    let ranked = selector::rank_tests(&artifact.model, &builder, change, inputs.tests)?;
    let flags = selector::latest_flags(&past);
    let markers: Vec<&str> = opts.module_markers.iter().map(String::as_str).collect();
    let modules = match inputs.repo_files {
        Some(files) => ModuleMap::from_paths(files.iter().map(String::as_str), &markers),
        None => ModuleMap::default(),
    };
    let changed: Vec<String> = change.files.iter().map(|f| f.path.clone()).collect();
    let filtered = selector::apply_filters(inputs.tests, &flags, &changed, &modules, opts.dependency_hops);
    Ok(selector::select(&change.change_id, &ranked, opts.k, &filtered, version))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    fn small_history(seed: u64) -> (synth::SynthHistory, TestHistory) {
        let config = SynthConfig {
            n_files: 60,
            n_tests: 20,
            n_days: 40,
            commits_per_day: 4,
            random_rules: 4,
            ..SynthConfig::default()
        };
        let h = synth::generate(&config, seed).unwrap();
        let th = TestHistory {
            cycles: h.cycles.clone(),
            tests: h.tests.iter().map(|t| (t.test_id.clone(), t.clone())).collect(),
        };
        (h, th)
    }

    fn quick_opts() -> TrainOptions {
        TrainOptions {
            train_days: 20,
            val_days: 7,
            grid: Some(vec![LearnerConfig {
                n_trees: 20,
                max_depth: 3,
                ..LearnerConfig::default()
            }]),
            ..TrainOptions::default()
        }
    }

    #[test]
    fn artifact_round_trip_is_byte_identical() {
        let (h, th) = small_history(1);
        let artifact = train(&h.commits, &th, &quick_opts()).unwrap();
        let bytes = artifact.to_json();
        let back = ModelArtifact::from_json(&bytes).unwrap();
        assert_eq!(back.to_json(), bytes);
        assert_eq!(back.vocabulary.fingerprint(), artifact.vocabulary.fingerprint());
        let again = train(&h.commits, &th, &quick_opts()).unwrap();
        assert_eq!(again.to_json(), bytes);
    }

    #[test]
    fn artifact_rejects_other_versions_and_layouts() {
        let (h, th) = small_history(2);
        let artifact = train(&h.commits, &th, &quick_opts()).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&artifact.to_json()).unwrap();
        v["version"] = serde_json::json!(7);
        assert!(ModelArtifact::from_json(&serde_json::to_vec(&v).unwrap()).is_err());
        let mut v: serde_json::Value = serde_json::from_slice(&artifact.to_json()).unwrap();
        v["vocabulary"]["distance_sentinel"] = serde_json::json!(999);
        assert!(matches!(
            ModelArtifact::from_json(&serde_json::to_vec(&v).unwrap()),
            Err(PipelineError::Learn(LearnError::FingerprintMismatch { .. }))
        ));
    }

    #[test]
    fn docs_only_change_selects_nothing() {
        let (h, th) = small_history(3);
        let artifact = train(&h.commits, &th, &quick_opts()).unwrap();
        let change = ChangeSet {
            change_id: "doc".into(),
            timestamp: h.cycles.last().unwrap().timestamp + 10,
            files: vec![crate::datamodel::FileChange::new(
                "src/m0/README.md",
                crate::datamodel::ChangeType::Modified,
                3,
                0,
            )],
            commit_ids: vec![],
        };
        let inputs = PredictInputs {
            commits: &h.commits,
            cycles: &h.cycles,
            change: &change,
            tests: &h.tests,
            repo_files: Some(&h.repo_files),
            diff: None,
        };
        let sel = predict(&artifact, &inputs, &PredictOptions::default()).unwrap();
        assert!(sel.selected.is_empty());
        assert_eq!(sel.filtered.len(), h.tests.len());
        assert!(sel.filtered.iter().all(|f| f.reason == FilterReason::DocsOnlyCommit));
    }

    #[test]
    fn evaluate_reports_held_out_cycles() {
        let (h, th) = small_history(4);
        let mut opts = quick_opts();
        opts.train_days = 14;
        opts.val_days = 7;
        let (train_part, _) = th.cycles.split_at(30);
        let fit_history = TestHistory {
            cycles: train_part.to_vec(),
            tests: th.tests.clone(),
        };
        let artifact = train(&h.commits, &fit_history, &opts).unwrap();
        let report = evaluate(&artifact, &h.commits, &th, &EvalOptions::default()).unwrap();
        assert_eq!(report.n_cycles, 10);
        assert!(report.apfd > 0.0 && report.apfd <= 1.0);
        assert_eq!(report.strategies.len(), 3);
        assert_eq!(report.strategies[0].recall, 1.0);
    }

    #[test]
    fn selection_size_rounds_up() {
        assert_eq!(SelectionSize::Fraction(0.5).count(5), 3);
        assert_eq!(SelectionSize::TopK(50).count(10), 10);
    }
}
