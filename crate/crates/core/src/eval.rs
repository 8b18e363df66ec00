//! Classification, ranking and fault-detection metrics.
//!
//! Ranked inputs are given as labels in rank order (`true` = failed), rank 1
//! first. Any metric whose denominator is zero is reported as 0.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {scores} scores, {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no failures: APFD undefined")]
    NoFailures,
    #[error("rank position {position} outside 1..={n}")]
    PositionOutOfRange { position: usize, n: usize },
    #[error("{positions} failure positions given for {m} failures")]
    FailureCountMismatch { positions: usize, m: usize },
    #[error("selected count {selected} exceeds suite size {n}")]
    SelectionTooLarge { selected: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

/// A row is predicted positive when its score is at least `threshold`.
pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionMetrics> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(from_counts(tp, fp, tn, fn_))
}

pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionMetrics {
    let (t, f, n, m) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let precision = ratio(t, t + f);
    let recall = ratio(t, t + m);
    let mcc_den = ((t + f) * (t + m) * (n + f) * (n + m)).sqrt();
    ConfusionMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(t + n, t + f + n + m),
        precision,
        recall,
        f1: f1_of(precision, recall),
        mcc: ratio(t * n - f * m, mcc_den).clamp(-1.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KMetrics {
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub f1_at_k: f64,
}

/// Top-k precision, recall and F1 for one ranking. Precision divides by the
/// number of tests actually in the top k, which is below k for short suites.
pub fn k_metrics_single(ranked_labels: &[bool], k: usize) -> Result<KMetrics> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let top = k.min(ranked_labels.len());
    let hits = ranked_labels[..top].iter().filter(|&&y| y).count() as f64;
    let m = ranked_labels.iter().filter(|&&y| y).count() as f64;
    let precision_at_k = ratio(hits, top as f64);
    let recall_at_k = ratio(hits, m);
    Ok(KMetrics {
        precision_at_k,
        recall_at_k,
        f1_at_k: f1_of(precision_at_k, recall_at_k),
    })
}

/// Uniform average of [`k_metrics_single`] over cycles.
pub fn k_metrics(cycles: &[Vec<bool>], k: usize) -> Result<KMetrics> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if cycles.is_empty() {
        return Ok(KMetrics::default());
    }
    let mut sum = KMetrics::default();
    for c in cycles {
        let m = k_metrics_single(c, k)?;
        sum.precision_at_k += m.precision_at_k;
        sum.recall_at_k += m.recall_at_k;
        sum.f1_at_k += m.f1_at_k;
    }
    let n = cycles.len() as f64;
    Ok(KMetrics {
        precision_at_k: sum.precision_at_k / n,
        recall_at_k: sum.recall_at_k / n,
        f1_at_k: sum.f1_at_k / n,
    })
}

/// `1 - sum(TF) / (n m) + 1 / (2n)` for 1-based failure positions.
pub fn apfd(positions: &[usize], n_tests: usize, m_failures: usize) -> Result<f64> {
    if m_failures == 0 {
        return Err(EvalError::NoFailures);
    }
    if positions.len() != m_failures {
        return Err(EvalError::FailureCountMismatch {
            positions: positions.len(),
            m: m_failures,
        });
    }
    if let Some(&bad) = positions.iter().find(|&&p| p == 0 || p > n_tests) {
        return Err(EvalError::PositionOutOfRange {
            position: bad,
            n: n_tests,
        });
    }
    let n = n_tests as f64;
    let m = m_failures as f64;
    let sum: f64 = positions.iter().map(|&p| p as f64).sum();
    Ok(1.0 - sum / (n * m) + 1.0 / (2.0 * n))
}

/// APFD of a full ranking given as labels in rank order.
pub fn apfd_ranked(ranked_labels: &[bool]) -> Result<f64> {
    let positions: Vec<usize> = failure_positions(ranked_labels);
    apfd(&positions, ranked_labels.len(), positions.len())
}

pub fn failure_positions(ranked_labels: &[bool]) -> Vec<usize> {
    ranked_labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| y)
        .map(|(i, _)| i + 1)
        .collect()
}

/// `p - sum(TF) / (m n) + p / (2n)`, where only the first `selected_count`
/// tests run, `n` is the whole suite, `p` the detected fraction of the `m`
/// failures and `TF` is 0 for a failure that was not selected.
pub fn napfd(ranked_labels: &[bool], selected_count: usize) -> Result<f64> {
    let n = ranked_labels.len();
    if selected_count > n {
        return Err(EvalError::SelectionTooLarge {
            selected: selected_count,
            n,
        });
    }
    let positions = failure_positions(ranked_labels);
    let m = positions.len();
    if m == 0 {
        return Err(EvalError::NoFailures);
    }
    let detected: Vec<usize> = positions.into_iter().filter(|&p| p <= selected_count).collect();
    let p = detected.len() as f64 / m as f64;
    let sum: f64 = detected.iter().map(|&p| p as f64).sum();
    let (n, m) = (n as f64, m as f64);
    Ok(p - sum / (m * n) + p / (2.0 * n))
}

/// Points `(i / n, detected_i / m)` for every prefix length `i` in `0..=n`.
pub fn confidence_curve(ranked_labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let m = ranked_labels.iter().filter(|&&y| y).count();
    if m == 0 {
        return Err(EvalError::NoFailures);
    }
    let n = ranked_labels.len() as f64;
    let mut out = Vec::with_capacity(ranked_labels.len() + 1);
    out.push((0.0, 0.0));
    let mut found = 0usize;
    for (i, &y) in ranked_labels.iter().enumerate() {
        found += usize::from(y);
        out.push(((i + 1) as f64 / n, found as f64 / m as f64));
    }
    Ok(out)
}

/// Averages several curves on a common grid of `points + 1` x positions,
/// reading each curve as a step function.
pub fn mean_curve(curves: &[Vec<(f64, f64)>], points: usize) -> Vec<(f64, f64)> {
    let points = points.max(1);
    (0..=points)
        .map(|j| {
            let x = j as f64 / points as f64;
            let ys: f64 = curves
                .iter()
                .map(|c| {
                    c.iter()
                        .take_while(|(cx, _)| *cx <= x + 1e-12)
                        .last()
                        .map_or(0.0, |(_, y)| *y)
                })
                .sum();
            (x, ratio(ys, curves.len() as f64))
        })
        .collect()
}

/// One test execution inside a replayed cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTest {
    pub test_id: String,
    pub score: f64,
    pub failed: bool,
    pub duration_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    All,
    RandomK,
    Tts,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::All, Strategy::RandomK, Strategy::Tts];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::All => "all",
            Strategy::RandomK => "random_k",
            Strategy::Tts => "tts",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    /// Mean fraction of the suite selected per cycle.
    pub selection_rate: f64,
    /// Mean over cycles with at least one failure.
    pub precision: f64,
    /// Mean over cycles with at least one failure.
    pub recall: f64,
    /// Total duration of selected tests over all cycles.
    pub test_minutes: f64,
}

/// Indices of the tests a strategy runs in one cycle. `Tts` takes the top k
/// by (score desc, test_id asc).
pub fn strategy_selection(strategy: Strategy, tests: &[ReplayTest], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..tests.len()).collect();
    match strategy {
        Strategy::All => idx,
        Strategy::RandomK => {
            idx.shuffle(rng);
            idx.truncate(k);
            idx
        }
        Strategy::Tts => {
            idx.sort_by(|&a, &b| {
                tests[b]
                    .score
                    .total_cmp(&tests[a].score)
                    .then_with(|| tests[a].test_id.cmp(&tests[b].test_id))
            });
            idx.truncate(k);
            idx
        }
    }
}

pub fn compare_strategies(
    cycles: &[Vec<ReplayTest>],
    strategies: &[Strategy],
    k: usize,
    seed: u64,
    fallback_duration_secs: f64,
) -> Vec<StrategyRow> {
    strategies
        .iter()
        .map(|&strategy| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut rate_sum, mut p_sum, mut r_sum, mut secs) = (0.0, 0.0, 0.0, 0.0);
            let mut n_failing_cycles = 0usize;
            let mut n_cycles = 0usize;
            for tests in cycles {
                if tests.is_empty() {
                    continue;
                }
                n_cycles += 1;
                let chosen = strategy_selection(strategy, tests, k, &mut rng);
                rate_sum += chosen.len() as f64 / tests.len() as f64;
                secs += chosen
                    .iter()
                    .map(|&i| tests[i].duration_secs.unwrap_or(fallback_duration_secs))
                    .sum::<f64>();
                let m = tests.iter().filter(|t| t.failed).count();
                if m > 0 {
                    n_failing_cycles += 1;
                    let hits = chosen.iter().filter(|&&i| tests[i].failed).count() as f64;
                    p_sum += ratio(hits, chosen.len() as f64);
                    r_sum += hits / m as f64;
                }
            }
            StrategyRow {
                strategy,
                selection_rate: ratio(rate_sum, n_cycles as f64),
                precision: ratio(p_sum, n_failing_cycles as f64),
                recall: ratio(r_sum, n_failing_cycles as f64),
                test_minutes: secs / 60.0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub k: usize,
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub f1_at_k: f64,
    pub apfd: f64,
    pub napfd: f64,
    pub n_cycles: usize,
    pub n_failing_cycles: usize,
    pub curve: Vec<(f64, f64)>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub wall_times: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub strategies: Vec<StrategyRow>,
}

/// Per-cycle ranking with the flag of every test, in rank order, plus the
/// raw scores for threshold metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCycle {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Fills the report from ranked cycles. Classification metrics pool every
/// row. Ranking metrics are means over cycles that contain a failure; NAPFD
/// runs the first `selected_count(n)` tests of each cycle.
pub fn report_from_cycles(
    cycles: &[RankedCycle],
    k: usize,
    selected_count: impl Fn(usize) -> usize,
    curve_points: usize,
) -> Result<MetricReport> {
    let scores: Vec<f64> = cycles.iter().flat_map(|c| c.scores.iter().copied()).collect();
    let labels: Vec<bool> = cycles.iter().flat_map(|c| c.labels.iter().copied()).collect();
    let cm = confusion_metrics(&scores, &labels, 0.5)?;
    let failing: Vec<&RankedCycle> = cycles.iter().filter(|c| c.labels.contains(&true)).collect();
    let failing_labels: Vec<Vec<bool>> = failing.iter().map(|c| c.labels.clone()).collect();
    let km = k_metrics(&failing_labels, k)?;
    let (mut apfd_sum, mut napfd_sum) = (0.0, 0.0);
    let mut curves = Vec::with_capacity(failing.len());
    for c in &failing {
        apfd_sum += apfd_ranked(&c.labels)?;
        let sel = selected_count(c.labels.len()).min(c.labels.len());
        napfd_sum += napfd(&c.labels, sel)?;
        curves.push(confidence_curve(&c.labels)?);
    }
    let nf = failing.len() as f64;
    Ok(MetricReport {
        accuracy: cm.accuracy,
        precision: cm.precision,
        recall: cm.recall,
        f1: cm.f1,
        mcc: cm.mcc,
        k,
        precision_at_k: km.precision_at_k,
        recall_at_k: km.recall_at_k,
        f1_at_k: km.f1_at_k,
        apfd: ratio(apfd_sum, nf),
        napfd: ratio(napfd_sum, nf),
        n_cycles: cycles.len(),
        n_failing_cycles: failing.len(),
        curve: mean_curve(&curves, curve_points),
        wall_times: BTreeMap::new(),
        strategies: Vec::new(),
    })
}

pub fn write_report_json<W: Write>(report: &MetricReport, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")
}

const REPORT_CSV_HEADER: [&str; 13] = [
    "configuration",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "mcc",
    "k",
    "precision_at_k",
    "recall_at_k",
    "f1_at_k",
    "apfd",
    "napfd",
    "n_failing_cycles",
];

/// One CSV row per named report.
pub fn write_reports_csv<W: Write>(reports: &[(String, MetricReport)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_HEADER)?;
    for (name, r) in reports {
        w.write_record([
            name.clone(),
            r.accuracy.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.mcc.to_string(),
            r.k.to_string(),
            r.precision_at_k.to_string(),
            r.recall_at_k.to_string(),
            r.f1_at_k.to_string(),
            r.apfd.to_string(),
            r.napfd.to_string(),
            r.n_failing_cycles.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_strategies_csv<W: Write>(rows: &[StrategyRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "selection_rate", "precision", "recall", "test_minutes"])?;
    for r in rows {
        w.write_record([
            r.strategy.as_str().to_string(),
            r.selection_rate.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.test_minutes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `x,y` CSV of a confidence curve.
pub fn write_curve_csv<W: Write>(curve: &[(f64, f64)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fraction_selected", "fraction_failures_found"])?;
    for (x, y) in curve {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
