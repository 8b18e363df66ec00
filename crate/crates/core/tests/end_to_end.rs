use tts_core::datamodel::{ChangeSet, SECONDS_PER_DAY};
use tts_core::ingest::{self, TestHistory};
use tts_core::learner::LearnerConfig;
use tts_core::pipeline::{self, BenchOptions, EvalOptions, PredictInputs, PredictOptions, TrainOptions};
use tts_core::synth::{self, SynthConfig};

fn small() -> SynthConfig {
    SynthConfig {
        n_files: 80,
        n_tests: 30,
        n_days: 50,
        commits_per_day: 5,
        random_rules: 6,
        ..SynthConfig::default()
    }
}

fn quick_grid() -> Option<Vec<LearnerConfig>> {
    Some(vec![LearnerConfig {
        n_trees: 40,
        max_depth: 3,
        ..LearnerConfig::default()
    }])
}

fn history(h: &synth::SynthHistory, until: i64) -> TestHistory {
    TestHistory {
        cycles: h.cycles.iter().filter(|c| c.timestamp <= until).cloned().collect(),
        tests: h.tests.iter().map(|t| (t.test_id.clone(), t.clone())).collect(),
    }
}

#[test]
fn synthetic_logs_round_trip_through_the_native_formats() {
    let h = synth::generate(&small(), 4).unwrap();
    let mut commits = Vec::new();
    ingest::write_commit_log(&h.commits, &mut commits).unwrap();
    assert_eq!(ingest::parse_commit_log(commits.as_slice()).unwrap(), h.commits);
    let th = history(&h, i64::MAX);
    let mut results = Vec::new();
    ingest::write_test_results(&th, &mut results).unwrap();
    let back = ingest::parse_test_results(results.as_slice()).unwrap();
    assert_eq!(back.cycles, th.cycles);
    assert_eq!(back.tests, th.tests);
}

#[test]
fn train_evaluate_predict_on_held_out_days() {
    let h = synth::generate(&small(), 2).unwrap();
    let cutoff = h.cycles.last().unwrap().timestamp - 10 * SECONDS_PER_DAY;
    let opts = TrainOptions {
        train_days: 25,
        val_days: 10,
        grid: quick_grid(),
        ..TrainOptions::default()
    };
    let artifact = pipeline::train(&h.commits, &history(&h, cutoff), &opts).unwrap();
    assert!(artifact.trained_until <= cutoff);

    let report = pipeline::evaluate(&artifact, &h.commits, &history(&h, i64::MAX), &EvalOptions::default()).unwrap();
    assert!(report.n_cycles >= 9 && report.n_cycles <= 11, "{}", report.n_cycles);
    assert!(report.n_failing_cycles > 0);
    assert!(report.apfd > 0.5, "apfd {}", report.apfd);
    assert!((0.0..=1.0).contains(&report.napfd));
    assert_eq!(report.strategies.len(), 3);

    // a held-out commit touching a rule file
    let rule = &h.rules[0];
    let commit = h
        .commits
        .iter()
        .filter(|c| c.timestamp > cutoff)
        .find(|c| c.changes.iter().any(|f| f.path == rule.file));
    if let Some(commit) = commit {
        let change = ChangeSet::from_commit(commit);
        let inputs = PredictInputs {
            commits: &h.commits,
            cycles: &h.cycles,
            change: &change,
            tests: &h.tests,
            repo_files: Some(&h.repo_files),
            diff: None,
        };
        let sel = pipeline::predict(&artifact, &inputs, &PredictOptions { k: 10, ..PredictOptions::default() }).unwrap();
        assert!(sel.selected.len() <= 10);
        let ranks: Vec<usize> = sel.selected.iter().map(|s| s.rank).collect();
        assert!(ranks.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn training_twice_gives_identical_bytes() {
    let h = synth::generate(&small(), 7).unwrap();
    let opts = TrainOptions {
        train_days: 25,
        val_days: 10,
        grid: quick_grid(),
        ..TrainOptions::default()
    };
    let a = pipeline::train(&h.commits, &history(&h, i64::MAX), &opts).unwrap();
    let b = pipeline::train(&h.commits, &history(&h, i64::MAX), &opts).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn bench_on_verdict_only_cycles() {
    let h = synth::generate(&small(), 3).unwrap();
    let opts = BenchOptions {
        grid: quick_grid(),
        ..BenchOptions::default()
    };
    let out = pipeline::bench(&h.cycles, &opts).unwrap();
    assert_eq!(out.n_train_cycles + out.n_val_cycles + out.n_eval_cycles, h.cycles.len());
    assert!(out.report.n_cycles > 0);
    assert!((0.0..=1.0).contains(&out.report.apfd));
    assert!(out.report.napfd <= out.report.apfd + 1e-12);
}
