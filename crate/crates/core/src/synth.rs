//! Seeded generator for small repository and CI histories with known
//! file-to-test fault dependencies.
//!
//! Layout: tests are spread over modules `src/m{k}` (each with a
//! `build.gradle.kts` marker), every test owns a package directory
//! `src/m{k}/p{j}` and source files are dealt round-robin over packages.
//! One cycle runs per day over that day's commits; a test fails when one of
//! its rule files changed that day, XOR a Bernoulli(`noise_rate`) flip.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    ChangeType, CiCycle, CommitRecord, FileChange, TestCase, TestVerdict, Verdict, SECONDS_PER_DAY,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("fault rule references unknown file `{0}`")]
    UnknownFile(String),
    #[error("fault rule references unknown test `{0}`")]
    UnknownTest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultRule {
    pub file: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_files: usize,
    pub n_tests: usize,
    pub n_days: usize,
    pub commits_per_day: usize,
    pub max_files_per_commit: usize,
    pub n_authors: usize,
    /// Explicit dependencies, by generated file path and test id.
    pub fault_rules: Vec<FaultRule>,
    /// Extra dependencies drawn from the seed; each pairs a test with the
    /// file next to it (falling back to any file).
    pub random_rules: usize,
    pub noise_rate: f64,
    /// Fraction of verdicts flagged flaky; their outcome is a coin toss.
    pub flaky_rate: f64,
    /// Epoch seconds of day 0; rounded down to a day boundary.
    pub start_ts: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_files: 200,
            n_tests: 100,
            n_days: 90,
            commits_per_day: 10,
            max_files_per_commit: 3,
            n_authors: 8,
            fault_rules: Vec::new(),
            random_rules: 10,
            noise_rate: 0.02,
            flaky_rate: 0.0,
            start_ts: 1_600_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthHistory {
    pub commits: Vec<CommitRecord>,
    pub cycles: Vec<CiCycle>,
    pub tests: Vec<TestCase>,
    /// Every path in the generated repository, markers and docs included.
    pub repo_files: Vec<String>,
    pub rules: Vec<FaultRule>,
}

pub fn test_id(j: usize) -> String {
    format!("t{j:04}")
}

fn module_of_test(j: usize, n_tests: usize, n_modules: usize) -> usize {
    j * n_modules / n_tests
}

fn file_extension(i: usize) -> &'static str {
    if i % 11 == 5 {
        "xml"
    } else if i % 7 == 3 {
        "java"
    } else {
        "kt"
    }
}

/// Generated file and test paths for a config, without any history.
pub fn layout(n_files: usize, n_tests: usize) -> (Vec<String>, Vec<TestCase>) {
    let n_modules = n_tests.div_ceil(10).max(1);
    let tests: Vec<TestCase> = (0..n_tests)
        .map(|j| {
            let m = module_of_test(j, n_tests, n_modules);
            TestCase::new(test_id(j), &format!("src/m{m}/p{j}/T{j:04}Test.kt"))
        })
        .collect();
    let files = (0..n_files)
        .map(|i| {
            let pkg = i % n_tests;
            let m = module_of_test(pkg, n_tests, n_modules);
            // the first file of a package sits next to its test, the rest one level down
            let sub = if i < n_tests { "" } else { "impl/" };
            format!("src/m{m}/p{pkg}/{sub}F{i:04}.{}", file_extension(i))
        })
        .collect();
    (files, tests)
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthHistory, SynthError> {
    if config.n_files == 0 || config.n_tests == 0 {
        return Err(SynthError::InvalidConfig("n_files and n_tests must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.noise_rate) || !(0.0..=1.0).contains(&config.flaky_rate) {
        return Err(SynthError::InvalidConfig("rates must lie in [0, 1]".into()));
    }
    if config.max_files_per_commit == 0 || config.n_authors == 0 {
        return Err(SynthError::InvalidConfig(
            "max_files_per_commit and n_authors must be at least 1".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (files, tests) = layout(config.n_files, config.n_tests);
    let n_modules = config.n_tests.div_ceil(10).max(1);

    let file_set: HashSet<&str> = files.iter().map(String::as_str).collect();
    let test_set: HashSet<&str> = tests.iter().map(|t| t.test_id.as_str()).collect();
    let mut rules: BTreeSet<FaultRule> = BTreeSet::new();
    for rule in &config.fault_rules {
        if !file_set.contains(rule.file.as_str()) {
            return Err(SynthError::UnknownFile(rule.file.clone()));
        }
        if !test_set.contains(rule.test.as_str()) {
            return Err(SynthError::UnknownTest(rule.test.clone()));
        }
        rules.insert(rule.clone());
    }
    if config.random_rules > 0 {
        let mut order: Vec<usize> = (0..config.n_tests).collect();
        order.shuffle(&mut rng);
        for &j in order.iter().take(config.random_rules.min(config.n_tests)) {
            let i = if j < config.n_files {
                j
            } else {
                rng.gen_range(0..config.n_files)
            };
            rules.insert(FaultRule {
                file: files[i].clone(),
                test: test_id(j),
            });
        }
    }
    let rules: Vec<FaultRule> = rules.into_iter().collect();
    let mut deps: HashMap<&str, Vec<&str>> = HashMap::new();
    for rule in &rules {
        deps.entry(rule.test.as_str()).or_default().push(rule.file.as_str());
    }

    let durations: Vec<f64> = (0..config.n_tests)
        .map(|_| f64::from(rng.gen_range(10u32..=120)))
        .collect();
    let start = config.start_ts.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
    let mut touched_before: HashSet<usize> = HashSet::new();
    let mut commits = Vec::new();
    let mut cycles = Vec::new();

    for day in 0..config.n_days {
        let day_start = start + day as i64 * SECONDS_PER_DAY;
        let mut offsets: Vec<i64> = (0..config.commits_per_day)
            .map(|_| rng.gen_range(0..20 * 3600))
            .collect();
        offsets.sort_unstable();
        let mut day_commits = Vec::new();
        let mut changed_today: HashSet<&str> = HashSet::new();
        for (c, offset) in offsets.into_iter().enumerate() {
            let n_changed = rng.gen_range(1..=config.max_files_per_commit.min(config.n_files));
            let picked = rand::seq::index::sample(&mut rng, config.n_files, n_changed).into_vec();
            let mut picked_sorted = picked;
            picked_sorted.sort_unstable();
            let changes: Vec<FileChange> = picked_sorted
                .iter()
                .map(|&i| {
                    let change_type = if touched_before.insert(i) {
                        ChangeType::Added
                    } else {
                        ChangeType::Modified
                    };
                    changed_today.insert(files[i].as_str());
                    FileChange::new(
                        &files[i],
                        change_type,
                        rng.gen_range(1..60),
                        if change_type == ChangeType::Added {
                            0
                        } else {
                            rng.gen_range(0..25)
                        },
                    )
                })
                .collect();
            let commit_id = format!("c{day:03}-{c:02}");
            day_commits.push(commit_id.clone());
            commits.push(CommitRecord {
                commit_id,
                timestamp: day_start + offset,
                author_id: format!("dev{}", rng.gen_range(0..config.n_authors)),
                changes,
            });
        }

        let cycle_id = format!("n{day:03}");
        let cycle_ts = day_start + 22 * 3600;
        let verdicts = tests
            .iter()
            .enumerate()
            .map(|(j, test)| {
                let triggered = deps
                    .get(test.test_id.as_str())
                    .is_some_and(|fs| fs.iter().any(|f| changed_today.contains(f)));
                let flip = rng.gen_bool(config.noise_rate);
                let flaky = rng.gen_bool(config.flaky_rate);
                let failed = if flaky { rng.gen_bool(0.5) } else { triggered ^ flip };
                TestVerdict {
                    cycle_id: cycle_id.clone(),
                    test_id: test.test_id.clone(),
                    timestamp: cycle_ts,
                    verdict: if failed { Verdict::Failed } else { Verdict::Passed },
                    duration: Some(durations[j]),
                    flaky,
                    broken: false,
                }
            })
            .collect();
        cycles.push(CiCycle {
            cycle_id,
            timestamp: cycle_ts,
            commit_ids: day_commits,
            verdicts,
        });
    }

    let mut repo_files: BTreeSet<String> = files.iter().cloned().collect();
    for t in &tests {
        repo_files.insert(t.test_path.clone());
    }
    for m in 0..n_modules {
        repo_files.insert(format!("src/m{m}/build.gradle.kts"));
        repo_files.insert(format!("src/m{m}/README.md"));
    }
    repo_files.insert("settings.gradle.kts".into());

    Ok(SynthHistory {
        commits,
        cycles,
        tests,
        repo_files: repo_files.into_iter().collect(),
        rules,
    })
}

/// Tests that the rules say must fail in each cycle, keyed by cycle id.
pub fn rule_failures(history: &SynthHistory) -> BTreeMap<String, BTreeSet<String>> {
    let by_id: HashMap<&str, &CommitRecord> =
        history.commits.iter().map(|c| (c.commit_id.as_str(), c)).collect();
    history
        .cycles
        .iter()
        .map(|cycle| {
            let changed: HashSet<&str> = cycle
                .commit_ids
                .iter()
                .filter_map(|id| by_id.get(id.as_str()))
                .flat_map(|c| c.changes.iter().map(|f| f.path.as_str()))
                .collect();
            let failing = history
                .rules
                .iter()
                .filter(|r| changed.contains(r.file.as_str()))
                .map(|r| r.test.clone())
                .collect();
            (cycle.cycle_id.clone(), failing)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            n_files: 6,
            n_tests: 3,
            n_days: 20,
            commits_per_day: 1,
            max_files_per_commit: 1,
            random_rules: 0,
            noise_rate: noise,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn rule_file_change_fails_test() {
        let (files, _) = layout(6, 3);
        let mut cfg = small(0.0);
        cfg.fault_rules = vec![FaultRule {
            file: files[0].clone(),
            test: test_id(0),
        }];
        let h = generate(&cfg, 7).unwrap();
        let mut seen_trigger = false;
        for cycle in &h.cycles {
            let changed = h
                .commits
                .iter()
                .filter(|c| cycle.commit_ids.contains(&c.commit_id))
                .any(|c| c.changes.iter().any(|f| f.path == files[0]));
            let t0 = cycle.verdicts.iter().find(|v| v.test_id == test_id(0)).unwrap();
            assert_eq!(t0.verdict.is_failed(), changed);
            seen_trigger |= changed;
            for v in cycle.verdicts.iter().filter(|v| v.test_id != test_id(0)) {
                assert!(!v.verdict.is_failed());
            }
        }
        assert!(seen_trigger);
    }

    #[test]
    fn same_seed_same_history() {
        let cfg = SynthConfig {
            n_days: 10,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg, 3).unwrap(), generate(&cfg, 3).unwrap());
        assert_ne!(generate(&cfg, 3).unwrap(), generate(&cfg, 4).unwrap());
    }

    #[test]
    fn unknown_rule_targets_rejected() {
        let mut cfg = small(0.0);
        cfg.fault_rules = vec![FaultRule {
            file: "nope.kt".into(),
            test: test_id(0),
        }];
        assert!(matches!(generate(&cfg, 1), Err(SynthError::UnknownFile(_))));
        let (files, _) = layout(6, 3);
        cfg.fault_rules = vec![FaultRule {
            file: files[1].clone(),
            test: "t9999".into(),
        }];
        assert!(matches!(generate(&cfg, 1), Err(SynthError::UnknownTest(_))));
        cfg.fault_rules.clear();
        cfg.noise_rate = 1.5;
        assert!(matches!(generate(&cfg, 1), Err(SynthError::InvalidConfig(_))));
    }

    #[test]
    fn noiseless_labels_replay_from_rules() {
        let cfg = SynthConfig {
            n_days: 30,
            noise_rate: 0.0,
            ..SynthConfig::default()
        };
        let h = generate(&cfg, 11).unwrap();
        assert_eq!(h.rules.len(), 10);
        let truth = rule_failures(&h);
        for cycle in &h.cycles {
            let failed: BTreeSet<String> = cycle
                .verdicts
                .iter()
                .filter(|v| v.verdict.is_failed())
                .map(|v| v.test_id.clone())
                .collect();
            assert_eq!(failed, truth[&cycle.cycle_id]);
        }
    }

    #[test]
    fn random_rules_stay_in_package() {
        let h = generate(&SynthConfig::default(), 5).unwrap();
        for rule in &h.rules {
            let test = h.tests.iter().find(|t| t.test_id == rule.test).unwrap();
            let dir = test.test_path.rsplit_once('/').unwrap().0;
            assert_eq!(rule.file.rsplit_once('/').unwrap().0, dir, "{rule:?}");
        }
    }
}
