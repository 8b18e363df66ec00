//! Random histories for property tests.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tts_core::datamodel::{
    ChangeType, CiCycle, CommitRecord, FileChange, TestCase, TestVerdict, Verdict, SECONDS_PER_DAY,
};

pub const DIRS: [&str; 7] = ["src/a", "src/a/x", "src/b", "src/b/y/z", "lib", "docs", "app/core"];
pub const EXTS: [&str; 5] = ["java", "kt", "md", "xml", "py"];
pub const TYPES: [ChangeType; 5] = [
    ChangeType::Added,
    ChangeType::Modified,
    ChangeType::Deleted,
    ChangeType::Renamed,
    ChangeType::Copied,
];

pub struct Fuzz {
    pub commits: Vec<CommitRecord>,
    pub cycles: Vec<CiCycle>,
    pub tests: Vec<TestCase>,
    pub days: i64,
}

pub fn random_path(rng: &mut ChaCha8Rng) -> String {
    let dir = DIRS.choose(rng).unwrap();
    let ext = EXTS.choose(rng).unwrap();
    format!("{dir}/f{}.{ext}", rng.gen_range(0..8))
}

pub fn random_commit(rng: &mut ChaCha8Rng, id: String, ts: i64, max_files: usize) -> CommitRecord {
    let n = rng.gen_range(1..=max_files);
    let mut paths: Vec<String> = (0..n).map(|_| random_path(rng)).collect();
    paths.sort();
    paths.dedup();
    CommitRecord {
        commit_id: id,
        timestamp: ts,
        author_id: format!("dev{}", rng.gen_range(0..5)),
        changes: paths
            .iter()
            .map(|p| FileChange::new(p, *TYPES.choose(rng).unwrap(), rng.gen_range(0..200), rng.gen_range(0..50)))
            .collect(),
    }
}

pub fn random_history(rng: &mut ChaCha8Rng) -> Fuzz {
    let days = rng.gen_range(10..70i64);
    let n_commits = rng.gen_range(5..80);
    let mut commits: Vec<CommitRecord> = (0..n_commits)
        .map(|i| {
            let ts = rng.gen_range(0..days * SECONDS_PER_DAY);
            random_commit(rng, format!("c{i:03}"), ts, 6)
        })
        .collect();
    commits.sort_by_key(|c| (c.timestamp, c.commit_id.clone()));
    let tests: Vec<TestCase> = (0..rng.gen_range(2..12))
        .map(|j| {
            let path = if rng.gen_bool(0.15) {
                String::new()
            } else {
                format!("{}/T{j}Test.{}", DIRS.choose(rng).unwrap(), EXTS[rng.gen_range(0..2)])
            };
            TestCase::new(format!("t{j}"), &path)
        })
        .collect();
    let mut cycles = Vec::new();
    let mut prev = i64::MIN;
    for d in 0..days {
        if rng.gen_bool(0.3) {
            continue;
        }
        let ts = d * SECONDS_PER_DAY + rng.gen_range(0..SECONDS_PER_DAY);
        let commit_ids = commits
            .iter()
            .filter(|c| c.timestamp <= ts && c.timestamp > prev)
            .map(|c| c.commit_id.clone())
            .collect();
        prev = ts;
        let cycle_id = format!("k{d:03}");
        let mut verdicts = Vec::new();
        for t in &tests {
            if !rng.gen_bool(0.8) {
                continue;
            }
            verdicts.push(TestVerdict {
                cycle_id: cycle_id.clone(),
                test_id: t.test_id.clone(),
                timestamp: ts,
                verdict: if rng.gen_bool(0.2) { Verdict::Failed } else { Verdict::Passed },
                duration: Some(rng.gen_range(0.1..5.0)),
                flaky: rng.gen_bool(0.05),
                broken: rng.gen_bool(0.03),
            });
        }
        cycles.push(CiCycle {
            cycle_id,
            timestamp: ts,
            commit_ids,
            verdicts,
        });
    }
    Fuzz {
        commits,
        cycles,
        tests,
        days,
    }
}
