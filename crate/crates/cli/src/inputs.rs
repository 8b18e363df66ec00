//! Input file readers.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;
use tts_core::datamodel::{normalize_path, ChangeSet, CiCycle, CommitRecord, TestCase};
use tts_core::ingest::{self, CsvOptions, CsvSchema, TestHistory};

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

pub fn commits(path: &Path) -> anyhow::Result<Vec<CommitRecord>> {
    ingest::parse_commit_log(open(path)?).with_context(|| format!("reading commit log {}", path.display()))
}

pub fn results(path: &Path) -> anyhow::Result<TestHistory> {
    ingest::parse_test_results(open(path)?).with_context(|| format!("reading test results {}", path.display()))
}

pub fn dataset(path: &Path, schema: CsvSchema, failed_codes: &[String]) -> anyhow::Result<Vec<CiCycle>> {
    let mut options = CsvOptions::default();
    if !failed_codes.is_empty() {
        options.failed_codes = failed_codes.to_vec();
    }
    ingest::parse_ci_csv(open(path)?, schema, &options).with_context(|| format!("reading dataset {}", path.display()))
}

#[derive(Deserialize)]
struct TestLine {
    test: String,
    #[serde(default)]
    path: String,
    #[serde(default)]
    module: Option<String>,
}

/// One JSON object per line: `{"test": str, "path": str?, "module": str?}`.
pub fn tests(path: &Path) -> anyhow::Result<Vec<TestCase>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TestLine =
            serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        if !seen.insert(t.test.clone()) {
            bail!("{}: line {}: duplicate test `{}`", path.display(), i + 1, t.test);
        }
        let mut case = TestCase::new(t.test, &t.path);
        case.module_id = t.module;
        out.push(case);
    }
    Ok(out)
}

pub fn write_tests(tests: &[TestCase], out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    for t in tests {
        let mut obj = serde_json::json!({ "test": t.test_id, "path": t.test_path });
        if let Some(m) = &t.module_id {
            obj["module"] = serde_json::Value::from(m.as_str());
        }
        serde_json::to_writer(&mut *out, &obj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// The change under test, in commit-log format. Several commits are merged
/// into one change named after the latest of them.
pub fn change(path: &Path) -> anyhow::Result<ChangeSet> {
    let commits = commits(path)?;
    match commits.as_slice() {
        [] => bail!("{}: no commit in change file", path.display()),
        [one] => Ok(ChangeSet::from_commit(one)),
        many => {
            let last = many
                .iter()
                .max_by(|a, b| (a.timestamp, &a.commit_id).cmp(&(b.timestamp, &b.commit_id)))
                .expect("non-empty");
            Ok(ChangeSet::union_of(&last.commit_id, last.timestamp, many))
        }
    }
}

/// One path per line; blank lines skipped.
pub fn path_list(path: &Path) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if !line.trim().is_empty() {
            out.push(normalize_path(line.trim()));
        }
    }
    Ok(out)
}

pub fn text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn bytes(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file_with(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn test_list_round_trip() {
        let mut case = TestCase::new("t2", "src/a/T2.java");
        case.module_id = Some("a".into());
        let cases = vec![TestCase::new("t1", ""), case];
        let mut buf = Vec::new();
        write_tests(&cases, &mut buf).unwrap();
        let f = file_with(&String::from_utf8(buf).unwrap());
        assert_eq!(tests(f.path()).unwrap(), cases);
    }

    #[test]
    fn duplicate_tests_rejected() {
        let f = file_with("{\"test\":\"a\"}\n\n{\"test\":\"a\"}\n");
        assert!(tests(f.path()).is_err());
    }

    #[test]
    fn change_merges_commits() {
        let f = file_with(concat!(
            "{\"id\":\"c1\",\"ts\":10,\"author\":\"x\",\"files\":[{\"path\":\"a.java\",\"type\":\"modified\",\"add\":1,\"del\":0}]}\n",
            "{\"id\":\"c2\",\"ts\":20,\"author\":\"x\",\"files\":[{\"path\":\"b.md\",\"type\":\"added\",\"add\":3,\"del\":0}]}\n",
        ));
        let c = change(f.path()).unwrap();
        assert_eq!(c.change_id, "c2");
        assert_eq!(c.timestamp, 20);
        assert_eq!(c.files.len(), 2);
        assert!(change(file_with("").path()).is_err());
    }

    #[test]
    fn path_list_normalizes() {
        let f = file_with("a/b.java\n\n  c/pom.xml \n");
        assert_eq!(path_list(f.path()).unwrap(), vec!["a/b.java", "c/pom.xml"]);
    }
}
