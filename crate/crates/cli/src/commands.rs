//! Subcommand bodies: resolve flags against settings, read inputs, call the
//! pipeline, write artifacts.

use std::path::{Path, PathBuf};

use anyhow::Context;
use tts_core::datamodel::{CiCycle, CommitRecord};
use tts_core::eval;
use tts_core::ingest::CsvSchema;
use tts_core::pipeline::{self, BenchOptions, EvalOptions, ModelArtifact, PredictInputs, PredictOptions, SelectionSize, TrainOptions};
use tts_core::selector;
use tts_core::synth;

use crate::failure::{from_pipeline, Classify, Failure, Outcome};
use crate::inputs;
use crate::output::Outputs;
use crate::settings::{self, BenchSettings, EvaluateSettings, PredictSettings, SynthSettings, TrainSettings};
use crate::{BenchArgs, EvaluateArgs, PredictArgs, SynthArgs, Timings, TrainArgs};

fn required<T>(flag: &str, value: Option<T>) -> Outcome<T> {
    value.ok_or_else(|| Failure::usage(format!("missing --{flag} (flag or settings file)")))
}

fn list_or(flag: Vec<String>, setting: Option<Vec<String>>, default: Vec<String>) -> Vec<String> {
    if !flag.is_empty() {
        flag
    } else {
        setting.unwrap_or(default)
    }
}

fn check_k(k: usize) -> Outcome<usize> {
    if k == 0 {
        return Err(Failure::usage("--k must be positive"));
    }
    Ok(k)
}

fn check_budget(budget: f64) -> Outcome<f64> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Failure::usage(format!("--budget must lie in (0, 1], got {budget}")));
    }
    Ok(budget)
}

fn optional_commits(path: Option<&Path>) -> anyhow::Result<Vec<CommitRecord>> {
    match path {
        Some(p) => inputs::commits(p),
        None => Ok(Vec::new()),
    }
}

fn load_model(path: &Path) -> Outcome<ModelArtifact> {
    let bytes = inputs::bytes(path).model_err()?;
    ModelArtifact::from_json(&bytes).map_err(|e| from_pipeline(e, &format!("loading model {}", path.display())))
}

fn json_bytes<T: serde::Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn train(a: TrainArgs, s: TrainSettings, outputs: &mut Outputs, timings: &mut Timings) -> Outcome<()> {
    let results = required("results", a.results.or(s.results))?;
    let out = required("out", a.out.or(s.out))?;
    let commits_path = a.commits.or(s.commits);
    let mut opts = TrainOptions::default();
    if let Some(d) = a.train_days.or(s.train_days) {
        opts.train_days = d;
    }
    if let Some(d) = a.val_days.or(s.val_days) {
        opts.val_days = d;
    }
    if opts.train_days == 0 || opts.val_days == 0 {
        return Err(Failure::usage("--train-days and --val-days must be positive"));
    }
    if let Some(seed) = a.seed.or(s.seed) {
        opts.seed = seed;
    }
    if let Some(g) = a.groups.or(s.groups) {
        opts.groups = settings::parse_groups(&g).usage_err()?;
    }
    if let Some(f) = s.features {
        opts.feature_config = f;
    }
    if let Some(p) = s.stability {
        opts.policy = p;
    }
    if let Some(grid) = s.grid {
        for c in &grid {
            c.validate().map_err(anyhow::Error::from).usage_err()?;
        }
        opts.grid = Some(grid);
    }

    let (commits, history) = timings
        .time("read", || -> anyhow::Result<_> {
            Ok((optional_commits(commits_path.as_deref())?, inputs::results(&results)?))
        })
        .data_err()?;
    if commits.is_empty() && (opts.groups.file || opts.groups.cross || opts.groups.unknown) {
        tracing::warn!("no commit log given: file, cross and unknown features stay empty");
    }
    let artifact = timings
        .time("train", || pipeline::train(&commits, &history, &opts))
        .map_err(|e| from_pipeline(e, "training"))?;
    timings.time("write", || outputs.write(&out, &artifact.to_json())).data_err()?;
    let best = &artifact.model.config;
    println!(
        "trained {} trees (depth {}, rate {}, positive weight {:.3}) on {} features -> {}",
        artifact.model.trees.len(),
        best.max_depth,
        best.learning_rate,
        best.positive_class_weight,
        artifact.vocabulary.dim(),
        out.display()
    );
    Ok(())
}

pub fn predict(a: PredictArgs, s: PredictSettings, outputs: &mut Outputs, timings: &mut Timings) -> Outcome<()> {
    let model_path = required("model", a.model.or(s.model))?;
    let change_path = required("change", a.change.or(s.change))?;
    let tests_path = required("tests", a.tests.or(s.tests))?;
    let out = required("out", a.out.or(s.out))?;
    let defaults = PredictOptions::default();
    let opts = PredictOptions {
        k: check_k(a.k.or(s.k).unwrap_or(defaults.k))?,
        doc_extensions: list_or(a.doc_ext, s.doc_ext, defaults.doc_extensions),
        module_markers: list_or(a.module_marker, s.module_marker, defaults.module_markers),
        dependency_hops: a.hops.or(s.hops).unwrap_or(defaults.dependency_hops),
    };
    let commits_path = a.commits.or(s.commits);
    let results_path = a.results.or(s.results);
    let diff_path = a.diff.or(s.diff);
    let repo_files_path = a.repo_files.or(s.repo_files);

    let artifact = timings.time("load", || load_model(&model_path))?;
    struct Loaded {
        change: tts_core::datamodel::ChangeSet,
        tests: Vec<tts_core::datamodel::TestCase>,
        commits: Vec<CommitRecord>,
        cycles: Vec<CiCycle>,
        diff: Option<String>,
        repo_files: Option<Vec<String>>,
    }
    let loaded = timings
        .time("read", || -> anyhow::Result<Loaded> {
            Ok(Loaded {
                change: inputs::change(&change_path)?,
                tests: inputs::tests(&tests_path)?,
                commits: optional_commits(commits_path.as_deref())?,
                cycles: match &results_path {
                    Some(p) => inputs::results(p)?.cycles,
                    None => Vec::new(),
                },
                diff: diff_path.as_deref().map(inputs::text).transpose()?,
                repo_files: repo_files_path.as_deref().map(inputs::path_list).transpose()?,
            })
        })
        .data_err()?;
    let selection = timings
        .time("predict", || {
            pipeline::predict(
                &artifact,
                &PredictInputs {
                    commits: &loaded.commits,
                    cycles: &loaded.cycles,
                    change: &loaded.change,
                    tests: &loaded.tests,
                    repo_files: loaded.repo_files.as_deref(),
                    diff: loaded.diff.as_deref(),
                },
                &opts,
            )
        })
        .map_err(|e| from_pipeline(e, "predicting"))?;
    timings
        .time("write", || outputs.write(&out, &json_bytes(&selection)?))
        .data_err()?;
    println!(
        "selected {} of {} tests ({} filtered) for {} -> {}",
        selection.selected.len(),
        loaded.tests.len(),
        selection.filtered.len(),
        selection.change_id,
        out.display()
    );
    Ok(())
}

pub fn evaluate(a: EvaluateArgs, s: EvaluateSettings, outputs: &mut Outputs, timings: &mut Timings) -> Outcome<()> {
    let model_path = required("model", a.model.or(s.model))?;
    let results = required("results", a.results.or(s.results))?;
    let out = required("out", a.out.or(s.out))?;
    let commits_path = a.commits.or(s.commits);
    let k = check_k(a.k.or(s.k).unwrap_or(selector::DEFAULT_BUDGET))?;
    let selection = match a.budget.or(s.budget) {
        Some(b) => SelectionSize::Fraction(check_budget(b)?),
        None => SelectionSize::TopK(k),
    };
    let opts = EvalOptions {
        k,
        selection,
        after: a.after.or(s.after),
        seed: a.seed.or(s.seed).unwrap_or(0),
        ..EvalOptions::default()
    };
    let strategies_out = a.strategies_out.or(s.strategies_out);
    let curve_out = a.curve_out.or(s.curve_out);

    let artifact = timings.time("load", || load_model(&model_path))?;
    let (commits, history) = timings
        .time("read", || -> anyhow::Result<_> {
            Ok((optional_commits(commits_path.as_deref())?, inputs::results(&results)?))
        })
        .data_err()?;
    let report = timings
        .time("evaluate", || pipeline::evaluate(&artifact, &commits, &history, &opts))
        .map_err(|e| from_pipeline(e, "evaluating"))?;
    timings
        .time("write", || -> anyhow::Result<()> {
            outputs.write_with(&out, |w| Ok(eval::write_report_json(&report, w)?))?;
            if let Some(p) = &strategies_out {
                outputs.write_with(p, |w| Ok(eval::write_strategies_csv(&report.strategies, w)?))?;
            }
            if let Some(p) = &curve_out {
                outputs.write_with(p, |w| Ok(eval::write_curve_csv(&report.curve, w)?))?;
            }
            Ok(())
        })
        .data_err()?;
    println!(
        "{} cycles ({} with failures): APFD {:.4}, NAPFD {:.4}, recall@{} {:.4} -> {}",
        report.n_cycles,
        report.n_failing_cycles,
        report.apfd,
        report.napfd,
        report.k,
        report.recall_at_k,
        out.display()
    );
    Ok(())
}

pub fn bench(a: BenchArgs, s: BenchSettings, outputs: &mut Outputs, timings: &mut Timings) -> Outcome<()> {
    let dataset = required("dataset", a.dataset.or(s.dataset))?;
    let out = required("out", a.out.or(s.out))?;
    let schema_name = a.schema.or(s.schema).unwrap_or_else(|| "iofrol_gsdtsr".to_string());
    let schema: CsvSchema = schema_name.parse().map_err(anyhow::Error::from).usage_err()?;
    let defaults = BenchOptions::default();
    let opts = BenchOptions {
        budget: check_budget(a.budget.or(s.budget).unwrap_or(defaults.budget))?,
        seed: a.seed.or(s.seed).unwrap_or(defaults.seed),
        k: check_k(a.k.or(s.k).unwrap_or(defaults.k))?,
        grid: s.grid,
        ..defaults
    };
    let failed_codes = list_or(a.failed_code, s.failed_code, Vec::new());
    let report_path = a.report.or(s.report);

    let cycles = timings
        .time("read", || inputs::dataset(&dataset, schema, &failed_codes))
        .data_err()?;
    let outcome = timings
        .time("bench", || pipeline::bench(&cycles, &opts))
        .map_err(|e| from_pipeline(e, "benchmarking"))?;
    let name = dataset_name(&dataset);
    timings
        .time("write", || -> anyhow::Result<()> {
            let rows = [(name.clone(), outcome.report.clone())];
            outputs.write_with(&out, |w| Ok(eval::write_reports_csv(&rows, w)?))?;
            if let Some(p) = &report_path {
                outputs.write(p, &json_bytes(&outcome)?)?;
            }
            Ok(())
        })
        .data_err()?;
    println!(
        "{name}: {} training, {} validation, {} evaluation cycles; APFD {:.4}, NAPFD {:.4} at budget {} -> {}",
        outcome.n_train_cycles,
        outcome.n_val_cycles,
        outcome.n_eval_cycles,
        outcome.report.apfd,
        outcome.report.napfd,
        opts.budget,
        out.display()
    );
    Ok(())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

/// Files written by `synth`, relative to the output directory.
pub const SYNTH_FILES: [&str; 5] = ["commits.jsonl", "results.jsonl", "tests.jsonl", "repo_files.txt", "rules.json"];

pub fn synth(a: SynthArgs, s: SynthSettings, outputs: &mut Outputs, timings: &mut Timings) -> Outcome<()> {
    let out_dir: PathBuf = required("out-dir", a.out_dir.or(s.out_dir))?;
    let seed = a.seed.or(s.seed).unwrap_or(0);
    let history = timings.time("generate", || synth::generate(&s.config, seed)).map_err(|e| {
        let kind = match e {
            synth::SynthError::InvalidConfig(_) => crate::failure::Kind::Usage,
            _ => crate::failure::Kind::Data,
        };
        Failure {
            kind,
            error: anyhow::Error::new(e).context("generating history"),
        }
    })?;
    timings
        .time("write", || -> anyhow::Result<()> {
            let [commits, results, tests, repo_files, rules] = SYNTH_FILES.map(|f| out_dir.join(f));
            outputs.write_with(&commits, |w| Ok(tts_core::ingest::write_commit_log(&history.commits, w)?))?;
            let th = tts_core::ingest::TestHistory {
                cycles: history.cycles.clone(),
                tests: history.tests.iter().map(|t| (t.test_id.clone(), t.clone())).collect(),
            };
            outputs.write_with(&results, |w| Ok(tts_core::ingest::write_test_results(&th, w)?))?;
            outputs.write_with(&tests, |w| inputs::write_tests(&history.tests, w))?;
            outputs.write_with(&repo_files, |w| {
                for p in &history.repo_files {
                    writeln!(w, "{p}")?;
                }
                Ok(())
            })?;
            outputs.write(&rules, &json_bytes(&history.rules)?)?;
            Ok(())
        })
        .with_context(|| format!("writing into {}", out_dir.display()))
        .data_err()?;
    println!(
        "generated {} commits, {} cycles, {} tests -> {}",
        history.commits.len(),
        history.cycles.len(),
        history.tests.len(),
        out_dir.display()
    );
    Ok(())
}
