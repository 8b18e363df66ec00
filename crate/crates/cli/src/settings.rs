//! TOML settings file. Each subcommand reads the table of the same name;
//! keys match the long flag names with `_` for `-`. Flags win over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;
use tts_core::datamodel::FeatureGroups;
use tts_core::features::{FeatureConfig, StabilityPolicy};
use tts_core::learner::LearnerConfig;
use tts_core::synth::SynthConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub train: TrainSettings,
    pub predict: PredictSettings,
    pub evaluate: EvaluateSettings,
    pub bench: BenchSettings,
    pub synth: SynthSettings,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub commits: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub train_days: Option<u32>,
    pub val_days: Option<u32>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub groups: Option<String>,
    pub features: Option<FeatureConfig>,
    pub stability: Option<StabilityPolicy>,
    /// Replaces the default tuning grid.
    pub grid: Option<Vec<LearnerConfig>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSettings {
    pub model: Option<PathBuf>,
    pub change: Option<PathBuf>,
    pub tests: Option<PathBuf>,
    pub k: Option<usize>,
    pub out: Option<PathBuf>,
    pub commits: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub diff: Option<PathBuf>,
    pub repo_files: Option<PathBuf>,
    pub doc_ext: Option<Vec<String>>,
    pub module_marker: Option<Vec<String>>,
    pub hops: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub model: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub commits: Option<PathBuf>,
    pub k: Option<usize>,
    pub out: Option<PathBuf>,
    pub budget: Option<f64>,
    pub after: Option<i64>,
    pub seed: Option<u64>,
    pub strategies_out: Option<PathBuf>,
    pub curve_out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub dataset: Option<PathBuf>,
    pub schema: Option<String>,
    pub budget: Option<f64>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub failed_code: Option<Vec<String>>,
    pub report: Option<PathBuf>,
    pub grid: Option<Vec<LearnerConfig>>,
}

/// Generator parameters sit next to `seed` and `out_dir`.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub config: SynthConfig,
}

impl Settings {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading settings {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing settings {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Comma-separated group names: `file`, `test`, `cross`, `unknown` or `all`.
pub fn parse_groups(raw: &str) -> anyhow::Result<FeatureGroups> {
    let mut g = FeatureGroups {
        file: false,
        test: false,
        cross: false,
        unknown: false,
    };
    for name in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "all" => g = FeatureGroups::all(),
            "file" => g.file = true,
            "test" => g.test = true,
            "cross" => g.cross = true,
            "unknown" => g.unknown = true,
            other => bail!("unknown feature group `{other}` (expected file, test, cross, unknown or all)"),
        }
    }
    if !(g.file || g.test || g.cross || g.unknown) {
        bail!("at least one feature group is required");
    }
    Ok(g)
}
