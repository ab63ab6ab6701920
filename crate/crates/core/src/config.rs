//! Run configuration: one TOML file with `[model]`, `[data]`, `[train]`,
//! `[augment]` and `[bench]` sections.
//!
//! Unknown keys are rejected, and all of them are listed at once. Relative
//! paths resolve against the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::data::{
    scan_manifest, stratified_split, synth_generate, AugmentConfig, DatasetManifest, DecoderSet, Split,
    DEFAULT_FRACTIONS, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::fusion::FusionSpec;
use crate::nn::{BackboneSpec, Family};
use crate::train::TrainConfig;

/// Overrides `data.root` when set.
pub const ENV_DATA_ROOT: &str = "RETINA_FUSION_DATA_ROOT";
/// Overrides `data.out_dir` when set.
pub const ENV_OUT_DIR: &str = "RETINA_FUSION_OUT_DIR";

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}
fn default_workers() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Synthetic images generated into `data.root` when it has no manifest yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory. Its `manifest.tsv` is used when present, otherwise
    /// the tree is generated from `synth` or scanned.
    pub root: PathBuf,
    /// Saved split file; when absent a stratified split is drawn with
    /// `fractions` and the training seed.
    #[serde(default)]
    pub split: Option<PathBuf>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_true")]
    pub cache: bool,
    /// Parent of the per-run output directories.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

impl DataConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            split: None,
            fractions: DEFAULT_FRACTIONS,
            workers: default_workers(),
            cache: true,
            out_dir: default_out_dir(),
            synth: None,
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            problems.push(format!("data.fractions {:?} must be in [0, 1] and sum to 1", self.fractions));
        }
        if self.workers == 0 {
            problems.push("data.workers must be >= 1".into());
        }
        if let Some(s) = &self.synth {
            if s.per_class == 0 {
                problems.push("data.synth.per_class must be >= 1".into());
            }
            if s.size < 8 {
                problems.push(format!("data.synth.size {} is below the minimum of 8", s.size));
            }
        }
        problems
    }
}

/// Everything needed to reproduce a run. The training seed is `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: FusionSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn new(model: FusionSpec, data: DataConfig, train: TrainConfig) -> Self {
        Self {
            model,
            data,
            train,
            augment: AugmentConfig::default(),
            bench: BenchConfig::default(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// A config with every optional key present; the schema for key checks.
    fn reference() -> Self {
        let mut model = FusionSpec::desk(&[Family::Residual]);
        model.reduced_dim = Some(1);
        model.logit_weights = Some(vec![1.0]);
        model.members = vec![BackboneSpec::desk(Family::Dense)];
        let mut data = DataConfig::new("data");
        data.split = Some(PathBuf::from("split.toml"));
        data.synth = Some(SynthConfig {
            per_class: 1,
            size: 8,
            seed: 0,
        });
        let mut cfg = Self::new(model, data, TrainConfig::new(1, 1, 0));
        cfg.bench.memory_budget_mb = Some(1.0);
        cfg
    }

    /// Parses and validates, reporting every unknown key and every invalid
    /// value as one [`Error::Config`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(vec![format!("config syntax: {}", e.message().trim())]))?;
        let reference = toml::Table::try_from(Self::reference()).expect("reference config serializes");
        let mut unknown = Vec::new();
        unknown_keys(&doc, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(unknown.into_iter().map(|k| format!("unknown key {k}")).collect()));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().trim().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config serialization: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies the path overrides from the environment.
    pub fn apply_env(&mut self) {
        if let Some(root) = std::env::var_os(ENV_DATA_ROOT) {
            self.data.root = root.into();
        }
        if let Some(out) = std::env::var_os(ENV_OUT_DIR) {
            self.data.out_dir = out.into();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut absorb = |r: Result<()>, section: &str| match r {
            Ok(()) => {}
            Err(Error::Config(list)) => problems.extend(list.into_iter().map(|p| with_section(section, p))),
            Err(e) => problems.push(with_section(section, e.to_string())),
        };
        absorb(self.model.validate(), "model");
        absorb(self.train.validate(), "train");
        absorb(self.augment.validate(), "augment");
        problems.extend(self.data.problems());
        problems.extend(self.bench.problems());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Loads or creates the dataset manifest and the split.
    pub fn prepare_data(&self) -> Result<(DatasetManifest, Split)> {
        let root = &self.data.root;
        let manifest_path = root.join(MANIFEST_FILE);
        let manifest = if manifest_path.is_file() {
            DatasetManifest::load(&manifest_path)?
        } else if let Some(s) = &self.data.synth {
            synth_generate(root, s.per_class, s.size, s.seed)?
        } else {
            let manifest = scan_manifest(root, &DecoderSet::default())?;
            manifest.save(&manifest_path)?;
            manifest
        };
        let split = match &self.data.split {
            Some(path) => {
                let split = Split::load(path)?;
                split.check_partition(manifest.len())?;
                split
            }
            None => stratified_split(&manifest.labels(), self.data.fractions, self.train.seed)?,
        };
        Ok((manifest, split))
    }
}

fn with_section(section: &str, problem: String) -> String {
    if problem.starts_with(&format!("{section}.")) {
        problem
    } else {
        format!("{section}: {problem}")
    }
}

fn unknown_keys(doc: &toml::Table, reference: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in doc {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (value, reference.get(key)) {
            (_, None) => out.push(path),
            (toml::Value::Table(sub), Some(toml::Value::Table(sub_ref))) => unknown_keys(sub, sub_ref, &path, out),
            (toml::Value::Array(items), Some(toml::Value::Array(refs))) => {
                if let Some(toml::Value::Table(item_ref)) = refs.first() {
                    for (i, item) in items.iter().enumerate() {
                        if let toml::Value::Table(t) = item {
                            unknown_keys(t, item_ref, &format!("{path}[{i}]"), out);
                        }
                    }
                }
            }
            _ => {}
        }
    }
}
