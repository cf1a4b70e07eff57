//! Declarative run configuration (TOML). Relative paths resolve against the
//! config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::NgramConfig;
use crate::encoder::TanhScope;
use crate::error::{Error, Result};
use crate::evaluator::EvalConfig;
use crate::synth::SyntheticSpec;
use crate::targets::TargetMode;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces every section's seed.
    pub seed: Option<u64>,
    pub data: DataPaths,
    pub synth: SyntheticSpec,
    pub model: ModelConfig,
    pub targets: TargetMode,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub manifest: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub psych: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Person-level train/val/test ratios.
    pub split: [f64; 3],
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            manifest: None,
            teacher: None,
            psych: None,
            lexicon: None,
            outcomes: None,
            targets: None,
            checkpoint: None,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Student width; defaults to the teacher dimension.
    pub d_model: Option<usize>,
    pub tanh_scope: TanhScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub ngram: NgramConfig,
    /// Correlate n-grams with observed outcomes instead of cross-validated
    /// predictions.
    pub true_outcomes: bool,
    /// Unit-normalize embeddings before the joint PCA.
    pub normalize: bool,
    pub render_png: bool,
    pub top: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            ngram: NgramConfig::default(),
            true_outcomes: false,
            normalize: true,
            render_png: false,
            top: 20,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.manifest,
            &mut d.teacher,
            &mut d.psych,
            &mut d.lexicon,
            &mut d.outcomes,
            &mut d.targets,
            &mut d.checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Push the global seed into every section that draws randomness.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.train.seed = seed;
        self.eval.cv.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        let [a, b, c] = self.data.split;
        if [a, b, c].iter().any(|r| !(*r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "data.split must be nonnegative and sum to 1, got {:?}",
                self.data.split
            )));
        }
        if self.model.d_model == Some(0) {
            return Err(Error::Config("model.d_model must be >= 1".into()));
        }
        if self.eval.cv.folds < 2 {
            return Err(Error::Config("eval.cv.folds must be >= 2".into()));
        }
        if self.eval.cv.lambda_grid.is_empty() || self.eval.cv.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("eval.cv.lambda_grid must hold positive values".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(Error::Config(format!("eval.alpha must be in (0, 1), got {}", self.eval.alpha)));
        }
        Ok(())
    }
}

/// The configured path for `key`, which must exist.
pub fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let p = path
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{key} is not set")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{key} {} does not exist", p.display())));
    }
    Ok(p.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::targets::TargetKind;

    #[test]
    fn empty_config_is_default() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::parse(
            r#"
            seed = 7
            [data]
            manifest = "m.jsonl"
            split = [0.6, 0.2, 0.2]
            [model]
            d_model = 16
            tanh_scope = "all"
            [targets]
            kind = "replacement"
            replace_count = 4
            [train]
            loss = "cs"
            learning_rate = 0.001
            optimizer = { kind = "adamw" }
            [eval]
            baseline = "base"
            [eval.cv]
            folds = 5
            [analysis.ngram]
            n_max = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.model.d_model, Some(16));
        assert_eq!(cfg.model.tanh_scope, TanhScope::All);
        assert_eq!(cfg.targets.kind, TargetKind::Replacement);
        assert_eq!(cfg.targets.replace_count, 4);
        assert_eq!(cfg.train.loss, LossKind::Cs);
        assert_eq!(cfg.eval.cv.folds, 5);
        assert_eq!(cfg.analysis.ngram.n_max, 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["bogus = 1", "[train]\nlr = 0.1", "[synth]\nlatent = 3", "[data]\nextra = \"x\""] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn paths_resolve_and_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        fs::write(&cfg_path, "[data]\nmanifest = \"m.jsonl\"\n").unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        let m = cfg.data.manifest.clone().unwrap();
        assert_eq!(m, dir.path().join("m.jsonl"));
        assert!(matches!(require(&cfg.data.manifest, "data.manifest"), Err(Error::Config(_))));
        fs::write(&m, "").unwrap();
        assert_eq!(require(&cfg.data.manifest, "data.manifest").unwrap(), m);
        assert!(require(&cfg.data.teacher, "data.teacher").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = RunConfig::default();
        cfg.data.split = [0.5, 0.5, 0.5];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.apply_seed(9);
        assert_eq!((cfg.synth.seed, cfg.train.seed, cfg.eval.cv.seed), (9, 9, 9));
    }

    #[test]
    fn shipped_config_parses() {
        let cfg = RunConfig::parse(include_str!("../../../configs/synthetic.toml")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.epochs, 300);
        assert_eq!(cfg.eval.baseline.as_deref(), Some("untrained"));
    }
}
