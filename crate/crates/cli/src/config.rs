//! Run configuration: one JSON document covering every command.
//!
//! Every field is optional and defaults to the values printed by
//! `freqblend defaults`; unknown keys are rejected at any depth.

use std::fs;
use std::path::{Path, PathBuf};

use freqblend::blender::{BlendConfig, SpatialBlendParams};
use freqblend::objectives::ScorerTraining;
use freqblend::trainer::{GradCheckOptions, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Parser training, including the prior thresholds `t1` and `t2`.
    pub train: TrainConfig,
    pub blend: BlendConfig,
    pub spatial: SpatialBlendParams,
    pub corpus: CorpusConfig,
    pub scorer: ScorerConfig,
    pub analytics: AnalyticsConfig,
    pub gradcheck: GradCheckConfig,
    pub paths: PathsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Images per class.
    pub n: usize,
    pub seed: u64,
    /// Held-out (real, pseudo-fake) pairs used for scorer AUC in sweeps.
    pub held_out: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n: 200,
            seed: 1,
            held_out: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    pub bins: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        let s = ScorerTraining::default();
        ScorerConfig {
            bins: s.bins,
            steps: s.steps,
            learning_rate: s.learning_rate,
            l2: s.l2,
        }
    }
}

impl ScorerConfig {
    pub fn training(&self) -> ScorerTraining {
        ScorerTraining {
            bins: self.bins,
            steps: self.steps,
            learning_rate: self.learning_rate,
            l2: self.l2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsConfig {
    /// Azimuthal bins; `null` scales 100 bins at 400 px to the image size.
    pub bins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub image_size: usize,
    pub base_width: usize,
    pub coords_per_group: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        let o = GradCheckOptions::default();
        GradCheckConfig {
            image_size: 16,
            base_width: 2,
            coords_per_group: o.coords_per_group,
            step: o.step,
            tolerance: o.tolerance,
            seed: o.seed,
        }
    }
}

impl GradCheckConfig {
    pub fn options(&self) -> GradCheckOptions {
        GradCheckOptions {
            step: self.step,
            coords_per_group: self.coords_per_group,
            seed: self.seed,
            tolerance: self.tolerance,
            ..GradCheckOptions::default()
        }
    }
}

/// Default locations used when a command's path flag is omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub corpus_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus_dir: "corpus".into(),
            checkpoint: "parser.fpnc".into(),
            out_dir: "out".into(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            blend: BlendConfig::default(),
            spatial: SpatialBlendParams::default(),
            corpus: CorpusConfig::default(),
            scorer: ScorerConfig::default(),
            analytics: AnalyticsConfig::default(),
            gradcheck: GradCheckConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), Self::load)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.blend.validate()?;
        self.spatial.validate()?;
        if self.corpus.n < 2 {
            return Err(CliError::Usage("corpus.n must be at least 2".into()));
        }
        if self.scorer.bins < 2 || self.scorer.steps == 0 {
            return Err(CliError::Usage("scorer needs at least 2 bins and 1 step".into()));
        }
        if self.analytics.bins.is_some_and(|b| b < 1) {
            return Err(CliError::Usage("analytics.bins must be positive".into()));
        }
        let g = &self.gradcheck;
        if g.image_size == 0 || g.image_size % 16 != 0 || g.base_width == 0 || !(g.step > 0.0) {
            return Err(CliError::Usage(format!("invalid gradcheck settings: {g:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_json() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_json(&d.to_json()).unwrap(), d);
        assert_eq!(RunConfig::from_json("{}").unwrap(), d);
        assert_eq!(d.train.weights.as_array(), [1.0 / 12.0, 1.0, 1e-3, 0.25]);
        assert_eq!((d.train.t1, d.train.t2), (1.0 / 16.0, 0.5));
        assert_eq!((d.train.image_size, d.train.batch_size), (64, 8));
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        for text in [
            r#"{"trian": {}}"#,
            r#"{"train": {"lr": 0.1}}"#,
            r#"{"train": {"adam": {"momentum": 0.9}}}"#,
            r#"{"spatial": {"mask": "square"}}"#,
            r#"{"paths": {"log": "x"}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(CliError::Usage(_))), "{text}");
        }
    }

    #[test]
    fn partial_documents_override_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"epochs": 3}, "blend": {"alpha": 1.0}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.blend.alpha, 1.0);
        assert!(RunConfig::from_json(r#"{"blend": {"alpha": 2.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"image_size": 50}}"#).is_err());
    }
}
