use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SegmentOrder;
use crate::io::read_text;
use crate::metrics::{DEFAULT_UNIFORMITY_SEEDS, UNIFORMITY_PERCENTAGES};
use crate::model::{FullModelConfig, TrainConfig, VariantKind};
use crate::nn::NetConfig;
use crate::saliency::SaliencyMode;
use crate::synth::{corpus_specs, DatasetConfig, ShapeSpec, Subsample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Number of generated shapes, cycling sphere, torus, cube, cylinder.
    pub shapes: usize,
    pub seed: u64,
    pub dense_points: usize,
    pub patches: usize,
    pub input_points: usize,
    pub ratio: usize,
    pub segment_order: SegmentOrder,
    pub subsample: Subsample,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            shapes: 40,
            seed: 0,
            dense_points: d.dense_points,
            patches: d.patches,
            input_points: d.input_points,
            ratio: d.ratio,
            segment_order: d.segment_order,
            subsample: d.subsample,
        }
    }
}

impl DatasetSection {
    pub fn config(&self) -> DatasetConfig {
        DatasetConfig {
            dense_points: self.dense_points,
            patches: self.patches,
            input_points: self.input_points,
            ratio: self.ratio,
            segment_order: self.segment_order,
            subsample: self.subsample,
        }
    }

    pub fn specs(&self) -> Vec<ShapeSpec> {
        corpus_specs(self.shapes, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: VariantKind,
    pub encoder_widths: Vec<usize>,
    pub k: usize,
    pub decoder_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let n = NetConfig::default();
        Self {
            variant: VariantKind::Relpu,
            encoder_widths: n.encoder_widths,
            k: n.k,
            decoder_hidden: n.decoder_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Input size drawn by FPS from each held-out dense cloud.
    pub input_points: usize,
    pub patches: usize,
    pub patch_points: usize,
    pub uniformity_seeds: usize,
    pub uniformity_p: Vec<f64>,
    /// Must start at 0; degradation ratios are relative to that level.
    pub noise_betas: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            input_points: 2048,
            patches: 16,
            patch_points: 256,
            uniformity_seeds: DEFAULT_UNIFORMITY_SEEDS,
            uniformity_p: UNIFORMITY_PERCENTAGES.to_vec(),
            noise_betas: vec![0.0, 0.01, 0.02],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencySection {
    pub alpha: f64,
    pub modes: Vec<SaliencyMode>,
    /// Index into the held-out training samples.
    pub sample: usize,
}

impl Default for SaliencySection {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            modes: vec![SaliencyMode::Radial, SaliencyMode::Magnitude],
            sample: 0,
        }
    }
}

/// Everything one experiment needs. Parsed from TOML, validated before use
/// and copied verbatim into every output directory as `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Drives model initialization, shuffling, segment draws and noise.
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub saliency: SaliencySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            saliency: SaliencySection::default(),
        }
    }
}

/// Command-line replacements applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub variant: Option<VariantKind>,
    pub out: Option<PathBuf>,
    pub sample: Option<usize>,
}

fn section(name: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config(m) | Error::InvalidArgument(m) => Error::Config(format!("[{name}] {m}")),
        other => other,
    })
}

fn fail(name: &str, msg: &str) -> Result<()> {
    Err(Error::Config(format!("[{name}] {msg}")))
}

impl ExperimentConfig {
    /// Parses and validates. Unknown or mistyped keys are reported with the
    /// key name and line.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Config(format!("{}:{line}: {}", origin.display(), e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(s) = o.sample {
            self.saliency.sample = s;
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            encoder_widths: self.model.encoder_widths.clone(),
            k: self.model.k,
            decoder_hidden: self.model.decoder_hidden,
            ratio: self.dataset.ratio,
        }
    }

    pub fn full_model_config(&self) -> FullModelConfig {
        FullModelConfig {
            patches: self.eval.patches,
            patch_points: self.eval.patch_points,
            seed: crate::synth::derive_seed(self.seed, 13),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return fail("top", "seed must be below 2^63");
        }
        let d = &self.dataset;
        if d.shapes == 0 {
            return fail("dataset", "shapes must be positive");
        }
        if d.seed > i64::MAX as u64 {
            return fail("dataset", "seed must be below 2^63");
        }
        section("dataset", d.config().validate())?;
        section("model", self.net_config().validate())?;
        section("train", self.train.validate())?;
        let e = &self.eval;
        if e.input_points == 0 || e.patches == 0 || e.patch_points == 0 {
            return fail("eval", "input_points, patches and patch_points must be positive");
        }
        if e.patches * e.patch_points < e.input_points {
            return fail("eval", "patches * patch_points must cover input_points");
        }
        if e.input_points > d.dense_points {
            return fail("eval", "input_points cannot exceed dataset.dense_points");
        }
        if e.uniformity_seeds == 0 {
            return fail("eval", "uniformity_seeds must be positive");
        }
        if e.uniformity_p.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return fail("eval", "uniformity_p values must lie in (0, 1)");
        }
        if e.noise_betas.first() != Some(&0.0) {
            return fail("eval", "noise_betas must start with 0");
        }
        if e.noise_betas.iter().any(|b| !b.is_finite()) || e.noise_betas.windows(2).any(|w| !(w[1] > w[0])) {
            return fail("eval", "noise_betas must be finite and strictly increasing");
        }
        let s = &self.saliency;
        if !(s.alpha >= 0.0 && s.alpha.is_finite()) {
            return fail("saliency", "alpha must be finite and >= 0");
        }
        if s.modes.is_empty() {
            return fail("saliency", "modes must not be empty");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::parse(&cfg.render(), Path::new("c.toml")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.dataset.shapes, 40);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::parse("seed = 3\n[train]\nepochs = 2\n[train.adam]\nlr = 1e-3\n", Path::new("c")).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.adam.lr, 1e-3);
        assert_eq!(cfg.train.adam.decay, 0.95);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::parse("seed = 1\n\n[model]\nwidths = [3]\n", Path::new("c.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("widths") && msg.contains("c.toml:4"), "{msg}");
        let err = ExperimentConfig::parse("[train]\nepochs = \"ten\"\n", Path::new("c")).unwrap_err();
        assert!(err.to_string().contains("c:2"), "{err}");
    }

    #[test]
    fn semantic_violations_are_config_errors() {
        for text in [
            "[dataset]\npatches = 3\n",
            "[model]\nk = 0\n",
            "[train]\nbatch_size = 0\n",
            "[eval]\nnoise_betas = [0.01, 0.02]\n",
            "[eval]\nuniformity_p = [1.5]\n",
            "[saliency]\nalpha = -1.0\n",
        ] {
            let err = ExperimentConfig::parse(text, Path::new("c")).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn overrides_replace_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            epochs: Some(2),
            seed: Some(9),
            variant: Some(VariantKind::Baseline),
            out: Some("x".into()),
            sample: Some(1),
        });
        assert_eq!((cfg.train.epochs, cfg.seed, cfg.model.variant), (2, 9, VariantKind::Baseline));
        assert_eq!(cfg.out, PathBuf::from("x"));
        assert_eq!(cfg.saliency.sample, 1);
    }
}
