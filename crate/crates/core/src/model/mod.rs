//! The three upsampling architectures: patch-only baseline, ReLPU- with one
//! encoder shared by both inputs, and ReLPU with separate local and global
//! encoders. All of them fuse by `concat_tile` and share the decoder.

mod checkpoint;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use train::{chamfer_on_tape, sample_gradients, train_epoch, train_step, EpochLog, TrainConfig, TrainState};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{
    average_segments, extract_patches, farthest_point_sample, normalize_unit_sphere, PointCloud,
};
use crate::nn::{Decoder, DecoderVars, Encoder, EncoderVars, NetConfig};
use crate::synth::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Baseline,
    RelpuMinus,
    Relpu,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::Baseline, VariantKind::RelpuMinus, VariantKind::Relpu];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Baseline => "baseline",
            VariantKind::RelpuMinus => "relpu_minus",
            VariantKind::Relpu => "relpu",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?} (baseline, relpu_minus, relpu)")))
    }
}

/// Anything that maps a `(local, global)` input pair to `ratio * |local|`
/// points on a tape, with gradients reaching both inputs.
pub trait Upsampler: Sync {
    fn ratio(&self) -> usize;

    /// Builds the prediction with parameters held constant.
    fn predict(&self, tape: &mut Tape, local: Var, global: Var) -> Result<Var>;

    /// Rejects unusable parameters before inference.
    fn check(&self) -> Result<()> {
        Ok(())
    }
}

/// Repeats every local input point `ratio` times.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdentityUpsampler {
    pub ratio: usize,
}

impl Upsampler for IdentityUpsampler {
    fn ratio(&self) -> usize {
        self.ratio
    }

    fn predict(&self, tape: &mut Tape, local: Var, _global: Var) -> Result<Var> {
        if self.ratio == 0 {
            return Err(Error::invalid("identity ratio must be positive"));
        }
        tape.repeat_rows(local, self.ratio)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelVariant {
    pub kind: VariantKind,
    pub config: NetConfig,
    /// Local encoder; the only encoder of baseline and relpu_minus.
    pub encoder_l: Encoder,
    /// Global encoder, relpu only.
    pub encoder_g: Option<Encoder>,
    pub decoder: Decoder,
}

pub struct BoundModel {
    encoder_l: EncoderVars,
    encoder_g: Option<EncoderVars>,
    decoder: DecoderVars,
}

impl BoundModel {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder_l.vars();
        if let Some(g) = &self.encoder_g {
            v.extend(g.vars());
        }
        v.extend(self.decoder.vars());
        v
    }
}

impl ModelVariant {
    /// Each component draws from its own seeded stream, so variants built
    /// from one seed share their local encoder and decoder initialization.
    pub fn new(kind: VariantKind, config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = |i| ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
        let encoder_l = Encoder::new(&config, &mut rng(0));
        let encoder_g = (kind == VariantKind::Relpu).then(|| Encoder::new(&config, &mut rng(1)));
        let decoder = Decoder::new(2 * config.feature_dim(), &config, &mut rng(2));
        Ok(Self {
            kind,
            config,
            encoder_l,
            encoder_g,
            decoder,
        })
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder_l.param_count() + self.encoder_g.as_ref().map_or(0, Encoder::param_count)
    }

    pub fn decoder_param_count(&self) -> usize {
        self.decoder.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.encoder_param_count() + self.decoder_param_count()
    }

    /// Copies the local encoder into the global one (relpu only).
    pub fn tie_encoders(&mut self) -> Result<()> {
        match &mut self.encoder_g {
            Some(g) => {
                *g = self.encoder_l.clone();
                Ok(())
            }
            None => Err(Error::invalid(format!("{} has a single encoder", self.kind))),
        }
    }

    /// Parameter tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut t = self.encoder_l.tensors();
        if let Some(g) = &self.encoder_g {
            t.extend(g.tensors());
        }
        t.extend(self.decoder.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.encoder_l.tensors_mut();
        if let Some(g) = &mut self.encoder_g {
            t.extend(g.tensors_mut());
        }
        t.extend(self.decoder.tensors_mut());
        t
    }

    /// Names matching [`ModelVariant::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let enc = |prefix: &str, e: &Encoder| {
            (0..e.layers.len())
                .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
                .collect::<Vec<_>>()
        };
        let mut names = enc("encoder_l", &self.encoder_l);
        if let Some(g) = &self.encoder_g {
            names.extend(enc("encoder_g", g));
        }
        names.extend(
            ["decoder.hidden.weight", "decoder.hidden.bias", "decoder.offset.weight", "decoder.offset.bias"]
                .map(String::from),
        );
        names
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        BoundModel {
            encoder_l: self.encoder_l.bind(tape, trainable),
            encoder_g: self.encoder_g.as_ref().map(|g| g.bind(tape, trainable)),
            decoder: self.decoder.bind(tape, trainable),
        }
    }

    /// `local` and `global` are `m x 3` and `g x 3` coordinate nodes.
    pub fn forward_bound(&self, tape: &mut Tape, bound: &BoundModel, local: Var, global: Var) -> Result<Var> {
        let f_local = bound.encoder_l.encode(tape, local)?;
        let f_global = match self.kind {
            VariantKind::Baseline => tape.maxpool_rows(f_local)?,
            VariantKind::RelpuMinus => {
                let g = bound.encoder_l.encode(tape, global)?;
                tape.maxpool_rows(g)?
            }
            VariantKind::Relpu => {
                let enc = bound
                    .encoder_g
                    .as_ref()
                    .ok_or_else(|| Error::invalid("relpu model lacks a global encoder"))?;
                let g = enc.encode(tape, global)?;
                tape.maxpool_rows(g)?
            }
        };
        let fused = tape.concat_tile(f_local, f_global)?;
        bound.decoder.upsample_decode(tape, fused, local)
    }
}

impl Upsampler for ModelVariant {
    fn ratio(&self) -> usize {
        self.config.ratio
    }

    fn predict(&self, tape: &mut Tape, local: Var, global: Var) -> Result<Var> {
        let bound = self.bind(tape, false);
        self.forward_bound(tape, &bound, local, global)
    }

    fn check(&self) -> Result<()> {
        for (name, t) in self.tensor_names().iter().zip(self.tensors()) {
            if !t.is_finite() {
                return Err(Error::InvalidModel(format!("tensor {name} has non-finite entries")));
            }
        }
        Ok(())
    }
}

pub(crate) fn cloud_matrix(cloud: &PointCloud) -> Matrix {
    Matrix::from_vec(cloud.len(), 3, cloud.to_flat())
}

pub(crate) fn matrix_cloud(m: &Matrix) -> Result<PointCloud> {
    PointCloud::from_flat(m.data()).map_err(|e| Error::Numerical(format!("prediction: {e}")))
}

/// One inference pass on fresh tape.
pub fn forward(model: &dyn Upsampler, local: &PointCloud, global: &PointCloud) -> Result<PointCloud> {
    local.require_non_empty("forward local input")?;
    global.require_non_empty("forward global input")?;
    let mut tape = Tape::new();
    let l = tape.constant(cloud_matrix(local));
    let g = tape.constant(cloud_matrix(global));
    let out = model.predict(&mut tape, l, g)?;
    let mut cloud = matrix_cloud(tape.value(out))?;
    cloud.set_id(local.id());
    Ok(cloud)
}

/// Patch layout for whole-cloud inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FullModelConfig {
    /// Number of patches.
    pub patches: usize,
    /// Points per patch and per global input.
    pub patch_points: usize,
    pub seed: u64,
}

impl Default for FullModelConfig {
    fn default() -> Self {
        Self {
            patches: 8,
            patch_points: 256,
            seed: 0,
        }
    }
}

/// Number of average segments for a cloud of `n` points: the most segments
/// that split `n` evenly with at least `patch_points` points each (or all
/// `n` when the cloud is smaller).
pub fn segment_count(n: usize, patch_points: usize) -> usize {
    let min = patch_points.clamp(1, n.max(1));
    (1..=n / min).rev().find(|&s| n % s == 0).unwrap_or(1)
}

/// Upsamples a whole cloud of `N` points to exactly `ratio * N`: cuts the
/// patches and [`segment_count`] average segments in the cloud's unit-sphere
/// frame, forwards each (patch k, segment k mod S) pair with segments
/// FPS-reduced to `patch_points`, and FPS-reduces the union.
pub fn upsample_full_model(model: &dyn Upsampler, cloud: &PointCloud, cfg: &FullModelConfig) -> Result<PointCloud> {
    model.check()?;
    cloud.require_non_empty("upsample_full_model")?;
    let n = cloud.len();
    let r = model.ratio();
    if cfg.patches == 0 || cfg.patch_points == 0 {
        return Err(Error::invalid("patches and patch_points must be positive"));
    }
    if cfg.patches * cfg.patch_points < n {
        return Err(Error::invalid(format!(
            "{} patches of {} cannot cover {n} points",
            cfg.patches, cfg.patch_points
        )));
    }
    let (normed, frame) = normalize_unit_sphere(cloud)?;
    let patch_points = cfg.patch_points.min(n);
    let patches = extract_patches(&normed, cfg.patches, patch_points)?;
    let segments = average_segments(&normed, segment_count(n, patch_points), cfg.seed)?;
    let preds = patches
        .par_iter()
        .enumerate()
        .map(|(k, patch)| {
            let seg = &segments[k % segments.len()];
            let seg = if seg.len() > patch_points {
                seg.select(&farthest_point_sample(seg, patch_points, 0)?)
            } else {
                seg.clone()
            };
            forward(model, patch, &seg)
        })
        .collect::<Result<Vec<_>>>()?;
    let union: Vec<_> = preds.iter().flat_map(|p| p.points().iter().copied()).collect();
    let union = PointCloud::new(union).map_err(|e| Error::Numerical(format!("upsampled union: {e}")))?;
    let keep = farthest_point_sample(&union, r * n, 0)?;
    let mut out = frame.invert_cloud(&union.select(&keep));
    out.set_id(cloud.id());
    Ok(out)
}
