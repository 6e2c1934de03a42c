use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::shapes::{sample_surface, ShapeKind, ShapeSpec};
use crate::error::{Error, Result};
use crate::geometry::{
    average_segments_ordered, extract_patches, farthest_point_sample, normalize_unit_sphere, NormalizationFrame,
    Point3, PointCloud, SegmentOrder,
};
use crate::io::{read_text, read_xyz, write_atomic, write_xyz};
use crate::metrics::Surface;

pub const MANIFEST_FORMAT: &str = "relpu-dataset-1";

/// How the low-resolution inputs are drawn from their dense source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsample {
    Fps,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Dense reference size `M` per shape.
    pub dense_points: usize,
    /// Patches and average segments per shape (`K`).
    pub patches: usize,
    /// Points per local or global input.
    pub input_points: usize,
    pub ratio: usize,
    pub segment_order: SegmentOrder,
    pub subsample: Subsample,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            dense_points: 8192,
            patches: 8,
            input_points: 256,
            ratio: 4,
            segment_order: SegmentOrder::Random,
            subsample: Subsample::Fps,
        }
    }
}

impl DatasetConfig {
    pub fn gt_points(&self) -> usize {
        self.input_points * self.ratio
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k, r) = (self.dense_points, self.patches, self.ratio);
        if r < 2 {
            return Err(Error::invalid(format!("ratio must be at least 2, got {r}")));
        }
        if k == 0 || self.input_points == 0 {
            return Err(Error::invalid("patches and input_points must be positive"));
        }
        if m % k != 0 || m % r != 0 {
            return Err(Error::invalid(format!("dense_points {m} must be divisible by patches {k} and ratio {r}")));
        }
        if self.gt_points() > m {
            return Err(Error::invalid(format!("patch of {} exceeds dense size {m}", self.gt_points())));
        }
        if m / k < self.input_points {
            return Err(Error::invalid(format!(
                "segment of {} points cannot supply {} global inputs",
                m / k,
                self.input_points
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub local_in: PointCloud,
    pub global_in: PointCloud,
    pub gt: PointCloud,
    pub shape_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Every fifth shape (index 4, 9, ...) is held out.
    pub fn for_index(i: usize) -> Split {
        if i % 5 == 4 {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub spec: ShapeSpec,
    pub seed: u64,
    pub split: Split,
    /// Frame taking world coordinates to the stored unit-sphere coordinates.
    pub centroid: Point3,
    pub scale: f64,
    pub samples: usize,
}

impl ShapeRecord {
    pub fn frame(&self) -> NormalizationFrame {
        NormalizationFrame {
            centroid: self.centroid,
            scale: self.scale,
        }
    }

    /// The analytic surface expressed in the stored frame.
    pub fn surface(&self) -> NormalizedSurface {
        NormalizedSurface {
            spec: self.spec.clone(),
            frame: self.frame(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub config: DatasetConfig,
    pub shapes: Vec<ShapeRecord>,
}

impl Manifest {
    pub fn render(&self) -> String {
        toml::to_string(self).expect("manifest is always representable")
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| toml_error(text, origin, &e))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                message: format!("unsupported manifest format {:?}", m.format),
            });
        }
        Ok(m)
    }

    /// Hex SHA-256 of the rendered manifest.
    pub fn hash(&self) -> String {
        hex_digest(self.render().as_bytes())
    }

    pub fn sample_count(&self) -> usize {
        self.shapes.iter().map(|s| s.samples).sum()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn toml_error(text: &str, origin: &Path, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse {
        path: origin.to_path_buf(),
        line,
        message: e.message().to_string(),
    }
}

/// Analytic distance to a shape, measured in a normalized frame.
#[derive(Clone, Debug)]
pub struct NormalizedSurface {
    pub spec: ShapeSpec,
    pub frame: NormalizationFrame,
}

impl Surface for NormalizedSurface {
    fn distance(&self, p: &Point3) -> f64 {
        self.spec.distance(&self.frame.invert(p)) / self.frame.scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeData {
    pub record: ShapeRecord,
    /// Dense reference in the stored frame.
    pub dense: PointCloud,
    pub samples: Vec<TrainingSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub shapes: Vec<ShapeData>,
}

impl Dataset {
    pub fn samples(&self, split: Split) -> Vec<&TrainingSample> {
        self.shapes
            .iter()
            .filter(|s| s.record.split == split)
            .flat_map(|s| s.samples.iter())
            .collect()
    }

    pub fn shapes(&self, split: Split) -> impl Iterator<Item = &ShapeData> {
        self.shapes.iter().filter(move |s| s.record.split == split)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for stream `index` derived from a base seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// `count` random shapes cycling through the four kinds, with ids
/// `<kind>_<index>`.
pub fn corpus_specs(count: usize, seed: u64) -> Vec<ShapeSpec> {
    (0..count)
        .map(|i| {
            let kind = ShapeKind::ALL[i % ShapeKind::ALL.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            ShapeSpec::random(kind, &mut rng, format!("{}_{i:03}", kind.name()))
        })
        .collect()
}

fn subsample(cloud: &PointCloud, n: usize, how: Subsample, seed: u64) -> Result<PointCloud> {
    let idx = match how {
        Subsample::Fps => farthest_point_sample(cloud, n, 0)?,
        Subsample::Random => {
            if n > cloud.len() {
                return Err(Error::invalid(format!("cannot draw {n} of {} points", cloud.len())));
            }
            let mut idx = sample_indices(&mut ChaCha8Rng::seed_from_u64(seed), cloud.len(), n).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    Ok(cloud.select(&idx))
}

fn build_shape(spec: &ShapeSpec, cfg: &DatasetConfig, seed: u64, split: Split) -> Result<ShapeData> {
    let raw = sample_surface(spec, cfg.dense_points, seed)?;
    let (mut dense, frame) = normalize_unit_sphere(&raw)?;
    dense.set_id(spec.id.clone());
    let patches = extract_patches(&dense, cfg.patches, cfg.gt_points())?;
    let segments = average_segments_ordered(&dense, cfg.patches, cfg.segment_order, derive_seed(seed, 1))?;
    let mut samples = Vec::with_capacity(cfg.patches);
    for (k, (patch, segment)) in patches.into_iter().zip(segments).enumerate() {
        let (mut patch, mut segment) = (patch, segment);
        patch.set_id(spec.id.clone());
        segment.set_id(spec.id.clone());
        let local_in = subsample(&patch, cfg.input_points, cfg.subsample, derive_seed(seed, 100 + k as u64))?;
        let global_in = subsample(&segment, cfg.input_points, cfg.subsample, derive_seed(seed, 200 + k as u64))?;
        samples.push(TrainingSample {
            local_in,
            global_in,
            gt: patch,
            shape_id: spec.id.clone(),
        });
    }
    Ok(ShapeData {
        record: ShapeRecord {
            spec: spec.clone(),
            seed,
            split,
            centroid: frame.centroid,
            scale: frame.scale,
            samples: samples.len(),
        },
        dense,
        samples,
    })
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(Error::invalid(format!("shape id {id:?} must be non-empty [A-Za-z0-9_-]")));
    }
    Ok(())
}

/// Samples every shape and cuts it into `K` (patch, segment) training pairs.
/// Shape `i` is held out when `i % 5 == 4`. `seed` must fit in 63 bits so
/// the manifest stays valid TOML.
pub fn build_dataset(specs: &[ShapeSpec], cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if seed > i64::MAX as u64 {
        return Err(Error::invalid("dataset seed must be below 2^63"));
    }
    let mut seen = std::collections::HashSet::new();
    for s in specs {
        s.validate()?;
        check_id(&s.id)?;
        if !seen.insert(s.id.as_str()) {
            return Err(Error::invalid(format!("duplicate shape id {:?}", s.id)));
        }
    }
    let shapes = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| build_shape(s, cfg, derive_seed(seed, i as u64) >> 1, Split::for_index(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: Manifest {
            format: MANIFEST_FORMAT.to_string(),
            seed,
            config: cfg.clone(),
            shapes: shapes.iter().map(|s| s.record.clone()).collect(),
        },
        shapes,
    })
}

/// Writes `<dir>/manifest` and one subdirectory per shape.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    for shape in &dataset.shapes {
        let sub = dir.join(&shape.record.spec.id);
        write_xyz(&sub.join("dense.xyz"), &shape.dense)?;
        for (k, s) in shape.samples.iter().enumerate() {
            write_xyz(&sub.join(format!("patch_{k}_in.xyz")), &s.local_in)?;
            write_xyz(&sub.join(format!("patch_{k}_gt.xyz")), &s.gt)?;
            write_xyz(&sub.join(format!("seg_{k}_in.xyz")), &s.global_in)?;
        }
    }
    write_atomic(&dir.join("manifest"), dataset.manifest.render().as_bytes())
}

fn read_sized(path: &Path, expected: usize, id: &str) -> Result<PointCloud> {
    let mut c = read_xyz(path)?;
    if c.len() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("expected {expected} points, found {}", c.len()),
        });
    }
    c.set_id(id);
    Ok(c)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest");
    let manifest = Manifest::parse(&read_text(&manifest_path)?, &manifest_path)?;
    let cfg = &manifest.config;
    cfg.validate()?;
    let mut shapes = Vec::with_capacity(manifest.shapes.len());
    for record in &manifest.shapes {
        let id = record.spec.id.as_str();
        check_id(id)?;
        let sub = dir.join(id);
        let dense = read_sized(&sub.join("dense.xyz"), cfg.dense_points, id)?;
        let mut samples = Vec::with_capacity(record.samples);
        for k in 0..record.samples {
            samples.push(TrainingSample {
                local_in: read_sized(&sub.join(format!("patch_{k}_in.xyz")), cfg.input_points, id)?,
                gt: read_sized(&sub.join(format!("patch_{k}_gt.xyz")), cfg.gt_points(), id)?,
                global_in: read_sized(&sub.join(format!("seg_{k}_in.xyz")), cfg.input_points, id)?,
                shape_id: id.to_string(),
            });
        }
        shapes.push(ShapeData {
            record: record.clone(),
            dense,
            samples,
        });
    }
    Ok(Dataset { manifest, shapes })
}
