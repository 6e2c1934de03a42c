//! Experiment protocols behind the command-line front end: dataset
//! generation, training, evaluation, noise robustness, ablation and
//! saliency. Every command writes the resolved `config.toml` next to its
//! outputs.

mod config;

pub use config::{DatasetSection, EvalSection, ExperimentConfig, ModelSection, Overrides, SaliencySection};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{add_gaussian_noise, farthest_point_sample, normalize_unit_sphere, PointCloud};
use crate::io::{rank_colors, read_text, read_xyz, write_atomic, write_ply, write_xyz};
use crate::metrics::{chamfer, hausdorff, metrics_csv_with, p2f, uniformity, MetricsRow, Surface};
use crate::model::{upsample_full_model, Checkpoint, EpochLog, ModelVariant, TrainState, Upsampler, VariantKind};
use crate::saliency::{input_gradient, saliency_regression, spherical_saliency};
use crate::synth::{build_dataset, derive_seed, hex_digest, load_dataset, write_dataset, Dataset, Split};

pub const TRAIN_LOG_HEADER: &str = "epoch,mean_loss,lr";
pub const NOISE_HEADER: &str = "variant,beta,cd,hd,cd_ratio,hd_ratio";
pub const SALIENCY_HEADER: &str =
    "variant,input,mode,alpha,points,loss,slope,r_squared,ols_slope,ols_intercept,ols_r_squared";

pub fn dataset_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("dataset")
}

pub fn variant_dir(cfg: &ExperimentConfig, kind: VariantKind) -> PathBuf {
    cfg.out.join(kind.name())
}

pub fn checkpoint_path(cfg: &ExperimentConfig, kind: VariantKind) -> PathBuf {
    variant_dir(cfg, kind).join("model.ckpt")
}

fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("config.toml"), cfg.render().as_bytes())
}

fn fmt_milli(v: f64) -> String {
    if v.is_finite() {
        format!("{:.6}", v * 1e3)
    } else {
        "NA".into()
    }
}

pub fn build_corpus(cfg: &ExperimentConfig) -> Result<Dataset> {
    build_dataset(&cfg.dataset.specs(), &cfg.dataset.config(), cfg.dataset.seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenDataReport {
    pub dir: PathBuf,
    pub manifest_hash: String,
    pub shapes: usize,
    pub samples: usize,
}

/// Builds the corpus into `<out>/dataset`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<GenDataReport> {
    cfg.validate()?;
    let dataset = build_corpus(cfg)?;
    let dir = dataset_dir(cfg);
    write_dataset(&dataset, &dir)?;
    write_config(cfg, &cfg.out)?;
    Ok(GenDataReport {
        dir,
        manifest_hash: dataset.manifest.hash(),
        shapes: dataset.shapes.len(),
        samples: dataset.manifest.sample_count(),
    })
}

/// Loads a dataset and checks it against the configured ratio.
pub fn open_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<Dataset> {
    let ds = load_dataset(dir)?;
    if ds.manifest.config.ratio != cfg.dataset.ratio {
        return Err(Error::Config(format!(
            "dataset at {} has ratio {}, config says {}",
            dir.display(),
            ds.manifest.config.ratio,
            cfg.dataset.ratio
        )));
    }
    Ok(ds)
}

/// Identifies a training run for resume checks: seed, dataset, network and
/// optimizer settings. The epoch budget and save interval are excluded so a
/// run can be extended.
pub fn training_hash(cfg: &ExperimentConfig, kind: VariantKind, dataset: &Dataset) -> String {
    let mut train = cfg.train.clone();
    train.epochs = 0;
    train.save_every = 0;
    let text = format!(
        "seed {}\nvariant {}\nmanifest {}\nnet {:?}\ntrain {:?}\n",
        cfg.seed,
        kind,
        dataset.manifest.hash(),
        cfg.net_config(),
        train
    );
    hex_digest(text.as_bytes())
}

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{TRAIN_LOG_HEADER}\n");
    for e in log {
        writeln!(s, "{},{},{}", e.epoch, e.mean_loss, e.lr).unwrap();
    }
    s
}

fn parse_train_log(text: &str, origin: &Path) -> Result<Vec<EpochLog>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |m: &str| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        out.push(EpochLog {
            epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
            mean_loss: f[1].parse().map_err(|_| bad("bad loss"))?,
            lr: f[2].parse().map_err(|_| bad("bad lr"))?,
            wall_seconds: 0.0,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    pub checkpoint: PathBuf,
}

/// Trains `kind` on the training split into `<out>/<variant>/`: `model.ckpt`,
/// `epoch_NNNN.ckpt` every `save_every` epochs, `train_log.csv` and
/// `train_timing.txt`. With `resume`, continues from that checkpoint after
/// checking it belongs to the same run. On divergence the last good state is
/// saved as `last_good.ckpt` and the error is returned.
pub fn train_variant(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    kind: VariantKind,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = variant_dir(cfg, kind);
    let hash = training_hash(cfg, kind, dataset);
    let log_path = dir.join("train_log.csv");
    let (mut state, mut log) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config_hash != hash || ck.state.model.kind != kind {
                return Err(Error::Config(format!(
                    "checkpoint {} belongs to a different run configuration",
                    path.display()
                )));
            }
            let mut log = if log_path.exists() {
                parse_train_log(&read_text(&log_path)?, &log_path)?
            } else {
                Vec::new()
            };
            log.truncate(ck.state.epoch);
            (ck.state, log)
        }
        None => {
            let model = ModelVariant::new(kind, cfg.net_config(), derive_seed(cfg.seed, 10))?;
            (TrainState::new(model, cfg.train.adam.clone()), Vec::new())
        }
    };
    write_config(cfg, &dir)?;
    let samples = dataset.samples(Split::Train);
    let shuffle_seed = derive_seed(cfg.seed, 11);
    let start = Instant::now();
    let save = |state: &TrainState, path: &Path| {
        Checkpoint {
            state: state.clone(),
            config_hash: hash.clone(),
        }
        .save(path)
    };
    while state.epoch < cfg.train.epochs {
        let good = state.clone();
        match crate::model::train_epoch(&mut state, &samples, &cfg.train, shuffle_seed) {
            Ok(entry) => log.push(entry),
            Err(e) => {
                save(&good, &dir.join("last_good.ckpt"))?;
                write_atomic(&log_path, train_log_csv(&log).as_bytes())?;
                return Err(e);
            }
        }
        write_atomic(&log_path, train_log_csv(&log).as_bytes())?;
        if cfg.train.save_every > 0 && state.epoch % cfg.train.save_every == 0 {
            save(&state, &dir.join(format!("epoch_{:04}.ckpt", state.epoch)))?;
        }
    }
    let checkpoint = dir.join("model.ckpt");
    save(&state, &checkpoint)?;
    write_atomic(&log_path, train_log_csv(&log).as_bytes())?;
    write_atomic(
        &dir.join("train_timing.txt"),
        format!("wall_seconds {:.3}\n", start.elapsed().as_secs_f64()).as_bytes(),
    )?;
    Ok(TrainOutcome { state, log, checkpoint })
}

pub fn cmd_train(cfg: &ExperimentConfig, dataset: Option<&Path>, resume: Option<&Path>) -> Result<TrainOutcome> {
    let dir = dataset.map(Path::to_path_buf).unwrap_or_else(|| dataset_dir(cfg));
    let ds = open_dataset(cfg, &dir)?;
    train_variant(cfg, &ds, cfg.model.variant, resume)
}

/// Loads a checkpoint and checks it matches the configured ratio.
pub fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<ModelVariant> {
    let model = Checkpoint::load(path)?.state.model;
    if model.config.ratio != cfg.dataset.ratio {
        return Err(Error::Config(format!(
            "checkpoint {} has ratio {}, config says {}",
            path.display(),
            model.config.ratio,
            cfg.dataset.ratio
        )));
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub beta: f64,
    pub uniformity: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            beta: 0.0,
            uniformity: true,
        }
    }
}

/// Scores one upsampled cloud against its reference.
pub fn score(
    cfg: &ExperimentConfig,
    pred: &PointCloud,
    gt: &PointCloud,
    surface: Option<&dyn Surface>,
    with_uniformity: bool,
) -> Result<MetricsRow> {
    let uniformity_values = if with_uniformity {
        let (normed, _) = normalize_unit_sphere(pred)?;
        cfg.eval
            .uniformity_p
            .iter()
            .map(|&p| uniformity(&normed, p, cfg.eval.uniformity_seeds))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![f64::NAN; cfg.eval.uniformity_p.len()]
    };
    Ok(MetricsRow {
        shape_id: gt.id().to_string(),
        cd: chamfer(pred, gt)?.value,
        hd: hausdorff(pred, gt)?,
        p2f: surface.map(|s| p2f(pred, s)).transpose()?,
        uniformity: uniformity_values,
    })
}

/// Evaluates every held-out shape: FPS input of `eval.input_points` from the
/// dense reference, optional seeded noise, whole-cloud upsampling, then CD,
/// HD, P2F against the analytic surface and uniformity.
pub fn evaluate_dataset(
    cfg: &ExperimentConfig,
    model: &dyn Upsampler,
    dataset: &Dataset,
    opts: EvalOptions,
) -> Result<Vec<MetricsRow>> {
    model.check()?;
    let full = cfg.full_model_config();
    let noise_seed = derive_seed(cfg.seed, 12);
    let shapes: Vec<(usize, &crate::synth::ShapeData)> =
        dataset.shapes.iter().enumerate().filter(|(_, s)| s.record.split == Split::Test).collect();
    if shapes.is_empty() {
        return Err(Error::invalid("dataset has no held-out shapes"));
    }
    shapes
        .par_iter()
        .map(|&(i, shape)| {
            let keep = farthest_point_sample(&shape.dense, cfg.eval.input_points, 0)?;
            let input = add_gaussian_noise(&shape.dense.select(&keep), opts.beta, derive_seed(noise_seed, i as u64))?;
            let pred = upsample_full_model(model, &input, &full)?;
            let surface = shape.record.surface();
            score(cfg, &pred, &shape.dense, Some(&surface), opts.uniformity)
        })
        .collect()
}

fn write_metrics(cfg: &ExperimentConfig, dir: &Path, rows: &[MetricsRow]) -> Result<PathBuf> {
    let path = dir.join("metrics.csv");
    write_atomic(&path, metrics_csv_with(rows, &cfg.eval.uniformity_p).as_bytes())?;
    write_config(cfg, dir)?;
    Ok(path)
}

/// Where `evaluate` takes its inputs from.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalSource {
    Dataset(PathBuf),
    /// Input clouds with optional reference clouds, paired by position.
    Files { inputs: Vec<PathBuf>, gts: Vec<PathBuf> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub csv: PathBuf,
    pub rows: Vec<MetricsRow>,
    /// Per-row failures in file mode, as `(shape id, message)`.
    pub failures: Vec<(String, String)>,
}

/// Evaluates in file mode. A missing or unreadable reference produces an
/// `NA` row and the run continues; predictions go to `<dir>/pred/`.
pub fn evaluate_files(
    cfg: &ExperimentConfig,
    model: &dyn Upsampler,
    inputs: &[PathBuf],
    gts: &[PathBuf],
    dir: &Path,
) -> Result<(Vec<MetricsRow>, Vec<(String, String)>)> {
    model.check()?;
    let full = cfg.full_model_config();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, path) in inputs.iter().enumerate() {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("input_{i}"));
        let mut input = read_xyz(path)?;
        input.set_id(id.clone());
        let pred = upsample_full_model(model, &input, &full)?;
        write_xyz(&dir.join("pred").join(format!("{id}.xyz")), &pred)?;
        let gt = match gts.get(i) {
            None => Err(Error::invalid("no reference cloud given")),
            Some(p) => read_xyz(p),
        };
        match gt {
            Ok(mut gt) => {
                gt.set_id(id.clone());
                rows.push(score(cfg, &pred, &gt, None, true)?);
            }
            Err(e) => {
                failures.push((id.clone(), e.to_string()));
                rows.push(MetricsRow::failed(id, cfg.eval.uniformity_p.len()));
            }
        }
    }
    Ok((rows, failures))
}

/// Writes `<out>/<variant>/metrics.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>, source: &EvalSource) -> Result<EvalReport> {
    cfg.validate()?;
    let kind = cfg.model.variant;
    let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(cfg, kind));
    let model = load_model(cfg, &ck)?;
    let dir = variant_dir(cfg, kind);
    let (rows, failures) = match source {
        EvalSource::Dataset(d) => {
            let ds = open_dataset(cfg, d)?;
            (evaluate_dataset(cfg, &model, &ds, EvalOptions::default())?, Vec::new())
        }
        EvalSource::Files { inputs, gts } => evaluate_files(cfg, &model, inputs, gts, &dir)?,
    };
    let csv = write_metrics(cfg, &dir, &rows)?;
    Ok(EvalReport { csv, rows, failures })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRow {
    pub variant: VariantKind,
    pub beta: f64,
    pub cd: f64,
    pub hd: f64,
    pub cd_ratio: f64,
    pub hd_ratio: f64,
}

/// Mean held-out CD and HD at every configured noise level, with ratios to
/// the clean level.
pub fn noise_rows(cfg: &ExperimentConfig, kind: VariantKind, model: &dyn Upsampler, dataset: &Dataset) -> Result<Vec<NoiseRow>> {
    let mut out: Vec<NoiseRow> = Vec::new();
    for &beta in &cfg.eval.noise_betas {
        let rows = evaluate_dataset(cfg, model, dataset, EvalOptions { beta, uniformity: false })?;
        let mean = MetricsRow::mean(&rows).ok_or_else(|| Error::Numerical("no evaluated shapes".into()))?;
        let (cd0, hd0) = out.first().map(|r| (r.cd, r.hd)).unwrap_or((mean.cd, mean.hd));
        out.push(NoiseRow {
            variant: kind,
            beta,
            cd: mean.cd,
            hd: mean.hd,
            cd_ratio: mean.cd / cd0,
            hd_ratio: mean.hd / hd0,
        });
    }
    Ok(out)
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = format!("{NOISE_HEADER}\n");
    for r in rows {
        let ratio = |v: f64| if v.is_finite() { format!("{v:.6}") } else { "NA".into() };
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.variant,
            r.beta,
            fmt_milli(r.cd),
            fmt_milli(r.hd),
            ratio(r.cd_ratio),
            ratio(r.hd_ratio)
        )
        .unwrap();
    }
    s
}

/// Variants with a trained checkpoint under `<out>/`.
pub fn trained_variants(cfg: &ExperimentConfig) -> Vec<VariantKind> {
    VariantKind::ALL.into_iter().filter(|&k| checkpoint_path(cfg, k).exists()).collect()
}

/// Writes `<out>/noise.csv` for `variants` (their `model.ckpt`).
pub fn cmd_noise(cfg: &ExperimentConfig, variants: &[VariantKind], dataset: Option<&Path>) -> Result<(PathBuf, Vec<NoiseRow>)> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::Config(format!("no trained checkpoints under {}", cfg.out.display())));
    }
    let dir = dataset.map(Path::to_path_buf).unwrap_or_else(|| dataset_dir(cfg));
    let ds = open_dataset(cfg, &dir)?;
    let mut rows = Vec::new();
    for &kind in variants {
        let model = load_model(cfg, &checkpoint_path(cfg, kind))?;
        rows.extend(noise_rows(cfg, kind, &model, &ds)?);
    }
    let path = cfg.out.join("noise.csv");
    write_atomic(&path, noise_csv(&rows).as_bytes())?;
    write_config(cfg, &cfg.out)?;
    Ok((path, rows))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: VariantKind,
    pub epochs: usize,
    pub encoder_params: usize,
    pub decoder_params: usize,
    pub mean: MetricsRow,
}

pub fn ablation_csv(rows: &[AblationRow], percentages: &[f64]) -> String {
    let metric_header = MetricsRow::csv_header(percentages);
    let metric_header = metric_header.trim_start_matches("shape_id,");
    let mut s = format!("variant,epochs,encoder_params,decoder_params,{metric_header}\n");
    for r in rows {
        let line = r.mean.csv_line();
        let metrics = line.split_once(',').map(|x| x.1).unwrap_or("");
        writeln!(s, "{},{},{},{},{metrics}", r.variant, r.epochs, r.encoder_params, r.decoder_params).unwrap();
    }
    s
}

/// Trains all three variants with one seed and budget, evaluates each, and
/// writes `<out>/ablation.csv` plus the per-variant outputs.
pub fn cmd_ablate(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<(PathBuf, Vec<AblationRow>)> {
    cfg.validate()?;
    let dir = dataset.map(Path::to_path_buf).unwrap_or_else(|| dataset_dir(cfg));
    let ds = open_dataset(cfg, &dir)?;
    let mut rows = Vec::new();
    for kind in VariantKind::ALL {
        let mut vcfg = cfg.clone();
        vcfg.model.variant = kind;
        let trained = train_variant(&vcfg, &ds, kind, None)?;
        let model = &trained.state.model;
        let metrics = evaluate_dataset(&vcfg, model, &ds, EvalOptions::default())?;
        write_metrics(&vcfg, &variant_dir(&vcfg, kind), &metrics)?;
        rows.push(AblationRow {
            variant: kind,
            epochs: trained.state.epoch,
            encoder_params: model.encoder_param_count(),
            decoder_params: model.decoder_param_count(),
            mean: MetricsRow::mean(&metrics).ok_or_else(|| Error::Numerical("no evaluated shapes".into()))?,
        });
    }
    let path = cfg.out.join("ablation.csv");
    write_atomic(&path, ablation_csv(&rows, &cfg.eval.uniformity_p).as_bytes())?;
    write_config(cfg, &cfg.out)?;
    Ok((path, rows))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyRow {
    pub variant: VariantKind,
    /// `local` (patch) or `global` (average segment).
    pub input: &'static str,
    pub mode: crate::saliency::SaliencyMode,
    pub alpha: f64,
    pub points: usize,
    pub loss: f64,
    pub regression: crate::saliency::Regression,
    pub ply: PathBuf,
}

fn value(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

pub fn saliency_csv(rows: &[SaliencyRow]) -> String {
    let mut s = format!("{SALIENCY_HEADER}\n");
    for r in rows {
        let g = &r.regression;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.input,
            r.mode.name(),
            r.alpha,
            r.points,
            r.loss,
            value(g.slope),
            value(g.r_squared),
            value(g.ols_slope),
            value(g.ols_intercept),
            value(g.ols_r_squared),
        )
        .unwrap();
    }
    s
}

/// Saliency of one training pair for one model: a PLY per input and mode in
/// `dir`, named `<variant>_<input>_<mode>.ply`, and one summary row each.
pub fn saliency_for(
    cfg: &ExperimentConfig,
    kind: VariantKind,
    model: &dyn Upsampler,
    local: &PointCloud,
    global: &PointCloud,
    gt: &PointCloud,
    dir: &Path,
) -> Result<Vec<SaliencyRow>> {
    model.check()?;
    let grads = input_gradient(model, local, global, gt)?;
    let mut rows = Vec::new();
    for (input, cloud, g) in [("local", local, &grads.local), ("global", global, &grads.global)] {
        for &mode in &cfg.saliency.modes {
            let report = spherical_saliency(g, cloud, cfg.saliency.alpha, mode)?;
            let ply = dir.join(format!("{kind}_{input}_{}.ply", mode.name()));
            write_ply(&ply, &report.annotate(cloud)?, Some(&rank_colors(&report.scores)))?;
            rows.push(SaliencyRow {
                variant: kind,
                input,
                mode,
                alpha: cfg.saliency.alpha,
                points: cloud.len(),
                loss: grads.loss,
                regression: saliency_regression(&report)?,
                ply,
            });
        }
    }
    Ok(rows)
}

/// Writes `<out>/saliency/` PLYs and `<out>/saliency.csv` for the held-out
/// sample `saliency.sample`, one block of rows per variant.
pub fn cmd_saliency(
    cfg: &ExperimentConfig,
    variants: &[VariantKind],
    dataset: Option<&Path>,
) -> Result<(PathBuf, Vec<SaliencyRow>)> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::Config(format!("no trained checkpoints under {}", cfg.out.display())));
    }
    let dir = dataset.map(Path::to_path_buf).unwrap_or_else(|| dataset_dir(cfg));
    let ds = open_dataset(cfg, &dir)?;
    let test = ds.samples(Split::Test);
    let sample = test.get(cfg.saliency.sample).ok_or_else(|| {
        Error::Config(format!("[saliency] sample {} out of range ({} held-out samples)", cfg.saliency.sample, test.len()))
    })?;
    let out_dir = cfg.out.join("saliency");
    let mut rows = Vec::new();
    for &kind in variants {
        let model = load_model(cfg, &checkpoint_path(cfg, kind))?;
        rows.extend(saliency_for(cfg, kind, &model, &sample.local_in, &sample.global_in, &sample.gt, &out_dir)?);
    }
    let path = cfg.out.join("saliency.csv");
    write_atomic(&path, saliency_csv(&rows).as_bytes())?;
    write_config(cfg, &out_dir)?;
    Ok((path, rows))
}
