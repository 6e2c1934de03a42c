use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cloud_matrix, ModelVariant};
use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::chamfer_points;
use crate::nn::{adam_step, AdamConfig, OptimizerState};
use crate::synth::{derive_seed, TrainingSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Write an intermediate checkpoint every this many epochs; 0 keeps only
    /// the final one.
    pub save_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
            save_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(a.decay > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("train.adam values out of range".into()));
        }
        if !(a.eps > 0.0) || a.decay_every == 0 {
            return Err(Error::Config("train.adam.eps and decay_every must be positive".into()));
        }
        Ok(())
    }
}

/// Chamfer distance between a prediction node and a fixed target, as a 1x1
/// tape node.
pub fn chamfer_on_tape(tape: &mut Tape, pred: Var, gt: &PointCloud) -> Result<Var> {
    let p = PointCloud::from_flat(tape.value(pred).data())
        .map_err(|e| Error::TrainingDiverged(format!("prediction became non-finite: {e}")))?;
    let cd = chamfer_points(p.points(), gt.points())?;
    tape.scalar_fn(pred, cd.value, cd.grad)
}

/// Loss and parameter gradients for one sample, on its own tape.
pub fn sample_gradients(model: &ModelVariant, sample: &TrainingSample) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let local = tape.constant(cloud_matrix(&sample.local_in));
    let global = tape.constant(cloud_matrix(&sample.global_in));
    let pred = model.forward_bound(&mut tape, &bound, local, global)?;
    let loss = chamfer_on_tape(&mut tape, pred, &sample.gt)?;
    tape.backward(loss)?;
    let value = tape.value(loss).get(0, 0);
    Ok((value, bound.vars().into_iter().map(|v| tape.grad(v).clone()).collect()))
}

/// Mean Chamfer loss over `batch` and one Adam update. Per-sample gradients
/// are computed independently and summed in batch order.
pub fn train_step(model: &mut ModelVariant, batch: &[&TrainingSample], opt: &mut OptimizerState) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("train_step needs a non-empty batch"));
    }
    let results = batch
        .par_iter()
        .map(|s| sample_gradients(model, s))
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Matrix> = model.shapes().iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
    for (l, g) in &results {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.add_assign(gi);
        }
    }
    loss *= inv;
    if !loss.is_finite() {
        let per: Vec<String> = batch
            .iter()
            .zip(&results)
            .map(|(s, (l, _))| format!("{}={l}", s.shape_id))
            .collect();
        return Err(Error::TrainingDiverged(format!(
            "non-finite batch loss at step {}: {}",
            opt.step + 1,
            per.join(", ")
        )));
    }
    for g in &mut grads {
        g.scale(inv);
    }
    adam_step(&mut model.tensors_mut(), &grads, opt)?;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

/// Model, optimizer and the number of completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: ModelVariant,
    pub opt: OptimizerState,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: ModelVariant, adam: AdamConfig) -> Self {
        let opt = OptimizerState::new(&model.shapes(), adam);
        Self { model, opt, epoch: 0 }
    }
}

/// Runs epoch `state.epoch` over `samples`: a seeded shuffle (from `seed` and
/// the epoch number alone, so resumed runs replay the same order), then
/// batches of `cfg.batch_size`.
pub fn train_epoch(state: &mut TrainState, samples: &[&TrainingSample], cfg: &TrainConfig, seed: u64) -> Result<EpochLog> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let start = Instant::now();
    let epoch = state.epoch;
    state.opt.set_epoch(epoch);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| samples[i]).collect();
        total += train_step(&mut state.model, &batch, &mut state.opt)? * batch.len() as f64;
    }
    state.epoch += 1;
    Ok(EpochLog {
        epoch,
        mean_loss: total / samples.len() as f64,
        lr: state.opt.lr,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::rel_err;
    use crate::model::VariantKind;
    use crate::nn::NetConfig;
    use rand::Rng;

    fn cfg() -> NetConfig {
        NetConfig {
            encoder_widths: vec![8, 16],
            k: 4,
            decoder_hidden: 8,
            ratio: 2,
        }
    }

    fn sample(seed: u64, m: usize) -> TrainingSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = |n: usize| {
            PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect())
                .unwrap()
        };
        TrainingSample {
            local_in: pts(m),
            global_in: pts(m),
            gt: pts(2 * m),
            shape_id: format!("s{seed}"),
        }
    }

    #[test]
    fn fixed_point_when_gt_is_repeated_input() {
        let mut s = sample(1, 16);
        let doubled: Vec<_> = s.local_in.points().iter().flat_map(|p| [*p, *p]).collect();
        s.gt = PointCloud::new(doubled).unwrap();
        let mut m = ModelVariant::new(VariantKind::Relpu, cfg(), 2).unwrap();
        let before = m.clone();
        let mut opt = OptimizerState::new(&m.shapes(), AdamConfig::default());
        let loss = train_step(&mut m, &[&s], &mut opt).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let s = sample(3, 12);
        let mut m = ModelVariant::new(VariantKind::Relpu, cfg(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in m.decoder.offset.weight.data_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
        let (_, grads) = sample_gradients(&m, &s).unwrap();
        let loss = |m: &ModelVariant| sample_gradients(m, &s).unwrap().0;
        let h = 1e-6;
        let mut checked = 0;
        for t in 0..m.tensors().len() {
            for idx in [0usize, 3, 7] {
                if idx >= m.tensors()[t].data().len() {
                    continue;
                }
                let mut plus = m.clone();
                plus.tensors_mut()[t].data_mut()[idx] += h;
                let mut minus = m.clone();
                minus.tensors_mut()[t].data_mut()[idx] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grads[t].data()[idx];
                assert!(rel_err(an, fd, 1e-6) < 1e-4, "tensor {t} idx {idx}: {an} vs {fd}");
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn empty_batch_and_nan_are_errors() {
        let mut m = ModelVariant::new(VariantKind::Baseline, cfg(), 0).unwrap();
        let mut opt = OptimizerState::new(&m.shapes(), AdamConfig::default());
        assert!(train_step(&mut m, &[], &mut opt).is_err());
        m.decoder.offset.bias.data_mut()[0] = f64::NAN;
        let s = sample(0, 8);
        assert!(matches!(train_step(&mut m, &[&s], &mut opt), Err(Error::TrainingDiverged(_))));
    }

    #[test]
    fn epochs_are_deterministic_and_resumable() {
        let data: Vec<TrainingSample> = (0..6).map(|i| sample(i, 10)).collect();
        let refs: Vec<&TrainingSample> = data.iter().collect();
        let tc = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let fresh = || TrainState::new(ModelVariant::new(VariantKind::Relpu, cfg(), 7).unwrap(), tc.adam.clone());
        let mut a = fresh();
        let la: Vec<f64> = (0..3).map(|_| train_epoch(&mut a, &refs, &tc, 1).unwrap().mean_loss).collect();
        let mut b = fresh();
        train_epoch(&mut b, &refs, &tc, 1).unwrap();
        let mut resumed = b.clone();
        let lb: Vec<f64> = (0..2).map(|_| train_epoch(&mut resumed, &refs, &tc, 1).unwrap().mean_loss).collect();
        assert_eq!(&la[1..], &lb[..]);
        assert_eq!(a, resumed);
    }
}
