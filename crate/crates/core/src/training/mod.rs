//! Losses, optimizer and the training loop.
//!
//! Each sample is an augmented pair. The reference view is bound to slots
//! and reconstructed; the slots are pushed through the manipulation module
//! with the reference-to-augmented instructions (plus an identity pass when
//! AIM is on) and decoded against the augmented view; finally the inverse
//! instructions are applied and compared with the original slots.

mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{lr_schedule, AdamW, AdamWConfig};

use crate::augment::{make_pair, AugConfig, AugKind, AugmentedPair, InstructionSet};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{predict_positions, slot_noise, Graph, Model, ModelConfig};
use crate::par;
use crate::tensor::{Real, Tensor, Var};

/// Consecutive non-finite steps tolerated before training aborts.
pub const MAX_BAD_STEPS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Augmentation only: no identity pass, no consistency loss.
    V1,
    /// Identity pass and consistency loss.
    V3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub aug: AugConfig,
    pub w_recon: f64,
    pub w_cycle: f64,
    /// Apply an identity manipulation after the forward manipulation.
    pub aim: bool,
    pub steps: usize,
    pub warmup_steps: usize,
    /// Half-life of the post-warmup exponential decay, in steps.
    pub decay_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Process samples strictly sequentially.
    pub deterministic: bool,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            aug: AugConfig::default(),
            w_recon: 1.0,
            w_cycle: 0.1,
            aim: true,
            steps: 20_000,
            warmup_steps: 400,
            decay_steps: 4_000,
            lr: 4e-4,
            weight_decay: 0.01,
            batch_size: 16,
            seed: 0,
            deterministic: false,
            log_every: 100,
            checkpoint_every: 1_000,
        }
    }
}

impl TrainConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        match v {
            Variant::V1 => {
                self.aim = false;
                self.w_cycle = 0.0;
            }
            Variant::V3 => {
                self.aim = true;
                self.w_cycle = 0.1;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.aug.validate()?;
        if !(self.w_recon >= 0.0 && self.w_cycle >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.warmup_steps > self.steps {
            return Err(Error::Config(format!("warmup ({}) exceeds total steps ({})", self.warmup_steps, self.steps)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.aug.image_size != self.model.image_size {
            return Err(Error::Config(format!(
                "augmentation output {} differs from model input {}",
                self.aug.image_size, self.model.image_size
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_schedule(step, self.lr, self.warmup_steps, self.decay_steps)
    }
}

/// Mean-reduced losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_ref: f64,
    pub loss_aug: f64,
    pub loss_cycle: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.loss_ref, self.loss_aug, self.loss_cycle, self.total].iter().all(|v| v.is_finite())
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport::default();
        for r in reports {
            out.loss_ref += r.loss_ref;
            out.loss_aug += r.loss_aug;
            out.loss_cycle += r.loss_cycle;
            out.total += r.total;
        }
        out.loss_ref /= n;
        out.loss_aug /= n;
        out.loss_cycle /= n;
        out.total /= n;
        out
    }
}

/// Loss weights and switches for [`sample_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_recon: f64,
    pub w_cycle: f64,
    pub aim: bool,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        Self { w_recon: c.w_recon, w_cycle: c.w_cycle, aim: c.aim }
    }
}

/// Order of network calls made while computing one sample's loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Bind,
    Manip,
    Decode,
}

/// One training example: an augmented pair and its slot-init noise.
#[derive(Clone, Debug)]
pub struct Sample {
    pub pair: AugmentedPair,
    pub noise: Tensor<f64>,
    /// Instructions are already per-slot; skip scale calibration.
    pub calibrated: bool,
}

impl Sample {
    /// Build the sample for `index` deterministically from `seed`.
    pub fn generate(canvas: &Image, seed: u64, index: u64, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = sample_rng(seed, index);
        let pair = make_pair(canvas, &mut rng, &cfg.aug, cfg.model.num_slots)?;
        let noise = slot_noise(&mut rng, cfg.model.num_slots, cfg.model.slot_dim);
        Ok(Self { pair, noise, calibrated: false })
    }
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A17_A06D_0000_0001);
    rng.set_stream(index);
    rng
}

fn shuffle_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A17_A06D_0000_0002);
    rng.set_stream(epoch);
    rng
}

/// Output of [`sample_loss`].
#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub total: Var,
    pub report: LossReport,
    pub trace: Vec<Stage>,
    /// Instructions after per-slot calibration.
    pub insts_r2a: InstructionSet,
}

/// Build one sample's loss on `g`.
pub fn sample_loss<T: Real>(
    model: &Model<T>,
    g: &mut Graph<T>,
    sample: &Sample,
    w: LossWeights,
) -> Result<SampleOutput> {
    let mut trace = Vec::with_capacity(6);
    let mut pair = sample.pair.clone();
    let img_ref: Tensor<T> = pair.img_ref.to_tensor();
    let img_aug: Tensor<T> = pair.img_aug.to_tensor();

    let feats = model.encode(g, &img_ref)?;
    let init = model.init_slots(g, &sample.noise.cast())?;
    let (slots_r, attn) = model.spatial_binding(g, feats, init, model.config().iters)?;
    trace.push(Stage::Bind);

    if pair.kind == AugKind::Scale && !sample.calibrated {
        // Positions come from values only, so no gradient flows through them.
        let maps = g.value(attn).transpose();
        pair.calibrate(&predict_positions(&maps, model.config().image_size)?);
    }

    let dec_ref = model.decode(g, slots_r);
    trace.push(Stage::Decode);
    let loss_ref = g.tape.mse(dec_ref.composite, &img_ref);

    let mut s = model.slot_manip(g, slots_r, &pair.insts_r2a)?;
    trace.push(Stage::Manip);
    if w.aim {
        s = model.slot_manip(g, s, &InstructionSet::identity(pair.insts_r2a.len()))?;
        trace.push(Stage::Manip);
    }
    let dec_aug = model.decode(g, s);
    trace.push(Stage::Decode);
    let loss_aug = g.tape.mse(dec_aug.composite, &img_aug);

    let restored = model.slot_manip(g, s, &pair.insts_a2r)?;
    trace.push(Stage::Manip);
    let diff = g.tape.sub(restored, slots_r);
    let sq = g.tape.sum_sq(diff);
    let k = pair.insts_r2a.len() as f64;
    let loss_cycle = g.tape.scale(sq, T::of(1.0 / k));

    let recon = g.tape.add(loss_ref, loss_aug);
    let recon = g.tape.scale(recon, T::of(w.w_recon));
    let cycle = g.tape.scale(loss_cycle, T::of(w.w_cycle));
    let total = g.tape.add(recon, cycle);

    let scalar = |v: Var| g.value(v).data()[0].f64();
    let report = LossReport {
        loss_ref: scalar(loss_ref),
        loss_aug: scalar(loss_aug),
        loss_cycle: scalar(loss_cycle),
        total: scalar(total),
    };
    Ok(SampleOutput { total, report, trace, insts_r2a: pair.insts_r2a })
}

/// Mean loss and mean gradients over a batch; per-sample work runs in
/// parallel unless `sequential`, and the reduction is always in order.
pub fn batch_gradients(
    model: &Model<f32>,
    batch: &[Sample],
    w: LossWeights,
    sequential: bool,
) -> Result<(LossReport, Vec<Tensor<f32>>)> {
    let results = par::map_range_if(!sequential, batch.len(), |i| -> Result<(LossReport, Vec<Tensor<f32>>)> {
        let mut g = model.graph(true);
        let out = sample_loss(model, &mut g, &batch[i], w)?;
        let grads = if out.report.is_finite() { g.gradients(out.total) } else { Vec::new() };
        Ok((out.report, grads))
    });
    let mut reports = Vec::with_capacity(batch.len());
    let mut sum: Option<Vec<Tensor<f32>>> = None;
    for r in results {
        let (report, grads) = r?;
        if !report.is_finite() {
            return Ok((report, Vec::new()));
        }
        reports.push(report);
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
        }
    }
    let mut grads = sum.unwrap_or_default();
    let inv = 1.0 / batch.len().max(1) as f32;
    grads.iter_mut().for_each(|g| g.scale_assign(inv));
    Ok((LossReport::mean(&reports), grads))
}

/// Forward-only losses on fixed samples (no gradients).
pub fn evaluate_loss(model: &Model<f32>, samples: &[Sample], w: LossWeights) -> Result<LossReport> {
    let reports = par::map_slice(samples, |s| -> Result<LossReport> {
        let mut g = model.graph(false);
        Ok(sample_loss(model, &mut g, s, w)?.report)
    });
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LossReport::mean(&reports))
}

/// Samples for held-out evaluation, one per canvas.
pub fn holdout_samples(canvases: &[Image], seed: u64, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    canvases.iter().enumerate().map(|(i, c)| Sample::generate(c, seed, i as u64, cfg)).collect()
}

/// One JSON log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: usize,
    pub lr: f64,
    pub loss_ref: f64,
    pub loss_aug: f64,
    pub loss_cycle: f64,
    pub total: f64,
}

pub enum TrainEvent<'a> {
    Log(LogLine),
    Checkpoint {
        step: usize,
        model: &'a Model<f32>,
    },
    /// A step was skipped because its loss was not finite.
    Skipped {
        step: usize,
        report: LossReport,
    },
}

/// Training state over a fixed set of `T x T` canvases.
pub struct Trainer<'d> {
    cfg: TrainConfig,
    model: Model<f32>,
    opt: AdamW,
    canvases: &'d [Image],
    step: usize,
    epoch: u64,
    order: Vec<usize>,
    bad_streak: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: TrainConfig, canvases: &'d [Image]) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone(), cfg.seed)?;
        Self::from_model(cfg, model, canvases)
    }

    pub fn from_model(cfg: TrainConfig, model: Model<f32>, canvases: &'d [Image]) -> Result<Self> {
        cfg.validate()?;
        if canvases.is_empty() {
            return Err(Error::Empty("training set is empty".into()));
        }
        if model.config() != &cfg.model {
            return Err(Error::Config("model does not match training config".into()));
        }
        let opt = AdamW::new(model.params(), AdamWConfig { weight_decay: cfg.weight_decay, ..Default::default() });
        let mut t = Self { cfg, model, opt, canvases, step: 0, epoch: 0, order: Vec::new(), bad_streak: 0 };
        t.reshuffle();
        Ok(t)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.canvases.len()).collect();
        self.order.shuffle(&mut shuffle_rng(self.cfg.seed, self.epoch));
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Result<Vec<Sample>> {
        let b = self.cfg.batch_size;
        let n = self.canvases.len();
        let mut idx = Vec::with_capacity(b);
        for i in 0..b {
            let global = (self.step * b + i) as u64;
            let epoch = global / n as u64;
            if epoch != self.epoch {
                self.epoch = epoch;
                self.reshuffle();
            }
            idx.push((global, self.order[(global % n as u64) as usize]));
        }
        let cfg = &self.cfg;
        let canvases = self.canvases;
        par::map_range_if(!cfg.deterministic, idx.len(), |i| {
            let (global, c) = idx[i];
            Sample::generate(&canvases[c], cfg.seed, global, cfg)
        })
        .into_iter()
        .collect()
    }

    /// One optimizer step; the flag is false when a non-finite loss made it skip.
    pub fn step(&mut self) -> Result<(LossReport, bool)> {
        let batch = self.next_batch()?;
        let (report, grads) = batch_gradients(&self.model, &batch, (&self.cfg).into(), self.cfg.deterministic)?;
        let lr = self.cfg.lr_at(self.step);
        self.step += 1;
        if !report.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            self.bad_streak += 1;
            if self.bad_streak >= MAX_BAD_STEPS {
                return Err(Error::NonFinite(format!(
                    "loss for {MAX_BAD_STEPS} consecutive steps (last at step {})",
                    self.step - 1
                )));
            }
            return Ok((report, false));
        }
        self.bad_streak = 0;
        self.opt.step(self.model.params_mut(), &grads, lr);
        Ok((report, true))
    }
}

/// Run `cfg.steps` optimizer steps, reporting progress through `on_event`.
pub fn train(
    cfg: &TrainConfig,
    canvases: &[Image],
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<Model<f32>> {
    let mut t = Trainer::new(cfg.clone(), canvases)?;
    let mut window = Vec::new();
    for step in 0..cfg.steps {
        let lr = cfg.lr_at(step);
        let (report, applied) = t.step()?;
        if !applied {
            on_event(TrainEvent::Skipped { step, report })?;
            continue;
        }
        window.push(report);
        let done = step + 1;
        if cfg.log_every > 0 && (done % cfg.log_every == 0 || done == cfg.steps) {
            let m = LossReport::mean(&window);
            window.clear();
            on_event(TrainEvent::Log(LogLine {
                step: done,
                lr,
                loss_ref: m.loss_ref,
                loss_aug: m.loss_aug,
                loss_cycle: m.loss_cycle,
                total: m.total,
            }))?;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.steps {
            on_event(TrainEvent::Checkpoint { step: done, model: t.model() })?;
        }
    }
    Ok(t.into_model())
}

#[cfg(test)]
mod tests;
