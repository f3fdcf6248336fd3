//! Supervised probes on frozen slots: a small MLP predicts object
//! properties from the slot matched to each object.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{reference_view, AugConfig};
use crate::error::{Error, Result};
use crate::inference::{assign_rows, bind, InferenceConfig};
use crate::model::{Builder, Graph, Mlp, Model, Params};
use crate::par;
use crate::sprites::{ObjectRecord, Scene, Shape, PALETTE_SIZE};
use crate::tensor::Tensor;
use crate::training::{AdamW, AdamWConfig};

/// Position thresholds, normalized to the image side.
pub const POS_THRESHOLDS: [f64; 2] = [0.15, 0.05];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of scenes used for fitting; the rest are scored.
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 60, batch_size: 64, lr: 3e-3, train_frac: 0.8, seed: 0 }
    }
}

/// One ground-truth object and the slot matched to it, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeItem {
    pub scene: usize,
    pub object: usize,
    pub record: ObjectRecord,
    pub slot: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub size_f1: f64,
    pub color_f1: f64,
    pub shape_f1: f64,
    /// Accuracy at 0.15.
    pub pos_coarse: f64,
    /// Accuracy at 0.05.
    pub pos_fine: f64,
    pub train_objects: usize,
    pub test_objects: usize,
    pub unmatched: usize,
}

/// Bind the reference view of every scene and match slots to objects by
/// squared distance between predicted slot centers and object centers.
pub fn collect_probe_data(
    model: &Model,
    scenes: &[Scene],
    aug: &AugConfig,
    cfg: &InferenceConfig,
) -> Result<Vec<ProbeItem>> {
    let per_scene = par::map_range(scenes.len(), |i| -> Result<Vec<ProbeItem>> {
        let scene = &scenes[i];
        let b = bind(model, &reference_view(&scene.image, aug)?, cfg)?;
        let slots = b.positions()?;
        let objs = &scene.objects;
        let dist = |o: &ObjectRecord, p: &[f64; 2]| (o.position[0] - p[0]).powi(2) + (o.position[1] - p[1]).powi(2);
        let mut matched = vec![None; objs.len()];
        if objs.len() <= slots.len() {
            let cost: Vec<f64> = objs.iter().flat_map(|o| slots.iter().map(move |p| dist(o, p))).collect();
            for (j, k) in assign_rows(&cost, objs.len(), slots.len())?.into_iter().enumerate() {
                matched[j] = Some(k);
            }
        } else {
            let cost: Vec<f64> = slots.iter().flat_map(|p| objs.iter().map(move |o| dist(o, p))).collect();
            for (k, j) in assign_rows(&cost, slots.len(), objs.len())?.into_iter().enumerate() {
                matched[j] = Some(k);
            }
        }
        Ok(objs
            .iter()
            .enumerate()
            .map(|(j, o)| ProbeItem {
                scene: i,
                object: j,
                record: *o,
                slot: matched[j].map(|k| b.slots.row(k).to_vec()),
            })
            .collect())
    });
    let mut out = Vec::new();
    for r in per_scene {
        out.extend(r?);
    }
    Ok(out)
}

/// Macro-averaged F1 over every class that occurs in either labeling.
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let mut classes: Vec<usize> = pred.iter().chain(truth).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for (&p, &t) in pred.iter().zip(truth) {
                match (p == c, t == c) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .sum();
    total / classes.len() as f64
}

/// Fraction of predictions within `threshold` (Euclidean) of the truth.
pub fn position_accuracy(pred: &[[f64; 2]], truth: &[[f64; 2]], threshold: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt() <= threshold)
        .count();
    hits as f64 / truth.len() as f64
}

enum Targets<'a> {
    Classes(&'a [usize], usize),
    Points(&'a [[f64; 2]]),
}

/// Three-layer MLP on standardized inputs.
pub struct MlpProbe {
    params: Params<f32>,
    mlp: Mlp,
    mean: Vec<f32>,
    inv_std: Vec<f32>,
}

impl MlpProbe {
    fn new(dim: usize, hidden: usize, out: usize, x: &[Vec<f32>], seed: u64) -> Self {
        let mut params = Params::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Builder { params: &mut params, rng: &mut rng }.mlp("probe", &[dim, hidden, hidden, out]);
        let n = x.len().max(1) as f32;
        let mean: Vec<f32> = (0..dim).map(|d| x.iter().map(|r| r[d]).sum::<f32>() / n).collect();
        let inv_std = (0..dim)
            .map(|d| {
                let v = x.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f32>() / n;
                1.0 / v.sqrt().max(1e-6)
            })
            .collect();
        Self { params, mlp, mean, inv_std }
    }

    fn input(&self, rows: &[&Vec<f32>]) -> Tensor<f32> {
        let d = self.mean.len();
        let data =
            rows.iter().flat_map(|r| r.iter().enumerate().map(|(j, v)| (v - self.mean[j]) * self.inv_std[j])).collect();
        Tensor::from_vec(&[rows.len(), d], data)
    }

    pub fn forward(&self, x: &[Vec<f32>]) -> Tensor<f32> {
        let rows: Vec<&Vec<f32>> = x.iter().collect();
        let mut g = Graph::new(&self.params, false);
        let xi = g.constant(self.input(&rows));
        let y = self.mlp.forward(&mut g, xi);
        g.value(y).clone()
    }

    pub fn classify(&self, x: &[Vec<f32>]) -> Vec<usize> {
        let y = self.forward(x);
        (0..y.rows())
            .map(|r| {
                let row = y.row(r);
                (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
            })
            .collect()
    }

    pub fn regress(&self, x: &[Vec<f32>]) -> Vec<[f64; 2]> {
        let y = self.forward(x);
        (0..y.rows()).map(|r| [y.row(r)[0] as f64, y.row(r)[1] as f64]).collect()
    }

    fn fit(x: &[Vec<f32>], targets: Targets, cfg: &ProbeConfig) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("no training objects for the probe".into()));
        }
        let out = match targets {
            Targets::Classes(_, n) => n,
            Targets::Points(_) => 2,
        };
        let mut probe = Self::new(x[0].len(), cfg.hidden, out, x, cfg.seed);
        let mut opt = AdamW::new(&probe.params, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
        let mut order: Vec<usize> = (0..x.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let rows: Vec<&Vec<f32>> = batch.iter().map(|&i| &x[i]).collect();
                let xt = probe.input(&rows);
                let mut g = Graph::new(&probe.params, true);
                let xi = g.constant(xt);
                let y = probe.mlp.forward(&mut g, xi);
                let loss = match targets {
                    Targets::Classes(labels, n) => {
                        // Softmax cross-entropy: feed d(loss)/d(logits) in as a
                        // constant weight so the tape carries it to the params.
                        let logits = g.value(y);
                        let mut w = Tensor::zeros(&[batch.len(), n]);
                        for (r, &i) in batch.iter().enumerate() {
                            let row = logits.row(r);
                            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                            let s: f32 = row.iter().map(|v| (v - mx).exp()).sum();
                            let out = w.row_mut(r);
                            for (c, (o, &v)) in out.iter_mut().zip(row).enumerate() {
                                let t = if c == labels[i] { 1.0 } else { 0.0 };
                                *o = ((v - mx).exp() / s - t) / batch.len() as f32;
                            }
                        }
                        let wv = g.constant(w);
                        let prod = g.tape.mul(y, wv);
                        g.tape.sum(prod)
                    }
                    Targets::Points(points) => {
                        let t = Tensor::from_vec(
                            &[batch.len(), 2],
                            batch.iter().flat_map(|&i| [points[i][0] as f32, points[i][1] as f32]).collect(),
                        );
                        g.tape.mse(y, &t)
                    }
                };
                let grads = g.gradients(loss);
                opt.step(&mut probe.params, &grads, cfg.lr);
            }
        }
        Ok(probe)
    }
}

fn split(items: &[ProbeItem], train_frac: f64) -> (Vec<&ProbeItem>, Vec<&ProbeItem>) {
    let scenes = items.iter().map(|i| i.scene + 1).max().unwrap_or(0);
    let cut = ((scenes as f64) * train_frac).floor() as usize;
    items.iter().partition(|i| i.scene < cut)
}

/// Fit one probe per property on the training scenes and score the rest.
/// Objects without a matched slot count as wrong answers.
pub fn property_probe(items: &[ProbeItem], cfg: &ProbeConfig) -> Result<ProbeReport> {
    let (train, test) = split(items, cfg.train_frac);
    let train: Vec<&ProbeItem> = train.into_iter().filter(|i| i.slot.is_some()).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("probe needs both training and test objects".into()));
    }
    let x: Vec<Vec<f32>> = train.iter().map(|i| i.slot.clone().unwrap()).collect();
    let matched: Vec<&ProbeItem> = test.iter().copied().filter(|i| i.slot.is_some()).collect();
    let xt: Vec<Vec<f32>> = matched.iter().map(|i| i.slot.clone().unwrap()).collect();
    let unmatched = test.len() - matched.len();
    // Unmatched objects get a label no class can have.
    let miss = usize::MAX;

    let f1_for = |label: fn(&ObjectRecord) -> usize, classes: usize| -> Result<f64> {
        let y: Vec<usize> = train.iter().map(|i| label(&i.record)).collect();
        let probe = MlpProbe::fit(&x, Targets::Classes(&y, classes), cfg)?;
        let mut pred = if xt.is_empty() { Vec::new() } else { probe.classify(&xt) };
        let mut truth: Vec<usize> = matched.iter().map(|i| label(&i.record)).collect();
        for i in test.iter().filter(|i| i.slot.is_none()) {
            pred.push(miss);
            truth.push(label(&i.record));
        }
        Ok(macro_f1(&pred, &truth))
    };
    let size_f1 = f1_for(|r| r.size.id() as usize, 2)?;
    let color_f1 = f1_for(|r| r.color_id as usize, PALETTE_SIZE)?;
    let shape_f1 = f1_for(|r| r.shape.id() as usize, Shape::ALL.len())?;

    let pts: Vec<[f64; 2]> = train.iter().map(|i| i.record.position).collect();
    let probe = MlpProbe::fit(&x, Targets::Points(&pts), cfg)?;
    let mut pred = if xt.is_empty() { Vec::new() } else { probe.regress(&xt) };
    let mut truth: Vec<[f64; 2]> = matched.iter().map(|i| i.record.position).collect();
    for i in test.iter().filter(|i| i.slot.is_none()) {
        pred.push([f64::INFINITY; 2]);
        truth.push(i.record.position);
    }
    Ok(ProbeReport {
        size_f1,
        color_f1,
        shape_f1,
        pos_coarse: position_accuracy(&pred, &truth, POS_THRESHOLDS[0]),
        pos_fine: position_accuracy(&pred, &truth, POS_THRESHOLDS[1]),
        train_objects: train.len(),
        test_objects: test.len(),
        unmatched,
    })
}

/// One row per matched object: labels, position, then slot values.
pub fn write_probe_csv<W: Write>(mut w: W, items: &[ProbeItem]) -> Result<()> {
    let dim = items.iter().find_map(|i| i.slot.as_ref().map(Vec::len)).unwrap_or(0);
    write!(w, "scene,object,shape,color,size,x,y")?;
    for d in 0..dim {
        write!(w, ",s{d}")?;
    }
    writeln!(w)?;
    for i in items {
        let Some(slot) = &i.slot else { continue };
        let r = &i.record;
        write!(
            w,
            "{},{},{},{},{},{},{}",
            i.scene,
            i.object,
            r.shape.id(),
            r.color_id,
            r.size.id(),
            r.position[0],
            r.position[1]
        )?;
        for v in slot {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
