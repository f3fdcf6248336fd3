use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::augment::{make_pair_with, Instruction};
use crate::model::{check_gradients, group_errors};

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::micro(),
        aug: AugConfig { template_size: 20, crop_size: 16, image_size: 16, ..AugConfig::default() },
        steps: 3,
        warmup_steps: 1,
        decay_steps: 10,
        lr: 1e-3,
        batch_size: 3,
        seed: 5,
        log_every: 1,
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

fn canvases(n: usize, t: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Image::from_vec(t, t, (0..t * t * 3).map(|_| rng.random::<f32>()).collect()).unwrap()).collect()
}

fn sample_of(kind: AugKind, inst: Instruction, cfg: &TrainConfig, seed: u64) -> Sample {
    let canvas = &canvases(1, cfg.aug.template_size, seed)[0];
    let pair = make_pair_with(canvas, kind, inst, &cfg.aug, cfg.model.num_slots).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sample { pair, noise: slot_noise(&mut rng, cfg.model.num_slots, cfg.model.slot_dim), calibrated: false }
}

fn weights(cfg: &TrainConfig) -> LossWeights {
    cfg.into()
}

#[test]
fn aim_call_order() {
    let cfg = tiny_cfg();
    let m = Model::<f32>::new(cfg.model.clone(), 1).unwrap();
    let s = sample_of(AugKind::Translate, Instruction::translate(0.1, 0.0), &cfg, 1);
    use Stage::*;
    let mut g = m.graph(false);
    let out = sample_loss(&m, &mut g, &s, weights(&cfg)).unwrap();
    assert_eq!(out.trace, [Bind, Decode, Manip, Manip, Decode, Manip]);
    let v1 = cfg.clone().with_variant(Variant::V1);
    let mut g = m.graph(false);
    let out = sample_loss(&m, &mut g, &s, weights(&v1)).unwrap();
    assert_eq!(out.trace, [Bind, Decode, Manip, Decode, Manip]);
}

#[test]
fn total_combines_terms_with_default_weights() {
    let cfg = tiny_cfg();
    let m = Model::<f64>::new(cfg.model.clone(), 2).unwrap();
    let s = sample_of(AugKind::Color, Instruction::color(40.0, 1.3, 1.0), &cfg, 2);
    let mut g = m.graph(false);
    let r = sample_loss(&m, &mut g, &s, weights(&cfg)).unwrap().report;
    let want = 1.0 * (r.loss_ref + r.loss_aug) + 0.1 * r.loss_cycle;
    assert!((r.total - want).abs() <= 1e-12 * want.abs());
    assert!(r.loss_cycle > 0.0);

    // Doubling the cycle weight doubles its contribution.
    let w2 = LossWeights { w_cycle: 0.2, ..weights(&cfg) };
    let mut g = m.graph(false);
    let r2 = sample_loss(&m, &mut g, &s, w2).unwrap().report;
    let (c1, c2) = (r.total - (r.loss_ref + r.loss_aug), r2.total - (r2.loss_ref + r2.loss_aug));
    assert!((c2 - 2.0 * c1).abs() <= 1e-12 * c2.abs().max(1e-300));
}

#[test]
fn identity_manip_gives_zero_cycle_loss() {
    let cfg = tiny_cfg();
    let mut m = Model::<f64>::new(cfg.model.clone(), 3).unwrap();
    for id in m.layout().manip_ids() {
        let shape = m.params().get(id).shape().to_vec();
        *m.params_mut().get_mut(id) = Tensor::zeros(&shape);
    }
    let s = sample_of(AugKind::Translate, Instruction::translate(0.05, -0.1), &cfg, 3);
    let mut g = m.graph(false);
    assert_eq!(sample_loss(&m, &mut g, &s, weights(&cfg)).unwrap().report.loss_cycle, 0.0);
}

#[test]
fn perfect_reconstruction_gives_zero_ref_loss() {
    let cfg = tiny_cfg();
    let mut m = Model::<f64>::new(cfg.model.clone(), 4).unwrap();
    for id in m.layout().decoder_output_ids() {
        let shape = m.params().get(id).shape().to_vec();
        *m.params_mut().get_mut(id) = Tensor::zeros(&shape);
    }
    let black = Image::new(20, 20);
    let pair = make_pair_with(&black, AugKind::Color, Instruction::color(10.0, 1.0, 1.0), &cfg.aug, 3).unwrap();
    let s = Sample { pair, noise: Tensor::zeros(&[3, 8]), calibrated: false };
    let mut g = m.graph(false);
    let r = sample_loss(&m, &mut g, &s, weights(&cfg)).unwrap().report;
    assert_eq!((r.loss_ref, r.loss_aug), (0.0, 0.0));
}

#[test]
fn mse_is_mean_over_pixels_channels_and_batch() {
    // 2x2 RGB prediction vs zero target: squares sum to 1+4+...; mean over 12.
    let mut tape = crate::tensor::Tape::<f64>::new();
    let x = tape.constant(Tensor::from_fn(&[1, 2, 2, 3], |i| i as f64));
    let a = tape.mse(x, &Tensor::zeros(&[1, 2, 2, 3]));
    let b = tape.mse(x, &Tensor::full(&[1, 2, 2, 3], 1.0));
    let (la, lb) = (tape.value(a).data()[0], tape.value(b).data()[0]);
    assert_eq!(la, 506.0 / 12.0);
    assert_eq!(lb, 386.0 / 12.0);
    let batch = LossReport::mean(&[
        LossReport { loss_ref: la, ..Default::default() },
        LossReport { loss_ref: lb, ..Default::default() },
    ]);
    assert_eq!(batch.loss_ref, (506.0 + 386.0) / 24.0);
}

#[test]
fn scale_pairs_get_per_slot_calibration() {
    let cfg = tiny_cfg();
    let m = Model::<f64>::new(cfg.model.clone(), 6).unwrap();
    let s = sample_of(AugKind::Scale, Instruction::scaling(1.2), &cfg, 6);
    let mut g = m.graph(false);
    let out = sample_loss(&m, &mut g, &s, weights(&cfg)).unwrap();
    let rows = &out.insts_r2a.rows;
    assert!(rows.iter().all(|r| r.scale() == 1.2));
    assert!(rows.windows(2).any(|w| w[0].dx != w[1].dx));
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    let cfg = tiny_cfg();
    let m = Model::<f64>::new(cfg.model.clone(), 7).unwrap();
    let mut s = sample_of(AugKind::Scale, Instruction::scaling(1.2), &cfg, 7);
    let w = weights(&cfg);
    // Calibration is a constant for differentiation; freeze it at the base point.
    let mut g = m.graph(false);
    s.pair.insts_r2a = sample_loss(&m, &mut g, &s, w).unwrap().insts_r2a;
    s.pair.insts_a2r = s.pair.insts_r2a.invert();
    s.calibrated = true;
    let loss = |m: &Model<f64>, g: &mut Graph<f64>| Ok(sample_loss(m, g, &s, w)?.total);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = check_gradients(&m, loss, 2, 1e-6, &mut rng).unwrap();
    let groups = group_errors(&samples, 1e-6);
    assert_eq!(groups.len(), 7, "{groups:?}");
    for g in &groups {
        assert!(g.max_rel_error <= 1e-3, "{g:?}");
    }
}

#[test]
fn zero_steps_keep_initialization() {
    let cfg = TrainConfig { steps: 0, warmup_steps: 0, ..tiny_cfg() };
    let data = canvases(4, 20, 1);
    let m = train(&cfg, &data, |_| Ok(())).unwrap();
    assert_eq!(m.params(), Model::<f32>::new(cfg.model.clone(), cfg.seed).unwrap().params());
}

#[test]
fn training_is_reproducible_and_thread_independent() {
    let data = canvases(5, 20, 2);
    let run = |deterministic: bool| {
        let cfg = TrainConfig { deterministic, ..tiny_cfg() };
        let mut logs = Vec::new();
        let mut ckpts = Vec::new();
        let m = train(&cfg, &data, |e| {
            match e {
                TrainEvent::Log(l) => logs.push(l),
                TrainEvent::Checkpoint { step, .. } => ckpts.push(step),
                TrainEvent::Skipped { .. } => panic!("skipped step"),
            }
            Ok(())
        })
        .unwrap();
        (m, logs, ckpts)
    };
    let (a, la, ca) = run(true);
    let (b, lb, _) = run(true);
    let (c, _, _) = run(false);
    assert_eq!(a.params(), b.params());
    assert_eq!(a.params(), c.params());
    assert_eq!(la, lb);
    assert_eq!(la.len(), 3);
    assert_eq!(ca, vec![2]);
    assert_ne!(a.params(), Model::<f32>::new(ModelConfig::micro(), 5).unwrap().params());
}

#[test]
fn config_validation() {
    assert!(TrainConfig { warmup_steps: 10, steps: 5, ..tiny_cfg() }.validate().is_err());
    assert!(TrainConfig { w_cycle: -1.0, ..tiny_cfg() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..tiny_cfg() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
    let json = serde_json::to_string(&tiny_cfg()).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), tiny_cfg());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
}
