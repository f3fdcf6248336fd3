//! Acceptance suite. Prints one line per criterion:
//!
//! ```text
//! PASS    instruction-algebra  (0.4s) ...
//! IGNORED training-smoke       needs --ignored
//! ```
//!
//! Criteria that need a full training run are skipped unless the binary
//! gets `--ignored` or `--include-ignored`, as with libtest. A trained
//! checkpoint can be supplied through `SLOTAUG_SMOKE_CKPT` (and
//! `SLOTAUG_V1_CKPT` for the ordering check); otherwise one is trained and
//! cached under the cargo target directory.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slotaug::augment::{hsl_to_rgb, make_pair_with, rgb_to_hsl, shift_color, warp, AugConfig, AugKind, Instruction};
use slotaug::eval::{
    collect_probe_data, disjoint_fixture, durability_on_scenes, evaluate, fg_ari, miou, overlap_fixture,
    property_probe, verify_decomposition, DurabilityMode, MaskMode, ProbeConfig,
};
use slotaug::image::Image;
use slotaug::inference::{
    assignment_cost, hungarian, retrieve, InferenceConfig, ManipulationRequest, RetrievalMetric, Session,
};
use slotaug::model::{
    check_gradients, group_errors, load_checkpoint, save_checkpoint, slot_noise, Graph, Model, ModelConfig, SlotSet,
};
use slotaug::sprites::{generate_scenes, Dataset, Scene, SpriteConfig};
use slotaug::tensor::Tensor;
use slotaug::training::{
    evaluate_loss, holdout_samples, sample_loss, train, LossWeights, Sample, TrainConfig, TrainEvent, Variant,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    Image::from_vec(w, h, (0..w * h * 3).map(|_| r.random::<f32>()).collect()).unwrap()
}

fn random_instruction(r: &mut impl Rng) -> Instruction {
    Instruction::new(
        r.random_range(0.5..2.0),
        r.random_range(-0.5..0.5),
        r.random_range(-0.5..0.5),
        r.random_range(-180.0..180.0),
        r.random_range(0.3..3.0),
        r.random_range(0.3..3.0),
    )
}

fn instruction_algebra() -> Outcome {
    let mut r = rng(1);
    for _ in 0..10_000 {
        let i = random_instruction(&mut r);
        if i.invert().invert() != i {
            return Err(format!("invert is not an involution on {i:?}"));
        }
    }
    let cfg = AugConfig::default();
    for seed in 0..5 {
        let img = random_image(cfg.template_size, cfg.template_size, seed);
        let p = make_pair_with(&img, AugKind::Translate, Instruction::IDENTITY, &cfg, 5).unwrap();
        if p.img_aug != p.img_ref {
            return Err("identity instruction changed the augmented image".into());
        }
    }
    // Integer-pixel round trip against an index-shift oracle on the interior.
    let t = cfg.template_size;
    let img = random_image(t, t, 9);
    let mut worst = 0.0f32;
    for (dx, dy) in [(3i64, -5i64), (-8, 8), (0, 7), (11, 2)] {
        let inst = Instruction::translate(dx as f64 / cfg.crop_size as f64, dy as f64 / cfg.crop_size as f64);
        let moved = warp(&img, &inst, cfg.crop_size);
        let back = warp(&moved, &inst.invert(), cfg.crop_size);
        let m = 12;
        for y in m..t - m {
            for x in m..t - m {
                let src = img.pixel((x as i64 - dx) as usize, (y as i64 - dy) as usize);
                let (a, b) = (moved.pixel(x, y), back.pixel(x, y));
                for c in 0..3 {
                    worst = worst.max((a[c] - src[c]).abs()).max((b[c] - img.pixel(x, y)[c]).abs());
                }
            }
        }
    }
    check(worst <= 1e-6, format!("10000 involutions, max interior error {worst:.1e}"))
}

fn hsl() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let rgb = [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()];
        let back = hsl_to_rgb(rgb_to_hsl(rgb));
        for c in 0..3 {
            worst = worst.max((back[c] - rgb[c]).abs());
        }
    }
    let green = shift_color(&Image::filled(1, 1, [1.0, 0.0, 0.0]), 120.0, 1.0, 1.0);
    let exact = green.data() == [0.0, 1.0, 0.0];
    check(worst <= 1.0 / 255.0 && exact, format!("max round-trip error {worst:.2e}, red+120 exact: {exact}"))
}

fn brute_force(cost: &[f64], n: usize) -> f64 {
    fn go(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == n {
            *best = best.min(acc);
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                go(cost, n, row + 1, used, acc + cost[row * n + c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
    best
}

fn hungarian_oracle() -> Outcome {
    let mut r = rng(3);
    for trial in 0..200 {
        let n = r.random_range(1..=6);
        // Small integer costs make ties common and sums exact.
        let cost: Vec<f64> = (0..n * n).map(|_| r.random_range(0..20) as f64).collect();
        let a = hungarian(&cost, n).map_err(|e| e.to_string())?;
        let mut seen = vec![false; n];
        for &c in &a {
            if seen[c] {
                return Err(format!("trial {trial}: not a permutation {a:?}"));
            }
            seen[c] = true;
        }
        let (got, want) = (assignment_cost(&cost, n, &a), brute_force(&cost, n));
        if got != want {
            return Err(format!("trial {trial}: cost {got} vs brute force {want}"));
        }
    }
    Ok("200 matrices, n <= 6, exact".into())
}

/// Independent FG-ARI: pair counting over foreground pixels.
fn pair_count_fg_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] != 0).collect();
    let (mut both, mut same_p, mut same_t, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let (i, j) = (idx[a], idx[b]);
            let sp = pred[i] == pred[j];
            let st = truth[i] == truth[j];
            both += (sp && st) as u8 as f64;
            same_p += sp as u8 as f64;
            same_t += st as u8 as f64;
            pairs += 1.0;
        }
    }
    let expected = same_p * same_t / pairs;
    let max = (same_p + same_t) / 2.0;
    if max == expected {
        return if same_p == same_t { 1.0 } else { 0.0 };
    }
    (both - expected) / (max - expected)
}

fn metrics_oracles() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(20..120);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..5)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        if truth.iter().filter(|&&t| t != 0).count() < 2 {
            continue;
        }
        let got = fg_ari(&pred, &truth, 0).map_err(|e| e.to_string())?;
        worst = worst.max((got - pair_count_fg_ari(&pred, &truth)).abs());
    }
    let truth: Vec<usize> = (0..64).map(|i| i % 4).collect();
    let renamed: Vec<usize> = truth.iter().map(|&t| (t + 2) % 4).collect();
    let perfect_ari = fg_ari(&renamed, &truth, 0).map_err(|e| e.to_string())?;
    let perfect_miou = miou(&renamed, &truth).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-12 && perfect_ari == 1.0 && perfect_miou == 1.0,
        format!("max deviation {worst:.1e}, perfect FG-ARI {perfect_ari}, perfect mIoU {perfect_miou}"),
    )
}

fn column_sum_error(t: &Tensor<f32>) -> f64 {
    let (k, n) = (t.shape()[0], t.cols());
    (0..n).map(|p| ((0..k).map(|s| t.data()[s * n + p] as f64).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

fn normalization() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let m = Model::<f32>::new(ModelConfig::micro(), seed).unwrap();
        let img = random_image(16, 16, seed + 100);
        let (_, attn) = m.bind_image(&img, seed).unwrap();
        worst = worst.max(column_sum_error(&attn.attn));
        for k in [1, 3, 7] {
            let slots = SlotSet { slots: slot_noise(&mut rng(seed * 10 + k as u64), k, 8) };
            worst = worst.max(column_sum_error(&m.render(&slots).unwrap().alpha));
        }
    }
    check(worst <= 1e-5, format!("max |sum - 1| = {worst:.1e} over attention and alpha"))
}

fn gradient_check() -> Outcome {
    let cfg = TrainConfig {
        model: ModelConfig::micro(),
        aug: AugConfig { template_size: 20, crop_size: 16, image_size: 16, ..AugConfig::default() },
        ..TrainConfig::default()
    };
    assert!(cfg.aim && cfg.w_cycle > 0.0);
    let m = Model::<f64>::new(cfg.model.clone(), 7).unwrap();
    let canvas = random_image(20, 20, 7);
    let pair = make_pair_with(&canvas, AugKind::Scale, Instruction::scaling(1.2), &cfg.aug, 3).unwrap();
    let noise = slot_noise(&mut rng(7), 3, 8);
    let mut s = Sample { pair, noise, calibrated: false };
    let w = LossWeights::from(&cfg);
    // Calibration depends on predicted positions; treat it as a constant.
    let mut g = m.graph(false);
    s.pair.insts_r2a = sample_loss(&m, &mut g, &s, w).map_err(|e| e.to_string())?.insts_r2a;
    s.pair.insts_a2r = s.pair.insts_r2a.invert();
    s.calibrated = true;
    let loss = |m: &Model<f64>, g: &mut Graph<f64>| Ok(sample_loss(m, g, &s, w)?.total);
    let samples = check_gradients(&m, loss, 2, 1e-6, &mut rng(0)).map_err(|e| e.to_string())?;
    let groups = group_errors(&samples, 1e-6);
    let worst = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    let names: Vec<&str> = groups.iter().map(|g| g.group.as_str()).collect();
    check(
        groups.len() == 7 && worst <= 1e-3,
        format!("{} samples, {} groups {names:?}, max rel error {worst:.1e}", samples.len(), groups.len()),
    )
}

fn decomposition() -> Outcome {
    let (img, dec) = disjoint_fixture();
    let d = verify_decomposition(&img, &dec, MaskMode::Hard).map_err(|e| e.to_string())?;
    let (img, dec) = overlap_fixture();
    let o = verify_decomposition(&img, &dec, MaskMode::Soft).map_err(|e| e.to_string())?;
    check(
        d.relative_gap() <= 1e-6 && o.cross_term != 0.0,
        format!("disjoint gap {:.1e}, overlap cross term {:.3e}", d.relative_gap(), o.cross_term),
    )
}

fn determinism() -> Outcome {
    let sprites = SpriteConfig::default();
    let bytes = |seed| {
        let ds = Dataset::new(&sprites, generate_scenes(seed, 6, &sprites).unwrap());
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        buf
    };
    let data_same = bytes(5) == bytes(5);

    let scenes = generate_scenes(5, 6, &sprites).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig::micro(),
        aug: AugConfig { image_size: 16, ..AugConfig::default() },
        steps: 3,
        warmup_steps: 1,
        batch_size: 2,
        deterministic: true,
        log_every: 1,
        ..TrainConfig::default()
    };
    let canvases: Vec<Image> = scenes.iter().map(|s| s.image.clone()).collect();
    let run = || {
        let mut logs = Vec::new();
        let m = train(&cfg, &canvases, |e| {
            if let TrainEvent::Log(l) = e {
                logs.push(l);
            }
            Ok(())
        })
        .unwrap();
        (m, logs)
    };
    let (a, la) = run();
    let (b, lb) = run();
    let train_same = a.params() == b.params() && la == lb;
    let icfg = InferenceConfig::default();
    let eval_same = evaluate(&a, &scenes, &cfg.aug, &icfg).unwrap() == evaluate(&b, &scenes, &cfg.aug, &icfg).unwrap();
    check(data_same && train_same && eval_same, format!("gen-data {data_same}, train {train_same}, eval {eval_same}"))
}

// ---- criteria that need trained checkpoints ----

const HELDOUT_SEED: u64 = 1;

fn sprite_config() -> SpriteConfig {
    SpriteConfig::default()
}

fn heldout(n: usize) -> Vec<Scene> {
    generate_scenes(HELDOUT_SEED, n, &sprite_config()).unwrap()
}

fn training_scenes() -> &'static [Scene] {
    static S: OnceLock<Vec<Scene>> = OnceLock::new();
    S.get_or_init(|| generate_scenes(0, 5_000, &sprite_config()).unwrap())
}

fn full_config(variant: Variant) -> TrainConfig {
    TrainConfig::default().with_variant(variant)
}

fn cache_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

struct Trained {
    model: Model,
    loss_ref_init: f64,
    loss_ref_final: f64,
}

fn loss_ref(model: &Model, cfg: &TrainConfig) -> f64 {
    let canvases: Vec<Image> = heldout(100).into_iter().map(|s| s.image).collect();
    let samples = holdout_samples(&canvases, 99, cfg).unwrap();
    evaluate_loss(model, &samples, LossWeights::from(cfg)).unwrap().loss_ref
}

/// A checkpoint written by `slotaug train` records its config; the loss
/// comparison then uses that config, otherwise the default one.
fn trained(variant: Variant, env: &str) -> Trained {
    let mut cfg = full_config(variant);
    let path = std::env::var_os(env).map(PathBuf::from).unwrap_or_else(|| cache_path(&format!("{variant:?}.ckpt")));
    let model = if path.exists() {
        let (m, meta) = load_checkpoint(&path).unwrap();
        if let Some(c) = meta.get("train").and_then(|c| serde_json::from_value::<TrainConfig>(c.clone()).ok()) {
            cfg = c;
        }
        m
    } else {
        let canvases: Vec<Image> = training_scenes().iter().map(|s| s.image.clone()).collect();
        let m = train(&cfg, &canvases, |e| {
            if let TrainEvent::Log(l) = e {
                eprintln!("[{variant:?}] step {} total {:.5}", l.step, l.total);
            }
            Ok(())
        })
        .unwrap();
        save_checkpoint(&path, &m, &serde_json::json!({ "variant": variant, "train": cfg })).unwrap();
        m
    };
    let init = Model::new(cfg.model.clone(), cfg.seed).unwrap();
    Trained { loss_ref_init: loss_ref(&init, &cfg), loss_ref_final: loss_ref(&model, &cfg), model }
}

fn smoke() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| trained(Variant::V3, "SLOTAUG_SMOKE_CKPT"))
}

/// Views are rendered at the input size of the model under test.
fn aug() -> AugConfig {
    AugConfig { image_size: smoke().model.config().image_size, ..AugConfig::default() }
}

fn training_smoke() -> Outcome {
    let t = smoke();
    let report = evaluate(&t.model, &heldout(100), &aug(), &InferenceConfig::default()).map_err(|e| e.to_string())?;
    let ratio = t.loss_ref_init / t.loss_ref_final;
    check(
        report.fg_ari >= 0.70 && ratio >= 5.0,
        format!("held-out FG-ARI {:.3} (need 0.70), loss_ref reduced {ratio:.1}x (need 5x)", report.fg_ari),
    )
}

fn manipulation_fidelity() -> Outcome {
    let model = std::sync::Arc::new(smoke().model.clone());
    let cfg = InferenceConfig::default();
    let mut hits = 0;
    let scenes = heldout(100);
    for s in &scenes {
        let view = slotaug::augment::reference_view(&s.image, &aug()).unwrap();
        let target = s.objects[0].position;
        let mut session = Session::open("acceptance", model.clone(), &view, cfg.clone()).unwrap();
        let before = session.positions().unwrap();
        let v = session.apply(&ManipulationRequest { target, instruction: Instruction::translate(0.1, 0.0) }).unwrap();
        let k = v.slot_index.unwrap();
        let moved = v.positions[k][0] - before[k][0];
        hits += ((moved - 0.1).abs() <= 0.05) as usize;
    }
    let frac = hits as f64 / scenes.len() as f64;
    check(frac >= 0.7, format!("{hits}/{} moved by 0.1 +- 0.05 (need 70%)", scenes.len()))
}

fn sustainability_ordering() -> Outcome {
    let v3 = &smoke().model;
    let v1 = trained(Variant::V1, "SLOTAUG_V1_CKPT").model;
    let scenes = heldout(20);
    let cfg = InferenceConfig::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [DurabilityMode::Single, DurabilityMode::Multi] {
        let run = |m: &Model| durability_on_scenes(m, &scenes, &aug(), &cfg, mode, 0).map_err(|e| e.to_string());
        let (a, b) = (run(&v1)?, run(v3)?);
        let mean = |s: &slotaug::eval::DurabilitySummary, f: fn(&slotaug::eval::RoundDrift) -> f64| {
            s.rounds[1..].iter().map(f).sum::<f64>() / (s.rounds.len() - 1) as f64
        };
        let (s1, s3) = (mean(&a, |r| r.slot_mse), mean(&b, |r| r.slot_mse));
        let (p1, p3) = (mean(&a, |r| r.position), mean(&b, |r| r.position));
        ok &= s3 < s1 && p3 < p1;
        lines.push(format!("{mode:?}: slot v3 {s3:.4} v1 {s1:.4}, pos v3 {p3:.4} v1 {p1:.4}"));
    }
    check(ok, lines.join("; "))
}

fn probe() -> Outcome {
    let items = collect_probe_data(&smoke().model, &heldout(500), &aug(), &InferenceConfig::default())
        .map_err(|e| e.to_string())?;
    let r = property_probe(&items, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    check(
        r.color_f1 >= 0.375 && r.pos_coarse >= 0.6,
        format!("color F1 {:.3} (need 0.375), pos@0.15 {:.3} (need 0.6)", r.color_f1, r.pos_coarse),
    )
}

fn retrieval() -> Outcome {
    let model = &smoke().model;
    let scenes = heldout(50);
    let views: Vec<Image> =
        scenes.iter().map(|s| slotaug::augment::reference_view(&s.image, &aug()).unwrap()).collect();
    let cfg = InferenceConfig::default();
    let mut top = 0;
    for (i, s) in scenes.iter().enumerate() {
        let r = retrieve(model, &views[i], s.objects[0].position, &views, RetrievalMetric::PixelMse, &cfg)
            .map_err(|e| e.to_string())?;
        top += (r.rank_of(i) == Some(1)) as usize;
    }
    check(top * 10 >= 9 * scenes.len(), format!("self-scene at rank 1 in {top}/{}", scenes.len()))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    heavy: bool,
    run: fn() -> Outcome,
}

const fn light(name: &'static str, secs: u64, run: fn() -> Outcome) -> Criterion {
    Criterion { name, budget: Duration::from_secs(secs), heavy: false, run }
}

const fn heavy(name: &'static str, secs: u64, run: fn() -> Outcome) -> Criterion {
    Criterion { name, budget: Duration::from_secs(secs), heavy: true, run }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let all = args.iter().any(|a| a == "--include-ignored");
    let only_ignored = args.iter().any(|a| a == "--ignored");
    let filter = args.iter().find(|a| !a.starts_with('-')).cloned();
    // `cargo test` passes flags like --list; answer them without running anything.
    if args.iter().any(|a| a == "--list") {
        return;
    }

    // Budgets are for release builds; debug builds get a 20x allowance.
    let slack = if cfg!(debug_assertions) { 20 } else { 1 };
    let criteria = [
        light("instruction-algebra", 10, instruction_algebra),
        light("hsl", 5, hsl),
        light("hungarian", 10, hungarian_oracle),
        light("metrics-oracles", 10, metrics_oracles),
        light("normalization", 10, normalization),
        light("gradient-check", 300, gradient_check),
        light("decomposition", 30, decomposition),
        light("determinism", 60, determinism),
        heavy("training-smoke", 2 * 3600, training_smoke),
        heavy("manipulation-fidelity", 600, manipulation_fidelity),
        heavy("sustainability-ordering", 4 * 3600, sustainability_ordering),
        heavy("probe", 1800, probe),
        heavy("retrieval", 600, retrieval),
    ];
    let mut failed = 0;
    for c in &criteria {
        if filter.as_deref().is_some_and(|f| !c.name.contains(f)) {
            continue;
        }
        let selected = if c.heavy { all || only_ignored } else { !only_ignored };
        if !selected {
            let why = if c.heavy { "needs --ignored (full training run)" } else { "skipped by --ignored" };
            println!("IGNORED {:<24} {why}", c.name);
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let took = start.elapsed();
        let in_budget = took <= c.budget * slack;
        let (status, detail) = match (&outcome, in_budget) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over budget {:?}", c.budget * slack)),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status:<7} {:<24} ({:.1}s) {detail}", c.name, took.as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
