//! Subcommand implementations. Each prints its resolved settings to stderr
//! and its results as JSON to stdout.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use slotaug::augment::{reference_view, AugConfig, Instruction};
use slotaug::eval::{
    collect_probe_data, disjoint_fixture, durability_on_scenes, evaluate, overlap_fixture, property_probe,
    verify_decomposition, write_probe_csv, DurabilityMode, DurabilitySummary, MaskMode, ProbeConfig,
};
use slotaug::image::Image;
use slotaug::inference::{
    bind, compose, retrieve, ComposeObject, ComposeSource, InferenceConfig, ManipulationRequest, RetrievalMetric,
    Selection, Session,
};
use slotaug::model::{load_checkpoint, save_checkpoint, Model};
use slotaug::sprites::{generate_scenes, read_dataset, write_dataset, Dataset, Scene};
use slotaug::training::{evaluate_loss, holdout_samples, train, LossWeights, TrainEvent};

use crate::args::Command;
use crate::config::{header, resolve};
use crate::error::{CliError, Result};
use crate::png::{read_png_sized, write_png};
use crate::settings::{self, parse_point, required};

/// Probe thresholds checked by `probe --assert`.
pub const PROBE_MIN_COLOR_F1: f64 = 0.375;
pub const PROBE_MIN_POS_COARSE: f64 = 0.6;

fn emit<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::io("<stdout>", e))
}

fn announce<S: Serialize>(cmd: &str, s: &S) {
    eprintln!("{}", header(cmd, s));
}

fn with_path(path: &Path) -> impl FnOnce(slotaug::Error) -> CliError + '_ {
    move |e| match e {
        slotaug::Error::Io(io) => CliError::io(path, io),
        e => e.into(),
    }
}

fn load_model(path: &Path) -> Result<(Model, Value)> {
    load_checkpoint(path).map_err(with_path(path))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path).map_err(with_path(path))
}

fn aug_for(ds: &Dataset, image_size: usize) -> AugConfig {
    AugConfig { template_size: ds.template_size, crop_size: ds.crop_size, image_size, ..AugConfig::default() }
}

fn infer_cfg(aug: &AugConfig, noise_seed: u64) -> InferenceConfig {
    InferenceConfig { noise_seed, ..InferenceConfig::from_aug(aug) }
}

/// `count == 0` means the rest of the set.
fn scene_range(ds: &Dataset, offset: usize, count: usize) -> Result<&[Scene]> {
    if offset >= ds.scenes.len() {
        return Err(CliError::Usage(format!(
            "--offset {offset} is past the {} scenes in the dataset",
            ds.scenes.len()
        )));
    }
    let end = if count == 0 { ds.scenes.len() } else { (offset + count).min(ds.scenes.len()) };
    Ok(&ds.scenes[offset..end])
}

fn parse_mode<T: for<'de> Deserialize<'de>>(s: &str, flag: &str) -> Result<T> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| CliError::Usage(format!("bad --{flag} {s:?}")))
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(resolve(a.config.as_deref(), &a)?),
        Command::Train(a) => train_cmd(resolve(a.config.as_deref(), &a)?),
        Command::Eval(a) => eval(resolve(a.config.as_deref(), &a)?),
        Command::Manipulate(a) => manipulate(resolve(a.config.as_deref(), &a)?),
        Command::Durability(a) => durability(resolve(a.config.as_deref(), &a)?),
        Command::Probe(a) => probe(resolve(a.config.as_deref(), &a)?),
        Command::Retrieve(a) => retrieve_cmd(resolve(a.config.as_deref(), &a)?),
        Command::Compose(a) => compose_cmd(resolve(a.config.as_deref(), &a)?),
        Command::VerifyDecomposition(a) => verify(resolve(a.config.as_deref(), &a)?),
        Command::ExportPng(a) => export(resolve(a.config.as_deref(), &a)?),
        Command::Serve(a) => serve(resolve(a.config.as_deref(), &a)?),
    }
}

pub fn gen_data(s: settings::GenData) -> Result<()> {
    announce("gen-data", &s);
    let out = required(&s.out, "out")?;
    let cfg = s.sprite_config();
    let scenes = generate_scenes(s.seed, s.count, &cfg)?;
    let objects: usize = scenes.iter().map(|sc| sc.objects.len()).sum();
    write_dataset(&Dataset::new(&cfg, scenes), out)?;
    emit(&json!({ "out": out, "scenes": s.count, "objects": objects }))
}

pub fn train_cmd(s: settings::Train) -> Result<()> {
    announce("train", &s);
    let data = required(&s.data, "data")?;
    let out = required(&s.out, "out")?.clone();
    let ds = load_dataset(data)?;
    let mut scenes = ds.scenes;
    if s.max_scenes > 0 {
        scenes.truncate(s.max_scenes);
    }
    if s.holdout >= scenes.len() {
        return Err(CliError::Usage(format!(
            "--holdout {} leaves no training scenes out of {}",
            s.holdout,
            scenes.len()
        )));
    }
    let held: Vec<Image> = scenes.split_off(scenes.len() - s.holdout).into_iter().map(|sc| sc.image).collect();
    let canvases: Vec<Image> = scenes.into_iter().map(|sc| sc.image).collect();
    let cfg = s.train_config(ds.template_size, ds.crop_size);
    cfg.validate()?;
    let weights = LossWeights::from(&cfg);
    let held = if held.is_empty() { Vec::new() } else { holdout_samples(&held, cfg.seed ^ 0x5eed, &cfg)? };
    let meta = |step: usize| json!({ "step": step, "variant": s.variant, "train": cfg });

    if !held.is_empty() {
        let m = Model::new(cfg.model.clone(), cfg.seed)?;
        emit(&json!({ "event": "holdout", "step": 0, "loss": evaluate_loss(&m, &held, weights)? }))?;
    }
    let model = train(&cfg, &canvases, |ev| {
        let line = match ev {
            TrainEvent::Log(l) => json!({ "event": "log", "line": l }),
            TrainEvent::Checkpoint { step, model } => {
                save_checkpoint(&out, model, &meta(step))?;
                json!({ "event": "checkpoint", "step": step, "path": out })
            }
            TrainEvent::Skipped { step, report } => json!({ "event": "skipped", "step": step, "loss": report }),
        };
        emit(&line).map_err(|e| slotaug::Error::Config(e.to_string()))
    })?;
    save_checkpoint(&out, &model, &meta(cfg.steps))?;
    if !held.is_empty() {
        emit(&json!({ "event": "holdout", "step": cfg.steps, "loss": evaluate_loss(&model, &held, weights)? }))?;
    }
    emit(&json!({ "event": "done", "step": cfg.steps, "path": out }))
}

pub fn eval(s: settings::Eval) -> Result<()> {
    announce("eval", &s);
    let (model, _) = load_model(required(&s.ckpt, "ckpt")?)?;
    let ds = load_dataset(required(&s.data, "data")?)?;
    let aug = aug_for(&ds, model.config().image_size);
    let report = evaluate(&model, scene_range(&ds, s.offset, s.count)?, &aug, &infer_cfg(&aug, s.noise_seed))?;
    emit(&report)?;
    if s.assert && !(report.fg_ari >= s.min_fg_ari) {
        return Err(CliError::Assert(format!("FG-ARI {:.4} below {}", report.fg_ari, s.min_fg_ari)));
    }
    Ok(())
}

fn parse_instruction(text: &str) -> Result<Instruction> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("bad --inst: {e}")))
}

pub fn manipulate(s: settings::Manipulate) -> Result<()> {
    announce("manipulate", &s);
    let (model, _) = load_model(required(&s.ckpt, "ckpt")?)?;
    let size = model.config().image_size;
    let img = read_png_sized(required(&s.image, "image")?, size)?;
    let target = parse_point(required(&s.target, "target")?)?;
    let instruction = parse_instruction(required(&s.inst, "inst")?)?;
    let out = required(&s.out, "out")?;
    let cfg = InferenceConfig { noise_seed: s.noise_seed, ..InferenceConfig::default() };
    let mut session = Session::open("cli", Arc::new(model), &img, cfg)?;
    let view = session.apply(&ManipulationRequest { target, instruction })?;
    write_png(out, &view.render)?;
    emit(&json!({ "out": out, "slot_index": view.slot_index, "positions": view.positions }))
}

#[derive(Serialize)]
struct DurabilityRun {
    ckpt: PathBuf,
    mean_slot_mse: f64,
    mean_position: f64,
    summary: DurabilitySummary,
}

fn durability_run(ckpt: &Path, ds: &Dataset, s: &settings::Durability, mode: DurabilityMode) -> Result<DurabilityRun> {
    let (model, _) = load_model(ckpt)?;
    let aug = aug_for(ds, model.config().image_size);
    let scenes = scene_range(ds, s.offset, s.count)?;
    let summary = durability_on_scenes(&model, scenes, &aug, &infer_cfg(&aug, s.noise_seed), mode, s.rounds)?;
    let after = &summary.rounds[1..];
    let n = after.len().max(1) as f64;
    Ok(DurabilityRun {
        ckpt: ckpt.to_path_buf(),
        mean_slot_mse: after.iter().map(|r| r.slot_mse).sum::<f64>() / n,
        mean_position: after.iter().map(|r| r.position).sum::<f64>() / n,
        summary,
    })
}

pub fn durability(s: settings::Durability) -> Result<()> {
    announce("durability", &s);
    let ckpt = required(&s.ckpt, "ckpt")?;
    let ds = load_dataset(required(&s.data, "data")?)?;
    let mode: DurabilityMode = parse_mode(&s.mode, "mode")?;
    let main = durability_run(ckpt, &ds, &s, mode)?;
    let base = s.baseline.as_deref().map(|b| durability_run(b, &ds, &s, mode)).transpose()?;
    emit(&json!({ "model": main, "baseline": base }))?;
    if s.assert {
        let b = base.ok_or_else(|| CliError::Usage("--assert needs --baseline".into()))?;
        if !(main.mean_slot_mse < b.mean_slot_mse) {
            return Err(CliError::Assert(format!(
                "slot drift {:.6} is not below the baseline's {:.6}",
                main.mean_slot_mse, b.mean_slot_mse
            )));
        }
    }
    Ok(())
}

pub fn probe(s: settings::Probe) -> Result<()> {
    announce("probe", &s);
    let (model, _) = load_model(required(&s.ckpt, "ckpt")?)?;
    let ds = load_dataset(required(&s.data, "data")?)?;
    let aug = aug_for(&ds, model.config().image_size);
    let items = collect_probe_data(&model, scene_range(&ds, s.offset, s.count)?, &aug, &infer_cfg(&aug, s.noise_seed))?;
    if let Some(path) = &s.csv {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        write_probe_csv(BufWriter::new(f), &items)?;
    }
    let cfg = ProbeConfig {
        hidden: s.hidden,
        epochs: s.epochs,
        lr: s.lr,
        train_frac: s.train_frac,
        seed: s.seed,
        ..ProbeConfig::default()
    };
    let r = property_probe(&items, &cfg)?;
    let counts = json!({ "train_objects": r.train_objects, "test_objects": r.test_objects, "unmatched": r.unmatched });
    let mut out = match s.property.as_str() {
        "all" => serde_json::to_value(&r)?,
        "size" => json!({ "size_f1": r.size_f1 }),
        "color" => json!({ "color_f1": r.color_f1 }),
        "shape" => json!({ "shape_f1": r.shape_f1 }),
        "position" => json!({ "pos_coarse": r.pos_coarse, "pos_fine": r.pos_fine }),
        other => return Err(CliError::Usage(format!("bad --property {other:?}"))),
    };
    if let (Value::Object(o), Value::Object(c)) = (&mut out, counts) {
        o.extend(c);
    }
    emit(&out)?;
    if s.assert && !(r.color_f1 >= PROBE_MIN_COLOR_F1 && r.pos_coarse >= PROBE_MIN_POS_COARSE) {
        return Err(CliError::Assert(format!(
            "color F1 {:.3} (need {PROBE_MIN_COLOR_F1}), pos@0.15 {:.3} (need {PROBE_MIN_POS_COARSE})",
            r.color_f1, r.pos_coarse
        )));
    }
    Ok(())
}

pub fn retrieve_cmd(s: settings::Retrieve) -> Result<()> {
    announce("retrieve", &s);
    let (model, _) = load_model(required(&s.ckpt, "ckpt")?)?;
    let size = model.config().image_size;
    let metric: RetrievalMetric = parse_mode(&s.metric, "metric")?;
    let ds = s.data.as_deref().map(load_dataset).transpose()?;
    let aug = match &ds {
        Some(ds) => aug_for(ds, size),
        None => AugConfig { image_size: size, ..AugConfig::default() },
    };
    let mut names: Vec<String> = Vec::new();
    let mut candidates: Vec<Image> = Vec::new();
    if let Some(ds) = &ds {
        for (i, sc) in scene_range(ds, s.offset, s.count)?.iter().enumerate() {
            names.push(format!("scene:{}", s.offset + i));
            candidates.push(reference_view(&sc.image, &aug)?);
        }
    }
    for p in &s.candidates {
        names.push(p.display().to_string());
        candidates.push(read_png_sized(p, size)?);
    }
    let (query, default_target) = match (&s.query, s.query_index) {
        (Some(p), None) => (read_png_sized(p, size)?, None),
        (None, Some(i)) => {
            let ds = ds.as_ref().ok_or_else(|| CliError::Usage("--query-index needs --data".into()))?;
            let sc = ds.scenes.get(i).ok_or_else(|| CliError::Usage(format!("--query-index {i} out of range")))?;
            (reference_view(&sc.image, &aug)?, sc.objects.first().map(|o| o.position))
        }
        _ => return Err(CliError::Usage("give exactly one of --query and --query-index".into())),
    };
    let target = match &s.target {
        Some(t) => parse_point(t)?,
        None => default_target.ok_or_else(|| CliError::Usage("--target is required".into()))?,
    };
    let r = retrieve(&model, &query, target, &candidates, metric, &infer_cfg(&aug, s.noise_seed))?;
    let hits: Vec<Value> = r
        .hits
        .iter()
        .take(s.top)
        .map(|h| json!({ "candidate": names[h.candidate], "score": h.score, "slot": h.slot }))
        .collect();
    emit(&json!({ "metric": r.metric, "query_slot": r.query_slot, "target": target, "hits": hits }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeSpec {
    sources: Vec<SourceSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceSpec {
    image: PathBuf,
    /// Absent means every slot of the image.
    #[serde(default)]
    objects: Option<Vec<ComposeObject>>,
}

pub fn compose_cmd(s: settings::Compose) -> Result<()> {
    announce("compose", &s);
    let (model, _) = load_model(required(&s.ckpt, "ckpt")?)?;
    let spec_path = required(&s.spec, "spec")?;
    let out = required(&s.out, "out")?;
    let text = std::fs::read_to_string(spec_path).map_err(|e| CliError::io(spec_path, e))?;
    let spec: ComposeSpec = serde_json::from_str(&text)?;
    let dir = spec_path.parent().unwrap_or(Path::new("."));
    let size = model.config().image_size;
    let sources = spec
        .sources
        .into_iter()
        .map(|src| {
            let image = read_png_sized(dir.join(&src.image), size)?;
            let selection = src.objects.map_or(Selection::All, Selection::Objects);
            Ok(ComposeSource { image, selection })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = InferenceConfig { noise_seed: s.noise_seed, ..InferenceConfig::default() };
    let c = compose(&model, &sources, &cfg)?;
    write_png(out, &c.decode.image())?;
    emit(&json!({ "out": out, "slots": c.origin.len(), "origin": c.origin, "positions": c.decode.positions()? }))
}

pub fn verify(s: settings::Verify) -> Result<()> {
    announce("verify-decomposition", &s);
    let mode: MaskMode = parse_mode(&s.mode, "mode")?;
    let (img, dec, fixture) = match s.fixture.as_deref() {
        Some("disjoint") => {
            let (i, d) = disjoint_fixture();
            (i, d, Some("disjoint"))
        }
        Some("overlap") => {
            let (i, d) = overlap_fixture();
            (i, d, Some("overlap"))
        }
        Some(other) => return Err(CliError::Usage(format!("bad --fixture {other:?}"))),
        None => {
            let (model, _) = load_model(required(&s.ckpt, "ckpt")?)?;
            let ds = load_dataset(required(&s.data, "data")?)?;
            let sc =
                ds.scenes.get(s.index).ok_or_else(|| CliError::Usage(format!("--index {} out of range", s.index)))?;
            let aug = aug_for(&ds, model.config().image_size);
            let view = reference_view(&sc.image, &aug)?;
            let b = bind(&model, &view, &infer_cfg(&aug, s.noise_seed))?;
            (view, b.decode, None)
        }
    };
    let d = verify_decomposition(&img, &dec, mode)?;
    emit(&json!({
        "fixture": fixture,
        "mode": mode,
        "lhs": d.lhs,
        "rhs": d.rhs,
        "cross_term": d.cross_term,
        "relative_gap": d.relative_gap(),
        "alpha_residual": d.alpha_residual,
    }))?;
    if s.assert {
        let ok = match fixture {
            Some("disjoint") => d.relative_gap() <= 1e-6,
            Some(_) => d.cross_term != 0.0,
            None => true,
        } && d.alpha_residual <= 1e-5;
        if !ok {
            return Err(CliError::Assert(format!("decomposition check failed: {d:?}")));
        }
    }
    Ok(())
}

pub fn export(s: settings::Export) -> Result<()> {
    announce("export-png", &s);
    let ds = load_dataset(required(&s.data, "data")?)?;
    let dir = required(&s.out, "out")?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let sc = ds.scenes.get(s.index).ok_or_else(|| CliError::Usage(format!("--index {} out of range", s.index)))?;
    let model = s.ckpt.as_deref().map(load_model).transpose()?.map(|(m, _)| m);
    let size = model.as_ref().map_or(s.image_size, |m| m.config().image_size);
    let aug = aug_for(&ds, size);
    let view = reference_view(&sc.image, &aug)?;
    let mut written = vec![dir.join("scene.png"), dir.join("view.png")];
    write_png(&written[0], &sc.image)?;
    write_png(&written[1], &view)?;
    if let Some(model) = &model {
        let b = bind(model, &view, &infer_cfg(&aug, s.noise_seed))?;
        let p = dir.join("render.png");
        write_png(&p, &b.decode.image())?;
        written.push(p);
        for k in 0..b.decode.num_slots() {
            for (name, img) in [("alpha", b.decode.alpha_image(k)), ("object", b.decode.object_image(k))] {
                let p = dir.join(format!("{name}_{k}.png"));
                write_png(&p, &img)?;
                written.push(p);
            }
        }
    }
    emit(&json!({ "written": written }))
}

pub fn serve(s: settings::Serve) -> Result<()> {
    announce("serve", &s);
    let (model, _) = load_model(required(&s.ckpt, "ckpt")?)?;
    let cfg = InferenceConfig { noise_seed: s.noise_seed, ..InferenceConfig::default() };
    let app = crate::server::router(Arc::new(slotaug::inference::SessionManager::new(Arc::new(model), cfg)));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("<runtime>", e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&s.addr).await.map_err(|e| CliError::io(&s.addr, e))?;
        let addr = listener.local_addr().map_err(|e| CliError::io(&s.addr, e))?;
        emit(&json!({ "listening": addr.to_string() }))?;
        axum::serve(listener, app).await.map_err(|e| CliError::io(&s.addr, e))
    })
}
