//! Slot selection, interactive sessions, neutralization, retrieval and
//! composition on a frozen model.

mod hungarian;
mod session;

use serde::{Deserialize, Serialize};

pub use hungarian::{assign_rows, assignment_cost, hungarian};
pub use session::{LogEntry, LogKind, ManipulationRequest, Session, SessionManager, SessionView};

use crate::augment::{calibrate_scale, AugConfig, Instruction, InstructionSet};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{AttnMaps, DecodeResult, Model, SlotSet};
use crate::par;

/// Image center in normalized coordinates.
pub const CENTER: [f64; 2] = [0.5, 0.5];

/// Settings shared by the inference operations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Seed of the slot-initialization noise used for every binding.
    pub noise_seed: u64,
    /// Target alpha-mass fraction for neutralization.
    pub ref_area: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self::from_aug(&AugConfig::default())
    }
}

impl InferenceConfig {
    pub fn from_aug(aug: &AugConfig) -> Self {
        Self { noise_seed: 0, ref_area: 0.05, s_min: aug.s_min(), s_max: aug.s_max() }
    }
}

/// Bound and rendered state of one image.
#[derive(Clone, Debug)]
pub struct Bound {
    pub slots: SlotSet,
    pub attn: AttnMaps,
    pub decode: DecodeResult,
}

impl Bound {
    pub fn positions(&self) -> Result<Vec<[f64; 2]>> {
        self.decode.positions()
    }
}

pub fn bind(model: &Model, img: &Image, cfg: &InferenceConfig) -> Result<Bound> {
    let (slots, attn) = model.bind_image(img, cfg.noise_seed)?;
    let decode = model.render(&slots)?;
    Ok(Bound { slots, attn, decode })
}

fn check_target(t: [f64; 2]) -> Result<()> {
    if !(0.0..=1.0).contains(&t[0]) || !(0.0..=1.0).contains(&t[1]) {
        return Err(Error::InvalidTarget(format!("({}, {}) is outside [0, 1]^2", t[0], t[1])));
    }
    Ok(())
}

/// Assign each target to a distinct slot minimizing total squared distance.
pub fn select_slots(positions: &[[f64; 2]], targets: &[[f64; 2]]) -> Result<Vec<usize>> {
    for &t in targets {
        check_target(t)?;
    }
    if positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("slot positions".into()));
    }
    let (m, k) = (targets.len(), positions.len());
    if m > k {
        return Err(Error::InvalidTarget(format!("{m} targets but only {k} slots")));
    }
    let cost: Vec<f64> = targets
        .iter()
        .flat_map(|t| positions.iter().map(move |p| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)))
        .collect();
    assign_rows(&cost, m, k)
}

/// Instruction that moves a slot at `position` to the center and rescales
/// its alpha area towards `cfg.ref_area`.
pub fn neutral_instruction(position: [f64; 2], area: f64, cfg: &InferenceConfig) -> Result<Instruction> {
    if !(area > 0.0) {
        return Err(Error::Empty("slot has zero alpha mass".into()));
    }
    let s = (cfg.ref_area / area).sqrt().clamp(cfg.s_min, cfg.s_max);
    Ok(Instruction::new(s, CENTER[0] - position[0], CENTER[1] - position[1], 0.0, 1.0, 1.0))
}

pub fn neutral_instructions(positions: &[[f64; 2]], areas: &[f64], cfg: &InferenceConfig) -> Result<InstructionSet> {
    let rows = positions
        .iter()
        .zip(areas)
        .enumerate()
        .map(|(k, (&p, &a))| neutral_instruction(p, a, cfg).map_err(|_| Error::DegenerateSlot(k)))
        .collect::<Result<_>>()?;
    Ok(InstructionSet { rows })
}

/// Move every slot to the center at a common size.
pub fn neutralize(model: &Model, bound: &Bound, cfg: &InferenceConfig) -> Result<SlotSet> {
    let insts = neutral_instructions(&bound.positions()?, &bound.decode.areas(), cfg)?;
    model.manipulate(&bound.slots, &insts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMetric {
    SlotMse,
    PixelMse,
    Cosine,
}

impl RetrievalMetric {
    pub fn higher_is_better(self) -> bool {
        self == Self::Cosine
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub candidate: usize,
    pub score: f64,
    pub slot: usize,
}

/// Candidates ranked best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub metric: RetrievalMetric,
    pub query_slot: usize,
    pub hits: Vec<RetrievalHit>,
}

impl RetrievalResult {
    /// 1-based rank of a candidate.
    pub fn rank_of(&self, candidate: usize) -> Option<usize> {
        self.hits.iter().position(|h| h.candidate == candidate).map(|r| r + 1)
    }
}

struct Neutral {
    slots: SlotSet,
    objects: Vec<Vec<f32>>,
}

fn neutral_view(
    model: &Model,
    img: &Image,
    cfg: &InferenceConfig,
    metric: RetrievalMetric,
) -> Result<(Bound, Neutral)> {
    let b = bind(model, img, cfg)?;
    let slots = neutralize(model, &b, cfg)?;
    let objects = if metric == RetrievalMetric::PixelMse {
        let d = model.render(&slots)?;
        (0..d.num_slots()).map(|k| d.object_image(k).data().to_vec()).collect()
    } else {
        Vec::new()
    };
    Ok((b, Neutral { slots, objects }))
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Rank candidate images by how well their best slot matches the query object.
pub fn retrieve(
    model: &Model,
    query: &Image,
    target: [f64; 2],
    candidates: &[Image],
    metric: RetrievalMetric,
    cfg: &InferenceConfig,
) -> Result<RetrievalResult> {
    check_target(target)?;
    if candidates.is_empty() {
        return Err(Error::Empty("no retrieval candidates".into()));
    }
    let (qb, qn) = neutral_view(model, query, cfg, metric)?;
    let qk = select_slots(&qb.positions()?, &[target])?[0];
    let score = |n: &Neutral, k: usize| match metric {
        RetrievalMetric::SlotMse => mse(qn.slots.row(qk), n.slots.row(k)),
        RetrievalMetric::Cosine => cosine(qn.slots.row(qk), n.slots.row(k)),
        RetrievalMetric::PixelMse => mse(&qn.objects[qk], &n.objects[k]),
    };
    let better = |a: f64, b: f64| if metric.higher_is_better() { a > b } else { a < b };
    let hits = par::map_range(candidates.len(), |c| -> Result<RetrievalHit> {
        let (_, n) = neutral_view(model, &candidates[c], cfg, metric)?;
        let mut best = RetrievalHit { candidate: c, score: score(&n, 0), slot: 0 };
        for k in 1..n.slots.num_slots() {
            let s = score(&n, k);
            if better(s, best.score) {
                best = RetrievalHit { candidate: c, score: s, slot: k };
            }
        }
        Ok(best)
    });
    let mut hits = hits.into_iter().collect::<Result<Vec<_>>>()?;
    hits.sort_by(|a, b| {
        let ord = a.score.total_cmp(&b.score);
        let ord = if metric.higher_is_better() { ord.reverse() } else { ord };
        ord.then(a.candidate.cmp(&b.candidate))
    });
    Ok(RetrievalResult { metric, query_slot: qk, hits })
}

/// One object picked from a source image, with edits applied in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposeObject {
    pub target: [f64; 2],
    #[serde(default)]
    pub edits: Vec<Instruction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Every slot of the source, unedited.
    All,
    Objects(Vec<ComposeObject>),
}

#[derive(Clone, Debug)]
pub struct ComposeSource {
    pub image: Image,
    pub selection: Selection,
}

#[derive(Clone, Debug)]
pub struct Composition {
    pub slots: SlotSet,
    pub decode: DecodeResult,
    /// `(source, slot)` for every gathered slot, in decode order.
    pub origin: Vec<(usize, usize)>,
}

/// Apply `edits` to a single slot. Scale rows are calibrated at the slot's
/// position, as during training.
fn edit_slot(model: &Model, slot: SlotSet, position: [f64; 2], edits: &[Instruction]) -> Result<SlotSet> {
    let mut s = slot;
    for e in edits {
        let row = calibrated(e, position);
        s = model.manipulate(&s, &InstructionSet { rows: vec![row] })?;
    }
    Ok(s)
}

pub(crate) fn calibrated(inst: &Instruction, position: [f64; 2]) -> Instruction {
    if inst.scale() == 1.0 {
        return *inst;
    }
    calibrate_scale(inst, &[position], CENTER).rows[0]
}

/// Gather slots from several images, edit them, decode them jointly.
/// Pixels are encoded once per source; the rest happens in slot space.
pub fn compose(model: &Model, sources: &[ComposeSource], cfg: &InferenceConfig) -> Result<Composition> {
    if sources.is_empty() {
        return Err(Error::Empty("no composition sources".into()));
    }
    let mut parts = Vec::new();
    let mut origin = Vec::new();
    for (si, src) in sources.iter().enumerate() {
        let b = bind(model, &src.image, cfg)?;
        match &src.selection {
            Selection::All => {
                for k in 0..b.slots.num_slots() {
                    origin.push((si, k));
                }
                parts.push(b.slots.clone());
            }
            Selection::Objects(objs) => {
                let positions = b.positions()?;
                let targets: Vec<[f64; 2]> = objs.iter().map(|o| o.target).collect();
                let picked = select_slots(&positions, &targets)?;
                let mut order: Vec<usize> = (0..objs.len()).collect();
                order.sort_by_key(|&i| picked[i]);
                for i in order {
                    let k = picked[i];
                    let one = b.slots.select(&[k]);
                    let edited = if objs[i].edits.is_empty() {
                        one
                    } else {
                        edit_slot(model, one, positions[k], &objs[i].edits)?
                    };
                    origin.push((si, k));
                    parts.push(edited);
                }
            }
        }
    }
    if origin.is_empty() {
        return Err(Error::Empty("no objects selected".into()));
    }
    let slots = SlotSet::concat(&parts);
    let decode = model.render(&slots)?;
    Ok(Composition { slots, decode, origin })
}
