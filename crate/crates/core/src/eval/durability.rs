//! Repeated round-trip manipulation of one slot, measuring how far the slot
//! and its predicted position wander from where they started.

use serde::{Deserialize, Serialize};

use crate::augment::{reference_view, AugConfig, Instruction, InstructionSet};
use crate::error::{Error, Result};
use crate::inference::{bind, select_slots, InferenceConfig, CENTER};
use crate::model::{Model, SlotSet};
use crate::par;
use crate::sprites::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurabilityMode {
    Single,
    Multi,
}

/// Drift after a round trip, against the untouched slot.
///
/// Slot drift is reported both as a squared L2 distance summed over slot
/// dimensions and as its per-dimension mean. Position drift is the
/// Euclidean distance between predicted centers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundDrift {
    pub round: usize,
    pub slot_sq: f64,
    pub slot_mse: f64,
    pub position: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurabilityReport {
    pub mode: DurabilityMode,
    pub slot: usize,
    /// Entry 0 is the starting state, always zero.
    pub rounds: Vec<RoundDrift>,
}

impl DurabilityReport {
    pub fn last(&self) -> RoundDrift {
        *self.rounds.last().expect("round 0 is always present")
    }

    pub fn mean_slot_mse(&self) -> f64 {
        mean(self.rounds.iter().skip(1).map(|r| r.slot_mse))
    }

    pub fn mean_position(&self) -> f64 {
        mean(self.rounds.iter().skip(1).map(|r| r.position))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

struct Runner<'a> {
    model: &'a Model,
    slot: usize,
    slots: SlotSet,
}

impl Runner<'_> {
    fn position(&self) -> Result<[f64; 2]> {
        let d = self.model.render(&self.slots)?;
        let p = d.positions()?;
        Ok(p[self.slot])
    }

    /// Apply one instruction to the tracked slot. Scale edits get the
    /// translation that keeps the slot's current center fixed.
    fn apply(&mut self, inst: &Instruction) -> Result<()> {
        let row = if inst.scale() == 1.0 {
            *inst
        } else {
            let p = self.position()?;
            let s = inst.scale();
            inst.with_translation(inst.dx + (s - 1.0) * (p[0] - CENTER[0]), inst.dy + (s - 1.0) * (p[1] - CENTER[1]))
        };
        let set = InstructionSet::single(self.slots.num_slots(), self.slot, row);
        self.slots = self.model.manipulate(&self.slots, &set)?;
        Ok(())
    }
}

fn run(
    model: &Model,
    slots: &SlotSet,
    slot: usize,
    forward: &[Instruction],
    rounds: usize,
    mode: DurabilityMode,
) -> Result<DurabilityReport> {
    if slot >= slots.num_slots() {
        return Err(Error::InvalidTarget(format!("slot {slot} out of range")));
    }
    for i in forward {
        i.validate()?;
    }
    let mut r = Runner { model, slot, slots: slots.clone() };
    let p0 = r.position()?;
    let s0 = slots.row(slot).to_vec();
    let backward: Vec<Instruction> = forward.iter().rev().map(Instruction::invert).collect();
    let mut out = vec![RoundDrift::default()];
    for round in 1..=rounds {
        for i in forward.iter().chain(&backward) {
            r.apply(i)?;
        }
        let sq: f64 = r.slots.row(slot).iter().zip(&s0).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        let p = r.position()?;
        out.push(RoundDrift {
            round,
            slot_sq: sq,
            slot_mse: sq / s0.len() as f64,
            position: ((p[0] - p0[0]).powi(2) + (p[1] - p0[1]).powi(2)).sqrt(),
        });
    }
    Ok(DurabilityReport { mode, slot, rounds: out })
}

/// `rounds` round trips of `inst` followed by its inverse.
pub fn durability_single(
    model: &Model,
    slots: &SlotSet,
    slot: usize,
    inst: Instruction,
    rounds: usize,
) -> Result<DurabilityReport> {
    run(model, slots, slot, &[inst], rounds, DurabilityMode::Single)
}

/// `rounds` round trips of a sequence followed by its inverses in reverse order.
pub fn durability_multi(
    model: &Model,
    slots: &SlotSet,
    slot: usize,
    sequence: &[Instruction],
    rounds: usize,
) -> Result<DurabilityReport> {
    run(model, slots, slot, sequence, rounds, DurabilityMode::Multi)
}

/// Move down by a tenth of the image.
pub fn default_single_instruction() -> Instruction {
    Instruction::translate(0.0, 0.1)
}

/// Move down, then recolor.
pub fn default_multi_sequence() -> Vec<Instruction> {
    vec![Instruction::translate(0.0, 0.1), Instruction::color(120.0, 1.0, 1.0)]
}

/// Per-round drift averaged over scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurabilitySummary {
    pub mode: DurabilityMode,
    pub scenes: usize,
    pub rounds: Vec<RoundDrift>,
}

impl DurabilitySummary {
    pub fn last(&self) -> RoundDrift {
        *self.rounds.last().expect("round 0 is always present")
    }
}

/// Run the protocol on the slot bound to the first object of every scene.
/// `rounds == 0` picks 8 for single and 4 for multi.
pub fn durability_on_scenes(
    model: &Model,
    scenes: &[Scene],
    aug: &AugConfig,
    cfg: &InferenceConfig,
    mode: DurabilityMode,
    rounds: usize,
) -> Result<DurabilitySummary> {
    if scenes.is_empty() {
        return Err(Error::Empty("no scenes for the durability test".into()));
    }
    let rounds = match (rounds, mode) {
        (0, DurabilityMode::Single) => 8,
        (0, DurabilityMode::Multi) => 4,
        (r, _) => r,
    };
    let reports = par::map_range(scenes.len(), |i| -> Result<DurabilityReport> {
        let s = &scenes[i];
        let b = bind(model, &reference_view(&s.image, aug)?, cfg)?;
        let target = s.objects.first().ok_or_else(|| Error::Empty(format!("scene {i} has no objects")))?;
        let slot = select_slots(&b.positions()?, &[target.position])?[0];
        match mode {
            DurabilityMode::Single => durability_single(model, &b.slots, slot, default_single_instruction(), rounds),
            DurabilityMode::Multi => durability_multi(model, &b.slots, slot, &default_multi_sequence(), rounds),
        }
    });
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let rows = (0..=rounds)
        .map(|r| {
            let sum = |f: fn(&RoundDrift) -> f64| reports.iter().map(|d| f(&d.rounds[r])).sum::<f64>() / n;
            RoundDrift {
                round: r,
                slot_sq: sum(|d| d.slot_sq),
                slot_mse: sum(|d| d.slot_mse),
                position: sum(|d| d.position),
            }
        })
        .collect();
    Ok(DurabilitySummary { mode, scenes: reports.len(), rounds: rows })
}
