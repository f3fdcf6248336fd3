use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use super::{bind, calibrated, check_target, select_slots, Bound, InferenceConfig};
use crate::augment::{Instruction, InstructionSet};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{AttnMaps, DecodeResult, Model, SlotSet};

/// Click position plus the edit to apply to the object under it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulationRequest {
    pub target: [f64; 2],
    pub instruction: Instruction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogKind {
    Apply,
    Revert,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub kind: LogKind,
    pub slot: usize,
    /// As requested.
    pub instruction: Instruction,
    /// Row actually fed to the manipulator, after scale calibration.
    pub applied: Instruction,
}

/// What clients see after every operation.
#[derive(Clone, Debug)]
pub struct SessionView {
    pub slot_index: Option<usize>,
    pub render: Image,
    pub positions: Vec<[f64; 2]>,
}

#[derive(Clone, Debug)]
struct State {
    slots: SlotSet,
    decode: DecodeResult,
}

/// Stateful manipulation of one bound image.
///
/// Every apply or revert pushes the previous state; undo pops it back, so
/// apply followed by undo restores the earlier render bit for bit.
#[derive(Debug)]
pub struct Session {
    id: String,
    model: Arc<Model>,
    cfg: InferenceConfig,
    attn: AttnMaps,
    current: State,
    snapshots: Vec<State>,
    log: Vec<LogEntry>,
}

impl Session {
    pub fn open(id: impl Into<String>, model: Arc<Model>, img: &Image, cfg: InferenceConfig) -> Result<Self> {
        let Bound { slots, attn, decode } = bind(&model, img, &cfg)?;
        Ok(Self {
            id: id.into(),
            model,
            cfg,
            attn,
            current: State { slots, decode },
            snapshots: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.cfg
    }

    pub fn slots(&self) -> &SlotSet {
        &self.current.slots
    }

    pub fn decode(&self) -> &DecodeResult {
        &self.current.decode
    }

    /// Binding attention of the original image.
    pub fn attention(&self) -> &AttnMaps {
        &self.attn
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn depth(&self) -> usize {
        self.snapshots.len()
    }

    pub fn render(&self) -> Image {
        self.current.decode.image()
    }

    pub fn positions(&self) -> Result<Vec<[f64; 2]>> {
        self.current.decode.positions()
    }

    /// Alpha map of slot `k` as a grey image.
    pub fn alpha_image(&self, k: usize) -> Result<Image> {
        let n = self.current.decode.num_slots();
        if k >= n {
            return Err(Error::InvalidTarget(format!("slot {k} out of range (0..{n})")));
        }
        Ok(self.current.decode.alpha_image(k))
    }

    fn view(&self, slot_index: Option<usize>) -> Result<SessionView> {
        Ok(SessionView { slot_index, render: self.render(), positions: self.positions()? })
    }

    fn push(
        &mut self,
        kind: LogKind,
        slot: usize,
        instruction: Instruction,
        position: [f64; 2],
    ) -> Result<SessionView> {
        let applied = calibrated(&instruction, position);
        let k = self.current.slots.num_slots();
        let mut rows = vec![Instruction::default(); k];
        rows[slot] = applied;
        let slots = self.model.manipulate(&self.current.slots, &InstructionSet { rows })?;
        let decode = self.model.render(&slots)?;
        let prev = std::mem::replace(&mut self.current, State { slots, decode });
        self.snapshots.push(prev);
        self.log.push(LogEntry { kind, slot, instruction, applied });
        self.view(Some(slot))
    }

    pub fn apply(&mut self, req: &ManipulationRequest) -> Result<SessionView> {
        check_target(req.target)?;
        req.instruction.validate()?;
        let positions = self.positions()?;
        let slot = select_slots(&positions, &[req.target])?[0];
        self.push(LogKind::Apply, slot, req.instruction, positions[slot])
    }

    /// Send the inverse of the last logged instruction through the model.
    /// The row is inverted after calibration, so it is used as is.
    pub fn revert(&mut self) -> Result<SessionView> {
        let last = *self.log.last().ok_or_else(|| Error::Empty("nothing to revert".into()))?;
        let inv = last.applied.invert();
        let k = self.current.slots.num_slots();
        let mut rows = vec![Instruction::default(); k];
        rows[last.slot] = inv;
        let slots = self.model.manipulate(&self.current.slots, &InstructionSet { rows })?;
        let decode = self.model.render(&slots)?;
        let prev = std::mem::replace(&mut self.current, State { slots, decode });
        self.snapshots.push(prev);
        self.log.push(LogEntry { kind: LogKind::Revert, slot: last.slot, instruction: inv, applied: inv });
        self.view(Some(last.slot))
    }

    pub fn undo(&mut self) -> Result<SessionView> {
        let prev = self.snapshots.pop().ok_or_else(|| Error::Empty("nothing to undo".into()))?;
        let entry = self.log.pop();
        self.current = prev;
        self.view(entry.map(|e| e.slot))
    }
}

/// Live sessions keyed by id. Each session has its own lock, so requests
/// against one session are serialized while different sessions proceed
/// independently.
#[derive(Debug)]
pub struct SessionManager {
    model: Arc<Model>,
    cfg: InferenceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionManager {
    pub fn new(model: Arc<Model>, cfg: InferenceConfig) -> Self {
        Self { model, cfg, sessions: Mutex::new(HashMap::new()) }
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    fn table(&self) -> MutexGuard<'_, HashMap<String, Arc<Mutex<Session>>>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Bind `img` and register a new session; returns its id.
    pub fn open(&self, img: &Image) -> Result<String> {
        let mut id = format!("{:016x}", rand::random::<u64>());
        while self.table().contains_key(&id) {
            id = format!("{:016x}", rand::random::<u64>());
        }
        let session = Session::open(id.clone(), self.model.clone(), img, self.cfg.clone())?;
        self.table().insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.table().get(id).cloned().ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    /// Run `f` with exclusive access to one session.
    pub fn with<R>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<R>) -> Result<R> {
        let s = self.get(id)?;
        let mut guard = s.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }

    pub fn close(&self, id: &str) -> Result<()> {
        self.table().remove(id).map(|_| ()).ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.table().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
