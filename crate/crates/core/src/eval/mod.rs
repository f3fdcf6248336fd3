//! Segmentation metrics, durability tests, property probes and the
//! reconstruction-loss decomposition check.

mod decomposition;
mod durability;
mod metrics;
mod probe;

use serde::{Deserialize, Serialize};

pub use decomposition::{disjoint_fixture, overlap_fixture, verify_decomposition, Decomposition, MaskMode};
pub use durability::{
    default_multi_sequence, default_single_instruction, durability_multi, durability_on_scenes, durability_single,
    DurabilityMode, DurabilityReport, DurabilitySummary, RoundDrift,
};
pub use metrics::{ari, fg_ari, miou, miou_masks};
pub use probe::{
    collect_probe_data, macro_f1, position_accuracy, property_probe, write_probe_csv, MlpProbe, ProbeConfig, ProbeItem,
    ProbeReport, POS_THRESHOLDS,
};

use crate::augment::{reference_view, AugConfig};
use crate::error::{Error, Result};
use crate::inference::{bind, InferenceConfig};
use crate::model::Model;
use crate::par;
use crate::sprites::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub scene: usize,
    pub miou: f64,
    pub fg_ari: f64,
    pub mse: f64,
}

/// How the segmentation metrics were computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub ari_foreground_only: bool,
    pub miou_includes_background: bool,
    pub labels_from: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self { ari_foreground_only: true, miou_includes_background: true, labels_from: "decoder-alpha".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    pub fg_ari: f64,
    pub mse: f64,
    pub scenes: Vec<SceneScore>,
    pub conventions: Conventions,
}

/// Score object discovery on the reference view of each scene. Predicted
/// segments are the per-pixel argmax of the decoder alphas.
pub fn evaluate(model: &Model, scenes: &[Scene], aug: &AugConfig, cfg: &InferenceConfig) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::Empty("no scenes to evaluate".into()));
    }
    let m = model.config().image_size;
    let scores = par::map_range(scenes.len(), |i| -> Result<SceneScore> {
        let s = &scenes[i];
        let view = reference_view(&s.image, aug)?;
        let b = bind(model, &view, cfg)?;
        let pred = b.decode.labels();
        let truth = s.label_map(aug.crop_size, m);
        let img = b.decode.image();
        let mse = img.data().iter().zip(view.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
            / view.data().len() as f64;
        Ok(SceneScore { scene: i, miou: miou(&pred, &truth)?, fg_ari: fg_ari(&pred, &truth, 0)?, mse })
    });
    let scenes = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let n = scenes.len() as f64;
    Ok(EvalReport {
        miou: scenes.iter().map(|s| s.miou).sum::<f64>() / n,
        fg_ari: scenes.iter().map(|s| s.fg_ari).sum::<f64>() / n,
        mse: scenes.iter().map(|s| s.mse).sum::<f64>() / n,
        scenes,
        conventions: Conventions::default(),
    })
}
