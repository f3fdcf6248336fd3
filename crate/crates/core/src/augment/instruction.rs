use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalar values in an instruction row.
pub const INSTRUCTION_LEN: usize = 6;

/// Column ranges of the three manipulable properties inside an encoded
/// instruction row: scale, translation, color.
pub const PROPERTY_RANGES: [(usize, usize); 3] = [(0, 1), (1, 3), (3, 6)];

/// A single manipulation command.
///
/// Translations are in crop-normalized units (pixels divided by the crop
/// size), x rightward and y downward. Hue is in degrees.
///
/// Multiplicative factors (scale, saturation, lightness) are held as natural
/// logs so that inversion is plain negation and therefore an exact
/// involution in floating point; a reciprocal `1 / (1 / x)` does not
/// round-trip for a sizeable fraction of doubles. The JSON encoding uses
/// the plain factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstructionJson", into = "InstructionJson")]
pub struct Instruction {
    log_scale: f64,
    pub dx: f64,
    pub dy: f64,
    pub dhue: f64,
    log_sat: f64,
    log_light: f64,
}

/// Wire form: `{"scale":1.0,"dx":0.0,"dy":0.0,"dhue":0.0,"sat":1.0,"light":1.0}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstructionJson {
    scale: f64,
    dx: f64,
    dy: f64,
    dhue: f64,
    sat: f64,
    light: f64,
}

impl TryFrom<InstructionJson> for Instruction {
    type Error = Error;

    fn try_from(j: InstructionJson) -> Result<Self> {
        let inst = Instruction::new(j.scale, j.dx, j.dy, j.dhue, j.sat, j.light);
        for (name, x) in [("scale", j.scale), ("sat", j.sat), ("light", j.light)] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::InvalidInstruction(format!("{name} must be finite and > 0, got {x}")));
            }
        }
        inst.validate()?;
        Ok(inst)
    }
}

impl From<Instruction> for InstructionJson {
    fn from(i: Instruction) -> Self {
        Self { scale: i.scale(), dx: i.dx, dy: i.dy, dhue: i.dhue, sat: i.sat(), light: i.light() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugKind {
    Translate,
    Scale,
    Color,
}

impl Default for Instruction {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Instruction {
    pub const IDENTITY: Self = Self { log_scale: 0.0, dx: 0.0, dy: 0.0, dhue: 0.0, log_sat: 0.0, log_light: 0.0 };

    /// Multiplicative factors must be positive; see [`Instruction::validate`].
    pub fn new(scale: f64, dx: f64, dy: f64, dhue: f64, sat: f64, light: f64) -> Self {
        Self { log_scale: scale.ln(), dx, dy, dhue, log_sat: sat.ln(), log_light: light.ln() }
    }

    pub fn translate(dx: f64, dy: f64) -> Self {
        Self { dx, dy, ..Self::IDENTITY }
    }

    pub fn scaling(scale: f64) -> Self {
        Self { log_scale: scale.ln(), ..Self::IDENTITY }
    }

    pub fn color(dhue: f64, sat: f64, light: f64) -> Self {
        Self { dhue, log_sat: sat.ln(), log_light: light.ln(), ..Self::IDENTITY }
    }

    pub fn with_translation(mut self, dx: f64, dy: f64) -> Self {
        self.dx = dx;
        self.dy = dy;
        self
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn sat(&self) -> f64 {
        self.log_sat.exp()
    }

    pub fn light(&self) -> f64 {
        self.log_light.exp()
    }

    /// `[scale, dx, dy, dhue, sat, light]`.
    pub fn to_array(self) -> [f64; INSTRUCTION_LEN] {
        [self.scale(), self.dx, self.dy, self.dhue, self.sat(), self.light()]
    }

    pub fn from_array(v: [f64; INSTRUCTION_LEN]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// All fields finite (which also rules out non-positive factors).
    pub fn validate(&self) -> Result<()> {
        let names = ["scale", "dx", "dy", "dhue", "sat", "light"];
        let raw = [self.log_scale, self.dx, self.dy, self.dhue, self.log_sat, self.log_light];
        if let Some(i) = raw.iter().position(|x| !x.is_finite()) {
            let what = if [0, 4, 5].contains(&i) { "finite and > 0" } else { "finite" };
            return Err(Error::InvalidInstruction(format!("{} must be {what}", names[i])));
        }
        Ok(())
    }

    /// Negate additive fields, reciprocate multiplicative ones.
    pub fn invert(&self) -> Self {
        Self {
            log_scale: -self.log_scale,
            dx: -self.dx,
            dy: -self.dy,
            dhue: -self.dhue,
            log_sat: -self.log_sat,
            log_light: -self.log_light,
        }
    }

    /// Encoder-facing representation: logs of multiplicative factors, hue
    /// over 180 degrees. The identity maps to the zero vector.
    pub fn normalized(&self) -> [f64; INSTRUCTION_LEN] {
        [self.log_scale, self.dx, self.dy, self.dhue / 180.0, self.log_sat, self.log_light]
    }
}

/// Per-slot instruction matrix (`K x 6`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub rows: Vec<Instruction>,
}

impl InstructionSet {
    pub fn identity(k: usize) -> Self {
        Self::uniform(Instruction::IDENTITY, k)
    }

    pub fn uniform(inst: Instruction, k: usize) -> Self {
        Self { rows: vec![inst; k] }
    }

    /// Identity everywhere except `slot`.
    pub fn single(k: usize, slot: usize, inst: Instruction) -> Self {
        let mut s = Self::identity(k);
        s.rows[slot] = inst;
        s
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn invert(&self) -> Self {
        Self { rows: self.rows.iter().map(Instruction::invert).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        self.rows.iter().try_for_each(Instruction::validate)
    }

    /// Row-major `K x 6` buffer of normalized values.
    pub fn normalized(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.normalized()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_fixed_point() {
        assert_eq!(Instruction::IDENTITY.invert(), Instruction::IDENTITY);
        assert_eq!(Instruction::IDENTITY.normalized(), [0.0; 6]);
    }

    #[test]
    fn invert_example() {
        let i = Instruction::from_array([2.0, 0.1, -0.05, 90.0, 1.5, 1.0]);
        let inv = i.invert().to_array();
        let want = [0.5, -0.1, 0.05, -90.0, 2.0 / 3.0, 1.0];
        for (a, b) in inv.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15, "{inv:?}");
        }
    }

    #[test]
    fn scale_e_normalizes_to_one() {
        let n = Instruction::scaling(std::f64::consts::E).normalized();
        assert!((n[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_shape_is_flat_and_strict() {
        let s = serde_json::to_string(&Instruction::IDENTITY).unwrap();
        assert_eq!(s, r#"{"scale":1.0,"dx":0.0,"dy":0.0,"dhue":0.0,"sat":1.0,"light":1.0}"#);
        assert!(serde_json::from_str::<Instruction>(r#"{"scale":1.0}"#).is_err());
        assert!(
            serde_json::from_str::<Instruction>(r#"{"scale":-1,"dx":0,"dy":0,"dhue":0,"sat":1,"light":1}"#).is_err()
        );
        let back: Instruction =
            serde_json::from_str(r#"{"scale":1,"dx":0.1,"dy":0,"dhue":0,"sat":1,"light":1}"#).unwrap();
        assert_eq!(back, Instruction::translate(0.1, 0.0));
        assert!(serde_json::from_str::<Instruction>(
            r#"{"scale":1,"dx":0,"dy":0,"dhue":0,"sat":1,"light":1,"extra":2}"#
        )
        .is_err());
    }

    #[test]
    fn validation_rejects_bad_fields() {
        assert!(Instruction::scaling(0.0).validate().is_err());
        assert!(Instruction::translate(f64::NAN, 0.0).validate().is_err());
        assert!(Instruction::color(10.0, 1.2, 1.0).validate().is_ok());
    }

    fn any_instruction() -> impl Strategy<Value = Instruction> {
        (1e-3f64..1e3, -10.0f64..10.0, -10.0f64..10.0, -180.0f64..180.0, 1e-3f64..1e3, 1e-3f64..1e3)
            .prop_map(|(scale, dx, dy, dhue, sat, light)| Instruction::new(scale, dx, dy, dhue, sat, light))
    }

    proptest! {
        #[test]
        fn invert_is_an_involution(i in any_instruction()) {
            prop_assert_eq!(i.invert().invert(), i);
        }

        #[test]
        fn normalization_is_odd_under_inversion(i in any_instruction()) {
            let a = i.normalized();
            let b = i.invert().normalized();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
