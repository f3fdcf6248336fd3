//! Image augmentation and the instruction algebra that describes it.
//!
//! An input canvas of side `T` (template) is transformed, center-cropped to
//! `C` and resized to `M`. The untransformed crop is the reference view; the
//! transformed crop is the augmented view. Objects are kept inside the
//! central region of the canvas so that neither view loses them.

pub mod color;
mod instruction;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub use color::{hsl_to_rgb, rgb_to_hsl, shift_color};
pub use instruction::{AugKind, Instruction, InstructionSet, INSTRUCTION_LEN, PROPERTY_RANGES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    /// Canvas side `T` in pixels.
    pub template_size: usize,
    /// Crop side `C` in pixels.
    pub crop_size: usize,
    /// Output side `M` in pixels.
    pub image_size: usize,
    /// Hue shift range in degrees.
    pub hue_range: (f64, f64),
    /// Saturation factor is `exp(u)` with `u` drawn from this range.
    pub sat_log_range: (f64, f64),
    /// Relative sampling weights for translate, scale, color.
    pub kind_weights: [f64; 3],
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            template_size: 80,
            crop_size: 64,
            image_size: 64,
            hue_range: (-180.0, 180.0),
            sat_log_range: (-1.0, 1.0),
            kind_weights: [1.0, 1.0, 1.0],
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        if self.template_size <= self.crop_size {
            return Err(Error::Config(format!(
                "template size {} must exceed crop size {}",
                self.template_size, self.crop_size
            )));
        }
        if self.image_size == 0 || self.crop_size == 0 {
            return Err(Error::Config("image and crop sizes must be positive".into()));
        }
        if self.hue_range.0 >= self.hue_range.1 || self.sat_log_range.0 >= self.sat_log_range.1 {
            return Err(Error::Config("sampling ranges must be non-empty".into()));
        }
        if self.kind_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || self.kind_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config("kind weights must be non-negative with positive sum".into()));
        }
        Ok(())
    }

    /// Maximum translation in pixels, `(T - C) / 2`.
    pub fn d_max(&self) -> f64 {
        (self.template_size - self.crop_size) as f64 / 2.0
    }

    /// Maximum translation in crop-normalized units.
    pub fn d_max_normalized(&self) -> f64 {
        self.d_max() / self.crop_size as f64
    }

    pub fn s_max(&self) -> f64 {
        self.template_size as f64 / self.crop_size as f64
    }

    pub fn s_min(&self) -> f64 {
        self.crop_size as f64 / self.template_size as f64
    }
}

/// Uniform draw from the open interval `(lo, hi)`.
fn open_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

/// Draws one augmentation kind and a matching instruction; every other
/// property stays at identity, lightness is never sampled.
pub fn sample_instruction<R: Rng + ?Sized>(rng: &mut R, cfg: &AugConfig) -> (AugKind, Instruction) {
    let kinds = [AugKind::Translate, AugKind::Scale, AugKind::Color];
    let dist = WeightedIndex::new(cfg.kind_weights).expect("validated kind weights");
    let kind = kinds[dist.sample(rng)];
    let inst = match kind {
        AugKind::Translate => {
            let d = cfg.d_max();
            let c = cfg.crop_size as f64;
            Instruction::translate(open_uniform(rng, -d, d) / c, open_uniform(rng, -d, d) / c)
        }
        AugKind::Scale => Instruction::scaling(open_uniform(rng, cfg.s_min(), cfg.s_max())),
        AugKind::Color => {
            let (lo, hi) = cfg.hue_range;
            let dhue = rng.random_range(lo..hi);
            let (slo, shi) = cfg.sat_log_range;
            let u = open_uniform(rng, slo, shi);
            Instruction::color(dhue, u.exp(), 1.0)
        }
    };
    (kind, inst)
}

/// Geometric part of `inst` applied on the canvas: scale about the canvas
/// center, then shift by `(dx, dy) * C` pixels. Pure translations sample
/// with zero padding, scaling clamps at the edges.
pub fn warp(img: &Image, inst: &Instruction, crop_size: usize) -> Image {
    let s = inst.scale();
    let (tx, ty) = (inst.dx * crop_size as f64, inst.dy * crop_size as f64);
    if s == 1.0 && tx == 0.0 && ty == 0.0 {
        return img.clone();
    }
    let (cx, cy) = (img.width() as f64 / 2.0, img.height() as f64 / 2.0);
    let mut out = Image::new(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            // continuous pixel-center coordinates
            let px = x as f64 + 0.5 - tx;
            let py = y as f64 + 0.5 - ty;
            let u = cx + (px - cx) / s - 0.5;
            let v = cy + (py - cy) / s - 0.5;
            let rgb = if s == 1.0 { img.sample_zero(u, v) } else { img.sample_clamped(u, v) };
            out.set_pixel(x, y, rgb);
        }
    }
    out
}

/// Nearest-neighbour version of [`warp`] for ground-truth masks.
pub fn warp_mask(mask: &Mask, inst: &Instruction, crop_size: usize) -> Mask {
    let s = inst.scale();
    let (tx, ty) = (inst.dx * crop_size as f64, inst.dy * crop_size as f64);
    let (cx, cy) = (mask.width as f64 / 2.0, mask.height as f64 / 2.0);
    let mut out = Mask::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let u = cx + (x as f64 + 0.5 - tx - cx) / s;
            let v = cy + (y as f64 + 0.5 - ty - cy) / s;
            if u >= 0.0 && v >= 0.0 && u < mask.width as f64 && v < mask.height as f64 {
                out.set(x, y, mask.get(u as usize, v as usize));
            }
        }
    }
    out
}

/// Full transform on the canvas: geometry, then color.
pub fn transform(img: &Image, inst: &Instruction, crop_size: usize) -> Image {
    let warped = warp(img, inst, crop_size);
    if inst.dhue == 0.0 && inst.sat() == 1.0 && inst.light() == 1.0 {
        warped
    } else {
        shift_color(&warped, inst.dhue, inst.sat(), inst.light())
    }
}

/// Center-crop to `C`, resize to `M`.
pub fn reference_view(img: &Image, cfg: &AugConfig) -> Result<Image> {
    Ok(img.center_crop(cfg.crop_size)?.resize(cfg.image_size, cfg.image_size))
}

#[derive(Clone, Debug)]
pub struct AugmentedPair {
    pub img_ref: Image,
    pub img_aug: Image,
    pub kind: AugKind,
    /// Per-slot reference-to-augmented instructions.
    pub insts_r2a: InstructionSet,
    /// Row-wise inverse of `insts_r2a`.
    pub insts_a2r: InstructionSet,
}

impl AugmentedPair {
    /// Replace scale-kind rows with per-slot calibrated rows. No-op for
    /// other kinds.
    pub fn calibrate(&mut self, positions: &[[f64; 2]]) {
        if self.kind != AugKind::Scale {
            return;
        }
        let base = self.insts_r2a.rows[0].with_translation(0.0, 0.0);
        self.insts_r2a = calibrate_scale(&base, positions, [0.5, 0.5]);
        self.insts_a2r = self.insts_r2a.invert();
    }
}

/// Build the reference/augmented views of a `T x T` canvas with a given instruction.
pub fn make_pair_with(
    img_input: &Image,
    kind: AugKind,
    inst: Instruction,
    cfg: &AugConfig,
    num_slots: usize,
) -> Result<AugmentedPair> {
    if img_input.width() != cfg.template_size || img_input.height() != cfg.template_size {
        return Err(Error::Shape(format!(
            "input is {}x{}, template size is {}",
            img_input.width(),
            img_input.height(),
            cfg.template_size
        )));
    }
    let img_ref = reference_view(img_input, cfg)?;
    let img_aug = reference_view(&transform(img_input, &inst, cfg.crop_size), cfg)?;
    let insts_r2a = InstructionSet::uniform(inst, num_slots);
    let insts_a2r = insts_r2a.invert();
    Ok(AugmentedPair { img_ref, img_aug, kind, insts_r2a, insts_a2r })
}

/// Sample an instruction and build the pair.
pub fn make_pair<R: Rng + ?Sized>(
    img_input: &Image,
    rng: &mut R,
    cfg: &AugConfig,
    num_slots: usize,
) -> Result<AugmentedPair> {
    let (kind, inst) = sample_instruction(rng, cfg);
    make_pair_with(img_input, kind, inst, cfg, num_slots)
}

/// Scaling about the image center also moves objects: row `k` gets the
/// extra translation `(s - 1) (p_k - c)`.
pub fn calibrate_scale(inst: &Instruction, positions: &[[f64; 2]], center: [f64; 2]) -> InstructionSet {
    let s = inst.scale();
    let rows = positions
        .iter()
        .map(|p| {
            inst.with_translation(inst.dx + (s - 1.0) * (p[0] - center[0]), inst.dy + (s - 1.0) * (p[1] - center[1]))
        })
        .collect();
    InstructionSet { rows }
}
