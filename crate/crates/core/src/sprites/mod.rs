//! Procedural multi-object scenes: flat-colored squares, circles and
//! triangles on a dark gray background.

mod dataset;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub use dataset::{read_dataset, write_dataset, Dataset, DATASET_MAGIC, DATASET_VERSION};

pub const PALETTE_SIZE: usize = 8;

pub const DEFAULT_PALETTE: [[f32; 3]; PALETTE_SIZE] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.80, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.90, 0.10],
    [0.90, 0.10, 0.90],
    [0.10, 0.85, 0.90],
    [1.00, 0.55, 0.05],
    [0.55, 0.20, 0.85],
];

pub const BACKGROUND: f32 = 0.1;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

impl Size {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Size::Small),
            1 => Some(Size::Large),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub shape: Shape,
    pub color_id: u8,
    pub size: Size,
    /// Mask center of mass, normalized to the crop frame (`(px + 0.5 - offset) / C`).
    pub position: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub masks: Vec<Mask>,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpriteConfig {
    pub template_size: usize,
    pub crop_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Pixels kept free on each side of the crop so that augmentation never
    /// pushes an object out of frame. Defaults to `(T - C) / 2`.
    pub margin: usize,
    pub small_radius: f64,
    pub large_radius: f64,
    pub palette: [[f32; 3]; PALETTE_SIZE],
}

impl Default for SpriteConfig {
    fn default() -> Self {
        Self {
            template_size: 80,
            crop_size: 64,
            min_objects: 2,
            max_objects: 4,
            margin: 8,
            small_radius: 5.0,
            large_radius: 8.0,
            palette: DEFAULT_PALETTE,
        }
    }
}

impl SpriteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size > self.template_size {
            return Err(Error::Config("crop larger than canvas".into()));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > 255 {
            return Err(Error::Config(format!("object range {}..={} is invalid", self.min_objects, self.max_objects)));
        }
        if 2 * self.margin >= self.crop_size {
            return Err(Error::Config("margin leaves no room for objects".into()));
        }
        Ok(())
    }

    fn crop_offset(&self) -> usize {
        (self.template_size - self.crop_size) / 2
    }

    /// Half-open pixel range `[lo, hi)` objects must stay inside, per axis.
    pub fn safe_region(&self) -> (usize, usize) {
        let off = self.crop_offset();
        (off + self.margin, off + self.crop_size - self.margin)
    }

    fn radius(&self, size: Size) -> f64 {
        match size {
            Size::Small => self.small_radius,
            Size::Large => self.large_radius,
        }
    }
}

fn inside(shape: Shape, r: f64, dx: f64, dy: f64) -> bool {
    match shape {
        Shape::Square => dx.abs() <= r && dy.abs() <= r,
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
    }
}

fn rasterize(shape: Shape, r: f64, cx: f64, cy: f64, t: usize) -> Mask {
    let mut m = Mask::new(t, t);
    let (lo_y, hi_y) = (((cy - r - 1.0).floor().max(0.0)) as usize, ((cy + r + 1.0).ceil() as usize).min(t));
    let (lo_x, hi_x) = (((cx - r - 1.0).floor().max(0.0)) as usize, ((cx + r + 1.0).ceil() as usize).min(t));
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            if inside(shape, r, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy) {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// Normalized crop-frame center of mass of a canvas mask.
pub fn mask_position(mask: &Mask, crop_size: usize) -> Option<[f64; 2]> {
    let off = (mask.width - crop_size) as f64 / 2.0;
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| {
        let n = n as f64;
        [(sx / n - off) / crop_size as f64, (sy / n - off) / crop_size as f64]
    })
}

pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SpriteConfig) -> Result<Scene> {
    cfg.validate()?;
    let t = cfg.template_size;
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let (lo, hi) = cfg.safe_region();
    let mut occupied = Mask::new(t, t);
    let mut masks = Vec::with_capacity(n);
    let mut objects = Vec::with_capacity(n);
    let mut attempts = 0;
    while masks.len() < n {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Generation(format!(
                "placed {} of {n} objects after {MAX_ATTEMPTS} attempts",
                masks.len()
            )));
        }
        let shape = Shape::ALL[rng.random_range(0..3)];
        let size = if rng.random_bool(0.5) { Size::Large } else { Size::Small };
        let color_id = rng.random_range(0..PALETTE_SIZE as u8);
        let r = cfg.radius(size);
        let span = (hi - lo) as f64;
        if span <= 2.0 * r + 2.0 {
            continue;
        }
        let cx = lo as f64 + r + 1.0 + rng.random::<f64>() * (span - 2.0 * r - 2.0);
        let cy = lo as f64 + r + 1.0 + rng.random::<f64>() * (span - 2.0 * r - 2.0);
        let mask = rasterize(shape, r, cx, cy, t);
        if mask.count() == 0 {
            continue;
        }
        let mut ok = true;
        'scan: for y in 0..t {
            for x in 0..t {
                if !mask.get(x, y) {
                    continue;
                }
                if x < lo || x >= hi || y < lo || y >= hi {
                    ok = false;
                    break 'scan;
                }
                // one pixel of clearance between objects
                for (nx, ny) in [(x, y), (x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)] {
                    if nx < t && ny < t && occupied.get(nx, ny) {
                        ok = false;
                        break 'scan;
                    }
                }
            }
        }
        if !ok {
            continue;
        }
        for (o, &b) in occupied.bits.iter_mut().zip(&mask.bits) {
            *o |= b;
        }
        let position = mask_position(&mask, cfg.crop_size).expect("non-empty mask");
        objects.push(ObjectRecord { shape, color_id, size, position });
        masks.push(mask);
    }
    let mut image = Image::filled(t, t, [BACKGROUND; 3]);
    for (mask, obj) in masks.iter().zip(&objects) {
        let rgb = cfg.palette[obj.color_id as usize];
        for y in 0..t {
            for x in 0..t {
                if mask.get(x, y) {
                    image.set_pixel(x, y, rgb);
                }
            }
        }
    }
    Ok(Scene { image, masks, objects })
}

/// Scene `index` of the stream seeded by `seed`; independent of other indices.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `count` scenes, generated in parallel, identical for any thread count.
pub fn generate_scenes(seed: u64, count: usize, cfg: &SpriteConfig) -> Result<Vec<Scene>> {
    crate::par::map_range(count, |i| generate_scene(&mut scene_rng(seed, i as u64), cfg)).into_iter().collect()
}

impl Scene {
    /// Per-pixel labels in the reference view: 0 background, `i + 1` object `i`.
    pub fn label_map(&self, crop_size: usize, image_size: usize) -> Vec<usize> {
        let mut labels = vec![0; image_size * image_size];
        for (i, m) in self.masks.iter().enumerate() {
            let r = m.center_crop(crop_size).resize(image_size, image_size);
            for (l, &b) in labels.iter_mut().zip(&r.bits) {
                if b {
                    *l = i + 1;
                }
            }
        }
        labels
    }

    /// Masks in the reference view, background first.
    pub fn view_masks(&self, crop_size: usize, image_size: usize) -> Vec<Mask> {
        let labels = self.label_map(crop_size, image_size);
        (0..=self.masks.len())
            .map(|i| Mask { width: image_size, height: image_size, bits: labels.iter().map(|&l| l == i).collect() })
            .collect()
    }
}
