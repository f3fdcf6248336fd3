//! Little-endian binary container for generated scenes.
//!
//! ```text
//! header:  "SAUGDS01" | version u32 | count u32 | T u16 | C u16 | max_objects u8
//!          | palette 8 x [f32; 3]
//! scene:   image T*T*3 f32 | n u8 | n masks (ceil(T*T/8) bytes, LSB first)
//!          | n records (shape u8, color u8, size u8, x f64, y f64)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ObjectRecord, Scene, Shape, Size, SpriteConfig, PALETTE_SIZE};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const DATASET_MAGIC: &[u8; 8] = b"SAUGDS01";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub template_size: usize,
    pub crop_size: usize,
    pub max_objects: usize,
    pub palette: [[f32; 3]; PALETTE_SIZE],
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn new(cfg: &SpriteConfig, scenes: Vec<Scene>) -> Self {
        Self {
            template_size: cfg.template_size,
            crop_size: cfg.crop_size,
            max_objects: cfg.max_objects,
            palette: cfg.palette,
            scenes,
        }
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Write to any sink.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let t = self.template_size;
        if t > u16::MAX as usize || self.crop_size > u16::MAX as usize || self.max_objects > 255 {
            return Err(Error::Format("header field out of range".into()));
        }
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.scenes.len() as u32).to_le_bytes())?;
        w.write_all(&(t as u16).to_le_bytes())?;
        w.write_all(&(self.crop_size as u16).to_le_bytes())?;
        w.write_all(&[self.max_objects as u8])?;
        for rgb in &self.palette {
            for v in rgb {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let mask_bytes = (t * t).div_ceil(8);
        let mut buf = Vec::new();
        for s in &self.scenes {
            if s.image.width() != t || s.image.height() != t || s.masks.len() != s.objects.len() {
                return Err(Error::Format("scene does not match header".into()));
            }
            if s.objects.len() > self.max_objects {
                return Err(Error::Format("scene exceeds max_objects".into()));
            }
            buf.clear();
            for v in s.image.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.push(s.objects.len() as u8);
            for m in &s.masks {
                let mut packed = vec![0u8; mask_bytes];
                for (i, &b) in m.bits.iter().enumerate() {
                    if b {
                        packed[i / 8] |= 1 << (i % 8);
                    }
                }
                buf.extend_from_slice(&packed);
            }
            for o in &s.objects {
                buf.extend_from_slice(&[o.shape.id(), o.color_id, o.size.id()]);
                buf.extend_from_slice(&o.position[0].to_le_bytes());
                buf.extend_from_slice(&o.position[1].to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut rd = Reader { inner: r };
        let magic = rd.bytes::<8>("magic")?;
        if &magic != DATASET_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let version = u32::from_le_bytes(rd.bytes("version")?);
        if version != DATASET_VERSION {
            return Err(Error::Version { expected: DATASET_VERSION, found: version });
        }
        let count = u32::from_le_bytes(rd.bytes("count")?) as usize;
        let t = u16::from_le_bytes(rd.bytes("template size")?) as usize;
        let crop_size = u16::from_le_bytes(rd.bytes("crop size")?) as usize;
        let [max_objects] = rd.bytes::<1>("max objects")?;
        let mut palette = [[0.0f32; 3]; PALETTE_SIZE];
        for rgb in palette.iter_mut() {
            for v in rgb.iter_mut() {
                *v = f32::from_le_bytes(rd.bytes("palette")?);
            }
        }
        let mask_bytes = (t * t).div_ceil(8);
        let mut scenes = Vec::with_capacity(count.min(1 << 16));
        for idx in 0..count {
            let what = format!("scene {idx}");
            let mut raw = vec![0u8; t * t * 3 * 4];
            rd.fill(&mut raw, &what)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let image = Image::from_vec(t, t, data)?;
            let [n] = rd.bytes::<1>(&what)?;
            let n = n as usize;
            if n > max_objects as usize {
                return Err(Error::Format(format!("{what} has {n} objects, max is {max_objects}")));
            }
            let mut masks = Vec::with_capacity(n);
            let mut packed = vec![0u8; mask_bytes];
            for _ in 0..n {
                rd.fill(&mut packed, &what)?;
                let bits = (0..t * t).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
                masks.push(Mask { width: t, height: t, bits });
            }
            let mut objects = Vec::with_capacity(n);
            for _ in 0..n {
                let [shape, color_id, size] = rd.bytes::<3>(&what)?;
                let x = f64::from_le_bytes(rd.bytes(&what)?);
                let y = f64::from_le_bytes(rd.bytes(&what)?);
                let shape =
                    Shape::from_id(shape).ok_or_else(|| Error::Format(format!("{what}: bad shape id {shape}")))?;
                let size = Size::from_id(size).ok_or_else(|| Error::Format(format!("{what}: bad size id {size}")))?;
                if color_id as usize >= PALETTE_SIZE {
                    return Err(Error::Format(format!("{what}: bad color id {color_id}")));
                }
                objects.push(ObjectRecord { shape, color_id, size, position: [x, y] });
            }
            scenes.push(Scene { image, masks, objects });
        }
        Ok(Self { template_size: t, crop_size, max_objects: max_objects as usize, palette, scenes })
    }
}

struct Reader<'a, R> {
    inner: &'a mut R,
}

impl<R: Read> Reader<'_, R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Truncated(what.to_string())
            } else {
                Error::Io(e)
            }
        })
    }

    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b, what)?;
        Ok(b)
    }
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ds.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    Dataset::read_from(&mut r)
}
