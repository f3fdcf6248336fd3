//! Minimal float RGB raster used throughout the pipeline.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// RGB image, row-major, channels interleaved, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Square crop of side `size` around the image center.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        if size > self.width || size > self.height {
            return Err(Error::Shape(format!("crop {size} larger than {}x{}", self.width, self.height)));
        }
        let (ox, oy) = ((self.width - size) / 2, (self.height - size) / 2);
        let mut out = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            let start = ((oy + y) * self.width + ox) * 3;
            out.extend_from_slice(&self.data[start..start + size * 3]);
        }
        Ok(Self { width: size, height: size, data: out })
    }

    /// Bilinear sample at continuous index-space coordinates with edge clamping.
    pub fn sample_clamped(&self, x: f64, y: f64) -> [f32; 3] {
        let xf = x.clamp(0.0, (self.width - 1) as f64);
        let yf = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (xf.floor() as usize, yf.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (xf - x0 as f64, yf - y0 as f64);
        let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        let mut out = [0.0f32; 3];
        for ch in 0..3 {
            let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
            let bot = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
            out[ch] = (top * (1.0 - fy) + bot * fy) as f32;
        }
        out
    }

    /// Bilinear sample where out-of-range neighbours contribute zero.
    pub fn sample_zero(&self, x: f64, y: f64) -> [f32; 3] {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let mut acc = [0.0f64; 3];
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let (xi, yi) = (x0 + dx, y0 + dy);
                if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                    continue;
                }
                let p = self.pixel(xi as usize, yi as usize);
                for ch in 0..3 {
                    acc[ch] += p[ch] as f64 * w;
                }
            }
        }
        [acc[0] as f32, acc[1] as f32, acc[2] as f32]
    }

    /// Bilinear resize with half-pixel centers; a same-size resize is a copy.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let u = (x as f64 + 0.5) * sx - 0.5;
                let v = (y as f64 + 0.5) * sy - 0.5;
                out.set_pixel(x, y, self.sample_clamped(u, v));
            }
        }
        out
    }

    pub fn clamped(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }

    /// `[1, H, W, 3]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.height, self.width, 3], self.data.iter().map(|&v| T::of(v as f64)).collect())
    }

    /// Accepts any tensor holding `H * W * 3` values.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, width: usize, height: usize) -> Result<Self> {
        Self::from_vec(width, height, t.data().iter().map(|v| v.f64() as f32).collect())
    }
}

/// Binary mask over a square grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn center_crop(&self, size: usize) -> Self {
        let (ox, oy) = ((self.width - size) / 2, (self.height - size) / 2);
        let mut out = Self::new(size, size);
        for y in 0..size {
            for x in 0..size {
                out.set(x, y, self.get(ox + x, oy + y));
            }
        }
        out
    }

    /// Nearest-neighbour resize.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
                out.set(x, y, self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_takes_center() {
        let mut img = Image::new(4, 4);
        img.set_pixel(1, 1, [1.0, 0.5, 0.25]);
        let c = img.center_crop(2).unwrap();
        assert_eq!(c.pixel(0, 0), [1.0, 0.5, 0.25]);
        assert!(img.center_crop(5).is_err());
    }

    #[test]
    fn same_size_resize_is_exact() {
        let img = Image::from_vec(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.resize(2, 1), img);
        let up = img.resize(4, 1);
        assert_eq!(up.pixel(0, 0), img.pixel(0, 0));
        assert_eq!(up.pixel(3, 0), img.pixel(1, 0));
    }

    #[test]
    fn integer_sample_is_exact() {
        let img = Image::from_vec(2, 2, (0..12).map(|v| v as f32 / 12.0).collect()).unwrap();
        assert_eq!(img.sample_zero(1.0, 1.0), img.pixel(1, 1));
        assert_eq!(img.sample_zero(2.0, 1.0), [0.0; 3]);
        assert_eq!(img.sample_clamped(5.0, -1.0), img.pixel(1, 0));
    }
}
