//! RGB <-> HSL conversion and hue/saturation/lightness shifts.

use crate::image::Image;

/// `(hue degrees in [0, 360), saturation, lightness)`; inputs are clamped to `[0, 1]`.
pub fn rgb_to_hsl(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|v| v.clamp(0.0, 1.0));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d == 0.0 {
        return [0.0, 0.0, l];
    }
    let s = d / (1.0 - (2.0 * l - 1.0).abs());
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    [h.rem_euclid(360.0), s.min(1.0), l]
}

pub fn hsl_to_rgb(hsl: [f64; 3]) -> [f64; 3] {
    let h = hsl[0].rem_euclid(360.0);
    let s = hsl[1].clamp(0.0, 1.0);
    let l = hsl[2].clamp(0.0, 1.0);
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    [r + m, g + m, b + m].map(|v| v.clamp(0.0, 1.0))
}

/// Rotate hue by `dhue` degrees, multiply saturation and lightness (clamped).
pub fn shift_pixel(rgb: [f64; 3], dhue: f64, sat: f64, light: f64) -> [f64; 3] {
    let [h, s, l] = rgb_to_hsl(rgb);
    hsl_to_rgb([(h + dhue).rem_euclid(360.0), (s * sat).clamp(0.0, 1.0), (l * light).clamp(0.0, 1.0)])
}

pub fn shift_color(img: &Image, dhue: f64, sat: f64, light: f64) -> Image {
    let mut out = img.clone();
    for px in out.data_mut().chunks_mut(3) {
        let rgb = [px[0] as f64, px[1] as f64, px[2] as f64];
        let shifted = shift_pixel(rgb, dhue, sat, light);
        for (o, v) in px.iter_mut().zip(shifted) {
            *o = v as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn primaries() {
        assert_eq!(rgb_to_hsl([1.0, 0.0, 0.0]), [0.0, 1.0, 0.5]);
        let white = rgb_to_hsl([1.0, 1.0, 1.0]);
        assert_eq!((white[1], white[2]), (0.0, 1.0));
        assert_eq!(shift_pixel([1.0, 0.0, 0.0], 120.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(shift_pixel([1.0, 0.0, 0.0], 240.0, 1.0, 1.0), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn gray_is_fixed_under_saturation() {
        let img = Image::filled(3, 3, [0.1, 0.1, 0.1]);
        for sat in [0.2, 1.0, 2.7] {
            assert_eq!(shift_color(&img, 0.0, sat, 1.0), img);
        }
    }

    #[test]
    fn full_rotation_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..48).map(|_| rng.random::<f32>()).collect();
        let img = Image::from_vec(4, 4, data).unwrap();
        let out = shift_color(&img, 360.0, 1.0, 1.0);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn round_trip_within_one_level() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let rgb = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let back = hsl_to_rgb(rgb_to_hsl(rgb));
            for c in 0..3 {
                worst = worst.max((back[c] - rgb[c]).abs());
            }
        }
        assert!(worst <= 1.0 / 255.0, "worst {worst}");
    }
}
