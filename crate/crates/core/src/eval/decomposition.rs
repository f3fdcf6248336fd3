//! Splitting the image reconstruction error into per-object terms.
//!
//! With masks `h_k`, object images are `O_k = I * h_k` and
//! `Ô_k = rgb_k * h_k`. When the masks partition the image the squared
//! error of the composite equals `sum_k |Ô_k - O_k|^2`. Otherwise the
//! difference is the cross term `sum_{i != j} (Ô_i - O_i) . (Ô_j - O_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::DecodeResult;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// One-hot argmax of the alpha maps.
    Hard,
    /// The alpha maps themselves.
    Soft,
}

/// All terms are means over `N * 3` values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// Image MSE of the decoder composite.
    pub lhs: f64,
    /// Sum of per-object MSEs.
    pub rhs: f64,
    pub cross_term: f64,
    /// Largest deviation of the per-pixel alpha sum from 1.
    pub alpha_residual: f64,
}

impl Decomposition {
    pub fn relative_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn verify_decomposition(img: &Image, dec: &DecodeResult, mode: MaskMode) -> Result<Decomposition> {
    let (k, n) = (dec.num_slots(), dec.alpha.cols());
    if img.data().len() != n * 3 {
        return Err(Error::Shape(format!("image has {} values, decode has {}", img.data().len(), n * 3)));
    }
    let target = img.data();
    let alpha = dec.alpha.data();
    let rgb = dec.rgb.data();
    let comp = dec.composite.data();
    let denom = (n * 3) as f64;

    let lhs = comp.iter().zip(target).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / denom;

    let labels = dec.labels();
    let mask = |s: usize, p: usize| -> f64 {
        match mode {
            MaskMode::Hard => (labels[p] == s) as u8 as f64,
            MaskMode::Soft => alpha[s * n + p] as f64,
        }
    };
    // diff[s][p*3+c] = Ô_s - O_s
    let diff: Vec<Vec<f64>> = (0..k)
        .map(|s| {
            (0..n * 3)
                .map(|i| {
                    let h = mask(s, i / 3);
                    (rgb[s * n * 3 + i] as f64 - target[i] as f64) * h
                })
                .collect()
        })
        .collect();
    let rhs = diff.iter().map(|d| d.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / denom;
    let mut cross = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                cross += diff[i].iter().zip(&diff[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    let alpha_residual =
        (0..n).map(|p| ((0..k).map(|s| alpha[s * n + p] as f64).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    Ok(Decomposition { lhs, rhs, cross_term: cross / denom, alpha_residual })
}

/// Two objects and a background on a 4x4 grid with one-hot alphas and
/// per-slot colors that are zero off their mask.
pub fn disjoint_fixture() -> (Image, DecodeResult) {
    let (m, n, k) = (4, 16, 3);
    let label = |p: usize| match p {
        0..=3 => 1,
        12..=15 => 2,
        _ => 0,
    };
    let img = Image::from_vec(m, m, (0..n * 3).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
    let alpha = Tensor::from_fn(&[k, n], |i| (label(i % n) == i / n) as u8 as f32);
    let rgb = Tensor::from_fn(&[k, n, 3], |i| {
        let (s, p) = (i / (n * 3), (i / 3) % n);
        if label(p) == s {
            0.1 + (i % 5) as f32 * 0.2
        } else {
            0.0
        }
    });
    let composite = Tensor::from_fn(&[n, 3], |i| rgb.data()[label(i / 3) * n * 3 + i]);
    let logits = alpha.clone();
    (img, DecodeResult { rgb, logits, alpha, composite, size: m })
}

/// [`disjoint_fixture`] with two slots sharing one pixel half and half.
pub fn overlap_fixture() -> (Image, DecodeResult) {
    let (img, mut dec) = disjoint_fixture();
    let n = 16;
    let a = dec.alpha.data_mut();
    a[n] = 0.5;
    a[2 * n] = 0.5;
    (img, dec)
}
