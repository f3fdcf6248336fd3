//! Stride-1 "same" convolutions on channels-last `[B, H, W, C]` buffers.

use super::{gemm, Real};

/// Upper bound on the im2col scratch buffer, in elements.
const COL_BUDGET: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    fn pixels(&self) -> usize {
        self.batch * self.height * self.width
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn block_rows(&self) -> usize {
        (COL_BUDGET / self.patch().max(1)).clamp(1, self.pixels().max(1))
    }

    /// Fill `col` with patches for output pixels `start..start + rows`.
    fn im2col<T: Real>(&self, x: &[T], start: usize, rows: usize, col: &mut [T]) {
        let (h, w, c) = (self.height, self.width, self.cin);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let patch = self.patch();
        for r in 0..rows {
            let p = start + r;
            let b = p / (h * w);
            let i = (p / w) % h;
            let j = p % w;
            let dst = &mut col[r * patch..(r + 1) * patch];
            for u in 0..self.kh {
                let y = i as isize + u as isize - ph as isize;
                for v in 0..self.kw {
                    let xx = j as isize + v as isize - pw as isize;
                    let off = (u * self.kw + v) * c;
                    let seg = &mut dst[off..off + c];
                    if y < 0 || y >= h as isize || xx < 0 || xx >= w as isize {
                        seg.iter_mut().for_each(|s| *s = T::zero());
                    } else {
                        let src = ((b * h + y as usize) * w + xx as usize) * c;
                        seg.copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }

    /// Scatter-add patch gradients back onto the input gradient.
    fn col2im<T: Real>(&self, col: &[T], start: usize, rows: usize, dx: &mut [T]) {
        let (h, w, c) = (self.height, self.width, self.cin);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let patch = self.patch();
        for r in 0..rows {
            let p = start + r;
            let b = p / (h * w);
            let i = (p / w) % h;
            let j = p % w;
            let src = &col[r * patch..(r + 1) * patch];
            for u in 0..self.kh {
                let y = i as isize + u as isize - ph as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for v in 0..self.kw {
                    let xx = j as isize + v as isize - pw as isize;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let off = (u * self.kw + v) * c;
                    let dst = ((b * h + y as usize) * w + xx as usize) * c;
                    for (d, &s) in dx[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }

    /// `y = conv(x, w)`, weights laid out `[kh, kw, cin, cout]`.
    pub fn forward<T: Real>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let (patch, cout) = (self.patch(), self.cout);
        let total = self.pixels();
        let mut y = vec![T::zero(); total * cout];
        if self.kh == 1 && self.kw == 1 {
            gemm(total, patch, cout, x, false, w, false, &mut y, false);
            return y;
        }
        let block = self.block_rows();
        let mut col = vec![T::zero(); block * patch];
        let mut start = 0;
        while start < total {
            let rows = block.min(total - start);
            self.im2col(x, start, rows, &mut col);
            gemm(rows, patch, cout, &col, false, w, false, &mut y[start * cout..(start + rows) * cout], false);
            start += rows;
        }
        y
    }

    /// Returns `(dx, dw)` given the output gradient.
    pub fn backward<T: Real>(
        &self,
        x: &[T],
        w: &[T],
        dy: &[T],
        want_dx: bool,
        want_dw: bool,
    ) -> (Option<Vec<T>>, Option<Vec<T>>) {
        let (patch, cout) = (self.patch(), self.cout);
        let total = self.pixels();
        let mut dx = want_dx.then(|| vec![T::zero(); total * self.cin]);
        let mut dw = want_dw.then(|| vec![T::zero(); patch * cout]);
        if self.kh == 1 && self.kw == 1 {
            if let Some(dx) = dx.as_mut() {
                gemm(total, cout, patch, dy, false, w, true, dx, false);
            }
            if let Some(dw) = dw.as_mut() {
                gemm(patch, total, cout, x, true, dy, false, dw, false);
            }
            return (dx, dw);
        }
        let block = self.block_rows();
        let mut col = vec![T::zero(); block * patch];
        let mut start = 0;
        while start < total {
            let rows = block.min(total - start);
            let dy_block = &dy[start * cout..(start + rows) * cout];
            if let Some(dw) = dw.as_mut() {
                self.im2col(x, start, rows, &mut col);
                gemm(patch, rows, cout, &col, true, dy_block, false, dw, true);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(rows, cout, patch, dy_block, false, w, true, &mut col, false);
                self.col2im(&col, start, rows, dx);
            }
            start += rows;
        }
        (dx, dw)
    }

    /// Per-channel convolution with one shared `[kh, kw]` kernel (`cin == cout`).
    pub fn depthwise_forward<T: Real>(&self, x: &[T], k: &[T]) -> Vec<T> {
        let (h, w, c) = (self.height, self.width, self.cin);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let mut y = vec![T::zero(); x.len()];
        for b in 0..self.batch {
            for i in 0..h {
                for j in 0..w {
                    let dst = ((b * h + i) * w + j) * c;
                    for u in 0..self.kh {
                        let yy = i as isize + u as isize - ph as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for v in 0..self.kw {
                            let xx = j as isize + v as isize - pw as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let kv = k[u * self.kw + v];
                            let src = ((b * h + yy as usize) * w + xx as usize) * c;
                            for ch in 0..c {
                                y[dst + ch] = y[dst + ch] + kv * x[src + ch];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn depthwise_backward<T: Real>(&self, x: &[T], k: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
        let (h, w, c) = (self.height, self.width, self.cin);
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let mut dx = vec![T::zero(); x.len()];
        let mut dk = vec![T::zero(); k.len()];
        for b in 0..self.batch {
            for i in 0..h {
                for j in 0..w {
                    let out = ((b * h + i) * w + j) * c;
                    for u in 0..self.kh {
                        let yy = i as isize + u as isize - ph as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for v in 0..self.kw {
                            let xx = j as isize + v as isize - pw as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let ki = u * self.kw + v;
                            let src = ((b * h + yy as usize) * w + xx as usize) * c;
                            let mut acc = T::zero();
                            for ch in 0..c {
                                let g = dy[out + ch];
                                dx[src + ch] = dx[src + ch] + k[ki] * g;
                                acc = acc + x[src + ch] * g;
                            }
                            dk[ki] = dk[ki] + acc;
                        }
                    }
                }
            }
        }
        (dx, dk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; g.batch * g.height * g.width * g.cout];
        for b in 0..g.batch {
            for i in 0..g.height as isize {
                for j in 0..g.width as isize {
                    for o in 0..g.cout {
                        let mut acc = 0.0;
                        for u in 0..g.kh as isize {
                            for v in 0..g.kw as isize {
                                let (yy, xx) = (i + u - g.kh as isize / 2, j + v - g.kw as isize / 2);
                                if yy < 0 || xx < 0 || yy >= g.height as isize || xx >= g.width as isize {
                                    continue;
                                }
                                for c in 0..g.cin {
                                    let xi = ((b * g.height + yy as usize) * g.width + xx as usize) * g.cin + c;
                                    let wi = ((u as usize * g.kw + v as usize) * g.cin + c) * g.cout + o;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                        y[((b * g.height + i as usize) * g.width + j as usize) * g.cout + o] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = ConvGeom { batch: 2, height: 5, width: 4, cin: 3, cout: 2, kh: 3, kw: 3 };
        let x: Vec<f64> = (0..2 * 5 * 4 * 3).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..3 * 3 * 3 * 2).map(|i| ((i * 5) % 7) as f64 * 0.1).collect();
        let got = g.forward(&x, &w);
        let want = naive(&g, &x, &w);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn depthwise_center_kernel_is_identity() {
        let g = ConvGeom { batch: 1, height: 4, width: 4, cin: 2, cout: 2, kh: 3, kw: 3 };
        let x: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(g.depthwise_forward(&x, &k), x);
    }
}
