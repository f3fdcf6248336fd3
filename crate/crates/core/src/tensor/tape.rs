use super::{gemm, ConvGeom, Real, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + tile(b)` where `b`'s shape is a suffix of `x`'s.
    AddTiled(Var, Var),
    MulTiled(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    NormalizeRows(Var),
    Transpose(Var),
    Reshape(Var),
    RepeatRows {
        x: Var,
        times: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    DepthwiseShared {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    Composite {
        rgb: Var,
        alpha: Var,
        slots: usize,
        pixels: usize,
        channels: usize,
    },
    Mse {
        x: Var,
        target: Tensor<T>,
    },
    Sum(Var),
    SumSq(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation so gradients can be pulled back through it.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|&p| self.needs(p));
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p + q);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p - q);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p * q);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    fn check_tiled(&self, x: Var, b: Var) -> usize {
        let (xs, bs) = (self.shape(x), self.shape(b));
        assert!(
            bs.len() <= xs.len() && xs[xs.len() - bs.len()..] == *bs,
            "tiled operand {bs:?} is not a suffix of {xs:?}"
        );
        self.value(b).numel()
    }

    pub fn add_tiled(&mut self, x: Var, b: Var) -> Var {
        let bn = self.check_tiled(x, b);
        let bv = self.value(b).data();
        let mut out = self.value(x).clone();
        out.data_mut().chunks_mut(bn).for_each(|c| c.iter_mut().zip(bv).for_each(|(o, &q)| *o = *o + q));
        self.push(out, Op::AddTiled(x, b), &[x, b])
    }

    pub fn mul_tiled(&mut self, x: Var, b: Var) -> Var {
        let bn = self.check_tiled(x, b);
        let bv = self.value(b).data();
        let mut out = self.value(x).clone();
        out.data_mut().chunks_mut(bn).for_each(|c| c.iter_mut().zip(bv).for_each(|(o, &q)| *o = *o * q));
        self.push(out, Op::MulTiled(x, b), &[x, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|p| p * s);
        self.push(v, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|p| p + s);
        self.push(v, Op::AddScalar(x), &[x])
    }

    /// `op(a) * op(b)`. Without transposes `a` may have any rank and is
    /// viewed as `[rows, cols]`; the output keeps `a`'s leading dims.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.shape().len(), 2, "matmul rhs must be a matrix");
        let (m, k, out_shape) = if ta {
            assert_eq!(av.shape().len(), 2, "transposed lhs must be a matrix");
            (av.shape()[1], av.shape()[0], None)
        } else {
            let mut s = av.shape().to_vec();
            s.pop();
            (av.rows(), av.cols(), Some(s))
        };
        let (kb, n) = if tb { (bv.shape()[1], bv.shape()[0]) } else { (bv.shape()[0], bv.shape()[1]) };
        assert_eq!(k, kb, "matmul inner dims {:?} x {:?}", av.shape(), bv.shape());
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, av.data(), ta, bv.data(), tb, &mut out, false);
        let shape = match out_shape {
            Some(mut s) => {
                s.push(n);
                s
            }
            None => vec![m, n],
        };
        let v = Tensor::from_vec(&shape, out);
        self.push(v, Op::MatMul { a, b, m, k, n, ta, tb }, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|p| p.max(T::zero()));
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|p| T::one() / (T::one() + (-p).exp()));
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|p| p.tanh());
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|p| p.exp());
        self.push(v, Op::Exp(x), &[x])
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let c = v.cols();
        for row in v.data_mut().chunks_mut(c) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                s = s + *e;
            }
            row.iter_mut().for_each(|e| *e = *e / s);
        }
        self.push(v, Op::SoftmaxRows(x), &[x])
    }

    /// Divide each row (last axis) by its sum.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let c = v.cols();
        for row in v.data_mut().chunks_mut(c) {
            let s: T = row.iter().copied().sum();
            row.iter_mut().for_each(|e| *e = *e / s);
        }
        self.push(v, Op::NormalizeRows(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.push(v, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape);
        self.push(v, Op::Reshape(x), &[x])
    }

    /// `[r, c] -> [r * times, c]`, each row repeated `times` times in place.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(r * times * c);
        for i in 0..r {
            for _ in 0..times {
                out.extend_from_slice(xv.row(i));
            }
        }
        let v = Tensor::from_vec(&[r * times, c], out);
        self.push(v, Op::RepeatRows { x, times }, &[x])
    }

    /// Layer norm over the last axis with affine `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        assert_eq!(self.value(gain).numel(), c);
        assert_eq!(self.value(bias).numel(), c);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let n = T::of(c as f64);
        let mut out = xv.clone();
        let mut means = Vec::with_capacity(xv.rows());
        let mut rstds = Vec::with_capacity(xv.rows());
        for row in out.data_mut().chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + T::of(eps)).sqrt();
            for (j, e) in row.iter_mut().enumerate() {
                *e = (*e - mean) * rstd * g[j] + b[j];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        self.push(out, Op::LayerNorm { x, gain, bias, mean: means, rstd: rstds }, &[x, gain, bias])
    }

    /// Same-padded stride-1 convolution; `x: [B,H,W,Cin]`, `w: [kh,kw,Cin,Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Var {
        let (xs, ws) = (self.shape(x), self.shape(w));
        assert_eq!(xs.len(), 4, "conv input must be [B,H,W,C]");
        assert_eq!(ws.len(), 4, "conv weight must be [kh,kw,Cin,Cout]");
        assert_eq!(xs[3], ws[2], "conv channel mismatch");
        let geom =
            ConvGeom { batch: xs[0], height: xs[1], width: xs[2], cin: xs[3], cout: ws[3], kh: ws[0], kw: ws[1] };
        let y = geom.forward(self.value(x).data(), self.value(w).data());
        let v = Tensor::from_vec(&[geom.batch, geom.height, geom.width, geom.cout], y);
        self.push(v, Op::Conv2d { x, w, geom }, &[x, w])
    }

    /// Every channel of `x: [B,H,W,C]` convolved with the same `k: [kh,kw]`.
    pub fn depthwise_shared(&mut self, x: Var, k: Var) -> Var {
        let (xs, ks) = (self.shape(x), self.shape(k));
        assert_eq!(xs.len(), 4, "depthwise input must be [B,H,W,C]");
        assert_eq!(ks.len(), 2, "depthwise kernel must be [kh,kw]");
        let geom =
            ConvGeom { batch: xs[0], height: xs[1], width: xs[2], cin: xs[3], cout: xs[3], kh: ks[0], kw: ks[1] };
        let y = geom.depthwise_forward(self.value(x).data(), self.value(k).data());
        let v = Tensor::from_vec(xs, y);
        self.push(v, Op::DepthwiseShared { x, k, geom }, &[x, k])
    }

    /// `out[n, c] = sum_k rgb[k, n, c] * alpha[k, n]`.
    pub fn composite(&mut self, rgb: Var, alpha: Var) -> Var {
        let (rv, av) = (self.value(rgb), self.value(alpha));
        let slots = av.shape()[0];
        let pixels = av.numel() / slots.max(1);
        let channels = rv.numel() / (slots * pixels).max(1);
        assert_eq!(rv.numel(), slots * pixels * channels, "composite shape mismatch");
        let (r, a) = (rv.data(), av.data());
        let mut out = vec![T::zero(); pixels * channels];
        for k in 0..slots {
            for p in 0..pixels {
                let w = a[k * pixels + p];
                let src = (k * pixels + p) * channels;
                for c in 0..channels {
                    out[p * channels + c] = out[p * channels + c] + r[src + c] * w;
                }
            }
        }
        let v = Tensor::from_vec(&[pixels, channels], out);
        self.push(v, Op::Composite { rgb, alpha, slots, pixels, channels }, &[rgb, alpha])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: &Tensor<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.numel(), target.numel(), "mse size mismatch");
        let s: T = xv.data().iter().zip(target.data()).map(|(&p, &q)| (p - q) * (p - q)).sum();
        let v = Tensor::scalar(s / T::of(xv.numel() as f64));
        self.push(v, Op::Mse { x, target: target.clone() }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn sum_sq(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).data().iter().map(|&p| p * p).sum());
        self.push(v, Op::SumSq(x), &[x])
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.pull(i, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn pull(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &p in [a, b] {
                    if self.needs(p) {
                        accumulate(grads, p, g.clone());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = zip(g, bv, |p, q| p * q);
                    accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = zip(g, av, |p, q| p * q);
                    accumulate(grads, *b, d);
                }
            }
            Op::AddTiled(x, b) => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.needs(*b) {
                    let bv = self.value(*b);
                    let mut db = Tensor::zeros(bv.shape());
                    for chunk in g.data().chunks(bv.numel()) {
                        db.data_mut().iter_mut().zip(chunk).for_each(|(d, &q)| *d = *d + q);
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::MulTiled(x, b) => {
                let (xv, bv) = (self.value(*x), self.value(*b));
                let bn = bv.numel();
                if self.needs(*x) {
                    let mut dx = g.clone();
                    dx.data_mut()
                        .chunks_mut(bn)
                        .for_each(|c| c.iter_mut().zip(bv.data()).for_each(|(d, &q)| *d = *d * q));
                    accumulate(grads, *x, dx);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(bv.shape());
                    for (gc, xc) in g.data().chunks(bn).zip(xv.data().chunks(bn)) {
                        for ((d, &p), &q) in db.data_mut().iter_mut().zip(gc).zip(xc) {
                            *d = *d + p * q;
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::MatMul { a, b, m, k, n, ta, tb } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (self.value(*a), self.value(*b));
                let gd = g.data();
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    if *ta {
                        // a stored [k, m]: da = op(b) * g^T
                        gemm(k, n, m, bv.data(), *tb, gd, true, &mut da, false);
                    } else {
                        // da [m, k] = g * op(b)^T
                        gemm(m, n, k, gd, false, bv.data(), !*tb, &mut da, false);
                    }
                    accumulate(grads, *a, Tensor::from_vec(av.shape(), da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    if *tb {
                        // b stored [n, k]: db = g^T * op(a)
                        gemm(n, m, k, gd, true, av.data(), *ta, &mut db, false);
                    } else {
                        // db [k, n] = op(a)^T * g
                        gemm(k, m, n, av.data(), !*ta, gd, false, &mut db, false);
                    }
                    accumulate(grads, *b, Tensor::from_vec(bv.shape(), db));
                }
            }
            Op::Relu(x) => {
                let d = zip(g, out, |p, y| if y > T::zero() { p } else { T::zero() });
                accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = zip(g, out, |p, y| p * y * (T::one() - y));
                accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = zip(g, out, |p, y| p * (T::one() - y * y));
                accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = zip(g, out, |p, y| p * y);
                accumulate(grads, *x, d);
            }
            Op::SoftmaxRows(x) => {
                let c = out.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&p, &y)| p * y).sum();
                    drow.iter_mut().zip(yrow).for_each(|(p, &y)| *p = y * (*p - dot));
                }
                accumulate(grads, *x, d);
            }
            Op::NormalizeRows(x) => {
                let xv = self.value(*x);
                let c = out.cols();
                let mut d = g.clone();
                for ((drow, yrow), xrow) in
                    d.data_mut().chunks_mut(c).zip(out.data().chunks(c)).zip(xv.data().chunks(c))
                {
                    let s: T = xrow.iter().copied().sum();
                    let dot: T = drow.iter().zip(yrow).map(|(&p, &y)| p * y).sum();
                    drow.iter_mut().for_each(|p| *p = (*p - dot) / s);
                }
                accumulate(grads, *x, d);
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                accumulate(grads, *x, g.clone().reshape(&shape));
            }
            Op::RepeatRows { x, times } => {
                let xv = self.value(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let mut d = Tensor::zeros(xv.shape());
                for i in 0..r {
                    let dst = d.row_mut(i);
                    for t in 0..*times {
                        let src = &g.data()[(i * times + t) * c..(i * times + t + 1) * c];
                        dst.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b);
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data();
                let c = xv.cols();
                let n = T::of(c as f64);
                let mut dx = Tensor::zeros(xv.shape());
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for r in 0..xv.rows() {
                    let xr = xv.row(r);
                    let gr = &g.data()[r * c..(r + 1) * c];
                    for j in 0..c {
                        xhat[j] = (xr[j] - mean[r]) * rstd[r];
                        dxhat[j] = gr[j] * gv[j];
                        dg[j] = dg[j] + gr[j] * xhat[j];
                        db[j] = db[j] + gr[j];
                    }
                    let m1 = dxhat.iter().copied().sum::<T>() / n;
                    let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
                    let dr = dx.row_mut(r);
                    for j in 0..c {
                        dr[j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                if self.needs(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.needs(*gain) {
                    accumulate(grads, *gain, Tensor::from_vec(self.shape(*gain), dg));
                }
                if self.needs(*bias) {
                    accumulate(grads, *bias, Tensor::from_vec(self.shape(*bias), db));
                }
            }
            Op::Conv2d { x, w, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (dx, dw) = geom.backward(xv.data(), wv.data(), g.data(), self.needs(*x), self.needs(*w));
                if let Some(dx) = dx {
                    accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx));
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, Tensor::from_vec(wv.shape(), dw));
                }
            }
            Op::DepthwiseShared { x, k, geom } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let (dx, dk) = geom.depthwise_backward(xv.data(), kv.data(), g.data());
                if self.needs(*x) {
                    accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx));
                }
                if self.needs(*k) {
                    accumulate(grads, *k, Tensor::from_vec(kv.shape(), dk));
                }
            }
            Op::Composite { rgb, alpha, slots, pixels, channels } => {
                let (rv, av) = (self.value(*rgb), self.value(*alpha));
                let (r, a, gd) = (rv.data(), av.data(), g.data());
                let (slots, pixels, channels) = (*slots, *pixels, *channels);
                if self.needs(*rgb) {
                    let mut d = vec![T::zero(); r.len()];
                    for k in 0..slots {
                        for p in 0..pixels {
                            let w = a[k * pixels + p];
                            for c in 0..channels {
                                d[(k * pixels + p) * channels + c] = gd[p * channels + c] * w;
                            }
                        }
                    }
                    accumulate(grads, *rgb, Tensor::from_vec(rv.shape(), d));
                }
                if self.needs(*alpha) {
                    let mut d = vec![T::zero(); a.len()];
                    for k in 0..slots {
                        for p in 0..pixels {
                            let src = (k * pixels + p) * channels;
                            d[k * pixels + p] = (0..channels).map(|c| gd[p * channels + c] * r[src + c]).sum();
                        }
                    }
                    accumulate(grads, *alpha, Tensor::from_vec(av.shape(), d));
                }
            }
            Op::Mse { x, target } => {
                let xv = self.value(*x);
                let s = g.data()[0] * T::of(2.0 / xv.numel() as f64);
                let d = zip(xv, target, |p, q| (p - q) * s);
                accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                accumulate(grads, *x, Tensor::full(self.shape(*x), s));
            }
            Op::SumSq(x) => {
                let s = g.data()[0] + g.data()[0];
                accumulate(grads, *x, self.value(*x).map(|p| p * s));
            }
        }
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(b.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` around every entry of `x0`.
    fn numeric_grad(x0: &Tensor<f64>, f: &dyn Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..x0.numel())
            .map(|i| {
                let mut p = x0.clone();
                p.data_mut()[i] += h;
                let mut m = x0.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn check(shapes: &[&[usize]], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(s, sh)| Tensor::from_fn(sh, |i| ((i * 37 + s * 11) % 17) as f64 / 8.5 - 0.9 + 0.013 * i as f64))
            .collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);
        for (idx, x0) in inputs.iter().enumerate() {
            let f = |x: &Tensor<f64>| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| t.param(if j == idx { x.clone() } else { v.clone() }))
                    .collect();
                let l = build(&mut t, &vs);
                t.value(l).data()[0]
            };
            let num = numeric_grad(x0, &f);
            let got = grads.get(vars[idx]).expect("grad");
            for (a, b) in got.data().iter().zip(&num) {
                let scale = a.abs().max(b.abs()).max(1e-3);
                assert!((a - b).abs() / scale < 1e-5, "input {idx}: analytic {a} vs numeric {b}");
            }
        }
    }

    #[test]
    fn elementwise_and_tiled_ops() {
        check(&[&[3, 4], &[4]], &|t, v| {
            let a = t.add_tiled(v[0], v[1]);
            let b = t.mul_tiled(a, v[1]);
            let c = t.tanh(b);
            let d = t.sigmoid(c);
            let e = t.exp(d);
            let f = t.mul(e, v[0]);
            let g = t.sub(f, v[0]);
            t.sum_sq(g)
        });
    }

    #[test]
    fn matmul_variants() {
        check(&[&[3, 4], &[4, 2]], &|t, v| {
            let a = t.matmul(v[0], v[1]);
            t.sum_sq(a)
        });
        check(&[&[4, 3], &[2, 4]], &|t, v| {
            let a = t.matmul_t(v[0], true, v[1], true);
            t.sum_sq(a)
        });
        check(&[&[3, 4], &[2, 4]], &|t, v| {
            let a = t.matmul_t(v[0], false, v[1], true);
            t.sum_sq(a)
        });
        check(&[&[4, 3], &[4, 2]], &|t, v| {
            let a = t.matmul_t(v[0], true, v[1], false);
            t.sum_sq(a)
        });
    }

    #[test]
    fn normalizations() {
        check(&[&[3, 5], &[5], &[5]], &|t, v| {
            let a = t.layer_norm(v[0], v[1], v[2], 1e-5);
            let b = t.softmax_rows(a);
            let c = t.transpose(b);
            let d = t.exp(c);
            let e = t.normalize_rows(d);
            let f = t.mul(e, e);
            t.sum(f)
        });
    }

    #[test]
    fn conv_and_depthwise() {
        check(&[&[2, 4, 3, 2], &[3, 3, 2, 3]], &|t, v| {
            let y = t.conv2d(v[0], v[1]);
            t.sum_sq(y)
        });
        check(&[&[1, 4, 5, 2], &[3, 3]], &|t, v| {
            let y = t.depthwise_shared(v[0], v[1]);
            t.sum_sq(y)
        });
    }

    #[test]
    fn broadcast_composite_and_mse() {
        check(&[&[2, 3], &[6, 3], &[2, 3]], &|t, v| {
            let rep = t.repeat_rows(v[0], 3);
            let rgb = t.add(rep, v[1]);
            let rgb = t.reshape(rgb, &[2, 3, 3]);
            let comp = t.composite(rgb, v[2]);
            let target = Tensor::from_fn(&[3, 3], |i| i as f64 * 0.1);
            let l = t.mse(comp, &target);
            let l2 = t.scale(l, 3.0);
            t.add_scalar(l2, 1.0)
        });
    }

    #[test]
    fn gradients_flow_only_to_params() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Tensor::full(&[2], 1.0));
        let p = t.param(Tensor::full(&[2], 2.0));
        let y = t.mul(c, p);
        let l = t.sum(y);
        let g = t.backward(l);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 1.0]);
    }
}
