//! Parameter-id bundles for the building blocks and their forward passes.

use rand::Rng;

use super::params::{uniform, Graph, ParamId, Params};
use crate::tensor::{Real, Tensor, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Registers freshly initialized tensors under a name prefix.
pub(crate) struct Builder<'a, T, R: ?Sized> {
    pub params: &'a mut Params<T>,
    pub rng: &'a mut R,
}

impl<T: Real, R: Rng + ?Sized> Builder<'_, T, R> {
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.params.push(format!("{name}.w"), uniform(self.rng, &[fan_in, fan_out], bound));
        let b = bias.then(|| self.params.push(format!("{name}.b"), uniform(self.rng, &[fan_out], bound)));
        Linear { w, b }
    }

    pub fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize) -> Conv {
        let bound = 1.0 / ((k * k * cin) as f64).sqrt();
        let w = self.params.push(format!("{name}.w"), uniform(self.rng, &[k, k, cin, cout], bound));
        let b = self.params.push(format!("{name}.b"), uniform(self.rng, &[cout], bound));
        Conv { w, b }
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let g = self.params.push(format!("{name}.g"), Tensor::full(&[dim], T::one()));
        let b = self.params.push(format!("{name}.b"), Tensor::zeros(&[dim]));
        Norm { g, b }
    }

    /// ReLU between consecutive layers, none after the last.
    pub fn mlp(&mut self, name: &str, dims: &[usize]) -> Mlp {
        let layers =
            dims.windows(2).enumerate().map(|(i, d)| self.linear(&format!("{name}.{i}"), d[0], d[1], true)).collect();
        Mlp { layers }
    }

    pub fn gru(&mut self, name: &str, input: usize, hidden: usize) -> Gru {
        let gate = |b: &mut Self, g: &str| {
            (
                b.linear_bound(&format!("{name}.x{g}"), input, hidden, hidden),
                b.linear_bound(&format!("{name}.h{g}"), hidden, hidden, hidden),
            )
        };
        let (xr, hr) = gate(self, "r");
        let (xz, hz) = gate(self, "z");
        let (xn, hn) = gate(self, "n");
        Gru { xr, hr, xz, hz, xn, hn }
    }

    /// Linear layer whose init bound uses `bound_dim` rather than the fan-in.
    fn linear_bound(&mut self, name: &str, fan_in: usize, fan_out: usize, bound_dim: usize) -> Linear {
        let bound = 1.0 / (bound_dim as f64).sqrt();
        let w = self.params.push(format!("{name}.w"), uniform(self.rng, &[fan_in, fan_out], bound));
        let b = self.params.push(format!("{name}.b"), uniform(self.rng, &[fan_out], bound));
        Linear { w, b: Some(b) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// `x: [.., in] -> [.., out]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.p(self.w);
        let y = g.tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.p(b);
                g.tape.add_tiled(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let (w, b) = (g.p(self.w), g.p(self.b));
        let y = g.tape.conv2d(x, w);
        g.tape.add_tiled(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub g: ParamId,
    pub b: ParamId,
}

impl Norm {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let (gain, bias) = (g.p(self.g), g.p(self.b));
        g.tape.layer_norm(x, gain, bias, LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, mut x: Var) -> Var {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, x);
            if i < last {
                x = g.tape.relu(x);
            }
        }
        x
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| std::iter::once(l.w).chain(l.b))
    }
}

/// Gated recurrent unit cell with separate input and hidden biases.
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    xr: Linear,
    hr: Linear,
    xz: Linear,
    hz: Linear,
    xn: Linear,
    hn: Linear,
}

impl Gru {
    /// `x: [K, in]`, `h: [K, hidden]` -> next hidden state.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var, h: Var) -> Var {
        let gate = |g: &mut Graph<T>, a: &Linear, b: &Linear| {
            let (u, v) = (a.forward(g, x), b.forward(g, h));
            let s = g.tape.add(u, v);
            g.tape.sigmoid(s)
        };
        let r = gate(g, &self.xr, &self.hr);
        let z = gate(g, &self.xz, &self.hz);
        let xn = self.xn.forward(g, x);
        let hn = self.hn.forward(g, h);
        let rhn = g.tape.mul(r, hn);
        let pre = g.tape.add(xn, rhn);
        let n = g.tape.tanh(pre);
        // h' = (1 - z) n + z h = n + z (h - n)
        let d = g.tape.sub(h, n);
        let zd = g.tape.mul(z, d);
        g.tape.add(n, zd)
    }
}
