//! Encoder, slot binding, slot manipulation and the broadcast decoder.
//!
//! Everything runs on a [`Graph`], so the same code path serves training
//! (trainable graph, f32), inference (frozen graph) and gradient checks
//! (f64). Tensors are channels-last; pixel `n = y * M + x`.

mod checkpoint;
mod gradcheck;
mod layers;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{check_gradients, group_errors, GradSample, GroupError};
pub use layers::{Conv, Gru, Linear, Mlp, Norm};
pub use params::{Graph, ParamId, Params};

use crate::augment::{InstructionSet, PROPERTY_RANGES};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Real, Tensor, Var};
pub(crate) use layers::Builder;

/// Added to attention before the weighted mean.
pub const ATTN_EPS: f64 = 1e-8;

/// Architecture hyperparameters. Stored verbatim in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub num_slots: usize,
    pub slot_dim: usize,
    pub iters: usize,
    pub enc_hidden: usize,
    pub enc_kernel: usize,
    pub dec_hidden: usize,
    pub dec_kernel: usize,
    pub mlp_hidden: usize,
    pub prop_hidden: usize,
    pub ark_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_slots: 5,
            slot_dim: 64,
            iters: 3,
            enc_hidden: 64,
            enc_kernel: 5,
            dec_hidden: 64,
            dec_kernel: 3,
            mlp_hidden: 128,
            prop_hidden: 64,
            ark_kernel: 5,
        }
    }
}

pub const ENCODER_CONVS: usize = 4;
/// Hidden decoder convolutions; the output convolution makes six.
pub const DECODER_CONVS: usize = 5;

impl ModelConfig {
    /// Tiny configuration for gradient checks.
    pub fn micro() -> Self {
        Self {
            image_size: 16,
            num_slots: 3,
            slot_dim: 8,
            iters: 2,
            enc_hidden: 6,
            enc_kernel: 3,
            dec_hidden: 6,
            dec_kernel: 3,
            mlp_hidden: 12,
            prop_hidden: 6,
            ark_kernel: 5,
        }
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("num_slots", self.num_slots),
            ("slot_dim", self.slot_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("prop_hidden", self.prop_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, k) in
            [("enc_kernel", self.enc_kernel), ("dec_kernel", self.dec_kernel), ("ark_kernel", self.ark_kernel)]
        {
            if k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        Ok(())
    }
}

/// Where every sub-network's tensors live inside [`Params`].
#[derive(Clone, Debug)]
pub struct Layout {
    enc_convs: Vec<Conv>,
    enc_pos: Linear,
    enc_norm: Norm,
    enc_mlp: Mlp,
    mu: ParamId,
    log_sigma: ParamId,
    norm_inputs: Norm,
    to_k: Linear,
    to_q: Linear,
    to_v: Linear,
    norm_slots: Norm,
    gru: Gru,
    norm_mlp: Norm,
    slot_mlp: Mlp,
    ark: ParamId,
    prop_encs: [Mlp; 3],
    manip_norm: Norm,
    manip_mlp: Mlp,
    dec_pos: Linear,
    dec_convs: Vec<Conv>,
    dec_rgb: Conv,
    dec_alpha: Conv,
}

impl Layout {
    pub fn ark(&self) -> ParamId {
        self.ark
    }

    pub fn mu(&self) -> ParamId {
        self.mu
    }

    pub fn log_sigma(&self) -> ParamId {
        self.log_sigma
    }

    /// Every parameter of the manipulation path (PropEncs and the residual MLP).
    pub fn manip_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.prop_encs.iter().flat_map(Mlp::ids).collect();
        ids.extend([self.manip_norm.g, self.manip_norm.b]);
        ids.extend(self.manip_mlp.ids());
        ids
    }

    /// Output-layer parameters of the decoder.
    pub fn decoder_output_ids(&self) -> [ParamId; 4] {
        [self.dec_rgb.w, self.dec_rgb.b, self.dec_alpha.w, self.dec_alpha.b]
    }
}

/// Parameter group of a tensor name (its first dotted component).
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

fn build<T: Real, R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> (Layout, Params<T>) {
    let mut params = Params::default();
    let mut b = Builder { params: &mut params, rng };
    let (h, d) = (cfg.enc_hidden, cfg.slot_dim);

    let enc_convs = (0..ENCODER_CONVS)
        .map(|i| b.conv(&format!("encoder.conv{i}"), cfg.enc_kernel, if i == 0 { 3 } else { h }, h))
        .collect();
    let enc_pos = b.linear("encoder.pos", 4, h, true);
    let enc_norm = b.norm("encoder.norm", h);
    let enc_mlp = b.mlp("encoder.mlp", &[h, h, h]);

    let xavier = (6.0 / (1.0 + d as f64)).sqrt();
    let mu = b.params.push("init.mu", params::uniform(b.rng, &[d], xavier));
    let log_sigma = b.params.push("init.log_sigma", params::uniform(b.rng, &[d], xavier));

    let norm_inputs = b.norm("binding.norm_inputs", h);
    let to_k = b.linear("binding.k", h, d, false);
    let to_q = b.linear("binding.q", d, d, false);
    let to_v = b.linear("binding.v", h, d, false);
    let norm_slots = b.norm("binding.norm_slots", d);
    let gru = b.gru("binding.gru", d, d);
    let norm_mlp = b.norm("binding.norm_mlp", d);
    let slot_mlp = b.mlp("binding.mlp", &[d, cfg.mlp_hidden, d]);

    // Gaussian-shaped low-pass start (sigma = 1 px) for the refining kernel.
    let ak = cfg.ark_kernel;
    let c = (ak / 2) as f64;
    let ark_init = Tensor::from_fn(&[ak, ak], |i| {
        let (y, x) = ((i / ak) as f64 - c, (i % ak) as f64 - c);
        T::of(-(x * x + y * y) / 2.0)
    });
    let ark = b.params.push("ark.logits", ark_init);

    let p = cfg.prop_hidden;
    let prop_names = ["scale", "translate", "color"];
    let prop_encs = std::array::from_fn(|j| {
        let (lo, hi) = PROPERTY_RANGES[j];
        b.mlp(&format!("propenc.{}", prop_names[j]), &[hi - lo, p, p, d])
    });
    let manip_norm = b.norm("manip.norm", d);
    let manip_mlp = b.mlp("manip.mlp", &[d, cfg.mlp_hidden, d]);

    let dh = cfg.dec_hidden;
    let dec_pos = b.linear("decoder.pos", 4, d, true);
    let dec_convs = (0..DECODER_CONVS)
        .map(|i| b.conv(&format!("decoder.conv{i}"), cfg.dec_kernel, if i == 0 { d } else { dh }, dh))
        .collect();
    let dec_rgb = b.conv("decoder.rgb", 3, dh, 3);
    let dec_alpha = b.conv("decoder.alpha", 3, dh, 1);

    let layout = Layout {
        enc_convs,
        enc_pos,
        enc_norm,
        enc_mlp,
        mu,
        log_sigma,
        norm_inputs,
        to_k,
        to_q,
        to_v,
        norm_slots,
        gru,
        norm_mlp,
        slot_mlp,
        ark,
        prop_encs,
        manip_norm,
        manip_mlp,
        dec_pos,
        dec_convs,
        dec_rgb,
        dec_alpha,
    };
    (layout, params)
}

/// `[M*M, 4]` grid of `(x, y, 1 - x, 1 - y)` at pixel centers.
pub fn position_grid<T: Real>(size: usize) -> Tensor<T> {
    let m = size as f64;
    let mut data = Vec::with_capacity(size * size * 4);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / m, (y as f64 + 0.5) / m);
            data.extend([u, v, 1.0 - u, 1.0 - v].map(T::of));
        }
    }
    Tensor::from_vec(&[size * size, 4], data)
}

/// Standard-normal draws for slot initialization.
pub fn slot_noise<T: Real, R: Rng + ?Sized>(rng: &mut R, k: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[k, d], |_| T::of(rng.sample::<f64, _>(StandardNormal)))
}

/// Slot vectors, `[K, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotSet<T = f32> {
    pub slots: Tensor<T>,
}

impl<T: Real> SlotSet<T> {
    pub fn num_slots(&self) -> usize {
        self.slots.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.slots.shape()[1]
    }

    pub fn row(&self, k: usize) -> &[T] {
        self.slots.row(k)
    }

    /// Gather rows in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &k in idx {
            data.extend_from_slice(self.row(k));
        }
        Self { slots: Tensor::from_vec(&[idx.len(), d], data) }
    }

    pub fn concat(sets: &[Self]) -> Self {
        let d = sets.first().map_or(0, Self::dim);
        let data: Vec<T> = sets.iter().flat_map(|s| s.slots.data().iter().copied()).collect();
        let k = data.len() / d.max(1);
        Self { slots: Tensor::from_vec(&[k, d], data) }
    }
}

/// Per-slot attention over pixels, `[K, N]`; columns sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnMaps<T = f32> {
    pub attn: Tensor<T>,
    pub size: usize,
}

impl<T: Real> AttnMaps<T> {
    pub fn positions(&self) -> Result<Vec<[f64; 2]>> {
        predict_positions(&self.attn, self.size)
    }

    /// Per-pixel argmax slot.
    pub fn labels(&self) -> Vec<usize> {
        argmax_columns(&self.attn)
    }
}

/// Decoder output for `K` slots over `N = M*M` pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult<T = f32> {
    /// `[K, N, 3]`, linear (unclamped).
    pub rgb: Tensor<T>,
    /// Alpha logits `[K, N]` before the cross-slot softmax.
    pub logits: Tensor<T>,
    /// `[K, N]`, softmax over slots.
    pub alpha: Tensor<T>,
    /// `[N, 3]`.
    pub composite: Tensor<T>,
    pub size: usize,
}

impl<T: Real> DecodeResult<T> {
    pub fn num_slots(&self) -> usize {
        self.alpha.shape()[0]
    }

    /// Composite clamped to `[0, 1]`.
    pub fn image(&self) -> Image {
        Image::from_tensor(&self.composite, self.size, self.size).expect("composite has M*M*3 values").clamped()
    }

    pub fn positions(&self) -> Result<Vec<[f64; 2]>> {
        predict_positions(&self.alpha, self.size)
    }

    pub fn labels(&self) -> Vec<usize> {
        argmax_columns(&self.alpha)
    }

    /// Fraction of total alpha mass held by each slot.
    pub fn areas(&self) -> Vec<f64> {
        let n = self.alpha.cols() as f64;
        (0..self.num_slots()).map(|k| self.alpha.row(k).iter().map(|v| v.f64()).sum::<f64>() / n).collect()
    }

    /// Heat map of one slot's alpha as a grey image.
    pub fn alpha_image(&self, k: usize) -> Image {
        let data = self.alpha.row(k).iter().flat_map(|v| [v.f64() as f32; 3]).collect();
        Image::from_vec(self.size, self.size, data).expect("alpha row has M*M values")
    }

    /// `rgb_k * alpha_k`, the object-level image of slot `k`.
    pub fn object_image(&self, k: usize) -> Image {
        let n = self.alpha.cols();
        let rgb = &self.rgb.data()[k * n * 3..(k + 1) * n * 3];
        let a = self.alpha.row(k);
        let data =
            rgb.chunks(3).zip(a).flat_map(|(c, &w)| [c[0] * w, c[1] * w, c[2] * w].map(|v| v.f64() as f32)).collect();
        Image::from_vec(self.size, self.size, data).expect("rgb row has M*M*3 values")
    }
}

fn argmax_columns<T: Real>(w: &Tensor<T>) -> Vec<usize> {
    let (k, n) = (w.shape()[0], w.cols());
    (0..n)
        .map(|p| {
            (0..k)
                .max_by(|&a, &b| {
                    let (x, y) = (w.data()[a * n + p], w.data()[b * n + p]);
                    x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
                })
                .unwrap_or(0)
        })
        .collect()
}

/// Center of mass of each `[K, M*M]` weight map in normalized coordinates.
pub fn predict_positions<T: Real>(weights: &Tensor<T>, size: usize) -> Result<Vec<[f64; 2]>> {
    let n = size * size;
    if weights.shape().len() != 2 || weights.cols() != n {
        return Err(Error::Shape(format!("weights {:?} are not [K, {n}]", weights.shape())));
    }
    let m = size as f64;
    (0..weights.shape()[0])
        .map(|k| {
            let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
            for (p, w) in weights.row(k).iter().enumerate() {
                let w = w.f64();
                sx += w * ((p % size) as f64 + 0.5) / m;
                sy += w * ((p / size) as f64 + 0.5) / m;
                total += w;
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::DegenerateSlot(k));
            }
            Ok([sx / total, sy / total])
        })
        .collect()
}

/// Symbolic decoder outputs on a graph.
#[derive(Clone, Copy, Debug)]
pub struct DecodeVars {
    pub rgb: Var,
    pub logits: Var,
    pub alpha: Var,
    pub composite: Var,
}

/// Architecture plus its parameters.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    config: ModelConfig,
    layout: Layout,
    params: Params<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, params) = build(&config, &mut rng);
        Ok(Self { config, layout, params })
    }

    /// Install externally supplied tensors. Names and shapes must match the
    /// architecture exactly.
    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        for (name, t) in params.iter() {
            let id = model.params.find(name).ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
            if model.params.get(id).shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {:?}, found {:?}",
                    model.params.get(id).shape(),
                    t.shape()
                )));
            }
            *model.params.get_mut(id) = t.clone();
        }
        if params.len() != model.params.len() {
            let missing: Vec<&str> = model.params.iter().map(|(n, _)| n).filter(|n| params.find(n).is_none()).collect();
            return Err(Error::Format(format!("missing tensors: {missing:?}")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), layout: self.layout.clone(), params: self.params.cast() }
    }

    pub fn graph(&self, trainable: bool) -> Graph<'_, T> {
        Graph::new(&self.params, trainable)
    }

    /// `img: [1, M, M, 3]` (or `[M, M, 3]`) -> features `[N, enc_hidden]`.
    pub fn encode(&self, g: &mut Graph<T>, img: &Tensor<T>) -> Result<Var> {
        let m = self.config.image_size;
        if img.numel() != m * m * 3 {
            return Err(Error::Shape(format!("image tensor {:?} does not match image size {m}", img.shape())));
        }
        let l = &self.layout;
        let mut x = g.constant(img.clone().reshape(&[1, m, m, 3]));
        for conv in &l.enc_convs {
            x = conv.forward(g, x);
            x = g.tape.relu(x);
        }
        let h = self.config.enc_hidden;
        let x = g.tape.reshape(x, &[m * m, h]);
        let grid = g.constant(position_grid(m));
        let pos = l.enc_pos.forward(g, grid);
        let x = g.tape.add(x, pos);
        let x = l.enc_norm.forward(g, x);
        Ok(l.enc_mlp.forward(g, x))
    }

    /// `mu + exp(log_sigma) * noise`, with `noise: [K, D]`.
    pub fn init_slots(&self, g: &mut Graph<T>, noise: &Tensor<T>) -> Result<Var> {
        let d = self.config.slot_dim;
        if noise.shape().len() != 2 || noise.cols() != d || noise.rows() == 0 {
            return Err(Error::Shape(format!("slot noise {:?} is not [K, {d}]", noise.shape())));
        }
        let (mu, ls) = (g.p(self.layout.mu), g.p(self.layout.log_sigma));
        let sigma = g.tape.exp(ls);
        let eps = g.constant(noise.clone());
        let scaled = g.tape.mul_tiled(eps, sigma);
        Ok(g.tape.add_tiled(scaled, mu))
    }

    /// Low-pass filter each slot's attention map with the shared kernel,
    /// then renormalize every pixel over slots. `attn: [N, K]`.
    pub fn ark_refine(&self, g: &mut Graph<T>, attn: Var) -> Var {
        let (m, ak) = (self.config.image_size, self.config.ark_kernel);
        let k = g.tape.shape(attn)[1];
        let logits = g.p(self.layout.ark);
        let flat = g.tape.reshape(logits, &[1, ak * ak]);
        let soft = g.tape.softmax_rows(flat);
        let kernel = g.tape.reshape(soft, &[ak, ak]);
        let maps = g.tape.reshape(attn, &[1, m, m, k]);
        let blurred = g.tape.depthwise_shared(maps, kernel);
        let flat = g.tape.reshape(blurred, &[m * m, k]);
        g.tape.normalize_rows(flat)
    }

    /// Iterative attention binding. Returns slots `[K, D]` and the refined
    /// attention `[N, K]` of the last iteration; with zero iterations the
    /// attention of the initial slots is returned and the slots are untouched.
    pub fn spatial_binding(&self, g: &mut Graph<T>, feats: Var, init: Var, iters: usize) -> Result<(Var, Var)> {
        let l = &self.layout;
        let d = self.config.slot_dim;
        let inputs = l.norm_inputs.forward(g, feats);
        let keys = l.to_k.forward(g, inputs);
        let values = l.to_v.forward(g, inputs);
        let scale = T::of(1.0 / (d as f64).sqrt());
        let attend = |g: &mut Graph<T>, slots: Var| {
            let s = l.norm_slots.forward(g, slots);
            let q = l.to_q.forward(g, s);
            let logits = g.tape.matmul_t(keys, false, q, true);
            let logits = g.tape.scale(logits, scale);
            let attn = g.tape.softmax_rows(logits);
            self.ark_refine(g, attn)
        };
        let mut slots = init;
        let mut last = None;
        for it in 0..iters {
            let attn = attend(g, slots);
            let w = g.tape.add_scalar(attn, T::of(ATTN_EPS));
            let w = g.tape.transpose(w);
            let w = g.tape.normalize_rows(w);
            let updates = g.tape.matmul(w, values);
            slots = l.gru.forward(g, updates, slots);
            let h = l.norm_mlp.forward(g, slots);
            let h = l.slot_mlp.forward(g, h);
            slots = g.tape.add(slots, h);
            if !g.value(slots).is_finite() {
                return Err(Error::NonFinite(format!("slots after binding iteration {it}")));
            }
            last = Some(attn);
        }
        let attn = match last {
            Some(a) => a,
            None => attend(g, slots),
        };
        Ok((slots, attn))
    }

    /// Add each property's encoded instruction, then a residual MLP.
    pub fn slot_manip(&self, g: &mut Graph<T>, slots: Var, insts: &InstructionSet) -> Result<Var> {
        let k = g.tape.shape(slots)[0];
        if insts.len() != k {
            return Err(Error::Shape(format!("{} instruction rows for {k} slots", insts.len())));
        }
        insts.validate()?;
        let flat = insts.normalized();
        let l = &self.layout;
        let mut slots = slots;
        for (enc, &(lo, hi)) in l.prop_encs.iter().zip(PROPERTY_RANGES.iter()) {
            let w = hi - lo;
            let data = (0..k).flat_map(|r| flat[r * 6 + lo..r * 6 + hi].iter().map(|&v| T::of(v))).collect();
            let x = g.constant(Tensor::from_vec(&[k, w], data));
            let v = enc.forward(g, x);
            slots = g.tape.add(slots, v);
        }
        let h = l.manip_norm.forward(g, slots);
        let h = l.manip_mlp.forward(g, h);
        Ok(g.tape.add(slots, h))
    }

    /// Decode each slot independently into RGB and an alpha logit, then mix.
    pub fn decode(&self, g: &mut Graph<T>, slots: Var) -> DecodeVars {
        let l = &self.layout;
        let (m, d) = (self.config.image_size, self.config.slot_dim);
        let n = m * m;
        let k = g.tape.shape(slots)[0];
        let b = g.tape.repeat_rows(slots, n);
        let b = g.tape.reshape(b, &[k, n, d]);
        let grid = g.constant(position_grid(m));
        let pos = l.dec_pos.forward(g, grid);
        let b = g.tape.add_tiled(b, pos);
        let mut x = g.tape.reshape(b, &[k, m, m, d]);
        for conv in &l.dec_convs {
            x = conv.forward(g, x);
            x = g.tape.relu(x);
        }
        let rgb = l.dec_rgb.forward(g, x);
        let rgb = g.tape.reshape(rgb, &[k, n, 3]);
        let logits = l.dec_alpha.forward(g, x);
        let logits = g.tape.reshape(logits, &[k, n]);
        let lt = g.tape.transpose(logits);
        let soft = g.tape.softmax_rows(lt);
        let alpha = g.tape.transpose(soft);
        let composite = g.tape.composite(rgb, alpha);
        DecodeVars { rgb, logits, alpha, composite }
    }

    fn collect_decode(&self, g: &Graph<T>, v: DecodeVars) -> DecodeResult<T> {
        DecodeResult {
            rgb: g.value(v.rgb).clone(),
            logits: g.value(v.logits).clone(),
            alpha: g.value(v.alpha).clone(),
            composite: g.value(v.composite).clone(),
            size: self.config.image_size,
        }
    }

    fn image_tensor(&self, img: &Image) -> Result<Tensor<T>> {
        let m = self.config.image_size;
        if img.width() != m || img.height() != m {
            return Err(Error::Shape(format!("image is {}x{}, model expects {m}x{m}", img.width(), img.height())));
        }
        Ok(img.to_tensor())
    }

    /// Encode and bind one image with slot noise drawn from `noise_seed`.
    pub fn bind_image(&self, img: &Image, noise_seed: u64) -> Result<(SlotSet<T>, AttnMaps<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = slot_noise(&mut rng, self.config.num_slots, self.config.slot_dim);
        self.bind_with_noise(img, &noise)
    }

    pub fn bind_with_noise(&self, img: &Image, noise: &Tensor<T>) -> Result<(SlotSet<T>, AttnMaps<T>)> {
        let x = self.image_tensor(img)?;
        let mut g = self.graph(false);
        let feats = self.encode(&mut g, &x)?;
        let init = self.init_slots(&mut g, noise)?;
        let (slots, attn) = self.spatial_binding(&mut g, feats, init, self.config.iters)?;
        Ok((
            SlotSet { slots: g.value(slots).clone() },
            AttnMaps { attn: g.value(attn).transpose(), size: self.config.image_size },
        ))
    }

    pub fn manipulate(&self, slots: &SlotSet<T>, insts: &InstructionSet) -> Result<SlotSet<T>> {
        let mut g = self.graph(false);
        let s = g.constant(slots.slots.clone());
        let out = self.slot_manip(&mut g, s, insts)?;
        let out = g.value(out).clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("manipulated slots".into()));
        }
        Ok(SlotSet { slots: out })
    }

    pub fn render(&self, slots: &SlotSet<T>) -> Result<DecodeResult<T>> {
        if slots.num_slots() == 0 {
            return Err(Error::Empty("no slots to decode".into()));
        }
        if slots.dim() != self.config.slot_dim {
            return Err(Error::Shape(format!(
                "slot dim {} does not match model slot dim {}",
                slots.dim(),
                self.config.slot_dim
            )));
        }
        let mut g = self.graph(false);
        let s = g.constant(slots.slots.clone());
        let v = self.decode(&mut g, s);
        Ok(self.collect_decode(&g, v))
    }
}
