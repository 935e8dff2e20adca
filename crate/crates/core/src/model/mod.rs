//! A small recurrent transducer: tanh-RNN encoder with a linear projection,
//! embedding + tanh-RNN prediction network, and an additive tanh joint.
//!
//! All parameters live in one flat `Vec<f64>`; the layout is fixed by
//! [`ModelConfig`] so finite-difference checks can address any coordinate.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::StepScorer;
use crate::lattice::JointLogits;
use crate::logmath::log_softmax;
use crate::{Error, Result, BLANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Vocabulary size excluding blank.
    pub vocab: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, vocab: usize) -> Self {
        Self {
            feature_dim,
            vocab,
            hidden: 64,
            embed: 32,
        }
    }

    pub fn symbols(&self) -> usize {
        self.vocab + 1
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of every weight block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub enc_in: Range<usize>,
    pub enc_rec: Range<usize>,
    pub enc_bias: Range<usize>,
    pub enc_proj: Range<usize>,
    pub enc_proj_bias: Range<usize>,
    pub embedding: Range<usize>,
    pub pred_in: Range<usize>,
    pub pred_rec: Range<usize>,
    pub pred_bias: Range<usize>,
    pub out: Range<usize>,
    pub out_bias: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let (d, h, e, k) = (c.feature_dim, c.hidden, c.embed, c.symbols());
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let enc_in = take(h * d);
        let enc_rec = take(h * h);
        let enc_bias = take(h);
        let enc_proj = take(h * h);
        let enc_proj_bias = take(h);
        let embedding = take(k * e);
        let pred_in = take(h * e);
        let pred_rec = take(h * h);
        let pred_bias = take(h);
        let out = take(k * h);
        let out_bias = take(k);
        Self {
            enc_in,
            enc_rec,
            enc_bias,
            enc_proj,
            enc_proj_bias,
            embedding,
            pred_in,
            pred_rec,
            pred_bias,
            out,
            out_bias,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
    generation: u64,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let layout = config.layout();
        Self {
            values: vec![0.0; layout.total],
            layout,
            config,
            generation: 0,
        }
    }

    /// Uniform(−0.08, 0.08) initialization from a ChaCha8 stream seeded with `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        for v in &mut p.values {
            *v = rng.random_range(-0.08..0.08);
        }
        p
    }

    pub fn from_flat(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        let layout = config.layout();
        if values.len() != layout.total {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                layout.total,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite parameter"));
        }
        Ok(Self {
            config,
            layout,
            values,
            generation: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    /// Mutable flat view. Invalidates every activation cache taken earlier.
    pub fn flat_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.values
    }

    fn block(&self, r: &Range<usize>) -> &[f64] {
        &self.values[r.clone()]
    }

    /// Encoder output `[T][H]` for row-major features `[T][D]`.
    fn encode(&self, features: &[f64], frames: usize) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let (d, h) = (c.feature_dim, c.hidden);
        let l = &self.layout;
        let (w_in, w_rec, b) = (self.block(&l.enc_in), self.block(&l.enc_rec), self.block(&l.enc_bias));
        let (proj, proj_b) = (self.block(&l.enc_proj), self.block(&l.enc_proj_bias));
        let mut hidden = vec![0.0; frames * h];
        let mut enc = vec![0.0; frames * h];
        for t in 0..frames {
            let x = &features[t * d..(t + 1) * d];
            for i in 0..h {
                let mut a = b[i] + dot(&w_in[i * d..(i + 1) * d], x);
                if t > 0 {
                    a += dot(&w_rec[i * h..(i + 1) * h], &hidden[(t - 1) * h..t * h]);
                }
                hidden[t * h + i] = a.tanh();
            }
            let ht = &hidden[t * h..(t + 1) * h];
            for i in 0..h {
                enc[t * h + i] = proj_b[i] + dot(&proj[i * h..(i + 1) * h], ht);
            }
        }
        (hidden, enc)
    }

    /// One prediction-network step from `prev` (zero for the start state).
    fn predict_step(&self, prev: Option<&[f64]>, symbol: usize) -> Vec<f64> {
        let c = &self.config;
        let (e, h) = (c.embed, c.hidden);
        let l = &self.layout;
        let emb = &self.block(&l.embedding)[symbol * e..(symbol + 1) * e];
        let (w_in, w_rec, b) = (self.block(&l.pred_in), self.block(&l.pred_rec), self.block(&l.pred_bias));
        (0..h)
            .map(|i| {
                let mut a = b[i] + dot(&w_in[i * e..(i + 1) * e], emb);
                if let Some(p) = prev {
                    a += dot(&w_rec[i * h..(i + 1) * h], p);
                }
                a.tanh()
            })
            .collect()
    }

    /// Joint hidden `tanh(enc + pred)` and output logits.
    fn joint(&self, enc: &[f64], pred: &[f64], z: &mut [f64], logits: &mut [f64]) {
        let h = self.config.hidden;
        let l = &self.layout;
        let (out, out_b) = (self.block(&l.out), self.block(&l.out_bias));
        for i in 0..h {
            z[i] = (enc[i] + pred[i]).tanh();
        }
        for (k, logit) in logits.iter_mut().enumerate() {
            *logit = out_b[k] + dot(&out[k * h..(k + 1) * h], z);
        }
    }

    fn check_features(&self, features: &[f64], frames: usize) -> Result<()> {
        if frames == 0 {
            return Err(Error::contract("need at least one frame"));
        }
        if features.len() != frames * self.config.feature_dim {
            return Err(Error::contract(format!(
                "features have {} values, expected T={frames} × D={}",
                features.len(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    /// Joint logits of `labels` over all `(t, u)` nodes, with activations for [`Self::backward`].
    pub fn forward_lattice(
        &self,
        features: &[f64],
        frames: usize,
        labels: &[usize],
    ) -> Result<(JointLogits, ForwardCache)> {
        self.check_features(features, frames)?;
        let c = self.config;
        if let Some(&bad) = labels.iter().find(|&&y| y == BLANK || y > c.vocab) {
            return Err(Error::contract(format!("label {bad} outside 1..={}", c.vocab)));
        }
        let (h, k) = (c.hidden, c.symbols());
        let width = labels.len() + 1;
        let (enc_hidden, enc) = self.encode(features, frames);

        let mut pred = Vec::with_capacity(width * h);
        let first = self.predict_step(None, BLANK);
        pred.extend_from_slice(&first);
        for (u, &y) in labels.iter().enumerate() {
            let next = self.predict_step(Some(&pred[u * h..(u + 1) * h]), y);
            pred.extend_from_slice(&next);
        }

        let mut joint_hidden = vec![0.0; frames * width * h];
        let mut logits = vec![0.0; frames * width * k];
        for t in 0..frames {
            for u in 0..width {
                let node = t * width + u;
                self.joint(
                    &enc[t * h..(t + 1) * h],
                    &pred[u * h..(u + 1) * h],
                    &mut joint_hidden[node * h..(node + 1) * h],
                    &mut logits[node * k..(node + 1) * k],
                );
            }
        }
        let lattice = JointLogits::new(frames, labels.len(), c.vocab, logits)?;
        let cache = ForwardCache {
            generation: self.generation,
            config: c,
            frames,
            features: features.to_vec(),
            labels: labels.to_vec(),
            enc_hidden,
            pred,
            joint_hidden,
        };
        Ok((lattice, cache))
    }

    /// Gradient of `Σ lattice_grad[t][u][k] · logits[t][u][k]` with respect to
    /// every parameter, by reverse-mode accumulation through the cached forward.
    pub fn backward(&self, cache: &ForwardCache, lattice_grad: &JointLogits) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.values.len()];
        self.backward_into(cache, lattice_grad, &mut grad)?;
        Ok(grad)
    }

    /// As [`Self::backward`], accumulating into `grad`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        lattice_grad: &JointLogits,
        grad: &mut [f64],
    ) -> Result<()> {
        if cache.generation != self.generation || cache.config != self.config {
            return Err(Error::contract("activation cache is stale for these parameters"));
        }
        if grad.len() != self.values.len() {
            return Err(Error::contract("gradient buffer has the wrong length"));
        }
        let c = self.config;
        let (d, h, e, k) = (c.feature_dim, c.hidden, c.embed, c.symbols());
        let frames = cache.frames;
        let width = cache.labels.len() + 1;
        if (lattice_grad.frames(), lattice_grad.label_len(), lattice_grad.vocab())
            != (frames, cache.labels.len(), c.vocab)
        {
            return Err(Error::contract("lattice gradient shape does not match the cached forward"));
        }
        let l = &self.layout;
        let out = self.block(&l.out);

        let mut d_enc = vec![0.0; frames * h];
        let mut d_pred = vec![0.0; width * h];
        let mut dz = vec![0.0; h];
        for t in 0..frames {
            for u in 0..width {
                let node = t * width + u;
                let dl = lattice_grad.slot(t, u);
                if dl.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let z = &cache.joint_hidden[node * h..(node + 1) * h];
                dz.iter_mut().for_each(|v| *v = 0.0);
                for (kk, &g) in dl.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    grad[l.out_bias.start + kk] += g;
                    let row = &mut grad[l.out.start + kk * h..l.out.start + (kk + 1) * h];
                    axpy(row, g, z);
                    axpy(&mut dz, g, &out[kk * h..(kk + 1) * h]);
                }
                for i in 0..h {
                    let da = dz[i] * (1.0 - z[i] * z[i]);
                    d_enc[t * h + i] += da;
                    d_pred[u * h + i] += da;
                }
            }
        }
        debug_assert_eq!(k, lattice_grad.symbols());

        // encoder projection, then backprop through time
        let (proj, w_rec) = (self.block(&l.enc_proj), self.block(&l.enc_rec));
        let w_rec_pred = self.block(&l.pred_rec);
        let w_in_pred = self.block(&l.pred_in);
        let mut carry = vec![0.0; h];
        for t in (0..frames).rev() {
            let ht = &cache.enc_hidden[t * h..(t + 1) * h];
            let de = &d_enc[t * h..(t + 1) * h];
            let mut dh = std::mem::take(&mut carry);
            for i in 0..h {
                grad[l.enc_proj_bias.start + i] += de[i];
                let row = &mut grad[l.enc_proj.start + i * h..l.enc_proj.start + (i + 1) * h];
                axpy(row, de[i], ht);
                axpy(&mut dh, de[i], &proj[i * h..(i + 1) * h]);
            }
            let x = &cache.features[t * d..(t + 1) * d];
            let mut next_carry = vec![0.0; h];
            for i in 0..h {
                let dpre = dh[i] * (1.0 - ht[i] * ht[i]);
                if dpre == 0.0 {
                    continue;
                }
                grad[l.enc_bias.start + i] += dpre;
                axpy(&mut grad[l.enc_in.start + i * d..l.enc_in.start + (i + 1) * d], dpre, x);
                if t > 0 {
                    let prev = &cache.enc_hidden[(t - 1) * h..t * h];
                    axpy(&mut grad[l.enc_rec.start + i * h..l.enc_rec.start + (i + 1) * h], dpre, prev);
                    axpy(&mut next_carry, dpre, &w_rec[i * h..(i + 1) * h]);
                }
            }
            carry = next_carry;
        }

        let emb = self.block(&l.embedding);
        let mut carry = vec![0.0; h];
        for u in (0..width).rev() {
            let g = &cache.pred[u * h..(u + 1) * h];
            let symbol = if u == 0 { BLANK } else { cache.labels[u - 1] };
            let x = &emb[symbol * e..(symbol + 1) * e];
            let mut next_carry = vec![0.0; h];
            let mut d_emb = vec![0.0; e];
            for i in 0..h {
                let dpre = (d_pred[u * h + i] + carry[i]) * (1.0 - g[i] * g[i]);
                if dpre == 0.0 {
                    continue;
                }
                grad[l.pred_bias.start + i] += dpre;
                axpy(&mut grad[l.pred_in.start + i * e..l.pred_in.start + (i + 1) * e], dpre, x);
                axpy(&mut d_emb, dpre, &w_in_pred[i * e..(i + 1) * e]);
                if u > 0 {
                    let prev = &cache.pred[(u - 1) * h..u * h];
                    axpy(&mut grad[l.pred_rec.start + i * h..l.pred_rec.start + (i + 1) * h], dpre, prev);
                    axpy(&mut next_carry, dpre, &w_rec_pred[i * h..(i + 1) * h]);
                }
            }
            axpy(
                &mut grad[l.embedding.start + symbol * e..l.embedding.start + (symbol + 1) * e],
                1.0,
                &d_emb,
            );
            carry = next_carry;
        }
        Ok(())
    }

    /// Step-wise scorer over the encoded `features`, for beam search.
    pub fn scorer(&self, features: &[f64], frames: usize) -> Result<ModelScorer<'_>> {
        self.check_features(features, frames)?;
        let (_, enc) = self.encode(features, frames);
        Ok(ModelScorer {
            params: self,
            frames,
            enc,
        })
    }
}

/// Activations saved by [`ModelParams::forward_lattice`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    config: ModelConfig,
    frames: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    enc_hidden: Vec<f64>,
    pred: Vec<f64>,
    joint_hidden: Vec<f64>,
}

impl ForwardCache {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

pub struct ModelScorer<'a> {
    params: &'a ModelParams,
    frames: usize,
    enc: Vec<f64>,
}

impl StepScorer for ModelScorer<'_> {
    type State = Vec<f64>;

    fn frames(&self) -> usize {
        self.frames
    }

    fn vocab(&self) -> usize {
        self.params.config.vocab
    }

    fn start(&self) -> Vec<f64> {
        self.params.predict_step(None, BLANK)
    }

    fn extend(&self, state: &Vec<f64>, symbol: usize) -> Vec<f64> {
        self.params.predict_step(Some(state), symbol)
    }

    fn log_probs(&self, t: usize, state: &Vec<f64>) -> Vec<f64> {
        let h = self.params.config.hidden;
        let mut z = vec![0.0; h];
        let mut logits = vec![0.0; self.params.config.symbols()];
        self.params
            .joint(&self.enc[t * h..(t + 1) * h], state, &mut z, &mut logits);
        log_softmax(&logits)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
