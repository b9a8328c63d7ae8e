//! Encoder-decoder transformer allocator.
//!
//! Inputs are projected to the embedding size and given sinusoidal position
//! encodings, then pass through `n_layers` encoder blocks (causal multi-head
//! self-attention and a ReLU feed-forward sublayer, each followed by dropout,
//! a residual connection and layer normalization). A single learned query
//! cross-attends over the encoder output to produce the one decoder step,
//! which a dense head maps to softmax weights.

use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::ModelError;
use crate::autodiff::{Graph, Mode, ParameterSet, Tensor, Var};
use crate::rng::{self, site, StreamRng};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerAllocatorConfig {
    #[serde(default = "default_embedding")]
    pub embedding_size: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    /// Coupled L2 coefficient used by the trainer.
    #[serde(default = "default_l2")]
    pub l2: f64,
    pub input_features: usize,
    pub n_assets: usize,
}

fn default_embedding() -> usize {
    32
}
fn default_heads() -> usize {
    2
}
fn default_layers() -> usize {
    1
}
fn default_dropout() -> f64 {
    0.05
}
fn default_lookback() -> usize {
    504
}
fn default_l2() -> f64 {
    1e-5
}

/// Output of a traced forward pass.
pub struct TransformerTrace {
    pub weights: Var,
    /// Attention probabilities: per encoder layer and head a
    /// `batch x T x T` tensor, then per decoder head a `batch x 1 x T` one.
    pub attention: Vec<Var>,
}

struct Attn<'a> {
    prefix: &'a str,
}

impl Attn<'_> {
    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }
}

impl TransformerAllocatorConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("embedding_size", self.embedding_size),
            ("n_heads", self.n_heads),
            ("lookback", self.lookback),
            ("input_features", self.input_features),
            ("n_assets", self.n_assets),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.embedding_size % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "embedding_size {} is not divisible by n_heads {}",
                self.embedding_size, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn ff_size(&self) -> usize {
        4 * self.embedding_size
    }

    pub fn init(&self, seed: u64) -> Result<ParameterSet, ModelError> {
        self.check()?;
        let (f, e, a) = (self.input_features, self.embedding_size, self.n_assets);
        let mut rng = rng::stream(seed, site::INIT);
        let mut p = ParameterSet::new();
        let dense = |p: &mut ParameterSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut StreamRng| {
            p.insert(format!("{name}.weight"), glorot_uniform(rng, fan_in, fan_out));
            p.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        };
        let norm = |p: &mut ParameterSet, name: &str| {
            p.insert(format!("{name}.gamma"), Tensor::full(&[e], 1.0));
            p.insert(format!("{name}.beta"), Tensor::zeros(&[e]));
        };

        dense(&mut p, "input", f, e, &mut rng);
        for l in 0..self.n_layers {
            for part in ["q", "k", "v", "o"] {
                dense(&mut p, &format!("enc{l}.attn.{part}"), e, e, &mut rng);
            }
            norm(&mut p, &format!("enc{l}.ln1"));
            dense(&mut p, &format!("enc{l}.ff1"), e, self.ff_size(), &mut rng);
            dense(&mut p, &format!("enc{l}.ff2"), self.ff_size(), e, &mut rng);
            norm(&mut p, &format!("enc{l}.ln2"));
        }
        let query = glorot_uniform(&mut rng, 1, e).reshaped(&[e])?;
        p.insert("dec.query", query);
        for part in ["q", "k", "v", "o"] {
            dense(&mut p, &format!("dec.attn.{part}"), e, e, &mut rng);
        }
        norm(&mut p, "dec.ln");
        dense(&mut p, "head", e, a, &mut rng);
        Ok(p)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        x: Var,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var, ModelError> {
        Ok(self.forward_traced(g, params, x, mode, rng)?.weights)
    }

    pub fn forward_traced(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        x: Var,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<TransformerTrace, ModelError> {
        self.check()?;
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.lookback || s[2] != self.input_features {
            return Err(ModelError::InputShape {
                expected: vec![0, self.lookback, self.input_features],
                got: s,
            });
        }
        let (bs, t, f, e) = (s[0], s[1], s[2], self.embedding_size);
        let mut attention = Vec::new();

        let flat = g.reshape(x, &[bs * t, f])?;
        let emb = self.dense(g, params, "input", flat)?;
        let emb = g.reshape(emb, &[bs, t, e])?;
        let pe = g.constant(positional_encoding(bs, t, e))?;
        let mut h = g.add(emb, pe)?;

        for l in 0..self.n_layers {
            let prefix = format!("enc{l}.attn");
            let attn = Attn { prefix: &prefix };
            let a = self.self_attention(g, params, &attn, h, &mut attention)?;
            let a = g.dropout(a, self.dropout, mode, rng)?;
            let res = g.add(h, a)?;
            h = self.layer_norm(g, params, &format!("enc{l}.ln1"), res)?;

            let flat = g.reshape(h, &[bs * t, e])?;
            let inner = self.dense(g, params, &format!("enc{l}.ff1"), flat)?;
            let inner = g.relu(inner)?;
            let ff = self.dense(g, params, &format!("enc{l}.ff2"), inner)?;
            let ff = g.reshape(ff, &[bs, t, e])?;
            let ff = g.dropout(ff, self.dropout, mode, rng)?;
            let res = g.add(h, ff)?;
            h = self.layer_norm(g, params, &format!("enc{l}.ln2"), res)?;
        }

        let dec = self.cross_attention(g, params, h, &mut attention)?;
        let dec = g.dropout(dec, self.dropout, mode, rng)?;
        let query = g.param(params, "dec.query")?;
        let res = g.add_bias(dec, query)?;
        let dec = self.layer_norm(g, params, "dec.ln", res)?;

        let logits = self.dense(g, params, "head", dec)?;
        let weights = g.softmax(logits)?;
        Ok(TransformerTrace { weights, attention })
    }

    fn dense(&self, g: &mut Graph, params: &ParameterSet, name: &str, x: Var) -> Result<Var, ModelError> {
        let w = g.param(params, &format!("{name}.weight"))?;
        let b = g.param(params, &format!("{name}.bias"))?;
        let y = g.matmul(x, w)?;
        Ok(g.add_bias(y, b)?)
    }

    fn layer_norm(&self, g: &mut Graph, params: &ParameterSet, name: &str, x: Var) -> Result<Var, ModelError> {
        let gamma = g.param(params, &format!("{name}.gamma"))?;
        let beta = g.param(params, &format!("{name}.beta"))?;
        Ok(g.layer_norm(x, gamma, beta, LN_EPS)?)
    }

    /// Causal multi-head self-attention on `batch x T x E`.
    fn self_attention(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        attn: &Attn<'_>,
        h: Var,
        trace: &mut Vec<Var>,
    ) -> Result<Var, ModelError> {
        let s = g.shape(h).to_vec();
        let (bs, t, e) = (s[0], s[1], s[2]);
        let d = e / self.n_heads;
        let flat = g.reshape(h, &[bs * t, e])?;
        let proj = |part: &str, g: &mut Graph| -> Result<Var, ModelError> {
            let y = self.dense(g, params, &attn.name(part), flat)?;
            Ok(g.reshape(y, &[bs, t, e])?)
        };
        let q = proj("q", g)?;
        let k = proj("k", g)?;
        let v = proj("v", g)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        for head in 0..self.n_heads {
            let qh = g.slice(q, 2, head * d, (head + 1) * d)?;
            let kh = g.slice(k, 2, head * d, (head + 1) * d)?;
            let vh = g.slice(v, 2, head * d, (head + 1) * d)?;
            let kt = g.transpose(kh)?;
            let scores = g.batch_matmul(qh, kt)?;
            let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
            let probs = g.causal_softmax(scores)?;
            trace.push(probs);
            heads.push(g.batch_matmul(probs, vh)?);
        }
        let merged = g.concat(&heads)?;
        let merged = g.reshape(merged, &[bs * t, e])?;
        let out = self.dense(g, params, &attn.name("o"), merged)?;
        Ok(g.reshape(out, &[bs, t, e])?)
    }

    /// The learned query attends over every encoder position; returns
    /// `batch x E`.
    fn cross_attention(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        memory: Var,
        trace: &mut Vec<Var>,
    ) -> Result<Var, ModelError> {
        let s = g.shape(memory).to_vec();
        let (bs, t, e) = (s[0], s[1], s[2]);
        let d = e / self.n_heads;
        let query = g.param(params, "dec.query")?;
        let query = g.reshape(query, &[1, e])?;
        let q = self.dense(g, params, "dec.attn.q", query)?;
        let flat = g.reshape(memory, &[bs * t, e])?;
        let k = self.dense(g, params, "dec.attn.k", flat)?;
        let v = self.dense(g, params, "dec.attn.v", flat)?;
        let v = g.reshape(v, &[bs, t, e])?;
        let mut heads = Vec::with_capacity(self.n_heads);
        for head in 0..self.n_heads {
            let qh = g.slice(q, 1, head * d, (head + 1) * d)?;
            let qh = g.transpose(qh)?;
            let kh = g.slice(k, 1, head * d, (head + 1) * d)?;
            let scores = g.matmul(kh, qh)?;
            let scores = g.reshape(scores, &[bs, 1, t])?;
            let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
            let probs = g.softmax(scores)?;
            trace.push(probs);
            let vh = g.slice(v, 2, head * d, (head + 1) * d)?;
            heads.push(g.batch_matmul(probs, vh)?);
        }
        let merged = g.concat(&heads)?;
        let merged = g.reshape(merged, &[bs, e])?;
        self.dense(g, params, "dec.attn.o", merged)
    }
}

/// Sinusoidal encodings tiled over the batch: `batch x T x E`.
pub fn positional_encoding(batch: usize, t: usize, e: usize) -> Tensor {
    let mut one = vec![0.0; t * e];
    for pos in 0..t {
        for i in 0..e {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / e as f64);
            one[pos * e + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    let data = one.iter().copied().cycle().take(batch * t * e).collect();
    Tensor::from_vec(vec![batch, t, e], data).expect("positional encoding shape")
}
