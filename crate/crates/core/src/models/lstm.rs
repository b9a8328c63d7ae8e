//! Single-layer LSTM over the lookback window, final hidden state to a
//! softmax allocation head.

use serde::{Deserialize, Serialize};

use super::init::{glorot_uniform, orthogonal};
use super::ModelError;
use crate::autodiff::{Graph, ParameterSet, Tensor, Var};
use crate::rng::{self, site};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmAllocatorConfig {
    #[serde(default = "default_hidden")]
    pub hidden_units: usize,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    pub input_features: usize,
    pub n_assets: usize,
}

fn default_hidden() -> usize {
    64
}

fn default_lookback() -> usize {
    50
}

pub const W_INPUT: &str = "lstm.w_input";
pub const W_RECURRENT: &str = "lstm.w_recurrent";
pub const BIAS: &str = "lstm.bias";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

impl LstmAllocatorConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("hidden_units", self.hidden_units),
            ("lookback", self.lookback),
            ("input_features", self.input_features),
            ("n_assets", self.n_assets),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Gate blocks are laid out `[input, forget, cell, output]` along the
    /// last axis of the `4H`-wide weights.
    pub fn init(&self, seed: u64) -> Result<ParameterSet, ModelError> {
        self.check()?;
        let (f, h, a) = (self.input_features, self.hidden_units, self.n_assets);
        let mut rng = rng::stream(seed, site::INIT);
        let mut p = ParameterSet::new();

        // each gate's input block is Glorot over (F, H)
        let blocks: Vec<Tensor> = (0..4).map(|_| glorot_uniform(&mut rng, f, h)).collect();
        let mut w = vec![0.0; f * 4 * h];
        for (gate, b) in blocks.iter().enumerate() {
            for i in 0..f {
                for j in 0..h {
                    w[i * 4 * h + gate * h + j] = b.data()[i * h + j];
                }
            }
        }
        p.insert(W_INPUT, Tensor::from_vec(vec![f, 4 * h], w)?);

        let mut u = vec![0.0; h * 4 * h];
        for gate in 0..4 {
            let q = orthogonal(&mut rng, h);
            for i in 0..h {
                for j in 0..h {
                    u[i * 4 * h + gate * h + j] = q[i][j];
                }
            }
        }
        p.insert(W_RECURRENT, Tensor::from_vec(vec![h, 4 * h], u)?);

        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
        p.insert(BIAS, Tensor::from_vec(vec![4 * h], b)?);

        p.insert(HEAD_WEIGHT, glorot_uniform(&mut rng, h, a));
        p.insert(HEAD_BIAS, Tensor::zeros(&[a]));
        Ok(p)
    }

    /// `x`: `batch x lookback x features` input; returns `batch x assets`
    /// softmax weights.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Var, ModelError> {
        let states = self.unroll(g, params, x)?;
        let hidden = *states.last().expect("lookback is positive");
        let hw = g.param(params, HEAD_WEIGHT)?;
        let hb = g.param(params, HEAD_BIAS)?;
        let logits = g.matmul(hidden, hw)?;
        let logits = g.add_bias(logits, hb)?;
        Ok(g.softmax(logits)?)
    }

    /// Hidden state after every step.
    pub fn hidden_states(&self, params: &ParameterSet, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone())?;
        let states = self.unroll(&mut g, params, xv)?;
        Ok(states.into_iter().map(|h| g.value(h).clone()).collect())
    }

    fn unroll(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Vec<Var>, ModelError> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.lookback || s[2] != self.input_features {
            return Err(ModelError::InputShape {
                expected: vec![0, self.lookback, self.input_features],
                got: s,
            });
        }
        let (bs, t_len, f, h) = (s[0], s[1], s[2], self.hidden_units);
        let w = g.param(params, W_INPUT)?;
        let u = g.param(params, W_RECURRENT)?;
        let b = g.param(params, BIAS)?;

        // input projections for all steps at once
        let flat = g.reshape(x, &[bs * t_len, f])?;
        let xw = g.matmul(flat, w)?;
        let xw = g.add_bias(xw, b)?;
        let xw = g.reshape(xw, &[bs, t_len, 4 * h])?;

        // h0 = c0 = 0, so the first step skips the recurrent and forget terms
        let mut states = Vec::with_capacity(t_len);
        let mut cell: Option<Var> = None;
        for t in 0..t_len {
            let zt = g.slice(xw, 1, t, t + 1)?;
            let mut z = g.reshape(zt, &[bs, 4 * h])?;
            if let Some(&hp) = states.last() {
                let hu = g.matmul(hp, u)?;
                z = g.add(z, hu)?;
            }
            let i_pre = g.slice(z, 1, 0, h)?;
            let f_pre = g.slice(z, 1, h, 2 * h)?;
            let c_pre = g.slice(z, 1, 2 * h, 3 * h)?;
            let o_pre = g.slice(z, 1, 3 * h, 4 * h)?;
            let i_gate = g.sigmoid(i_pre)?;
            let o_gate = g.sigmoid(o_pre)?;
            let cand = g.tanh(c_pre)?;
            let written = g.mul(i_gate, cand)?;
            let c_new = match cell {
                Some(cp) => {
                    let f_gate = g.sigmoid(f_pre)?;
                    let kept = g.mul(f_gate, cp)?;
                    g.add(kept, written)?
                }
                None => written,
            };
            let squashed = g.tanh(c_new)?;
            states.push(g.mul(o_gate, squashed)?);
            cell = Some(c_new);
        }
        Ok(states)
    }
}
