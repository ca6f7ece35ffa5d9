//! Building blocks: affine projection, layer norm, feed-forward, and
//! multi-head attention. Forward methods take the tape explicitly and return
//! tracked tensors; parameters register on the tape per pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Parameter, Tape, Tensor};
use crate::error::Result;

/// Draws a (rows, cols) weight matrix with entries N(0, 1/sqrt(rows)), which
/// keeps per-component variance stable through the projection.
pub(crate) fn init_weight<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Parameter {
    let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("finite std");
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Parameter::new(data, &[rows, cols]).expect("shape matches data")
}

pub(crate) fn init_embedding<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Parameter {
    let normal = Normal::new(0.0, std).expect("finite std");
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Parameter::new(data, &[rows, cols]).expect("shape matches data")
}

type Visitor<'v> = &'v mut dyn FnMut(&str, &Parameter);
type VisitorMut<'v> = &'v mut dyn FnMut(&str, &mut Parameter);

// ── Linear ──────────────────────────────────────────────────────────────

#[derive(Clone)]
pub struct Linear {
    pub w: Parameter,
    pub b: Option<Parameter>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, d_in: usize, d_out: usize, bias: bool) -> Self {
        Linear {
            w: init_weight(rng, d_in, d_out),
            b: bias.then(|| Parameter::zeros(&[d_out])),
        }
    }

    /// x (rows, d_in) -> (rows, d_out).
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let w = self.w.tracked(tape)?;
        let projected = tape.matmul(x, &w)?;
        match &self.b {
            Some(b) => {
                let b = b.tracked(tape)?;
                let wide = tape.broadcast_to(&b, projected.shape())?;
                tape.add(&projected, &wide)
            }
            None => Ok(projected),
        }
    }

    pub fn visit(&self, prefix: &str, f: Visitor) {
        f(&format!("{prefix}.w"), &self.w);
        if let Some(b) = &self.b {
            f(&format!("{prefix}.b"), b);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitorMut) {
        f(&format!("{prefix}.w"), &mut self.w);
        if let Some(b) = &mut self.b {
            f(&format!("{prefix}.b"), b);
        }
    }
}

// ── LayerNorm ───────────────────────────────────────────────────────────

#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    eps: f64,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Parameter::new(vec![1.0; d], &[d]).expect("shape matches data"),
            beta: Parameter::zeros(&[d]),
            eps: 1e-5,
        }
    }

    /// Normalizes the last axis.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let rank = x.shape().len();
        let last = rank - 1;
        let mut keep = x.shape().to_vec();
        keep[last] = 1;

        let mean = tape.reshape(&tape.mean(x, Some(last))?, &keep)?;
        let centered = tape.sub(x, &tape.broadcast_to(&mean, x.shape())?)?;
        let var = tape.mean(&tape.mul(&centered, &centered)?, Some(last))?;
        let denom = tape.sqrt(&tape.offset(&var, self.eps)?)?;
        let denom = tape.broadcast_to(&tape.reshape(&denom, &keep)?, x.shape())?;
        let normed = tape.div(&centered, &denom)?;

        let gamma = tape.broadcast_to(&self.gamma.tracked(tape)?, x.shape())?;
        let beta = tape.broadcast_to(&self.beta.tracked(tape)?, x.shape())?;
        tape.add(&tape.mul(&normed, &gamma)?, &beta)
    }

    pub fn visit(&self, prefix: &str, f: Visitor) {
        f(&format!("{prefix}.gamma"), &self.gamma);
        f(&format!("{prefix}.beta"), &self.beta);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitorMut) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

// ── FeedForward ─────────────────────────────────────────────────────────

#[derive(Clone)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(rng: &mut R, d: usize, hidden: usize) -> Self {
        FeedForward {
            lin1: Linear::new(rng, d, hidden, true),
            lin2: Linear::new(rng, hidden, d, true),
        }
    }

    /// x (..., t, d) -> same shape; applied per token.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        let d = *shape.last().expect("rank of at least 1");
        let rows: usize = x.numel() / d;
        let flat = tape.reshape(x, &[rows, d])?;
        let hidden = tape.gelu(&self.lin1.forward(tape, &flat)?)?;
        let out = self.lin2.forward(tape, &hidden)?;
        tape.reshape(&out, &shape)
    }

    pub fn visit(&self, prefix: &str, f: Visitor) {
        self.lin1.visit(&format!("{prefix}.lin1"), f);
        self.lin2.visit(&format!("{prefix}.lin2"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitorMut) {
        self.lin1.visit_mut(&format!("{prefix}.lin1"), f);
        self.lin2.visit_mut(&format!("{prefix}.lin2"), f);
    }
}

// ── MultiHeadAttention ──────────────────────────────────────────────────

#[derive(Clone)]
pub struct MultiHeadAttention {
    /// Projections (d, n_heads * d_head), no bias.
    pub wq: Parameter,
    pub wk: Parameter,
    pub wv: Parameter,
    /// Output affine (n_heads * d_head, d) with bias.
    pub out: Linear,
    n_heads: usize,
    d_head: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(rng: &mut R, d: usize, n_heads: usize, d_head: usize) -> Self {
        let width = n_heads * d_head;
        MultiHeadAttention {
            wq: init_weight(rng, d, width),
            wk: init_weight(rng, d, width),
            wv: init_weight(rng, d, width),
            out: Linear::new(rng, width, d, true),
            n_heads,
            d_head,
        }
    }

    /// query (B, tq, d) attends over keyval (B, tk, d) -> (B, tq, d).
    /// `mask` is an additive (tq, tk) matrix broadcast across the batch;
    /// masked positions receive exactly zero attention weight.
    pub fn forward(
        &self,
        tape: &Tape,
        query: &Tensor,
        keyval: &Tensor,
        mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let (b, tq, d) = dims3(query)?;
        let (_, tk, _) = dims3(keyval)?;
        let width = self.n_heads * self.d_head;

        let q_flat = tape.reshape(query, &[b * tq, d])?;
        let kv_flat = tape.reshape(keyval, &[b * tk, d])?;
        let q_all = tape.matmul(&q_flat, &self.wq.tracked(tape)?)?;
        let k_all = tape.matmul(&kv_flat, &self.wk.tracked(tape)?)?;
        let v_all = tape.matmul(&kv_flat, &self.wv.tracked(tape)?)?;

        let mask_wide = mask
            .map(|m| tape.broadcast_to(m, &[b, tq, tk]))
            .transpose()?;

        let mut contexts = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let start = h * self.d_head;
            let q_h = tape.reshape(
                &tape.slice(&q_all, 1, start, self.d_head)?,
                &[b, tq, self.d_head],
            )?;
            let k_h = tape.reshape(
                &tape.slice(&k_all, 1, start, self.d_head)?,
                &[b, tk, self.d_head],
            )?;
            let v_h = tape.reshape(
                &tape.slice(&v_all, 1, start, self.d_head)?,
                &[b, tk, self.d_head],
            )?;
            let scores = tape.scale(
                &tape.matmul(&q_h, &tape.swap_axes(&k_h, 1, 2)?)?,
                1.0 / (self.d_head as f64).sqrt(),
            )?;
            let scores = match &mask_wide {
                Some(m) => tape.add(&scores, m)?,
                None => scores,
            };
            let weights = tape.softmax(&scores, 2)?;
            contexts.push(tape.matmul(&weights, &v_h)?);
        }
        let refs: Vec<&Tensor> = contexts.iter().collect();
        let merged = tape.concat(&refs, 2)?;
        let out = self
            .out
            .forward(tape, &tape.reshape(&merged, &[b * tq, width])?)?;
        tape.reshape(&out, &[b, tq, d])
    }

    pub fn visit(&self, prefix: &str, f: Visitor) {
        f(&format!("{prefix}.wq"), &self.wq);
        f(&format!("{prefix}.wk"), &self.wk);
        f(&format!("{prefix}.wv"), &self.wv);
        self.out.visit(&format!("{prefix}.out"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitorMut) {
        f(&format!("{prefix}.wq"), &mut self.wq);
        f(&format!("{prefix}.wk"), &mut self.wk);
        f(&format!("{prefix}.wv"), &mut self.wv);
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }
}

fn dims3(t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(crate::error::Error::BadShape {
            op: "attention",
            msg: "expected rank 3 (batch, time, width)".into(),
            shape: s.to_vec(),
        });
    }
    Ok((s[0], s[1], s[2]))
}
