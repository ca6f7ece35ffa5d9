//! The assembled network. Per window of n segments: project both modality
//! embeddings to width d, blend them per segment through a latent-query
//! attention block seeded by the streamer embedding, run the blended sequence
//! through a masked decoder, and squash a linear head to per-segment CTR.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Parameter, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::config::{attention_mask, ModelConfig};
use crate::model::layers::{init_embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};

/// One residual block: attention then feed-forward, each with an identity
/// skip. Pre-norm mode inserts a layer norm in front of both sublayers.
#[derive(Clone)]
pub struct Block {
    pub attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm_attn: Option<LayerNorm>,
    pub norm_ffn: Option<LayerNorm>,
}

impl Block {
    fn new(rng: &mut ChaCha8Rng, config: &ModelConfig) -> Self {
        Block {
            attn: MultiHeadAttention::new(rng, config.d, config.n_heads, config.d_head),
            ffn: FeedForward::new(rng, config.d, config.ffn_hidden),
            norm_attn: config.pre_norm.then(|| LayerNorm::new(config.d)),
            norm_ffn: config.pre_norm.then(|| LayerNorm::new(config.d)),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.ffn.visit(&format!("{prefix}.ffn"), f);
        if let Some(n) = &self.norm_attn {
            n.visit(&format!("{prefix}.norm_attn"), f);
        }
        if let Some(n) = &self.norm_ffn {
            n.visit(&format!("{prefix}.norm_ffn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.ffn.visit_mut(&format!("{prefix}.ffn"), f);
        if let Some(n) = &mut self.norm_attn {
            n.visit_mut(&format!("{prefix}.norm_attn"), f);
        }
        if let Some(n) = &mut self.norm_ffn {
            n.visit_mut(&format!("{prefix}.norm_ffn"), f);
        }
    }
}

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub visual_proj: Linear,
    pub text_proj: Linear,
    /// (streamers, d) lookup table.
    pub streamer_embed: Parameter,
    pub perceiver: Vec<Block>,
    /// (n, d), present when config.positional.
    pub positional: Option<Parameter>,
    pub decoder: Vec<Block>,
    pub head: Linear,
}

/// One batch of windows, row-major and detached.
pub struct BatchInput<'a> {
    /// (b, n, d_visual)
    pub visual: &'a [f64],
    /// (b, n, d_text)
    pub text: &'a [f64],
    /// b streamer table indices
    pub streamer_ids: &'a [usize],
}

pub struct ModelOutput {
    /// (b, n) per-segment CTR in (0, 1).
    pub s: Tensor,
    /// (b, n, d) visual projection, the alignment target.
    pub visual_projection: Tensor,
    /// (b, n, d) text projection, the alignment source.
    pub text_projection: Tensor,
    /// (b, n, d) after the latent-query fusion block.
    pub fused: Tensor,
    /// (b, n, d) decoder output.
    pub hidden: Tensor,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Draw order is fixed; the same seed and config always yield the
        // same initialization.
        let visual_proj = Linear::new(&mut rng, config.d_visual, config.d, true);
        let text_proj = Linear::new(&mut rng, config.d_text, config.d, true);
        let streamer_embed = init_embedding(&mut rng, config.streamers, config.d, 1.0);
        let perceiver = (0..config.perceiver_layers)
            .map(|_| Block::new(&mut rng, &config))
            .collect();
        let positional = config
            .positional
            .then(|| init_embedding(&mut rng, config.n, config.d, 0.1));
        let decoder = (0..config.decoder_layers)
            .map(|_| Block::new(&mut rng, &config))
            .collect();
        let head = Linear::new(&mut rng, config.d, 1, true);
        Ok(Model {
            config,
            visual_proj,
            text_proj,
            streamer_embed,
            perceiver,
            positional,
            decoder,
            head,
        })
    }

    fn block_pass(
        &self,
        tape: &Tape,
        block: &Block,
        x: &Tensor,
        keyval_extra: Option<&Tensor>,
        mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let attn_in = match &block.norm_attn {
            Some(norm) => norm.forward(tape, x)?,
            None => x.clone(),
        };
        let keyval = match keyval_extra {
            // latent-query mode: keys and values are the extra tokens plus
            // the evolving latent itself
            Some(extra) => tape.concat(&[extra, &attn_in], 1)?,
            None => attn_in.clone(),
        };
        let x = tape.add(x, &block.attn.forward(tape, &attn_in, &keyval, mask)?)?;
        let ffn_in = match &block.norm_ffn {
            Some(norm) => norm.forward(tape, &x)?,
            None => x.clone(),
        };
        tape.add(&x, &block.ffn.forward(tape, &ffn_in)?)
    }

    /// Full forward pass over a batch of b windows.
    pub fn forward(&self, tape: &Tape, input: &BatchInput) -> Result<ModelOutput> {
        let c = &self.config;
        let b = input.streamer_ids.len();
        if b == 0 {
            return Err(Error::BadShape {
                op: "model_forward",
                msg: "empty batch".into(),
                shape: vec![0],
            });
        }
        if input.visual.len() != b * c.n * c.d_visual {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                left: vec![b, c.n, c.d_visual],
                right: vec![input.visual.len()],
            });
        }
        if input.text.len() != b * c.n * c.d_text {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                left: vec![b, c.n, c.d_text],
                right: vec![input.text.len()],
            });
        }
        for &id in input.streamer_ids {
            if id >= c.streamers {
                return Err(Error::IndexOutOfBounds {
                    op: "model_forward",
                    index: id,
                    extent: c.streamers,
                });
            }
        }
        let cells = b * c.n;

        // Project each modality to width d.
        let visual = Tensor::new(input.visual.to_vec(), &[cells, c.d_visual])?;
        let text = Tensor::new(input.text.to_vec(), &[cells, c.d_text])?;
        let visual_proj = self.visual_proj.forward(tape, &visual)?;
        let text_proj = self.text_proj.forward(tape, &text)?;

        // Two modality tokens per segment cell.
        let tokens = tape.concat(
            &[
                &tape.reshape(&text_proj, &[cells, 1, c.d])?,
                &tape.reshape(&visual_proj, &[cells, 1, c.d])?,
            ],
            1,
        )?;

        // The streamer embedding, repeated per segment, is the latent query.
        let table = self.streamer_embed.tracked(tape)?;
        let queries = tape.gather_rows(&table, input.streamer_ids)?;
        let queries = tape.broadcast_to(&tape.reshape(&queries, &[b, 1, c.d])?, &[b, c.n, c.d])?;
        let mut latent = tape.reshape(&queries, &[cells, 1, c.d])?;
        for block in &self.perceiver {
            latent = self.block_pass(tape, block, &latent, Some(&tokens), None)?;
        }
        let fused = tape.reshape(&latent, &[b, c.n, c.d])?;

        // Decode across timestamps under the configured mask.
        let mut x = fused.clone();
        if let Some(pos) = &self.positional {
            let pos = tape.broadcast_to(&pos.tracked(tape)?, &[b, c.n, c.d])?;
            x = tape.add(&x, &pos)?;
        }
        let mask = attention_mask(c.mask, c.n);
        for block in &self.decoder {
            x = self.block_pass(tape, block, &x, None, Some(&mask))?;
        }
        let hidden = x;

        // Per-segment CTR.
        let logits = self
            .head
            .forward(tape, &tape.reshape(&hidden, &[cells, c.d])?)?;
        let s = tape.sigmoid(&tape.reshape(&logits, &[b, c.n])?)?;

        Ok(ModelOutput {
            s,
            visual_projection: tape.reshape(&visual_proj, &[b, c.n, c.d])?,
            text_projection: tape.reshape(&text_proj, &[b, c.n, c.d])?,
            fused,
            hidden,
        })
    }

    /// Detached predictions only, for evaluation loops.
    pub fn predict(&self, input: &BatchInput) -> Result<Vec<f64>> {
        let tape = Tape::new();
        Ok(self.forward(&tape, input)?.s.to_vec())
    }

    /// Copy with every parameter round-tripped through f32, matching what a
    /// checkpoint stores.
    pub fn quantized_clone(&self) -> Model {
        let mut clone = self.clone();
        clone.visit_mut(&mut |_, p| p.quantize());
        clone
    }
}

impl ParamSet for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &Parameter)) {
        self.visual_proj.visit("fuse.visual", f);
        self.text_proj.visit("fuse.text", f);
        f("streamer.embed", &self.streamer_embed);
        for (i, block) in self.perceiver.iter().enumerate() {
            block.visit(&format!("perceiver.{i}"), f);
        }
        if let Some(p) = &self.positional {
            f("pos.embed", p);
        }
        for (i, block) in self.decoder.iter().enumerate() {
            block.visit(&format!("decoder.{i}"), f);
        }
        self.head.visit("head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.visual_proj.visit_mut("fuse.visual", f);
        self.text_proj.visit_mut("fuse.text", f);
        f("streamer.embed", &mut self.streamer_embed);
        for (i, block) in self.perceiver.iter_mut().enumerate() {
            block.visit_mut(&format!("perceiver.{i}"), f);
        }
        if let Some(p) = &mut self.positional {
            f("pos.embed", p);
        }
        for (i, block) in self.decoder.iter_mut().enumerate() {
            block.visit_mut(&format!("decoder.{i}"), f);
        }
        self.head.visit_mut("head", f);
    }
}
