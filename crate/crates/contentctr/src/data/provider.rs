//! Frozen embedding stage standing in for pretrained modality encoders. Raw
//! f32 features pass through a fixed seeded affine map and tanh; the result
//! feeds the network. The map is derived from the dataset seed, so every
//! command that reads the same dataset reconstructs identical inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{mix, SampleWindow};
use crate::error::{Error, Result};

pub struct EmbedProvider {
    /// (dim, dim) row-major.
    w: Vec<f64>,
    dim: usize,
}

impl EmbedProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("finite std");
        let w = (0..dim * dim).map(|_| normal.sample(&mut rng)).collect();
        EmbedProvider { w, dim }
    }

    /// The conventional provider pair for a dataset: visual first, text
    /// second, both derived from the dataset seed.
    pub fn pair_for_dataset(d_visual: usize, d_text: usize, dataset_seed: u64) -> (Self, Self) {
        (
            EmbedProvider::new(d_visual, mix(dataset_seed, 0x7669)),
            EmbedProvider::new(d_text, mix(dataset_seed, 0x7478)),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// tanh(W x); output length equals input length.
    pub fn embed(&self, raw: &[f32]) -> Result<Vec<f64>> {
        if raw.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "embed",
                left: vec![self.dim],
                right: vec![raw.len()],
            });
        }
        Ok((0..self.dim)
            .map(|r| {
                let dot: f64 = (0..self.dim)
                    .map(|k| self.w[r * self.dim + k] * raw[k] as f64)
                    .sum();
                dot.tanh()
            })
            .collect())
    }
}

/// A batch of windows embedded and flattened for the network.
pub struct EmbeddedBatch {
    /// (b, n, d_visual) row-major.
    pub visual: Vec<f64>,
    /// (b, n, d_text) row-major.
    pub text: Vec<f64>,
    pub streamer_ids: Vec<usize>,
    /// (b, n) row-major labels.
    pub labels: Vec<f64>,
    pub n: usize,
}

pub fn embed_windows(
    windows: &[&SampleWindow],
    visual: &EmbedProvider,
    text: &EmbedProvider,
) -> Result<EmbeddedBatch> {
    let n = match windows.first() {
        Some(w) => w.segments.len(),
        None => {
            return Err(Error::BadShape {
                op: "embed_windows",
                msg: "empty batch".into(),
                shape: vec![0],
            })
        }
    };
    let mut batch = EmbeddedBatch {
        visual: Vec::with_capacity(windows.len() * n * visual.dim()),
        text: Vec::with_capacity(windows.len() * n * text.dim()),
        streamer_ids: Vec::with_capacity(windows.len()),
        labels: Vec::with_capacity(windows.len() * n),
        n,
    };
    for w in windows {
        if w.segments.len() != n {
            return Err(Error::ShapeMismatch {
                op: "embed_windows",
                left: vec![n],
                right: vec![w.segments.len()],
            });
        }
        batch.streamer_ids.push(w.streamer_id as usize);
        for seg in &w.segments {
            batch.visual.extend(visual.embed(&seg.visual)?);
            batch.text.extend(text.embed(&seg.text)?);
            batch.labels.push(seg.ctr as f64);
        }
    }
    Ok(batch)
}
