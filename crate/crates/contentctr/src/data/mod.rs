//! Synthetic data: windows of per-segment visual and text feature vectors
//! with a scalar CTR label, plus the frozen embedding stage that turns raw
//! features into model inputs. Raw features are stored as f32 so every
//! serialization round trip is bit-exact.

pub mod format;
pub mod generator;
pub mod provider;

use serde::{Deserialize, Serialize};

pub use format::{
    load_split, read_dataset_manifest, read_windows, write_dataset, DatasetManifest, FileFormat,
    Split,
};
pub use generator::{generate_windows, inject_misalignment, GeneratedData, GeneratorConfig};
pub use provider::{embed_windows, EmbedProvider, EmbeddedBatch};

/// One segment: raw modality features and the click-through label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub visual: Vec<f32>,
    pub text: Vec<f32>,
    pub ctr: f32,
}

/// One sample window: n consecutive segments from a single streamer. `lag`
/// records how many segments the text channel trails the visual channel
/// (negative means text leads).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub streamer_id: u32,
    pub lag: i32,
    pub segments: Vec<Segment>,
}

impl SampleWindow {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Per-segment labels widened to f64.
    pub fn labels(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.ctr as f64).collect()
    }
}

/// splitmix64 finalizer over both inputs; used to derive independent
/// deterministic seeds (per window, per epoch, per provider) from one root.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(31).wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_json_uses_plain_field_names() {
        let w = SampleWindow {
            streamer_id: 3,
            lag: -1,
            segments: vec![Segment {
                visual: vec![0.5, -1.25],
                text: vec![2.0],
                ctr: 0.75,
            }],
        };
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(
            json,
            r#"{"streamer_id":3,"lag":-1,"segments":[{"visual":[0.5,-1.25],"text":[2.0],"ctr":0.75}]}"#
        );
        let back: SampleWindow = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn mix_separates_nearby_inputs() {
        assert_ne!(mix(0, 0), mix(0, 1));
        assert_ne!(mix(0, 1), mix(1, 0));
        assert_eq!(mix(7, 9), mix(7, 9));
    }
}
