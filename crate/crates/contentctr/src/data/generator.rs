//! Synthetic window generator. Each streamer gets one or more latent unit
//! directions in visual-feature space; a window follows a scalar excitement
//! walk z in [0, 1] that scales the direction, drives the CTR label through a
//! logistic link, and (after a per-window lag) determines the text channel
//! through a fixed linear map. The lag is recorded on the window, so
//! alignment behaviour can be scored against ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{mix, SampleWindow, Segment};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub streamers: usize,
    pub windows_per_streamer: usize,
    /// Segments per window.
    pub n: usize,
    pub d_visual: usize,
    pub d_text: usize,
    /// Latent content directions per streamer; each window picks one.
    pub directions_per_streamer: usize,
    /// Visual signal strength along the latent direction.
    pub alpha: f64,
    /// Slope of the logistic link from excitement to CTR.
    pub beta: f64,
    /// Isotropic noise on visual features.
    pub noise_scale: f64,
    /// Isotropic noise on text features.
    pub text_noise_scale: f64,
    /// Noise on the label logit; zero gives labels that rank exactly by z.
    pub label_noise_scale: f64,
    /// Std of one excitement walk step.
    pub walk_step: f64,
    /// Per-segment chance of an excitement spike into [0.8, 1.0).
    pub spike_prob: f64,
    /// Text lag is drawn uniformly from [lag_min, lag_max] per window.
    pub lag_min: i32,
    pub lag_max: i32,
    /// Leading fraction of each streamer's windows that goes to train.
    pub train_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            streamers: 20,
            windows_per_streamer: 125,
            n: 8,
            d_visual: 12,
            d_text: 10,
            directions_per_streamer: 1,
            alpha: 1.0,
            beta: 6.0,
            noise_scale: 0.05,
            text_noise_scale: 0.02,
            label_noise_scale: 0.0,
            walk_step: 0.08,
            spike_prob: 0.05,
            lag_min: 0,
            lag_max: 3,
            train_fraction: 0.8,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.streamers == 0 {
            return bad("streamers: must be at least 1".into());
        }
        if self.windows_per_streamer == 0 {
            return bad("windows_per_streamer: must be at least 1".into());
        }
        if self.n < 2 {
            return bad(format!("n: need at least 2 segments, got {}", self.n));
        }
        if self.d_visual == 0 || self.d_text == 0 {
            return bad("d_visual, d_text: must be at least 1".into());
        }
        if self.directions_per_streamer == 0 {
            return bad("directions_per_streamer: must be at least 1".into());
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("noise_scale", self.noise_scale),
            ("text_noise_scale", self.text_noise_scale),
            ("label_noise_scale", self.label_noise_scale),
            ("walk_step", self.walk_step),
        ] {
            if !v.is_finite() {
                return bad(format!("{name}: must be finite, got {v}"));
            }
        }
        if self.alpha <= 0.0 {
            return bad(format!("alpha: must be positive, got {}", self.alpha));
        }
        if self.noise_scale < 0.0 || self.text_noise_scale < 0.0 || self.label_noise_scale < 0.0 {
            return bad("noise scales must be non-negative".into());
        }
        if self.walk_step <= 0.0 {
            return bad(format!("walk_step: must be positive, got {}", self.walk_step));
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return bad(format!("spike_prob: must lie in [0, 1], got {}", self.spike_prob));
        }
        if self.lag_min > self.lag_max {
            return bad(format!(
                "lag_min {} exceeds lag_max {}",
                self.lag_min, self.lag_max
            ));
        }
        let n = self.n as i64;
        if (self.lag_max as i64) >= n || (self.lag_min as i64) <= -n {
            return bad(format!(
                "lags must stay inside the window: |lag| < n = {n}"
            ));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!(
                "train_fraction: must lie in [0, 1], got {}",
                self.train_fraction
            ));
        }
        Ok(())
    }
}

pub struct GeneratedData {
    pub train: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    /// The (d_text, d_visual) map from visual to text feature space,
    /// row-major; exposed so alignment behaviour can be scored.
    pub text_map: Vec<f64>,
}

fn reflect_unit(mut x: f64) -> f64 {
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > 1.0 {
            x = 2.0 - x;
        } else {
            return x;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn generate_windows(config: &GeneratorConfig, seed: u64) -> Result<GeneratedData> {
    config.validate()?;
    let n = config.n;
    let (d_v, d_t) = (config.d_visual, config.d_text);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Shared structure comes from the master stream; every window then gets
    // its own derived stream, so window contents do not depend on order.
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let text_map: Vec<f64> = (0..d_t * d_v)
        .map(|_| normal.sample(&mut master) / (d_v as f64).sqrt())
        .collect();
    let mut directions: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.streamers);
    for _ in 0..config.streamers {
        let mut per_streamer = Vec::with_capacity(config.directions_per_streamer);
        for _ in 0..config.directions_per_streamer {
            let dir = loop {
                let raw: Vec<f64> = (0..d_v).map(|_| normal.sample(&mut master)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-9 {
                    break raw.into_iter().map(|v| v / norm).collect::<Vec<f64>>();
                }
            };
            per_streamer.push(dir);
        }
        directions.push(per_streamer);
    }

    let train_count =
        (config.windows_per_streamer as f64 * config.train_fraction + 1e-9).floor() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();

    for u in 0..config.streamers {
        for w in 0..config.windows_per_streamer {
            let window_seed = mix(seed, ((u as u64) << 32) ^ w as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(window_seed);

            let lag = rng.random_range(config.lag_min..=config.lag_max);
            let dir_idx = rng.random_range(0..config.directions_per_streamer);
            let h = &directions[u][dir_idx];

            let mut z = vec![0.0f64; n];
            z[0] = rng.random_range(0.2..0.8);
            for i in 1..n {
                z[i] = reflect_unit(z[i - 1] + config.walk_step * normal.sample(&mut rng));
            }
            for zi in z.iter_mut() {
                if rng.random_bool(config.spike_prob) {
                    *zi = rng.random_range(0.8..1.0);
                }
            }

            let visual: Vec<Vec<f64>> = z
                .iter()
                .map(|&zi| {
                    h.iter()
                        .map(|&hk| {
                            config.alpha * hk * zi + config.noise_scale * normal.sample(&mut rng)
                        })
                        .collect()
                })
                .collect();
            let ctr: Vec<f64> = z
                .iter()
                .map(|&zi| {
                    sigmoid(
                        config.beta * (zi - 0.5)
                            + config.label_noise_scale * normal.sample(&mut rng),
                    )
                })
                .collect();

            let segments: Vec<Segment> = (0..n)
                .map(|i| {
                    let src = (i as i32 - lag).clamp(0, n as i32 - 1) as usize;
                    let text: Vec<f32> = (0..d_t)
                        .map(|r| {
                            let dot: f64 = (0..d_v)
                                .map(|k| text_map[r * d_v + k] * visual[src][k])
                                .sum();
                            (dot + config.text_noise_scale * normal.sample(&mut rng)) as f32
                        })
                        .collect();
                    Segment {
                        visual: visual[i].iter().map(|&v| v as f32).collect(),
                        text,
                        ctr: ctr[i] as f32,
                    }
                })
                .collect();

            let window = SampleWindow {
                streamer_id: u as u32,
                lag,
                segments,
            };
            if w < train_count {
                train.push(window);
            } else {
                test.push(window);
            }
        }
    }

    Ok(GeneratedData {
        train,
        test,
        text_map,
    })
}

/// Shifts the text channel by `k` more segments (clamping at the window
/// edges) and updates the recorded lag. Shifting by k and then by -k
/// restores every segment whose sources stayed interior both times.
pub fn inject_misalignment(window: &mut SampleWindow, k: i32) -> Result<()> {
    let n = window.segments.len();
    let total = window.lag.saturating_add(k);
    if k.unsigned_abs() as usize >= n || total.unsigned_abs() as usize >= n {
        return Err(Error::SequenceTooShort {
            op: "inject_misalignment",
            len: n,
            min: k.unsigned_abs().max(total.unsigned_abs()) as usize + 1,
        });
    }
    if k == 0 {
        return Ok(());
    }
    let old: Vec<Vec<f32>> = window.segments.iter().map(|s| s.text.clone()).collect();
    for (i, seg) in window.segments.iter_mut().enumerate() {
        let src = (i as i32 - k).clamp(0, n as i32 - 1) as usize;
        seg.text = old[src].clone();
    }
    window.lag += k;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_config() -> GeneratorConfig {
        GeneratorConfig {
            streamers: 2,
            windows_per_streamer: 5,
            n: 6,
            d_visual: 4,
            d_text: 3,
            noise_scale: 0.0,
            text_noise_scale: 0.0,
            label_noise_scale: 0.0,
            spike_prob: 0.0,
            lag_min: 2,
            lag_max: 2,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic_in_config_and_seed() {
        let config = GeneratorConfig {
            streamers: 3,
            windows_per_streamer: 4,
            ..GeneratorConfig::default()
        };
        let a = generate_windows(&config, 11).unwrap();
        let b = generate_windows(&config, 11).unwrap();
        let c = generate_windows(&config, 12).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.text_map, b.text_map);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_takes_the_leading_fraction_per_streamer() {
        let config = GeneratorConfig {
            streamers: 3,
            windows_per_streamer: 10,
            train_fraction: 0.8,
            ..GeneratorConfig::default()
        };
        let data = generate_windows(&config, 5).unwrap();
        assert_eq!(data.train.len(), 24);
        assert_eq!(data.test.len(), 6);
        for u in 0..3u32 {
            assert_eq!(data.train.iter().filter(|w| w.streamer_id == u).count(), 8);
            assert_eq!(data.test.iter().filter(|w| w.streamer_id == u).count(), 2);
        }
    }

    #[test]
    fn windows_are_well_formed() {
        let config = GeneratorConfig {
            streamers: 4,
            windows_per_streamer: 6,
            lag_min: -2,
            lag_max: 3,
            label_noise_scale: 0.1,
            ..GeneratorConfig::default()
        };
        let data = generate_windows(&config, 99).unwrap();
        for w in data.train.iter().chain(&data.test) {
            assert_eq!(w.segments.len(), config.n);
            assert!((config.lag_min..=config.lag_max).contains(&w.lag));
            assert!((w.streamer_id as usize) < config.streamers);
            for s in &w.segments {
                assert_eq!(s.visual.len(), config.d_visual);
                assert_eq!(s.text.len(), config.d_text);
                assert!(s.ctr > 0.0 && s.ctr < 1.0);
                assert!(s.visual.iter().all(|v| v.is_finite()));
                assert!(s.text.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn text_channel_trails_visual_by_the_recorded_lag() {
        let config = quiet_config();
        let data = generate_windows(&config, 7).unwrap();
        let w = &data.train[0];
        assert_eq!(w.lag, 2);
        let n = config.n;
        let apply_map = |v: &[f32]| -> Vec<f64> {
            (0..config.d_text)
                .map(|r| {
                    (0..config.d_visual)
                        .map(|k| data.text_map[r * config.d_visual + k] * v[k] as f64)
                        .sum()
                })
                .collect()
        };
        for i in 0..n {
            let src = (i as i32 - 2).clamp(0, n as i32 - 1) as usize;
            let expected = apply_map(&w.segments[src].visual);
            for (a, b) in w.segments[i].text.iter().zip(&expected) {
                // text was computed from the f64 visual values before the f32
                // cast, so recomputing from stored f32 is close, not exact
                assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
        assert_eq!(w.segments[0].text, w.segments[1].text);
    }

    #[test]
    fn labels_rank_by_excitement_when_label_noise_is_zero() {
        let config = quiet_config();
        let data = generate_windows(&config, 21).unwrap();
        for w in &data.train {
            // ctr is a monotone function of z, and visual = alpha*h*z exactly
            // (noise_scale 0), so |visual| recovers z up to the f32 cast
            let z: Vec<f64> = w
                .segments
                .iter()
                .map(|s| s.visual.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
                .collect();
            for i in 0..w.segments.len() {
                for j in 0..w.segments.len() {
                    if z[i] - z[j] > 1e-5 {
                        assert!(w.segments[i].ctr >= w.segments[j].ctr);
                    }
                }
            }
        }
    }

    #[test]
    fn misalignment_round_trip_restores_interior_segments() {
        let config = GeneratorConfig {
            streamers: 1,
            windows_per_streamer: 1,
            n: 8,
            train_fraction: 1.0,
            ..GeneratorConfig::default()
        };
        let data = generate_windows(&config, 13).unwrap();
        let original = data.train[0].clone();
        let mut w = original.clone();
        let k = 3;
        inject_misalignment(&mut w, k).unwrap();
        assert_eq!(w.lag, original.lag + k);
        assert_ne!(w.segments, original.segments);
        inject_misalignment(&mut w, -k).unwrap();
        assert_eq!(w.lag, original.lag);
        for i in 0..8usize {
            let interior = (i as i32 + k) < 8 && (i as i32) >= 0;
            if interior {
                assert_eq!(w.segments[i].text, original.segments[i].text, "segment {i}");
            }
        }
    }

    #[test]
    fn misalignment_wider_than_the_window_is_rejected() {
        let config = GeneratorConfig {
            streamers: 1,
            windows_per_streamer: 1,
            lag_min: 0,
            lag_max: 0,
            train_fraction: 1.0,
            ..GeneratorConfig::default()
        };
        let mut w = generate_windows(&config, 1).unwrap().train.remove(0);
        let n = w.segments.len() as i32;
        assert!(inject_misalignment(&mut w, n).is_err());
        assert!(inject_misalignment(&mut w, -n).is_err());
        assert!(inject_misalignment(&mut w, n - 1).is_ok());
        // a second shift in the same direction would push the total lag
        // outside the window
        assert!(inject_misalignment(&mut w, 1).is_err());
    }

    #[test]
    fn config_validation_names_offending_fields() {
        let mut config = GeneratorConfig::default();
        config.lag_min = 5;
        config.lag_max = 2;
        let msg = generate_windows(&config, 0).err().unwrap().to_string();
        assert!(msg.contains("lag_min"), "{msg}");

        let mut config = GeneratorConfig::default();
        config.train_fraction = 1.5;
        let msg = generate_windows(&config, 0).err().unwrap().to_string();
        assert!(msg.contains("train_fraction"), "{msg}");

        let mut config = GeneratorConfig::default();
        config.lag_max = config.n as i32;
        assert!(generate_windows(&config, 0).is_err());
    }
}
