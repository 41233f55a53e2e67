//! Seeded synthetic streams used as fixtures and by `omnizip gen`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::stream::{AttentionSource, StreamConfig, TokenStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    IidGaussian,
    PlantedEvents,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Width of the generated query/key matrices.
    pub d_att: usize,
    /// Number of event windows for `PlantedEvents` (clamped to the window count).
    pub event_windows: usize,
}

impl SynthOptions {
    pub fn for_config(config: &StreamConfig) -> Self {
        SynthOptions {
            d_att: 16,
            event_windows: (config.num_windows / 4).max(1),
        }
    }
}

/// Generator input as read from a config file: the stream shape plus
/// optional overrides of the default options.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    #[serde(flatten)]
    pub stream: StreamConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_att: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_windows: Option<usize>,
}

impl GenConfig {
    pub fn options(&self) -> SynthOptions {
        let defaults = SynthOptions::for_config(&self.stream);
        SynthOptions {
            d_att: self.d_att.unwrap_or(defaults.d_att),
            event_windows: self.event_windows.unwrap_or(defaults.event_windows),
        }
    }
}

// Planted events: every query carries EVENT_GAIN along axis 0, and only keys of
// event windows do. Noise lives on the remaining axes, so event keys collect
// exp(EVENT_GAIN^2 / sqrt(d_att)) more mass from every query.
const EVENT_GAIN: f32 = 3.0;
const QK_NOISE: f32 = 0.3;
const FRAME_JITTER: f32 = 0.05;

/// Generates a stream that is a pure function of `(config, seed, scenario, options)`.
pub fn synth_stream(config: StreamConfig, seed: u64, scenario: Scenario, options: SynthOptions) -> TokenStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match scenario {
        Scenario::IidGaussian => iid(config, &mut rng, options),
        Scenario::PlantedEvents => planted(config, &mut rng, options),
    }
}

/// `synth_stream` with default options for `config`.
pub fn synth_default(config: StreamConfig, seed: u64, scenario: Scenario) -> TokenStream {
    synth_stream(config, seed, scenario, SynthOptions::for_config(&config))
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

fn iid(config: StreamConfig, rng: &mut ChaCha8Rng, options: SynthOptions) -> TokenStream {
    let raw = config.raw_audio_tokens();
    let audio = gaussian(rng, config.audio_len());
    let video = gaussian(rng, config.video_len());
    let query = gaussian(rng, raw * options.d_att);
    let key = gaussian(rng, raw * options.d_att);
    TokenStream {
        config,
        audio,
        video,
        attention: AttentionSource::QueryKey {
            query,
            key,
            d_att: options.d_att,
        },
        planted_events: None,
    }
}

fn planted(config: StreamConfig, rng: &mut ChaCha8Rng, options: SynthOptions) -> TokenStream {
    let n = config.num_windows;
    let mut events: Vec<usize> = sample(rng, n, options.event_windows.min(n)).into_vec();
    events.sort_unstable();
    let mut is_event = vec![false; n];
    for &w in &events {
        is_event[w] = true;
    }

    let d = config.d;
    let audio = gaussian(rng, config.audio_len());

    // Quiet windows repeat one base frame with small jitter; event windows cut
    // to an unrelated frame every time.
    let frame_len = config.video_tokens_per_frame * d;
    let mut video = Vec::with_capacity(config.video_len());
    for &event in &is_event {
        let base = gaussian(rng, frame_len);
        for _ in 0..config.frames_per_window {
            if event {
                video.extend(gaussian(rng, frame_len));
            } else {
                video.extend(base.iter().map(|&b| b + FRAME_JITTER * rng.sample::<f32, _>(StandardNormal)));
            }
        }
    }

    let d_att = options.d_att;
    let raw_per_window = config.audio_tokens_per_window * config.audio_pool_size;
    let mut query = Vec::with_capacity(config.raw_audio_tokens() * d_att);
    let mut key = Vec::with_capacity(config.raw_audio_tokens() * d_att);
    for &event in &is_event {
        for _ in 0..raw_per_window {
            query.push(EVENT_GAIN);
            key.push(if event { EVENT_GAIN } else { 0.0 });
            for _ in 1..d_att {
                query.push(QK_NOISE * rng.sample::<f32, _>(StandardNormal));
                key.push(QK_NOISE * rng.sample::<f32, _>(StandardNormal));
            }
        }
    }

    TokenStream {
        config,
        audio,
        video,
        attention: AttentionSource::QueryKey { query, key, d_att },
        planted_events: Some(events),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize, n: usize) -> StreamConfig {
        StreamConfig {
            d,
            num_windows: n,
            audio_tokens_per_window: 10,
            frames_per_window: 4,
            video_tokens_per_frame: 6,
            audio_pool_size: 2,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for scenario in [Scenario::IidGaussian, Scenario::PlantedEvents] {
            let a = synth_default(cfg(8, 5), 42, scenario);
            let b = synth_default(cfg(8, 5), 42, scenario);
            assert_eq!(a, b);
            assert!(a.validate().ok);
            let c = synth_default(cfg(8, 5), 43, scenario);
            assert_ne!(a.audio, c.audio);
        }
    }

    #[test]
    fn gen_config_fills_defaults() {
        let json = r#"{"d": 4, "num_windows": 8, "audio_tokens_per_window": 10,
            "frames_per_window": 4, "video_tokens_per_frame": 6, "audio_pool_size": 2, "d_att": 3}"#;
        let g: GenConfig = serde_json::from_str(json).unwrap();
        assert_eq!(g.stream, cfg(4, 8));
        assert_eq!(
            g.options(),
            SynthOptions {
                d_att: 3,
                event_windows: 2
            }
        );
    }

    #[test]
    fn planted_event_count_is_exact() {
        let opts = SynthOptions {
            d_att: 8,
            event_windows: 2,
        };
        let s = synth_stream(cfg(4, 8), 7, Scenario::PlantedEvents, opts);
        let events = s.planted_events.unwrap();
        assert_eq!(events.len(), 2);
        assert!(events[0] < events[1] && events[1] < 8);
    }

    #[test]
    fn iid_per_dimension_mean_near_zero() {
        let d = 16;
        let s = synth_default(cfg(d, 300), 1, Scenario::IidGaussian);
        let mut sums = vec![0.0f64; d];
        let mut count = 0usize;
        for token in s.audio.chunks_exact(d).chain(s.video.chunks_exact(d)) {
            for (acc, &v) in sums.iter_mut().zip(token) {
                *acc += v as f64;
            }
            count += 1;
        }
        assert!(count >= 10_000, "only {count} samples");
        for (dim, sum) in sums.iter().enumerate() {
            let mean = sum / count as f64;
            assert!(mean.abs() < 0.1, "dim {dim} mean {mean}");
        }
    }
}
