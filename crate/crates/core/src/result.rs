//! Compression output shared by every strategy.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::merge::group_mean;
use crate::rates::{PruneConfig, PruneRates};
use crate::saliency::SaliencyReport;
use crate::stream::{AttentionSource, StreamConfig, TokenStream};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Omnizip,
    Random,
    TemporalMerge,
}

impl StrategyId {
    pub const ALL: [StrategyId; 3] = [StrategyId::Omnizip, StrategyId::Random, StrategyId::TemporalMerge];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::Omnizip => "omnizip",
            StrategyId::Random => "random",
            StrategyId::TemporalMerge => "temporal_merge",
        }
    }

    /// Label used in reports; the temporal merge baseline is only TTM-like.
    pub fn label(self) -> &'static str {
        match self {
            StrategyId::TemporalMerge => "ttm-like",
            other => other.name(),
        }
    }
}

impl std::str::FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

/// Parameters a result was produced with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyParams {
    Omnizip(PruneConfig),
    Random { retention: f64, seed: u64 },
    TemporalMerge { retention: f64 },
}

/// A kept token that absorbed other tokens. Indices are window-local.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeGroup {
    pub anchor: usize,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window: usize,
    /// Kept audio tokens in temporal order (salient tokens and anchors).
    pub audio_kept: Vec<usize>,
    pub merge_groups: Vec<MergeGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audio_discarded: Vec<usize>,
    pub video_kept: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub video_merge_groups: Vec<MergeGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_temporal: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_spatial: Vec<usize>,
    /// Realized video pruning rate of this window.
    pub video_rate: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub audio_before: usize,
    pub audio_after: usize,
    pub video_before: usize,
    pub video_after: usize,
}

impl Totals {
    pub fn kept(&self) -> usize {
        self.audio_after + self.video_after
    }

    pub fn before(&self) -> usize {
        self.audio_before + self.video_before
    }

    pub fn retained_ratio(&self) -> f64 {
        if self.before() == 0 {
            1.0
        } else {
            self.kept() as f64 / self.before() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub strategy: StrategyId,
    pub engine_version: String,
    pub input_hash: String,
    pub stream_config: StreamConfig,
    pub params: StrategyParams,
    pub totals: Totals,
    pub retained_ratio: f64,
    pub infeasible_budget: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<SaliencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<PruneRates>,
    pub windows: Vec<WindowResult>,
    /// Wall time of the pruning stages. Kept out of result.json.
    #[serde(skip)]
    pub elapsed_ms: f64,
}

impl CompressionResult {
    pub(crate) fn new(
        strategy: StrategyId,
        stream: &TokenStream,
        params: StrategyParams,
        windows: Vec<WindowResult>,
    ) -> Self {
        let cfg = stream.config;
        let totals = Totals {
            audio_before: cfg.total_audio_tokens(),
            audio_after: windows.iter().map(|w| w.audio_kept.len()).sum(),
            video_before: cfg.total_video_tokens(),
            video_after: windows.iter().map(|w| w.video_kept.len()).sum(),
        };
        CompressionResult {
            strategy,
            engine_version: ENGINE_VERSION.to_string(),
            input_hash: content_hash(stream),
            stream_config: cfg,
            params,
            totals,
            retained_ratio: totals.retained_ratio(),
            infeasible_budget: false,
            saliency: None,
            rates: None,
            windows,
            elapsed_ms: 0.0,
        }
    }

    /// Fails unless this result was computed from `stream`.
    pub fn check_matches(&self, stream: &TokenStream) -> Result<()> {
        if self.stream_config != stream.config {
            return Err(Error::ConfigMismatch("stream config differs".into()));
        }
        if self.input_hash != content_hash(stream) {
            return Err(Error::ConfigMismatch("input content hash differs".into()));
        }
        Ok(())
    }

    /// Deterministic JSON encoding written to result.json.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    /// Kept embeddings as flat `(audio, video)` buffers, window by window.
    ///
    /// A kept token that heads a merge group is replaced by the mean of the group.
    pub fn materialize(&self, stream: &TokenStream) -> Result<(Vec<f32>, Vec<f32>)> {
        self.check_matches(stream)?;
        let d = stream.config.d;
        let mut audio = Vec::with_capacity(self.totals.audio_after * d);
        let mut video = Vec::with_capacity(self.totals.video_after * d);
        for w in &self.windows {
            gather(&mut audio, stream.audio_window(w.window), d, &w.audio_kept, &w.merge_groups);
            gather(&mut video, stream.video_window(w.window), d, &w.video_kept, &w.video_merge_groups);
        }
        Ok((audio, video))
    }
}

fn gather(out: &mut Vec<f32>, tokens: &[f32], d: usize, kept: &[usize], groups: &[MergeGroup]) {
    for &t in kept {
        match groups.iter().find(|g| g.anchor == t && !g.members.is_empty()) {
            Some(g) => out.extend(group_mean(tokens, d, t, &g.members)),
            None => out.extend_from_slice(&tokens[t * d..(t + 1) * d]),
        }
    }
}

/// SHA-256 over the stream config and every tensor, as lowercase hex.
pub fn content_hash(stream: &TokenStream) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&stream.config).expect("config serializes"));
    let mut feed = |values: &[f32]| {
        h.update((values.len() as u64).to_le_bytes());
        let mut buf = Vec::with_capacity(4 * 4096);
        for chunk in values.chunks(4096) {
            buf.clear();
            buf.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
            h.update(&buf);
        }
    };
    feed(&stream.audio);
    feed(&stream.video);
    match &stream.attention {
        AttentionSource::QueryKey { query, key, d_att } => {
            feed(query);
            feed(key);
            feed(&[*d_att as f32]);
        }
        AttentionSource::Precomputed { matrix } => feed(matrix),
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
