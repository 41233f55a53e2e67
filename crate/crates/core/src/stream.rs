//! Windowed token-stream data model and structural validation.

use serde::{Deserialize, Serialize};

/// Tolerance on precomputed attention row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Shape of a windowed audio-video token stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Embedding dimension shared by both modalities.
    pub d: usize,
    pub num_windows: usize,
    pub audio_tokens_per_window: usize,
    pub frames_per_window: usize,
    pub video_tokens_per_frame: usize,
    /// Attention positions averaged into one pooled audio token.
    pub audio_pool_size: usize,
}

impl StreamConfig {
    /// Video tokens in one window (frames x tokens per frame).
    pub fn video_tokens_per_window(&self) -> usize {
        self.frames_per_window * self.video_tokens_per_frame
    }

    pub fn total_audio_tokens(&self) -> usize {
        self.num_windows * self.audio_tokens_per_window
    }

    pub fn total_video_tokens(&self) -> usize {
        self.num_windows * self.video_tokens_per_window()
    }

    /// Audio length at attention resolution, before pooling.
    pub fn raw_audio_tokens(&self) -> usize {
        self.total_audio_tokens() * self.audio_pool_size
    }

    pub fn audio_len(&self) -> usize {
        self.total_audio_tokens() * self.d
    }

    pub fn video_len(&self) -> usize {
        self.total_video_tokens() * self.d
    }

    /// Structural problems with the config itself, as messages.
    pub fn shape_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, value) in [
            ("d", self.d),
            ("num_windows", self.num_windows),
            ("frames_per_window", self.frames_per_window),
            ("video_tokens_per_frame", self.video_tokens_per_frame),
            ("audio_pool_size", self.audio_pool_size),
        ] {
            if value == 0 {
                errs.push(format!("{name} must be at least 1"));
            }
        }
        errs
    }
}

/// Where audio attention comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionSource {
    /// Query and key matrices, each `raw_audio_tokens x d_att`, row-major.
    QueryKey {
        query: Vec<f32>,
        key: Vec<f32>,
        d_att: usize,
    },
    /// Row-stochastic `raw_audio_tokens x raw_audio_tokens` matrix.
    Precomputed { matrix: Vec<f32> },
}

/// A windowed multimodal stream: the engine's only input.
///
/// Audio embeddings are laid out `[window][token][dim]` and video embeddings
/// `[window][frame][token][dim]`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStream {
    pub config: StreamConfig,
    pub audio: Vec<f32>,
    pub video: Vec<f32>,
    pub attention: AttentionSource,
    /// Windows carrying a planted event, recorded by the synthetic generator.
    pub planted_events: Option<Vec<usize>>,
}

impl TokenStream {
    pub fn audio_window(&self, window: usize) -> &[f32] {
        let len = self.config.audio_tokens_per_window * self.config.d;
        &self.audio[window * len..(window + 1) * len]
    }

    pub fn video_window(&self, window: usize) -> &[f32] {
        let len = self.config.video_tokens_per_window() * self.config.d;
        &self.video[window * len..(window + 1) * len]
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
    pub location: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn push(&mut self, severity: Severity, message: impl Into<String>, location: impl Into<String>) {
        self.issues.push(Issue {
            severity,
            message: message.into(),
            location: location.into(),
        });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    /// First error as `location: message`, for error propagation.
    pub fn summary(&self) -> String {
        self.errors()
            .map(|i| format!("{}: {}", i.location, i.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn first_non_finite(values: &[f32]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}

/// Checks every structural and numeric invariant of `stream`.
pub fn validate(stream: &TokenStream) -> ValidationReport {
    let mut report = ValidationReport::default();
    let cfg = &stream.config;

    for msg in cfg.shape_errors() {
        report.push(Severity::Error, msg, "config");
    }
    if cfg.audio_tokens_per_window == 0 {
        report.push(
            Severity::Warn,
            "silent stream; S_a will use degenerate rule",
            "config.audio_tokens_per_window",
        );
    }

    if stream.audio.len() != cfg.audio_len() {
        report.push(
            Severity::Error,
            format!("expected {} values, found {}", cfg.audio_len(), stream.audio.len()),
            "audio_embeddings",
        );
    }
    if stream.video.len() != cfg.video_len() {
        report.push(
            Severity::Error,
            format!("expected {} values, found {}", cfg.video_len(), stream.video.len()),
            "video_embeddings",
        );
    }
    if let Some(i) = first_non_finite(&stream.audio) {
        report.push(Severity::Error, "non-finite value", format!("audio_embeddings[{i}]"));
    }
    if let Some(i) = first_non_finite(&stream.video) {
        report.push(Severity::Error, "non-finite value", format!("video_embeddings[{i}]"));
    }

    let raw = cfg.raw_audio_tokens();
    match &stream.attention {
        AttentionSource::QueryKey { query, key, d_att } => {
            if *d_att == 0 {
                report.push(Severity::Error, "d_att must be at least 1", "attention.d_att");
            }
            for (name, m) in [("query", query), ("key", key)] {
                if m.len() != raw * d_att {
                    report.push(
                        Severity::Error,
                        format!("expected {} values, found {}", raw * d_att, m.len()),
                        format!("attention.{name}"),
                    );
                }
                if let Some(i) = first_non_finite(m) {
                    report.push(Severity::Error, "non-finite value", format!("attention.{name}[{i}]"));
                }
            }
        }
        AttentionSource::Precomputed { matrix } => {
            if matrix.len() != raw * raw {
                report.push(
                    Severity::Error,
                    format!("expected {} values, found {}", raw * raw, matrix.len()),
                    "attention.matrix",
                );
            } else if let Some(i) = first_non_finite(matrix) {
                report.push(Severity::Error, "non-finite value", format!("attention.matrix[{i}]"));
            } else if raw > 0 {
                for (r, row) in matrix.chunks_exact(raw).enumerate() {
                    if let Some(c) = row.iter().position(|&v| v < 0.0) {
                        report.push(Severity::Error, "negative attention weight", format!("attention row {r}, column {c}"));
                    }
                    let sum: f64 = row.iter().map(|&v| v as f64).sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        report.push(
                            Severity::Error,
                            format!("row not stochastic (sums to {sum:.6})"),
                            format!("attention row {r}"),
                        );
                    }
                }
            }
        }
    }

    if let Some(events) = &stream.planted_events {
        if let Some(&w) = events.iter().find(|&&w| w >= cfg.num_windows) {
            report.push(Severity::Error, "planted event window out of range", format!("planted_events[{w}]"));
        }
    }

    report.ok = !report.issues.iter().any(|i| i.severity == Severity::Error);
    report
}
