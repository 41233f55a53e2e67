//! Audio-guided token compression for windowed audio-video streams.
//!
//! The pipeline scores audio tokens by the attention they receive, keeps the
//! salient ones, folds part of the remainder into anchors, and uses each
//! window's audio retention to set how hard its video is pruned. Video is
//! pruned per window by interleaving temporal redundancy removal with
//! density-peak clustering. A closed-form FLOPs model prices the result.

pub mod baselines;
pub mod cost;
pub mod error;
pub mod io;
pub mod istc;
pub mod merge;
pub mod pipeline;
pub mod rates;
pub mod report;
pub mod result;
pub mod saliency;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
pub use pipeline::compress_stream;
pub use rates::PruneConfig;
pub use result::{CompressionResult, StrategyId};
pub use stream::{AttentionSource, StreamConfig, TokenStream};
