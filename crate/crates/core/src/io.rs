//! Manifest and raw `.f32` tensor I/O.
//!
//! Tensors are little-endian 32-bit floats, row-major, with the embedding
//! dimension as the innermost axis. A stream directory holds `stream.json`
//! plus the tensor files it names (paths relative to the manifest).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::result::CompressionResult;
use crate::stream::{AttentionSource, StreamConfig, TokenStream};

pub const MANIFEST_NAME: &str = "stream.json";
pub const RESULT_NAME: &str = "result.json";
pub const COMPRESSED_AUDIO_NAME: &str = "compressed_audio.f32";
pub const COMPRESSED_VIDEO_NAME: &str = "compressed_video.f32";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub config: StreamConfig,
    pub audio_embeddings: PathBuf,
    pub video_embeddings: PathBuf,
    pub attention: AttentionManifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_events: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttentionManifest {
    Qk { query: PathBuf, key: PathBuf, d_att: usize },
    Precomputed { matrix: PathBuf },
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Reads exactly `expected_len` floats from `path`.
pub fn read_f32(path: &Path, expected_len: usize, tensor: &str) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected_bytes = expected_len as u64 * 4;
    if bytes.len() as u64 != expected_bytes {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected_bytes,
            actual_bytes: bytes.len() as u64,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            tensor: tensor.to_string(),
            index,
        });
    }
    Ok(values)
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

/// Loads a stream from a manifest file, or from a directory holding `stream.json`.
pub fn load_stream(path: &Path) -> Result<TokenStream> {
    let manifest_path = manifest_path(path);
    let manifest: Manifest = read_json(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let cfg = manifest.config;
    if let Some(msg) = cfg.shape_errors().into_iter().next() {
        return Err(Error::InvalidConfig(msg));
    }

    let audio = read_f32(&base.join(&manifest.audio_embeddings), cfg.audio_len(), "audio_embeddings")?;
    let video = read_f32(&base.join(&manifest.video_embeddings), cfg.video_len(), "video_embeddings")?;
    let raw = cfg.raw_audio_tokens();
    let attention = match &manifest.attention {
        AttentionManifest::Qk { query, key, d_att } => {
            if *d_att == 0 {
                return Err(Error::InvalidConfig("d_att must be at least 1".into()));
            }
            AttentionSource::QueryKey {
                query: read_f32(&base.join(query), raw * d_att, "attention.query")?,
                key: read_f32(&base.join(key), raw * d_att, "attention.key")?,
                d_att: *d_att,
            }
        }
        AttentionManifest::Precomputed { matrix } => AttentionSource::Precomputed {
            matrix: read_f32(&base.join(matrix), raw * raw, "attention.matrix")?,
        },
    };

    Ok(TokenStream {
        config: cfg,
        audio,
        video,
        attention,
        planted_events: manifest.planted_events,
    })
}

/// Writes `stream` into `dir` as `stream.json` plus raw tensor files.
pub fn save_stream(stream: &TokenStream, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_f32(&dir.join("audio.f32"), &stream.audio)?;
    write_f32(&dir.join("video.f32"), &stream.video)?;
    let attention = match &stream.attention {
        AttentionSource::QueryKey { query, key, d_att } => {
            write_f32(&dir.join("query.f32"), query)?;
            write_f32(&dir.join("key.f32"), key)?;
            AttentionManifest::Qk {
                query: "query.f32".into(),
                key: "key.f32".into(),
                d_att: *d_att,
            }
        }
        AttentionSource::Precomputed { matrix } => {
            write_f32(&dir.join("attention.f32"), matrix)?;
            AttentionManifest::Precomputed {
                matrix: "attention.f32".into(),
            }
        }
    };
    let manifest = Manifest {
        config: stream.config,
        audio_embeddings: "audio.f32".into(),
        video_embeddings: "video.f32".into(),
        attention,
        planted_events: stream.planted_events.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&dir.join(MANIFEST_NAME), json.as_bytes())
}

/// Writes `result.json` and the kept embeddings of both modalities into `out_dir`.
pub fn save_compressed(result: &CompressionResult, stream: &TokenStream, out_dir: &Path) -> Result<()> {
    let (audio, video) = result.materialize(stream)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join(RESULT_NAME), result.to_json().as_bytes())?;
    write_f32(&out_dir.join(COMPRESSED_AUDIO_NAME), &audio)?;
    write_f32(&out_dir.join(COMPRESSED_VIDEO_NAME), &video)
}

/// Compressed output read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedStream {
    pub result: CompressionResult,
    pub audio: Vec<f32>,
    pub video: Vec<f32>,
}

pub fn load_compressed(dir: &Path) -> Result<CompressedStream> {
    let result: CompressionResult = read_json(&dir.join(RESULT_NAME))?;
    let d = result.stream_config.d;
    let audio = read_f32(&dir.join(COMPRESSED_AUDIO_NAME), result.totals.audio_after * d, "compressed_audio")?;
    let video = read_f32(&dir.join(COMPRESSED_VIDEO_NAME), result.totals.video_after * d, "compressed_video")?;
    Ok(CompressedStream { result, audio, video })
}
