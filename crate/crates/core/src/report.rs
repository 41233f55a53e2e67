//! Report files and the strategy comparison harness.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::baselines::{random_prune, temporal_merge};
use crate::cost::{flops_ratio, ModelGeometry};
use crate::error::{Error, Result};
use crate::io::{write_file, RESULT_NAME};
use crate::pipeline::compress_stream;
use crate::rates::{budget_count, PruneConfig};
use crate::result::{CompressionResult, StrategyId};
use crate::stream::{StreamConfig, TokenStream};

pub const WINDOWS_CSV_NAME: &str = "windows.csv";

/// Per-window table: retention score, rates, and kept counts.
///
/// Rate and score cells are empty for strategies that do not compute them.
pub fn windows_csv(result: &CompressionResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["window", "S_a", "initial_rate", "final_rate", "audio_kept", "video_kept"])?;
    for win in &result.windows {
        let i = win.window;
        let retention = result.saliency.as_ref().map(|s| s.window_retention[i].to_string());
        let initial = result.rates.as_ref().map(|r| r.initial[i].to_string());
        w.write_record([
            i.to_string(),
            retention.unwrap_or_default(),
            initial.unwrap_or_default(),
            win.video_rate.to_string(),
            win.audio_kept.len().to_string(),
            win.video_kept.len().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `result.json` and `windows.csv` into `out_dir`.
pub fn write_report(result: &CompressionResult, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join(RESULT_NAME), result.to_json().as_bytes())?;
    write_file(&out_dir.join(WINDOWS_CSV_NAME), windows_csv(result)?.as_bytes())
}

/// Audio/video pruning ratios that keep `round(retention * total)` tokens.
///
/// Video is pruned 0.3 harder than audio (the gap of both reference
/// operating points), clipped so neither ratio leaves `[0, 1]`.
pub fn omnizip_config_for_retention(cfg: &StreamConfig, retention: f64, template: &PruneConfig) -> Result<PruneConfig> {
    const GAP: f64 = 0.3;
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::InvalidConfig(format!("retention {retention} is outside (0, 1]")));
    }
    let audio = cfg.total_audio_tokens();
    let video = cfg.total_video_tokens();
    let keep = budget_count(retention, audio + video);
    let audio_share = ((keep as f64 + GAP * video as f64) / (audio + video) as f64).min(1.0);
    let mut keep_audio = budget_count(audio_share, audio).min(keep);
    let mut keep_video = keep - keep_audio;
    if keep_video > video {
        keep_video = video;
        keep_audio = keep - video;
    }
    let ratio = |kept: usize, total: usize| if total == 0 { 0.0 } else { 1.0 - kept as f64 / total as f64 };
    Ok(PruneConfig {
        rho_a: ratio(keep_audio, audio),
        rho_v: ratio(keep_video, video),
        ..*template
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub retention: f64,
    pub kept_tokens: usize,
    pub total_tokens: usize,
    pub retained_ratio: f64,
    pub flops_ratio: f64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct CompareOptions {
    pub geometry: ModelGeometry,
    /// Sequence length the retained ratio is projected onto for FLOPs; the
    /// stream's own token count when absent.
    pub n_full: Option<u64>,
    pub seed: u64,
    pub template: PruneConfig,
    pub workers: usize,
}

pub fn run_strategy(
    stream: &TokenStream,
    strategy: StrategyId,
    retention: f64,
    options: &CompareOptions,
) -> Result<CompressionResult> {
    match strategy {
        StrategyId::Omnizip => {
            let config = omnizip_config_for_retention(&stream.config, retention, &options.template)?;
            compress_stream(stream, &config, options.workers)
        }
        StrategyId::Random => {
            let started = Instant::now();
            let mut r = random_prune(stream, retention, options.seed)?;
            r.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
            Ok(r)
        }
        StrategyId::TemporalMerge => {
            let started = Instant::now();
            let mut r = temporal_merge(stream, retention)?;
            r.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
            Ok(r)
        }
    }
}

/// One row per `(strategy, retention)` pair, strategies outermost.
pub fn compare(
    stream: &TokenStream,
    strategies: &[StrategyId],
    retentions: &[f64],
    options: &CompareOptions,
) -> Result<Vec<ComparisonRow>> {
    if strategies.is_empty() {
        return Err(Error::Precondition("no strategies to compare".into()));
    }
    if retentions.is_empty() {
        return Err(Error::Precondition("no retention levels to compare".into()));
    }
    let mut rows = Vec::with_capacity(strategies.len() * retentions.len());
    for &strategy in strategies {
        for &retention in retentions {
            let result = run_strategy(stream, strategy, retention, options)?;
            let total = result.totals.before();
            let kept = result.totals.kept();
            let n_full = options.n_full.unwrap_or(total as u64);
            let n_compressed = budget_count(result.retained_ratio, n_full as usize) as u64;
            rows.push(ComparisonRow {
                strategy: strategy.label().to_string(),
                retention,
                kept_tokens: kept,
                total_tokens: total,
                retained_ratio: result.retained_ratio,
                flops_ratio: flops_ratio(n_compressed, n_full, &options.geometry)?.ratio,
                elapsed_ms: result.elapsed_ms,
            });
        }
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_sized_windows(n: usize) -> StreamConfig {
        StreamConfig {
            d: 8,
            num_windows: n,
            audio_tokens_per_window: 50,
            frames_per_window: 4,
            video_tokens_per_frame: 72,
            audio_pool_size: 1,
        }
    }

    #[test]
    fn retention_mapping_hits_reference_points() {
        let cfg = full_sized_windows(10);
        let t = PruneConfig::default();
        let c = omnizip_config_for_retention(&cfg, 1.0, &t).unwrap();
        assert_eq!((c.rho_a, c.rho_v), (0.0, 0.0));
        for r in [0.45, 0.35, 0.2] {
            let c = omnizip_config_for_retention(&cfg, r, &t).unwrap();
            let kept = budget_count(1.0 - c.rho_a, 500) + budget_count(1.0 - c.rho_v, 2880);
            assert_eq!(kept, budget_count(r, 3380));
            assert!((c.rho_v - c.rho_a - 0.3).abs() < 0.01, "{c:?}");
        }
        assert!(omnizip_config_for_retention(&cfg, 0.0, &t).is_err());
    }
}
