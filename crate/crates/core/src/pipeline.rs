//! End-to-end compression: saliency, anchor consolidation, rate allocation,
//! and per-window video compression.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::istc::compress_window_video;
use crate::merge::{plan_window, MergePlan};
use crate::rates::{allocate, budget_count, PruneConfig};
use crate::result::{CompressionResult, MergeGroup, StrategyId, StrategyParams, WindowResult};
use crate::saliency::analyze;
use crate::stream::TokenStream;

/// Splits `total` over `weights` by largest remainder; ties go to the lower index.
///
/// Every share stays within its weight whenever `total <= sum(weights)`.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut shares: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(total * weights[i] % sum), i));
    let missing = total - shares.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        shares[i] += 1;
    }
    shares
}

/// Maps `f` over `0..n`, on `workers` threads when more than one is requested.
///
/// Output order is always the index order.
pub(crate) fn map_windows<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Precondition(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Audio keep budget split into `(salient, anchors)`.
pub fn audio_budget(total_audio: usize, config: &PruneConfig) -> (usize, usize) {
    let keep = budget_count(1.0 - config.rho_a, total_audio);
    let anchors = budget_count(config.anchor_fraction, keep);
    (keep - anchors, anchors)
}

/// Runs the full audio-guided pipeline on `stream`.
pub fn compress_stream(stream: &TokenStream, config: &PruneConfig, workers: usize) -> Result<CompressionResult> {
    let report = stream.validate();
    if !report.ok {
        return Err(Error::ValidationFailed(report.summary()));
    }
    config.validate()?;

    let started = Instant::now();
    let cfg = stream.config;
    let d = cfg.d;
    let (salient_budget, anchor_budget) = audio_budget(cfg.total_audio_tokens(), config);

    let saliency = analyze(stream, salient_budget)?;
    let non_salient_counts: Vec<usize> = saliency.non_salient.iter().map(Vec::len).collect();
    let anchors = apportion(anchor_budget, &non_salient_counts);

    let plans: Vec<MergePlan> = map_windows(cfg.num_windows, workers, |w| {
        plan_window(
            stream.audio_window(w),
            stream.video_window(w),
            d,
            &saliency.non_salient[w],
            anchors[w],
            config.g,
        )
    })?;

    let rates = allocate(
        &saliency.window_retention,
        config,
        cfg.video_tokens_per_window(),
        cfg.frames_per_window,
    )?;

    let videos = map_windows(cfg.num_windows, workers, |w| {
        compress_window_video(
            stream.video_window(w),
            cfg.frames_per_window,
            cfg.video_tokens_per_frame,
            d,
            rates.keep_counts[w],
            config.k,
        )
    })?;
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;

    let windows = plans
        .into_iter()
        .zip(videos)
        .enumerate()
        .map(|(w, (plan, video))| {
            let mut audio_kept: Vec<usize> = saliency.salient[w].iter().chain(&plan.anchors).copied().collect();
            audio_kept.sort_unstable();
            let merge_groups = plan
                .anchors
                .iter()
                .zip(plan.members)
                .map(|(&anchor, members)| MergeGroup { anchor, members })
                .collect();
            WindowResult {
                window: w,
                audio_kept,
                merge_groups,
                audio_discarded: plan.discarded,
                video_kept: video.kept,
                video_merge_groups: Vec::new(),
                removed_temporal: video.removed_temporal,
                removed_spatial: video.removed_spatial,
                video_rate: rates.final_rates[w],
            }
        })
        .collect();

    let mut result = CompressionResult::new(StrategyId::Omnizip, stream, StrategyParams::Omnizip(*config), windows);
    result.infeasible_budget = rates.infeasible;
    result.saliency = Some(saliency);
    result.rates = Some(rates);
    result.elapsed_ms = elapsed_ms;
    Ok(result)
}
