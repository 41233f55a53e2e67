//! Reference strategies for the comparison harness.
//!
//! Both baselines keep `round(retention * total)` tokens, split between the
//! modalities in proportion to their sizes and spread evenly over windows.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::apportion;
use crate::rates::budget_count;
use crate::result::{CompressionResult, MergeGroup, StrategyId, StrategyParams, WindowResult};
use crate::stream::TokenStream;

/// Similarities closer than this are treated as ties.
const TIE_EPS: f64 = 1e-12;

/// Per-window `(audio, video)` keep counts for a pooled retention fraction.
pub fn modality_budgets(stream: &TokenStream, retention: f64) -> Result<Vec<(usize, usize)>> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::InvalidConfig(format!("retention {retention} is outside (0, 1]")));
    }
    let cfg = stream.config;
    let total_audio = cfg.total_audio_tokens();
    let total = total_audio + cfg.total_video_tokens();
    let keep = budget_count(retention, total);
    let keep_audio = budget_count(retention, total_audio).min(keep);
    let keep_video = keep - keep_audio;
    let audio = apportion(keep_audio, &vec![cfg.audio_tokens_per_window; cfg.num_windows]);
    let video = apportion(keep_video, &vec![cfg.video_tokens_per_window(); cfg.num_windows]);
    Ok(audio.into_iter().zip(video).collect())
}

fn realized_rate(kept: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        1.0 - kept as f64 / total as f64
    }
}

/// Keeps a uniformly random subset of each window and modality.
pub fn random_prune(stream: &TokenStream, retention: f64, seed: u64) -> Result<CompressionResult> {
    let budgets = modality_budgets(stream, retention)?;
    let cfg = stream.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, k: usize| {
        let mut picked = sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        picked
    };
    let windows = budgets
        .iter()
        .enumerate()
        .map(|(w, &(keep_audio, keep_video))| {
            let audio_kept = draw(cfg.audio_tokens_per_window, keep_audio);
            let video_kept = draw(cfg.video_tokens_per_window(), keep_video);
            WindowResult {
                window: w,
                audio_kept,
                video_kept,
                video_rate: realized_rate(keep_video, cfg.video_tokens_per_window()),
                ..Default::default()
            }
        })
        .collect();
    Ok(CompressionResult::new(
        StrategyId::Random,
        stream,
        StrategyParams::Random { retention, seed },
        windows,
    ))
}

struct Group {
    sum: Vec<f64>,
    members: Vec<usize>,
}

impl Group {
    fn head(&self) -> usize {
        self.members[0]
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa * bb).sqrt()
    }
}

/// Merges adjacent groups along `chains` until `target` groups remain.
///
/// Each step merges the most similar adjacent pair (cosine of group sums);
/// near-ties go to the pair whose left group starts at the lower index.
/// Returns the kept heads and the merge groups, both sorted.
pub fn merge_adjacent(tokens: &[f32], d: usize, chains: &[Vec<usize>], target: usize) -> (Vec<usize>, Vec<MergeGroup>) {
    let mut groups: Vec<Vec<Group>> = chains
        .iter()
        .map(|chain| {
            chain
                .iter()
                .map(|&t| Group {
                    sum: tokens[t * d..(t + 1) * d].iter().map(|&v| v as f64).collect(),
                    members: vec![t],
                })
                .collect()
        })
        .collect();
    let pair_sim = |g: &[Group], j: usize| cosine(&g[j].sum, &g[j + 1].sum);
    let mut sims: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| (0..g.len().saturating_sub(1)).map(|j| pair_sim(g, j)).collect())
        .collect();

    let mut count: usize = chains.iter().map(Vec::len).sum();
    while count > target {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for (c, chain_sims) in sims.iter().enumerate() {
            for (j, &s) in chain_sims.iter().enumerate() {
                let head = groups[c][j].head();
                let better = match best {
                    None => true,
                    Some((bs, bh, _, _)) => s > bs + TIE_EPS || ((s - bs).abs() <= TIE_EPS && head < bh),
                };
                if better {
                    best = Some((s, head, c, j));
                }
            }
        }
        let Some((_, _, c, j)) = best else { break };
        let right = groups[c].remove(j + 1);
        let left = &mut groups[c][j];
        left.sum.iter_mut().zip(&right.sum).for_each(|(a, b)| *a += b);
        left.members.extend(right.members);
        left.members.sort_unstable();
        sims[c].remove(j);
        if j > 0 {
            sims[c][j - 1] = pair_sim(&groups[c], j - 1);
        }
        if j < sims[c].len() {
            sims[c][j] = pair_sim(&groups[c], j);
        }
        count -= 1;
    }

    let mut kept = Vec::with_capacity(count);
    let mut merged = Vec::new();
    for g in groups.iter().flatten() {
        kept.push(g.head());
        if g.members.len() > 1 {
            merged.push(MergeGroup {
                anchor: g.head(),
                members: g.members[1..].to_vec(),
            });
        }
    }
    kept.sort_unstable();
    merged.sort_by_key(|g| g.anchor);
    (kept, merged)
}

/// TTM-like baseline: merges temporally adjacent tokens.
///
/// Audio tokens form one chain in temporal order. Video tokens form one chain
/// that visits each spatial position through all frames before moving to the
/// next position, so most adjacent pairs are the same patch in consecutive
/// frames.
pub fn temporal_merge(stream: &TokenStream, retention: f64) -> Result<CompressionResult> {
    let budgets = modality_budgets(stream, retention)?;
    let cfg = stream.config;
    let d = cfg.d;
    let audio_chain = vec![(0..cfg.audio_tokens_per_window).collect::<Vec<_>>()];
    let video_chain = vec![(0..cfg.video_tokens_per_frame)
        .flat_map(|p| (0..cfg.frames_per_window).map(move |f| f * cfg.video_tokens_per_frame + p))
        .collect::<Vec<_>>()];
    let windows = budgets
        .iter()
        .enumerate()
        .map(|(w, &(keep_audio, keep_video))| {
            let (audio_kept, merge_groups) = merge_adjacent(stream.audio_window(w), d, &audio_chain, keep_audio);
            let (video_kept, video_merge_groups) = merge_adjacent(stream.video_window(w), d, &video_chain, keep_video);
            WindowResult {
                window: w,
                audio_kept,
                merge_groups,
                video_kept,
                video_merge_groups,
                video_rate: realized_rate(keep_video, cfg.video_tokens_per_window()),
                ..Default::default()
            }
        })
        .collect();
    Ok(CompressionResult::new(
        StrategyId::TemporalMerge,
        stream,
        StrategyParams::TemporalMerge { retention },
        windows,
    ))
}
