//! Interleaved spatio-temporal compression of one window's video tokens.
//!
//! Frames alternate roles: frames 0, 2, ... (odd positions in 1-based
//! counting) are pruned spatially by density-peak scores, frames 1, 3, ... are
//! pruned temporally by their similarity to the preceding frame.


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityScore {
    /// Local density `exp(-mean squared distance to the k nearest neighbors)`.
    pub rho: f64,
    /// Distance to the nearest denser token (or the farthest token, for the densest one).
    pub delta: f64,
    pub score: f64,
}

/// Video pruning outcome for one window. Indices are window-local, frame-major.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCompression {
    pub kept: Vec<usize>,
    pub removed_temporal: Vec<usize>,
    pub removed_spatial: Vec<usize>,
}

/// Whether frame `f` (0-based) is pruned spatially.
pub fn is_spatial_frame(f: usize) -> bool {
    f % 2 == 0
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = ([0.0f64; 4], [0.0f64; 4], [0.0f64; 4]);
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let (x, y) = (x[l] as f64, y[l] as f64);
            ab[l] += x * y;
            aa[l] += x * x;
            bb[l] += y * y;
        }
    }
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        let (x, y) = (x as f64, y as f64);
        ab[0] += x * y;
        aa[0] += x * x;
        bb[0] += y * y;
    }
    let fold = |v: [f64; 4]| (v[0] + v[1]) + (v[2] + v[3]);
    let (ab, aa, bb) = (fold(ab), fold(aa), fold(bb));
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine similarity of same-position tokens in two frames.
pub fn temporal_similarity(prev: &[f32], curr: &[f32], d: usize) -> Result<Vec<f64>> {
    if d == 0 || prev.len() != curr.len() || prev.len() % d != 0 {
        return Err(Error::DimMismatch(format!(
            "frames hold {} and {} values, d = {d}",
            prev.len(),
            curr.len()
        )));
    }
    Ok(prev.chunks_exact(d).zip(curr.chunks_exact(d)).map(|(a, b)| cosine(a, b)).collect())
}

#[inline(always)]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            let t = x[l] - y[l];
            lanes[l] += t * t;
        }
    }
    let mut tail = 0.0;
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        let t = x - y;
        tail += t * t;
    }
    lanes.iter().sum::<f64>() + tail
}

/// Symmetric `n x n` matrix of squared distances, row-major.
fn pairwise_squared_distances(tokens: &[f32], n: usize, d: usize) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2; without fused multiply-add the
            // result matches the portable path bit for bit.
            return unsafe { pairwise_avx2(tokens, n, d) };
        }
    }
    pairwise_portable(tokens, n, d)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn pairwise_avx2(tokens: &[f32], n: usize, d: usize) -> Vec<f64> {
    pairwise_portable(tokens, n, d)
}

#[inline(always)]
fn pairwise_portable(tokens: &[f32], n: usize, d: usize) -> Vec<f64> {
    let tokens: Vec<f64> = tokens.iter().map(|&v| v as f64).collect();
    let mut sq = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = squared_distance(&tokens[i * d..(i + 1) * d], &tokens[j * d..(j + 1) * d]);
            sq[i * n + j] = v;
            sq[j * n + i] = v;
        }
    }
    sq
}

/// Density-peak scores of `n` tokens of width `d`, using `min(k, n - 1)` neighbors.
///
/// Tokens are ranked by `(rho desc, index asc)`. The top-ranked token takes
/// the largest distance to any token as `delta`; every other token takes the
/// smallest distance to a token ranked above it.
pub fn dpc_knn_scores(tokens: &[f32], d: usize, k: usize) -> Result<Vec<DensityScore>> {
    let n = if d == 0 { 0 } else { tokens.len() / d };
    if n < 2 {
        return Err(Error::TooFewTokens(n));
    }
    let neighbors = k.clamp(1, n - 1);

    let sq = pairwise_squared_distances(tokens, n, d);

    let mut nearest = vec![f64::INFINITY; neighbors];
    let rho: Vec<f64> = (0..n)
        .map(|i| {
            nearest.fill(f64::INFINITY);
            for (j, &v) in sq[i * n..(i + 1) * n].iter().enumerate() {
                if j == i || v >= nearest[neighbors - 1] {
                    continue;
                }
                let mut slot = neighbors - 1;
                while slot > 0 && nearest[slot - 1] > v {
                    nearest[slot] = nearest[slot - 1];
                    slot -= 1;
                }
                nearest[slot] = v;
            }
            let sum: f64 = nearest.iter().sum();
            (-(sum / neighbors as f64)).exp()
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));

    let mut delta = vec![0.0f64; n];
    let top = order[0];
    delta[top] = sq[top * n..(top + 1) * n].iter().copied().fold(0.0, f64::max).sqrt();
    for (r, &i) in order.iter().enumerate().skip(1) {
        let row = &sq[i * n..(i + 1) * n];
        delta[i] = order[..r].iter().map(|&j| row[j]).fold(f64::INFINITY, f64::min).sqrt();
    }

    Ok((0..n)
        .map(|i| DensityScore {
            rho: rho[i],
            delta: delta[i],
            score: rho[i] * delta[i],
        })
        .collect())
}

/// Removes the `m_remove` most similar `(token, similarity)` entries; ties go to the lower token.
pub fn temporal_prune(similarities: &[(usize, f64)], m_remove: usize) -> Result<Vec<usize>> {
    if m_remove > similarities.len() {
        return Err(Error::BudgetOutOfRange {
            requested: m_remove,
            available: similarities.len(),
        });
    }
    let mut ranked = similarities.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut removed: Vec<usize> = ranked[..m_remove].iter().map(|&(t, _)| t).collect();
    removed.sort_unstable();
    Ok(removed)
}

/// Positions of the `m_keep` highest density scores; ties go to the lower position.
pub fn spatial_prune(scores: &[DensityScore], m_keep: usize) -> Result<Vec<usize>> {
    if m_keep > scores.len() {
        return Err(Error::BudgetOutOfRange {
            requested: m_keep,
            available: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].score.total_cmp(&scores[a].score).then(a.cmp(&b)));
    let mut kept = order[..m_keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Splits `total` over `parts` equal pools by largest remainder (earlier pools first).
fn even_quotas(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Compresses one window of `frames x per_frame` tokens down to `keep` tokens.
pub fn compress_window_video(
    video: &[f32],
    frames: usize,
    per_frame: usize,
    d: usize,
    keep: usize,
    k: usize,
) -> Result<WindowCompression> {
    let total = frames * per_frame;
    if video.len() != total * d {
        return Err(Error::DimMismatch(format!(
            "window holds {} values, expected {total} tokens of width {d}",
            video.len()
        )));
    }
    if frames == 0 || keep < frames || keep > total {
        return Err(Error::BudgetOutOfRange {
            requested: keep,
            available: total,
        });
    }

    let spatial_frames: Vec<usize> = (0..frames).filter(|&f| is_spatial_frame(f)).collect();
    let temporal_frames: Vec<usize> = (0..frames).filter(|&f| !is_spatial_frame(f)).collect();
    let temporal_pool = temporal_frames.len() * per_frame;
    let spatial_pool = spatial_frames.len() * per_frame;

    let removals = total - keep;
    let mut remove_temporal = ((removals * temporal_pool) as f64 / total as f64).round() as usize;
    remove_temporal = remove_temporal.min(temporal_pool);
    let mut remove_spatial = removals - remove_temporal;
    if remove_spatial > spatial_pool {
        remove_temporal += remove_spatial - spatial_pool;
        remove_spatial = spatial_pool;
    }

    let frame = |f: usize| &video[f * per_frame * d..(f + 1) * per_frame * d];

    let mut similarities = Vec::with_capacity(temporal_pool);
    for &f in &temporal_frames {
        let sims = temporal_similarity(frame(f - 1), frame(f), d)?;
        similarities.extend(sims.into_iter().enumerate().map(|(p, s)| (f * per_frame + p, s)));
    }
    let removed_temporal = temporal_prune(&similarities, remove_temporal)?;

    let quotas = even_quotas(spatial_pool - remove_spatial, spatial_frames.len());
    let mut spatial_kept = Vec::with_capacity(spatial_pool - remove_spatial);
    for (&f, &quota) in spatial_frames.iter().zip(&quotas) {
        let local = if per_frame < 2 {
            (0..quota).collect()
        } else {
            spatial_prune(&dpc_knn_scores(frame(f), d, k)?, quota)?
        };
        spatial_kept.extend(local.into_iter().map(|p| f * per_frame + p));
    }

    let mut is_kept = vec![true; total];
    for &t in &removed_temporal {
        is_kept[t] = false;
    }
    let mut removed_spatial = Vec::with_capacity(remove_spatial);
    let mut spatial_keep_flags = vec![false; total];
    for &t in &spatial_kept {
        spatial_keep_flags[t] = true;
    }
    for &f in &spatial_frames {
        for t in f * per_frame..(f + 1) * per_frame {
            if !spatial_keep_flags[t] {
                is_kept[t] = false;
                removed_spatial.push(t);
            }
        }
    }
    let kept: Vec<usize> = (0..total).filter(|&t| is_kept[t]).collect();
    debug_assert_eq!(kept.len(), keep);
    Ok(WindowCompression {
        kept,
        removed_temporal,
        removed_spatial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        let a = [0.5f32, -1.0, 2.0, 3.0];
        let s = temporal_similarity(&a, &a, 2).unwrap();
        assert!(s.iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let neg: Vec<f32> = a.iter().map(|v| -v).collect();
        let s = temporal_similarity(&a, &neg, 2).unwrap();
        assert!(s.iter().all(|&v| (v + 1.0).abs() < 1e-12));
        let s = temporal_similarity(&[1.0, 0.0], &[1.0, 1.0], 2).unwrap();
        assert!((s[0] - 0.7071).abs() < 1e-4);
        assert_eq!(temporal_similarity(&[0.0, 0.0], &[1.0, 1.0], 2).unwrap(), vec![0.0]);
        assert!(temporal_similarity(&[0.0; 4], &[0.0; 2], 2).is_err());
    }

    #[test]
    fn dpc_one_dimensional_clusters() {
        let scores = dpc_knn_scores(&[0.0, 0.1, 5.0, 5.1], 1, 1).unwrap();
        assert!(scores.iter().all(|s| (s.rho - (-0.01f64).exp()).abs() < 1e-6));
        // both tight pairs get delta ~0.1; cluster representatives get ~5
        assert!((scores[1].delta - 0.1).abs() < 1e-6);
        assert!((scores[3].delta - 0.1).abs() < 1e-6);
        assert!(scores[0].score > 4.8 && scores[2].score > 4.8);
        assert_eq!(spatial_prune(&scores, 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn dpc_duplicates_score_zero() {
        let scores = dpc_knn_scores(&[1.0, 2.0, 1.0, 2.0], 2, 5).unwrap();
        assert_eq!(scores[0].rho, scores[1].rho);
        assert_eq!(scores[0].delta, 0.0);
        assert_eq!(scores[1].delta, 0.0);
        assert_eq!(scores[0].score, 0.0);
        assert_eq!(scores[1].score, 0.0);
    }

    #[test]
    fn dpc_clamps_neighbors() {
        let near = dpc_knn_scores(&[0.0, 0.5], 1, 5).unwrap();
        let far = dpc_knn_scores(&[0.0, 2.0], 1, 5).unwrap();
        assert!((near[0].rho - (-0.25f64).exp()).abs() < 1e-12);
        assert!(far[0].rho < near[0].rho);
        assert!(matches!(dpc_knn_scores(&[1.0], 1, 1), Err(Error::TooFewTokens(1))));
    }

    #[test]
    fn temporal_prune_examples() {
        let sims = [(0, 0.9), (1, 0.1), (2, 0.8), (3, 0.2)];
        assert!(temporal_prune(&sims, 0).unwrap().is_empty());
        assert_eq!(temporal_prune(&sims, 2).unwrap(), vec![0, 2]);
        let tied = [(4, 0.5), (5, 0.5), (6, 0.5), (7, 0.5)];
        assert_eq!(temporal_prune(&tied, 3).unwrap(), vec![4, 5, 6]);
        assert!(temporal_prune(&tied, 5).is_err());
    }

    #[test]
    fn spatial_prune_edges() {
        let scores = dpc_knn_scores(&[0.0, 0.1, 5.0, 5.1], 1, 1).unwrap();
        assert_eq!(spatial_prune(&scores, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(spatial_prune(&scores, 0).unwrap().is_empty());
        assert!(spatial_prune(&scores, 5).is_err());
    }

    #[test]
    fn full_keep_is_identity() {
        let video: Vec<f32> = (0..4 * 3 * 2).map(|v| v as f32).collect();
        let out = compress_window_video(&video, 4, 3, 2, 12, 5).unwrap();
        assert_eq!(out.kept, (0..12).collect::<Vec<_>>());
        assert!(out.removed_temporal.is_empty() && out.removed_spatial.is_empty());
    }

    #[test]
    fn identical_frames_split_removals_evenly() {
        let p = 6;
        let frame: Vec<f32> = (0..p * 3).map(|v| (v as f32).sin()).collect();
        let video: Vec<f32> = frame.iter().cycle().take(4 * p * 3).copied().collect();
        let out = compress_window_video(&video, 4, p, 3, 4 * p - p, 5).unwrap();
        assert_eq!(out.kept.len(), 3 * p);
        // P/2 from temporal frames, all tied, so the lowest indices of frame 1
        assert_eq!(out.removed_temporal, vec![p, p + 1, p + 2]);
        assert_eq!(out.removed_spatial.len(), p / 2);
    }

    #[test]
    fn budget_bounds() {
        let video = vec![0.0f32; 4 * 3];
        assert!(compress_window_video(&video, 4, 3, 1, 3, 5).is_err());
        assert!(compress_window_video(&video, 4, 3, 1, 13, 5).is_err());
        assert_eq!(compress_window_video(&video, 4, 3, 1, 4, 5).unwrap().kept.len(), 4);
    }

    #[test]
    fn lone_frame_is_spatial() {
        let video = [0.0f32, 0.1, 5.0, 5.1];
        let out = compress_window_video(&video, 1, 4, 1, 2, 1).unwrap();
        assert_eq!(out.kept, vec![0, 2]);
        assert!(out.removed_temporal.is_empty());
    }

    #[test]
    fn single_token_frames() {
        let video = [1.0f32, 2.0, 3.0, 4.0, 5.0];
        let out = compress_window_video(&video, 5, 1, 1, 5, 5).unwrap();
        assert_eq!(out.kept.len(), 5);
    }
}
