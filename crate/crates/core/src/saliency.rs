//! Audio token saliency from encoder attention.
//!
//! Scores are the mean attention each audio token receives, pooled to the
//! audio token resolution. The globally highest-scoring tokens are salient;
//! the per-window salient fraction, min-max normalized across windows, gives
//! the retention score `S_a` that drives video pruning rates.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{AttentionSource, TokenStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    /// Pooled mean received attention, per window.
    pub scores: Vec<Vec<f64>>,
    pub salient: Vec<Vec<usize>>,
    pub non_salient: Vec<Vec<usize>>,
    /// `S_a(i)` in `[0, 1]`.
    pub window_retention: Vec<f64>,
    /// Fraction of each window's audio tokens marked salient.
    pub raw_retention_fraction: Vec<f64>,
}

fn check_finite(values: &[f32], tensor: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteValue {
            tensor: tensor.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

fn check_qk(query: &[f32], key: &[f32], d_att: usize) -> Result<usize> {
    if d_att == 0 || query.len() % d_att != 0 || query.len() != key.len() {
        return Err(Error::DimMismatch(format!(
            "query has {} values, key has {}, d_att = {d_att}",
            query.len(),
            key.len()
        )));
    }
    check_finite(query, "query")?;
    check_finite(key, "key")?;
    Ok(query.len() / d_att)
}

/// Query rows whose logits are computed per matrix product.
const ROW_BLOCK: usize = 64;

/// `e^x` for `x <= 0` in single precision, vectorizable.
///
/// Cody-Waite reduction to `r` in `[-ln2/2, ln2/2]`, a degree-6 polynomial,
/// and exponent-bit scaling. Relative error stays near 2e-7; inputs below
/// the normal range flush to the smallest normal.
#[inline(always)]
fn exp_nonpositive(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const SHIFTER: f32 = 12_582_912.0; // 1.5 * 2^23 rounds to nearest integer
    let x = x.max(-87.0);
    let t = x * LOG2E + SHIFTER;
    let n = t - SHIFTER;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.666_666_6e-1 + r * (4.166_579_6e-2 + r * (8.333_452e-3 + r * 1.394_529_9e-3)))));
    let bits = (t.to_bits() as i32 - SHIFTER.to_bits() as i32 + 127) << 23;
    p * f32::from_bits(bits as u32)
}

/// Replaces `row` by `exp(row - max(row))` and returns the row sum.
fn exp_row(row: &mut [f32]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2. No fused multiply-add is enabled,
            // so results match the portable path bit for bit.
            return unsafe { exp_row_avx2(row) };
        }
    }
    exp_row_portable(row)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn exp_row_avx2(row: &mut [f32]) -> f64 {
    exp_row_portable(row)
}

#[inline(always)]
fn exp_row_portable(row: &mut [f32]) -> f64 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    for v in row.iter_mut() {
        *v = exp_nonpositive(*v - max);
    }
    let mut lanes = [0.0f64; 8];
    let mut chunks = row.chunks_exact(8);
    for c in &mut chunks {
        for (l, &v) in lanes.iter_mut().zip(c) {
            *l += v as f64;
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|&v| v as f64).sum();
    lanes.iter().sum::<f64>() + tail
}

/// `acc[j] += e[j] * scale` in double precision.
fn accumulate_scaled(acc: &mut [f64], e: &[f32], scale: f64) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { accumulate_scaled_avx2(acc, e, scale) };
        }
    }
    accumulate_scaled_portable(acc, e, scale)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn accumulate_scaled_avx2(acc: &mut [f64], e: &[f32], scale: f64) {
    accumulate_scaled_portable(acc, e, scale)
}

#[inline(always)]
fn accumulate_scaled_portable(acc: &mut [f64], e: &[f32], scale: f64) {
    for (c, &v) in acc.iter_mut().zip(e) {
        *c += v as f64 * scale;
    }
}

/// Feeds every row of `softmax(Q K^T / sqrt(d_att))` to `visit`.
///
/// Logits come from single-precision matrix products; after max subtraction
/// each row is exponentiated in single precision and handed over with its
/// double-precision reciprocal sum, so `e[j] as f64 * inv` is the attention
/// weight.
fn for_each_softmax_row(query: &[f32], key: &[f32], d_att: usize, n: usize, mut visit: impl FnMut(usize, &[f32], f64)) {
    if n == 0 {
        return;
    }
    let scale = 1.0 / (d_att as f32).sqrt();
    let mut block = vec![0.0f32; ROW_BLOCK * n];
    for start in (0..n).step_by(ROW_BLOCK) {
        let rows = ROW_BLOCK.min(n - start);
        let q = &query[start * d_att..(start + rows) * d_att];
        // SAFETY: q is rows x d_att, key is n x d_att read transposed through
        // its strides, and block holds at least rows x n outputs.
        unsafe {
            matrixmultiply::sgemm(
                rows,
                d_att,
                n,
                scale,
                q.as_ptr(),
                d_att as isize,
                1,
                key.as_ptr(),
                1,
                d_att as isize,
                0.0,
                block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        for (r, row) in block.chunks_exact_mut(n).take(rows).enumerate() {
            let sum = exp_row(row);
            visit(start + r, row, 1.0 / sum);
        }
    }
}

/// Dense `n x n` attention matrix, row-major.
pub fn attention_from_qk(query: &[f32], key: &[f32], d_att: usize) -> Result<Vec<f64>> {
    let n = check_qk(query, key, d_att)?;
    let mut a = vec![0.0; n * n];
    for_each_softmax_row(query, key, d_att, n, |i, e, inv| {
        for (o, &v) in a[i * n..(i + 1) * n].iter_mut().zip(e) {
            *o = v as f64 * inv;
        }
    });
    Ok(a)
}

/// Column means of an `n x n` row-stochastic matrix.
pub fn mean_received_attention<T: Copy + Into<f64>>(matrix: &[T], n: usize) -> Vec<f64> {
    let mut cols = vec![0.0f64; n];
    for row in matrix.chunks_exact(n.max(1)).take(n) {
        for (c, &v) in cols.iter_mut().zip(row) {
            *c += v.into();
        }
    }
    let inv = 1.0 / n as f64;
    cols.iter_mut().for_each(|c| *c *= inv);
    cols
}

/// Same as `mean_received_attention(attention_from_qk(..))` without storing the matrix.
pub fn received_attention_from_qk(query: &[f32], key: &[f32], d_att: usize) -> Result<Vec<f64>> {
    let n = check_qk(query, key, d_att)?;
    let mut cols = vec![0.0f64; n];
    for_each_softmax_row(query, key, d_att, n, |_, e, inv| accumulate_scaled(&mut cols, e, inv));
    let inv = 1.0 / n as f64;
    cols.iter_mut().for_each(|c| *c *= inv);
    Ok(cols)
}

/// Non-overlapping average pooling with window `pool`.
pub fn pool_scores(scores: &[f64], pool: usize) -> Result<Vec<f64>> {
    if pool == 0 || scores.len() % pool != 0 {
        return Err(Error::IndivisibleLength {
            len: scores.len(),
            pool,
        });
    }
    Ok(scores
        .chunks_exact(pool)
        .map(|c| c.iter().sum::<f64>() / pool as f64)
        .collect())
}

/// Global top-`budget` selection across all windows.
///
/// Ties go to the lower `(window, index)`. Returns `(salient, non_salient)`,
/// each sorted per window.
pub fn select_salient(scores: &[Vec<f64>], budget: usize) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let total: usize = scores.iter().map(Vec::len).sum();
    if budget > total {
        return Err(Error::BudgetOutOfRange {
            requested: budget,
            available: total,
        });
    }
    let mut order: Vec<(usize, usize)> = scores
        .iter()
        .enumerate()
        .flat_map(|(w, s)| (0..s.len()).map(move |t| (w, t)))
        .collect();
    let rank = |a: &(usize, usize), b: &(usize, usize)| -> Ordering {
        scores[b.0][b.1].total_cmp(&scores[a.0][a.1]).then(a.cmp(b))
    };
    if budget < order.len() && budget > 0 {
        order.select_nth_unstable_by(budget - 1, rank);
    }

    let mut is_salient: Vec<Vec<bool>> = scores.iter().map(|s| vec![false; s.len()]).collect();
    for &(w, t) in &order[..budget] {
        is_salient[w][t] = true;
    }
    let split = |want: bool| -> Vec<Vec<usize>> {
        is_salient
            .iter()
            .map(|flags| (0..flags.len()).filter(|&t| flags[t] == want).collect())
            .collect()
    };
    Ok((split(true), split(false)))
}

/// Raw per-window salient fraction and its min-max normalization `S_a`.
///
/// Silent windows count as zero retention. When every window has the same
/// raw fraction all scores are 0.5.
pub fn window_retention(salient: &[Vec<usize>], audio_tokens_per_window: usize) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = salient
        .iter()
        .map(|s| {
            if audio_tokens_per_window == 0 {
                0.0
            } else {
                s.len() as f64 / audio_tokens_per_window as f64
            }
        })
        .collect();
    (raw.clone(), normalize_retention(&raw))
}

pub fn normalize_retention(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|&r| ((r - min) / (max - min)).clamp(0.0, 1.0)).collect()
}

/// Pooled received-attention scores for every audio token, grouped by window.
pub fn audio_scores(stream: &TokenStream) -> Result<Vec<Vec<f64>>> {
    let cfg = &stream.config;
    let raw = match &stream.attention {
        AttentionSource::QueryKey { query, key, d_att } => received_attention_from_qk(query, key, *d_att)?,
        AttentionSource::Precomputed { matrix } => {
            let n = cfg.raw_audio_tokens();
            if matrix.len() != n * n {
                return Err(Error::DimMismatch(format!(
                    "attention has {} values, expected {n}x{n}",
                    matrix.len()
                )));
            }
            mean_received_attention(matrix, n)
        }
    };
    if raw.len() != cfg.raw_audio_tokens() {
        return Err(Error::DimMismatch(format!(
            "attention covers {} audio positions, expected {}",
            raw.len(),
            cfg.raw_audio_tokens()
        )));
    }
    let pooled = pool_scores(&raw, cfg.audio_pool_size)?;
    let per_window = cfg.audio_tokens_per_window;
    Ok((0..cfg.num_windows)
        .map(|w| pooled[w * per_window..(w + 1) * per_window].to_vec())
        .collect())
}

/// Runs scoring, selection, and retention scoring for a salient budget.
pub fn analyze(stream: &TokenStream, salient_budget: usize) -> Result<SaliencyReport> {
    let scores = audio_scores(stream)?;
    let (salient, non_salient) = select_salient(&scores, salient_budget)?;
    let (raw, retention) = window_retention(&salient, stream.config.audio_tokens_per_window);
    Ok(SaliencyReport {
        scores,
        salient,
        non_salient,
        window_retention: retention,
        raw_retention_fraction: raw,
    })
}
