//! Closed-form FLOPs accounting for prefill and KV-cached decode.
//!
//! Per layer, prefill costs `4nd^2 + 2n^2d + 2ndm` and generating `R` tokens
//! costs `R(4d^2 + 2dm) + 2 sum_{i=1..R} d(n + i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decode steps used when none are given.
pub const DEFAULT_DECODE_STEPS: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGeometry {
    /// Hidden dimension.
    pub d: u64,
    /// Feed-forward intermediate dimension.
    pub m: u64,
    pub layers: u64,
    pub decode_steps: u64,
}

/// Named geometries. The numbers come from the public Qwen2.5-Omni model
/// configs, not from measurements here.
pub const PRESETS: &[(&str, ModelGeometry)] = &[
    (
        "qwen2.5-omni-7b",
        ModelGeometry {
            d: 3584,
            m: 18944,
            layers: 28,
            decode_steps: DEFAULT_DECODE_STEPS,
        },
    ),
    (
        "qwen2.5-omni-3b",
        ModelGeometry {
            d: 2048,
            m: 11008,
            layers: 36,
            decode_steps: DEFAULT_DECODE_STEPS,
        },
    ),
];

pub const DEFAULT_PRESET: &str = "qwen2.5-omni-7b";

impl ModelGeometry {
    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, g)| g)
            .ok_or_else(|| {
                let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                Error::InvalidConfig(format!("unknown preset {name:?}; known: {}", known.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub tokens: u64,
    pub prefill_flops: f64,
    pub decode_flops: f64,
    pub total_flops: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub geometry: ModelGeometry,
    pub full: CostReport,
    pub compressed: CostReport,
    /// `compressed.total_flops / full.total_flops`.
    pub ratio: f64,
}

impl CostComparison {
    pub const CSV_HEADER: &'static str =
        "n_full,n_compressed,prefill_full,decode_full,total_full,prefill_compressed,decode_compressed,total_compressed,ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:.6}",
            self.full.tokens,
            self.compressed.tokens,
            self.full.prefill_flops,
            self.full.decode_flops,
            self.full.total_flops,
            self.compressed.prefill_flops,
            self.compressed.decode_flops,
            self.compressed.total_flops,
            self.ratio
        )
    }
}

/// Prefill FLOPs for `n` tokens, rounded once from the exact integer count.
pub fn prefill_flops(n: u64, g: &ModelGeometry) -> f64 {
    let exact = || -> Option<u128> {
        let (n, d, m, t) = (n as u128, g.d as u128, g.m as u128, g.layers as u128);
        let projections = 4u128.checked_mul(n)?.checked_mul(d)?.checked_mul(d)?;
        let attention = 2u128.checked_mul(n)?.checked_mul(n)?.checked_mul(d)?;
        let mlp = 2u128.checked_mul(n)?.checked_mul(d)?.checked_mul(m)?;
        t.checked_mul(projections.checked_add(attention)?.checked_add(mlp)?)
    };
    exact().map(|v| v as f64).unwrap_or_else(|| {
        let (n, d, m, t) = (n as f64, g.d as f64, g.m as f64, g.layers as f64);
        t * (4.0 * n * d * d + 2.0 * n * n * d + 2.0 * n * d * m)
    })
}

/// Decode FLOPs for `decode_steps` tokens after an `n`-token prompt, rounded
/// once from the exact integer count.
pub fn decode_flops(n: u64, g: &ModelGeometry) -> f64 {
    let exact = || -> Option<u128> {
        let (n, d, m, t, r) = (n as u128, g.d as u128, g.m as u128, g.layers as u128, g.decode_steps as u128);
        let dense = r.checked_mul(4u128.checked_mul(d)?.checked_mul(d)?.checked_add(2u128.checked_mul(d)?.checked_mul(m)?)?)?;
        let context = r.checked_mul(n)?.checked_add(r.checked_mul(r + 1)? / 2)?;
        let attention = 2u128.checked_mul(d)?.checked_mul(context)?;
        t.checked_mul(dense.checked_add(attention)?)
    };
    exact().map(|v| v as f64).unwrap_or_else(|| {
        let (n, d, m, t, r) = (n as f64, g.d as f64, g.m as f64, g.layers as f64, g.decode_steps as f64);
        t * (r * (4.0 * d * d + 2.0 * d * m) + 2.0 * d * (r * n + r * (r + 1.0) / 2.0))
    })
}

pub fn total_flops(n: u64, g: &ModelGeometry) -> CostReport {
    let prefill = prefill_flops(n, g);
    let decode = decode_flops(n, g);
    CostReport {
        tokens: n,
        prefill_flops: prefill,
        decode_flops: decode,
        total_flops: prefill + decode,
    }
}

pub fn flops_ratio(n_compressed: u64, n_full: u64, g: &ModelGeometry) -> Result<CostComparison> {
    if n_compressed > n_full {
        return Err(Error::OrderViolation {
            compressed: n_compressed,
            full: n_full,
        });
    }
    let full = total_flops(n_full, g);
    let compressed = total_flops(n_compressed, g);
    let ratio = if full.total_flops == 0.0 {
        1.0
    } else {
        compressed.total_flops / full.total_flops
    };
    Ok(CostComparison {
        geometry: *g,
        full,
        compressed,
        ratio,
    })
}
