//! Per-window video pruning rates under a global budget.
//!
//! Windows with high audio retention get low pruning rates. The initial rates
//! are rescaled proportionally until their mean equals the global rate, with
//! rates that leave the slack-widened `[rho_min, rho_max]` band pinned to it.
//! Integer keep counts then follow by largest-remainder apportionment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extra room beyond `[rho_min, rho_max]` that normalization may use.
pub const CLAMP_SLACK: f64 = 0.05;
/// Budget tolerance for the normalized rate sum.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Audio pruning ratio.
    pub rho_a: f64,
    /// Global video pruning ratio.
    pub rho_v: f64,
    pub rho_max: f64,
    pub rho_min: f64,
    /// Maximum members merged into one audio anchor.
    pub g: usize,
    /// Neighbors used for density estimation.
    pub k: usize,
    /// Share of the audio keep budget spent on anchors.
    pub anchor_fraction: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            rho_a: 0.3,
            rho_v: 0.6,
            rho_max: 0.75,
            rho_min: 0.35,
            g: 3,
            k: 5,
            anchor_fraction: 0.2,
        }
    }
}

impl PruneConfig {
    /// Checks ranges; returns warnings for legal but unusual settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let unit = [
            ("rho_a", self.rho_a),
            ("rho_v", self.rho_v),
            ("rho_max", self.rho_max),
            ("rho_min", self.rho_min),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.anchor_fraction) {
            return Err(Error::InvalidConfig(format!(
                "anchor_fraction = {} is outside [0, 1)",
                self.anchor_fraction
            )));
        }
        if self.rho_min > self.rho_max {
            return Err(Error::InvalidConfig(format!(
                "rho_min = {} exceeds rho_max = {}",
                self.rho_min, self.rho_max
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let mut warnings = Vec::new();
        if self.rho_v < self.rho_a {
            warnings.push(format!(
                "video pruning ratio {} is below audio pruning ratio {}",
                self.rho_v, self.rho_a
            ));
        }
        Ok(warnings)
    }

    pub fn bounds(&self) -> RateBounds {
        RateBounds::with_slack(self.rho_min, self.rho_max)
    }
}

/// Closed interval normalized rates must stay in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateBounds {
    pub lo: f64,
    pub hi: f64,
}

impl RateBounds {
    pub fn with_slack(rho_min: f64, rho_max: f64) -> Self {
        RateBounds {
            lo: (rho_min - CLAMP_SLACK).max(0.0),
            hi: (rho_max + CLAMP_SLACK).min(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRates {
    pub initial: Vec<f64>,
    #[serde(rename = "final")]
    pub final_rates: Vec<f64>,
    pub keep_counts: Vec<usize>,
    /// Normalization could not meet the budget inside the bounds.
    pub infeasible: bool,
}

/// `rho_max - (rho_max - rho_min) * S_a(i)`.
pub fn initial_rates(retention: &[f64], rho_max: f64, rho_min: f64) -> Vec<f64> {
    retention.iter().map(|&s| rho_max - (rho_max - rho_min) * s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub rates: Vec<f64>,
    pub infeasible: bool,
}

/// Rescales `initial` so its mean is `rho_v`, pinning rates that cross `bounds`.
///
/// If every rate ends up pinned and the budget is still unmet, the residual
/// is spread uniformly and `infeasible` is set.
pub fn normalize_rates(initial: &[f64], rho_v: f64, bounds: RateBounds) -> Normalized {
    let n = initial.len();
    if n == 0 {
        return Normalized {
            rates: Vec::new(),
            infeasible: false,
        };
    }
    if initial.iter().all(|&r| r == initial[0]) {
        return Normalized {
            rates: vec![rho_v; n],
            infeasible: rho_v < bounds.lo || rho_v > bounds.hi,
        };
    }

    let budget = rho_v * n as f64;
    let mut rates = initial.to_vec();
    let mut pinned = vec![false; n];
    loop {
        let pinned_sum: f64 = (0..n).filter(|&i| pinned[i]).map(|i| rates[i]).sum();
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        if free.is_empty() {
            break;
        }
        let remaining = budget - pinned_sum;
        let free_sum: f64 = free.iter().map(|&i| rates[i]).sum();
        if free_sum > 0.0 {
            let scale = remaining / free_sum;
            free.iter().for_each(|&i| rates[i] *= scale);
        } else {
            let share = remaining / free.len() as f64;
            free.iter().for_each(|&i| rates[i] = share);
        }

        let mut clamped = false;
        for &i in &free {
            if rates[i] > bounds.hi {
                rates[i] = bounds.hi;
            } else if rates[i] < bounds.lo {
                rates[i] = bounds.lo;
            } else {
                continue;
            }
            pinned[i] = true;
            clamped = true;
        }
        if !clamped {
            break;
        }
    }

    let residual = budget - rates.iter().sum::<f64>();
    let infeasible = residual.abs() > BUDGET_TOLERANCE;
    if infeasible {
        let share = residual / n as f64;
        rates.iter_mut().for_each(|r| *r += share);
    }
    Normalized { rates, infeasible }
}

/// Rounds `keep_fraction * total` to the nearest token count.
pub fn budget_count(keep_fraction: f64, total: usize) -> usize {
    (keep_fraction * total as f64).round().max(0.0) as usize
}

/// Integer keep counts summing to `global_keep`, each in `[frames, tokens_per_window]`.
///
/// Ideal counts `(1 - rate) * tokens_per_window` are apportioned by largest
/// remainder (ties to the lower window). Windows below `frames` are topped
/// up from the window with the largest count.
pub fn keep_counts(final_rates: &[f64], tokens_per_window: usize, frames: usize, global_keep: usize) -> Result<Vec<usize>> {
    let n = final_rates.len();
    if global_keep < n * frames || global_keep > n * tokens_per_window {
        return Err(Error::InfeasibleBudget(format!(
            "{global_keep} video tokens cannot be spread over {n} windows with between {frames} and {tokens_per_window} each"
        )));
    }
    let ideal: Vec<f64> = final_rates
        .iter()
        .map(|&r| ((1.0 - r) * tokens_per_window as f64).clamp(0.0, tokens_per_window as f64))
        .collect();
    let mut counts: Vec<usize> = ideal.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();

    let mut order: Vec<usize> = (0..n).collect();
    let frac = |i: usize| ideal[i] - ideal[i].floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    if assigned < global_keep {
        let mut missing = global_keep - assigned;
        while missing > 0 {
            for &i in &order {
                if missing > 0 && counts[i] < tokens_per_window {
                    counts[i] += 1;
                    missing -= 1;
                }
            }
        }
    } else {
        let mut excess = assigned - global_keep;
        while excess > 0 {
            for &i in order.iter().rev() {
                if excess > 0 && counts[i] > frames {
                    counts[i] -= 1;
                    excess -= 1;
                }
            }
        }
    }

    for i in 0..n {
        while counts[i] < frames {
            let donor = (0..n)
                .filter(|&j| counts[j] > frames)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("global budget covers the per-window floor");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Full allocation from retention scores to keep counts.
pub fn allocate(
    retention: &[f64],
    config: &PruneConfig,
    tokens_per_window: usize,
    frames: usize,
) -> Result<PruneRates> {
    let initial = initial_rates(retention, config.rho_max, config.rho_min);
    let normalized = normalize_rates(&initial, config.rho_v, config.bounds());
    let global_keep = budget_count(1.0 - config.rho_v, tokens_per_window * retention.len());
    let counts = keep_counts(&normalized.rates, tokens_per_window, frames, global_keep)?;
    Ok(PruneRates {
        initial,
        final_rates: normalized.rates,
        keep_counts: counts,
        infeasible: normalized.infeasible,
    })
}
