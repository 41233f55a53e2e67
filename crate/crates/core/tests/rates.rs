use omnizip::rates::{allocate, initial_rates, keep_counts, normalize_rates, PruneConfig, RateBounds};
use proptest::prelude::*;

fn bounds() -> RateBounds {
    let pc = PruneConfig::default();
    RateBounds::with_slack(pc.rho_min, pc.rho_max)
}

proptest! {
    #[test]
    fn normalized_rates_keep_the_mean_and_order(
        retention in prop::collection::vec(0.0f64..=1.0, 1..24),
        rho_v in 0.35f64..=0.75,
    ) {
        let pc = PruneConfig::default();
        let initial = initial_rates(&retention, pc.rho_max, pc.rho_min);
        let out = normalize_rates(&initial, rho_v, bounds());
        prop_assert!(!out.infeasible);
        let mean = out.rates.iter().sum::<f64>() / out.rates.len() as f64;
        prop_assert!((mean - rho_v).abs() <= 1e-9);
        let b = bounds();
        prop_assert!(out.rates.iter().all(|&r| r >= b.lo - 1e-12 && r <= b.hi + 1e-12));
        let mut order: Vec<usize> = (0..retention.len()).collect();
        order.sort_by(|&a, &b| retention[a].total_cmp(&retention[b]));
        for pair in order.windows(2) {
            if retention[pair[0]] < retention[pair[1]] {
                prop_assert!(out.rates[pair[0]] >= out.rates[pair[1]] - 1e-12);
            }
        }
        let again = normalize_rates(&out.rates, rho_v, bounds());
        for (a, b) in again.rates.iter().zip(&out.rates) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn keep_counts_meet_budget_and_floor(
        rates in prop::collection::vec(0.0f64..=1.0, 1..16),
        frames in 1usize..5,
        per_frame in 1usize..20,
        frac in 0.0f64..=1.0,
    ) {
        let n = rates.len();
        let per_window = frames * per_frame;
        let lo = n * frames;
        let global = lo + ((n * per_window - lo) as f64 * frac).floor() as usize;
        let counts = keep_counts(&rates, per_window, frames, global).unwrap();
        prop_assert_eq!(counts.iter().sum::<usize>(), global);
        prop_assert!(counts.iter().all(|&c| c >= frames && c <= per_window));
    }
}

#[test]
fn out_of_range_budget_is_infeasible() {
    assert!(keep_counts(&[0.5, 0.5], 8, 4, 7).is_err());
    assert!(keep_counts(&[0.5, 0.5], 8, 4, 17).is_err());
    // a 0.99 pruning rate leaves fewer tokens than one per frame
    let pc = PruneConfig {
        rho_v: 0.99,
        ..PruneConfig::default()
    };
    assert!(allocate(&[0.2, 0.8], &pc, 8, 4).is_err());
}
