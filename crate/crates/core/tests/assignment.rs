use fussi_core::tracker::hungarian::{assignment_cost, hungarian_min_cost};
use proptest::prelude::*;

/// Minimum over every injective map from the shorter side into the longer.
fn exhaustive(cost: &[f64], rows: usize, cols: usize) -> f64 {
    fn go(cost: &[f64], rows: usize, cols: usize, r: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if r == rows {
            *best = best.min(acc);
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                go(cost, rows, cols, r + 1, used, acc + cost[r * cols + c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    if rows <= cols {
        go(cost, rows, cols, 0, &mut vec![false; cols], 0.0, &mut best);
    } else {
        let t: Vec<f64> = (0..cols).flat_map(|c| (0..rows).map(move |r| cost[r * cols + c])).collect();
        go(&t, cols, rows, 0, &mut vec![false; rows], 0.0, &mut best);
    }
    best
}

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=7, 1usize..=7).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-50.0..100.0f64, r * c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exhaustive_minimum((r, c, cost) in matrix()) {
        let pairs = hungarian_min_cost(&cost, r, c);
        prop_assert_eq!(pairs.len(), r.min(c));
        let mut rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(rows.len(), r.min(c));
        prop_assert_eq!(cols.len(), r.min(c));
        prop_assert!((assignment_cost(&cost, c, &pairs) - exhaustive(&cost, r, c)).abs() < 1e-9);
    }

    #[test]
    fn integer_ties_still_optimal((r, c, cost) in matrix()) {
        let cost: Vec<f64> = cost.iter().map(|v| (v / 40.0).round()).collect();
        let pairs = hungarian_min_cost(&cost, r, c);
        prop_assert!((assignment_cost(&cost, c, &pairs) - exhaustive(&cost, r, c)).abs() < 1e-9);
        prop_assert_eq!(&pairs, &hungarian_min_cost(&cost, r, c));
    }
}
