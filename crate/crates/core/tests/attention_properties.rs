use actgraph::numerics::{seeded_init, InitScheme};
use actgraph::semantic::{visual_action_attention, SemanticParams, ValuesFrom};
use actgraph::temporal::{long_term_attention, short_term_attention, TemporalParams, WindowConfig};
use actgraph::Matrix;
use proptest::prelude::*;

fn actions(frames: usize, seed: u64) -> Matrix {
    seeded_init(frames, 4, seed, InitScheme::Uniform(2.0))
}

fn rows_sum_to_one(w: &Matrix) -> bool {
    (0..w.rows()).all(|r| (w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weights_are_row_stochastic(frames in 1usize..=8, seed in any::<u64>(), radius in 0usize..4) {
        let params = TemporalParams::<f64>::init(4, 3, 3, WindowConfig { radius, include_self: true }, seed);
        let m = actions(frames, seed ^ 1);
        let (_, long) = long_term_attention(&m, &params.long).unwrap();
        let (_, short) = short_term_attention(&m, &params.short, params.window).unwrap();
        prop_assert!(rows_sum_to_one(&long));
        prop_assert!(rows_sum_to_one(&short));
        let sem = SemanticParams::<f64>::init(5, 8, 3, 3, ValuesFrom::Action, seed ^ 2);
        let visual = seeded_init(frames, 5, seed ^ 3, InitScheme::Uniform(1.0));
        let fused = seeded_init(frames, 8, seed ^ 4, InitScheme::Uniform(1.0));
        let (_, w) = visual_action_attention(&visual, &fused, &sem).unwrap();
        prop_assert!(rows_sum_to_one(&w));
    }

    #[test]
    fn short_term_weights_vanish_outside_window(frames in 1usize..=8, seed in any::<u64>(), radius in 0usize..4) {
        let window = WindowConfig { radius, include_self: true };
        let params = TemporalParams::<f64>::init(4, 3, 3, window, seed);
        let (_, w) = short_term_attention(&actions(frames, seed ^ 5), &params.short, window).unwrap();
        for i in 0..frames {
            for j in 0..frames {
                if i.abs_diff(j) > radius {
                    prop_assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn wide_window_matches_long_term(frames in 1usize..=8, seed in any::<u64>(), extra in 0usize..3) {
        let window = WindowConfig { radius: frames - 1 + extra, include_self: true };
        let params = TemporalParams::<f64>::init(4, 3, 3, window, seed);
        let m = actions(frames, seed ^ 6);
        let (lo, lw) = long_term_attention(&m, &params.long).unwrap();
        let (so, sw) = short_term_attention(&m, &params.long, window).unwrap();
        for (a, b) in lw.data().iter().zip(sw.data()).chain(lo.data().iter().zip(so.data())) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
