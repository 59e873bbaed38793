use proptest::prelude::*;

use fogchain_cli::LatencyStats;

proptest! {
    #[test]
    fn latency_stats_are_ordered(values in prop::collection::vec(0.0f64..1e4, 1..200)) {
        let s = LatencyStats::from_ms(values.clone());
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(s.samples, values.len());
        prop_assert!(min <= s.p50_ms && s.p50_ms <= s.p95_ms && s.p95_ms <= max);
        prop_assert!(min - 1e-9 <= s.avg_ms && s.avg_ms <= max + 1e-9);
        prop_assert!(values.contains(&s.p50_ms) && values.contains(&s.p95_ms));
    }
}
