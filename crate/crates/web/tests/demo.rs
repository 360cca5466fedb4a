use orsched_web::{breakpoint_table, percentiles, slot_overtime, BINS};

#[test]
fn breakpoint_table_stays_in_band() {
    let t = breakpoint_table(1.0, 432_280.0).unwrap();
    assert_eq!(t.xs.len(), 19);
    assert!(t.max_error <= t.delta + 1e-9);
    assert!(breakpoint_table(0.0, 100.0).is_err());
}

#[test]
fn percentiles_agree_for_low_variance() {
    let p = percentiles(&[120.0, 90.0, 60.0], &[20.0, 15.0, 10.0], 0.85, 200_000, 3).unwrap();
    assert!((p.fenton_wilkinson - p.monte_carlo).abs() / p.monte_carlo < 0.02, "{p:?}");
    assert!((p.normal - p.monte_carlo).abs() / p.monte_carlo < 0.02, "{p:?}");
    assert!((p.mean - 270.0).abs() < 1e-9);
    assert!(percentiles(&[1.0], &[], 0.85, 10, 0).is_err());
}

#[test]
fn slot_overtime_is_reproducible() {
    let a = slot_overtime(&[250.0, 200.0], &[60.0, 50.0], 510.0, 20_000, 9).unwrap();
    let b = slot_overtime(&[250.0, 200.0], &[60.0, 50.0], 510.0, 20_000, 9).unwrap();
    assert_eq!(a.simulated, b.simulated);
    assert_eq!(a.hist.len(), BINS);
    assert_eq!(a.hist.iter().sum::<u32>(), 20_000);
    assert!((a.simulated - a.fenton_wilkinson).abs() < 0.03, "{a:?}");
    assert!(slot_overtime(&[100.0], &[10.0], 0.0, 10, 0).is_err());
}
