//! Training data for the percentile network.
//!
//! Every multiset of 1 to 6 surgery types yields one row `(E, Var)` of the
//! summed lognormal moments. Rows with an outlying feature are dropped,
//! all-zero rows are appended so empty ORs are fitted, and the target is the
//! Fenton–Wilkinson `(1−α)` percentile.

use serde::{Deserialize, Serialize};

use crate::distributions::{lognormal_from_moments, lognormal_percentile, Moments};
use crate::error::{Error, Result};
use crate::instance::SurgeryType;

/// Largest combination size.
pub const MAX_COMBINATION: usize = 6;

/// Types need this many observations to enter the training data.
pub const MIN_TYPE_OBSERVATIONS: usize = 30;

/// Share of zero rows relative to the filtered set.
pub const ZERO_ROW_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingStats {
    pub generated: usize,
    pub after_outliers: usize,
    pub zero_rows: usize,
    /// Rows whose target fell below the mean (heavy-tailed sums).
    pub target_below_mean: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub expectation: Vec<f64>,
    pub variance: Vec<f64>,
    pub target: Vec<f64>,
    pub alpha: f64,
    pub stats: TrainingStats,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Build a set from explicit rows (targets given).
    pub fn from_rows(rows: &[(f64, f64, f64)], alpha: f64) -> Self {
        Self {
            expectation: rows.iter().map(|r| r.0).collect(),
            variance: rows.iter().map(|r| r.1).collect(),
            target: rows.iter().map(|r| r.2).collect(),
            alpha,
            stats: TrainingStats {
                generated: rows.len(),
                after_outliers: rows.len(),
                ..TrainingStats::default()
            },
        }
    }
}

/// `Σ_{k=1..6} C(n+k−1, k)`: rows generated from `n` types.
pub fn combination_count(n: usize) -> u64 {
    (1..=MAX_COMBINATION as u64)
        .map(|k| {
            // C(n+k-1, k) computed incrementally; exact in u64 for realistic n.
            (1..=k).fold(1u64, |acc, i| acc * (n as u64 + i - 1) / i)
        })
        .sum()
}

/// Summed moments of every multiset, sizes ascending, lexicographic within a size.
pub fn enumerate_combinations(parts: &[Moments]) -> (Vec<f64>, Vec<f64>) {
    let total = combination_count(parts.len()) as usize;
    let mut es = Vec::with_capacity(total);
    let mut vs = Vec::with_capacity(total);
    fn dfs(parts: &[Moments], start: usize, left: usize, e: f64, v: f64, es: &mut Vec<f64>, vs: &mut Vec<f64>) {
        if left == 0 {
            es.push(e);
            vs.push(v);
            return;
        }
        for (i, p) in parts.iter().enumerate().skip(start) {
            dfs(parts, i, left - 1, e + p.mean, v + p.variance, es, vs);
        }
    }
    for k in 1..=MAX_COMBINATION {
        dfs(parts, 0, k, 0.0, 0.0, &mut es, &mut vs);
    }
    (es, vs)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

pub fn generate_from_moments(parts: &[Moments], alpha: f64) -> Result<TrainingSet> {
    if parts.is_empty() {
        return Err(Error::Training("no surgery types to build training data from".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(p) = parts.iter().find(|p| !(p.mean > 0.0) || p.variance < 0.0) {
        return Err(Error::domain(format!("invalid type moments {p:?}")));
    }
    let (es, vs) = enumerate_combinations(parts);
    let generated = es.len();
    let (me, se) = mean_std(&es);
    let (mv, sv) = mean_std(&vs);
    let inside = |x: f64, m: f64, s: f64| x >= m - 3.0 * s && x <= m + 3.0 * s;

    let mut set = TrainingSet {
        alpha,
        ..TrainingSet::default()
    };
    for (&e, &v) in es.iter().zip(&vs) {
        if inside(e, me, se) && inside(v, mv, sv) {
            set.expectation.push(e);
            set.variance.push(v);
        }
    }
    let after_outliers = set.expectation.len();
    let zero_rows = (ZERO_ROW_SHARE * after_outliers as f64).round() as usize;

    let level = 1.0 - alpha;
    let mut below = 0;
    set.target.reserve(after_outliers + zero_rows);
    for (&e, &v) in set.expectation.iter().zip(&set.variance) {
        let t = lognormal_percentile(lognormal_from_moments(Moments { mean: e, variance: v })?, level)?;
        if t < e {
            below += 1;
        }
        set.target.push(t);
    }
    if below > 0 {
        log::warn!("{below} training rows have a percentile target below their mean");
    }
    set.expectation.extend(std::iter::repeat_n(0.0, zero_rows));
    set.variance.extend(std::iter::repeat_n(0.0, zero_rows));
    set.target.extend(std::iter::repeat_n(0.0, zero_rows));
    set.stats = TrainingStats {
        generated,
        after_outliers,
        zero_rows,
        target_below_mean: below,
    };
    Ok(set)
}

/// Training data from the lognormal moments of `types`.
pub fn generate_training_set(types: &[SurgeryType], alpha: f64) -> Result<TrainingSet> {
    let parts: Vec<Moments> = types.iter().map(|t| t.lognormal_moments()).collect();
    generate_from_moments(&parts, alpha)
}

/// Types with enough observations, keeping the `max_types` best observed.
pub fn select_training_types(types: &[SurgeryType], max_types: Option<usize>) -> Vec<SurgeryType> {
    let mut keep: Vec<&SurgeryType> = types
        .iter()
        .filter(|t| t.n_observations >= MIN_TYPE_OBSERVATIONS)
        .collect();
    // Stable on ties so the choice only depends on the input order.
    keep.sort_by(|a, b| b.n_observations.cmp(&a.n_observations));
    if let Some(m) = max_types {
        keep.truncate(m);
    }
    keep.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(mean: f64, variance: f64) -> Moments {
        Moments { mean, variance }
    }

    fn brute_count(n: usize) -> u64 {
        // Count nondecreasing tuples by direct enumeration.
        fn go(n: usize, start: usize, left: usize) -> u64 {
            if left == 0 {
                return 1;
            }
            (start..n).map(|i| go(n, i, left - 1)).sum()
        }
        (1..=MAX_COMBINATION).map(|k| go(n, 0, k)).sum()
    }

    #[test]
    fn stars_and_bars_counts() {
        assert_eq!(combination_count(1), 6);
        assert_eq!(combination_count(2), 27);
        assert_eq!(combination_count(35), 4_496_387);
        for n in 1..8 {
            assert_eq!(combination_count(n), brute_count(n));
        }
    }

    #[test]
    fn one_type_gives_six_rows() {
        let ts = generate_from_moments(&[m(100.0, 400.0)], 0.15).unwrap();
        assert_eq!(ts.stats.generated, 6);
        assert_eq!(ts.stats.after_outliers, 6);
        assert_eq!(ts.stats.zero_rows, 0);
        assert_eq!(ts.expectation, vec![100.0, 200.0, 300.0, 400.0, 500.0, 600.0]);
    }

    #[test]
    fn two_types_give_27_rows() {
        let (es, _) = enumerate_combinations(&[m(100.0, 1.0), m(50.0, 1.0)]);
        assert_eq!(es.len(), 27);
        assert_eq!(&es[..5], &[100.0, 50.0, 200.0, 150.0, 100.0]);
    }

    #[test]
    fn targets_match_percentile_and_zero_rows_appended() {
        let parts: Vec<Moments> = (0..12).map(|i| m(40.0 + 25.0 * i as f64, 100.0 + 90.0 * i as f64)).collect();
        let ts = generate_from_moments(&parts, 0.15).unwrap();
        assert_eq!(ts.stats.generated as u64, combination_count(12));
        assert!(ts.stats.after_outliers < ts.stats.generated);
        assert_eq!(ts.stats.zero_rows, (0.01 * ts.stats.after_outliers as f64).round() as usize);
        assert_eq!(ts.len(), ts.stats.after_outliers + ts.stats.zero_rows);
        for i in 0..ts.stats.after_outliers {
            let p = lognormal_from_moments(m(ts.expectation[i], ts.variance[i])).unwrap();
            assert_eq!(ts.target[i], lognormal_percentile(p, 0.85).unwrap());
            assert!(ts.target[i] >= ts.expectation[i]);
        }
        for i in ts.stats.after_outliers..ts.len() {
            assert_eq!((ts.expectation[i], ts.variance[i], ts.target[i]), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn errors_and_type_selection() {
        assert!(generate_from_moments(&[], 0.15).is_err());
        assert!(generate_from_moments(&[m(0.0, 1.0)], 0.15).is_err());
        let mk = |id: &str, n: usize| {
            let mut t = SurgeryType::deterministic(id, 60.0);
            t.n_observations = n;
            t
        };
        let types = vec![mk("a", 10), mk("b", 40), mk("c", 90), mk("d", 40), mk("e", 30)];
        let ids: Vec<String> = select_training_types(&types, Some(3)).into_iter().map(|t| t.type_id).collect();
        assert_eq!(ids, vec!["c", "b", "d"]);
        assert_eq!(select_training_types(&types, None).len(), 4);
    }

    proptest! {
        #[test]
        fn outlier_filter_keeps_inliers(seed_means in prop::collection::vec(20.0f64..400.0, 1..6)) {
            let parts: Vec<Moments> = seed_means.iter().map(|&x| m(x, x)).collect();
            let ts = generate_from_moments(&parts, 0.15).unwrap();
            prop_assert_eq!(ts.stats.generated as u64, combination_count(parts.len()));
            prop_assert!(ts.stats.after_outliers <= ts.stats.generated);
        }
    }
}
