//! PAM k-medoids (greedy BUILD, then best-improvement SWAP).

use serde::{Deserialize, Serialize};

use super::scenarios::ScenarioSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Medoid row indices, ascending.
    pub medoids: Vec<usize>,
    /// Total distance to the nearest medoid after BUILD and after each swap.
    pub cost_history: Vec<f64>,
    pub swaps: usize,
}

impl Clustering {
    pub fn cost(&self) -> f64 {
        *self.cost_history.last().unwrap()
    }
}

/// Symmetric Euclidean distance matrix, row-major.
pub fn distance_matrix(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let dist = |i: usize, j: usize| -> f64 {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let row = |i: usize| -> Vec<f64> { (0..n).map(|j| if i == j { 0.0 } else { dist(i, j) }).collect() };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..n).map(row).collect();
    rows.concat()
}

struct Assignment {
    nearest: Vec<usize>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn assign(d: &[f64], n: usize, medoids: &[usize]) -> Assignment {
    let mut a = Assignment {
        nearest: vec![0; n],
        d1: vec![f64::INFINITY; n],
        d2: vec![f64::INFINITY; n],
    };
    for j in 0..n {
        for (mi, &m) in medoids.iter().enumerate() {
            let x = d[m * n + j];
            if x < a.d1[j] {
                a.d2[j] = a.d1[j];
                a.d1[j] = x;
                a.nearest[j] = mi;
            } else if x < a.d2[j] {
                a.d2[j] = x;
            }
        }
    }
    a
}

/// Cluster on a precomputed `n × n` distance matrix.
pub fn pam(d: &[f64], n: usize, k: usize) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1".to_string()));
    }
    if k > n {
        return Err(Error::domain(format!("k = {k} exceeds the {n} points")));
    }
    assert_eq!(d.len(), n * n);

    // BUILD: start from the most central point, then add greedily.
    let mut medoids = Vec::with_capacity(k);
    let mut is_medoid = vec![false; n];
    let mut near = vec![f64::INFINITY; n];
    for _ in 0..k {
        let mut best = (f64::INFINITY, usize::MAX);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            let row = &d[c * n..(c + 1) * n];
            let total: f64 = row.iter().zip(&near).map(|(x, nj)| x.min(*nj)).sum();
            if total < best.0 {
                best = (total, c);
            }
        }
        let c = best.1;
        medoids.push(c);
        is_medoid[c] = true;
        for (nj, x) in near.iter_mut().zip(&d[c * n..(c + 1) * n]) {
            *nj = nj.min(*x);
        }
    }

    let mut a = assign(d, n, &medoids);
    let mut cost_history = vec![a.d1.iter().sum::<f64>()];
    let mut swaps = 0;
    let mut delta = vec![0.0; k];
    loop {
        let mut best = (0.0, usize::MAX, usize::MAX);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            delta.iter_mut().for_each(|x| *x = 0.0);
            let mut shared = 0.0;
            let row = &d[c * n..(c + 1) * n];
            for j in 0..n {
                let doj = row[j];
                let gain = (doj - a.d1[j]).min(0.0);
                shared += gain;
                delta[a.nearest[j]] += doj.min(a.d2[j]) - a.d1[j] - gain;
            }
            for (mi, &dm) in delta.iter().enumerate() {
                let total = dm + shared;
                if total < best.0 {
                    best = (total, mi, c);
                }
            }
        }
        // Relative threshold guards against cycling on rounding noise.
        if best.1 == usize::MAX || best.0 >= -1e-12 * cost_history[0].max(1.0) {
            break;
        }
        let (_, mi, c) = best;
        is_medoid[medoids[mi]] = false;
        is_medoid[c] = true;
        medoids[mi] = c;
        a = assign(d, n, &medoids);
        cost_history.push(a.d1.iter().sum());
        swaps += 1;
    }
    medoids.sort_unstable();
    Ok(Clustering {
        medoids,
        cost_history,
        swaps,
    })
}

/// Replace `set` by `k` of its own scenarios chosen as medoids.
pub fn kmedoids_reduce(set: &ScenarioSet, k: usize) -> Result<(ScenarioSet, Clustering)> {
    let d = distance_matrix(&set.durations);
    let c = pam(&d, set.len(), k)?;
    Ok((set.subset(&c.medoids), c))
}

/// Reduce one set to several sizes, sharing the distance matrix.
pub fn kmedoids_reduce_many(set: &ScenarioSet, sizes: &[usize]) -> Result<Vec<ScenarioSet>> {
    let d = distance_matrix(&set.durations);
    sizes
        .iter()
        .map(|&k| pam(&d, set.len(), k).map(|c| set.subset(&c.medoids)))
        .collect()
}
