//! Browser bindings. Every export returns a JSON string; the plain Rust
//! functions underneath are what the tests exercise.

use orsched::distributions::{fenton_wilkinson_sum, inv_norm_cdf, lognormal_from_moments, Moments};
use orsched::fnn::lognormal_overtime_prob;
use orsched::plf::{breakpoints_for, normal_overtime_prob};
use orsched::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Histogram bins returned with a slot simulation.
pub const BINS: usize = 40;
const MAX_DRAWS: usize = 1_000_000;

#[derive(Debug, Serialize)]
pub struct BreakpointTable {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub delta: f64,
    /// Worst overestimate on a fine sweep, for display.
    pub max_error: f64,
}

#[derive(Debug, Serialize)]
pub struct Percentiles {
    pub level: f64,
    pub fenton_wilkinson: f64,
    pub normal: f64,
    pub monte_carlo: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Serialize)]
pub struct SlotOvertime {
    pub capacity: f64,
    pub fenton_wilkinson: f64,
    pub normal: f64,
    pub simulated: f64,
    pub draws: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
    pub hist: Vec<u32>,
}

pub fn breakpoint_table(delta_max: f64, x_max: f64) -> orsched::Result<BreakpointTable> {
    let bp = breakpoints_for(delta_max, x_max)?;
    let n = 2000;
    let mut max_error = 0.0f64;
    for i in 0..=n {
        let x = x_max * i as f64 / n as f64;
        max_error = max_error.max(bp.approx_sqrt(x)? - x.sqrt());
    }
    Ok(BreakpointTable {
        xs: bp.xs,
        ys: bp.ys,
        delta: bp.delta,
        max_error,
    })
}

fn parts(means: &[f64], sds: &[f64]) -> orsched::Result<Vec<Moments>> {
    if means.is_empty() || means.len() != sds.len() {
        return Err(Error::Domain(format!(
            "need matching, nonempty mean and sd lists (got {} and {})",
            means.len(),
            sds.len()
        )));
    }
    means
        .iter()
        .zip(sds)
        .map(|(&mean, &sd)| {
            if !(sd >= 0.0) {
                return Err(Error::Domain(format!("sd {sd} must be nonnegative")));
            }
            Ok(Moments { mean, variance: sd * sd })
        })
        .collect()
}

fn check_draws(draws: usize) -> orsched::Result<()> {
    if draws == 0 || draws > MAX_DRAWS {
        return Err(Error::Domain(format!("draws must lie in 1..={MAX_DRAWS}")));
    }
    Ok(())
}

/// Totals of `draws` independent lognormal sums.
fn sample_totals(ps: &[Moments], draws: usize, seed: u64) -> orsched::Result<Vec<f64>> {
    let dists = ps
        .iter()
        .map(|&m| {
            let p = lognormal_from_moments(m)?;
            LogNormal::new(p.mu, p.sigma()).map_err(|e| Error::Domain(e.to_string()))
        })
        .collect::<orsched::Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..draws).map(|_| dists.iter().map(|d| d.sample(&mut rng)).sum()).collect())
}

pub fn percentiles(means: &[f64], sds: &[f64], level: f64, draws: usize, seed: u64) -> orsched::Result<Percentiles> {
    let ps = parts(means, sds)?;
    check_draws(draws)?;
    let z = inv_norm_cdf(level)?;
    let total: Moments = ps.iter().copied().sum();
    let mut totals = sample_totals(&ps, draws, seed)?;
    totals.sort_by(f64::total_cmp);
    let k = ((level * draws as f64).ceil() as usize).clamp(1, draws) - 1;
    Ok(Percentiles {
        level,
        fenton_wilkinson: fenton_wilkinson_sum(&ps)?.percentile(level)?,
        normal: total.mean + z * total.variance.sqrt(),
        monte_carlo: totals[k],
        mean: total.mean,
        sd: total.variance.sqrt(),
    })
}

pub fn slot_overtime(means: &[f64], sds: &[f64], capacity: f64, draws: usize, seed: u64) -> orsched::Result<SlotOvertime> {
    let ps = parts(means, sds)?;
    check_draws(draws)?;
    if !(capacity > 0.0) {
        return Err(Error::Domain(format!("capacity {capacity} must be positive")));
    }
    let total: Moments = ps.iter().copied().sum();
    let totals = sample_totals(&ps, draws, seed)?;
    let over = totals.iter().filter(|&&t| t > capacity).count();

    let lo = totals.iter().copied().fold(f64::INFINITY, f64::min).min(capacity);
    let hi = totals.iter().copied().fold(0.0, f64::max).max(capacity);
    let width = (hi - lo).max(1e-9) / BINS as f64;
    let mut hist = vec![0u32; BINS];
    for t in &totals {
        hist[(((t - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    Ok(SlotOvertime {
        capacity,
        fenton_wilkinson: lognormal_overtime_prob(&ps, capacity),
        normal: normal_overtime_prob(total.mean, total.variance, capacity),
        simulated: over as f64 / draws as f64,
        draws,
        hist_lo: lo,
        hist_hi: hi,
        hist,
    })
}

fn to_js<T: Serialize>(r: orsched::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = breakpointTable)]
pub fn breakpoint_table_js(delta_max: f64, x_max: f64) -> Result<String, JsError> {
    to_js(breakpoint_table(delta_max, x_max))
}

#[wasm_bindgen(js_name = percentiles)]
pub fn percentiles_js(means: &[f64], sds: &[f64], level: f64, draws: usize, seed: u32) -> Result<String, JsError> {
    to_js(percentiles(means, sds, level, draws, seed as u64))
}

#[wasm_bindgen(js_name = slotOvertime)]
pub fn slot_overtime_js(means: &[f64], sds: &[f64], capacity: f64, draws: usize, seed: u32) -> Result<String, JsError> {
    to_js(slot_overtime(means, sds, capacity, draws, seed as u64))
}
