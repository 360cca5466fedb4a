//! Overtime rows from a network that predicts the Fenton–Wilkinson
//! percentile of a slot's total duration from its mean and variance.

pub mod data;
pub mod embed;
pub mod net;
pub mod train;

pub use data::{generate_training_set, select_training_types, TrainingSet};
pub use embed::{embed, SlotEmbedding};
pub use net::FeedForwardNet;
pub use train::{grid_search, train, Grid, TrainConfig};

use crate::distributions::{fenton_wilkinson_sum, norm_cdf, Moments};
use crate::error::Result;
use crate::instance::Instance;
use crate::milp::SolveOptions;
use crate::scheduler::{build_base, extract_schedule, BaseModel, Schedule};

/// Probability that a lognormal with these moments exceeds `capacity`.
pub fn lognormal_overtime_prob(parts: &[Moments], capacity: f64) -> f64 {
    if parts.is_empty() {
        return 0.0;
    }
    let p = match fenton_wilkinson_sum(parts) {
        Ok(p) => p,
        Err(_) => return 0.0,
    };
    if p.sigma2 <= 0.0 {
        return if p.mu.exp() <= capacity { 0.0 } else { 1.0 };
    }
    1.0 - norm_cdf((capacity.ln() - p.mu) / p.sigma())
}

/// Fenton–Wilkinson overtime probability of each slot.
pub fn constraint_overtime_prob(schedule: &Schedule, instance: &Instance) -> Vec<f64> {
    let mut parts = vec![Vec::new(); instance.slots.len()];
    for a in &schedule.assignments {
        parts[a.slot].push(instance.lognormal_moments(a.surgery));
    }
    parts
        .iter()
        .zip(&instance.slots)
        .map(|(p, s)| lognormal_overtime_prob(p, s.capacity))
        .collect()
}

/// Share of grid steps along `E` where the prediction does not decrease.
pub fn monotonicity_fraction(net: &FeedForwardNet, e_max: f64, v_max: f64, steps: usize) -> f64 {
    let layers = net.folded_layers();
    let (mut ok, mut total) = (0usize, 0usize);
    for iv in 0..=steps {
        let v = v_max * iv as f64 / steps as f64;
        let mut prev = net::forward_layers(&layers, 0.0, v);
        for ie in 1..=steps {
            let e = e_max * ie as f64 / steps as f64;
            let cur = net::forward_layers(&layers, e, v);
            total += 1;
            if cur >= prev - 1e-9 {
                ok += 1;
            } else {
                log::debug!("prediction decreases in E at E={e:.1}, Var={v:.1}");
            }
            prev = cur;
        }
    }
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}

pub fn build_model(instance: &Instance, net: &FeedForwardNet) -> Result<(BaseModel, Vec<SlotEmbedding>)> {
    let mut base = build_base(instance);
    let emb = embed(net, &mut base, instance)?;
    Ok((base, emb))
}

pub fn solve(instance: &Instance, net: &FeedForwardNet, opts: &SolveOptions) -> Result<Schedule> {
    let (base, _) = build_model(instance, net)?;
    let sol = crate::milp::solve(&base.model, opts)?;
    let mut schedule = extract_schedule(&base, &sol, instance)?;
    schedule.method = Some("fnn".into());
    let probs = constraint_overtime_prob(&schedule, instance);
    schedule.set_constraint_probs(&probs);
    Ok(schedule)
}
