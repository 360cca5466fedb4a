//! Scenario-specific big-M values from auxiliary ILPs.
//!
//! `Q_od^l` is the largest scenario-`l` load slot `(o,d)` can carry under
//! the generic constraints alone, so `M = Q − C` is the smallest value that
//! keeps every generically feasible assignment feasible when `y = 1`.

use serde::{Deserialize, Serialize};

use super::scenarios::ScenarioSet;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::milp::{SolveOptions, SolveStatus};
use crate::scheduler::{build_base, BaseModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigMTable {
    /// `q[l][o]`, slots in instance order.
    pub q: Vec<Vec<f64>>,
    /// `m[l][o] = q[l][o] − C_o`.
    pub m: Vec<Vec<f64>>,
    /// Auxiliary ILPs actually solved.
    pub aux_solves: usize,
}

impl BigMTable {
    pub fn from_q(instance: &Instance, q: Vec<Vec<f64>>, aux_solves: usize) -> Self {
        let m = q
            .iter()
            .map(|row| row.iter().zip(&instance.slots).map(|(q, s)| q - s.capacity).collect())
            .collect();
        Self { q, m, aux_solves }
    }
}

/// Default per-call limit for the auxiliary ILPs.
pub const AUX_TIME_LIMIT_SECS: f64 = 10.0;

pub fn aux_options(time_limit_secs: f64) -> SolveOptions {
    SolveOptions {
        rel_gap: 0.0,
        ..SolveOptions::with_time_limit(time_limit_secs)
    }
}

/// Solve `max Σ_s X_so w_s^l` under the generic constraints.
fn solve_q(base: &BaseModel, slot: usize, weights: &[f64], opts: &SolveOptions) -> Result<f64> {
    let vars = &base.slot_vars[slot];
    if vars.is_empty() {
        return Ok(0.0);
    }
    let mut model = base.model.clone();
    model.set_objective(vars.iter().map(|&(s, v)| (v, weights[s])));
    let sol = crate::milp::solve(&model, opts)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(Error::Infeasible(
                "the generic scheduling constraints admit no assignment".into(),
            ))
        }
        other => {
            return Err(Error::Solver(format!(
                "auxiliary big-M problem did not reach optimality ({other:?}{})",
                sol.message.map(|m| format!(": {m}")).unwrap_or_default()
            )))
        }
    }
    // Recompute from the assignment so Q is an attained load.
    Ok(vars.iter().filter(|&&(_, v)| sol.is_one(v)).map(|&(s, _)| weights[s]).sum())
}

/// Slot order for the big-M pass: by day, then capacity, then position.
pub fn slot_order(instance: &Instance) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instance.slots.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&instance.slots[a], &instance.slots[b]);
        sa.day.cmp(&sb.day).then(sa.capacity.total_cmp(&sb.capacity)).then(a.cmp(&b))
    });
    order
}

/// Big-M for every slot and scenario, reusing values across equal-capacity
/// ORs of the same day.
pub fn compute_big_m(instance: &Instance, set: &ScenarioSet, opts: &SolveOptions) -> Result<BigMTable> {
    set.check_against(instance)?;
    let base = build_base(instance);
    let order = slot_order(instance);
    let n_slots = instance.slots.len();
    let mut q = vec![vec![0.0; n_slots]; set.len()];
    let mut solves = 0;
    for (l, weights) in set.durations.iter().enumerate() {
        let mut prev: Option<(u32, f64, f64)> = None;
        for &o in &order {
            let slot = &instance.slots[o];
            let value = match prev {
                Some((d, c, v)) if d == slot.day && c == slot.capacity => v,
                _ => {
                    solves += 1;
                    solve_q(&base, o, weights, opts)?
                }
            };
            q[l][o] = value;
            prev = Some((slot.day, slot.capacity, value));
        }
    }
    Ok(BigMTable::from_q(instance, q, solves))
}

/// Same table without the skip rule; every slot gets its own solve.
pub fn compute_big_m_unshared(instance: &Instance, set: &ScenarioSet, opts: &SolveOptions) -> Result<BigMTable> {
    set.check_against(instance)?;
    let base = build_base(instance);
    let mut solves = 0;
    let q = set
        .durations
        .iter()
        .map(|w| {
            (0..instance.slots.len())
                .map(|o| {
                    solves += 1;
                    solve_q(&base, o, w, opts)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BigMTable::from_q(instance, q, solves))
}
