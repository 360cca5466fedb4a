//! Scenario-based chance constraints.
//!
//! Each slot may exceed its capacity in at most `⌊α|L|⌋` of the scenarios;
//! a binary `y_od^l` marks the scenarios where the capacity row is relaxed
//! by `M_od^l`.

pub mod bigm;
pub mod kmedoids;
pub mod scenarios;

pub use bigm::{compute_big_m, BigMTable};
pub use kmedoids::kmedoids_reduce;
pub use scenarios::{sample_scenarios, ScenarioSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::milp::{Sense, SolveOptions, Var};
use crate::scheduler::{build_base, extract_schedule, BaseModel, Schedule};

pub const GROUP_SCENARIO: &str = "sbm_scenario";
pub const GROUP_CARDINALITY: &str = "sbm_cardinality";

/// Largest number of scenarios a slot may violate.
pub fn max_violations(alpha: f64, scenarios: usize) -> usize {
    // The epsilon keeps exact products such as 0.15·20 = 3 from flooring to 2.
    (alpha * scenarios as f64 + 1e-9).floor() as usize
}

/// Attach the big-M scenario rows and the per-slot cardinality row.
pub fn add_sbm_constraints(
    base: &mut BaseModel,
    instance: &Instance,
    set: &ScenarioSet,
    bigm: &BigMTable,
) -> Result<Vec<(usize, Vec<Var>)>> {
    set.check_against(instance)?;
    if bigm.m.len() != set.len() || bigm.m.iter().any(|r| r.len() != instance.slots.len()) {
        return Err(Error::Model("big-M table does not match the scenario set".into()));
    }
    let limit = max_violations(instance.alpha, set.len()) as f64;
    let mut out = Vec::new();
    for (o, slot) in instance.slots.iter().enumerate() {
        if base.slot_vars[o].is_empty() {
            continue;
        }
        let mut ys = Vec::with_capacity(set.len());
        for (l, w) in set.durations.iter().enumerate() {
            let y = base.model.add_binary(format!("y_{}_{}_{l}", slot.or_id, slot.day));
            let terms = base.slot_vars[o]
                .iter()
                .map(|&(s, x)| (x, w[s]))
                .chain([(y, -bigm.m[l][o])]);
            base.model.add_constraint(GROUP_SCENARIO, terms, Sense::Le, slot.capacity);
            ys.push(y);
        }
        base.model
            .add_constraint(GROUP_CARDINALITY, ys.iter().map(|&y| (y, 1.0)), Sense::Le, limit);
        out.push((o, ys));
    }
    Ok(out)
}

/// Scenarios in which each slot's load exceeds its capacity.
pub fn violated_scenarios(schedule: &Schedule, instance: &Instance, set: &ScenarioSet) -> Vec<usize> {
    let mut count = vec![0; instance.slots.len()];
    for w in &set.durations {
        let mut load = vec![0.0; instance.slots.len()];
        for a in &schedule.assignments {
            load[a.slot] += w[a.surgery];
        }
        for (o, slot) in instance.slots.iter().enumerate() {
            if load[o] > slot.capacity {
                count[o] += 1;
            }
        }
    }
    count
}

/// Fraction of scenarios with overtime, per slot.
pub fn constraint_overtime_prob(schedule: &Schedule, instance: &Instance, set: &ScenarioSet) -> Vec<f64> {
    let n = set.len().max(1) as f64;
    violated_scenarios(schedule, instance, set)
        .into_iter()
        .map(|c| c as f64 / n)
        .collect()
}

pub fn build_model(instance: &Instance, set: &ScenarioSet, bigm: &BigMTable) -> Result<BaseModel> {
    let mut base = build_base(instance);
    add_sbm_constraints(&mut base, instance, set, bigm)?;
    Ok(base)
}

/// Big-M computation plus the scheduling solve.
pub fn solve(
    instance: &Instance,
    set: &ScenarioSet,
    opts: &SolveOptions,
    aux: &SolveOptions,
) -> Result<(Schedule, BigMTable)> {
    let bigm = compute_big_m(instance, set, aux)?;
    let schedule = solve_with_big_m(instance, set, &bigm, opts)?;
    Ok((schedule, bigm))
}

pub fn solve_with_big_m(
    instance: &Instance,
    set: &ScenarioSet,
    bigm: &BigMTable,
    opts: &SolveOptions,
) -> Result<Schedule> {
    let base = build_model(instance, set, bigm)?;
    let sol = crate::milp::solve(&base.model, opts)?;
    let mut schedule = extract_schedule(&base, &sol, instance)?;
    schedule.method = Some("sbm".into());
    let probs = constraint_overtime_prob(&schedule, instance, set);
    schedule.set_constraint_probs(&probs);
    Ok(schedule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowPoint {
    pub scenarios: usize,
    pub objective: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub points: Vec<ElbowPoint>,
    /// Index into `points` of the first stable size.
    pub chosen: usize,
}

/// Relative change below which successive objectives count as stable.
pub const ELBOW_TOLERANCE: f64 = 0.01;

/// First index whose next two relative changes are both below tolerance;
/// shorter tails only need the changes they have.
pub fn stable_index(objectives: &[f64]) -> usize {
    let rel = |a: f64, b: f64| {
        if a == b {
            0.0
        } else {
            (b - a).abs() / a.abs().max(1e-12)
        }
    };
    (0..objectives.len())
        .find(|&i| {
            let end = (i + 2).min(objectives.len() - 1);
            (i..end).all(|j| rel(objectives[j], objectives[j + 1]) < ELBOW_TOLERANCE)
        })
        .unwrap_or(objectives.len().saturating_sub(1))
}

/// Objective for increasing reduced-set sizes drawn from `full`.
pub fn elbow_scan(
    instance: &Instance,
    full: &ScenarioSet,
    sizes: &[usize],
    opts: &SolveOptions,
    aux: &SolveOptions,
) -> Result<ElbowCurve> {
    if sizes.is_empty() {
        return Err(Error::domain("no scenario sizes to scan".to_string()));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("scenario sizes must be nondecreasing".to_string()));
    }
    let sets = kmedoids::kmedoids_reduce_many(full, sizes)?;
    let mut points = Vec::with_capacity(sizes.len());
    for (set, &k) in sets.iter().zip(sizes) {
        let (schedule, _) = solve(instance, set, opts, aux)?;
        log::info!("elbow: {k} scenarios, objective {:.3}", schedule.objective.total);
        points.push(ElbowPoint {
            scenarios: k,
            objective: schedule.objective.total,
            gap: schedule.gap.unwrap_or(f64::NAN),
        });
    }
    let objectives: Vec<f64> = points.iter().map(|p| p.objective).collect();
    Ok(ElbowCurve {
        chosen: stable_index(&objectives),
        points,
    })
}
