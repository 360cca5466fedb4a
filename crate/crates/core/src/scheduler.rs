//! The generic elective scheduling model shared by all overtime methods.
//!
//! Assignment variables `X_sod` exist only for days on or after the surgery's
//! release day. On top of them sit the at-most-once rows, the due-date rows
//! for surgeries due inside the horizon and the mean-capacity rows. The
//! objective rewards scheduled mean duration plus a `1/(q_s+1)` priority.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::milp::{LinearModel, Sense, Solution, SolveStatus, Var};

pub const GROUP_MAX_ONE: &str = "max_one";
pub const GROUP_DUE: &str = "due";
pub const GROUP_MEAN_CAPACITY: &str = "mean_capacity";

#[derive(Debug, Clone)]
pub struct BaseModel {
    pub model: LinearModel,
    /// Per slot, the `(surgery, X_sod)` pairs in surgery order.
    pub slot_vars: Vec<Vec<(usize, Var)>>,
    /// Per surgery, the `(slot, X_sod)` pairs in slot order.
    pub surgery_vars: Vec<Vec<(usize, Var)>>,
}

impl BaseModel {
    pub fn x(&self, surgery: usize, slot: usize) -> Option<Var> {
        self.surgery_vars[surgery]
            .iter()
            .find(|(o, _)| *o == slot)
            .map(|&(_, v)| v)
    }

    /// Fix every assignment variable to match `schedule` (others to 0).
    pub fn fix_to(&mut self, schedule: &Schedule) {
        let chosen: std::collections::HashSet<(usize, usize)> =
            schedule.assignments.iter().map(|a| (a.surgery, a.slot)).collect();
        for (s, vars) in self.surgery_vars.iter().enumerate() {
            for &(o, v) in vars {
                let val = if chosen.contains(&(s, o)) { 1.0 } else { 0.0 };
                self.model.fix(v, val);
            }
        }
    }
}

pub fn objective_coefficient(instance: &Instance, s: usize) -> f64 {
    instance.sample_mean(s) + instance.surgeries[s].priority()
}

pub fn build_base(instance: &Instance) -> BaseModel {
    let mut model = LinearModel::new();
    let n_slots = instance.slots.len();
    let mut slot_vars = vec![Vec::new(); n_slots];
    let mut surgery_vars = Vec::with_capacity(instance.surgeries.len());

    for (s, surgery) in instance.surgeries.iter().enumerate() {
        let mut vars = Vec::new();
        for (o, slot) in instance.slots.iter().enumerate() {
            if slot.day < surgery.release {
                continue;
            }
            let v = model.add_binary(format!("X_{}_{}_{}", surgery.surgery_id, slot.or_id, slot.day));
            model.add_objective_term(v, objective_coefficient(instance, s));
            vars.push((o, v));
            slot_vars[o].push((s, v));
        }
        surgery_vars.push(vars);
    }

    for (s, surgery) in instance.surgeries.iter().enumerate() {
        let vars = &surgery_vars[s];
        model.add_constraint(GROUP_MAX_ONE, vars.iter().map(|&(_, v)| (v, 1.0)), Sense::Le, 1.0);
        if surgery.has_due_in_horizon {
            let window = vars
                .iter()
                .filter(|&&(o, _)| instance.slots[o].day <= surgery.due)
                .map(|&(_, v)| (v, 1.0));
            model.add_constraint(GROUP_DUE, window, Sense::Ge, 1.0);
        }
    }

    for (o, slot) in instance.slots.iter().enumerate() {
        let terms = slot_vars[o].iter().map(|&(s, v)| (v, instance.sample_mean(s)));
        model.add_constraint(GROUP_MEAN_CAPACITY, terms, Sense::Le, slot.capacity);
    }

    BaseModel {
        model,
        slot_vars,
        surgery_vars,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub surgery: usize,
    pub slot: usize,
    pub surgery_id: String,
    pub or_id: String,
    pub day: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotLoad {
    pub or_id: String,
    pub day: u32,
    pub capacity: f64,
    pub n_surgeries: usize,
    pub mean_load: f64,
    /// Overtime probability implied by the generating method's model.
    pub constraint_overtime_prob: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub duration: f64,
    pub priority: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub method: Option<String>,
    pub status: Option<SolveStatus>,
    pub gap: Option<f64>,
    pub objective: ObjectiveBreakdown,
    pub utilization: f64,
    pub assignments: Vec<Assignment>,
    pub slots: Vec<SlotLoad>,
}

impl Schedule {
    /// Build a schedule from `(surgery, slot)` pairs.
    pub fn from_pairs(instance: &Instance, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut assignments: Vec<Assignment> = pairs
            .into_iter()
            .map(|(s, o)| Assignment {
                surgery: s,
                slot: o,
                surgery_id: instance.surgeries[s].surgery_id.clone(),
                or_id: instance.slots[o].or_id.clone(),
                day: instance.slots[o].day,
            })
            .collect();
        assignments.sort_by_key(|a| (a.surgery, a.slot));
        let mut slots: Vec<SlotLoad> = instance
            .slots
            .iter()
            .map(|slot| SlotLoad {
                or_id: slot.or_id.clone(),
                day: slot.day,
                capacity: slot.capacity,
                n_surgeries: 0,
                mean_load: 0.0,
                constraint_overtime_prob: None,
            })
            .collect();
        for a in &assignments {
            slots[a.slot].n_surgeries += 1;
            slots[a.slot].mean_load += instance.sample_mean(a.surgery);
        }
        let mut schedule = Self {
            method: None,
            status: None,
            gap: None,
            objective: ObjectiveBreakdown::default(),
            utilization: 0.0,
            assignments,
            slots,
        };
        schedule.objective = objective_of(&schedule, instance);
        schedule.utilization = utilization(&schedule, instance);
        schedule
    }

    pub fn empty(instance: &Instance) -> Self {
        Self::from_pairs(instance, std::iter::empty())
    }

    /// Surgeries assigned to `slot`.
    pub fn surgeries_in(&self, slot: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments.iter().filter(move |a| a.slot == slot).map(|a| a.surgery)
    }

    pub fn is_scheduled(&self, surgery: usize) -> bool {
        self.assignments.iter().any(|a| a.surgery == surgery)
    }

    pub fn set_constraint_probs(&mut self, probs: &[f64]) {
        for (slot, &p) in self.slots.iter_mut().zip(probs) {
            slot.constraint_overtime_prob = Some(p);
        }
    }

    /// Mean constraint-implied probability over nonempty slots.
    pub fn average_constraint_prob(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .slots
            .iter()
            .filter(|s| s.n_surgeries > 0)
            .filter_map(|s| s.constraint_overtime_prob)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Re-attach to `instance` after deserialisation, checking ids agree.
    pub fn check_against(&self, instance: &Instance) -> Result<()> {
        if self.slots.len() != instance.slots.len() {
            return Err(Error::InvalidInstance("schedule and instance have different slots".into()));
        }
        for a in &self.assignments {
            let ok = instance.surgeries.get(a.surgery).is_some_and(|s| s.surgery_id == a.surgery_id)
                && instance
                    .slots
                    .get(a.slot)
                    .is_some_and(|o| o.or_id == a.or_id && o.day == a.day);
            if !ok {
                return Err(Error::InvalidInstance(format!(
                    "assignment {} -> {}/{} does not match the instance",
                    a.surgery_id, a.or_id, a.day
                )));
            }
        }
        Ok(())
    }
}

/// Read the assignment off a solved model.
pub fn extract_schedule(base: &BaseModel, solution: &Solution, instance: &Instance) -> Result<Schedule> {
    if !solution.status.has_solution() {
        return Err(Error::Infeasible(format!(
            "no schedule to extract (status {:?}{})",
            solution.status,
            solution.message.as_deref().map(|m| format!(": {m}")).unwrap_or_default()
        )));
    }
    let pairs = base
        .surgery_vars
        .iter()
        .enumerate()
        .flat_map(|(s, vars)| vars.iter().filter(|&&(_, v)| solution.is_one(v)).map(move |&(o, _)| (s, o)));
    let mut schedule = Schedule::from_pairs(instance, pairs);
    schedule.status = Some(solution.status);
    schedule.gap = Some(solution.gap);
    Ok(schedule)
}

/// Objective value with its duration/priority decomposition.
pub fn objective_of(schedule: &Schedule, instance: &Instance) -> ObjectiveBreakdown {
    let duration: f64 = schedule.assignments.iter().map(|a| instance.sample_mean(a.surgery)).sum();
    let priority: f64 = schedule
        .assignments
        .iter()
        .map(|a| instance.surgeries[a.surgery].priority())
        .sum();
    ObjectiveBreakdown {
        total: duration + priority,
        duration,
        priority,
    }
}

/// Scheduled mean duration over total capacity.
pub fn utilization(schedule: &Schedule, instance: &Instance) -> f64 {
    let cap = instance.total_capacity();
    if cap <= 0.0 {
        return 0.0;
    }
    schedule.assignments.iter().map(|a| instance.sample_mean(a.surgery)).sum::<f64>() / cap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    ScheduledTwice { surgery_id: String },
    BeforeRelease { surgery_id: String, day: u32 },
    DueDateMissed { surgery_id: String },
    MeanCapacity { or_id: String, day: u32, load: f64, capacity: f64 },
}

/// Re-check the generic constraints outside the solver.
pub fn validate(schedule: &Schedule, instance: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut count = vec![0usize; instance.surgeries.len()];
    for a in &schedule.assignments {
        count[a.surgery] += 1;
        let surgery = &instance.surgeries[a.surgery];
        let day = instance.slots[a.slot].day;
        if day < surgery.release {
            out.push(Violation::BeforeRelease {
                surgery_id: surgery.surgery_id.clone(),
                day,
            });
        }
    }
    for (s, surgery) in instance.surgeries.iter().enumerate() {
        if count[s] > 1 {
            out.push(Violation::ScheduledTwice {
                surgery_id: surgery.surgery_id.clone(),
            });
        }
        if surgery.has_due_in_horizon {
            let in_window = schedule.assignments.iter().any(|a| {
                let day = instance.slots[a.slot].day;
                a.surgery == s && day >= surgery.release && day <= surgery.due
            });
            if !in_window {
                out.push(Violation::DueDateMissed {
                    surgery_id: surgery.surgery_id.clone(),
                });
            }
        }
    }
    for (o, slot) in instance.slots.iter().enumerate() {
        let load: f64 = schedule.surgeries_in(o).map(|s| instance.sample_mean(s)).sum();
        if load > slot.capacity + crate::milp::FEASIBILITY_TOL {
            out.push(Violation::MeanCapacity {
                or_id: slot.or_id.clone(),
                day: slot.day,
                load,
                capacity: slot.capacity,
            });
        }
    }
    out
}
