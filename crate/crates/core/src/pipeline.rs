//! Method selection, per-method inputs and the side-by-side comparison.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{cross_feasible, simulate, DurationSource};
use crate::fnn::data::MIN_TYPE_OBSERVATIONS;
use crate::fnn::{generate_training_set, select_training_types, train, FeedForwardNet, TrainConfig};
use crate::instance::{Instance, SurgeryType};
use crate::milp::SolveOptions;
use crate::plf::{build_breakpoints, Breakpoints, PlfConfig};
use crate::sbm::bigm::{aux_options, compute_big_m, BigMTable, AUX_TIME_LIMIT_SECS};
use crate::sbm::kmedoids::kmedoids_reduce;
use crate::sbm::scenarios::{sample_scenarios, ScenarioSet};
use crate::scheduler::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fnn,
    Plf,
    Sbm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fnn, Method::Plf, Method::Sbm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fnn => "fnn",
            Method::Plf => "plf",
            Method::Sbm => "sbm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fnn" => Ok(Method::Fnn),
            "plf" => Ok(Method::Plf),
            "sbm" => Ok(Method::Sbm),
            _ => Err(Error::domain(format!("unknown method `{s}` (expected fnn, plf or sbm)"))),
        }
    }
}

/// How scenarios are produced when none are supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSettings {
    /// Scenarios in the model.
    pub scenarios: usize,
    /// Sampled before k-medoids reduction; no reduction when `<= scenarios`.
    pub pool: usize,
    pub seed: u64,
    pub aux_time_limit: f64,
}

impl Default for SbmSettings {
    fn default() -> Self {
        Self {
            scenarios: 50,
            pool: 2000,
            seed: 0,
            aux_time_limit: AUX_TIME_LIMIT_SECS,
        }
    }
}

impl SbmSettings {
    pub fn generate(&self, instance: &Instance) -> Result<ScenarioSet> {
        if self.pool > self.scenarios {
            let pool = sample_scenarios(instance, self.pool, self.seed)?;
            Ok(kmedoids_reduce(&pool, self.scenarios)?.0)
        } else {
            sample_scenarios(instance, self.scenarios, self.seed)
        }
    }
}

/// Method-specific inputs. A missing one is an error for the method that needs it.
#[derive(Debug, Clone, Default)]
pub struct MethodContext {
    pub net: Option<FeedForwardNet>,
    pub breakpoints: Option<Breakpoints>,
    pub scenarios: Option<ScenarioSet>,
    pub big_m: Option<BigMTable>,
    pub aux_time_limit: Option<f64>,
}

impl MethodContext {
    pub fn require_net(&self) -> Result<&FeedForwardNet> {
        self.net
            .as_ref()
            .ok_or_else(|| Error::MissingContext("the fnn method needs a trained network (--net)".into()))
    }

    pub fn require_breakpoints(&self) -> Result<&Breakpoints> {
        self.breakpoints
            .as_ref()
            .ok_or_else(|| Error::MissingContext("the plf method needs breakpoints".into()))
    }

    pub fn require_scenarios(&self) -> Result<&ScenarioSet> {
        self.scenarios
            .as_ref()
            .ok_or_else(|| Error::MissingContext("the sbm method needs a scenario set".into()))
    }

    /// Derive breakpoints and scenarios that can be computed from the
    /// instance. The network is never trained here.
    pub fn prepare(&mut self, instance: &Instance, method: Method, sbm: &SbmSettings, delta_max: f64) -> Result<()> {
        match method {
            Method::Fnn => {
                self.require_net()?;
            }
            Method::Plf => {
                if self.breakpoints.is_none() {
                    self.breakpoints = Some(build_breakpoints(&PlfConfig::for_instance(instance, delta_max))?);
                }
            }
            Method::Sbm => {
                if self.scenarios.is_none() {
                    self.scenarios = Some(sbm.generate(instance)?);
                    self.big_m = None;
                }
                if self.aux_time_limit.is_none() {
                    self.aux_time_limit = Some(sbm.aux_time_limit);
                }
            }
        }
        Ok(())
    }
}

/// Train a network on the best-observed types (the default fnn context).
pub fn train_for_types(
    types: &[SurgeryType],
    alpha: f64,
    max_types: Option<usize>,
    cfg: &TrainConfig,
) -> Result<FeedForwardNet> {
    let chosen = select_training_types(types, max_types);
    if chosen.is_empty() {
        return Err(Error::Training(format!(
            "no surgery type has the {MIN_TYPE_OBSERVATIONS} observations needed for training"
        )));
    }
    let ts = generate_training_set(&chosen, alpha)?;
    log::info!("training on {} rows from {} types", ts.len(), chosen.len());
    train(&ts, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub schedule: Schedule,
    pub big_m: Option<BigMTable>,
    /// Wall time; left out of serialized output so reports are reproducible.
    #[serde(skip_serializing, default)]
    pub seconds: f64,
}

pub fn run_method(instance: &Instance, method: Method, ctx: &MethodContext, opts: &SolveOptions) -> Result<MethodRun> {
    let start = Instant::now();
    let (schedule, big_m) = match method {
        Method::Fnn => (crate::fnn::solve(instance, ctx.require_net()?, opts)?, None),
        Method::Plf => (crate::plf::solve(instance, ctx.require_breakpoints()?, opts)?, None),
        Method::Sbm => {
            let set = ctx.require_scenarios()?;
            let bigm = match &ctx.big_m {
                Some(b) if b.q.len() == set.len() && b.q.iter().all(|r| r.len() == instance.slots.len()) => b.clone(),
                _ => compute_big_m(
                    instance,
                    set,
                    &aux_options(ctx.aux_time_limit.unwrap_or(AUX_TIME_LIMIT_SECS)),
                )?,
            };
            let s = crate::sbm::solve_with_big_m(instance, set, &bigm, opts)?;
            (s, Some(bigm))
        }
    };
    Ok(MethodRun {
        method,
        schedule,
        big_m,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub draws: usize,
    pub seed: u64,
    pub source: DurationSource,
    pub threshold: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            draws: crate::evaluate::DEFAULT_DRAWS,
            seed: 0,
            source: DurationSource::Auto,
            threshold: crate::evaluate::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub objective: f64,
    pub duration_term: f64,
    pub priority_term: f64,
    pub utilization: f64,
    pub scheduled: usize,
    pub gap: Option<f64>,
    pub average_constraint_prob: Option<f64>,
    pub average_simulated_prob: Option<f64>,
    pub excessive_slots: Option<usize>,
    #[serde(skip_serializing, default)]
    pub seconds: f64,
}

/// Slots of `schedule_of`'s schedule accepted by `checked_by`'s constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub schedule_of: Method,
    pub checked_by: Method,
    pub accepted: usize,
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub cross: Vec<CrossCell>,
    pub runs: Vec<MethodRun>,
}

/// Solve with every method on the same instance, then check each schedule
/// against every method's constraint and optionally simulate it.
pub fn compare(
    instance: &Instance,
    ctx: &MethodContext,
    methods: &[Method],
    opts: &SolveOptions,
    sim: Option<&SimulationSettings>,
) -> Result<CompareReport> {
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &m in methods {
        let run = run_method(instance, m, ctx, opts)?;
        let report = sim
            .map(|s| simulate(&run.schedule, instance, s.draws, s.seed, s.source, s.threshold))
            .transpose()?;
        let sch = &run.schedule;
        rows.push(CompareRow {
            method: m,
            objective: sch.objective.total,
            duration_term: sch.objective.duration,
            priority_term: sch.objective.priority,
            utilization: sch.utilization,
            scheduled: sch.assignments.len(),
            gap: sch.gap,
            average_constraint_prob: sch.average_constraint_prob(),
            average_simulated_prob: report.as_ref().map(|r| r.average_prob),
            excessive_slots: report.as_ref().map(|r| r.excessive_slots),
            seconds: run.seconds,
        });
        runs.push(run);
    }
    let mut cross = Vec::new();
    for run in &runs {
        for &check in methods {
            let v = cross_feasible(&run.schedule, instance, check, ctx)?;
            cross.push(CrossCell {
                schedule_of: run.method,
                checked_by: check,
                accepted: v.iter().filter(|&&b| b).count(),
                slots: v.len(),
            });
        }
    }
    Ok(CompareReport { rows, cross, runs })
}

impl CompareReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let opt = |x: Option<f64>, p: usize| x.map_or("-".to_string(), |v| format!("{v:.p$}"));
        out.push_str(&format!(
            "{:<6} {:>10} {:>10} {:>10} {:>7} {:>5} {:>8} {:>8} {:>8} {:>6}\n",
            "method", "objective", "duration", "priority", "util", "n", "gap", "p_model", "p_sim", "excess"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:>10.3} {:>10.3} {:>10.3} {:>7.4} {:>5} {:>8} {:>8} {:>8} {:>6}\n",
                r.method.name(),
                r.objective,
                r.duration_term,
                r.priority_term,
                r.utilization,
                r.scheduled,
                opt(r.gap, 4),
                opt(r.average_constraint_prob, 4),
                opt(r.average_simulated_prob, 4),
                r.excessive_slots.map_or("-".into(), |x| x.to_string()),
            ));
        }
        out.push_str("\naccepted slots (rows: schedule, columns: constraint)\n");
        let methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        out.push_str(&format!("{:<6}", ""));
        for m in &methods {
            out.push_str(&format!(" {:>9}", m.name()));
        }
        out.push('\n');
        for s in &methods {
            out.push_str(&format!("{:<6}", s.name()));
            for c in &methods {
                let cell = self.cross.iter().find(|x| x.schedule_of == *s && x.checked_by == *c);
                let txt = cell.map_or("-".into(), |x| format!("{}/{}", x.accepted, x.slots));
                out.push_str(&format!(" {txt:>9}"));
            }
            out.push('\n');
        }
        out
    }
}
