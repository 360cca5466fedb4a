//! Monte-Carlo scoring, cross-method feasibility and overtime-case replays.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::inv_norm_cdf;
use crate::error::{Error, Result};
use crate::fnn::FeedForwardNet;
use crate::instance::{Instance, OrDaySlot, RawSurgery, SurgeryType, REGULAR_SESSION_MINUTES};
use crate::milp::{SolveOptions, FEASIBILITY_TOL};
use crate::pipeline::{Method, MethodContext, SbmSettings};
use crate::plf::Breakpoints;
use crate::sbm::{max_violations, violated_scenarios};
use crate::scheduler::Schedule;

pub const DEFAULT_DRAWS: usize = 10_000;
pub const DEFAULT_THRESHOLD: f64 = 0.15;

/// Draws per independent random stream.
const CHUNK: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationSource {
    /// Resample observed durations of the surgery's type.
    Empirical,
    /// Draw from the fitted lognormal.
    Lognormal,
    /// Empirical when every scheduled type has a pool, else lognormal.
    Auto,
}

impl std::str::FromStr for DurationSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(Self::Empirical),
            "lognormal" => Ok(Self::Lognormal),
            "auto" => Ok(Self::Auto),
            _ => Err(Error::domain(format!("unknown duration source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSimulation {
    pub or_id: String,
    pub day: u32,
    pub n_surgeries: usize,
    pub overtime_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub source: DurationSource,
    pub draws: usize,
    pub seed: u64,
    pub threshold: f64,
    pub slots: Vec<SlotSimulation>,
    /// Mean over slots with at least one surgery.
    pub average_prob: f64,
    /// Nonempty slots whose probability exceeds the threshold.
    pub excessive_slots: usize,
}

enum Sampler<'a> {
    Pool(&'a [f64]),
    Lognormal { mu: f64, sigma: f64 },
}

impl Sampler<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Pool(p) => p[rng.random_range(0..p.len())],
            Sampler::Lognormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
        }
    }
}

/// Empirical overtime frequency of each slot under random durations.
pub fn simulate(
    schedule: &Schedule,
    instance: &Instance,
    draws: usize,
    seed: u64,
    source: DurationSource,
    threshold: f64,
) -> Result<SimulationReport> {
    if draws == 0 {
        return Err(Error::domain("at least one draw is needed".to_string()));
    }
    schedule.check_against(instance)?;
    let has_pool = |s: usize| {
        instance
            .surgery_type(s)
            .duration_pool
            .as_ref()
            .is_some_and(|p| !p.is_empty())
    };
    let source = match source {
        DurationSource::Auto if schedule.assignments.iter().all(|a| has_pool(a.surgery)) => DurationSource::Empirical,
        DurationSource::Auto => DurationSource::Lognormal,
        other => other,
    };
    let mut items: Vec<(usize, Sampler)> = Vec::with_capacity(schedule.assignments.len());
    for a in &schedule.assignments {
        let t = instance.surgery_type(a.surgery);
        let sampler = match source {
            DurationSource::Empirical => match t.duration_pool.as_deref() {
                Some(p) if !p.is_empty() => Sampler::Pool(p),
                _ => {
                    return Err(Error::MissingContext(format!(
                        "type {} has no observed durations for empirical simulation",
                        t.type_id
                    )))
                }
            },
            _ => Sampler::Lognormal {
                mu: t.lognormal.mu,
                sigma: t.lognormal.sigma(),
            },
        };
        items.push((a.slot, sampler));
    }

    let n_slots = instance.slots.len();
    let caps: Vec<f64> = instance.slots.iter().map(|s| s.capacity).collect();
    let run_chunk = |chunk: usize| -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64);
        let n = CHUNK.min(draws - chunk * CHUNK);
        let mut over = vec![0u64; n_slots];
        let mut load = vec![0.0; n_slots];
        for _ in 0..n {
            load.iter_mut().for_each(|x| *x = 0.0);
            for (slot, sampler) in &items {
                load[*slot] += sampler.draw(&mut rng);
            }
            for o in 0..n_slots {
                if load[o] > caps[o] {
                    over[o] += 1;
                }
            }
        }
        over
    };
    let chunks = draws.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<u64>> = {
        use rayon::prelude::*;
        (0..chunks).into_par_iter().map(run_chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<u64>> = (0..chunks).map(run_chunk).collect();
    let mut over = vec![0u64; n_slots];
    for p in parts {
        for (o, c) in over.iter_mut().zip(p) {
            *o += c;
        }
    }

    let slots: Vec<SlotSimulation> = instance
        .slots
        .iter()
        .enumerate()
        .map(|(o, s)| SlotSimulation {
            or_id: s.or_id.clone(),
            day: s.day,
            n_surgeries: schedule.slots[o].n_surgeries,
            overtime_prob: over[o] as f64 / draws as f64,
        })
        .collect();
    let used: Vec<&SlotSimulation> = slots.iter().filter(|s| s.n_surgeries > 0).collect();
    let average_prob = if used.is_empty() {
        0.0
    } else {
        used.iter().map(|s| s.overtime_prob).sum::<f64>() / used.len() as f64
    };
    let excessive_slots = used.iter().filter(|s| s.overtime_prob > threshold).count();
    Ok(SimulationReport {
        source,
        draws,
        seed,
        threshold,
        slots,
        average_prob,
        excessive_slots,
    })
}

fn slot_sums(schedule: &Schedule, instance: &Instance, f: impl Fn(usize) -> (f64, f64)) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); instance.slots.len()];
    for a in &schedule.assignments {
        let (x, y) = f(a.surgery);
        out[a.slot].0 += x;
        out[a.slot].1 += y;
    }
    out
}

/// Whether each slot satisfies `method`'s overtime constraint (and the
/// mean-capacity row) at the schedule's fixed assignment.
pub fn cross_feasible(
    schedule: &Schedule,
    instance: &Instance,
    method: Method,
    ctx: &MethodContext,
) -> Result<Vec<bool>> {
    schedule.check_against(instance)?;
    let means = slot_sums(schedule, instance, |s| (instance.sample_mean(s), 0.0));
    let mean_ok: Vec<bool> = means
        .iter()
        .zip(&instance.slots)
        .map(|(m, s)| m.0 <= s.capacity + FEASIBILITY_TOL)
        .collect();
    let empty = |o: usize| schedule.slots[o].n_surgeries == 0;
    let verdicts: Vec<bool> = match method {
        Method::Fnn => {
            let net = ctx.require_net()?;
            let sums = slot_sums(schedule, instance, |s| {
                let m = instance.lognormal_moments(s);
                (m.mean, m.variance)
            });
            sums.iter()
                .zip(&instance.slots)
                .enumerate()
                .map(|(o, ((e, v), slot))| empty(o) || net.forward(*e, *v) <= slot.capacity + FEASIBILITY_TOL)
                .collect()
        }
        Method::Plf => {
            let bp = ctx.require_breakpoints()?;
            let z = inv_norm_cdf(1.0 - instance.alpha)?;
            let sums = slot_sums(schedule, instance, |s| {
                let n = instance.normal(s);
                (n.mu, n.sigma2)
            });
            sums.iter()
                .zip(&instance.slots)
                .enumerate()
                .map(|(o, ((mu, var), slot))| {
                    empty(o)
                        || bp
                            .approx_sqrt(*var)
                            .is_ok_and(|r| mu + z * r <= slot.capacity + FEASIBILITY_TOL)
                })
                .collect()
        }
        Method::Sbm => {
            let set = ctx.require_scenarios()?;
            set.check_against(instance)?;
            let limit = max_violations(instance.alpha, set.len());
            violated_scenarios(schedule, instance, set)
                .into_iter()
                .enumerate()
                .map(|(o, c)| empty(o) || c <= limit)
                .collect()
        }
    };
    Ok(verdicts.into_iter().zip(mean_ok).map(|(a, b)| a && b).collect())
}

/// Surgeries that shared one OR on one day in practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertimeCase {
    pub case_id: String,
    pub type_ids: Vec<String>,
    pub capacity: f64,
    pub realized_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub case_id: String,
    pub method: Method,
    pub allowed: bool,
    pub scheduled: usize,
    pub surgeries: usize,
}

/// Read cases: `case_id,type_ids[,capacity][,realized_total]` with
/// `;`-separated type ids.
pub fn read_cases(path: impl AsRef<Path>) -> Result<Vec<OvertimeCase>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_id), Some(c_types)) = (col("case_id"), col("type_ids")) else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "case file needs `case_id` and `type_ids` columns".into(),
        });
    };
    let (c_cap, c_real) = (col("capacity"), col("realized_total"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let num = |c: Option<usize>| -> Result<Option<f64>> {
            match c.and_then(|c| rec.get(c)).filter(|f| !f.is_empty()) {
                None => Ok(None),
                Some(f) => f.parse().map(Some).map_err(|_| bad(format!("bad number `{f}`"))),
            }
        };
        let type_ids: Vec<String> = rec
            .get(c_types)
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        if type_ids.len() < 2 {
            return Err(bad("an overtime case needs at least two surgeries".into()));
        }
        out.push(OvertimeCase {
            case_id: rec.get(c_id).unwrap_or("").to_string(),
            type_ids,
            capacity: num(c_cap)?.unwrap_or(REGULAR_SESSION_MINUTES),
            realized_total: num(c_real)?,
        });
    }
    Ok(out)
}

pub fn write_cases(cases: &[OvertimeCase], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "type_ids", "capacity", "realized_total"])?;
    for c in cases {
        w.write_record([
            c.case_id.clone(),
            c.type_ids.join(";"),
            format!("{:?}", c.capacity),
            c.realized_total.map(|x| format!("{x:?}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Random cases of 2 to 4 surgeries, drawn from types with an empirical
/// pool; the realized total resamples each pool once.
pub fn generate_cases(types: &[SurgeryType], count: usize, capacity: f64, seed: u64) -> Result<Vec<OvertimeCase>> {
    let pooled: Vec<&SurgeryType> = types
        .iter()
        .filter(|t| t.duration_pool.as_ref().is_some_and(|p| !p.is_empty()))
        .collect();
    if pooled.is_empty() {
        return Err(Error::InvalidInstance("no type has observed durations to build cases from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|k| {
            let n = rng.random_range(2..=4);
            let chosen: Vec<&SurgeryType> = (0..n).map(|_| pooled[rng.random_range(0..pooled.len())]).collect();
            let realized = chosen
                .iter()
                .map(|t| Sampler::Pool(t.duration_pool.as_deref().unwrap()).draw(&mut rng))
                .sum();
            OvertimeCase {
                case_id: format!("C{:04}", k + 1),
                type_ids: chosen.iter().map(|t| t.type_id.clone()).collect(),
                capacity,
                realized_total: Some(realized),
            }
        })
        .collect())
}

/// One-OR, one-day instance holding the case's surgeries (release 0, no
/// binding due date).
pub fn case_instance(case: &OvertimeCase, types: &[SurgeryType], alpha: f64) -> Result<Instance> {
    let mut used: Vec<SurgeryType> = Vec::new();
    for id in &case.type_ids {
        if !used.iter().any(|t| &t.type_id == id) {
            let t = types
                .iter()
                .find(|t| &t.type_id == id)
                .ok_or_else(|| Error::InvalidInstance(format!("case {} uses unknown type {id}", case.case_id)))?;
            used.push(t.clone());
        }
    }
    let raw = case
        .type_ids
        .iter()
        .enumerate()
        .map(|(k, t)| RawSurgery::new(format!("{}_{k}", case.case_id), t.clone(), 0, None))
        .collect();
    Instance::assemble(used, raw, vec![OrDaySlot::new("OR", 0, case.capacity)], alpha)
}

/// Solve the case instance under `method`; allowed iff everything is scheduled.
pub fn evaluate_overtime_case(
    case: &OvertimeCase,
    types: &[SurgeryType],
    method: Method,
    net: Option<&FeedForwardNet>,
    settings: &CaseSettings,
    alpha: f64,
) -> Result<CaseVerdict> {
    let instance = case_instance(case, types, alpha)?;
    let mut ctx = MethodContext {
        net: net.cloned(),
        breakpoints: settings.breakpoints.clone(),
        ..MethodContext::default()
    };
    ctx.prepare(&instance, method, &settings.sbm, settings.delta_max)?;
    let run = crate::pipeline::run_method(&instance, method, &ctx, &settings.solve)?;
    let scheduled = run.schedule.assignments.len();
    Ok(CaseVerdict {
        case_id: case.case_id.clone(),
        method,
        allowed: scheduled == case.type_ids.len(),
        scheduled,
        surgeries: case.type_ids.len(),
    })
}

#[derive(Debug, Clone)]
pub struct CaseSettings {
    /// Shared breakpoints; derived per case when absent.
    pub breakpoints: Option<Breakpoints>,
    pub delta_max: f64,
    pub sbm: SbmSettings,
    pub solve: SolveOptions,
}

impl Default for CaseSettings {
    fn default() -> Self {
        Self {
            breakpoints: None,
            delta_max: crate::plf::DEFAULT_DELTA_MAX,
            sbm: SbmSettings::default(),
            solve: SolveOptions::default(),
        }
    }
}

/// Flat per-slot rows for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRow {
    pub or_id: String,
    pub day: u32,
    pub method: String,
    pub constraint_prob: Option<f64>,
    pub simulated_prob: Option<f64>,
    pub verdict: Option<bool>,
}

pub fn slot_rows(schedule: &Schedule, sim: Option<&SimulationReport>, verdicts: Option<&[bool]>) -> Vec<SlotRow> {
    let method = schedule.method.clone().unwrap_or_default();
    schedule
        .slots
        .iter()
        .enumerate()
        .map(|(o, s)| SlotRow {
            or_id: s.or_id.clone(),
            day: s.day,
            method: method.clone(),
            constraint_prob: s.constraint_overtime_prob,
            simulated_prob: sim.map(|r| r.slots[o].overtime_prob),
            verdict: verdicts.map(|v| v[o]),
        })
        .collect()
}

pub fn write_slot_rows(rows: &[SlotRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["slot", "method", "constraint_prob", "simulated_prob", "verdict"])?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            format!("{}/{}", r.or_id, r.day),
            r.method.clone(),
            opt(r.constraint_prob),
            opt(r.simulated_prob),
            r.verdict.map(|v| if v { "accept" } else { "reject" }.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{LogNormalParams, NormalParams};

    fn single(pool: Vec<f64>) -> Instance {
        let t = SurgeryType::from_observations("T", pool).unwrap();
        Instance::assemble(
            vec![t],
            vec![RawSurgery::new("s", "T", 0, None)],
            vec![OrDaySlot::new("OR1", 0, 510.0)],
            0.15,
        )
        .unwrap()
    }

    #[test]
    fn constant_pools() {
        let i = single(vec![400.0]);
        let s = Schedule::from_pairs(&i, [(0, 0)]);
        let r = simulate(&s, &i, 2000, 1, DurationSource::Empirical, 0.15).unwrap();
        assert_eq!(r.slots[0].overtime_prob, 0.0);
        let mut i = single(vec![400.0]);
        i.types[0].duration_pool = Some(vec![600.0]);
        let r = simulate(&s, &i, 2000, 1, DurationSource::Auto, 0.15).unwrap();
        assert_eq!(r.source, DurationSource::Empirical);
        assert_eq!(r.slots[0].overtime_prob, 1.0);
        assert_eq!(r.excessive_slots, 1);
    }

    #[test]
    fn calibrated_lognormal_slot() {
        let z = inv_norm_cdf(0.85).unwrap();
        let (mu, s2): (f64, f64) = (5.8, 0.04);
        let cap = (mu + s2.sqrt() * z).exp();
        let t = SurgeryType::from_params(
            "T",
            NormalParams { mu: 300.0, sigma2: 100.0 },
            LogNormalParams { mu, sigma2: s2 },
        );
        let i = Instance::assemble(
            vec![t],
            vec![RawSurgery::new("s", "T", 0, None)],
            vec![OrDaySlot::new("OR1", 0, cap)],
            0.15,
        )
        .unwrap();
        let s = Schedule::from_pairs(&i, [(0, 0)]);
        let r = simulate(&s, &i, 10_000, 7, DurationSource::Auto, 0.15).unwrap();
        assert_eq!(r.source, DurationSource::Lognormal);
        assert!((r.slots[0].overtime_prob - 0.15).abs() <= 0.01, "{}", r.slots[0].overtime_prob);
        let again = simulate(&s, &i, 10_000, 7, DurationSource::Auto, 0.15).unwrap();
        assert_eq!(again, r);
        assert!(simulate(&s, &i, 100, 7, DurationSource::Empirical, 0.15).is_err());
    }

    #[test]
    fn empty_schedule_has_no_overtime() {
        let i = single(vec![100.0, 200.0]);
        let r = simulate(&Schedule::empty(&i), &i, 10, 0, DurationSource::Lognormal, 0.15).unwrap();
        assert_eq!(r.average_prob, 0.0);
        assert!(simulate(&Schedule::empty(&i), &i, 0, 0, DurationSource::Lognormal, 0.15).is_err());
    }

    #[test]
    fn case_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cases.csv");
        std::fs::write(&p, "case_id,type_ids,capacity,realized_total\nc1,A;B,,612\nc2,A;A;C,720,\n").unwrap();
        let cases = read_cases(&p).unwrap();
        assert_eq!(cases[0].type_ids, vec!["A", "B"]);
        assert_eq!(cases[0].capacity, 510.0);
        assert_eq!(cases[0].realized_total, Some(612.0));
        assert_eq!(cases[1].capacity, 720.0);
        std::fs::write(&p, "case_id,type_ids\nc1,A\n").unwrap();
        assert!(matches!(read_cases(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn generated_cases_round_trip() {
        let types = vec![
            SurgeryType::from_observations("A", vec![100.0, 120.0]).unwrap(),
            SurgeryType::from_observations("B", vec![200.0]).unwrap(),
        ];
        let cases = generate_cases(&types, 25, 510.0, 3).unwrap();
        assert!(cases.iter().all(|c| (2..=4).contains(&c.type_ids.len())));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cases.csv");
        write_cases(&cases, &p).unwrap();
        assert_eq!(read_cases(&p).unwrap(), cases);
        assert_eq!(generate_cases(&types, 25, 510.0, 3).unwrap(), cases);
    }

    #[test]
    fn case_instance_shape() {
        let types = vec![SurgeryType::deterministic("A", 200.0), SurgeryType::deterministic("B", 150.0)];
        let case = OvertimeCase {
            case_id: "c".into(),
            type_ids: vec!["A".into(), "B".into(), "A".into()],
            capacity: 510.0,
            realized_total: None,
        };
        let i = case_instance(&case, &types, 0.15).unwrap();
        assert_eq!(i.surgeries.len(), 3);
        assert!(i.surgeries.iter().all(|s| s.release == 0 && s.due == 1 && !s.has_due_in_horizon));
        let bad = OvertimeCase { type_ids: vec!["A".into(), "Z".into()], ..case };
        assert!(case_instance(&bad, &types, 0.15).is_err());
    }
}
