#![cfg(feature = "highs")]

use orsched::instance::{Instance, OrDaySlot, RawSurgery, SurgeryType};
use orsched::milp::{self, SolveOptions};
use orsched::scheduler::{build_base, extract_schedule, objective_coefficient, validate, Schedule};
use proptest::prelude::*;

fn exact() -> SolveOptions {
    SolveOptions {
        rel_gap: 0.0,
        ..SolveOptions::with_time_limit(30.0)
    }
}

fn instance(means: &[f64], releases: &[u32], dues: &[Option<u32>], caps: &[(u32, f64)]) -> Option<Instance> {
    let types: Vec<SurgeryType> = means
        .iter()
        .enumerate()
        .map(|(i, &m)| SurgeryType::deterministic(format!("T{i}"), m))
        .collect();
    let raw = (0..means.len())
        .map(|i| RawSurgery::new(format!("s{i}"), format!("T{i}"), releases[i], dues[i]))
        .collect();
    let slots = caps
        .iter()
        .enumerate()
        .map(|(k, &(d, c))| OrDaySlot::new(format!("OR{k}"), d, c))
        .collect();
    Instance::assemble(types, raw, slots, 0.15).ok()
}

/// Exhaustive optimum of the generic model, `None` when infeasible.
fn brute_force(inst: &Instance) -> Option<f64> {
    let n = inst.surgeries.len();
    let k = inst.slots.len();
    let options: Vec<Vec<Option<usize>>> = (0..n)
        .map(|s| {
            let mut v = vec![None];
            v.extend((0..k).filter(|&o| inst.slots[o].day >= inst.surgeries[s].release).map(Some));
            v
        })
        .collect();
    let mut best: Option<f64> = None;
    let mut choice = vec![0usize; n];
    loop {
        let pairs: Vec<(usize, usize)> = (0..n).filter_map(|s| options[s][choice[s]].map(|o| (s, o))).collect();
        let sched = Schedule::from_pairs(inst, pairs.iter().copied());
        if validate(&sched, inst).is_empty() {
            let obj: f64 = pairs.iter().map(|&(s, _)| objective_coefficient(inst, s)).sum();
            best = Some(best.map_or(obj, |b: f64| b.max(obj)));
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            choice[i] += 1;
            if choice[i] < options[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

fn solve(inst: &Instance) -> Option<Schedule> {
    let base = build_base(inst);
    let sol = milp::solve(&base.model, &exact()).unwrap();
    if !sol.status.has_solution() {
        return None;
    }
    Some(extract_schedule(&base, &sol, inst).unwrap())
}

fn small_case() -> impl Strategy<Value = (Vec<f64>, Vec<u32>, Vec<Option<u32>>, Vec<(u32, f64)>)> {
    (1usize..=7, 1usize..=2).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(30.0f64..300.0, n),
            prop::collection::vec(0u32..2, n),
            prop::collection::vec(prop::option::weighted(0.3, 0u32..3), n),
            prop::collection::vec((0u32..2, 200.0f64..520.0), k),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn milp_matches_exhaustive_search((means, rel, due, caps) in small_case()) {
        let Some(inst) = instance(&means, &rel, &due, &caps) else { return Ok(()); };
        let brute = brute_force(&inst);
        let solved = solve(&inst);
        match (brute, solved) {
            (None, None) => {}
            (Some(b), Some(s)) => {
                prop_assert!(validate(&s, &inst).is_empty());
                prop_assert!((s.objective.total - b).abs() <= 1e-6 * b.max(1.0), "{} vs {}", s.objective.total, b);
            }
            (b, s) => prop_assert!(false, "brute {:?} vs milp {:?}", b, s.map(|s| s.objective.total)),
        }
    }

    #[test]
    fn more_capacity_never_lowers_the_optimum((means, rel, due, caps) in small_case(), extra in 1.0f64..200.0) {
        let Some(inst) = instance(&means, &rel, &due, &caps) else { return Ok(()); };
        let Some(before) = solve(&inst) else { return Ok(()); };
        let wider: Vec<(u32, f64)> = caps.iter().map(|&(d, c)| (d, (c + extra).min(720.0))).collect();
        let wide = instance(&means, &rel, &due, &wider).unwrap();
        // Widening can readmit a surgery that was too long for every slot.
        if wide.excluded != inst.excluded { return Ok(()); }
        let after = solve(&wide).unwrap();
        prop_assert!(after.objective.total >= before.objective.total - 1e-6);
    }
}

#[test]
fn longer_surgery_wins_a_tight_slot() {
    let inst = instance(&[300.0, 200.0, 250.0], &[0, 0, 0], &[None, None, None], &[(0, 510.0)]).unwrap();
    let s = solve(&inst).unwrap();
    let ids: Vec<&str> = s.assignments.iter().map(|a| a.surgery_id.as_str()).collect();
    // 300 + 200 = 500 beats 250 + 200 = 450 and 300 alone.
    assert_eq!(ids, ["s0", "s1"]);
    assert_eq!(brute_force(&inst), Some(s.objective.total));
}
