#![cfg(feature = "highs")]

use std::sync::OnceLock;

use orsched::distributions::inv_norm_cdf;
use orsched::evaluate::{cross_feasible, evaluate_overtime_case, simulate, CaseSettings, DurationSource, OvertimeCase};
use orsched::fnn::{FeedForwardNet, TrainConfig};
use orsched::instance::{synthesize_instance, Profile, ProfileSpec, Specialty, SurgeryType};
use orsched::milp::SolveOptions;
use orsched::pipeline::{run_method, train_for_types, Method, MethodContext, SbmSettings};
use orsched::plf::satisfies_exact_normal;
use orsched::Instance;

fn opts() -> SolveOptions {
    SolveOptions::with_time_limit(60.0)
}

fn small_instance(seed: u64) -> Instance {
    let spec = ProfileSpec::small(Specialty::Ent, 10, 5, 2);
    synthesize_instance(&Profile::Custom(spec), seed, 0.15).unwrap()
}

/// Lognormal type with a pool of evenly spaced quantiles, mean near `mean`.
fn quantile_type(id: &str, mean: f64, cv: f64, n: usize) -> SurgeryType {
    let s2 = (cv * cv).ln_1p();
    let mu = mean.ln() - 0.5 * s2;
    let pool = (0..n)
        .map(|i| (mu + s2.sqrt() * inv_norm_cdf((i as f64 + 0.5) / n as f64).unwrap()).exp())
        .collect();
    SurgeryType::from_observations(id, pool).unwrap()
}

fn case_types() -> Vec<SurgeryType> {
    vec![
        SurgeryType::deterministic("D200", 200.0),
        SurgeryType::deterministic("D300", 300.0),
        quantile_type("L250", 250.0, 0.3, 200),
        quantile_type("L120", 120.0, 0.3, 200),
        quantile_type("L60", 60.0, 0.4, 200),
    ]
}

fn case_net() -> &'static FeedForwardNet {
    static NET: OnceLock<FeedForwardNet> = OnceLock::new();
    NET.get_or_init(|| train_for_types(&case_types(), 0.15, None, &TrainConfig::default()).unwrap())
}

fn case(id: &str, types: &[&str]) -> OvertimeCase {
    OvertimeCase {
        case_id: id.into(),
        type_ids: types.iter().map(|t| t.to_string()).collect(),
        capacity: 510.0,
        realized_total: None,
    }
}

fn allowed(c: &OvertimeCase, m: Method) -> bool {
    let settings = CaseSettings {
        sbm: SbmSettings {
            scenarios: 40,
            pool: 40,
            seed: 3,
            ..SbmSettings::default()
        },
        ..CaseSettings::default()
    };
    evaluate_overtime_case(c, &case_types(), m, Some(case_net()), &settings, 0.15)
        .unwrap()
        .allowed
}

#[test]
fn deterministic_cases_follow_the_mean_capacity() {
    for m in Method::ALL {
        assert!(allowed(&case("fits", &["D200", "D200"]), m), "{m}");
        assert!(!allowed(&case("over", &["D300", "D300"]), m), "{m}");
    }
}

#[test]
fn risky_case_is_rejected_everywhere() {
    let c = case("risky", &["L250", "L250"]);
    let inst = orsched::evaluate::case_instance(&c, &case_types(), 0.15).unwrap();
    let sched = orsched::Schedule::from_pairs(&inst, [(0, 0), (1, 0)]);
    let sim = simulate(&sched, &inst, 10_000, 1, DurationSource::Lognormal, 0.15).unwrap();
    assert!(sim.slots[0].overtime_prob > 0.3, "{}", sim.slots[0].overtime_prob);
    for m in Method::ALL {
        assert!(!allowed(&c, m), "{m}");
    }
}

#[test]
fn adding_a_surgery_never_rescues_a_rejected_case() {
    let base = ["L250", "L120", "L60"];
    for m in Method::ALL {
        let mut list: Vec<&str> = vec!["L120"];
        let mut was_rejected = false;
        for t in base.iter().cycle().take(6) {
            list.push(t);
            let ok = allowed(&case("grow", &list), m);
            assert!(!(was_rejected && ok), "{m}: {list:?}");
            was_rejected |= !ok;
        }
        assert!(was_rejected, "{m} accepted everything");
    }
}

#[test]
fn every_method_accepts_its_own_schedule() {
    let inst = small_instance(11);
    let net = train_for_types(&inst.types, 0.15, None, &TrainConfig::default()).unwrap();
    let mut ctx = MethodContext {
        net: Some(net),
        ..MethodContext::default()
    };
    let sbm = SbmSettings {
        scenarios: 30,
        pool: 200,
        seed: 5,
        ..SbmSettings::default()
    };
    for m in Method::ALL {
        ctx.prepare(&inst, m, &sbm, 1.0).unwrap();
    }
    for m in Method::ALL {
        let run = run_method(&inst, m, &ctx, &opts()).unwrap();
        let verdicts = cross_feasible(&run.schedule, &inst, m, &ctx).unwrap();
        assert!(verdicts.iter().all(|&v| v), "{m}: {verdicts:?}");
        if m == Method::Plf {
            assert!(satisfies_exact_normal(&run.schedule, &inst, 1e-6).unwrap());
        }
    }
}

#[test]
fn cross_checks_need_their_context() {
    let inst = small_instance(2);
    let empty = orsched::Schedule::empty(&inst);
    let ctx = MethodContext::default();
    for m in Method::ALL {
        assert!(matches!(
            cross_feasible(&empty, &inst, m, &ctx),
            Err(orsched::Error::MissingContext(_))
        ));
    }
}
