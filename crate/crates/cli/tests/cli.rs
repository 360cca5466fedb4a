use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use orsched::instance::{synthesize_instance, write_instance, OrDaySlot, Profile, ProfileSpec, RawSurgery, Specialty, SurgeryType};
use orsched::Instance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orsched"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small(dir: &Path, surgeries: usize) {
    let spec = ProfileSpec::small(Specialty::Ent, surgeries, 4, 1);
    let inst = synthesize_instance(&Profile::Custom(spec), 5, 0.15).unwrap();
    write_instance(&inst, dir.join("inst")).unwrap();
}

fn one_surgery(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = LogNormal::new(5.0f64, 0.3).unwrap();
    let pool: Vec<f64> = (0..60).map(|_| d.sample(&mut rng)).collect();
    let types = vec![SurgeryType::from_observations("T1", pool).unwrap()];
    let raw = vec![RawSurgery::new("s1", "T1", 0, None)];
    let inst = Instance::assemble(types, raw, vec![OrDaySlot::new("OR1", 0, 510.0)], 0.15).unwrap();
    write_instance(&inst, dir.join("inst")).unwrap();
}

#[test]
fn fnn_without_a_network_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    small(tmp.path(), 6);
    let o = run(tmp.path(), &["solve", "--instance", "inst", "--method", "fnn", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("net"), "{}", stderr(&o));
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["solve", "--instance", "missing", "--method", "plf", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(tmp.path(), &["solve", "--instance", "missing", "--method", "nope", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_values_apply_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.cfg"), "# coarse table\ndelta_max = 20\nx-max = 10000\n").unwrap();
    let table = |args: &[&str]| {
        let o = run(dir, args);
        assert!(o.status.success(), "{}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    let plain = table(&["breakpoints", "--x-max", "10000"]);
    let coarse = table(&["breakpoints", "--config", "run.cfg"]);
    let overridden = table(&["breakpoints", "--config", "run.cfg", "--delta-max", "1"]);
    assert!(coarse.lines().count() < plain.lines().count());
    assert_eq!(overridden, plain);

    std::fs::write(dir.join("bad.cfg"), "no_such_key = 1\n").unwrap();
    let o = run(dir, &["breakpoints", "--config", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-key"), "{}", stderr(&o));
}

#[test]
fn a_single_surgery_gets_the_same_slot_from_every_method() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    one_surgery(dir);
    let o = run(dir, &["fit-fnn", "--instance", "inst", "--max-epochs", "30", "--out", "net"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut seen = Vec::new();
    for m in ["fnn", "plf", "sbm"] {
        let mut args = vec!["solve", "--instance", "inst", "--method", m, "--out", m];
        if m == "fnn" {
            args.extend(["--net", "net/net.json"]);
        }
        let o = run(dir, &args);
        assert!(o.status.success(), "{m}: {}", stderr(&o));
        let s: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join(m).join("schedule.json")).unwrap()).unwrap();
        seen.push(s["assignments"].clone());
    }
    assert_eq!(seen[0].as_array().unwrap().len(), 1);
    assert!(seen.iter().all(|a| *a == seen[0]), "{seen:?}");
}

#[test]
fn compare_on_ten_surgeries_finishes_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small(dir, 10);
    let t = Instant::now();
    let o = run(
        dir,
        &["compare", "--instance", "inst", "--max-epochs", "30", "--scenarios", "20", "--scenario-pool", "100", "--time-limit", "20", "--out", "cmp"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(t.elapsed().as_secs() < 60, "took {:?}", t.elapsed());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("cmp/compare.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    for m in ["fnn", "plf", "sbm"] {
        assert!(dir.join(format!("cmp/schedule_{m}.json")).exists());
    }
}
