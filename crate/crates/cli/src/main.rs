//! `orsched`: batch front end for the surgery scheduling pipeline.

mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use orsched::evaluate::{
    self, evaluate_overtime_case, generate_cases, read_cases, simulate, slot_rows, write_cases, write_slot_rows,
    CaseSettings, DurationSource,
};
use orsched::fnn::{self, FeedForwardNet, Grid, TrainConfig};
use orsched::instance::{
    fit_types, load_instance, read_type_observations, synthesize_instance, write_instance, Profile, SurgeryType,
    DEFAULT_ALPHA, TYPES_FILE,
};
use orsched::milp::SolveOptions;
use orsched::pipeline::{compare, run_method, train_for_types, Method, MethodContext, SbmSettings, SimulationSettings};
use orsched::plf::{breakpoints_for, build_breakpoints, Breakpoints, PlfConfig, DEFAULT_DELTA_MAX};
use orsched::sbm::{elbow_scan, ScenarioSet};
use orsched::{Error, Instance, Schedule};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "orsched", version, about = "Elective surgery scheduling with stochastic overtime constraints")]
#[command(args_override_self = true)]
struct Cli {
    /// key=value defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More logging (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize an instance matching a published profile.
    GenData(GenData),
    /// Solve an instance with one overtime method.
    Solve(Solve),
    /// Monte-Carlo overtime probabilities of a schedule.
    Simulate(SimulateCmd),
    /// All three methods side by side, with cross-feasibility.
    Compare(Compare),
    /// Train the percentile network.
    FitFnn(FitFnn),
    /// Print the square-root breakpoint table.
    Breakpoints(BreakpointsCmd),
    /// Sample (and reduce) a scenario set.
    Scenarios(Scenarios),
    /// Replay one-OR overtime cases under each method.
    EvaluateCases(EvaluateCases),
    /// Objective against reduced scenario-set size.
    Elbow(Elbow),
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Per-solve time limit in seconds.
    #[arg(long, default_value_t = 300.0)]
    time_limit: f64,
    /// Relative optimality gap.
    #[arg(long, default_value_t = 1e-4)]
    gap: f64,
    /// Solver threads (1 keeps runs reproducible).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl SolverArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            rel_gap: self.gap,
            threads: Some(self.threads),
            ..SolveOptions::with_time_limit(self.time_limit)
        }
    }
}

#[derive(Args, Clone)]
struct MethodArgs {
    /// Trained network JSON (fnn).
    #[arg(long)]
    net: Option<PathBuf>,
    /// Maximum vertical error of the square-root approximation (plf).
    #[arg(long, default_value_t = DEFAULT_DELTA_MAX)]
    delta_max: f64,
    /// Scenarios in the model (sbm).
    #[arg(long, default_value_t = 50)]
    scenarios: usize,
    /// Scenarios sampled before k-medoids reduction (sbm).
    #[arg(long, default_value_t = 2000)]
    scenario_pool: usize,
    /// Use this scenario CSV instead of sampling (sbm).
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    /// Time limit of each auxiliary big-M problem (sbm).
    #[arg(long, default_value_t = orsched::sbm::bigm::AUX_TIME_LIMIT_SECS)]
    aux_time_limit: f64,
    /// Scenario sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MethodArgs {
    fn sbm(&self) -> SbmSettings {
        SbmSettings {
            scenarios: self.scenarios,
            pool: self.scenario_pool,
            seed: self.seed,
            aux_time_limit: self.aux_time_limit,
        }
    }

    fn context(&self, m: &mut RunManifest) -> Result<MethodContext> {
        let mut ctx = MethodContext::default();
        if let Some(p) = &self.net {
            ctx.net = Some(read_net(p)?);
            m.input(p);
        }
        if let Some(p) = &self.scenario_file {
            ctx.scenarios = Some(ScenarioSet::read_csv(p)?);
            m.input(p);
        }
        m.seed("scenarios", self.seed);
        Ok(ctx)
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Train on at most this many of the best-observed types (0 = all).
    #[arg(long, default_value_t = 20)]
    max_types: usize,
    #[arg(long, default_value_t = 2)]
    hidden_layers: usize,
    #[arg(long, default_value_t = 8)]
    neurons: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Training seed (shuffles, split and initialisation).
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            hidden_layers: self.hidden_layers,
            neurons: self.neurons,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.train_seed,
            ..TrainConfig::default()
        }
    }

    fn max_types(&self) -> Option<usize> {
        (self.max_types > 0).then_some(self.max_types)
    }
}

#[derive(Args)]
struct GenData {
    /// cardiology1, cardiology2, ent1 or ent2.
    #[arg(long)]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write this many random overtime cases.
    #[arg(long, default_value_t = 0)]
    cases: usize,
}

#[derive(Args)]
struct Solve {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    method_args: MethodArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = evaluate::DEFAULT_DRAWS)]
    draws: usize,
    /// Simulation seed.
    #[arg(long, default_value_t = 0)]
    sim_seed: u64,
    /// empirical, lognormal or auto.
    #[arg(long, default_value = "auto")]
    source: DurationSource,
    /// Probability above which a slot counts as excessive overtime.
    #[arg(long, default_value_t = evaluate::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct SimulateCmd {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Compare {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    method_args: MethodArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Skip the Monte-Carlo step.
    #[arg(long)]
    no_simulate: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitFnn {
    /// Observation file (type_id,duration).
    #[arg(long, conflicts_with = "instance")]
    types: Option<PathBuf>,
    /// Instance directory whose types.csv to use.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    train: TrainArgs,
    /// Search the layer/width/learning-rate/batch grid and keep the best.
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BreakpointsCmd {
    #[arg(long, default_value_t = DEFAULT_DELTA_MAX)]
    delta_max: f64,
    /// Largest variance to cover.
    #[arg(long, required_unless_present = "instance")]
    x_max: Option<f64>,
    /// Derive the range from an instance instead.
    #[arg(long, conflicts_with = "x_max")]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Also write breakpoints.csv and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Scenarios {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    scenarios: usize,
    #[arg(long, default_value_t = 2000)]
    scenario_pool: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateCases {
    #[arg(long)]
    cases: PathBuf,
    /// Instance directory providing the surgery types.
    #[arg(long, conflicts_with = "types")]
    instance: Option<PathBuf>,
    /// Observation file (type_id,duration).
    #[arg(long)]
    types: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "fnn,plf,sbm")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    method_args: MethodArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Elbow {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Reduced set sizes to try, nondecreasing.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80,90,100")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    scenario_pool: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = orsched::sbm::bigm::AUX_TIME_LIMIT_SECS)]
    aux_time_limit: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

fn read_net(p: &Path) -> Result<FeedForwardNet> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(FeedForwardNet::from_json(&text)?)
}

fn write_json(path: &Path, v: &impl Serialize, m: &mut RunManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    m.output(path);
    Ok(())
}

fn out_dir(p: &Path) -> Result<PathBuf> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    Ok(p.to_path_buf())
}

fn load(dir: &Path, alpha: f64, m: &mut RunManifest) -> Result<Instance> {
    m.input(dir);
    Ok(load_instance(dir, alpha)?)
}

fn load_types(types: Option<&Path>, instance: Option<&Path>, m: &mut RunManifest) -> Result<Vec<SurgeryType>> {
    let path = match (types, instance) {
        (Some(t), _) => t.to_path_buf(),
        (None, Some(d)) => d.join(TYPES_FILE),
        (None, None) => bail!("give --types or --instance"),
    };
    m.input(&path);
    Ok(fit_types(read_type_observations(&path)?)?)
}

/// Fill the context for `methods`, training a network when fnn has none.
fn prepare(
    inst: &Instance,
    methods: &[Method],
    args: &MethodArgs,
    train: Option<&TrainArgs>,
    ctx: &mut MethodContext,
    dir: &Path,
    m: &mut RunManifest,
) -> Result<()> {
    if methods.contains(&Method::Fnn) && ctx.net.is_none() {
        let Some(t) = train else {
            return Err(Error::MissingContext("the fnn method needs --net".into()).into());
        };
        m.start("train");
        let net = train_for_types(&inst.types, inst.alpha, t.max_types(), &t.config())?;
        m.seed("train", t.train_seed);
        write_json(&dir.join("net.json"), &net, m)?;
        ctx.net = Some(net);
    }
    m.start("prepare");
    for &method in methods {
        ctx.prepare(inst, method, &args.sbm(), args.delta_max)?;
    }
    record_context(ctx, m);
    Ok(())
}

fn record_context(ctx: &MethodContext, m: &mut RunManifest) {
    if let Some(bp) = &ctx.breakpoints {
        m.detail("plf_delta", bp.delta);
        m.detail("plf_breakpoints", bp.xs.len());
        m.detail("plf_x_max", bp.x_max());
    }
    if let Some(s) = &ctx.scenarios {
        m.detail("sbm_scenarios", s.len());
        m.detail("sbm_scenario_source", s.source);
    }
    if let Some(net) = &ctx.net {
        m.detail("fnn_layers", &net.layer_sizes);
        if let Some(t) = &net.metrics {
            m.detail("fnn_test_mae", t.test.mae);
        }
    }
}

fn write_context_files(ctx: &MethodContext, dir: &Path, m: &mut RunManifest) -> Result<()> {
    if let Some(bp) = &ctx.breakpoints {
        let p = dir.join("breakpoints.csv");
        fs::write(&p, bp.to_csv())?;
        m.output(p);
    }
    if let Some(s) = &ctx.scenarios {
        let p = dir.join("scenarios.csv");
        s.write_csv(&p)?;
        m.output(p);
    }
    Ok(())
}

fn summary(s: &Schedule) -> String {
    format!(
        "{}: {} surgeries, objective {:.3} (duration {:.3}, priority {:.3}), utilization {:.4}, status {}",
        s.method.as_deref().unwrap_or("?"),
        s.assignments.len(),
        s.objective.total,
        s.objective.duration,
        s.objective.priority,
        s.utilization,
        s.status.map(|x| format!("{x:?}")).unwrap_or_else(|| "-".into())
    )
}

fn run(cmd: Cmd, args: &[String]) -> Result<()> {
    match cmd {
        Cmd::GenData(a) => {
            let mut m = RunManifest::new("gen-data", args);
            let dir = out_dir(&a.out)?;
            let profile = Profile::from_name(&a.profile)?;
            m.seed("instance", a.seed);
            m.start("generate");
            let inst = synthesize_instance(&profile, a.seed, DEFAULT_ALPHA)?;
            write_instance(&inst, &dir)?;
            for f in ["types.csv", "surgeries.csv", "slots.csv"] {
                m.output(dir.join(f));
            }
            if a.cases > 0 {
                let cases = generate_cases(&inst.types, a.cases, orsched::instance::REGULAR_SESSION_MINUTES, a.seed)?;
                let p = dir.join("cases.csv");
                write_cases(&cases, &p)?;
                m.output(p);
            }
            m.detail("surgeries", inst.surgeries.len());
            m.detail("excluded", &inst.excluded);
            println!(
                "{}: {} surgeries, {} types, {} slots -> {}",
                a.profile,
                inst.surgeries.len(),
                inst.types.len(),
                inst.slots.len(),
                dir.display()
            );
            m.write(&dir)
        }
        Cmd::Solve(a) => {
            let mut m = RunManifest::new("solve", args);
            let dir = out_dir(&a.out)?;
            let inst = load(&a.instance, a.alpha, &mut m)?;
            let mut ctx = a.method_args.context(&mut m)?;
            prepare(&inst, &[a.method], &a.method_args, None, &mut ctx, &dir, &mut m)?;
            write_context_files(&ctx, &dir, &mut m)?;
            m.start("solve");
            let run = run_method(&inst, a.method, &ctx, &a.solver.options())?;
            m.stop();
            if let Some(b) = &run.big_m {
                m.detail("aux_solves", b.aux_solves);
            }
            m.schedule(a.method.name(), &run.schedule);
            write_json(&dir.join("schedule.json"), &run.schedule, &mut m)?;
            let p = dir.join("slots.csv");
            write_slot_rows(&slot_rows(&run.schedule, None, None), &p)?;
            m.output(p);
            println!("{}", summary(&run.schedule));
            m.write(&dir)
        }
        Cmd::Simulate(a) => {
            let mut m = RunManifest::new("simulate", args);
            let dir = out_dir(&a.out)?;
            let inst = load(&a.instance, a.alpha, &mut m)?;
            let text = fs::read_to_string(&a.schedule).with_context(|| format!("reading {}", a.schedule.display()))?;
            let sched: Schedule = serde_json::from_str(&text).map_err(Error::from)?;
            m.input(&a.schedule);
            m.seed("simulation", a.sim.sim_seed);
            m.start("simulate");
            let rep = simulate(&sched, &inst, a.sim.draws, a.sim.sim_seed, a.sim.source, a.sim.threshold)?;
            write_json(&dir.join("simulation.json"), &rep, &mut m)?;
            let p = dir.join("slots.csv");
            write_slot_rows(&slot_rows(&sched, Some(&rep), None), &p)?;
            m.output(p);
            println!(
                "average overtime probability {:.4} over used slots, {} above {}, source {:?}",
                rep.average_prob, rep.excessive_slots, rep.threshold, rep.source
            );
            m.write(&dir)
        }
        Cmd::Compare(a) => {
            let mut m = RunManifest::new("compare", args);
            let dir = out_dir(&a.out)?;
            let inst = load(&a.instance, a.alpha, &mut m)?;
            let mut ctx = a.method_args.context(&mut m)?;
            prepare(&inst, &Method::ALL, &a.method_args, Some(&a.train), &mut ctx, &dir, &mut m)?;
            write_context_files(&ctx, &dir, &mut m)?;
            let sim = SimulationSettings {
                draws: a.sim.draws,
                seed: a.sim.sim_seed,
                source: a.sim.source,
                threshold: a.sim.threshold,
            };
            m.seed("simulation", a.sim.sim_seed);
            m.start("compare");
            let rep = compare(
                &inst,
                &ctx,
                &Method::ALL,
                &a.solver.options(),
                (!a.no_simulate).then_some(&sim),
            )?;
            m.stop();
            for run in &rep.runs {
                m.schedule(run.method.name(), &run.schedule);
                m.timings.insert(format!("solve_{}", run.method), run.seconds);
                write_json(&dir.join(format!("schedule_{}.json", run.method)), &run.schedule, &mut m)?;
                if let Some(b) = &run.big_m {
                    m.detail("aux_solves", b.aux_solves);
                }
            }
            write_json(&dir.join("compare.json"), &rep, &mut m)?;
            let table = rep.to_table();
            let p = dir.join("compare.txt");
            fs::write(&p, &table)?;
            m.output(p);
            print!("{table}");
            m.write(&dir)
        }
        Cmd::FitFnn(a) => {
            let mut m = RunManifest::new("fit-fnn", args);
            let dir = out_dir(&a.out)?;
            let types = load_types(a.types.as_deref(), a.instance.as_deref(), &mut m)?;
            m.seed("train", a.train.train_seed);
            m.start("train");
            let net = if a.grid {
                let chosen = fnn::select_training_types(&types, a.train.max_types());
                if chosen.is_empty() {
                    return Err(Error::Training("no type has enough observations".into()).into());
                }
                let ts = fnn::generate_training_set(&chosen, a.alpha)?;
                let gs = fnn::grid_search(&ts, &Grid::default(), &a.train.config())?;
                write_json(&dir.join("grid.json"), &gs.entries, &mut m)?;
                gs.best_net
            } else {
                train_for_types(&types, a.alpha, a.train.max_types(), &a.train.config())?
            };
            m.stop();
            record_context(
                &MethodContext {
                    net: Some(net.clone()),
                    ..MethodContext::default()
                },
                &mut m,
            );
            let p = dir.join("net.json");
            fs::write(&p, net.to_json()? + "\n")?;
            m.output(p);
            if let Some(t) = &net.metrics {
                println!(
                    "layers {:?}: test MAE {:.4} min, max {:.4} min after {} epochs",
                    net.layer_sizes, t.test.mae, t.test.max_ae, t.epochs
                );
            }
            m.write(&dir)
        }
        Cmd::Breakpoints(a) => {
            let mut m = RunManifest::new("breakpoints", args);
            let bp: Breakpoints = match (&a.instance, a.x_max) {
                (Some(d), _) => {
                    let inst = load(d, a.alpha, &mut m)?;
                    build_breakpoints(&PlfConfig::for_instance(&inst, a.delta_max))?
                }
                (None, Some(x)) => breakpoints_for(a.delta_max, x)?,
                (None, None) => bail!("give --x-max or --instance"),
            };
            print!("{}", bp.to_csv());
            eprintln!("{} breakpoints, delta {:.6}", bp.xs.len(), bp.delta);
            if let Some(out) = &a.out {
                let dir = out_dir(out)?;
                let p = dir.join("breakpoints.csv");
                fs::write(&p, bp.to_csv())?;
                m.output(p);
                record_context(
                    &MethodContext {
                        breakpoints: Some(bp),
                        ..MethodContext::default()
                    },
                    &mut m,
                );
                m.write(&dir)?;
            }
            Ok(())
        }
        Cmd::Scenarios(a) => {
            let mut m = RunManifest::new("scenarios", args);
            let dir = out_dir(&a.out)?;
            let inst = load(&a.instance, a.alpha, &mut m)?;
            m.seed("scenarios", a.seed);
            m.start("sample");
            let set = SbmSettings {
                scenarios: a.scenarios,
                pool: a.scenario_pool,
                seed: a.seed,
                ..SbmSettings::default()
            }
            .generate(&inst)?;
            let p = dir.join("scenarios.csv");
            set.write_csv(&p)?;
            m.output(p);
            println!("{} scenarios over {} surgeries", set.len(), set.surgery_ids.len());
            m.write(&dir)
        }
        Cmd::EvaluateCases(a) => {
            let mut m = RunManifest::new("evaluate-cases", args);
            let dir = out_dir(&a.out)?;
            let types = load_types(a.types.as_deref(), a.instance.as_deref(), &mut m)?;
            let cases = read_cases(&a.cases)?;
            m.input(&a.cases);
            let ctx = a.method_args.context(&mut m)?;
            let net = match ctx.net {
                Some(n) => Some(n),
                None if a.methods.contains(&Method::Fnn) => {
                    m.start("train");
                    let n = train_for_types(&types, a.alpha, a.train.max_types(), &a.train.config())?;
                    write_json(&dir.join("net.json"), &n, &mut m)?;
                    Some(n)
                }
                None => None,
            };
            let settings = CaseSettings {
                breakpoints: None,
                delta_max: a.method_args.delta_max,
                sbm: a.method_args.sbm(),
                solve: a.solver.options(),
            };
            m.start("evaluate");
            let mut verdicts = Vec::new();
            for c in &cases {
                for &meth in &a.methods {
                    verdicts.push(evaluate_overtime_case(c, &types, meth, net.as_ref(), &settings, a.alpha)?);
                }
            }
            m.stop();
            write_json(&dir.join("cases.json"), &verdicts, &mut m)?;
            let p = dir.join("verdicts.csv");
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["case_id", "method", "allowed", "scheduled", "surgeries"])?;
            for v in &verdicts {
                w.write_record([
                    v.case_id.clone(),
                    v.method.to_string(),
                    v.allowed.to_string(),
                    v.scheduled.to_string(),
                    v.surgeries.to_string(),
                ])?;
            }
            w.flush()?;
            m.output(p);
            for &meth in &a.methods {
                let ok = verdicts.iter().filter(|v| v.method == meth && v.allowed).count();
                println!("{meth}: {ok} of {} cases allowed", cases.len());
            }
            m.write(&dir)
        }
        Cmd::Elbow(a) => {
            let mut m = RunManifest::new("elbow", args);
            let dir = out_dir(&a.out)?;
            let inst = load(&a.instance, a.alpha, &mut m)?;
            m.seed("scenarios", a.seed);
            m.start("sample");
            let pool = orsched::sbm::sample_scenarios(&inst, a.scenario_pool, a.seed)?;
            m.start("scan");
            let curve = elbow_scan(
                &inst,
                &pool,
                &a.sizes,
                &a.solver.options(),
                &orsched::sbm::bigm::aux_options(a.aux_time_limit),
            )?;
            m.stop();
            write_json(&dir.join("elbow.json"), &curve, &mut m)?;
            let p = dir.join("elbow.csv");
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["scenarios", "objective", "gap"])?;
            for pt in &curve.points {
                w.write_record([pt.scenarios.to_string(), format!("{:?}", pt.objective), format!("{:?}", pt.gap)])?;
            }
            w.flush()?;
            m.output(p);
            for pt in &curve.points {
                println!("{:>5} {:>12.3}", pt.scenarios, pt.objective);
            }
            println!("stable at {} scenarios", curve.points[curve.chosen].scenarios);
            m.write(&dir)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Infeasible(_)) => 4,
        Some(Error::Solver(_) | Error::Model(_) | Error::BackendUnavailable | Error::Training(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let cmd = Cli::command();
    let args = match config::expand(&cmd, raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let matches = match cmd.try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command, &args[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
