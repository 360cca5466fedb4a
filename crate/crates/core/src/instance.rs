//! Scheduling instances: surgery types, surgeries, OR/day slots.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{fit_type_params, LogNormalParams, Moments, NormalParams};
use crate::error::{Error, Result};

/// Longest plannable elective surgery, in minutes.
pub const MAX_PLANNABLE_MINUTES: f64 = 720.0;

/// Default overtime probability.
pub const DEFAULT_ALPHA: f64 = 0.15;

/// Regular OR session length (08:00 to 16:30).
pub const REGULAR_SESSION_MINUTES: f64 = 510.0;

/// Extended session (08:00 to 20:00).
pub const EXTENDED_SESSION_MINUTES: f64 = 720.0;

pub const TYPES_FILE: &str = "types.csv";
pub const SURGERIES_FILE: &str = "surgeries.csv";
pub const SLOTS_FILE: &str = "slots.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryType {
    pub type_id: String,
    pub sample_mean: f64,
    pub normal: NormalParams,
    pub lognormal: LogNormalParams,
    pub n_observations: usize,
    pub duration_pool: Option<Vec<f64>>,
}

impl SurgeryType {
    /// Fit a type from its (already cleaned) observations.
    pub fn from_observations(type_id: impl Into<String>, durations: Vec<f64>) -> Result<Self> {
        let fit = fit_type_params(&durations)?;
        Ok(Self {
            type_id: type_id.into(),
            sample_mean: fit.sample_mean,
            normal: fit.normal,
            lognormal: fit.lognormal,
            n_observations: durations.len(),
            duration_pool: Some(durations),
        })
    }

    /// A type known only through its parameters (no empirical pool).
    pub fn from_params(
        type_id: impl Into<String>,
        normal: NormalParams,
        lognormal: LogNormalParams,
    ) -> Self {
        Self {
            type_id: type_id.into(),
            sample_mean: normal.mu,
            normal,
            lognormal,
            n_observations: 0,
            duration_pool: None,
        }
    }

    /// Deterministic type: every duration equals `minutes`.
    pub fn deterministic(type_id: impl Into<String>, minutes: f64) -> Self {
        Self::from_params(
            type_id,
            NormalParams { mu: minutes, sigma2: 0.0 },
            LogNormalParams { mu: minutes.ln(), sigma2: 0.0 },
        )
    }

    /// Mean and variance of the fitted lognormal.
    pub fn lognormal_moments(&self) -> Moments {
        self.lognormal.moments()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surgery {
    pub surgery_id: String,
    pub type_index: usize,
    pub release: u32,
    /// Effective due day `q_s` (dated or derived).
    pub due: u32,
    /// `p_s`: the due day falls inside the horizon.
    pub has_due_in_horizon: bool,
    /// Due day as given in the input, if any.
    pub raw_due: Option<u32>,
}

impl Surgery {
    pub fn priority(&self) -> f64 {
        1.0 / (self.due as f64 + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrDaySlot {
    pub or_id: String,
    pub day: u32,
    pub capacity: f64,
}

impl OrDaySlot {
    pub fn new(or_id: impl Into<String>, day: u32, capacity: f64) -> Self {
        Self {
            or_id: or_id.into(),
            day,
            capacity,
        }
    }
}

/// Surgery record before type projection and due-date derivation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSurgery {
    pub surgery_id: String,
    pub type_id: String,
    pub release: u32,
    pub due: Option<u32>,
}

impl RawSurgery {
    pub fn new(id: impl Into<String>, type_id: impl Into<String>, release: u32, due: Option<u32>) -> Self {
        Self {
            surgery_id: id.into(),
            type_id: type_id.into(),
            release,
            due,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub types: Vec<SurgeryType>,
    pub surgeries: Vec<Surgery>,
    /// Sorted by `(or_id, day)`.
    pub slots: Vec<OrDaySlot>,
    pub alpha: f64,
    /// Surgeries dropped because their mean exceeds every slot capacity.
    pub excluded: Vec<String>,
}

impl Instance {
    /// Assemble an instance from fitted types and raw surgeries.
    ///
    /// Derives `q_s`/`p_s`, drops surgeries whose sample mean exceeds the
    /// largest capacity and sorts slots.
    pub fn assemble(
        types: Vec<SurgeryType>,
        surgeries: Vec<RawSurgery>,
        mut slots: Vec<OrDaySlot>,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInstance(format!(
                "overtime probability alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if slots.is_empty() {
            return Err(Error::InvalidInstance("no OR/day slots".into()));
        }
        let mut seen = HashSet::new();
        for slot in &slots {
            if !(slot.capacity > 0.0) || !slot.capacity.is_finite() {
                return Err(Error::InvalidInstance(format!(
                    "slot {}/{} has nonpositive capacity {}",
                    slot.or_id, slot.day, slot.capacity
                )));
            }
            if !seen.insert((slot.or_id.clone(), slot.day)) {
                return Err(Error::InvalidInstance(format!(
                    "duplicate slot {}/{}",
                    slot.or_id, slot.day
                )));
            }
        }
        slots.sort_by(|a, b| a.or_id.cmp(&b.or_id).then(a.day.cmp(&b.day)));
        let horizon = slots.iter().map(|s| s.day).max().unwrap_or(0);
        let max_capacity = slots.iter().map(|s| s.capacity).fold(0.0, f64::max);

        let type_index: HashMap<&str, usize> = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.type_id.as_str(), i))
            .collect();
        if type_index.len() != types.len() {
            return Err(Error::InvalidInstance("duplicate surgery type ids".into()));
        }

        let undated_due = surgeries
            .iter()
            .filter_map(|s| s.due)
            .max()
            .map_or(horizon + 1, |d| d + 1)
            .max(horizon + 1);

        let mut out = Vec::with_capacity(surgeries.len());
        let mut excluded = Vec::new();
        let mut ids = HashSet::new();
        for raw in surgeries {
            let &ti = type_index.get(raw.type_id.as_str()).ok_or_else(|| {
                Error::InvalidInstance(format!(
                    "surgery {} references unknown type {}",
                    raw.surgery_id, raw.type_id
                ))
            })?;
            if !ids.insert(raw.surgery_id.clone()) {
                return Err(Error::InvalidInstance(format!(
                    "duplicate surgery id {}",
                    raw.surgery_id
                )));
            }
            if types[ti].sample_mean > max_capacity {
                log::warn!(
                    "excluding surgery {}: mean duration {:.1} exceeds the largest capacity {:.1}",
                    raw.surgery_id,
                    types[ti].sample_mean,
                    max_capacity
                );
                excluded.push(raw.surgery_id);
                continue;
            }
            let due = raw.due.unwrap_or(undated_due);
            let has_due_in_horizon = raw.due.is_some() && due <= horizon;
            if has_due_in_horizon && due < raw.release {
                return Err(Error::InvalidInstance(format!(
                    "surgery {} is due on day {due} before its release day {}",
                    raw.surgery_id, raw.release
                )));
            }
            out.push(Surgery {
                surgery_id: raw.surgery_id,
                type_index: ti,
                release: raw.release,
                due,
                has_due_in_horizon,
                raw_due: raw.due,
            });
        }

        Ok(Self {
            types,
            surgeries: out,
            slots,
            alpha,
            excluded,
        })
    }

    pub fn horizon(&self) -> u32 {
        self.slots.iter().map(|s| s.day).max().unwrap_or(0)
    }

    pub fn max_capacity(&self) -> f64 {
        self.slots.iter().map(|s| s.capacity).fold(0.0, f64::max)
    }

    pub fn total_capacity(&self) -> f64 {
        self.slots.iter().map(|s| s.capacity).sum()
    }

    pub fn surgery_type(&self, s: usize) -> &SurgeryType {
        &self.types[self.surgeries[s].type_index]
    }

    /// Sample mean `w̄_s`.
    pub fn sample_mean(&self, s: usize) -> f64 {
        self.surgery_type(s).sample_mean
    }

    pub fn normal(&self, s: usize) -> NormalParams {
        self.surgery_type(s).normal
    }

    pub fn lognormal(&self, s: usize) -> LogNormalParams {
        self.surgery_type(s).lognormal
    }

    /// Lognormal mean and variance of surgery `s`.
    pub fn lognormal_moments(&self, s: usize) -> Moments {
        self.lognormal(s).moments()
    }

    /// Surgeries that may be placed in `slot` (released by that day).
    pub fn eligible(&self, slot: usize) -> impl Iterator<Item = usize> + '_ {
        let day = self.slots[slot].day;
        (0..self.surgeries.len()).filter(move |&s| self.surgeries[s].release <= day)
    }

    pub fn total_sample_mean(&self) -> f64 {
        (0..self.surgeries.len()).map(|s| self.sample_mean(s)).sum()
    }

    /// Largest number of surgeries any slot can hold under the mean-capacity rule.
    pub fn max_surgeries_per_slot(&self) -> usize {
        (0..self.slots.len())
            .map(|o| {
                let mut means: Vec<f64> = self.eligible(o).map(|s| self.sample_mean(s)).collect();
                means.sort_by(f64::total_cmp);
                let cap = self.slots[o].capacity;
                let mut load = 0.0;
                means
                    .iter()
                    .take_while(|&&m| {
                        load += m;
                        load <= cap
                    })
                    .count()
            })
            .max()
            .unwrap_or(0)
    }
}

/// Arithmetic mean of the per-surgery normal standard deviations.
pub fn mean_sd(instance: &Instance) -> f64 {
    let n = instance.surgeries.len();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|s| instance.normal(s).sigma()).sum::<f64>() / n as f64
}

fn parse_error(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

struct CsvTable {
    path: PathBuf,
    header: csv::StringRecord,
    rows: Vec<csv::StringRecord>,
}

impl CsvTable {
    fn read(path: &Path, required: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| parse_error(path, 0, e.to_string()))?;
        let header = reader
            .headers()
            .map_err(|e| parse_error(path, 1, e.to_string()))?
            .clone();
        for col in required {
            if !header.iter().any(|h| h == *col) {
                return Err(parse_error(path, 1, format!("missing column `{col}`")));
            }
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_error(path, line, e.to_string())
            })?;
            rows.push(rec);
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn line(rec: &csv::StringRecord) -> u64 {
        rec.position().map_or(0, |p| p.line())
    }

    fn field<'r>(&self, rec: &'r csv::StringRecord, col: usize) -> &'r str {
        rec.get(col).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, rec: &csv::StringRecord, col: usize, what: &str) -> Result<T> {
        let raw = self.field(rec, col);
        raw.parse()
            .map_err(|_| parse_error(&self.path, Self::line(rec), format!("invalid {what} `{raw}`")))
    }
}

/// Read observed durations per type from `types.csv`, applying the cleaning
/// rules (drop nonpositive and over-12-hour records).
pub fn read_type_observations(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let table = CsvTable::read(path, &["type_id", "duration"])?;
    let (c_type, c_dur) = (table.col("type_id").unwrap(), table.col("duration").unwrap());
    let mut obs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dropped = 0usize;
    for rec in &table.rows {
        let type_id = table.field(rec, c_type);
        if type_id.is_empty() {
            return Err(parse_error(path, CsvTable::line(rec), "empty type_id"));
        }
        let d: f64 = table.parse(rec, c_dur, "duration")?;
        if !d.is_finite() {
            return Err(parse_error(path, CsvTable::line(rec), "non-finite duration"));
        }
        let entry = obs.entry(type_id.to_string()).or_default();
        if d <= 0.0 || d > MAX_PLANNABLE_MINUTES {
            dropped += 1;
            continue;
        }
        entry.push(d);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} duration records outside (0, {MAX_PLANNABLE_MINUTES}] minutes");
    }
    Ok(obs)
}

/// Fit a type per id; ids whose observations were all cleaned away are skipped.
pub fn fit_types(observations: BTreeMap<String, Vec<f64>>) -> Result<Vec<SurgeryType>> {
    observations
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(id, v)| SurgeryType::from_observations(id, v))
        .collect()
}

/// Load an instance directory (`types.csv`, `surgeries.csv`, `slots.csv`).
pub fn load_instance(dir: impl AsRef<Path>, alpha: f64) -> Result<Instance> {
    let dir = dir.as_ref();
    let types = fit_types(read_type_observations(&dir.join(TYPES_FILE))?)?;

    let path = dir.join(SURGERIES_FILE);
    let table = CsvTable::read(&path, &["surgery_id", "type_id", "release", "due"])?;
    let (c_id, c_type, c_rel, c_due) = (
        table.col("surgery_id").unwrap(),
        table.col("type_id").unwrap(),
        table.col("release").unwrap(),
        table.col("due").unwrap(),
    );
    let known: HashSet<&str> = types.iter().map(|t| t.type_id.as_str()).collect();
    let mut surgeries = Vec::with_capacity(table.rows.len());
    for rec in &table.rows {
        let type_id = table.field(rec, c_type);
        if !known.contains(type_id) {
            return Err(parse_error(
                &path,
                CsvTable::line(rec),
                format!("unknown or empty surgery type `{type_id}`"),
            ));
        }
        let due = if table.field(rec, c_due).is_empty() {
            None
        } else {
            Some(table.parse(rec, c_due, "due day")?)
        };
        surgeries.push(RawSurgery {
            surgery_id: table.field(rec, c_id).to_string(),
            type_id: type_id.to_string(),
            release: table.parse(rec, c_rel, "release day")?,
            due,
        });
    }

    let path = dir.join(SLOTS_FILE);
    let table = CsvTable::read(&path, &["or_id", "day", "capacity_minutes"])?;
    let (c_or, c_day, c_cap) = (
        table.col("or_id").unwrap(),
        table.col("day").unwrap(),
        table.col("capacity_minutes").unwrap(),
    );
    let mut slots = Vec::with_capacity(table.rows.len());
    for rec in &table.rows {
        slots.push(OrDaySlot {
            or_id: table.field(rec, c_or).to_string(),
            day: table.parse(rec, c_day, "day")?,
            capacity: table.parse(rec, c_cap, "capacity")?,
        });
    }

    Instance::assemble(types, surgeries, slots, alpha)
}

/// Write an instance as the three CSV files. Types need empirical pools.
pub fn write_instance(instance: &Instance, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join(TYPES_FILE))?;
    w.write_record(["type_id", "duration"])?;
    for t in &instance.types {
        let pool = t.duration_pool.as_ref().ok_or_else(|| {
            Error::InvalidInstance(format!("type {} has no observations to write", t.type_id))
        })?;
        for d in pool {
            w.write_record([t.type_id.as_str(), &d.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(SURGERIES_FILE))?;
    w.write_record(["surgery_id", "type_id", "release", "due"])?;
    for s in &instance.surgeries {
        w.write_record([
            s.surgery_id.as_str(),
            instance.types[s.type_index].type_id.as_str(),
            &s.release.to_string(),
            &s.raw_due.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(SLOTS_FILE))?;
    w.write_record(["or_id", "day", "capacity_minutes"])?;
    for slot in &instance.slots {
        w.write_record([slot.or_id.as_str(), &slot.day.to_string(), &slot.capacity.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Specialty {
    Cardiology,
    Ent,
}

impl Specialty {
    /// Weekly OR availability.
    pub fn slots(self) -> Vec<OrDaySlot> {
        let mut slots = Vec::new();
        for day in 0..5u32 {
            let (n_or, last_cap) = match self {
                Specialty::Cardiology => (if day == 0 || day == 2 { 4 } else { 5 }, REGULAR_SESSION_MINUTES),
                Specialty::Ent => (2, if day == 4 { EXTENDED_SESSION_MINUTES } else { REGULAR_SESSION_MINUTES }),
            };
            for o in 0..n_or {
                let cap = if o + 1 == n_or { last_cap } else { REGULAR_SESSION_MINUTES };
                slots.push(OrDaySlot::new(format!("OR{}", o + 1), day, cap));
            }
        }
        slots
    }
}

/// Aggregate characteristics a synthetic instance is generated to match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub name: String,
    pub specialty: Specialty,
    pub surgeries: usize,
    pub types: usize,
    /// Surgeries with a due date inside the horizon.
    pub dated: usize,
    /// Number of surgeries released on day 0, 1, ...
    pub release_histogram: Vec<usize>,
    pub mean_duration: f64,
    pub mean_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    Cardiology1,
    Cardiology2,
    Ent1,
    Ent2,
    Custom(ProfileSpec),
}

impl Profile {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cardiology1" => Ok(Profile::Cardiology1),
            "cardiology2" => Ok(Profile::Cardiology2),
            "ent1" => Ok(Profile::Ent1),
            "ent2" => Ok(Profile::Ent2),
            other => Err(Error::InvalidInstance(format!(
                "unknown profile `{other}` (expected cardiology1, cardiology2, ent1, ent2 or custom)"
            ))),
        }
    }

    pub fn spec(&self) -> ProfileSpec {
        let fixed = |name: &str, specialty, surgeries, types, dated, hist: [usize; 5], total_mean: f64, sd| ProfileSpec {
            name: name.to_string(),
            specialty,
            surgeries,
            types,
            dated,
            release_histogram: hist.to_vec(),
            mean_duration: total_mean / surgeries as f64,
            mean_sd: sd,
        };
        match self {
            Profile::Cardiology1 => fixed("cardiology1", Specialty::Cardiology, 216, 50, 13, [184, 18, 3, 10, 1], 24_191.0, 45.4),
            Profile::Cardiology2 => fixed("cardiology2", Specialty::Cardiology, 158, 40, 12, [136, 6, 6, 6, 4], 17_543.0, 46.1),
            Profile::Ent1 => fixed("ent1", Specialty::Ent, 137, 45, 5, [129, 5, 0, 2, 1], 18_808.0, 62.9),
            Profile::Ent2 => fixed("ent2", Specialty::Ent, 52, 31, 4, [48, 1, 2, 1, 0], 6_279.0, 54.2),
            Profile::Custom(spec) => spec.clone(),
        }
    }
}

impl ProfileSpec {
    /// A small custom profile, everything released on day 0.
    pub fn small(specialty: Specialty, surgeries: usize, types: usize, dated: usize) -> Self {
        Self {
            name: "custom".into(),
            specialty,
            surgeries,
            types,
            dated,
            release_histogram: vec![surgeries],
            mean_duration: 120.0,
            mean_sd: 45.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInstance(m));
        if self.surgeries == 0 || self.types == 0 || self.types > self.surgeries {
            return bad(format!(
                "profile needs 1 <= types <= surgeries, got {} types for {} surgeries",
                self.types, self.surgeries
            ));
        }
        if self.release_histogram.iter().sum::<usize>() != self.surgeries {
            return bad("release histogram does not sum to the surgery count".into());
        }
        if self.release_histogram.len() > 5 {
            return bad("release days beyond the five-day horizon".into());
        }
        if self.dated > self.surgeries {
            return bad("more dated surgeries than surgeries".into());
        }
        if !(self.mean_duration > 0.0) || !(self.mean_sd >= 0.0) {
            return bad("mean duration and mean SD must be positive".into());
        }
        Ok(())
    }
}

fn lognormal_with_moments(mean: f64, sd: f64) -> LogNormal<f64> {
    let sigma2 = (sd * sd / (mean * mean)).ln_1p();
    LogNormal::new(mean.ln() - 0.5 * sigma2, sigma2.sqrt()).expect("finite lognormal parameters")
}

fn population_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Generate a synthetic instance whose aggregates follow `profile`.
///
/// Deterministic in `(profile, seed)`. Type observation pools are drawn from
/// lognormals and then rescaled about their means so that the instance's
/// mean SD equals the profile target.
pub fn synthesize_instance(profile: &Profile, seed: u64, alpha: f64) -> Result<Instance> {
    let spec = profile.spec();
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let type_mean_dist = lognormal_with_moments(spec.mean_duration, 0.6 * spec.mean_duration);
    let mut pools: Vec<Vec<f64>> = Vec::with_capacity(spec.types);
    for _ in 0..spec.types {
        let mean = type_mean_dist.sample(&mut rng).clamp(25.0, 420.0);
        let cv = rng.random_range(0.2..0.6);
        let n_obs = if rng.random_bool(0.1) {
            rng.random_range(1..5)
        } else {
            rng.random_range(30..150)
        };
        let dist = lognormal_with_moments(mean, cv * mean);
        let pool: Vec<f64> = std::iter::repeat_with(|| dist.sample(&mut rng))
            .filter(|d| *d >= 5.0 && *d <= 600.0)
            .take(n_obs)
            .collect();
        pools.push(pool);
    }

    // Every type gets at least one surgery.
    let mut type_of: Vec<usize> = (0..spec.types).collect();
    type_of.extend((spec.types..spec.surgeries).map(|_| rng.random_range(0..spec.types)));
    type_of.shuffle(&mut rng);

    let counts = type_of.iter().fold(vec![0usize; spec.types], |mut c, &t| {
        c[t] += 1;
        c
    });
    // Spread the log-deviations by one common factor. Linear rescaling would
    // push short types to the clamp and inflate their fitted log variance.
    let logs: Vec<(f64, Vec<f64>)> = pools
        .iter()
        .map(|p| {
            let l: Vec<f64> = p.iter().map(|d| d.ln()).collect();
            (l.iter().sum::<f64>() / l.len().max(1) as f64, l)
        })
        .collect();
    let rescaled = |f: f64| -> Vec<Vec<f64>> {
        logs.iter()
            .map(|(m, l)| l.iter().map(|x| (m + f * (x - m)).exp().clamp(1.0, MAX_PLANNABLE_MINUTES)).collect())
            .collect()
    };
    let achieved = |ps: &[Vec<f64>]| {
        ps.iter().zip(&counts).map(|(p, &c)| population_sd(p).1 * c as f64).sum::<f64>() / spec.surgeries as f64
    };
    if achieved(&pools) > 0.0 {
        let (mut lo, mut hi) = (0.0, 1.0);
        while achieved(&rescaled(hi)) < spec.mean_sd && hi < 64.0 {
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if achieved(&rescaled(mid)) < spec.mean_sd {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        pools = rescaled(0.5 * (lo + hi));
    }

    let types: Vec<SurgeryType> = pools
        .into_iter()
        .enumerate()
        .map(|(i, pool)| SurgeryType::from_observations(format!("T{:03}", i + 1), pool))
        .collect::<Result<_>>()?;

    let mut release: Vec<u32> = spec
        .release_histogram
        .iter()
        .enumerate()
        .flat_map(|(day, &n)| std::iter::repeat_n(day as u32, n))
        .collect();
    release.shuffle(&mut rng);

    // Dated surgeries: prefer early releases and moderate durations so that the
    // due-date constraints stay satisfiable.
    let mut candidates: Vec<usize> = (0..spec.surgeries)
        .filter(|&s| release[s] <= 3 && types[type_of[s]].sample_mean <= 300.0)
        .collect();
    candidates.shuffle(&mut rng);
    let mut dated: HashSet<usize> = candidates.into_iter().take(spec.dated).collect();
    let mut rest: Vec<usize> = (0..spec.surgeries).filter(|s| !dated.contains(s)).collect();
    rest.shuffle(&mut rng);
    while dated.len() < spec.dated {
        dated.insert(rest.pop().expect("dated <= surgeries"));
    }

    let horizon = 4u32;
    let surgeries: Vec<RawSurgery> = (0..spec.surgeries)
        .map(|s| {
            let due = if dated.contains(&s) {
                Some(rng.random_range(release[s].min(horizon)..=horizon))
            } else if rng.random_bool(0.6) {
                Some(rng.random_range(horizon + 1..=horizon + 40))
            } else {
                None
            };
            RawSurgery {
                surgery_id: format!("S{:04}", s + 1),
                type_id: types[type_of[s]].type_id.clone(),
                release: release[s],
                due,
            }
        })
        .collect();

    Instance::assemble(types, surgeries, spec.specialty.slots(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn tiny_dir(types: &str, surgeries: &str, slots: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), TYPES_FILE, types);
        write(dir.path(), SURGERIES_FILE, surgeries);
        write(dir.path(), SLOTS_FILE, slots);
        dir
    }

    #[test]
    fn loads_trivial_instance() {
        let dir = tiny_dir(
            "type_id,duration\nA,100\nA,100\nA,100\n",
            "surgery_id,type_id,release,due\ns1,A,0,1\n",
            "or_id,day,capacity_minutes\nOR1,0,510\n",
        );
        let inst = load_instance(dir.path(), 0.15).unwrap();
        assert_eq!(inst.surgeries.len(), 1);
        assert_eq!(inst.types[0].normal.sigma2, 0.0);
        assert_eq!(inst.types[0].lognormal.sigma2, 0.0);
        assert_eq!(inst.sample_mean(0), 100.0);
        // due day 1 lies beyond the one-day horizon {0}
        assert!(!inst.surgeries[0].has_due_in_horizon);
    }

    #[test]
    fn excludes_surgery_longer_than_any_slot() {
        let dir = tiny_dir(
            "type_id,duration\nA,600\nB,100\n",
            "surgery_id,type_id,release,due\ns1,A,0,\ns2,B,0,\n",
            "or_id,day,capacity_minutes\nOR1,0,510\n",
        );
        let inst = load_instance(dir.path(), 0.15).unwrap();
        assert_eq!(inst.excluded, vec!["s1".to_string()]);
        assert_eq!(inst.surgeries.len(), 1);
        assert_eq!(inst.surgeries[0].surgery_id, "s2");
    }

    #[test]
    fn cleans_invalid_duration_records() {
        let dir = tiny_dir(
            "type_id,duration\nA,-5\nA,0\nA,100\nA,800\nA,120\n",
            "surgery_id,type_id,release,due\ns1,A,0,\n",
            "or_id,day,capacity_minutes\nOR1,0,510\n",
        );
        let inst = load_instance(dir.path(), 0.15).unwrap();
        assert_eq!(inst.types[0].n_observations, 2);
        assert_eq!(inst.types[0].sample_mean, 110.0);
    }

    #[test]
    fn load_errors() {
        let dir = tiny_dir(
            "type_id,duration\nA,100\nA,abc\n",
            "surgery_id,type_id,release,due\ns1,A,0,\n",
            "or_id,day,capacity_minutes\nOR1,0,510\n",
        );
        match load_instance(dir.path(), 0.15) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let dir = tiny_dir(
            "type_id,duration\nA,100\n",
            "surgery_id,type_id,release,due\ns1,B,0,\n",
            "or_id,day,capacity_minutes\nOR1,0,510\n",
        );
        assert!(matches!(load_instance(dir.path(), 0.15), Err(Error::Parse { line: 2, .. })));

        let dir = tiny_dir(
            "type_id,duration\nA,100\n",
            "surgery_id,type_id,release,due\ns1,A,0,\n",
            "or_id,day,capacity_minutes\nOR1,0,510\n",
        );
        assert!(matches!(load_instance(dir.path(), 1.5), Err(Error::InvalidInstance(_))));
        assert!(matches!(load_instance(dir.path(), 0.0), Err(Error::InvalidInstance(_))));
    }

    #[test]
    fn undated_surgeries_get_max_due_plus_one() {
        let types = vec![SurgeryType::deterministic("A", 100.0)];
        let slots: Vec<OrDaySlot> = (0..5).map(|d| OrDaySlot::new("OR1", d, 510.0)).collect();
        let inst = Instance::assemble(
            types,
            vec![
                RawSurgery::new("a", "A", 0, Some(2)),
                RawSurgery::new("b", "A", 0, Some(9)),
                RawSurgery::new("c", "A", 1, None),
            ],
            slots,
            0.15,
        )
        .unwrap();
        let due: Vec<(u32, bool)> = inst.surgeries.iter().map(|s| (s.due, s.has_due_in_horizon)).collect();
        assert_eq!(due, vec![(2, true), (9, false), (10, false)]);
    }

    #[test]
    fn mean_sd_examples() {
        let slots = vec![OrDaySlot::new("OR1", 0, 510.0)];
        let inst = Instance::assemble(
            vec![SurgeryType::deterministic("A", 100.0)],
            vec![RawSurgery::new("a", "A", 0, None)],
            slots.clone(),
            0.15,
        )
        .unwrap();
        assert_eq!(mean_sd(&inst), 0.0);

        let ty = |id: &str, sd: f64| {
            SurgeryType::from_params(
                id,
                NormalParams { mu: 100.0, sigma2: sd * sd },
                LogNormalParams { mu: 100f64.ln(), sigma2: 0.01 },
            )
        };
        let inst = Instance::assemble(
            vec![ty("A", 10.0), ty("B", 20.0)],
            vec![RawSurgery::new("a", "A", 0, None), RawSurgery::new("b", "B", 0, None)],
            slots,
            0.15,
        )
        .unwrap();
        assert!((mean_sd(&inst) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_profiles_match_aggregates() {
        let inst = synthesize_instance(&Profile::Cardiology1, 1, DEFAULT_ALPHA).unwrap();
        assert_eq!(inst.surgeries.len(), 216);
        assert_eq!(inst.types.len(), 50);
        assert_eq!(inst.total_capacity(), 11_730.0);
        assert_eq!(inst.surgeries.iter().filter(|s| s.has_due_in_horizon).count(), 13);
        let mut hist = [0usize; 5];
        for s in &inst.surgeries {
            hist[s.release as usize] += 1;
        }
        assert_eq!(hist, [184, 18, 3, 10, 1]);
        assert!((mean_sd(&inst) - 45.4).abs() <= 5.0, "{}", mean_sd(&inst));

        let inst = synthesize_instance(&Profile::Ent2, 1, DEFAULT_ALPHA).unwrap();
        assert_eq!(inst.surgeries.len(), 52);
        assert_eq!(inst.types.len(), 31);
        assert_eq!(inst.total_capacity(), 5_310.0);

        let inst = synthesize_instance(&Profile::Ent1, 1, DEFAULT_ALPHA).unwrap();
        let mut day4: Vec<f64> = inst.slots.iter().filter(|s| s.day == 4).map(|s| s.capacity).collect();
        day4.sort_by(f64::total_cmp);
        assert_eq!(day4, vec![510.0, 720.0]);
        assert!((mean_sd(&inst) - 62.9).abs() <= 5.0);
    }

    #[test]
    fn synthetic_instances_are_reproducible_and_sane() {
        for profile in [Profile::Cardiology1, Profile::Cardiology2, Profile::Ent1, Profile::Ent2] {
            let a = synthesize_instance(&profile, 42, DEFAULT_ALPHA).unwrap();
            let b = synthesize_instance(&profile, 42, DEFAULT_ALPHA).unwrap();
            assert_eq!(a, b);
            let horizon = a.horizon();
            let cap = a.max_capacity();
            for (s, surgery) in a.surgeries.iter().enumerate() {
                assert!(a.sample_mean(s) <= cap);
                assert_eq!(surgery.has_due_in_horizon, surgery.due <= horizon);
                if surgery.has_due_in_horizon {
                    assert!(surgery.release <= surgery.due);
                }
            }
        }
        assert!(Profile::from_name("nope").is_err());
    }

    #[test]
    fn write_and_reload_round_trips() {
        let inst = synthesize_instance(&Profile::Ent2, 7, DEFAULT_ALPHA).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_instance(&inst, dir.path()).unwrap();
        let back = load_instance(dir.path(), DEFAULT_ALPHA).unwrap();
        assert_eq!(inst, back);
    }
}
