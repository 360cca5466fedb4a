//! Solver-agnostic mixed-integer linear models.
//!
//! Models are always maximisation problems. A [`Backend`] turns a
//! [`LinearModel`] into a [`Solution`]; the only shipped backend wraps HiGHS.

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[cfg(feature = "highs")]
mod highs;
#[cfg(feature = "highs")]
pub use self::highs::HighsBackend;

/// Feasibility tolerance used when re-checking returned solutions.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Binary values this close to 0 or 1 are snapped on extraction.
pub const INTEGRALITY_SNAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarDef {
    pub name: String,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub group: String,
    pub terms: Vec<(Var, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violate this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub vars: Vec<VarDef>,
    pub constraints: Vec<Constraint>,
    /// Maximised.
    pub objective: Vec<(Var, f64)>,
}

impl LinearModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lo: f64, hi: f64) -> Var {
        let (lo, hi) = match kind {
            VarKind::Binary => (lo.max(0.0), hi.min(1.0)),
            VarKind::Continuous => (lo, hi),
        };
        self.vars.push(VarDef {
            name: name.into(),
            kind,
            lo,
            hi,
        });
        Var(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Var {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> Var {
        self.add_var(name, VarKind::Continuous, lo, hi)
    }

    /// Add a row. Zero coefficients are dropped and repeated variables merged.
    pub fn add_constraint(
        &mut self,
        group: impl Into<String>,
        terms: impl IntoIterator<Item = (Var, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        let mut merged: Vec<(Var, f64)> = Vec::new();
        for (v, c) in terms {
            debug_assert!(v.0 < self.vars.len(), "constraint references unknown variable");
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some((_, acc)) => *acc += c,
                None => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        self.constraints.push(Constraint {
            group: group.into(),
            terms: merged,
            sense,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_objective(&mut self, terms: impl IntoIterator<Item = (Var, f64)>) {
        self.objective = terms.into_iter().collect();
    }

    pub fn add_objective_term(&mut self, v: Var, coeff: f64) {
        self.objective.push((v, coeff));
    }

    /// Fix a variable to a value by collapsing its bounds.
    pub fn fix(&mut self, v: Var, value: f64) {
        self.vars[v.0].lo = value;
        self.vars[v.0].hi = value;
    }

    pub fn var(&self, v: Var) -> &VarDef {
        &self.vars[v.0]
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn constraints_in<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a Constraint> + 'a {
        self.constraints.iter().filter(move |c| c.group == group)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Check model invariants: finite coefficients, live variable references.
    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.vars.iter().enumerate() {
            if v.lo.is_nan() || v.hi.is_nan() || v.lo > v.hi {
                return Err(Error::Model(format!("variable {} ({i}) has bounds [{}, {}]", v.name, v.lo, v.hi)));
            }
        }
        let live = |v: Var| v.0 < self.vars.len();
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(Error::Model(format!("row in group {} has rhs {}", c.group, c.rhs)));
            }
            for &(v, coeff) in &c.terms {
                if !live(v) || !coeff.is_finite() {
                    return Err(Error::Model(format!(
                        "row in group {} has term ({}, {coeff})",
                        c.group, v.0
                    )));
                }
            }
        }
        for &(v, coeff) in &self.objective {
            if !live(v) || !coeff.is_finite() {
                return Err(Error::Model(format!("objective term ({}, {coeff}) is invalid", v.0)));
            }
        }
        Ok(())
    }

    /// Largest violation over rows, bounds and integrality.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(values));
        let bounds = self.vars.iter().zip(values).map(|(v, &x)| {
            let b = (v.lo - x).max(x - v.hi).max(0.0);
            match v.kind {
                VarKind::Binary => b.max((x - x.round()).abs()),
                VarKind::Continuous => b,
            }
        });
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Rows violated by more than `tol`, as `(row index, violation)`.
    pub fn violated_rows(&self, values: &[f64], tol: f64) -> Vec<(usize, f64)> {
        self.constraints
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.violation(values)))
            .filter(|&(_, v)| v > tol)
            .collect()
    }

    /// CPLEX LP format, for offline inspection.
    pub fn to_lp_string(&self) -> String {
        fn name(m: &LinearModel, v: Var) -> String {
            format!("x{}", v.0).replace(' ', "_") + &format!("_{}", sanitize(&m.vars[v.0].name))
        }
        fn sanitize(s: &str) -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
                .collect()
        }
        fn expr(m: &LinearModel, terms: &[(Var, f64)]) -> String {
            if terms.is_empty() {
                return "0 x0_dummy".into();
            }
            let mut out = String::new();
            for (i, &(v, c)) in terms.iter().enumerate() {
                let sign = if c < 0.0 { "-" } else if i > 0 { "+" } else { "" };
                let _ = write!(out, "{}{sign} {} {}", if i > 0 { " " } else { "" }, c.abs(), name(m, v));
            }
            out
        }

        let mut out = String::from("\\ generated by orsched\nMaximize\n obj: ");
        out += &expr(self, &self.objective);
        out += "\nSubject To\n";
        for (i, c) in self.constraints.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, " {}_{i}: {} {op} {}", sanitize(&c.group), expr(self, &c.terms), c.rhs);
        }
        out += "Bounds\n";
        for (i, v) in self.vars.iter().enumerate() {
            if v.kind == VarKind::Binary {
                continue;
            }
            let n = name(self, Var(i));
            let lo = if v.lo.is_finite() { v.lo.to_string() } else { "-inf".into() };
            let hi = if v.hi.is_finite() { v.hi.to_string() } else { "+inf".into() };
            let _ = writeln!(out, " {lo} <= {n} <= {hi}");
        }
        let binaries: Vec<String> = (0..self.vars.len())
            .filter(|&i| self.vars[i].kind == VarKind::Binary)
            .map(|i| name(self, Var(i)))
            .collect();
        if !binaries.is_empty() {
            out += "Binaries\n";
            for chunk in binaries.chunks(8) {
                let _ = writeln!(out, " {}", chunk.join(" "));
            }
        }
        out += "End\n";
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    FeasibleAtLimit,
    Infeasible,
    Error,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::FeasibleAtLimit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub best_bound: f64,
    pub gap: f64,
    /// Largest constraint violation of `values`, recomputed independently.
    pub max_violation: f64,
    pub message: Option<String>,
}

impl Solution {
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }

    pub fn is_one(&self, v: Var) -> bool {
        self.values[v.0] > 0.5
    }

    fn without_values(status: SolveStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            values: Vec::new(),
            objective: f64::NAN,
            best_bound: f64::NAN,
            gap: f64::NAN,
            max_violation: f64::NAN,
            message: Some(message.into()),
        }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        Self::without_values(SolveStatus::Infeasible, message)
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self::without_values(SolveStatus::Error, message)
    }
}

/// Relative gap for a maximisation problem.
pub fn relative_gap(objective: f64, bound: f64) -> f64 {
    if !objective.is_finite() || !bound.is_finite() {
        return f64::INFINITY;
    }
    if objective == bound {
        return 0.0;
    }
    (bound - objective) / objective.abs().max(1e-10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub time_limit: Duration,
    pub rel_gap: f64,
    pub threads: Option<usize>,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_limit: Duration::from_secs(300),
            rel_gap: 1e-4,
            threads: Some(1),
            verbose: false,
        }
    }
}

impl SolveOptions {
    pub fn with_time_limit(secs: f64) -> Self {
        Self {
            time_limit: Duration::from_secs_f64(secs),
            ..Self::default()
        }
    }
}

pub trait Backend {
    fn name(&self) -> &'static str;

    /// Raw solve; implementations need not snap or re-check values.
    fn solve_raw(&self, model: &LinearModel, opts: &SolveOptions) -> Result<Solution>;
}

pub fn default_backend() -> Result<Box<dyn Backend + Send + Sync>> {
    #[cfg(feature = "highs")]
    {
        Ok(Box::new(HighsBackend))
    }
    #[cfg(not(feature = "highs"))]
    {
        Err(Error::BackendUnavailable)
    }
}

/// Solve with the default backend, snap binaries and re-check feasibility.
pub fn solve(model: &LinearModel, opts: &SolveOptions) -> Result<Solution> {
    solve_with(default_backend()?.as_ref(), model, opts)
}

pub fn solve_with(backend: &dyn Backend, model: &LinearModel, opts: &SolveOptions) -> Result<Solution> {
    model.validate()?;
    if model.vars.is_empty() {
        // Nothing to decide; only constant rows remain.
        let feasible = model.constraints.iter().all(|c| c.violation(&[]) <= FEASIBILITY_TOL);
        return Ok(if feasible {
            Solution {
                status: SolveStatus::Optimal,
                values: Vec::new(),
                objective: 0.0,
                best_bound: 0.0,
                gap: 0.0,
                max_violation: 0.0,
                message: None,
            }
        } else {
            Solution::infeasible("constant row violated")
        });
    }
    let mut sol = backend.solve_raw(model, opts)?;
    if sol.status.has_solution() {
        for (x, def) in sol.values.iter_mut().zip(&model.vars) {
            if def.kind == VarKind::Binary {
                let r = x.round();
                if (*x - r).abs() <= INTEGRALITY_SNAP {
                    *x = r;
                }
            }
        }
        sol.max_violation = model.max_violation(&sol.values);
        sol.objective = model.objective_value(&sol.values);
        sol.gap = relative_gap(sol.objective, sol.best_bound).max(0.0);
    }
    Ok(sol)
}
