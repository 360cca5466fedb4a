use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense as HSense};

use super::{Backend, LinearModel, Sense, Solution, SolveOptions, SolveStatus, VarKind};
use crate::error::{Error, Result};

/// Adapter to the HiGHS branch-and-cut solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct HighsBackend;

impl Backend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn solve_raw(&self, model: &LinearModel, opts: &SolveOptions) -> Result<Solution> {
        let mut cost = vec![0.0; model.vars.len()];
        for &(v, c) in &model.objective {
            cost[v.0] += c;
        }

        let mut pb = RowProblem::default();
        let cols: Vec<_> = model
            .vars
            .iter()
            .zip(&cost)
            .map(|(def, &c)| match def.kind {
                VarKind::Binary => pb.add_integer_column(c, def.lo..=def.hi),
                VarKind::Continuous => pb.add_column(c, def.lo..=def.hi),
            })
            .collect();
        for row in &model.constraints {
            let terms: Vec<_> = row.terms.iter().map(|&(v, c)| (cols[v.0], c)).collect();
            match row.sense {
                Sense::Le => pb.add_row(..=row.rhs, terms),
                Sense::Ge => pb.add_row(row.rhs.., terms),
                Sense::Eq => pb.add_row(row.rhs..=row.rhs, terms),
            }
        }

        let mut m = pb
            .try_optimise(HSense::Maximise)
            .map_err(|s| Error::Solver(format!("HiGHS rejected the model: {s:?}")))?;
        m.set_option("output_flag", opts.verbose);
        m.set_option("time_limit", opts.time_limit.as_secs_f64());
        m.set_option("mip_rel_gap", opts.rel_gap);
        m.set_option("mip_feasibility_tolerance", 1e-9);
        m.set_option("primal_feasibility_tolerance", 1e-9);
        if let Some(t) = opts.threads {
            m.set_option("threads", t as i32);
        }

        let solved = m
            .try_solve()
            .map_err(|s| Error::Solver(format!("HiGHS run failed: {s:?}")))?;
        let has_primal = solved.primal_solution_status() == HighsSolutionStatus::Feasible;
        let status = match solved.status() {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::Infeasible | HighsModelStatus::UnboundedOrInfeasible => {
                return Ok(Solution::infeasible("HiGHS proved the model infeasible"));
            }
            HighsModelStatus::ReachedTimeLimit
            | HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ReachedSolutionLimit
            | HighsModelStatus::ReachedInterrupt
            | HighsModelStatus::ReachedMemoryLimit
            | HighsModelStatus::ObjectiveBound
            | HighsModelStatus::ObjectiveTarget
                if has_primal =>
            {
                SolveStatus::FeasibleAtLimit
            }
            other => {
                return Ok(Solution::error(format!(
                    "HiGHS finished with status {other:?} and no usable incumbent"
                )));
            }
        };

        let values = solved.get_solution().columns().to_vec();
        let objective = solved.objective_value();
        let has_integers = model.vars.iter().any(|v| v.kind == VarKind::Binary);
        let best_bound = if status == SolveStatus::Optimal && !has_integers {
            objective
        } else {
            solved
                .double_info_value(c"mip_dual_bound")
                .ok()
                .filter(|b| b.is_finite())
                .unwrap_or(objective)
        };
        Ok(Solution {
            status,
            values,
            objective,
            best_bound,
            gap: solved.mip_gap(),
            max_violation: 0.0,
            message: None,
        })
    }
}
