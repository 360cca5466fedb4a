//! Normal-approximation overtime rows with a piecewise-linear square root.
//!
//! Under normality a slot respects the overtime limit iff
//! `Σμ + z·√(Σσ²) ≤ C` with `z = Φ⁻¹(1−α)`. The square root is replaced by
//! chords between breakpoints `(x_i, √x_i + δ)`; each chord touches `√x` once
//! in its interior, so the approximation never falls below `√x` and never
//! exceeds it by more than `δ`.

use serde::{Deserialize, Serialize};

use crate::distributions::{inv_norm_cdf, norm_cdf};
use crate::error::{Error, Result};
use crate::fnn::embed::fractional_knapsack;
use crate::instance::Instance;
use crate::milp::{Sense, SolveOptions, Var};
use crate::scheduler::{build_base, extract_schedule, BaseModel, Schedule};

pub const GROUP_CONVEXITY: &str = "plf_convexity";
pub const GROUP_VARIANCE: &str = "plf_variance";
pub const GROUP_OVERTIME: &str = "plf_overtime";
pub const GROUP_ADJACENCY: &str = "plf_adjacency";

pub const DEFAULT_DELTA_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlfConfig {
    pub delta_max: f64,
    /// Largest number of surgeries one OR can hold.
    pub n: usize,
    /// Largest single-surgery variance, minutes².
    pub sigma2_max: f64,
}

impl PlfConfig {
    pub fn x_max(&self) -> f64 {
        self.n as f64 * self.sigma2_max
    }

    /// Derive `n` and `σ²max` from the instance itself.
    pub fn for_instance(instance: &Instance, delta_max: f64) -> Self {
        let sigma2_max = (0..instance.surgeries.len())
            .map(|s| instance.normal(s).sigma2)
            .fold(0.0, f64::max);
        Self {
            delta_max,
            n: instance.max_surgeries_per_slot(),
            sigma2_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakpoints {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub delta: f64,
    /// Segment count, `xs.len() - 1`.
    pub b: usize,
}

/// `√x_{i+1}` from `√x_i` for a chord tangent to `√x` with endpoint error `δ`.
fn next_root(a: f64, delta: f64) -> f64 {
    a + 2.0 * delta + 2.0 * (delta * delta + 2.0 * a * delta).sqrt()
}

/// Interior tangency abscissa of the full-width chord starting at `a²`.
pub fn tangency_point(a: f64, delta: f64) -> f64 {
    let t = a + delta + (delta * delta + 2.0 * a * delta).sqrt();
    t * t
}

fn reach(delta: f64, segments: usize) -> f64 {
    let mut a = 0.0;
    for _ in 0..segments {
        a = next_root(a, delta);
    }
    a * a
}

fn segments_needed(delta: f64, x_max: f64) -> usize {
    let mut a: f64 = 0.0;
    let mut b = 0;
    while a * a < x_max {
        a = next_root(a, delta);
        b += 1;
    }
    b
}

pub fn build_breakpoints(cfg: &PlfConfig) -> Result<Breakpoints> {
    breakpoints_for(cfg.delta_max, cfg.x_max())
}

/// Fewest equal-error breakpoints covering `[0, x_max]` with error at most `delta_max`.
pub fn breakpoints_for(delta_max: f64, x_max: f64) -> Result<Breakpoints> {
    if !(delta_max > 0.0) || !delta_max.is_finite() {
        return Err(Error::domain(format!("delta_max must be positive, got {delta_max}")));
    }
    if !(x_max >= 0.0) || !x_max.is_finite() {
        return Err(Error::domain(format!("x_max must be finite and nonnegative, got {x_max}")));
    }
    if x_max == 0.0 {
        return Ok(Breakpoints {
            xs: vec![0.0],
            ys: vec![0.0],
            delta: 0.0,
            b: 0,
        });
    }
    let b = segments_needed(delta_max, x_max);
    let (mut lo, mut hi) = (0.0, delta_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if reach(mid, b) >= x_max {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * delta_max {
            break;
        }
    }
    let delta = hi;
    let mut xs = Vec::with_capacity(b + 1);
    let mut a: f64 = 0.0;
    xs.push(0.0);
    for _ in 0..b {
        a = next_root(a, delta);
        xs.push(a * a);
    }
    xs[b] = x_max;
    let ys = xs.iter().map(|x| x.sqrt() + delta).collect();
    Ok(Breakpoints { xs, ys, delta, b })
}

impl Breakpoints {
    pub fn x_max(&self) -> f64 {
        *self.xs.last().expect("breakpoints are never empty")
    }

    /// Chord interpolation of `√x + δ` between breakpoints.
    pub fn approx_sqrt(&self, x: f64) -> Result<f64> {
        let x_max = self.x_max();
        if !(x >= 0.0) || x > x_max * (1.0 + 1e-12) {
            return Err(Error::domain(format!("x = {x} outside [0, {x_max}]")));
        }
        if self.b == 0 {
            return Ok(self.ys[0]);
        }
        let i = self.xs.partition_point(|&xi| xi <= x).clamp(1, self.b) - 1;
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        Ok(self.ys[i] + t * (self.ys[i + 1] - self.ys[i]))
    }

    /// Point of least error on each segment; the error there is 0 except
    /// possibly on the clamped last segment.
    pub fn tangency_points(&self) -> Vec<f64> {
        (0..self.b)
            .map(|i| {
                let slope = (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i]);
                (1.0 / (4.0 * slope * slope)).clamp(self.xs[i], self.xs[i + 1])
            })
            .collect()
    }

    /// CSV table of `(i, x_i, y_i)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,x,y\n");
        for (i, (x, y)) in self.xs.iter().zip(&self.ys).enumerate() {
            out.push_str(&format!("{i},{x},{y}\n"));
        }
        out
    }
}

/// λ and segment-selector variables attached to one slot.
#[derive(Debug, Clone)]
pub struct SlotPlf {
    pub slot: usize,
    pub lambda: Vec<Var>,
    pub segment: Vec<Var>,
}

/// Tight-enough bound on a slot's total variance: as many surgeries as fit
/// by mean, each at the largest eligible variance.
fn variance_bound(instance: &Instance, base: &BaseModel, slot: usize) -> f64 {
    let vars = &base.slot_vars[slot];
    let mut means: Vec<f64> = vars.iter().map(|&(s, _)| instance.sample_mean(s)).collect();
    means.sort_by(f64::total_cmp);
    let mut load = 0.0;
    let n = means
        .iter()
        .take_while(|&&m| {
            load += m;
            load <= instance.slots[slot].capacity
        })
        .count();
    let s2 = vars.iter().map(|&(s, _)| instance.normal(s).sigma2).fold(0.0, f64::max);
    n as f64 * s2
}

/// Attach the λ-formulation overtime rows to every nonempty slot.
pub fn add_plf_constraints(base: &mut BaseModel, instance: &Instance, bp: &Breakpoints) -> Result<Vec<SlotPlf>> {
    let z = inv_norm_cdf(1.0 - instance.alpha)?;
    let x_max = bp.x_max();
    let mut out = Vec::new();
    for o in 0..instance.slots.len() {
        if base.slot_vars[o].is_empty() {
            continue;
        }
        let bound = variance_bound(instance, base, o);
        if bound > x_max * (1.0 + 1e-9) + 1e-9 {
            let slot = &instance.slots[o];
            return Err(Error::Model(format!(
                "slot {}/{} can reach total variance {bound:.1} but breakpoints stop at {x_max:.1}; \
                 raise n or sigma2_max",
                slot.or_id, slot.day
            )));
        }
        let tag = format!("{}_{}", instance.slots[o].or_id, instance.slots[o].day);
        let model = &mut base.model;
        let lambda: Vec<Var> = (0..=bp.b)
            .map(|i| model.add_continuous(format!("lambda_{tag}_{i}"), 0.0, 1.0))
            .collect();
        model.add_constraint(GROUP_CONVEXITY, lambda.iter().map(|&l| (l, 1.0)), Sense::Eq, 1.0);

        let var_terms = lambda
            .iter()
            .zip(&bp.xs)
            .map(|(&l, &x)| (l, x))
            .chain(base.slot_vars[o].iter().map(|&(s, v)| (v, -instance.normal(s).sigma2)));
        model.add_constraint(GROUP_VARIANCE, var_terms, Sense::Eq, 0.0);

        let ot_terms = base.slot_vars[o]
            .iter()
            .map(|&(s, v)| (v, instance.normal(s).mu))
            .chain(lambda.iter().zip(&bp.ys).map(|(&l, &y)| (l, z * y)));
        model.add_constraint(GROUP_OVERTIME, ot_terms, Sense::Le, instance.slots[o].capacity);

        let segment: Vec<Var> = (0..bp.b).map(|j| model.add_binary(format!("seg_{tag}_{j}"))).collect();
        if bp.b > 0 {
            model.add_constraint(GROUP_ADJACENCY, segment.iter().map(|&u| (u, 1.0)), Sense::Eq, 1.0);
            for (i, &l) in lambda.iter().enumerate() {
                let mut terms = vec![(l, 1.0)];
                if i > 0 {
                    terms.push((segment[i - 1], -1.0));
                }
                if i < bp.b {
                    terms.push((segment[i], -1.0));
                }
                model.add_constraint(GROUP_ADJACENCY, terms, Sense::Le, 0.0);
            }
        }
        // Breakpoints past what the slot can reach only loosen the relaxation.
        let reach = bound.min(fractional_knapsack(
            &base.slot_vars[o]
                .iter()
                .map(|&(s, _)| (instance.sample_mean(s), instance.normal(s).sigma2))
                .collect::<Vec<_>>(),
            instance.slots[o].capacity,
        ));
        let last = bp.xs.iter().position(|&x| x >= reach).unwrap_or(bp.b);
        for &l in &lambda[last + 1..] {
            base.model.fix(l, 0.0);
        }
        for &u in segment.iter().skip(last.max(1)) {
            base.model.fix(u, 0.0);
        }
        out.push(SlotPlf { slot: o, lambda, segment });
    }
    Ok(out)
}

/// Normal-model overtime probability of each slot.
pub fn constraint_overtime_prob(schedule: &Schedule, instance: &Instance) -> Vec<f64> {
    let mut mu = vec![0.0; instance.slots.len()];
    let mut var = vec![0.0; instance.slots.len()];
    for a in &schedule.assignments {
        let n = instance.normal(a.surgery);
        mu[a.slot] += n.mu;
        var[a.slot] += n.sigma2;
    }
    instance
        .slots
        .iter()
        .enumerate()
        .map(|(o, slot)| normal_overtime_prob(mu[o], var[o], slot.capacity))
        .collect()
}

pub fn normal_overtime_prob(mu: f64, sigma2: f64, capacity: f64) -> f64 {
    if sigma2 <= 0.0 {
        return if mu <= capacity { 0.0 } else { 1.0 };
    }
    1.0 - norm_cdf((capacity - mu) / sigma2.sqrt())
}

/// Whether every slot meets the exact normal percentile condition.
pub fn satisfies_exact_normal(schedule: &Schedule, instance: &Instance, tol: f64) -> Result<bool> {
    let z = inv_norm_cdf(1.0 - instance.alpha)?;
    let mut mu = vec![0.0; instance.slots.len()];
    let mut var = vec![0.0; instance.slots.len()];
    for a in &schedule.assignments {
        let n = instance.normal(a.surgery);
        mu[a.slot] += n.mu;
        var[a.slot] += n.sigma2;
    }
    Ok(instance
        .slots
        .iter()
        .enumerate()
        .all(|(o, s)| mu[o] + z * var[o].sqrt() <= s.capacity + tol))
}

/// Base model plus PLF rows, ready to solve.
pub fn build_model(instance: &Instance, bp: &Breakpoints) -> Result<(BaseModel, Vec<SlotPlf>)> {
    let mut base = build_base(instance);
    let slots = add_plf_constraints(&mut base, instance, bp)?;
    Ok((base, slots))
}

pub fn solve(instance: &Instance, bp: &Breakpoints, opts: &SolveOptions) -> Result<Schedule> {
    let (base, _) = build_model(instance, bp)?;
    let sol = crate::milp::solve(&base.model, opts)?;
    let mut schedule = extract_schedule(&base, &sol, instance)?;
    schedule.method = Some("plf".into());
    let probs = constraint_overtime_prob(&schedule, instance);
    schedule.set_constraint_probs(&probs);
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force next breakpoint: the largest `X` such that the chord from
    /// `(x0, √x0+δ)` to `(X, √X+δ)` still stays above `√x`.
    fn numeric_next(x0: f64, delta: f64) -> (f64, f64) {
        let gap = |x1: f64| {
            let (y0, y1) = (x0.sqrt() + delta, x1.sqrt() + delta);
            let k = (y1 - y0) / (x1 - x0);
            let m = 1.0 / (4.0 * k * k);
            (y0 + k * (m - x0) - m.sqrt(), m)
        };
        let (mut lo, mut hi) = (x0 + 1e-9, x0 + 1.0);
        while gap(hi).0 > 0.0 {
            hi = x0 + 2.0 * (hi - x0);
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if gap(mid).0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, gap(lo).1)
    }

    #[test]
    fn recurrence_matches_numeric_tangency() {
        for &delta in &[0.1, 0.5, 0.96, 1.0, 3.0] {
            let mut a: f64 = 0.0;
            for _ in 0..10 {
                let (x1, m) = numeric_next(a * a, delta);
                let next = next_root(a, delta);
                assert!((next * next - x1).abs() <= 1e-6 * x1.max(1.0), "{delta}: {} vs {x1}", next * next);
                let t = tangency_point(a, delta);
                assert!((t - m).abs() <= 1e-5 * m.max(1.0));
                a = next;
            }
        }
    }

    #[test]
    fn reference_breakpoint_count() {
        let cfg = PlfConfig {
            delta_max: 1.0,
            n: 8,
            sigma2_max: 54_035.0,
        };
        assert_eq!(cfg.x_max(), 432_280.0);
        let bp = build_breakpoints(&cfg).unwrap();
        assert_eq!(bp.xs.len(), 19);
        assert!(bp.delta > 0.955 && bp.delta < 0.975, "delta {}", bp.delta);
        assert_eq!(bp.x_max(), 432_280.0);
        // One segment fewer cannot cover x_max even at the largest delta.
        assert!(reach(1.0, bp.b - 1) < 432_280.0);
    }

    #[test]
    fn small_range_single_segment() {
        for &x_max in &[1e-3, 1.0, 3.9, 4.0, 16.0] {
            let bp = breakpoints_for(1.0, x_max).unwrap();
            assert_eq!(bp.xs.len(), 2, "x_max {x_max}");
        }
        assert_eq!(breakpoints_for(1.0, 16.5).unwrap().xs.len(), 3);
    }

    #[test]
    fn approx_at_nodes_and_tangency() {
        let bp = breakpoints_for(1.0, 432_280.0).unwrap();
        assert!((bp.approx_sqrt(0.0).unwrap() - bp.delta).abs() < 1e-12);
        for (x, y) in bp.xs.iter().zip(&bp.ys) {
            assert!((bp.approx_sqrt(*x).unwrap() - y).abs() < 1e-9);
            assert_eq!(*y, x.sqrt() + bp.delta);
        }
        let tps = bp.tangency_points();
        for &m in &tps[..bp.b - 1] {
            let err = bp.approx_sqrt(m).unwrap() - m.sqrt();
            assert!(err.abs() < 1e-7, "error {err} at {m}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(breakpoints_for(0.0, 10.0).is_err());
        assert!(breakpoints_for(-1.0, 10.0).is_err());
        let bp = breakpoints_for(1.0, 100.0).unwrap();
        assert!(bp.approx_sqrt(-1.0).is_err());
        assert!(bp.approx_sqrt(101.0).is_err());
        let zero = breakpoints_for(1.0, 0.0).unwrap();
        assert_eq!(zero.xs, vec![0.0]);
        assert_eq!(zero.approx_sqrt(0.0).unwrap(), 0.0);
    }

    #[test]
    fn normal_probabilities() {
        use crate::instance::{OrDaySlot, RawSurgery, SurgeryType};
        let z = inv_norm_cdf(0.85).unwrap();
        assert_eq!(normal_overtime_prob(0.0, 0.0, 510.0), 0.0);
        assert!((normal_overtime_prob(510.0, 100.0, 510.0) - 0.5).abs() < 1e-12);
        assert!((normal_overtime_prob(510.0 - z * 10.0, 100.0, 510.0) - 0.15).abs() < 1e-9);

        let types = vec![SurgeryType::deterministic("T", 100.0)];
        let i = Instance::assemble(
            types,
            vec![RawSurgery::new("s", "T", 0, None)],
            vec![OrDaySlot::new("OR1", 0, 510.0)],
            0.15,
        )
        .unwrap();
        assert_eq!(constraint_overtime_prob(&Schedule::empty(&i), &i), vec![0.0]);
    }

    proptest! {
        #[test]
        fn overestimation_band(x_max in 1.0f64..1e6, delta_max in 0.05f64..5.0, u in 0.0f64..1.0) {
            let bp = breakpoints_for(delta_max, x_max).unwrap();
            prop_assert!(bp.delta <= delta_max);
            let x = u * x_max;
            let err = bp.approx_sqrt(x).unwrap() - x.sqrt();
            prop_assert!(err >= -1e-9 && err <= bp.delta + 1e-9, "err {} delta {}", err, bp.delta);
        }

        #[test]
        fn breakpoint_count_is_minimal(x_max in 17.0f64..1e6, delta_max in 0.05f64..5.0) {
            let bp = breakpoints_for(delta_max, x_max).unwrap();
            prop_assert!(reach(delta_max, bp.b - 1) < x_max);
            prop_assert!(bp.xs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[cfg(feature = "highs")]
    mod solved {
        use super::*;
        use crate::instance::{OrDaySlot, RawSurgery, SurgeryType};
        use crate::milp::FEASIBILITY_TOL;

        fn one(mean: f64, var: f64) -> Instance {
            let mut t = SurgeryType::deterministic("T", mean);
            t.normal.sigma2 = var;
            Instance::assemble(
                vec![t],
                vec![RawSurgery::new("s", "T", 0, None)],
                vec![OrDaySlot::new("OR1", 0, 510.0)],
                0.15,
            )
            .unwrap()
        }

        #[test]
        fn deterministic_surgery_fits() {
            let i = one(480.0, 0.0);
            let bp = breakpoints_for(1.0, 432_280.0).unwrap();
            let s = solve(&i, &bp, &SolveOptions::default()).unwrap();
            assert_eq!(s.assignments.len(), 1);
        }

        #[test]
        fn variable_surgery_rejected() {
            let i = one(480.0, 900.0);
            let bp = breakpoints_for(1.0, 432_280.0).unwrap();
            let s = solve(&i, &bp, &SolveOptions::default()).unwrap();
            assert!(s.assignments.is_empty());
        }

        #[test]
        fn undersized_breakpoints_are_an_error() {
            let i = one(100.0, 900.0);
            let bp = breakpoints_for(1.0, 100.0).unwrap();
            assert!(matches!(build_model(&i, &bp), Err(Error::Model(_))));
        }

        #[test]
        fn lambda_consistency_and_conservatism() {
            let types = vec![
                SurgeryType::from_observations("A", vec![100.0, 140.0, 180.0]).unwrap(),
                SurgeryType::from_observations("B", vec![60.0, 90.0]).unwrap(),
                SurgeryType::from_observations("C", vec![200.0, 260.0, 230.0, 300.0]).unwrap(),
            ];
            let raw = (0..9)
                .map(|k| RawSurgery::new(format!("s{k}"), ["A", "B", "C"][k % 3], 0, None))
                .collect();
            let slots = vec![OrDaySlot::new("OR1", 0, 510.0), OrDaySlot::new("OR2", 0, 510.0)];
            let i = Instance::assemble(types, raw, slots, 0.15).unwrap();
            let bp = build_breakpoints(&PlfConfig::for_instance(&i, 1.0)).unwrap();
            let (base, plf) = build_model(&i, &bp).unwrap();
            let sol = crate::milp::solve(&base.model, &SolveOptions::default()).unwrap();
            assert!(sol.max_violation <= FEASIBILITY_TOL);
            let schedule = extract_schedule(&base, &sol, &i).unwrap();
            assert!(!schedule.assignments.is_empty());
            assert!(satisfies_exact_normal(&schedule, &i, 1e-6).unwrap());
            for sp in &plf {
                let lam: Vec<f64> = sp.lambda.iter().map(|&l| sol.value(l)).collect();
                let wx: f64 = lam.iter().zip(&bp.xs).map(|(l, x)| l * x).sum();
                let var: f64 = schedule.surgeries_in(sp.slot).map(|s| i.normal(s).sigma2).sum();
                assert!((wx - var).abs() <= 1e-6 * var.max(1.0));
                let support: Vec<usize> = (0..lam.len()).filter(|&k| lam[k] > 1e-9).collect();
                assert!(support.len() <= 2);
                if support.len() == 2 {
                    assert_eq!(support[1], support[0] + 1);
                }
            }
        }
    }
}
