//! Exact MILP encoding of a trained ReLU network, one copy per slot.

use super::net::{FeedForwardNet, Layer};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::milp::{Sense, Var};
use crate::scheduler::BaseModel;

pub const GROUP_INPUT: &str = "fnn_input";
pub const GROUP_NEURON: &str = "fnn_neuron";
pub const GROUP_OVERTIME: &str = "fnn_overtime";

/// Interval bounds are widened by this relative amount before use as big-M.
const BOUND_PAD: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronBounds {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct SlotEmbedding {
    pub slot: usize,
    pub expectation: Var,
    pub variance: Var,
    /// Post-activation variables per layer (hidden layers then output).
    pub activations: Vec<Vec<Var>>,
    /// Gate binaries of neurons whose sign is not fixed by the bounds.
    pub gates: Vec<Var>,
    pub bounds: Vec<Vec<NeuronBounds>>,
}

impl SlotEmbedding {
    pub fn output(&self) -> Var {
        self.activations.last().unwrap()[0]
    }
}

/// Fractional-knapsack upper bound on `Σ value` subject to `Σ weight ≤ cap`.
pub fn fractional_knapsack(items: &[(f64, f64)], cap: f64) -> f64 {
    let mut by_ratio: Vec<(f64, f64)> = items.iter().copied().filter(|&(_, v)| v > 0.0).collect();
    // Zero-weight items are free; they sort first.
    by_ratio.sort_by(|a, b| (b.1 * a.0).total_cmp(&(a.1 * b.0)));
    let (mut room, mut total) = (cap, 0.0);
    for (w, v) in by_ratio {
        if w <= room {
            room -= w;
            total += v;
        } else {
            total += v * room / w;
            break;
        }
    }
    total
}

/// Pre-activation bounds of every neuron for inputs in the given box.
pub fn propagate_bounds(layers: &[Layer], e_max: f64, v_max: f64) -> Result<Vec<Vec<NeuronBounds>>> {
    let mut lo = vec![0.0, 0.0];
    let mut hi = vec![e_max, v_max];
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        let mut layer_bounds = Vec::with_capacity(l.outputs);
        for j in 0..l.outputs {
            let (mut zl, mut zh) = (l.biases[j], l.biases[j]);
            for k in 0..l.inputs {
                let w = l.w(j, k);
                if w >= 0.0 {
                    zl += w * lo[k];
                    zh += w * hi[k];
                } else {
                    zl += w * hi[k];
                    zh += w * lo[k];
                }
            }
            if !zl.is_finite() || !zh.is_finite() {
                return Err(Error::Model("network activation bounds are unbounded".into()));
            }
            let pad = BOUND_PAD * (1.0 + zl.abs().max(zh.abs()));
            layer_bounds.push(NeuronBounds { lo: zl - pad, hi: zh + pad });
        }
        lo = layer_bounds.iter().map(|b| b.lo.max(0.0)).collect();
        hi = layer_bounds.iter().map(|b| b.hi.max(0.0)).collect();
        out.push(layer_bounds);
    }
    Ok(out)
}

/// Upper bounds on a slot's summed lognormal mean and variance.
pub fn input_box(instance: &Instance, base: &BaseModel, slot: usize) -> (f64, f64) {
    let cap = instance.slots[slot].capacity;
    let vars = &base.slot_vars[slot];
    let e_items: Vec<(f64, f64)> = vars
        .iter()
        .map(|&(s, _)| (instance.sample_mean(s), instance.lognormal_moments(s).mean))
        .collect();
    let v_items: Vec<(f64, f64)> = vars
        .iter()
        .map(|&(s, _)| (instance.sample_mean(s), instance.lognormal_moments(s).variance))
        .collect();
    (fractional_knapsack(&e_items, cap), fractional_knapsack(&v_items, cap))
}

/// Add `h(E_od, V_od) ≤ C_od` for every slot with candidate surgeries.
pub fn embed(net: &FeedForwardNet, base: &mut BaseModel, instance: &Instance) -> Result<Vec<SlotEmbedding>> {
    net.validate()?;
    let layers = net.folded_layers();
    let mut out = Vec::new();
    for o in 0..instance.slots.len() {
        if base.slot_vars[o].is_empty() {
            continue;
        }
        let (e_max, v_max) = input_box(instance, base, o);
        let bounds = propagate_bounds(&layers, e_max, v_max)?;
        let slot = &instance.slots[o];
        let tag = format!("{}_{}", slot.or_id, slot.day);
        let model = &mut base.model;

        let e = model.add_continuous(format!("E_{tag}"), 0.0, e_max);
        let v = model.add_continuous(format!("V_{tag}"), 0.0, v_max);
        let e_terms = base.slot_vars[o]
            .iter()
            .map(|&(s, x)| (x, -instance.lognormal_moments(s).mean))
            .chain([(e, 1.0)]);
        model.add_constraint(GROUP_INPUT, e_terms, Sense::Eq, 0.0);
        let v_terms = base.slot_vars[o]
            .iter()
            .map(|&(s, x)| (x, -instance.lognormal_moments(s).variance))
            .chain([(v, 1.0)]);
        model.add_constraint(GROUP_INPUT, v_terms, Sense::Eq, 0.0);

        let mut prev = vec![e, v];
        let mut activations = Vec::with_capacity(layers.len());
        let mut gates = Vec::new();
        for (li, layer) in layers.iter().enumerate() {
            let mut cur = Vec::with_capacity(layer.outputs);
            for j in 0..layer.outputs {
                let NeuronBounds { lo, hi } = bounds[li][j];
                let a = model.add_continuous(format!("a_{tag}_{li}_{j}"), 0.0, hi.max(0.0));
                // z − a as a row, i.e. Σ w·prev − a {sense} −b.
                let z_minus_a = || {
                    (0..layer.inputs)
                        .map(|k| (prev[k], layer.w(j, k)))
                        .chain([(a, -1.0)])
                        .collect::<Vec<_>>()
                };
                let b = layer.biases[j];
                if hi <= 0.0 {
                    model.fix(a, 0.0);
                } else if lo >= 0.0 {
                    model.add_constraint(GROUP_NEURON, z_minus_a(), Sense::Eq, -b);
                } else {
                    let g = model.add_binary(format!("g_{tag}_{li}_{j}"));
                    // a ≥ z
                    model.add_constraint(GROUP_NEURON, z_minus_a(), Sense::Le, -b);
                    // a ≤ z − lo·(1 − g)
                    let mut t = z_minus_a();
                    t.push((g, lo));
                    model.add_constraint(GROUP_NEURON, t, Sense::Ge, lo - b);
                    // a ≤ hi·g
                    model.add_constraint(GROUP_NEURON, [(a, 1.0), (g, -hi)], Sense::Le, 0.0);
                    gates.push(g);
                }
                cur.push(a);
            }
            activations.push(cur.clone());
            prev = cur;
        }
        model.add_constraint(GROUP_OVERTIME, [(prev[0], 1.0)], Sense::Le, slot.capacity);
        out.push(SlotEmbedding {
            slot: o,
            expectation: e,
            variance: v,
            activations,
            gates,
            bounds,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knapsack_bound() {
        assert_eq!(fractional_knapsack(&[], 10.0), 0.0);
        // Ratios 3, 2, 1: take the first two whole and half of the third.
        let items = [(2.0, 4.0), (1.0, 3.0), (4.0, 4.0)];
        assert!((fractional_knapsack(&items, 5.0) - 9.0).abs() < 1e-12);
        assert!((fractional_knapsack(&[(0.0, 5.0), (10.0, 10.0)], 5.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn interval_bounds_contain_samples() {
        let mut l0 = Layer::zeros(2, 2);
        l0.weights = vec![1.0, -0.01, -0.5, 0.02];
        l0.biases = vec![-100.0, 10.0];
        let mut l1 = Layer::zeros(2, 1);
        l1.weights = vec![0.7, -1.3];
        l1.biases = vec![5.0];
        let layers = vec![l0, l1];
        let b = propagate_bounds(&layers, 500.0, 20000.0).unwrap();
        for i in 0..=20 {
            for k in 0..=20 {
                let (e, v) = (25.0 * i as f64, 1000.0 * k as f64);
                let z0 = [e - 0.01 * v - 100.0, -0.5 * e + 0.02 * v + 10.0];
                let a0 = [z0[0].max(0.0), z0[1].max(0.0)];
                let z1 = 0.7 * a0[0] - 1.3 * a0[1] + 5.0;
                assert!(b[0][0].lo <= z0[0] && z0[0] <= b[0][0].hi);
                assert!(b[0][1].lo <= z0[1] && z0[1] <= b[0][1].hi);
                assert!(b[1][0].lo <= z1 && z1 <= b[1][0].hi);
            }
        }
    }
}
