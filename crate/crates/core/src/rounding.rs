//! Turns a relaxed schedule into one whose slots are (almost all) fully
//! used or idle, with a certified cost gap.
//!
//! A relaxed optimum leaves some slots partially used; the true cost charges
//! the full per-slot price for those, so the relaxation undercounts by at
//! most `lambda` per partial slot. Within one receiver, every partially used
//! slot sits on that receiver's activation threshold and therefore delivers
//! rate at (nearly) the same efficiency (rate per unit spend). Re-placing
//! the same spend across those slots at fixed per-slot rates keeps the
//! relaxed cost unchanged and, done densest-first, never loses throughput,
//! so each receiver's partial usage can be compacted into as few slots as
//! possible — emptied slots then cost nothing, and the final cost stays
//! within `partial_slots·lambda` of the relaxed bound.

use serde::Serialize;

use crate::problem::{
    cost_original, cost_relaxed, feasibility_check, phi_to_power, throughput_lb_all, Plan,
    PhiPlan, ProblemInstance, ACTIVE_TOL,
};
use crate::solver::slot_sets;
use crate::PlanError;

/// Certified sandwich around the optimal schedule cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapCertificate {
    /// Relaxed cost of the input plan — a lower bound on the optimum.
    pub relaxed_cost: f64,
    /// True cost of the rounded plan — an achieved upper bound.
    pub rounded_cost: f64,
    /// Partially used slots in the relaxed plan.
    pub partial_slot_count: usize,
    /// `relaxed_cost + partial_slot_count·lambda`; the rounded cost never
    /// exceeds it.
    pub bound: f64,
}

/// Result of comparing two schedules for exchangeability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    /// Which condition failed, with numbers; `None` when equivalent.
    pub witness: Option<String>,
}

/// Checks that two plans are interchangeable: (i) both satisfy every
/// constraint, (ii) they deliver the same per-receiver throughput, and
/// (iii) they have the same relaxed cost (all within 1e-6 relative).
pub fn equivalence_check(a: &Plan, b: &Plan, inst: &ProblemInstance) -> EquivalenceReport {
    for (name, plan) in [("first", a), ("second", b)] {
        let violations = feasibility_check(plan, inst);
        if !violations.is_empty() {
            return EquivalenceReport {
                equivalent: false,
                witness: Some(format!(
                    "{name} plan violates {} constraint(s); first: {:?}",
                    violations.len(),
                    violations[0]
                )),
            };
        }
    }
    let tp_a = throughput_lb_all(a, inst);
    let tp_b = throughput_lb_all(b, inst);
    for n in 0..inst.receivers {
        let scale = tp_a[n].abs().max(tp_b[n].abs()).max(1e-9);
        if (tp_a[n] - tp_b[n]).abs() > 1e-6 * scale {
            return EquivalenceReport {
                equivalent: false,
                witness: Some(format!(
                    "receiver {n} throughput differs: {} vs {}",
                    tp_a[n], tp_b[n]
                )),
            };
        }
    }
    let ca = cost_relaxed(a, inst).expect("validated above");
    let cb = cost_relaxed(b, inst).expect("validated above");
    if (ca - cb).abs() > 1e-6 * ca.abs().max(cb.abs()).max(1e-9) {
        return EquivalenceReport {
            equivalent: false,
            witness: Some(format!("relaxed cost differs: {ca} vs {cb}")),
        };
    }
    EquivalenceReport {
        equivalent: true,
        witness: None,
    }
}

/// Compacts each receiver's threshold slots, one receiver at a time,
/// keeping per-slot rates fixed.
///
/// For receiver `n`, the candidate slots are those currently partially used
/// overall and used by `n`; its spend on them is a budget that is re-placed
/// greedily, densest slot (rate per unit spend) first: fill each candidate
/// up to the room left by the other receivers, stop when the budget runs
/// out, and clear the rest. On an exactly optimal input the candidates all
/// share one efficiency, so the re-placement is throughput-neutral and the
/// order only picks which slots stay on; on a gap-certified input whose
/// efficiencies differ slightly, spending the same budget densest-first can
/// only gain throughput. The room always suffices because the budget never
/// exceeds what the receiver already occupies.
pub fn round_plan(plan: &PhiPlan, inst: &ProblemInstance) -> Result<PhiPlan, PlanError> {
    plan.to_plan(inst).validate(inst.slots, inst.receivers)?;
    let mut frac = plan.frac.clone();
    let mut phi = plan.phi.clone();

    for n in 0..inst.receivers {
        let candidates: Vec<usize> = (0..inst.slots)
            .filter(|&t| {
                let total: f64 = frac[t].iter().sum();
                total > ACTIVE_TOL
                    && total < 1.0 - crate::problem::FEAS_TOL
                    && frac[t][n] > ACTIVE_TOL
            })
            .collect();
        if candidates.len() < 2 {
            continue;
        }
        let rate: Vec<f64> = candidates
            .iter()
            .map(|&t| phi[t][n] / frac[t][n])
            .collect();
        let weight: Vec<f64> = candidates
            .iter()
            .zip(&rate)
            .map(|(&t, &c)| {
                phi_to_power(c * frac[t][n], frac[t][n], inst.gain[t][n], inst.eps[t][n])
                    + inst.lambda
            })
            .collect();
        let mut budget: f64 = candidates
            .iter()
            .zip(&weight)
            .map(|(&t, &w)| w * frac[t][n])
            .sum();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            let density = |i: usize| {
                if weight[i] > 0.0 {
                    rate[i] / weight[i]
                } else {
                    0.0
                }
            };
            density(b).total_cmp(&density(a))
        });

        for i in order {
            let (t, c, w) = (candidates[i], rate[i], weight[i]);
            if budget <= 0.0 || w <= 0.0 {
                frac[t][n] = 0.0;
                phi[t][n] = 0.0;
                continue;
            }
            let others: f64 = frac[t]
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != n)
                .map(|(_, &l)| l)
                .sum();
            let room = (1.0 - others).max(0.0);
            let take = room.min(budget / w);
            frac[t][n] = take;
            phi[t][n] = c * take;
            budget -= w * take;
        }
    }
    Ok(PhiPlan { phi, frac })
}

/// Builds the cost sandwich for a relaxed plan and its rounded companion.
/// Both plans must satisfy the structural plan constraints.
pub fn gap_certificate(
    relaxed: &PhiPlan,
    rounded: &PhiPlan,
    inst: &ProblemInstance,
) -> Result<GapCertificate, PlanError> {
    let relaxed_cost = cost_relaxed(&relaxed.to_plan(inst), inst)?;
    let rounded_cost = cost_original(&rounded.to_plan(inst), inst)?;
    let partial_slot_count = slot_sets(&relaxed.frac).partial.len();
    Ok(GapCertificate {
        relaxed_cost,
        rounded_cost,
        partial_slot_count,
        bound: relaxed_cost + partial_slot_count as f64 * inst.lambda,
    })
}
