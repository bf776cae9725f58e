//! Independent cross-checks for the fast solver: a deliberately slow primal
//! method and an exhaustive grid search.
//!
//! Neither shares machinery with the production path. [`reference_solver`]
//! never forms slot thresholds or dual prices — it walks the primal variables
//! directly — and [`grid_oracle`] never touches continuous optimization at
//! all. Agreement between the three is therefore evidence, not a shared bug.

use crate::problem::{cost_original, log2_1p, Plan, PhiPlan, ProblemInstance, ACTIVE_TOL};
use crate::PlanError;
use std::f64::consts::LN_2;

/// Hard size limit for [`reference_solver`]; beyond this the iteration budget
/// stops being a rounding error in anyone's test suite.
const REF_MAX_CELLS: usize = 10_000;
const REF_MAX_ITERS: usize = 60_000;
const REF_MIN_ITERS: usize = 500;
const REF_MAX_SWEEPS: usize = 60;
/// Stop once the best feasible objective has not moved for this many
/// iterations (after the minimum budget).
const REF_STALL_WINDOW: usize = 400;
const REF_STALL_REL: f64 = 1e-11;
/// Below this a fraction is treated as an empty cell when forming rates.
const L_FLOOR: f64 = 1e-14;

/// Slow primal solve of the relaxed problem, used to certify
/// [`solve_multi`](crate::solver::solve_multi) outputs.
///
/// Projected subgradient on `(phi, frac)` directly: steps along the scaled
/// negative gradient with Armijo backtracking, then projects back onto the
/// feasible set — the per-slot bandwidth simplex, the per-cell
/// `0 ≤ phi ≤ rate_cap·l` cone, and the per-receiver demand totals — so every
/// iterate is feasible and the objective is the plain relaxed cost. The
/// projection runs Dykstra's alternating corrections between those three
/// sets, each of which projects in closed form. Per-coordinate scaling keeps
/// the six-decade gain spread from freezing half the variables. Descent is
/// monotone; the method stops when the objective stalls.
pub fn reference_solver(inst: &ProblemInstance) -> Result<PhiPlan, PlanError> {
    inst.validate()?;
    let slots = inst.slots;
    let rx = inst.receivers;
    if slots * rx > REF_MAX_CELLS {
        return Err(PlanError::BadInstance(format!(
            "reference solver is limited to {REF_MAX_CELLS} slot·receiver cells, got {}",
            slots * rx
        )));
    }
    for n in 0..rx {
        let max_del = inst.max_deliverable(n);
        if inst.demand[n] > max_del * (1.0 + 1e-12) {
            return Err(PlanError::Infeasible {
                receiver: n,
                demand: inst.demand[n],
                max_deliverable: max_del,
            });
        }
    }
    if inst.demand.iter().all(|&s| s <= 0.0) {
        return Ok(PhiPlan::zeros(slots, rx));
    }

    // Diagonal metric: each weight is that coordinate's gradient scale over
    // its travel range, so a unit step moves every coordinate a comparable
    // fraction of its box. phi spans [0, rate_cap·l] with slopes up to the
    // cap slope; l spans [0, 1] with slopes up to cap power plus the full
    // throughput sensitivity.
    let mut cap_rate = vec![vec![0.0f64; rx]; slots];
    let mut d_phi = vec![vec![0.0f64; rx]; slots];
    let mut d_l = vec![vec![0.0f64; rx]; slots];
    for t in 0..slots {
        for n in 0..rx {
            let g = inst.gain[t][n];
            let cbar = inst.rate_cap[t][n].max(0.0);
            let mu_bar = LN_2 * (1.0 / g + inst.power_cap[t]);
            cap_rate[t][n] = cbar;
            d_phi[t][n] = mu_bar / cbar.max(1e-2);
            d_l[t][n] = inst.power_cap[t] + inst.lambda + cbar * mu_bar;
        }
    }

    let proj = Projector {
        inst,
        cap_rate: &cap_rate,
        d_phi: &d_phi,
        d_l: &d_l,
    };

    let mut phi = vec![vec![0.0f64; rx]; slots];
    let mut frac = vec![vec![0.0f64; rx]; slots];
    initialize(inst, &cap_rate, &mut phi, &mut frac);
    let mut deficits = vec![0.0f64; rx];
    proj.project(&mut phi, &mut frac, &mut deficits);

    let mut grad_phi = vec![vec![0.0f64; rx]; slots];
    let mut grad_l = vec![vec![0.0f64; rx]; slots];
    let mut scratch_gp = vec![vec![0.0f64; rx]; slots];
    let mut scratch_gl = vec![vec![0.0f64; rx]; slots];

    let mut obj = relaxed_gradient(inst, &cap_rate, &phi, &frac, &mut grad_phi, &mut grad_l);
    let mut best: Option<(PhiPlan, f64)> = None;
    if deficits.iter().all(|&d| d <= 0.0) {
        best = Some((
            PhiPlan {
                phi: phi.clone(),
                frac: frac.clone(),
            },
            obj,
        ));
    }
    let mut alpha = 1.0f64;
    let mut last_improve = 0usize;
    let mut iterations = 0usize;

    for iter in 0..REF_MAX_ITERS {
        iterations = iter + 1;
        let mut accepted = false;
        for _ in 0..50 {
            let mut trial_phi = phi.clone();
            let mut trial_frac = frac.clone();
            for t in 0..slots {
                for n in 0..rx {
                    trial_phi[t][n] -= alpha * grad_phi[t][n] / d_phi[t][n];
                    trial_frac[t][n] -= alpha * grad_l[t][n] / d_l[t][n];
                }
            }
            let mut trial_deficits = vec![0.0f64; rx];
            proj.project(&mut trial_phi, &mut trial_frac, &mut trial_deficits);
            let trial_obj = relaxed_gradient(
                inst,
                &cap_rate,
                &trial_phi,
                &trial_frac,
                &mut scratch_gp,
                &mut scratch_gl,
            );
            // Sufficient decrease against the move actually taken.
            let mut predicted = 0.0;
            for t in 0..slots {
                for n in 0..rx {
                    predicted += grad_phi[t][n] * (phi[t][n] - trial_phi[t][n]);
                    predicted += grad_l[t][n] * (frac[t][n] - trial_frac[t][n]);
                }
            }
            if trial_obj <= obj - 1e-4 * predicted.max(0.0) + 1e-15 * obj.abs() {
                phi = trial_phi;
                frac = trial_frac;
                deficits = trial_deficits;
                accepted = true;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-16 {
                break;
            }
        }
        if !accepted {
            break;
        }
        alpha = (alpha * 1.4).min(16.0);
        obj = relaxed_gradient(inst, &cap_rate, &phi, &frac, &mut grad_phi, &mut grad_l);
        if deficits.iter().all(|&d| d <= 0.0) {
            let improved = match &best {
                Some((_, c)) => obj < c - REF_STALL_REL * c.abs().max(1.0),
                None => true,
            };
            if improved {
                best = Some((
                    PhiPlan {
                        phi: phi.clone(),
                        frac: frac.clone(),
                    },
                    obj,
                ));
                last_improve = iter;
            }
        }
        if iter >= REF_MIN_ITERS && iter - last_improve > REF_STALL_WINDOW {
            break;
        }
    }

    match best {
        Some((plan, _)) => Ok(plan),
        None => Err(PlanError::NoConvergence {
            iterations,
            residual: deficits.iter().fold(0.0, |a, &b| a.max(b)),
        }),
    }
}

/// Starts every receiver on a uniform spread sized to its demand, leaving a
/// little bandwidth headroom so the first projection has room to work.
fn initialize(
    inst: &ProblemInstance,
    cap_rate: &[Vec<f64>],
    phi: &mut [Vec<f64>],
    frac: &mut [Vec<f64>],
) {
    let slots = inst.slots;
    let rx = inst.receivers;
    for n in 0..rx {
        let cap_total: f64 = (0..slots).map(|t| cap_rate[t][n]).sum();
        if cap_total <= 0.0 || inst.demand[n] <= 0.0 {
            continue;
        }
        let need = (inst.demand[n] / cap_total).min(1.0);
        for t in 0..slots {
            if cap_rate[t][n] > 0.0 {
                frac[t][n] = (1.25 * need).min(1.0);
            }
        }
    }
    for t in 0..slots {
        let total: f64 = frac[t].iter().sum();
        if total > 0.95 {
            let scale = 0.95 / total;
            for v in frac[t].iter_mut() {
                *v *= scale;
            }
        }
    }
    for n in 0..rx {
        let reachable: f64 = (0..slots).map(|t| cap_rate[t][n] * frac[t][n]).sum();
        if reachable <= 0.0 {
            continue;
        }
        let scale = (inst.demand[n] / reachable).min(1.0);
        for t in 0..slots {
            phi[t][n] = cap_rate[t][n] * frac[t][n] * scale;
        }
    }
}

/// Objective value and gradient of the relaxed cost.
fn relaxed_gradient(
    inst: &ProblemInstance,
    cap_rate: &[Vec<f64>],
    phi: &[Vec<f64>],
    frac: &[Vec<f64>],
    grad_phi: &mut [Vec<f64>],
    grad_l: &mut [Vec<f64>],
) -> f64 {
    let slots = inst.slots;
    let rx = inst.receivers;
    let lambda = inst.lambda;
    let mut obj = 0.0;
    for t in 0..slots {
        for n in 0..rx {
            let g = inst.gain[t][n];
            let eps = inst.eps[t][n];
            let l = frac[t][n];
            if l > L_FLOOR {
                let c = (phi[t][n] / l).clamp(0.0, cap_rate[t][n]);
                let e2 = (c + eps).exp2();
                let p = (e2 - 1.0) / g;
                let dphi = LN_2 * e2 / g;
                obj += (p + lambda) * l;
                grad_phi[t][n] = dphi;
                grad_l[t][n] = p - c * dphi + lambda;
            } else {
                let e2 = eps.exp2();
                grad_phi[t][n] = LN_2 * e2 / g;
                grad_l[t][n] = (e2 - 1.0) / g + lambda;
            }
        }
    }
    obj
}

/// Exact metric projection onto the feasible set via Dykstra's alternating
/// corrections between three simple sets: the demand hyperplanes (phi only),
/// the per-cell cones `0 ≤ phi ≤ rate_cap·l`, and the per-slot simplexes
/// (l only). Each of those projects in closed form; the corrections make
/// their alternation converge to the projection onto the intersection.
struct Projector<'a> {
    inst: &'a ProblemInstance,
    cap_rate: &'a [Vec<f64>],
    d_phi: &'a [Vec<f64>],
    d_l: &'a [Vec<f64>],
}

impl Projector<'_> {
    fn project(&self, phi: &mut [Vec<f64>], frac: &mut [Vec<f64>], deficits: &mut [f64]) {
        let slots = self.inst.slots;
        let rx = self.inst.receivers;
        let mut corr_dem = vec![vec![0.0f64; rx]; slots];
        let mut corr_cone_phi = vec![vec![0.0f64; rx]; slots];
        let mut corr_cone_l = vec![vec![0.0f64; rx]; slots];
        let mut corr_simp = vec![vec![0.0f64; rx]; slots];
        let inv_weight: Vec<Vec<f64>> = (0..slots)
            .map(|t| (0..rx).map(|n| 1.0 / self.d_phi[t][n]).collect())
            .collect();
        for _ in 0..REF_MAX_SWEEPS {
            // Demand hyperplanes: shift each receiver's phi column by the
            // metric-weighted correction that restores its total.
            for n in 0..rx {
                let target = self.inst.demand[n];
                let mut total = 0.0;
                let mut weight = 0.0;
                for t in 0..slots {
                    phi[t][n] += corr_dem[t][n];
                    total += phi[t][n];
                    weight += inv_weight[t][n];
                }
                let shift = (target - total) / weight;
                for t in 0..slots {
                    let before = phi[t][n];
                    phi[t][n] += shift * inv_weight[t][n];
                    corr_dem[t][n] = before - phi[t][n];
                }
            }
            // Per-cell cones.
            for t in 0..slots {
                for n in 0..rx {
                    let a = phi[t][n] + corr_cone_phi[t][n];
                    let b = frac[t][n] + corr_cone_l[t][n];
                    let (pa, pb) = project_cone(
                        a,
                        b,
                        self.cap_rate[t][n],
                        self.d_phi[t][n],
                        self.d_l[t][n],
                    );
                    corr_cone_phi[t][n] = a - pa;
                    corr_cone_l[t][n] = b - pb;
                    phi[t][n] = pa;
                    frac[t][n] = pb;
                }
            }
            // Per-slot simplexes.
            for t in 0..slots {
                for n in 0..rx {
                    frac[t][n] += corr_simp[t][n];
                }
                let before = frac[t].to_vec();
                project_capped_simplex(&mut frac[t], &self.d_l[t]);
                for n in 0..rx {
                    corr_simp[t][n] = before[n] - frac[t][n];
                }
            }
            // Converged when every set is satisfied at the current point.
            let mut worst = 0.0f64;
            for n in 0..rx {
                let total: f64 = (0..slots).map(|t| phi[t][n]).sum();
                worst = worst
                    .max((self.inst.demand[n] - total).abs() / self.inst.demand[n].max(1e-12));
            }
            for t in 0..slots {
                for n in 0..rx {
                    let over = phi[t][n] - self.cap_rate[t][n] * frac[t][n];
                    worst = worst.max(over / self.inst.demand[n].max(1e-12));
                }
            }
            if worst < 1e-12 {
                break;
            }
        }
        // Exactness polish: land inside every constraint, then meet demand
        // through remaining headroom.
        for t in 0..slots {
            project_capped_simplex(&mut frac[t], &self.d_l[t]);
        }
        for n in 0..rx {
            let target = self.inst.demand[n] * (1.0 + 1e-12);
            for t in 0..slots {
                if frac[t][n] <= ACTIVE_TOL {
                    frac[t][n] = 0.0;
                    phi[t][n] = 0.0;
                } else {
                    phi[t][n] = phi[t][n].clamp(0.0, self.cap_rate[t][n] * frac[t][n]);
                }
            }
            let mut cap_total: f64 =
                (0..slots).map(|t| self.cap_rate[t][n] * frac[t][n]).sum();
            if cap_total < target {
                let mut shortfall = target - cap_total;
                let mut order: Vec<usize> =
                    (0..slots).filter(|&t| self.cap_rate[t][n] > 0.0).collect();
                order.sort_by(|&a, &b| self.cap_rate[b][n].total_cmp(&self.cap_rate[a][n]));
                for t in order {
                    let room = 1.0 - frac[t].iter().sum::<f64>();
                    if room <= 0.0 {
                        continue;
                    }
                    let grow = (shortfall / self.cap_rate[t][n]).min(room);
                    frac[t][n] += grow;
                    shortfall -= self.cap_rate[t][n] * grow;
                    if shortfall <= 0.0 {
                        break;
                    }
                }
                cap_total = (0..slots).map(|t| self.cap_rate[t][n] * frac[t][n]).sum();
            }
            if cap_total < target {
                for t in 0..slots {
                    phi[t][n] = self.cap_rate[t][n] * frac[t][n];
                }
                deficits[n] = target - cap_total;
                continue;
            }
            shift_to_total(n, target, self.cap_rate, frac, self.d_phi, phi);
            deficits[n] = 0.0;
        }
    }
}

/// Metric projection of one `(phi, l)` pair onto `{0 ≤ phi ≤ cap_rate·l, l ≥ 0}`.
fn project_cone(a: f64, b: f64, cap_rate: f64, d_phi: f64, d_l: f64) -> (f64, f64) {
    if cap_rate <= 0.0 {
        return (0.0, b.max(0.0));
    }
    let phi = a.max(0.0);
    let l = b.max(0.0);
    if phi <= cap_rate * l {
        return (phi, l);
    }
    // Inside the violating wedge: project onto the ray phi = cap_rate·l in
    // the scaled coordinates (u, v) = (√d_phi·phi, √d_l·l).
    let su = d_phi.sqrt();
    let sv = d_l.sqrt();
    let k = cap_rate * su / sv;
    let u = su * a;
    let v = sv * b;
    let ray = (k * u + v) / (k * k + 1.0);
    if ray <= 0.0 {
        return (0.0, 0.0);
    }
    ((k * ray / su).max(0.0), (ray / sv).max(0.0))
}

/// Metric projection of one slot's fractions onto `{l ≥ 0, Σl ≤ 1}`.
fn project_capped_simplex(y: &mut [f64], d: &[f64]) {
    for v in y.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = y.iter().sum();
    if total <= 1.0 {
        return;
    }
    // Bisect the multiplier so the clipped shifts sum to one.
    let mut lo = 0.0f64;
    let mut hi = y
        .iter()
        .zip(d)
        .map(|(&v, &w)| v * w)
        .fold(0.0f64, |a, b| a.max(b));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = y
            .iter()
            .zip(d)
            .map(|(&v, &w)| (v - mid / w).max(0.0))
            .sum();
        if s > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    let theta = hi;
    for (v, &w) in y.iter_mut().zip(d) {
        *v = (*v - theta / w).max(0.0);
    }
}

/// Shifts one receiver's phi column by a metric-weighted offset, clamped to
/// the per-cell caps, so its total meets `target`. Assumes the caps leave
/// enough headroom; takes the upper bisection branch so the result never
/// lands short.
fn shift_to_total(
    n: usize,
    target: f64,
    cap_rate: &[Vec<f64>],
    frac: &[Vec<f64>],
    d_phi: &[Vec<f64>],
    phi: &mut [Vec<f64>],
) {
    let slots = frac.len();
    let total: f64 = (0..slots).map(|t| phi[t][n]).sum();
    if total >= target {
        let mut lo = 0.0f64;
        let mut hi = (0..slots)
            .map(|t| phi[t][n] * d_phi[t][n])
            .fold(0.0f64, |a, b| a.max(b));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = (0..slots)
                .map(|t| (phi[t][n] - mid / d_phi[t][n]).max(0.0))
                .sum();
            if s > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        for t in 0..slots {
            phi[t][n] = (phi[t][n] - lo / d_phi[t][n]).max(0.0);
        }
    } else {
        let mut lo = 0.0f64;
        let mut hi = (0..slots)
            .map(|t| (cap_rate[t][n] * frac[t][n] - phi[t][n]).max(0.0) * d_phi[t][n])
            .fold(0.0f64, |a, b| a.max(b));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = (0..slots)
                .map(|t| (phi[t][n] + mid / d_phi[t][n]).min(cap_rate[t][n] * frac[t][n]))
                .sum();
            if s < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        for t in 0..slots {
            phi[t][n] = (phi[t][n] + hi / d_phi[t][n]).min(cap_rate[t][n] * frac[t][n]);
        }
    }
}

/// Resolution of the exhaustive search: fraction step and the number of
/// log-spaced power levels per slot (spanning four decades up to the cap).
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub l_step: f64,
    pub p_points: usize,
    pub p_log: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            l_step: 1e-2,
            p_points: 40,
            p_log: true,
        }
    }
}

/// One discrete way to run a (slot, receiver) cell.
#[derive(Debug, Clone, Copy)]
struct SlotChoice {
    l: f64,
    p: f64,
    /// Throughput contribution `rate·l`.
    contrib: f64,
    cost: f64,
}

/// Choices sorted by contribution with suffix minima, so "cheapest choice
/// delivering at least `need`" is a binary search.
struct ChoiceIndex {
    choices: Vec<SlotChoice>,
    suffix_min: Vec<(f64, usize)>,
}

impl ChoiceIndex {
    fn build(mut choices: Vec<SlotChoice>) -> Self {
        choices.sort_by(|a, b| a.contrib.total_cmp(&b.contrib));
        let mut suffix_min = vec![(f64::INFINITY, usize::MAX); choices.len()];
        let mut best = (f64::INFINITY, usize::MAX);
        for i in (0..choices.len()).rev() {
            if choices[i].cost < best.0 {
                best = (choices[i].cost, i);
            }
            suffix_min[i] = best;
        }
        Self {
            choices,
            suffix_min,
        }
    }

    fn cheapest_meeting(&self, need: f64) -> Option<(f64, SlotChoice)> {
        let floor = need - 1e-12 * need.abs();
        let i = self.choices.partition_point(|c| c.contrib < floor);
        if i >= self.choices.len() {
            return None;
        }
        let (cost, idx) = self.suffix_min[i];
        Some((cost, self.choices[idx]))
    }
}

fn power_grid(p_cap: f64, spec: &GridSpec) -> Vec<f64> {
    let m = spec.p_points;
    (0..m)
        .map(|j| {
            if spec.p_log {
                p_cap * 10f64.powf(-4.0 * (1.0 - j as f64 / (m - 1) as f64))
            } else {
                p_cap * (j + 1) as f64 / m as f64
            }
        })
        .collect()
}

/// All discrete choices for one `(slot, receiver)` cell. `with_lambda` bakes
/// the activation price into active choices (valid when no one else shares
/// the slot).
fn cell_choices(
    inst: &ProblemInstance,
    t: usize,
    n: usize,
    spec: &GridSpec,
    with_lambda: bool,
) -> Vec<SlotChoice> {
    let levels = (1.0 / spec.l_step).round() as usize;
    let g = inst.gain[t][n];
    let eps = inst.eps[t][n];
    let powers = power_grid(inst.power_cap[t], spec);
    let mut out = vec![SlotChoice {
        l: 0.0,
        p: 0.0,
        contrib: 0.0,
        cost: 0.0,
    }];
    for i in 1..=levels {
        let l = (i as f64 * spec.l_step).min(1.0);
        for &p in &powers {
            let rate = log2_1p(p * g) - eps;
            if rate <= 1e-15 {
                continue;
            }
            out.push(SlotChoice {
                l,
                p,
                contrib: rate * l,
                cost: p * l + if with_lambda { inst.lambda } else { 0.0 },
            });
        }
    }
    out
}

/// Exhaustive search over the discretized feasible set, on/off patterns
/// included. The returned cost is a certified upper bound on the true optimum
/// and tightens as the grid refines. Only desk-sized instances are accepted:
/// one receiver up to three slots, two receivers up to two.
pub fn grid_oracle(inst: &ProblemInstance, spec: &GridSpec) -> Result<(Plan, f64), PlanError> {
    inst.validate()?;
    if !(spec.l_step > 0.0 && spec.l_step <= 0.5) || spec.p_points < 2 {
        return Err(PlanError::Config(format!(
            "grid spec needs l_step in (0, 0.5] and at least two power points, got {spec:?}"
        )));
    }
    let ok = match (inst.receivers, inst.slots) {
        (1, t) => t <= 3,
        (2, t) => t <= 2,
        _ => false,
    };
    if !ok {
        return Err(PlanError::BadInstance(format!(
            "grid oracle handles one receiver up to T=3 or two receivers up to T=2, got T={} N={}",
            inst.slots, inst.receivers
        )));
    }
    if inst.demand.iter().all(|&s| s <= 0.0) {
        let plan = Plan::zeros(inst.slots, inst.receivers);
        return Ok((plan, 0.0));
    }
    let (plan, cost) = if inst.receivers == 1 {
        grid_single(inst, spec)?
    } else {
        grid_pair(inst, spec)?
    };
    debug_assert!({
        let check = cost_original(&plan, inst).expect("grid plan must be well-formed");
        (check - cost).abs() <= 1e-9 * cost.max(1.0)
    });
    Ok((plan, cost))
}

fn infeasible_grid(inst: &ProblemInstance, n: usize) -> PlanError {
    PlanError::Infeasible {
        receiver: n,
        demand: inst.demand[n],
        max_deliverable: inst.max_deliverable(n),
    }
}

fn grid_single(inst: &ProblemInstance, spec: &GridSpec) -> Result<(Plan, f64), PlanError> {
    let s = inst.demand[0];
    let choices: Vec<Vec<SlotChoice>> = (0..inst.slots)
        .map(|t| cell_choices(inst, t, 0, spec, true))
        .collect();
    let picked: Vec<SlotChoice> = match inst.slots {
        1 => {
            let index = ChoiceIndex::build(choices[0].clone());
            let (_, c) = index.cheapest_meeting(s).ok_or_else(|| infeasible_grid(inst, 0))?;
            vec![c]
        }
        2 => {
            let index = ChoiceIndex::build(choices[1].clone());
            let mut best: Option<(f64, SlotChoice, SlotChoice)> = None;
            for &c0 in &choices[0] {
                if let Some((c1_cost, c1)) = index.cheapest_meeting(s - c0.contrib) {
                    let total = c0.cost + c1_cost;
                    if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                        best = Some((total, c0, c1));
                    }
                }
            }
            let (_, c0, c1) = best.ok_or_else(|| infeasible_grid(inst, 0))?;
            vec![c0, c1]
        }
        3 => grid_single_dp(inst, &choices)?,
        _ => unreachable!("size was checked on entry"),
    };
    let mut plan = Plan::zeros(inst.slots, 1);
    for (t, c) in picked.iter().enumerate() {
        plan.frac[t][0] = c.l;
        plan.power[t][0] = c.p;
    }
    let cost = cost_original(&plan, inst)?;
    Ok((plan, cost))
}

/// Three-slot single-receiver case: dynamic program over certified demand
/// levels. Contributions are floored onto the level grid, so any plan the DP
/// accepts meets the true constraint exactly; the flooring only costs a
/// little optimality, never feasibility.
fn grid_single_dp(
    inst: &ProblemInstance,
    choices: &[Vec<SlotChoice>],
) -> Result<Vec<SlotChoice>, PlanError> {
    const LEVELS: usize = 4096;
    let s = inst.demand[0];
    let mut cost = vec![f64::INFINITY; LEVELS + 1];
    cost[0] = 0.0;
    let mut parent: Vec<Vec<(u16, u16)>> = Vec::with_capacity(inst.slots);
    for slot_choices in choices {
        let steps: Vec<usize> = slot_choices
            .iter()
            .map(|c| ((c.contrib * LEVELS as f64 / s).floor() as usize).min(LEVELS))
            .collect();
        let mut next = vec![f64::INFINITY; LEVELS + 1];
        let mut par = vec![(u16::MAX, u16::MAX); LEVELS + 1];
        for lvl in 0..=LEVELS {
            if !cost[lvl].is_finite() {
                continue;
            }
            for (ci, c) in slot_choices.iter().enumerate() {
                let to = (lvl + steps[ci]).min(LEVELS);
                let total = cost[lvl] + c.cost;
                if total < next[to] {
                    next[to] = total;
                    par[to] = (lvl as u16, ci as u16);
                }
            }
        }
        cost = next;
        parent.push(par);
    }
    if !cost[LEVELS].is_finite() {
        return Err(infeasible_grid(inst, 0));
    }
    let mut picked = vec![choices[0][0]; inst.slots];
    let mut lvl = LEVELS;
    for t in (0..inst.slots).rev() {
        let (prev, ci) = parent[t][lvl];
        picked[t] = choices[t][ci as usize];
        lvl = prev as usize;
    }
    Ok(picked)
}

/// Two receivers, up to two slots: per-receiver tables of the cheapest power
/// assignment for every fraction profile, then a join over all profile pairs
/// that fit side by side, charging activation per slot actually used.
fn grid_pair(inst: &ProblemInstance, spec: &GridSpec) -> Result<(Plan, f64), PlanError> {
    let levels = (1.0 / spec.l_step).round() as usize;
    let slots = inst.slots;
    // cell[n] maps a fraction profile (one level index per slot) to the
    // cheapest feasible powers for receiver n alone, activation excluded.
    let mut table: Vec<Vec<(f64, Vec<SlotChoice>)>> = Vec::with_capacity(2);
    for n in 0..2 {
        let per_level: Vec<Vec<Vec<SlotChoice>>> = (0..slots)
            .map(|t| {
                let all = cell_choices(inst, t, n, spec, false);
                (0..=levels)
                    .map(|i| {
                        let l = i as f64 * spec.l_step;
                        all.iter()
                            .filter(|c| (c.l - l).abs() < 0.5 * spec.l_step)
                            .copied()
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let s = inst.demand[n];
        let profiles = if slots == 1 { levels + 1 } else { (levels + 1) * (levels + 1) };
        let mut rows = vec![(f64::INFINITY, Vec::new()); profiles];
        if slots == 1 {
            for (i, row) in rows.iter_mut().enumerate() {
                let index = ChoiceIndex::build(per_level[0][i].clone());
                if let Some((c, choice)) = index.cheapest_meeting(s) {
                    *row = (c, vec![choice]);
                }
            }
        } else {
            let second: Vec<ChoiceIndex> = (0..=levels)
                .map(|i| ChoiceIndex::build(per_level[1][i].clone()))
                .collect();
            for i0 in 0..=levels {
                for (i1, index) in second.iter().enumerate() {
                    let mut best: Option<(f64, SlotChoice, SlotChoice)> = None;
                    for &c0 in &per_level[0][i0] {
                        if let Some((c1_cost, c1)) = index.cheapest_meeting(s - c0.contrib) {
                            let total = c0.cost + c1_cost;
                            if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                                best = Some((total, c0, c1));
                            }
                        }
                    }
                    if let Some((c, c0, c1)) = best {
                        rows[i0 * (levels + 1) + i1] = (c, vec![c0, c1]);
                    }
                }
            }
        }
        table.push(rows);
    }

    let profile_levels = |idx: usize| -> (usize, usize) {
        if slots == 1 {
            (idx, 0)
        } else {
            (idx / (levels + 1), idx % (levels + 1))
        }
    };
    let mut best: Option<(f64, usize, usize)> = None;
    for (ia, (ca, _)) in table[0].iter().enumerate() {
        if !ca.is_finite() {
            continue;
        }
        let (a0, a1) = profile_levels(ia);
        for (ib, (cb, _)) in table[1].iter().enumerate() {
            if !cb.is_finite() {
                continue;
            }
            let (b0, b1) = profile_levels(ib);
            if a0 + b0 > levels || (slots == 2 && a1 + b1 > levels) {
                continue;
            }
            let mut active = if a0 + b0 > 0 { 1.0 } else { 0.0 };
            if slots == 2 && a1 + b1 > 0 {
                active += 1.0;
            }
            let total = ca + cb + inst.lambda * active;
            if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                best = Some((total, ia, ib));
            }
        }
    }
    let (_, ia, ib) = best.ok_or_else(|| {
        let n = if table[0].iter().all(|(c, _)| !c.is_finite()) {
            0
        } else {
            1
        };
        infeasible_grid(inst, n)
    })?;
    let mut plan = Plan::zeros(slots, 2);
    for (n, idx) in [(0usize, ia), (1usize, ib)] {
        for (t, choice) in table[n][idx].1.iter().enumerate() {
            plan.frac[t][n] = choice.l;
            plan.power[t][n] = choice.p;
        }
    }
    let cost = cost_original(&plan, inst)?;
    Ok((plan, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{cost_relaxed, feasibility_check, throughput_lb};
    use crate::rounding::round_plan;
    use crate::solver::{solve_multi, SolveConfig};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::LN_2;

    fn relaxed_cost_of(plan: &PhiPlan, inst: &ProblemInstance) -> f64 {
        cost_relaxed(&plan.to_plan(inst), inst).unwrap()
    }

    // One slot, gain 1, eps 2 bits, cap 7 mW: the efficiency-optimal rate
    // exceeds the 1-bit cap, so the true optimum runs the slot at the cap
    // over exactly the demanded fraction. Both the fraction (0.6) and the
    // cap power sit on grid points, so the search lands on the exact value.
    #[test]
    fn grid_matches_analytic_single_slot_optimum() {
        let inst = ProblemInstance::new(
            vec![vec![1.0]],
            vec![vec![2.0]],
            vec![7.0],
            vec![0.6],
            0.5,
            1.0,
        )
        .unwrap();
        let (plan, cost) = grid_oracle(&inst, &GridSpec::default()).unwrap();
        assert!((cost - 4.7).abs() < 1e-8, "cost {cost}");
        assert!((plan.power[0][0] - 7.0).abs() < 1e-12);
        assert!((plan.frac[0][0] - 0.6).abs() < 1e-9);
        assert!(feasibility_check(&plan, &inst).is_empty());
    }

    #[test]
    fn grid_zero_demand_costs_nothing() {
        let inst = ProblemInstance::new(
            vec![vec![1.0], vec![2.0]],
            vec![vec![0.0], vec![0.0]],
            vec![5.0, 5.0],
            vec![0.0],
            1.0,
            1.0,
        )
        .unwrap();
        let (plan, cost) = grid_oracle(&inst, &GridSpec::default()).unwrap();
        assert_eq!(cost, 0.0);
        assert!(plan.frac.iter().flatten().all(|&l| l == 0.0));
    }

    #[test]
    fn grid_rejects_oversized_instances() {
        let big = ProblemInstance::new(
            vec![vec![1.0, 1.0]; 3],
            vec![vec![0.0, 0.0]; 3],
            vec![5.0; 3],
            vec![0.5, 0.5],
            1.0,
            1.0,
        )
        .unwrap();
        assert!(matches!(
            grid_oracle(&big, &GridSpec::default()),
            Err(PlanError::BadInstance(_))
        ));
        let long = ProblemInstance::new(
            vec![vec![1.0]; 4],
            vec![vec![0.0]; 4],
            vec![5.0; 4],
            vec![0.5],
            1.0,
            1.0,
        )
        .unwrap();
        assert!(matches!(
            grid_oracle(&long, &GridSpec::default()),
            Err(PlanError::BadInstance(_))
        ));
    }

    #[test]
    fn grid_three_slot_dp_plan_is_feasible_and_consistent() {
        let inst = ProblemInstance::new(
            vec![vec![1.0], vec![0.5], vec![2.0]],
            vec![vec![0.3], vec![0.1], vec![0.5]],
            vec![6.0, 6.0, 6.0],
            vec![1.7],
            0.8,
            1.0,
        )
        .unwrap();
        let (plan, cost) = grid_oracle(&inst, &GridSpec::default()).unwrap();
        assert!(feasibility_check(&plan, &inst).is_empty());
        assert!(throughput_lb(&plan, &inst, 0) >= 1.7);
        assert!((cost_original(&plan, &inst).unwrap() - cost).abs() < 1e-9 * cost);
    }

    // Twin identical slots, gain 1, no gap, cap 3, demand 2, lambda 1: the
    // relaxed optimum runs both slots at rate 1/ln2 over ln2 of the band,
    // total cost 2·e·ln2.
    #[test]
    fn reference_matches_twin_slot_closed_form() {
        let inst = ProblemInstance::new(
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
            vec![3.0, 3.0],
            vec![2.0],
            1.0,
            1.0,
        )
        .unwrap();
        let plan = reference_solver(&inst).unwrap();
        let cost = relaxed_cost_of(&plan, &inst);
        let expect = 2.0 * std::f64::consts::E * LN_2;
        assert!(
            (cost - expect).abs() <= 1e-4 * expect,
            "cost {cost} vs {expect}"
        );
        assert!(throughput_lb(&plan.to_plan(&inst), &inst, 0) >= 2.0 * (1.0 - 1e-9));
    }

    // One slot, two receivers each demanding rate 1: they split the band
    // evenly and run at rate 2, power 3 each, plus the slot price.
    #[test]
    fn reference_matches_congested_closed_form() {
        let inst = ProblemInstance::new(
            vec![vec![1.0, 1.0]],
            vec![vec![0.0, 0.0]],
            vec![50.0],
            vec![1.0, 1.0],
            0.1,
            1.0,
        )
        .unwrap();
        let plan = reference_solver(&inst).unwrap();
        let cost = relaxed_cost_of(&plan, &inst);
        assert!((cost - 3.1).abs() <= 1e-4 * 3.1, "cost {cost}");
    }

    #[test]
    fn reference_zero_demand_returns_zero_plan() {
        let inst = ProblemInstance::new(
            vec![vec![1.0, 2.0]],
            vec![vec![0.0, 0.0]],
            vec![5.0],
            vec![0.0, 0.0],
            1.0,
            1.0,
        )
        .unwrap();
        let plan = reference_solver(&inst).unwrap();
        assert!(plan.phi.iter().flatten().all(|&v| v == 0.0));
        assert!(plan.frac.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn reference_rejects_undeliverable_demand() {
        let inst = ProblemInstance::new(
            vec![vec![1.0]],
            vec![vec![0.0]],
            vec![1.0],
            vec![5.0],
            1.0,
            1.0,
        )
        .unwrap();
        assert!(matches!(
            reference_solver(&inst),
            Err(PlanError::Infeasible { receiver: 0, .. })
        ));
    }

    fn random_instance(rng: &mut StdRng, slots: usize, rx: usize) -> ProblemInstance {
        let gain: Vec<Vec<f64>> = (0..slots)
            .map(|_| {
                (0..rx)
                    .map(|_| 10f64.powf(rng.random_range(-9.0..-3.0)))
                    .collect()
            })
            .collect();
        let eps: Vec<Vec<f64>> = (0..slots)
            .map(|_| {
                (0..rx)
                    .map(|_| crate::problem::capacity_gap(rng.random_range(1.0..30.0)))
                    .collect()
            })
            .collect();
        let power_cap: Vec<f64> = (0..slots)
            .map(|_| 10f64.powf(rng.random_range(3.0..6.0)))
            .collect();
        let mut inst = ProblemInstance::new(
            gain,
            eps,
            power_cap,
            vec![0.0; rx],
            10f64.powf(rng.random_range(-1.0..2.0)),
            1.0,
        )
        .unwrap();
        for n in 0..rx {
            let max_del = inst.max_deliverable(n);
            inst.demand[n] = max_del * rng.random_range(0.05..0.5) / rx as f64;
        }
        inst
    }

    #[test]
    fn reference_agrees_with_fast_solver_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(41);
        for trial in 0..5 {
            let slots = rng.random_range(2..7);
            let rx = rng.random_range(1..4);
            let inst = random_instance(&mut rng, slots, rx);
            let fast = solve_multi(&inst, &SolveConfig::default()).unwrap();
            let slow = reference_solver(&inst).unwrap();
            let slow_cost = relaxed_cost_of(&slow, &inst);
            let diff = (fast.relaxed_cost - slow_cost).abs() / fast.relaxed_cost.max(1e-12);
            assert!(
                diff <= 1e-4,
                "trial {trial}: fast {} vs slow {} (rel {diff:.2e})",
                fast.relaxed_cost,
                slow_cost
            );
        }
    }

    // The full chain on a grid-sized instance: relaxed optimum ≤ grid
    // optimum (which is an upper bound on the true integer optimum), and the
    // rounded plan stays within the activation bound plus grid slack.
    #[test]
    fn sandwich_against_grid_on_tiny_instance() {
        let inst = ProblemInstance::new(
            vec![vec![0.8], vec![1.4]],
            vec![vec![0.2], vec![0.4]],
            vec![9.0, 9.0],
            vec![1.2],
            0.7,
            1.0,
        )
        .unwrap();
        let outcome = solve_multi(&inst, &SolveConfig::default()).unwrap();
        let rounded = round_plan(&outcome.plan, &inst).unwrap();
        let rounded_cost = cost_original(&rounded.to_plan(&inst), &inst).unwrap();
        let (_, grid_cost) = grid_oracle(&inst, &GridSpec::default()).unwrap();
        // Resolution slack: one fraction step of cap power per slot, plus the
        // log-grid's ~26% power quantization on the active mass.
        let slack = 0.3 * grid_cost;
        assert!(
            outcome.relaxed_cost <= grid_cost + 1e-9,
            "relaxed {} above grid {}",
            outcome.relaxed_cost,
            grid_cost
        );
        assert!(
            rounded_cost <= grid_cost + inst.lambda * inst.receivers as f64 + slack,
            "rounded {rounded_cost} vs grid {grid_cost}"
        );
    }
}
