//! Threshold-driven solver for the relaxed scheduling problem.
//!
//! The relaxed problem is convex in `(phi, l)` and separable across
//! receivers once the per-slot bandwidth coupling is priced. The key
//! structure: for a fixed throughput multiplier `mu`, each slot is either
//! off, fully used, or sits exactly at an activation threshold where any
//! fraction is equally good. The threshold and the rate used at it follow
//! from the per-slot trade-off function [`theta`], and the whole
//! single-receiver problem collapses to a one-dimensional search over `mu`
//! ([`solve_single`]). Multi-receiver instances add a nonnegative price per
//! slot on bandwidth, adjusted by [`solve_multi`] until every overbooked
//! slot clears.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::problem::{log2_1p, PhiPlan, ProblemInstance};
use crate::PlanError;

/// Relative tolerance for recognizing that `mu` sits on a slot's activation
/// threshold.
pub const TIE_TOL: f64 = 1e-9;

/// Relative tolerance for the branch tests in [`allocate_slot`].
pub const BRANCH_TOL: f64 = 1e-12;

/// Marginal transmit power per unit rate at rate `c`:
/// `d/dc (2^(c+eps)-1)/g = ln2 · 2^(c+eps) / g`.
#[inline]
pub fn power_slope(c: f64, g: f64, eps: f64) -> f64 {
    LN_2 * (c + eps).exp2() / g
}

/// Transmit power needed for rate `c`: `(2^(c+eps)-1)/g`.
#[inline]
pub fn rate_power(c: f64, g: f64, eps: f64) -> f64 {
    ((c + eps).exp2() - 1.0) / g
}

/// Per-slot trade-off between spending bandwidth and spending power:
/// `theta(x) = (2^(x+eps)-1)/g + lambda_eff − x·ln2·2^(x+eps)/g`.
///
/// Its sign answers "is rate `x` too low (positive) or too high (negative)
/// to justify widening the slot rather than pushing power?". Strictly
/// decreasing for `x > 0`, with `theta(0) = (2^eps−1)/g + lambda_eff ≥ 0`.
pub fn theta(x: f64, g: f64, eps: f64, lambda_eff: f64) -> f64 {
    rate_power(x, g, eps) + lambda_eff - x * power_slope(x, g, eps)
}

/// Unique nonnegative root of [`theta`]: the rate a slot runs at when it is
/// exactly worth activating. Returns 0 in the degenerate free-bandwidth
/// case (`eps = 0` and `lambda_eff = 0`).
///
/// Bisection; the root satisfies `|theta| < 1e-10·(lambda_eff + 1/g)`.
pub fn solve_theta_root(g: f64, eps: f64, lambda_eff: f64) -> f64 {
    assert!(g > 0.0, "theta root needs a positive gain");
    assert!(lambda_eff >= 0.0, "negative slot price {lambda_eff}");
    let tol = 1e-10 * (lambda_eff + 1.0 / g);
    if theta(0.0, g, eps, lambda_eff) <= tol {
        return 0.0;
    }
    let mut hi = (2.0 / LN_2).max(log2_1p(lambda_eff * g) - eps + 1.0);
    for _ in 0..64 {
        if theta(hi, g, eps, lambda_eff) < 0.0 {
            break;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if theta(mid, g, eps, lambda_eff) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Rate delivered per unit of total spend (power plus slot price):
/// `(log2(1+p·g) − eps) / (p + lambda)`.
///
/// Every slot sitting on its activation threshold at multiplier `mu` runs
/// at efficiency exactly `1/mu`, whether the threshold is interior or at
/// the power cap.
pub fn generalized_efficiency(p: f64, g: f64, eps: f64, lambda: f64) -> f64 {
    assert!(p + lambda > 0.0, "efficiency undefined at zero spend");
    (log2_1p(p * g) - eps) / (p + lambda)
}

/// How one (slot, receiver) channel responds to the throughput multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotClass {
    /// Cannot carry positive rate even at the power cap.
    Dead,
    /// Activates at an interior rate (the theta root is below the cap).
    Interior,
    /// The theta root is beyond the cap: the slot activates already
    /// saturated, at the cap rate.
    Saturated,
}

/// Activation data for one (slot, receiver) channel at a given slot price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotThreshold {
    pub class: SlotClass,
    pub g: f64,
    pub eps: f64,
    pub p_bar: f64,
    pub lambda_eff: f64,
    /// Max rate under the power cap; nonpositive exactly for `Dead`.
    pub c_bar: f64,
    /// Root of [`theta`] (0 for `Dead`).
    pub c_hat: f64,
    /// Marginal power per rate at `c_hat`.
    pub mu_hat: f64,
    /// Marginal power per rate at the cap rate `c_bar`.
    pub mu_bar: f64,
    /// Average spend per rate when running saturated: `(p_bar+lambda)/c_bar`.
    pub mu_tilde: f64,
    /// Multiplier at which the slot turns on: `mu_hat` (Interior) or
    /// `mu_tilde` (Saturated).
    pub mu_on: f64,
    /// Rate used while sitting on the threshold: `c_hat` or `c_bar`.
    pub tie_rate: f64,
}

impl SlotThreshold {
    pub fn new(g: f64, eps: f64, p_bar: f64, lambda_eff: f64) -> Self {
        let dead = Self {
            class: SlotClass::Dead,
            g,
            eps,
            p_bar,
            lambda_eff,
            c_bar: 0.0,
            c_hat: 0.0,
            mu_hat: 0.0,
            mu_bar: 0.0,
            mu_tilde: 0.0,
            mu_on: f64::INFINITY,
            tie_rate: 0.0,
        };
        if g <= 0.0 {
            return dead;
        }
        let c_bar = log2_1p(p_bar * g) - eps;
        if c_bar <= 0.0 {
            return Self { c_bar, ..dead };
        }
        let c_hat = solve_theta_root(g, eps, lambda_eff);
        let mu_hat = power_slope(c_hat, g, eps);
        let mu_bar = power_slope(c_bar, g, eps);
        let mu_tilde = (p_bar + lambda_eff) / c_bar;
        let saturated = c_hat > c_bar;
        Self {
            class: if saturated {
                SlotClass::Saturated
            } else {
                SlotClass::Interior
            },
            g,
            eps,
            p_bar,
            lambda_eff,
            c_bar,
            c_hat,
            mu_hat,
            mu_bar,
            mu_tilde,
            mu_on: if saturated { mu_tilde } else { mu_hat },
            tie_rate: if saturated { c_bar } else { c_hat },
        }
    }

    /// Rate a strictly active slot runs at under multiplier `mu`
    /// (`mu > mu_on`): the marginal-power-matching rate, capped.
    pub fn rate_at(&self, mu: f64) -> f64 {
        if self.class == SlotClass::Dead {
            return 0.0;
        }
        ((mu * self.g / LN_2).log2() - self.eps).clamp(0.0, self.c_bar)
    }
}

/// Rate mass and fraction one slot contributes at multiplier `mu`. On the
/// threshold (within [`BRANCH_TOL`] relative) the slot takes the supplied
/// tie fraction `l_tilde`; beyond it the slot is fully used; below it, off.
pub fn allocate_slot(mu: f64, l_tilde: f64, th: &SlotThreshold) -> (f64, f64) {
    if th.class == SlotClass::Dead || !(mu > 0.0) {
        return (0.0, 0.0);
    }
    let scale = mu.max(th.mu_on);
    if (mu - th.mu_on).abs() <= BRANCH_TOL * scale {
        (th.tie_rate * l_tilde, l_tilde)
    } else if mu > th.mu_on {
        (th.rate_at(mu), 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Signed excess throughput at `(mu, l_tilde)`: total rate mass across the
/// slots minus `s_target`. Nondecreasing in `mu`; its root is the optimal
/// multiplier.
pub fn throughput_curve(
    mu: f64,
    l_tilde: &[f64],
    thresholds: &[SlotThreshold],
    s_target: f64,
) -> f64 {
    assert_eq!(l_tilde.len(), thresholds.len());
    let total: f64 = thresholds
        .iter()
        .zip(l_tilde)
        .map(|(th, &lt)| allocate_slot(mu, lt, th).0)
        .sum();
    total - s_target
}

/// Solution of one receiver's relaxed subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleSolve {
    pub phi: Vec<f64>,
    pub frac: Vec<f64>,
    pub mu: f64,
    pub l_tilde: f64,
    /// Subproblem objective `Σ_t p·l + lambda_eff(t)·l`.
    pub cost: f64,
    /// Slots sitting exactly on the activation threshold, with the rate
    /// each runs at there. Any split of the demand they carry is equally
    /// good for this receiver alone, which is the freedom
    /// [`solve_multi`] uses to clear overbooked slots.
    pub ties: Vec<(usize, f64)>,
}

/// Solves the relaxed problem for receiver `n` alone under per-slot prices
/// `lambda_eff[t]` (the instance's lambda plus any bandwidth price).
///
/// Bisects the throughput multiplier until demand is met, then resolves
/// threshold slots with one shared tie fraction.
pub fn solve_single(
    inst: &ProblemInstance,
    n: usize,
    lambda_eff: &[f64],
) -> Result<SingleSolve, PlanError> {
    assert_eq!(lambda_eff.len(), inst.slots);
    let th: Vec<SlotThreshold> = (0..inst.slots)
        .map(|t| SlotThreshold::new(inst.gain[t][n], inst.eps[t][n], inst.power_cap[t], lambda_eff[t]))
        .collect();
    let s = inst.demand[n];
    let mut out = SingleSolve {
        phi: vec![0.0; inst.slots],
        frac: vec![0.0; inst.slots],
        mu: 0.0,
        l_tilde: 0.0,
        cost: 0.0,
        ties: Vec::new(),
    };
    if s <= 0.0 {
        return Ok(out);
    }
    let max_deliverable: f64 = th.iter().map(|t| t.c_bar.max(0.0)).sum();
    if s > max_deliverable * (1.0 + 1e-12) {
        return Err(PlanError::Infeasible {
            receiver: n,
            demand: s,
            max_deliverable,
        });
    }

    // Above mu_max every usable slot is active and saturated, so demand up
    // to the deliverable maximum is met somewhere in (0, mu_max].
    let mu_max = th
        .iter()
        .filter(|t| t.class != SlotClass::Dead)
        .map(|t| t.mu_on.max(t.mu_bar))
        .fold(0.0_f64, f64::max);
    let strict_total = |mu: f64| -> f64 {
        th.iter()
            .filter(|t| t.class != SlotClass::Dead && t.mu_on < mu)
            .map(|t| t.rate_at(mu))
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = mu_max * (1.0 + 1e-6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if strict_total(mid) > s {
            hi = mid;
        } else {
            lo = mid;
        }
        // Relative to the bracket itself, so thresholds far below the
        // largest one still resolve inside the tie band.
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    let mu = lo;

    let is_tie = |t: &SlotThreshold| {
        t.class != SlotClass::Dead && (mu - t.mu_on).abs() <= TIE_TOL * mu.max(t.mu_on)
    };
    let base: f64 = th
        .iter()
        .filter(|t| t.class != SlotClass::Dead && t.mu_on < mu && !is_tie(t))
        .map(|t| t.rate_at(mu))
        .sum();
    let tie_mass: f64 = th.iter().filter(|t| is_tie(t)).map(|t| t.tie_rate).sum();
    let l_tilde = if tie_mass > 0.0 {
        ((s - base) / tie_mass).clamp(0.0, 1.0)
    } else {
        0.0
    };

    for (t, tht) in th.iter().enumerate() {
        if tht.class == SlotClass::Dead {
            continue;
        }
        let (phi, frac) = if is_tie(tht) {
            out.ties.push((t, tht.tie_rate));
            (tht.tie_rate * l_tilde, l_tilde)
        } else if tht.mu_on < mu {
            (tht.rate_at(mu), 1.0)
        } else {
            (0.0, 0.0)
        };
        if frac > 0.0 {
            out.phi[t] = phi;
            out.frac[t] = frac;
            let c = phi / frac;
            out.cost += frac * (rate_power(c, tht.g, tht.eps) + lambda_eff[t]);
        }
    }
    out.mu = mu;
    out.l_tilde = l_tilde;
    Ok(out)
}

/// Dual update scheme for the per-slot bandwidth prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualScheme {
    /// Per-slot adaptive steps with sign-driven growth/backoff; stops on
    /// joint primal feasibility and complementarity.
    Scaled,
    /// Classic diminishing-step ascent `v ← [v + (alpha0/√k)·excess]₊`,
    /// stopping when the update norm falls below 1e-8.
    Plain,
}

/// Tuning for [`solve_multi`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub scheme: DualScheme,
    /// Initial step size, as a fraction of the instance's price scale
    /// (lambda plus mean power cap).
    pub alpha0: f64,
    pub max_iters: usize,
    /// Allowed per-slot bandwidth overshoot at convergence.
    pub tol_excess: f64,
    /// Relative duality gap at which a feasible iterate is accepted even
    /// when some priced slot keeps slack: the price mass on unused
    /// bandwidth bounds the distance from optimal directly.
    pub tol_gap: f64,
    /// Looser gap accepted only once the iteration budget runs out, for
    /// degenerate instances where a tie sits on the boundary and exact
    /// complementarity is unreachable; the best feasible iterate seen is
    /// returned with this certificate instead of a convergence failure.
    pub tol_gap_final: f64,
    /// Allowed complementarity residual: priced slots must be this close
    /// to fully used.
    pub tol_compl: f64,
    pub keep_trace: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            scheme: DualScheme::Scaled,
            alpha0: 0.25,
            max_iters: 5000,
            tol_excess: 1e-9,
            tol_compl: 1e-7,
            tol_gap: 1e-6,
            tol_gap_final: 1e-2,
            keep_trace: true,
        }
    }
}

/// One dual iteration's summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub v_norm: f64,
    /// Dual objective: sum of subproblem costs minus the price mass.
    pub dual_value: f64,
    /// Largest per-slot bandwidth overshoot.
    pub max_excess: f64,
    /// Largest complementarity residual over priced slots.
    pub max_compl: f64,
}

/// Result of [`solve_multi`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOutcome {
    pub plan: PhiPlan,
    /// Throughput multiplier per receiver.
    pub mu: Vec<f64>,
    /// Tie fraction per receiver.
    pub l_tilde: Vec<f64>,
    /// Bandwidth price per slot.
    pub v: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub relaxed_cost: f64,
    pub trace: Vec<TraceRow>,
}

fn singles_at(
    inst: &ProblemInstance,
    v: &[f64],
) -> Result<Vec<SingleSolve>, PlanError> {
    let lambda_eff: Vec<f64> = v.iter().map(|&vt| inst.lambda + vt).collect();
    if inst.receivers * inst.slots >= 2048 {
        (0..inst.receivers)
            .into_par_iter()
            .map(|n| solve_single(inst, n, &lambda_eff))
            .collect()
    } else {
        (0..inst.receivers)
            .map(|n| solve_single(inst, n, &lambda_eff))
            .collect()
    }
}

const TIE_TINY: f64 = 1e-12;
const TIE_CHAIN_DEPTH: usize = 64;
const TIE_PATHS_PER_SLOT: usize = 8;

/// One relocation in a tie chain: receiver `n` moves bandwidth from slot
/// `from` (where it runs at rate `c_from`) to slot `to` (rate `c_to`).
/// The receiver is indifferent — tie slots deliver its bits at the same
/// spend — so the move changes neither its throughput nor its cost rate.
#[derive(Clone, Copy)]
struct TieHop {
    n: usize,
    from: usize,
    c_from: f64,
    to: usize,
    c_to: f64,
}

/// Tie structure of the current dual point: which receivers sit on the
/// activation threshold of which slots, and at what rate.
struct TieNet<'a> {
    inst: &'a ProblemInstance,
    v: &'a [f64],
    /// Per receiver: its tie slots and rates.
    edges: Vec<Vec<(usize, f64)>>,
    /// Per slot: the receivers tied there and their rates.
    members: Vec<Vec<(usize, f64)>>,
}

impl<'a> TieNet<'a> {
    fn new(inst: &'a ProblemInstance, v: &'a [f64], singles: &[SingleSolve]) -> Self {
        let mut members = vec![Vec::new(); inst.slots];
        let mut edges = Vec::with_capacity(singles.len());
        for (n, s) in singles.iter().enumerate() {
            let mut own = Vec::with_capacity(s.ties.len());
            for &(t, c) in &s.ties {
                if c > 0.0 {
                    own.push((t, c));
                    members[t].push((n, c));
                }
            }
            edges.push(own);
        }
        Self {
            inst,
            v,
            edges,
            members,
        }
    }

    fn shift(
        &self,
        singles: &mut [SingleSolve],
        totals: &mut [f64],
        hop: TieHop,
        df_from: f64,
    ) {
        let bits = df_from * hop.c_from;
        let df_to = bits / hop.c_to;
        let s = &mut singles[hop.n];
        s.frac[hop.from] -= df_from;
        s.phi[hop.from] -= bits;
        if s.frac[hop.from] <= TIE_TINY {
            s.frac[hop.from] = 0.0;
            s.phi[hop.from] = 0.0;
        }
        s.frac[hop.to] += df_to;
        s.phi[hop.to] += bits;
        s.cost += df_to
            * (rate_power(hop.c_to, self.inst.gain[hop.to][hop.n], self.inst.eps[hop.to][hop.n])
                + self.inst.lambda
                + self.v[hop.to]);
        s.cost -= df_from
            * (rate_power(
                hop.c_from,
                self.inst.gain[hop.from][hop.n],
                self.inst.eps[hop.from][hop.n],
            ) + self.inst.lambda
                + self.v[hop.from]);
        totals[hop.from] -= df_from;
        totals[hop.to] += df_to;
    }

    /// Finds a chain that frees bandwidth at slot `w`: some tied receiver
    /// moves mass to another of its tie slots, recursively displacing mass
    /// there when that slot is full. Returns how much can be removed from
    /// `w` and the hops, head first.
    fn probe_out(
        &self,
        singles: &[SingleSolve],
        totals: &[f64],
        w: usize,
        visited: &mut [bool],
        depth: usize,
    ) -> Option<(f64, Vec<TieHop>)> {
        visited[w] = true;
        for &(n, c_nw) in &self.members[w] {
            let have = singles[n].frac[w];
            if have <= TIE_TINY {
                continue;
            }
            for &(x, c_nx) in &self.edges[n] {
                if x == w || visited[x] {
                    continue;
                }
                let box_x = 1.0 - singles[n].frac[x];
                if box_x <= TIE_TINY {
                    continue;
                }
                let free_x = 1.0 - totals[x];
                let (absorb, suffix) = if free_x > TIE_TINY {
                    (free_x.min(box_x), Vec::new())
                } else if depth < TIE_CHAIN_DEPTH {
                    match self.probe_out(singles, totals, x, visited, depth + 1) {
                        Some((removed, path)) => {
                            ((free_x + removed).clamp(0.0, box_x), path)
                        }
                        None => continue,
                    }
                } else {
                    continue;
                };
                if absorb <= TIE_TINY {
                    continue;
                }
                let remove_w = have.min(absorb * c_nx / c_nw);
                if remove_w <= TIE_TINY {
                    continue;
                }
                let mut path = Vec::with_capacity(suffix.len() + 1);
                path.push(TieHop {
                    n,
                    from: w,
                    c_from: c_nw,
                    to: x,
                    c_to: c_nx,
                });
                path.extend(suffix);
                return Some((remove_w, path));
            }
        }
        None
    }

    /// Executes a drain chain, deepest hop first so room exists before each
    /// deposit lands.
    fn apply_out(
        &self,
        singles: &mut [SingleSolve],
        totals: &mut [f64],
        path: &[TieHop],
        remove: f64,
    ) {
        let hop = path[0];
        let deposit = remove * hop.c_from / hop.c_to;
        if path.len() > 1 {
            let need = (totals[hop.to] + deposit - 1.0).max(0.0);
            if need > 0.0 {
                self.apply_out(singles, totals, &path[1..], need);
            }
        }
        self.shift(singles, totals, hop, remove);
    }

    /// Finds a chain that adds bandwidth at priced slot `u`: a tied
    /// receiver pulls its own mass in from another tie slot — freely when
    /// that slot is unpriced, otherwise only as much as can be backfilled
    /// there by the same search. Returns how much can be added at `u`.
    fn probe_in(
        &self,
        singles: &[SingleSolve],
        totals: &[f64],
        u: usize,
        visited: &mut [bool],
        depth: usize,
    ) -> Option<(f64, Vec<TieHop>)> {
        visited[u] = true;
        for &(n, c_nu) in &self.members[u] {
            let box_u = 1.0 - singles[n].frac[u];
            if box_u <= TIE_TINY {
                continue;
            }
            for &(x, c_nx) in &self.edges[n] {
                if x == u || visited[x] {
                    continue;
                }
                let have = singles[n].frac[x];
                if have <= TIE_TINY {
                    continue;
                }
                let (usable, suffix) = if self.v[x] <= 0.0 {
                    (have, Vec::new())
                } else if depth < TIE_CHAIN_DEPTH {
                    match self.probe_in(singles, totals, x, visited, depth + 1) {
                        Some((refill, path)) => (have.min(refill), path),
                        None => continue,
                    }
                } else {
                    continue;
                };
                let add_u = box_u.min(usable * c_nx / c_nu);
                if add_u <= TIE_TINY {
                    continue;
                }
                let mut path = Vec::with_capacity(suffix.len() + 1);
                path.push(TieHop {
                    n,
                    from: x,
                    c_from: c_nx,
                    to: u,
                    c_to: c_nu,
                });
                path.extend(suffix);
                return Some((add_u, path));
            }
        }
        None
    }

    /// Executes a fill chain: the head hop deposits at the target, then
    /// each deeper hop restores exactly what the hop above removed.
    fn apply_in(
        &self,
        singles: &mut [SingleSolve],
        totals: &mut [f64],
        path: &[TieHop],
        add: f64,
    ) {
        let hop = path[0];
        let take_from = add * hop.c_to / hop.c_from;
        self.shift(singles, totals, hop, take_from);
        if path.len() > 1 {
            self.apply_in(singles, totals, &path[1..], take_from);
        }
    }
}

/// Repairs the coupled allocation at fixed prices using the freedom the
/// ties leave: every receiver is indifferent across its tie slots, so
/// bandwidth can be relocated along chains of tied receivers without
/// changing anyone's throughput or cost. Two passes: drain slots booked
/// past capacity, then top up priced slots left slack, so that leftover
/// excess and slack reflect genuine price errors rather than arbitrary
/// tie splits.
fn complete_ties(
    inst: &ProblemInstance,
    v: &[f64],
    tol_compl: f64,
    singles: &mut [SingleSolve],
) {
    let t_len = inst.slots;
    let mut totals = vec![0.0; t_len];
    for s in singles.iter() {
        for t in 0..t_len {
            totals[t] += s.frac[t];
        }
    }
    let price_floor = tol_compl.max(TIE_TINY);
    let needs_drain = totals.iter().any(|&x| x > 1.0 + TIE_TINY);
    let needs_fill = (0..t_len)
        .any(|t| v[t] > 0.0 && totals[t] < 1.0 - price_floor);
    if !needs_drain && !needs_fill {
        return;
    }
    let net = TieNet::new(inst, v, singles);
    let mut visited = vec![false; t_len];
    for t in 0..t_len {
        for _ in 0..TIE_PATHS_PER_SLOT {
            let over = totals[t] - 1.0;
            if over <= TIE_TINY {
                break;
            }
            visited.fill(false);
            let Some((amount, path)) = net.probe_out(singles, &totals, t, &mut visited, 0)
            else {
                break;
            };
            net.apply_out(singles, &mut totals, &path, amount.min(over));
        }
    }
    for t in 0..t_len {
        if v[t] <= 0.0 {
            continue;
        }
        for _ in 0..TIE_PATHS_PER_SLOT {
            let slack = 1.0 - totals[t];
            if slack <= price_floor {
                break;
            }
            visited.fill(false);
            let Some((amount, path)) = net.probe_in(singles, &totals, t, &mut visited, 0)
            else {
                break;
            };
            net.apply_in(singles, &mut totals, &path, amount.min(slack));
        }
    }
}

fn assemble(inst: &ProblemInstance, singles: Vec<SingleSolve>, v: Vec<f64>) -> MultiOutcome {
    let mut plan = PhiPlan::zeros(inst.slots, inst.receivers);
    let mut relaxed_cost = 0.0;
    for t in 0..inst.slots {
        for (n, s) in singles.iter().enumerate() {
            plan.phi[t][n] = s.phi[t];
            plan.frac[t][n] = s.frac[t];
        }
    }
    for (t, row) in plan.frac.iter().enumerate() {
        for (n, &l) in row.iter().enumerate() {
            if l > 0.0 {
                let c = plan.phi[t][n] / l;
                relaxed_cost +=
                    l * (rate_power(c, inst.gain[t][n], inst.eps[t][n]) + inst.lambda);
            }
        }
    }
    MultiOutcome {
        mu: singles.iter().map(|s| s.mu).collect(),
        l_tilde: singles.iter().map(|s| s.l_tilde).collect(),
        plan,
        v,
        iterations: 0,
        residual: 0.0,
        relaxed_cost,
        trace: Vec::new(),
    }
}

/// Solves the relaxed multi-receiver problem by pricing bandwidth per slot
/// and re-solving the per-receiver subproblems until no slot is overbooked
/// and every priced slot is fully used.
///
/// Errors with [`PlanError::Infeasible`] when some receiver's demand
/// exceeds what its channels can carry, and [`PlanError::NoConvergence`]
/// when the price iteration exhausts its budget.
pub fn solve_multi(inst: &ProblemInstance, cfg: &SolveConfig) -> Result<MultiOutcome, PlanError> {
    inst.validate()?;
    for n in 0..inst.receivers {
        let max_del = inst.max_deliverable(n);
        if inst.demand[n] > max_del * (1.0 + 1e-12) {
            return Err(PlanError::Infeasible {
                receiver: n,
                demand: inst.demand[n],
                max_deliverable: max_del,
            });
        }
    }

    let t_len = inst.slots;
    let price_scale = inst.lambda
        + inst.power_cap.iter().sum::<f64>() / t_len.max(1) as f64
        + f64::MIN_POSITIVE;
    let mut v = vec![0.0; t_len];
    let mut step = vec![cfg.alpha0 * price_scale; t_len];
    let mut prev_dir = vec![0_i8; t_len];
    let mut shared_step = cfg.alpha0 * price_scale;
    let mut shared_prev = 0_i8;
    let step_max = 8.0 * price_scale * inst.receivers as f64;
    let step_min = 1e-15 * price_scale;
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, Vec<SingleSolve>, Vec<f64>)> = None;

    for k in 1..=cfg.max_iters {
        let mut singles = singles_at(inst, &v)?;
        complete_ties(inst, &v, cfg.tol_compl, &mut singles);
        let mut excess = vec![0.0; t_len];
        for s in &singles {
            for t in 0..t_len {
                excess[t] += s.frac[t];
            }
        }
        for e in excess.iter_mut() {
            *e -= 1.0;
        }

        let max_excess = excess.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max_compl = v
            .iter()
            .zip(&excess)
            .map(|(&vt, &e)| (vt / price_scale).min((-e).max(0.0)))
            .fold(0.0_f64, f64::max);
        // The completed iterate is itself a plan once feasible; the price
        // mass left on unused bandwidth is exactly its distance from the
        // dual bound, so a small gap certifies it even at degenerate
        // points where complementarity cannot be closed slot by slot.
        let gap: f64 = v.iter().zip(&excess).map(|(&vt, &e)| vt * -e).sum();
        let lagrangian: f64 = singles.iter().map(|s| s.cost).sum();
        let primal = lagrangian - v.iter().zip(&excess).map(|(&vt, &e)| vt * (1.0 + e)).sum::<f64>();
        let rel_gap = gap / (1.0 + primal.abs());
        if cfg.keep_trace {
            let dual_value =
                singles.iter().map(|s| s.cost).sum::<f64>() - v.iter().sum::<f64>();
            trace.push(TraceRow {
                iter: k,
                v_norm: v.iter().map(|x| x * x).sum::<f64>().sqrt(),
                dual_value,
                max_excess,
                max_compl,
            });
        }

        if max_excess <= cfg.tol_excess && best.as_ref().is_none_or(|b| rel_gap < b.0) {
            best = Some((rel_gap, k, singles.clone(), v.clone()));
        }
        let converged = max_excess <= cfg.tol_excess
            && (max_compl <= cfg.tol_compl || rel_gap <= cfg.tol_gap);
        if converged {
            let mut out = assemble(inst, singles, v);
            out.iterations = k;
            out.residual = max_excess.max(max_compl).max(0.0);
            out.trace = trace;
            return Ok(out);
        }
        if k == cfg.max_iters {
            if let Some((best_gap, best_iter, best_singles, best_v)) = best.take() {
                if best_gap <= cfg.tol_gap_final {
                    let mut out = assemble(inst, best_singles, best_v);
                    out.iterations = best_iter;
                    out.residual = best_gap;
                    out.trace = trace;
                    return Ok(out);
                }
            }
            return Err(PlanError::NoConvergence {
                iterations: k,
                residual: max_excess.max(max_compl).max(0.0),
            });
        }

        match cfg.scheme {
            DualScheme::Scaled => {
                for t in 0..t_len {
                    let e = excess[t];
                    let dir: i8 = if e > cfg.tol_excess {
                        1
                    } else if (v[t] / price_scale).min(-e) > cfg.tol_compl {
                        -1
                    } else {
                        0
                    };
                    if dir == 0 {
                        prev_dir[t] = 0;
                        continue;
                    }
                    if prev_dir[t] == dir {
                        step[t] = (step[t] * 1.3).min(step_max);
                    } else if prev_dir[t] == -dir {
                        step[t] = (step[t] * 0.5).max(step_min);
                    }
                    v[t] = (v[t] + f64::from(dir) * step[t]).max(0.0);
                    prev_dir[t] = dir;
                }
                // When many slots tie, the equilibrium also has a slow mode
                // where every price moves together that the per-slot steps
                // crawl along; a shared step on the active cone covers it.
                let mut active_excess = 0.0;
                let mut any_priced = false;
                for t in 0..t_len {
                    if v[t] > 0.0 {
                        active_excess += excess[t];
                        any_priced = true;
                    } else {
                        active_excess += excess[t].max(0.0);
                    }
                }
                let gdir: i8 = if active_excess > cfg.tol_excess {
                    1
                } else if any_priced && active_excess < -cfg.tol_excess {
                    -1
                } else {
                    0
                };
                if gdir == 0 {
                    shared_prev = 0;
                } else {
                    if shared_prev == gdir {
                        shared_step = (shared_step * 1.3).min(step_max);
                    } else if shared_prev == -gdir {
                        shared_step = (shared_step * 0.5).max(step_min);
                    }
                    for t in 0..t_len {
                        if v[t] > 0.0 || gdir > 0 {
                            v[t] = (v[t] + f64::from(gdir) * shared_step).max(0.0);
                        }
                    }
                    shared_prev = gdir;
                }
            }
            DualScheme::Plain => {
                let alpha = cfg.alpha0 * price_scale / (k as f64).sqrt();
                let mut delta_norm_sq = 0.0;
                for t in 0..t_len {
                    let next = (v[t] + alpha * excess[t]).max(0.0);
                    delta_norm_sq += (next - v[t]) * (next - v[t]);
                    v[t] = next;
                }
                if delta_norm_sq.sqrt() < 1e-8 {
                    // Price movement has died out; the next pass re-solves at
                    // the final prices and applies the convergence test.
                    let singles = singles_at(inst, &v)?;
                    let mut excess = vec![0.0; t_len];
                    for s in &singles {
                        for t in 0..t_len {
                            excess[t] += s.frac[t];
                        }
                    }
                    for e in excess.iter_mut() {
                        *e -= 1.0;
                    }
                    let max_excess =
                        excess.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let max_compl = v
                        .iter()
                        .zip(&excess)
                        .map(|(&vt, &e)| (vt / price_scale).min((-e).max(0.0)))
                        .fold(0.0_f64, f64::max);
                    let mut out = assemble(inst, singles, v);
                    out.iterations = k;
                    out.residual = max_excess.max(max_compl).max(0.0);
                    out.trace = trace;
                    if max_excess <= 1e-6 {
                        return Ok(out);
                    }
                    return Err(PlanError::NoConvergence {
                        iterations: k,
                        residual: out.residual,
                    });
                }
            }
        }
    }
    unreachable!("loop returns on its final iteration");
}

/// Indices of slots by bandwidth usage: unused, partially used, and fully
/// used (total fraction within 1e-6 of 1, matching the solver's
/// convergence tolerance).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotSets {
    pub off: Vec<usize>,
    pub partial: Vec<usize>,
    pub full: Vec<usize>,
}

pub fn slot_sets(frac: &[Vec<f64>]) -> SlotSets {
    let mut sets = SlotSets {
        off: Vec::new(),
        partial: Vec::new(),
        full: Vec::new(),
    };
    for (t, row) in frac.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total <= crate::problem::ACTIVE_TOL {
            sets.off.push(t);
        } else if total >= 1.0 - crate::problem::FEAS_TOL {
            sets.full.push(t);
        } else {
            sets.partial.push(t);
        }
    }
    sets
}

/// Normalized optimality residuals of a relaxed plan against dual
/// certificates `mu` (per receiver) and `v` (per slot).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    /// Rate stationarity: marginal power per rate vs the receiver's
    /// multiplier, relative.
    pub rate: f64,
    /// Fraction stationarity: the theta trade-off on partially used slots,
    /// relative to the slot's price-plus-cap scale.
    pub frac: f64,
    /// Complementary slackness of demands and slot prices.
    pub complementarity: f64,
    /// Demand shortfall, relative.
    pub throughput: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.rate
            .max(self.frac)
            .max(self.complementarity)
            .max(self.throughput)
    }
}

pub fn kkt_residuals(
    plan: &PhiPlan,
    inst: &ProblemInstance,
    mu: &[f64],
    v: &[f64],
) -> KktResiduals {
    assert_eq!(mu.len(), inst.receivers);
    assert_eq!(v.len(), inst.slots);
    let mut res = KktResiduals {
        rate: 0.0,
        frac: 0.0,
        complementarity: 0.0,
        throughput: 0.0,
    };
    let price_scale = inst.lambda
        + inst.power_cap.iter().sum::<f64>() / inst.slots.max(1) as f64
        + f64::MIN_POSITIVE;
    let band = 1e-9;

    for t in 0..inst.slots {
        let lambda_eff = inst.lambda + v[t];
        let mut used = 0.0;
        for n in 0..inst.receivers {
            let l = plan.frac[t][n];
            used += l;
            if l <= band {
                continue;
            }
            let (g, eps) = (inst.gain[t][n], inst.eps[t][n]);
            if g <= 0.0 {
                res.frac = res.frac.max(1.0);
                continue;
            }
            let c_bar = log2_1p(inst.power_cap[t] * g) - eps;
            let c = plan.phi[t][n] / l;
            let m = power_slope(c, g, eps);
            let saturated = c >= c_bar * (1.0 - band);
            let at_floor = c <= band * c_bar.max(1.0);

            let scale = mu[n].max(m) + f64::MIN_POSITIVE;
            let r = if saturated {
                // A cap multiplier absorbs mu-m when mu exceeds m.
                (m - mu[n]).max(0.0) / scale
            } else if at_floor {
                (mu[n] - m).max(0.0) / scale
            } else {
                (m - mu[n]).abs() / scale
            };
            res.rate = res.rate.max(r);

            let nu = if saturated { (mu[n] - m).max(0.0) } else { 0.0 };
            let d_frac = rate_power(c, g, eps) - c * m + lambda_eff - nu * c_bar;
            let fscale = lambda_eff + inst.power_cap[t] + f64::MIN_POSITIVE;
            let fr = if l >= 1.0 - band {
                // At the ceiling only an upward push is suspect.
                (d_frac / fscale).max(0.0)
            } else {
                (d_frac / fscale).abs()
            };
            res.frac = res.frac.max(fr);
        }
        let compl_t = (v[t] / price_scale).min((1.0 - used).max(0.0));
        res.complementarity = res.complementarity.max(compl_t);
        if used > 1.0 + 1e-9 {
            res.complementarity = res.complementarity.max(used - 1.0);
        }
    }

    for n in 0..inst.receivers {
        let total: f64 = (0..inst.slots).map(|t| plan.phi[t][n]).sum();
        let s = inst.demand[n];
        let shortfall = (s - total).max(0.0) / s.max(1.0);
        res.throughput = res.throughput.max(shortfall);
        if mu[n] > 1e-12 * price_scale {
            res.complementarity = res.complementarity.max((total - s).max(0.0) / s.max(1.0));
        }
    }
    res
}
