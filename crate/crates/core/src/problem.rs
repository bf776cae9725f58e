//! Deterministic planning-problem data and the maps between its
//! representations.
//!
//! All powers are linear milliwatts and all rates are bits per channel use
//! (base-2 logs throughout). Demands are stored normalized: physical bits
//! divided by `bandwidth · slot_seconds`, so demand and per-slot rate live in
//! the same unit and a schedule delivers `Σ_t c_n(t)·l_n(t)` of it.
//!
//! Two equivalent plan encodings are used. [`Plan`] carries transmit power
//! `P[t][n]` and bandwidth fraction `L[t][n]`. [`PhiPlan`] carries
//! `phi = c·l`, the per-slot rate mass, which is the variable that makes the
//! scheduling problem convex; [`phi_to_power`] inverts it back to watts.

use serde::{Deserialize, Serialize};

use crate::PlanError;

/// A slot counts as active when its total bandwidth usage exceeds this.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Tolerance used when validating plan constraints (simplex, caps).
pub const FEAS_TOL: f64 = 1e-6;

/// log2(1+x) without cancellation for small x.
#[inline]
pub fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Deterministic optimization input for one planning run.
///
/// Layout is slot-major: `gain[t][n]` is the noise-normalized linear channel
/// gain of receiver `n` in slot `t`, so `log2(1 + p·gain)` is spectral
/// efficiency at transmit power `p` mW. `rate_cap[t][n]` caches
/// `log2(1 + power_cap[t]·gain[t][n]) − eps[t][n]` and may be negative, in
/// which case the slot is useless for that receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub slots: usize,
    pub receivers: usize,
    /// Slot duration in seconds (metadata for reports; the optimization is
    /// expressed per slot).
    pub slot_seconds: f64,
    /// Price per active slot, in the same unit as `power·fraction` (mW).
    pub lambda: f64,
    pub gain: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
    pub power_cap: Vec<f64>,
    pub rate_cap: Vec<Vec<f64>>,
    pub demand: Vec<f64>,
}

impl ProblemInstance {
    /// Builds an instance, deriving `rate_cap` from the caps and gains.
    pub fn new(
        gain: Vec<Vec<f64>>,
        eps: Vec<Vec<f64>>,
        power_cap: Vec<f64>,
        demand: Vec<f64>,
        lambda: f64,
        slot_seconds: f64,
    ) -> Result<Self, PlanError> {
        let slots = gain.len();
        let receivers = demand.len();
        let rate_cap = gain
            .iter()
            .zip(&eps)
            .zip(&power_cap)
            .map(|((g_row, e_row), &p)| {
                g_row
                    .iter()
                    .zip(e_row)
                    .map(|(&g, &e)| log2_1p(p * g) - e)
                    .collect()
            })
            .collect();
        let inst = Self {
            slots,
            receivers,
            slot_seconds,
            lambda,
            gain,
            eps,
            power_cap,
            rate_cap,
            demand,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Checks shapes, signs, and the `rate_cap` consistency identity.
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |msg: String| Err(PlanError::BadInstance(msg));
        if self.gain.len() != self.slots
            || self.eps.len() != self.slots
            || self.power_cap.len() != self.slots
            || self.rate_cap.len() != self.slots
        {
            return bad(format!("slot-major fields must have length {}", self.slots));
        }
        if self.demand.len() != self.receivers {
            return bad(format!("demand must have length {}", self.receivers));
        }
        if !(self.slot_seconds > 0.0) {
            return bad("slot_seconds must be positive".into());
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be nonnegative".into());
        }
        for (n, &s) in self.demand.iter().enumerate() {
            if !(s >= 0.0) || !s.is_finite() {
                return bad(format!("demand[{n}] must be finite and nonnegative"));
            }
        }
        for t in 0..self.slots {
            if self.gain[t].len() != self.receivers
                || self.eps[t].len() != self.receivers
                || self.rate_cap[t].len() != self.receivers
            {
                return bad(format!("row {t} must have width {}", self.receivers));
            }
            if !(self.power_cap[t] > 0.0) || !self.power_cap[t].is_finite() {
                return bad(format!("power_cap[{t}] must be finite and positive"));
            }
            for n in 0..self.receivers {
                let (g, e) = (self.gain[t][n], self.eps[t][n]);
                if !(g >= 0.0) || !g.is_finite() {
                    return bad(format!("gain[{t}][{n}] must be finite and nonnegative"));
                }
                if !(e >= 0.0) || !e.is_finite() {
                    return bad(format!("eps[{t}][{n}] must be finite and nonnegative"));
                }
                let expect = log2_1p(self.power_cap[t] * g) - e;
                let scale = expect.abs().max(1.0);
                if (self.rate_cap[t][n] - expect).abs() > 1e-9 * scale {
                    return bad(format!(
                        "rate_cap[{t}][{n}] = {} inconsistent with caps/gains (expected {})",
                        self.rate_cap[t][n], expect
                    ));
                }
            }
        }
        Ok(())
    }

    /// Max deliverable normalized throughput for one receiver, ignoring
    /// competition: sum of positive rate caps.
    pub fn max_deliverable(&self, n: usize) -> f64 {
        (0..self.slots).map(|t| self.rate_cap[t][n].max(0.0)).sum()
    }

    /// Builds an instance from per-slot channel predictions: receiver gains
    /// and capacity margins plus neighbor gains, which set the power caps
    /// through the interference threshold.
    pub fn from_predictions(
        receiver_gain: Vec<Vec<f64>>,
        receiver_eps: Vec<Vec<f64>>,
        neighbor_gain: &[Vec<f64>],
        settings: &InstanceSettings,
    ) -> Result<Self, PlanError> {
        if neighbor_gain.len() != receiver_gain.len() {
            return Err(PlanError::BadInstance(format!(
                "neighbor gains cover {} slots but receiver gains cover {}",
                neighbor_gain.len(),
                receiver_gain.len()
            )));
        }
        let caps = power_cap(settings.i_bs_mw, neighbor_gain, settings.p_max_mw);
        Self::new(
            receiver_gain,
            receiver_eps,
            caps,
            settings.demand.clone(),
            settings.lambda,
            settings.slot_seconds,
        )
    }
}

/// Instance-shaping settings shared by every planning scheme: demands in
/// normalized throughput units, the duration penalty, slot length, and the
/// interference and hardware power limits in linear milliwatts.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSettings {
    pub demand: Vec<f64>,
    pub lambda: f64,
    pub slot_seconds: f64,
    pub i_bs_mw: f64,
    pub p_max_mw: f64,
}

/// A schedule in physical variables: power (mW) and bandwidth fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub power: Vec<Vec<f64>>,
    pub frac: Vec<Vec<f64>>,
}

impl Plan {
    pub fn zeros(slots: usize, receivers: usize) -> Self {
        Self {
            power: vec![vec![0.0; receivers]; slots],
            frac: vec![vec![0.0; receivers]; slots],
        }
    }

    /// Structural sanity: shapes, nonnegative entries, per-slot bandwidth
    /// total ≤ 1, no power on unused fractions. Cap and demand compliance is
    /// the job of [`feasibility_check`].
    pub fn validate(&self, slots: usize, receivers: usize) -> Result<(), PlanError> {
        if self.power.len() != slots || self.frac.len() != slots {
            return Err(PlanError::BadInstance(format!(
                "plan must have {slots} slot rows"
            )));
        }
        for t in 0..slots {
            if self.power[t].len() != receivers || self.frac[t].len() != receivers {
                return Err(PlanError::BadInstance(format!(
                    "plan row {t} must have width {receivers}"
                )));
            }
            let mut total = 0.0;
            for n in 0..receivers {
                let (p, l) = (self.power[t][n], self.frac[t][n]);
                if !p.is_finite() || !l.is_finite() || p < 0.0 || l < -FEAS_TOL {
                    return Err(PlanError::BadInstance(format!(
                        "plan entry ({t},{n}) out of range: p={p}, l={l}"
                    )));
                }
                if l <= ACTIVE_TOL && p > 0.0 {
                    return Err(PlanError::BadInstance(format!(
                        "plan entry ({t},{n}) has power {p} on an unused fraction"
                    )));
                }
                total += l;
            }
            if total > 1.0 + FEAS_TOL {
                return Err(PlanError::BadInstance(format!(
                    "slot {t} bandwidth total {total} exceeds 1"
                )));
            }
        }
        Ok(())
    }
}

/// A schedule in the convexifying variables: rate mass `phi = c·l` and
/// bandwidth fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiPlan {
    pub phi: Vec<Vec<f64>>,
    pub frac: Vec<Vec<f64>>,
}

impl PhiPlan {
    pub fn zeros(slots: usize, receivers: usize) -> Self {
        Self {
            phi: vec![vec![0.0; receivers]; slots],
            frac: vec![vec![0.0; receivers]; slots],
        }
    }

    /// Converts to powers via [`phi_to_power`] cell by cell.
    pub fn to_plan(&self, inst: &ProblemInstance) -> Plan {
        let mut plan = Plan::zeros(inst.slots, inst.receivers);
        for t in 0..inst.slots {
            for n in 0..inst.receivers {
                plan.frac[t][n] = self.frac[t][n];
                plan.power[t][n] = phi_to_power(
                    self.phi[t][n],
                    self.frac[t][n],
                    inst.gain[t][n],
                    inst.eps[t][n],
                );
            }
        }
        plan
    }
}

/// Rate back-off that turns the mean-gain rate into a lower bound on
/// expected rate under Gamma(κ, 1/κ) fading:
/// `eps = log2(e)/κ − log2(1 + 1/(2κ))`.
///
/// Strictly positive for finite κ ≥ 1, decreasing, and → 0 as κ → ∞
/// (fading hardening).
pub fn capacity_gap(kappa: f64) -> f64 {
    assert!(kappa >= 1.0, "capacity_gap requires kappa >= 1, got {kappa}");
    std::f64::consts::LOG2_E / kappa - log2_1p(0.5 / kappa)
}

/// Per-slot transmit power cap keeping expected interference below
/// `i_bs_mw` at every neighbor: `i_bs / max_m g_m`, limited by the hardware
/// maximum `p_max_mw`. Slots without neighbors fall back to `p_max_mw`.
///
/// `neighbor_gains[t]` holds the *raw* (not noise-normalized) linear gains
/// toward the neighbors at slot `t`.
pub fn power_cap(i_bs_mw: f64, neighbor_gains: &[Vec<f64>], p_max_mw: f64) -> Vec<f64> {
    assert!(i_bs_mw > 0.0, "interference threshold must be positive");
    assert!(p_max_mw > 0.0, "p_max must be positive");
    neighbor_gains
        .iter()
        .map(|row| {
            let gmax = row.iter().cloned().fold(0.0_f64, f64::max);
            if gmax > 0.0 {
                (i_bs_mw / gmax).min(p_max_mw)
            } else {
                p_max_mw
            }
        })
        .collect()
}

/// Schedule cost with the indicator term: transmit energy plus `lambda` per
/// slot in which any bandwidth is used (total fraction above [`ACTIVE_TOL`]).
pub fn cost_original(plan: &Plan, inst: &ProblemInstance) -> Result<f64, PlanError> {
    plan.validate(inst.slots, inst.receivers)?;
    let mut cost = 0.0;
    for t in 0..inst.slots {
        let mut used = 0.0;
        for n in 0..inst.receivers {
            cost += plan.power[t][n] * plan.frac[t][n];
            used += plan.frac[t][n];
        }
        if used > ACTIVE_TOL {
            cost += inst.lambda;
        }
    }
    Ok(cost)
}

/// Convex surrogate of [`cost_original`]: the indicator is replaced by the
/// bandwidth total, giving `ΣΣ (p + λ)·l`. Never larger than the original
/// cost on a valid plan, with equality exactly when every slot is fully used
/// or unused.
pub fn cost_relaxed(plan: &Plan, inst: &ProblemInstance) -> Result<f64, PlanError> {
    plan.validate(inst.slots, inst.receivers)?;
    let mut cost = 0.0;
    for t in 0..inst.slots {
        for n in 0..inst.receivers {
            cost += (plan.power[t][n] + inst.lambda) * plan.frac[t][n];
        }
    }
    Ok(cost)
}

/// Guaranteed (map-based, fading-discounted) throughput of receiver `n`:
/// `Σ_t (log2(1 + p·g) − ε)·l`.
pub fn throughput_lb(plan: &Plan, inst: &ProblemInstance, n: usize) -> f64 {
    (0..inst.slots)
        .map(|t| {
            let l = plan.frac[t][n];
            if l == 0.0 {
                0.0
            } else {
                (log2_1p(plan.power[t][n] * inst.gain[t][n]) - inst.eps[t][n]) * l
            }
        })
        .sum()
}

/// [`throughput_lb`] for every receiver.
pub fn throughput_lb_all(plan: &Plan, inst: &ProblemInstance) -> Vec<f64> {
    (0..inst.receivers)
        .map(|n| throughput_lb(plan, inst, n))
        .collect()
}

/// Power delivering rate mass `phi` on bandwidth fraction `l`:
/// `(2^(phi/l + eps) − 1)/g`, and 0 on unused fractions.
///
/// # Panics
/// If `l > 0` and `phi/l + eps < 0` (rate below the representable floor).
pub fn phi_to_power(phi: f64, l: f64, g: f64, eps: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    let rate = phi / l + eps;
    assert!(
        rate >= -1e-12,
        "phi/l + eps = {rate} is negative: not a reachable rate"
    );
    // Clamp tiny negative round-off from rate ≈ 0.
    ((rate.max(0.0).exp2() - 1.0) / g).max(0.0)
}

/// Rate mass produced by power `p` on fraction `l` (inverse of
/// [`phi_to_power`]).
pub fn power_to_phi(p: f64, l: f64, g: f64, eps: f64) -> f64 {
    if l <= 0.0 {
        0.0
    } else {
        (log2_1p(p * g) - eps) * l
    }
}

/// One violated plan constraint, with the violation magnitude.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    /// Receiver's guaranteed throughput falls short of its demand.
    Throughput { receiver: usize, shortfall: f64 },
    /// Transmit power above the slot's cap.
    PowerCap { slot: usize, receiver: usize, excess: f64 },
    /// Per-slot bandwidth fractions sum above 1.
    Simplex { slot: usize, excess: f64 },
    /// Negative bandwidth fraction.
    NegativeFraction { slot: usize, receiver: usize, value: f64 },
    /// Positive power on a slot the receiver does not use.
    PowerWithoutFraction { slot: usize, receiver: usize, power: f64 },
}

/// Checks a plan against every constraint of the instance and reports each
/// violation with its slack. An empty report means feasible within
/// [`FEAS_TOL`] (throughput within `FEAS_TOL·max(1, S_n)`).
pub fn feasibility_check(plan: &Plan, inst: &ProblemInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    for t in 0..inst.slots {
        let mut used = 0.0;
        for n in 0..inst.receivers {
            let (p, l) = (plan.power[t][n], plan.frac[t][n]);
            if l < -FEAS_TOL {
                out.push(Violation::NegativeFraction {
                    slot: t,
                    receiver: n,
                    value: l,
                });
            }
            if l.max(0.0) <= ACTIVE_TOL && p > FEAS_TOL {
                out.push(Violation::PowerWithoutFraction {
                    slot: t,
                    receiver: n,
                    power: p,
                });
            }
            if p > inst.power_cap[t] * (1.0 + FEAS_TOL) {
                out.push(Violation::PowerCap {
                    slot: t,
                    receiver: n,
                    excess: p - inst.power_cap[t],
                });
            }
            used += l.max(0.0);
        }
        if used > 1.0 + FEAS_TOL {
            out.push(Violation::Simplex {
                slot: t,
                excess: used - 1.0,
            });
        }
    }
    for n in 0..inst.receivers {
        let got = throughput_lb(plan, inst, n);
        let slack = inst.demand[n] - got;
        if slack > FEAS_TOL * inst.demand[n].max(1.0) {
            out.push(Violation::Throughput {
                receiver: n,
                shortfall: slack,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_instance(slots: usize, receivers: usize) -> ProblemInstance {
        ProblemInstance::new(
            vec![vec![1.0; receivers]; slots],
            vec![vec![0.0; receivers]; slots],
            vec![10.0; slots],
            vec![0.0; receivers],
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn capacity_gap_pins() {
        // High-precision evaluations of the gap formula.
        assert_relative_eq!(capacity_gap(1.0), 0.857732540167807, max_relative = 1e-12);
        assert_relative_eq!(capacity_gap(2.0), 0.399419425557119, max_relative = 1e-12);
        assert!((capacity_gap(1e6)).abs() < 1e-5, "gap must vanish for huge kappa");
    }

    #[test]
    fn capacity_gap_decreasing_and_positive() {
        let mut prev = f64::INFINITY;
        for i in 0..300 {
            let kappa = 1.0 + i as f64 * 0.1;
            let e = capacity_gap(kappa);
            assert!(e > 0.0, "gap must be positive at kappa={kappa}");
            assert!(e < prev, "gap must decrease at kappa={kappa}");
            prev = e;
        }
    }

    #[test]
    #[should_panic(expected = "kappa >= 1")]
    fn capacity_gap_rejects_small_kappa() {
        capacity_gap(0.5);
    }

    #[test]
    fn power_cap_examples() {
        // -70 dBm threshold against a -60 dB neighbor gain: cap is -10 dBm.
        let caps = power_cap(1e-7, &[vec![1e-6]], 1e3);
        assert_relative_eq!(caps[0], 1e-1, max_relative = 1e-12);
        // Strongest neighbor decides.
        let caps = power_cap(1e-7, &[vec![1e-6, 1e-8]], 1e3);
        assert_relative_eq!(caps[0], 1e-1, max_relative = 1e-12);
        // No neighbors: hardware maximum.
        let caps = power_cap(1e-7, &[vec![]], 42.0);
        assert_relative_eq!(caps[0], 42.0);
    }

    #[test]
    fn cost_examples() {
        let inst = unit_instance(1, 1);
        let zero = Plan::zeros(1, 1);
        assert_eq!(cost_original(&zero, &inst).unwrap(), 0.0);
        assert_eq!(cost_relaxed(&zero, &inst).unwrap(), 0.0);

        let plan = Plan {
            power: vec![vec![2.0]],
            frac: vec![vec![1.0]],
        };
        assert_relative_eq!(cost_original(&plan, &inst).unwrap(), 3.0);
        assert_relative_eq!(cost_relaxed(&plan, &inst).unwrap(), 3.0);

        let inst2 = unit_instance(1, 2);
        let split = Plan {
            power: vec![vec![2.0, 4.0]],
            frac: vec![vec![0.5, 0.5]],
        };
        assert_relative_eq!(cost_original(&split, &inst2).unwrap(), 4.0);
        assert_relative_eq!(cost_relaxed(&split, &inst2).unwrap(), 4.0);

        let half = Plan {
            power: vec![vec![2.0]],
            frac: vec![vec![0.5]],
        };
        assert_relative_eq!(cost_original(&half, &inst).unwrap(), 2.0);
        assert_relative_eq!(cost_relaxed(&half, &inst).unwrap(), 1.5);
    }

    #[test]
    fn cost_rejects_overfull_slot() {
        let inst = unit_instance(1, 2);
        let plan = Plan {
            power: vec![vec![1.0, 1.0]],
            frac: vec![vec![0.7, 0.5]],
        };
        assert!(cost_original(&plan, &inst).is_err());
    }

    #[test]
    fn relaxed_cost_below_original_cost() {
        // Random valid plans: relaxed ≤ original, equality iff every slot is
        // integral in total usage.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let slots = rng.random_range(1..5);
            let receivers = rng.random_range(1..4);
            let inst = unit_instance(slots, receivers);
            let mut plan = Plan::zeros(slots, receivers);
            let mut integral = true;
            for t in 0..slots {
                let mut budget = 1.0;
                for n in 0..receivers {
                    let l = if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(0.0..budget)
                    };
                    budget -= l;
                    plan.frac[t][n] = l;
                    plan.power[t][n] = if l > 0.0 { rng.random_range(0.0..5.0) } else { 0.0 };
                }
                let used: f64 = plan.frac[t].iter().sum();
                if used > ACTIVE_TOL && (used - 1.0).abs() > ACTIVE_TOL {
                    integral = false;
                }
            }
            let orig = cost_original(&plan, &inst).unwrap();
            let rel = cost_relaxed(&plan, &inst).unwrap();
            assert!(rel <= orig + 1e-12, "relaxed {rel} must not exceed original {orig}");
            if integral {
                assert_relative_eq!(rel, orig, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn throughput_examples() {
        let inst = unit_instance(1, 1);
        assert_eq!(throughput_lb(&Plan::zeros(1, 1), &inst, 0), 0.0);

        // g=1, eps=0, p=3, l=0.5: log2(4)/2 = 1.
        let plan = Plan {
            power: vec![vec![3.0]],
            frac: vec![vec![0.5]],
        };
        assert_relative_eq!(throughput_lb(&plan, &inst, 0), 1.0, max_relative = 1e-12);

        // Rate exactly cancelled by the back-off.
        let inst = ProblemInstance::new(
            vec![vec![1.0]],
            vec![vec![1.0]],
            vec![10.0],
            vec![0.0],
            1.0,
            1.0,
        )
        .unwrap();
        let plan = Plan {
            power: vec![vec![1.0]], // log2(1+1) = 1 = eps
            frac: vec![vec![1.0]],
        };
        assert_relative_eq!(throughput_lb(&plan, &inst, 0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn phi_power_examples() {
        assert_eq!(phi_to_power(0.0, 0.0, 1.0, 0.0), 0.0);
        assert_relative_eq!(phi_to_power(1.0, 1.0, 1.0, 0.0), 1.0, max_relative = 1e-12);
        assert_relative_eq!(phi_to_power(2.0, 0.5, 2.0, 0.0), 7.5, max_relative = 1e-12);
    }

    #[test]
    #[should_panic(expected = "not a reachable rate")]
    fn phi_to_power_rejects_unreachable_rate() {
        phi_to_power(-1.0, 0.5, 1.0, 0.1);
    }

    #[test]
    fn feasibility_report_examples() {
        let mut inst = unit_instance(1, 1);
        assert!(feasibility_check(&Plan::zeros(1, 1), &inst).is_empty());

        inst.demand[0] = 1.0;
        let report = feasibility_check(&Plan::zeros(1, 1), &inst);
        assert_eq!(report.len(), 1);
        match &report[0] {
            Violation::Throughput { receiver: 0, shortfall } => {
                assert_relative_eq!(*shortfall, 1.0)
            }
            other => panic!("expected throughput violation, got {other:?}"),
        }

        let inst = unit_instance(1, 2);
        let plan = Plan {
            power: vec![vec![1.0, 1.0]],
            frac: vec![vec![0.7, 0.5]],
        };
        let report = feasibility_check(&plan, &inst);
        assert!(report.iter().any(|v| matches!(
            v,
            Violation::Simplex { slot: 0, excess } if (excess - 0.2).abs() < 1e-9
        )));
    }

    #[test]
    fn jensen_gap_monte_carlo() {
        // E{log2(1+p·g·ξ)} ≥ log2(1+p·g) − eps(κ) for Gamma(κ,1/κ) fading.
        use rand::SeedableRng;
        use rand_distr::{Distribution, Gamma};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &(kappa, pg) in &[(1.0, 0.5), (2.0, 5.0), (4.0, 50.0), (8.0, 1.0)] {
            let gamma = Gamma::new(kappa, 1.0 / kappa).unwrap();
            let draws = 200_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..draws {
                let xi: f64 = gamma.sample(&mut rng);
                let v = log2_1p(pg * xi);
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / draws as f64;
            let var = (sumsq / draws as f64 - mean * mean).max(0.0);
            let stderr = (var / draws as f64).sqrt();
            let bound = log2_1p(pg) - capacity_gap(kappa);
            assert!(
                mean >= bound - 4.0 * stderr,
                "Jensen bound violated at kappa={kappa}, pg={pg}: mean={mean}, bound={bound}"
            );
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(500))]

        #[test]
        fn phi_power_round_trip(
            l in 1e-6_f64..1.0,
            g in 1e-9_f64..1e-3,
            eps in 0.0_f64..1.0,
            rate in 0.0_f64..20.0,
        ) {
            // Start from a reachable rate, map to power and back.
            let phi = (rate - eps) * l;
            if phi / l + eps >= 0.0 {
                let p = phi_to_power(phi, l, g, eps);
                let back = power_to_phi(p, l, g, eps);
                proptest::prop_assert!(
                    (back - phi).abs() <= 1e-9 * phi.abs().max(1e-9),
                    "round trip {} -> {} -> {}", phi, p, back
                );
            }
        }

        #[test]
        fn rate_cap_matches_formula(
            g in 1e-9_f64..1e-3,
            p in 1e-3_f64..1e9,
            eps in 0.0_f64..1.0,
        ) {
            let inst = ProblemInstance::new(
                vec![vec![g]],
                vec![vec![eps]],
                vec![p],
                vec![0.0],
                0.0,
                1.0,
            ).unwrap();
            let expect = log2_1p(p * g) - eps;
            proptest::prop_assert!((inst.rate_cap[0][0] - expect).abs() < 1e-12);
        }
    }
}
