//! Scenario-driven evaluation pipeline: plans schedules under each scheme,
//! replays them against Monte Carlo channel realizations, and reports
//! interference leakage, interfered-user ratios, cost envelopes over slot
//! durations, and solver runtime scaling.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::path::PathBuf;
use std::time::Instant;

use crate::baselines::{
    best_effort, planning_inputs, predictive_womap, proposed_plan, womap_prediction,
    ChannelRealization, PlannedOutput,
};
use crate::channel::{build_radio_map, generate_tracks, NodeTrack, RadioMap, ScenarioConfig};
use crate::oracle::reference_solver;
use crate::problem::{
    capacity_gap, cost_original, log2_1p, InstanceSettings, Plan, ProblemInstance, ACTIVE_TOL,
};
use crate::rounding::{gap_certificate, round_plan, GapCertificate};
use crate::solver::{solve_multi, SolveConfig};
use crate::PlanError;

/// Planning scheme under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Radio-map predictions, relaxed solve, cost-aware rounding.
    Proposed,
    /// Causal reaction to instantaneous channels, no planning.
    BestEffort,
    /// Mean-path-loss predictions with a capacity back-off, no map.
    Womap,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::BestEffort => "best_effort",
            Scheme::Womap => "womap",
        }
    }
}

/// How a user's received interference is computed from the transmit matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UePsdMode {
    /// The user sees the strongest active power: `max_n p_n·1{l_n>0}`.
    /// Matches the neighbor interference model; the default.
    WorstCase,
    /// The user sees the band-averaged power `Σ_n p_n·l_n`.
    InnerProduct,
}

/// Full description of one experiment: scenario, traffic, thresholds, and
/// sweep axes. Loaded from a TOML file; every field has a desk-scale
/// default, so a config file only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// Demand per receiver over the horizon, in bits.
    pub s_bits: f64,
    pub bandwidth_hz: f64,
    /// Expected-interference threshold at the known neighbors.
    pub i_bs_dbm: f64,
    /// Interference thresholds for the unknown-user ratio, one curve each.
    pub i_ue_dbm: Vec<f64>,
    /// Activation penalties, per second of active slot; a slot of length
    /// `delta` costs `lambda·delta`.
    pub lambda: Vec<f64>,
    /// Slot durations in seconds; each must divide the horizon.
    pub delta: Vec<f64>,
    pub horizon_s: f64,
    pub num_fading_draws: usize,
    pub num_seeds: u64,
    pub output_dir: PathBuf,
    /// Receiver noise floor; receiver gains become SNR per mW of transmit
    /// power. Interference thresholds stay on raw gains.
    pub noise_dbm: f64,
    /// Hardware transmit power limit, applied when no neighbor cap binds.
    pub p_max_dbm: f64,
    /// Capacity back-off of the map-free baseline.
    pub womap_beta: f64,
    pub ue_psd_mode: UePsdMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            s_bits: 500e6,
            bandwidth_hz: 10e6,
            i_bs_dbm: -70.0,
            i_ue_dbm: vec![-70.0, -75.0, -80.0, -85.0, -90.0],
            lambda: vec![0.0, 100.0],
            delta: vec![1.0],
            horizon_s: 40.0,
            num_fading_draws: 1000,
            num_seeds: 1,
            output_dir: PathBuf::from("runs"),
            noise_dbm: -95.0,
            p_max_dbm: 35.0,
            womap_beta: 0.5,
            ue_psd_mode: UePsdMode::WorstCase,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        self.scenario.validate()?;
        let positives = [
            ("s_bits", self.s_bits),
            ("bandwidth_hz", self.bandwidth_hz),
            ("horizon_s", self.horizon_s),
            ("womap_beta", self.womap_beta),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlanError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.womap_beta > 1.0 {
            return Err(PlanError::Config(format!(
                "womap_beta must lie in (0, 1], got {}",
                self.womap_beta
            )));
        }
        for (name, v) in [
            ("i_bs_dbm", self.i_bs_dbm),
            ("noise_dbm", self.noise_dbm),
            ("p_max_dbm", self.p_max_dbm),
        ] {
            if !v.is_finite() {
                return Err(PlanError::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if self.lambda.is_empty() || self.lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(PlanError::Config(
                "lambda must be a non-empty list of nonnegative values".into(),
            ));
        }
        if self.delta.is_empty() {
            return Err(PlanError::Config("delta list must not be empty".into()));
        }
        for &d in &self.delta {
            if !(d > 0.0) || !d.is_finite() {
                return Err(PlanError::Config(format!(
                    "slot duration must be positive, got {d}"
                )));
            }
            let ratio = self.horizon_s / d;
            if ratio < 0.5 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                return Err(PlanError::Config(format!(
                    "slot duration {d} s does not divide the {} s horizon",
                    self.horizon_s
                )));
            }
        }
        if self.num_fading_draws == 0 {
            return Err(PlanError::Config("num_fading_draws must be at least 1".into()));
        }
        if self.num_seeds == 0 {
            return Err(PlanError::Config("num_seeds must be at least 1".into()));
        }
        for &t in &self.i_ue_dbm {
            if !t.is_finite() {
                return Err(PlanError::Config(format!(
                    "user threshold must be finite, got {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn slots_for(&self, delta: f64) -> usize {
        (self.horizon_s / delta).round() as usize
    }

    /// Deterministic instance settings for one `(lambda, delta)` cell.
    pub fn settings_for(&self, lambda_per_s: f64, delta: f64) -> InstanceSettings {
        InstanceSettings {
            demand: vec![
                self.s_bits / (self.bandwidth_hz * delta);
                self.scenario.num_receivers
            ],
            lambda: lambda_per_s * delta,
            slot_seconds: delta,
            i_bs_mw: dbm_to_mw(self.i_bs_dbm),
            p_max_mw: dbm_to_mw(self.p_max_dbm),
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// dBm of a milliwatt value, floored at −300 dBm so silent slots stay
/// finite in reports.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.max(1e-30).log10()
}

fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const FADING_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Concrete scenario data for one seed cell: the reseeded scenario, the
/// node tracks, and the radio map built along them. Every subcommand that
/// touches seed `k` goes through here, so they all see the same channels.
pub fn scenario_map(
    cfg: &ExperimentConfig,
    seed: u64,
    delta: f64,
) -> Result<(ScenarioConfig, Vec<NodeTrack>, RadioMap), PlanError> {
    let slots = cfg.slots_for(delta);
    let mut scenario = cfg.scenario.clone();
    scenario.rng_seed = mix64(cfg.scenario.rng_seed, seed);
    let mut rng = StdRng::seed_from_u64(scenario.rng_seed);
    let tracks = generate_tracks(&scenario, slots, delta, &mut rng)?;
    let map = build_radio_map(&scenario, &tracks, &mut rng)?;
    Ok((scenario, tracks, map))
}

/// Everything the `plan` subcommand saves for one cell.
#[derive(Debug, Clone)]
pub struct PlanArtifacts {
    pub scenario: ScenarioConfig,
    pub map: RadioMap,
    /// Instance built from the radio map — the ground truth the schedule is
    /// judged against.
    pub instance: ProblemInstance,
    /// Instance the schedule was optimized on; differs from `instance` only
    /// for the map-free scheme.
    pub planning_instance: ProblemInstance,
    pub planned: PlannedOutput,
}

/// Plans one `(scheme, seed, lambda, delta)` cell without evaluating it.
/// The reactive scheme is rejected: its transmissions depend on realized
/// channels, so there is nothing to precompute.
pub fn plan_cell(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    seed: u64,
    lambda_per_s: f64,
    delta: f64,
) -> Result<PlanArtifacts, PlanError> {
    cfg.validate()?;
    let (scenario, tracks, map) = scenario_map(cfg, seed, delta)?;
    let noise_mw = dbm_to_mw(cfg.noise_dbm);
    let settings = cfg.settings_for(lambda_per_s, delta);
    let solve_cfg = SolveConfig::default();
    match scheme {
        Scheme::Proposed => {
            let (instance, planned) =
                proposed_plan(&map, &scenario, noise_mw, &settings, &solve_cfg)?;
            Ok(PlanArtifacts {
                scenario,
                map,
                planning_instance: instance.clone(),
                instance,
                planned,
            })
        }
        Scheme::Womap => {
            let instance = planning_inputs(&map, &scenario, noise_mw)?.instance(&settings)?;
            let (planning_instance, planned) = predictive_womap(
                &scenario,
                &tracks,
                None,
                noise_mw,
                &settings,
                cfg.womap_beta,
                &solve_cfg,
            )?;
            Ok(PlanArtifacts {
                scenario,
                map,
                instance,
                planning_instance,
                planned,
            })
        }
        Scheme::BestEffort => Err(PlanError::Config(
            "the reactive scheme decides per realization; run `evaluate` instead of `plan`"
                .into(),
        )),
    }
}

/// Evaluation results for one `(scheme, seed, lambda, delta)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub scheme: Scheme,
    pub seed: u64,
    /// Activation penalty per second, as configured.
    pub lambda: f64,
    pub delta: f64,
    pub slots: usize,
    /// Per slot: strongest known-neighbor expected interference, dBm,
    /// estimated over the fading draws.
    pub bs_peak_dbm: Vec<f64>,
    /// Slots where some neighbor's estimated mean exceeds the threshold by
    /// more than three standard errors.
    pub bs_violation_slots: usize,
    pub ue_thresholds_dbm: Vec<f64>,
    /// `r(t)` per threshold: expected interfered users in slot `t`, divided
    /// by `N_ue·T`, so the slot curve sums to the cumulative ratio.
    pub interfered_ratio: Vec<Vec<f64>>,
    pub cumulative_ratio: Vec<f64>,
    /// Transmit energy term of the cost: `ΣΣ p·l` in mW-slots.
    pub energy: f64,
    /// Slots with any bandwidth in use; a mean over draws for the
    /// realization-dependent best-effort scheme.
    pub active_slots: f64,
    /// `energy + lambda·delta·active_slots`.
    pub total_cost: f64,
    /// Realized mean throughput over demand, per receiver.
    pub delivered_fraction: Vec<f64>,
    /// Optimality evidence of the planned schedule; absent for best-effort.
    pub certificate: Option<GapCertificate>,
    pub solve_seconds: f64,
    pub round_seconds: f64,
    pub evaluate_seconds: f64,
}

impl MetricsRecord {
    fn validate(&self) -> Result<(), PlanError> {
        let ratios_ok = self
            .interfered_ratio
            .iter()
            .flatten()
            .chain(&self.cumulative_ratio)
            .all(|&r| (0.0..=1.0).contains(&r));
        if !ratios_ok {
            return Err(PlanError::BadInstance(
                "interfered-user ratio left [0, 1]".into(),
            ));
        }
        if self.bs_peak_dbm.iter().any(|x| !x.is_finite()) {
            return Err(PlanError::BadInstance(
                "non-finite interference estimate".into(),
            ));
        }
        Ok(())
    }
}

/// Runs the full pipeline for one scheme over every `(seed, lambda, delta)`
/// cell of the config: generate the scenario, plan, then replay the plan
/// against `num_fading_draws` channel realizations. Deterministic per cell;
/// cells run in parallel.
pub fn run_pipeline(cfg: &ExperimentConfig, scheme: Scheme) -> Result<Vec<MetricsRecord>, PlanError> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for seed in 0..cfg.num_seeds {
        for &lambda in &cfg.lambda {
            for &delta in &cfg.delta {
                cells.push((seed, lambda, delta));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(seed, lambda, delta)| run_cell(cfg, scheme, seed, lambda, delta))
        .collect()
}

/// One pipeline cell; see [`run_pipeline`].
pub fn run_cell(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    seed: u64,
    lambda_per_s: f64,
    delta: f64,
) -> Result<MetricsRecord, PlanError> {
    let slots = cfg.slots_for(delta);
    let (scenario, tracks, map) = scenario_map(cfg, seed, delta)?;
    let noise_mw = dbm_to_mw(cfg.noise_dbm);
    let settings = cfg.settings_for(lambda_per_s, delta);
    let inst = planning_inputs(&map, &scenario, noise_mw)?.instance(&settings)?;
    let solve_cfg = SolveConfig::default();

    let mut solve_seconds = 0.0;
    let mut round_seconds = 0.0;
    let mut certificate = None;
    let fixed_plan: Option<Plan> = match scheme {
        Scheme::BestEffort => None,
        Scheme::Proposed | Scheme::Womap => {
            let plan_inst = if scheme == Scheme::Proposed {
                Cow::Borrowed(&inst)
            } else {
                let mut inputs = womap_prediction(&scenario, &tracks, noise_mw)?;
                for row in inputs.receiver_gain.iter_mut() {
                    for g in row.iter_mut() {
                        *g *= cfg.womap_beta;
                    }
                }
                Cow::Owned(inputs.instance(&settings)?)
            };
            let t0 = Instant::now();
            let outcome = solve_multi(&plan_inst, &solve_cfg)?;
            solve_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let rounded = round_plan(&outcome.plan, &plan_inst)?;
            certificate = Some(gap_certificate(&outcome.plan, &rounded, &plan_inst)?);
            let plan = rounded.to_plan(&plan_inst);
            round_seconds = t1.elapsed().as_secs_f64();
            Some(plan)
        }
    };

    let t_eval = Instant::now();
    let draws = cfg.num_fading_draws;
    let thr_mw: Vec<f64> = cfg.i_ue_dbm.iter().map(|&d| dbm_to_mw(d)).collect();
    let m = scenario.num_bs;
    let users = scenario.num_users;
    let rx = scenario.num_receivers;

    struct Partial {
        i_sum: Vec<f64>,
        i_sumsq: Vec<f64>,
        exceed: Vec<f64>,
        delivered: Vec<f64>,
        energy: f64,
        active: f64,
    }

    let partials: Vec<Result<Partial, PlanError>> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng =
                StdRng::seed_from_u64(mix64(scenario.rng_seed ^ FADING_SALT, d as u64));
            let real = ChannelRealization::draw(&map, &scenario, noise_mw, &settings, &mut rng)?;
            let plan: Cow<'_, Plan> = match &fixed_plan {
                Some(p) => Cow::Borrowed(p),
                None => Cow::Owned(best_effort(&real, &inst)),
            };
            let mut part = Partial {
                i_sum: vec![0.0; m * slots],
                i_sumsq: vec![0.0; m * slots],
                exceed: vec![0.0; thr_mw.len() * slots],
                delivered: vec![0.0; rx],
                energy: 0.0,
                active: 0.0,
            };
            for t in 0..slots {
                let mut worst = 0.0_f64;
                let mut inner = 0.0;
                let mut used = 0.0;
                for n in 0..rx {
                    let (p, l) = (plan.power[t][n], plan.frac[t][n]);
                    if l > 0.0 {
                        worst = worst.max(p);
                        part.delivered[n] += log2_1p(p * real.receiver_gain[t][n]) * l;
                    }
                    inner += p * l;
                    used += l;
                }
                part.energy += inner;
                if used > ACTIVE_TOL {
                    part.active += 1.0;
                }
                for j in 0..m {
                    let i = real.neighbor_gain[t][j] * worst;
                    part.i_sum[j * slots + t] += i;
                    part.i_sumsq[j * slots + t] += i * i;
                }
                let tx_ue = match cfg.ue_psd_mode {
                    UePsdMode::WorstCase => worst,
                    UePsdMode::InnerProduct => inner,
                };
                if tx_ue > 0.0 {
                    for q in 0..users {
                        let iq = real.user_gain[t][q] * tx_ue;
                        for (k, &thr) in thr_mw.iter().enumerate() {
                            if iq > thr {
                                part.exceed[k * slots + t] += 1.0;
                            }
                        }
                    }
                }
            }
            Ok(part)
        })
        .collect();

    let mut i_sum = vec![0.0; m * slots];
    let mut i_sumsq = vec![0.0; m * slots];
    let mut exceed = vec![0.0; thr_mw.len() * slots];
    let mut delivered = vec![0.0; rx];
    let mut energy = 0.0;
    let mut active = 0.0;
    for part in partials {
        let part = part?;
        for (a, b) in i_sum.iter_mut().zip(&part.i_sum) {
            *a += b;
        }
        for (a, b) in i_sumsq.iter_mut().zip(&part.i_sumsq) {
            *a += b;
        }
        for (a, b) in exceed.iter_mut().zip(&part.exceed) {
            *a += b;
        }
        for (a, b) in delivered.iter_mut().zip(&part.delivered) {
            *a += b;
        }
        energy += part.energy;
        active += part.active;
    }
    let nf = draws as f64;
    energy /= nf;
    active /= nf;

    let i_bs_mw = settings.i_bs_mw;
    let mut bs_peak_dbm = Vec::with_capacity(slots);
    let mut bs_violation_slots = 0;
    for t in 0..slots {
        let mut peak = 0.0_f64;
        let mut violated = false;
        for j in 0..m {
            let mean = i_sum[j * slots + t] / nf;
            let var = (i_sumsq[j * slots + t] / nf - mean * mean).max(0.0);
            let se = (var / nf).sqrt();
            peak = peak.max(mean);
            if mean > i_bs_mw + 3.0 * se {
                violated = true;
            }
        }
        bs_peak_dbm.push(mw_to_dbm(peak));
        if violated {
            bs_violation_slots += 1;
        }
    }

    let ratio_scale = if users > 0 {
        1.0 / (nf * users as f64 * slots as f64)
    } else {
        0.0
    };
    let interfered_ratio: Vec<Vec<f64>> = (0..thr_mw.len())
        .map(|k| {
            (0..slots)
                .map(|t| exceed[k * slots + t] * ratio_scale)
                .collect()
        })
        .collect();
    let cumulative_ratio: Vec<f64> = interfered_ratio
        .iter()
        .map(|row| row.iter().sum())
        .collect();
    let delivered_fraction: Vec<f64> = (0..rx)
        .map(|n| {
            if settings.demand[n] > 0.0 {
                delivered[n] / nf / settings.demand[n]
            } else {
                1.0
            }
        })
        .collect();

    let record = MetricsRecord {
        scheme,
        seed,
        lambda: lambda_per_s,
        delta,
        slots,
        bs_peak_dbm,
        bs_violation_slots,
        ue_thresholds_dbm: cfg.i_ue_dbm.clone(),
        interfered_ratio,
        cumulative_ratio,
        energy,
        active_slots: active,
        total_cost: energy + settings.lambda * active,
        delivered_fraction,
        certificate,
        solve_seconds,
        round_seconds,
        evaluate_seconds: t_eval.elapsed().as_secs_f64(),
    };
    record.validate()?;
    Ok(record)
}

/// Monte Carlo interfered-user ratio of a fixed plan: per slot, the expected
/// number of users whose received interference exceeds `i_ue_mw`, divided by
/// `N_ue·T`. `user_draws[d][t][q]` are realized user channel gains.
pub fn interfered_ratio(
    plan: &Plan,
    user_draws: &[Vec<Vec<f64>>],
    i_ue_mw: f64,
    mode: UePsdMode,
) -> Vec<f64> {
    let slots = plan.power.len();
    if user_draws.is_empty() || slots == 0 {
        return vec![0.0; slots];
    }
    let users = user_draws[0][0].len();
    if users == 0 {
        return vec![0.0; slots];
    }
    let scale = 1.0 / (user_draws.len() as f64 * users as f64 * slots as f64);
    let mut r = vec![0.0; slots];
    for draw in user_draws {
        for (t, gains) in draw.iter().enumerate() {
            let tx = match mode {
                UePsdMode::WorstCase => (0..plan.power[t].len())
                    .filter(|&n| plan.frac[t][n] > 0.0)
                    .map(|n| plan.power[t][n])
                    .fold(0.0_f64, f64::max),
                UePsdMode::InnerProduct => (0..plan.power[t].len())
                    .map(|n| plan.power[t][n] * plan.frac[t][n])
                    .sum(),
            };
            if tx <= 0.0 {
                continue;
            }
            r[t] += gains.iter().filter(|&&h| h * tx > i_ue_mw).count() as f64 * scale;
        }
    }
    r
}

/// One row of the slot-duration cost sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaSweepRow {
    pub delta: f64,
    /// Relaxed optimum — the lower bound.
    pub relaxed: f64,
    /// Cost of the rounded schedule.
    pub rounded: f64,
    /// Cost of executing the relaxed schedule as-is, paying for every
    /// partially used slot.
    pub unrounded: f64,
    /// `relaxed + N·delta·lambda`, the a-priori cap on the rounded cost.
    pub bound: f64,
}

/// Solves and rounds the first seed's scenario at every slot duration in the
/// config, at the largest configured activation penalty.
pub fn cost_vs_delta_sweep(cfg: &ExperimentConfig) -> Result<Vec<DeltaSweepRow>, PlanError> {
    cfg.validate()?;
    let lambda_per_s = cfg.lambda.iter().cloned().fold(0.0, f64::max);
    cfg.delta
        .par_iter()
        .map(|&delta| {
            let (scenario, _tracks, map) = scenario_map(cfg, 0, delta)?;
            let noise_mw = dbm_to_mw(cfg.noise_dbm);
            let settings = cfg.settings_for(lambda_per_s, delta);
            let inst = planning_inputs(&map, &scenario, noise_mw)?.instance(&settings)?;
            let outcome = solve_multi(&inst, &SolveConfig::default())?;
            let rounded = round_plan(&outcome.plan, &inst)?;
            let cert = gap_certificate(&outcome.plan, &rounded, &inst)?;
            let unrounded = cost_original(&outcome.plan.to_plan(&inst), &inst)?;
            Ok(DeltaSweepRow {
                delta,
                relaxed: outcome.relaxed_cost,
                rounded: cert.rounded_cost,
                unrounded,
                bound: outcome.relaxed_cost
                    + scenario.num_receivers as f64 * delta * lambda_per_s,
            })
        })
        .collect()
}

/// Wall-clock medians for one problem size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub slots: usize,
    pub receivers: usize,
    pub solve_median_s: f64,
    pub round_median_s: f64,
    /// Only measured at sizes the reference solver handles in reasonable
    /// time (`slots·receivers ≤ 1024`).
    pub reference_median_s: Option<f64>,
}

/// Timing table plus log-log fits of the scaling trends.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Slope of `log(solve time)` vs `log(T)` at the widest-covered
    /// receiver count; near 1 for the per-iteration `O(NT)` structure.
    pub solve_exponent: Option<f64>,
    /// Slope of `log(round time)` vs `log(N·T·log2 T)`; 1 means exact
    /// `O(NT log T)` scaling.
    pub round_exponent: Option<f64>,
}

/// Random planning instance used for benchmarks and solver cross-checks:
/// raw gains log-uniform in `[1e-9, 1e-3]`, fading shapes from 1 to 30,
/// power caps 20–35 dBm, demands a feasible fraction of each receiver's
/// deliverable maximum.
pub fn random_instance(slots: usize, receivers: usize, seed: u64) -> ProblemInstance {
    let mut rng = StdRng::seed_from_u64(mix64(0xA0B1_C2D3_E4F5_0617, seed));
    let mut gain = vec![vec![0.0; receivers]; slots];
    let mut eps = vec![vec![0.0; receivers]; slots];
    for row in gain.iter_mut() {
        for g in row.iter_mut() {
            *g = 10f64.powf(rng.random_range(-9.0..=-3.0));
        }
    }
    for row in eps.iter_mut() {
        for e in row.iter_mut() {
            *e = capacity_gap(rng.random_range(1..=30) as f64);
        }
    }
    let power_cap: Vec<f64> = (0..slots)
        .map(|_| dbm_to_mw(rng.random_range(20.0..=35.0)))
        .collect();
    let lambda = 10f64.powf(rng.random_range(-0.3..=1.7));
    let inst = ProblemInstance::new(
        gain,
        eps,
        power_cap,
        vec![0.0; receivers],
        lambda,
        1.0,
    )
    .expect("positive dimensions");
    let share = rng.random_range(0.2..=0.6) / receivers as f64;
    let demand: Vec<f64> = (0..receivers)
        .map(|n| share * inst.max_deliverable(n))
        .collect();
    ProblemInstance { demand, ..inst }
}

/// Builds the timing family: same channel statistics as
/// [`random_instance`] but with the load pinned — every cell carries 40%
/// of joint capacity at one activation price — so runtimes across sizes
/// differ by dimension rather than by how contested the draw happened to
/// be.
pub fn bench_instance(slots: usize, receivers: usize) -> ProblemInstance {
    let cell = mix64(slots as u64, receivers as u64);
    let mut rng = StdRng::seed_from_u64(mix64(0x7C15_8A2E_44D0_91BB, cell));
    let mut gain = vec![vec![0.0; receivers]; slots];
    let mut eps = vec![vec![0.0; receivers]; slots];
    for row in gain.iter_mut() {
        for g in row.iter_mut() {
            *g = 10f64.powf(rng.random_range(-9.0..=-3.0));
        }
    }
    for row in eps.iter_mut() {
        for e in row.iter_mut() {
            *e = capacity_gap(rng.random_range(1..=30) as f64);
        }
    }
    let power_cap: Vec<f64> = (0..slots)
        .map(|_| dbm_to_mw(rng.random_range(20.0..=35.0)))
        .collect();
    let inst = ProblemInstance::new(gain, eps, power_cap, vec![0.0; receivers], 3.0, 1.0)
        .expect("positive dimensions");
    let share = 0.95 / receivers as f64;
    let demand: Vec<f64> = (0..receivers)
        .map(|n| share * inst.max_deliverable(n))
        .collect();
    ProblemInstance { demand, ..inst }
}

const REFERENCE_BENCH_CELL_LIMIT: usize = 1024;

/// Measures solve and round wall-clock medians over every `(T, N)` pair,
/// optionally timing the reference solver where tractable, and fits the
/// scaling exponents described on [`BenchReport`].
pub fn runtime_benchmark(
    t_list: &[usize],
    n_list: &[usize],
    repetitions: usize,
    with_reference: bool,
) -> BenchReport {
    let reps = repetitions.max(1);
    let mut rows = Vec::new();
    for &n in n_list {
        for &t in t_list {
            let inst = bench_instance(t, n);
            let cfg = SolveConfig {
                keep_trace: false,
                ..SolveConfig::default()
            };
            let mut solve_times = Vec::with_capacity(reps);
            let mut round_times = Vec::with_capacity(reps);
            let mut reference_times = Vec::new();
            for _ in 0..reps {
                let t0 = Instant::now();
                let outcome = solve_multi(&inst, &cfg).expect("benchmark instance solvable");
                solve_times.push(t0.elapsed().as_secs_f64());
                let t1 = Instant::now();
                let _ = round_plan(&outcome.plan, &inst).expect("benchmark rounding");
                round_times.push(t1.elapsed().as_secs_f64());
                if with_reference && t * n <= REFERENCE_BENCH_CELL_LIMIT {
                    let t2 = Instant::now();
                    let _ = reference_solver(&inst).expect("reference on benchmark instance");
                    reference_times.push(t2.elapsed().as_secs_f64());
                }
            }
            rows.push(BenchRow {
                slots: t,
                receivers: n,
                solve_median_s: median(&mut solve_times),
                round_median_s: median(&mut round_times),
                reference_median_s: if reference_times.is_empty() {
                    None
                } else {
                    Some(median(&mut reference_times))
                },
            });
        }
    }

    let fit_n = n_list.iter().cloned().max();
    let solve_exponent = fit_n.and_then(|n| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.receivers == n)
            .map(|r| (r.slots as f64, r.solve_median_s))
            .collect();
        loglog_slope(&pts)
    });
    let round_exponent = {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| {
                (
                    r.receivers as f64 * r.slots as f64 * (r.slots as f64).log2().max(1.0),
                    r.round_median_s,
                )
            })
            .collect();
        loglog_slope(&pts)
    };
    BenchReport {
        rows,
        solve_exponent,
        round_exponent,
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Least-squares slope of `log y` against `log x`; needs two distinct
/// positive abscissae.
fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::feasibility_check;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioConfig {
                num_receivers: 2,
                num_bs: 2,
                num_users: 5,
                rng_seed: 11,
                ..ScenarioConfig::default()
            },
            s_bits: 40e6,
            horizon_s: 8.0,
            num_fading_draws: 16,
            lambda: vec![0.0, 5.0],
            delta: vec![1.0],
            i_ue_dbm: vec![-60.0, -80.0],
            ..ExperimentConfig::default()
        }
    }

    /// The default scenario is heavily loaded — every slot is contested, so
    /// the dual sits on a degenerate vertex where some ties cannot be
    /// closed exactly and the solver must fall back to its gap certificate.
    #[test]
    fn default_scale_instances_solve_for_both_lambdas() {
        let cfg = ExperimentConfig::default();
        let (scenario, _tracks, map) = scenario_map(&cfg, 0, 1.0).unwrap();
        let noise = dbm_to_mw(cfg.noise_dbm);
        for lambda in [0.0, 100.0] {
            let settings = cfg.settings_for(lambda, 1.0);
            let inst = planning_inputs(&map, &scenario, noise)
                .unwrap()
                .instance(&settings)
                .unwrap();
            let out = solve_multi(&inst, &SolveConfig::default())
                .unwrap_or_else(|e| panic!("lambda {lambda}: {e}"));
            let plan = out.plan.to_plan(&inst);
            plan.validate(inst.slots, inst.receivers).unwrap();
            for n in 0..inst.receivers {
                let delivered: f64 = (0..inst.slots).map(|t| out.plan.phi[t][n]).sum();
                assert!(
                    delivered >= inst.demand[n] * (1.0 - 1e-6),
                    "lambda {lambda} receiver {n}: delivered {delivered} of {}",
                    inst.demand[n]
                );
            }
        }
    }

    #[test]
    fn config_rejects_nondividing_delta() {
        let cfg = ExperimentConfig {
            delta: vec![3.0],
            horizon_s: 40.0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PlanError::Config(_))));
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn pipeline_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let a = run_pipeline(&cfg, Scheme::Proposed).unwrap();
        let b = run_pipeline(&cfg, Scheme::Proposed).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.bs_peak_dbm, y.bs_peak_dbm);
            assert_eq!(x.interfered_ratio, y.interfered_ratio);
            assert_eq!(x.energy.to_bits(), y.energy.to_bits());
            assert_eq!(x.total_cost.to_bits(), y.total_cost.to_bits());
        }
    }

    #[test]
    fn proposed_never_flags_bs_violations() {
        let cfg = tiny_config();
        for rec in run_pipeline(&cfg, Scheme::Proposed).unwrap() {
            assert_eq!(rec.bs_violation_slots, 0, "lambda {}", rec.lambda);
            assert!(rec.certificate.is_some());
            for f in &rec.delivered_fraction {
                assert!(*f > 0.5, "realized delivery collapsed: {f}");
            }
        }
    }

    #[test]
    fn higher_lambda_uses_fewer_slots() {
        let cfg = tiny_config();
        let recs = run_pipeline(&cfg, Scheme::Proposed).unwrap();
        let low = recs.iter().find(|r| r.lambda == 0.0).unwrap();
        let high = recs.iter().find(|r| r.lambda == 5.0).unwrap();
        assert!(high.active_slots <= low.active_slots + 1e-9);
    }

    #[test]
    fn plan_cell_matches_pipeline_certificates() {
        let cfg = ExperimentConfig {
            lambda: vec![5.0],
            ..tiny_config()
        };
        let art = plan_cell(&cfg, Scheme::Proposed, 0, 5.0, 1.0).unwrap();
        let rec = &run_pipeline(&cfg, Scheme::Proposed).unwrap()[0];
        let cert = rec.certificate.as_ref().unwrap();
        assert_eq!(art.planned.certificate.rounded_cost, cert.rounded_cost);
        assert_eq!(art.planned.certificate.relaxed_cost, cert.relaxed_cost);
        assert_eq!(art.instance, art.planning_instance);

        let womap = plan_cell(&cfg, Scheme::Womap, 0, 5.0, 1.0).unwrap();
        assert_ne!(womap.instance, womap.planning_instance);
        assert!(matches!(
            plan_cell(&cfg, Scheme::BestEffort, 0, 5.0, 1.0),
            Err(PlanError::Config(_))
        ));
    }

    #[test]
    fn best_effort_records_have_no_certificate() {
        let cfg = ExperimentConfig {
            lambda: vec![5.0],
            ..tiny_config()
        };
        let recs = run_pipeline(&cfg, Scheme::BestEffort).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].certificate.is_none());
        assert!(recs[0].solve_seconds == 0.0);
        for row in &recs[0].interfered_ratio {
            for &r in row {
                assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn interfered_ratio_counts_single_deterministic_user() {
        let slots = 4;
        let mut plan = Plan::zeros(slots, 1);
        plan.power[1][0] = 10.0;
        plan.frac[1][0] = 1.0;
        // One user, channel gain 1.0 in every slot, one draw.
        let draws = vec![vec![vec![1.0]; slots]];
        let r = interfered_ratio(&plan, &draws, 5.0, UePsdMode::WorstCase);
        assert_eq!(r.len(), slots);
        assert_eq!(r[1], 1.0 / slots as f64);
        assert!(r.iter().enumerate().all(|(t, &x)| t == 1 || x == 0.0));
        let none = interfered_ratio(&Plan::zeros(slots, 1), &draws, 5.0, UePsdMode::WorstCase);
        assert!(none.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn interfered_ratio_literal_mode_uses_band_average() {
        let mut plan = Plan::zeros(1, 2);
        plan.power[0][0] = 10.0;
        plan.frac[0][0] = 0.1;
        plan.power[0][1] = 1.0;
        plan.frac[0][1] = 0.9;
        let draws = vec![vec![vec![1.0]]];
        // Worst case sees 10; the inner product sees 1.9.
        let hot = interfered_ratio(&plan, &draws, 5.0, UePsdMode::WorstCase);
        let cool = interfered_ratio(&plan, &draws, 5.0, UePsdMode::InnerProduct);
        assert_eq!(hot[0], 1.0);
        assert_eq!(cool[0], 0.0);
    }

    #[test]
    fn delta_sweep_keeps_the_sandwich() {
        let cfg = ExperimentConfig {
            delta: vec![0.5, 1.0, 2.0],
            lambda: vec![0.0, 8.0],
            ..tiny_config()
        };
        let rows = cost_vs_delta_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert!(row.relaxed <= row.rounded * (1.0 + 1e-9));
            assert!(row.rounded <= row.bound * (1.0 + 1e-9));
            assert!(row.unrounded >= row.rounded - 1e-9 * row.rounded.abs());
        }
    }

    #[test]
    fn random_instances_are_feasible_and_reproducible() {
        for seed in 0..20 {
            let inst = random_instance(12, 3, seed);
            inst.validate().unwrap();
            for n in 0..3 {
                assert!(inst.demand[n] <= inst.max_deliverable(n));
            }
            assert_eq!(inst, random_instance(12, 3, seed));
        }
    }

    #[test]
    fn random_instances_solve_and_round() {
        for seed in [1, 5, 9] {
            let inst = random_instance(10, 2, seed);
            let outcome = solve_multi(&inst, &SolveConfig::default()).unwrap();
            let rounded = round_plan(&outcome.plan, &inst).unwrap();
            let plan = rounded.to_plan(&inst);
            assert!(feasibility_check(&plan, &inst).is_empty());
        }
    }

    #[test]
    #[ignore]
    fn probe_bench_iterations() {
        for t in [100usize, 1000, 10000] {
            let inst = bench_instance(t, 4);
            let cfg = SolveConfig {
                keep_trace: false,
                ..SolveConfig::default()
            };
            let t0 = Instant::now();
            let out = solve_multi(&inst, &cfg).unwrap();
            eprintln!(
                "T={t} iters={} residual={:.3e} time={:.4}s",
                out.iterations,
                out.residual,
                t0.elapsed().as_secs_f64()
            );
        }
    }

    #[test]
    fn bench_instances_are_deterministic_and_feasible() {
        for (t, n) in [(8, 2), (64, 4)] {
            let inst = bench_instance(t, n);
            inst.validate().unwrap();
            for r in 0..n {
                assert!(inst.demand[r] <= inst.max_deliverable(r));
            }
            assert!(inst.demand.iter().sum::<f64>() > 0.0);
            assert_eq!(inst, bench_instance(t, n));
        }
    }

    #[test]
    fn benchmark_reports_medians_and_fits() {
        let report = runtime_benchmark(&[8, 16], &[2], 3, true);
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert!(row.solve_median_s > 0.0);
            assert!(row.round_median_s >= 0.0);
            assert!(row.reference_median_s.is_some());
        }
        assert!(report.solve_exponent.is_some());

        let skipped = runtime_benchmark(&[8], &[2], 1, false);
        assert!(skipped.rows[0].reference_median_s.is_none());
    }

    #[test]
    fn loglog_slope_recovers_powers() {
        let pts: Vec<(f64, f64)> = (1..6).map(|k| (k as f64, (k as f64).powi(2))).collect();
        let s = loglog_slope(&pts).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!(loglog_slope(&[(1.0, 1.0)]).is_none());
    }

    #[test]
    fn dbm_round_trip() {
        assert!((dbm_to_mw(0.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_mw(-70.0) - 1e-7).abs() < 1e-21);
        assert!((mw_to_dbm(dbm_to_mw(-82.5)) + 82.5).abs() < 1e-9);
        assert_eq!(mw_to_dbm(0.0), -300.0);
    }
}
