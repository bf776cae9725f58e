//! Comparison schemes and shared planning plumbing: a causal best-effort
//! transmitter reacting to instantaneous channels, a predictive planner that
//! substitutes probabilistic channel-model gains for the radio map, and the
//! solve-then-round tail every predictive scheme runs.

use crate::channel::{mean_path_gain, sample_fading, NodeRole, NodeTrack, RadioMap, ScenarioConfig};
use crate::problem::{capacity_gap, log2_1p, InstanceSettings, Plan, PhiPlan, ProblemInstance};
use crate::rounding::{gap_certificate, round_plan, GapCertificate};
use crate::solver::{solve_multi, MultiOutcome, SolveConfig};
use crate::PlanError;
use rand::Rng;

/// Channel predictions feeding instance construction: receiver gains in SNR
/// per unit power, receiver capacity margins, and raw neighbor gains for the
/// interference caps.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningInputs {
    pub receiver_gain: Vec<Vec<f64>>,
    pub receiver_eps: Vec<Vec<f64>>,
    pub neighbor_gain: Vec<Vec<f64>>,
}

impl PlanningInputs {
    pub fn instance(&self, settings: &InstanceSettings) -> Result<ProblemInstance, PlanError> {
        ProblemInstance::from_predictions(
            self.receiver_gain.clone(),
            self.receiver_eps.clone(),
            &self.neighbor_gain,
            settings,
        )
    }
}

/// Extracts planning inputs from a radio map: receiver gains noise-normalized,
/// margins from each link's fading shape, neighbor gains left raw.
pub fn planning_inputs(
    map: &RadioMap,
    cfg: &ScenarioConfig,
    noise_mw: f64,
) -> Result<PlanningInputs, PlanError> {
    if !(noise_mw > 0.0) {
        return Err(PlanError::Config(format!(
            "noise power must be positive, got {noise_mw} mW"
        )));
    }
    let slots = map.slots;
    let n = cfg.num_receivers;
    let m = cfg.num_bs;
    let mut receiver_gain = vec![vec![0.0; n]; slots];
    let mut receiver_eps = vec![vec![0.0; n]; slots];
    let mut neighbor_gain = vec![vec![0.0; m]; slots];
    for id in 1..=n {
        let link = map.link(id).ok_or_else(|| {
            PlanError::BadInstance(format!("radio map is missing receiver link {id}"))
        })?;
        for t in 0..slots {
            receiver_gain[t][id - 1] = link.params[t].g / noise_mw;
            receiver_eps[t][id - 1] = capacity_gap(link.params[t].kappa);
        }
    }
    for id in (n + 1)..=(n + m) {
        let link = map.link(id).ok_or_else(|| {
            PlanError::BadInstance(format!("radio map is missing neighbor link {id}"))
        })?;
        for t in 0..slots {
            neighbor_gain[t][id - n - 1] = link.params[t].g;
        }
    }
    Ok(PlanningInputs {
        receiver_gain,
        receiver_eps,
        neighbor_gain,
    })
}

/// A planned schedule with its optimality evidence.
#[derive(Debug, Clone)]
pub struct PlannedOutput {
    pub outcome: MultiOutcome,
    pub rounded: PhiPlan,
    pub plan: Plan,
    pub certificate: GapCertificate,
}

/// The planning tail shared by the predictive schemes: solve the relaxation,
/// round, certify the gap.
pub fn solve_and_round(
    inst: &ProblemInstance,
    solve_cfg: &SolveConfig,
) -> Result<PlannedOutput, PlanError> {
    let outcome = solve_multi(inst, solve_cfg)?;
    let rounded = round_plan(&outcome.plan, inst)?;
    let certificate = gap_certificate(&outcome.plan, &rounded, inst)?;
    let plan = rounded.to_plan(inst);
    Ok(PlannedOutput {
        outcome,
        rounded,
        plan,
        certificate,
    })
}

/// Full predictive pipeline on the radio map: build the instance from the
/// map's predictions, solve, round.
pub fn proposed_plan(
    map: &RadioMap,
    cfg: &ScenarioConfig,
    noise_mw: f64,
    settings: &InstanceSettings,
    solve_cfg: &SolveConfig,
) -> Result<(ProblemInstance, PlannedOutput), PlanError> {
    let inputs = planning_inputs(map, cfg, noise_mw)?;
    let inst = inputs.instance(settings)?;
    let output = solve_and_round(&inst, solve_cfg)?;
    Ok((inst, output))
}

/// Predictive planning without a radio map: receiver and neighbor gains come
/// from the LOS-probability-weighted mean path loss along the known tracks,
/// receiver gains are backed off by `beta` against unmodeled fading, and the
/// capacity margin is zero since fading shapes are unknown. Supplying a
/// concrete map instead uses its gains and margins, so `beta = 1` with the
/// true map reproduces the proposed scheme exactly.
pub fn predictive_womap(
    cfg: &ScenarioConfig,
    tracks: &[NodeTrack],
    predicted: Option<&RadioMap>,
    noise_mw: f64,
    settings: &InstanceSettings,
    beta: f64,
    solve_cfg: &SolveConfig,
) -> Result<(ProblemInstance, PlannedOutput), PlanError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(PlanError::Config(format!(
            "back-off beta must lie in (0, 1], got {beta}"
        )));
    }
    let mut inputs = match predicted {
        Some(map) => planning_inputs(map, cfg, noise_mw)?,
        None => womap_prediction(cfg, tracks, noise_mw)?,
    };
    for row in inputs.receiver_gain.iter_mut() {
        for g in row.iter_mut() {
            *g *= beta;
        }
    }
    let inst = inputs.instance(settings)?;
    let output = solve_and_round(&inst, solve_cfg)?;
    Ok((inst, output))
}

/// Mean-path-loss predictions along the known tracks, no shadowing, zero
/// capacity margin.
pub fn womap_prediction(
    cfg: &ScenarioConfig,
    tracks: &[NodeTrack],
    noise_mw: f64,
) -> Result<PlanningInputs, PlanError> {
    if !(noise_mw > 0.0) {
        return Err(PlanError::Config(format!(
            "noise power must be positive, got {noise_mw} mW"
        )));
    }
    let tx = tracks
        .iter()
        .find(|t| t.node_id == 0)
        .ok_or_else(|| PlanError::BadInstance("tracks are missing the transmitter".into()))?;
    let slots = tx.positions.len();
    let n = cfg.num_receivers;
    let m = cfg.num_bs;
    let mut receiver_gain = vec![vec![0.0; n]; slots];
    let mut neighbor_gain = vec![vec![0.0; m]; slots];
    for track in tracks {
        let role = cfg.role_of(track.node_id)?;
        let (col, width) = match role {
            NodeRole::Receiver => (track.node_id - 1, n),
            NodeRole::Neighbor => (track.node_id - 1 - n, m),
            _ => continue,
        };
        if track.positions.len() != slots || col >= width {
            return Err(PlanError::BadInstance(format!(
                "track for node {} is inconsistent with the scenario",
                track.node_id
            )));
        }
        for t in 0..slots {
            let g = mean_path_gain(&tx.positions[t], &track.positions[t], cfg)?;
            match role {
                NodeRole::Receiver => receiver_gain[t][col] = g / noise_mw,
                NodeRole::Neighbor => neighbor_gain[t][col] = g,
                _ => unreachable!(),
            }
        }
    }
    Ok(PlanningInputs {
        receiver_eps: vec![vec![0.0; n]; slots],
        receiver_gain,
        neighbor_gain,
    })
}

/// One realization of the instantaneous channels over the horizon: receiver
/// links in SNR per unit power, neighbor and user links raw, all scaled by
/// their own fading draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub receiver_gain: Vec<Vec<f64>>,
    pub neighbor_gain: Vec<Vec<f64>>,
    pub user_gain: Vec<Vec<f64>>,
    pub i_bs_mw: f64,
    pub p_max_mw: f64,
}

impl ChannelRealization {
    /// Draws independent per-slot fading on every receiver, neighbor, and
    /// user link of the map.
    pub fn draw(
        map: &RadioMap,
        cfg: &ScenarioConfig,
        noise_mw: f64,
        settings: &InstanceSettings,
        rng: &mut impl Rng,
    ) -> Result<Self, PlanError> {
        let inputs = planning_inputs(map, cfg, noise_mw)?;
        let slots = map.slots;
        let mut receiver_gain = inputs.receiver_gain;
        let mut neighbor_gain = inputs.neighbor_gain;
        for n in 0..cfg.num_receivers {
            let kappa = map
                .link(1 + n)
                .expect("validated by planning_inputs")
                .params[0]
                .kappa;
            for t in 0..slots {
                receiver_gain[t][n] *= sample_fading(kappa, rng);
            }
        }
        for m in 0..cfg.num_bs {
            let kappa = map
                .link(1 + cfg.num_receivers + m)
                .expect("validated by planning_inputs")
                .params[0]
                .kappa;
            for t in 0..slots {
                neighbor_gain[t][m] *= sample_fading(kappa, rng);
            }
        }
        let mut user_gain = vec![vec![0.0; cfg.num_users]; slots];
        for q in 0..cfg.num_users {
            let id = 1 + cfg.num_receivers + cfg.num_bs + q;
            let link = map.link(id).ok_or_else(|| {
                PlanError::BadInstance(format!("radio map is missing user link {id}"))
            })?;
            for t in 0..slots {
                user_gain[t][q] = link.params[t].g * sample_fading(link.params[t].kappa, rng);
            }
        }
        Ok(Self {
            receiver_gain,
            neighbor_gain,
            user_gain,
            i_bs_mw: settings.i_bs_mw,
            p_max_mw: settings.p_max_mw,
        })
    }
}

/// Causal best-effort transmission: each slot splits the band equally among
/// receivers whose realized cumulative throughput still falls short, sends at
/// the instantaneous interference-capped power, and stops a receiver once its
/// demand is met. Never fails; may under-deliver within the horizon.
pub fn best_effort(real: &ChannelRealization, inst: &ProblemInstance) -> Plan {
    let slots = inst.slots;
    let rx = inst.receivers;
    assert_eq!(real.receiver_gain.len(), slots, "realization slot mismatch");
    let mut plan = Plan::zeros(slots, rx);
    let mut delivered = vec![0.0; rx];
    for t in 0..slots {
        assert_eq!(real.receiver_gain[t].len(), rx, "realization width mismatch");
        let unmet: Vec<usize> = (0..rx)
            .filter(|&n| delivered[n] < inst.demand[n] && inst.demand[n] > 0.0)
            .collect();
        if unmet.is_empty() {
            continue;
        }
        let worst_neighbor = real.neighbor_gain[t]
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b));
        let cap = if worst_neighbor > 0.0 {
            (real.i_bs_mw / worst_neighbor).min(real.p_max_mw)
        } else {
            real.p_max_mw
        };
        for &gm in &real.neighbor_gain[t] {
            assert!(
                cap * gm <= real.i_bs_mw * (1.0 + 1e-9),
                "instantaneous interference cap violated at slot {t}"
            );
        }
        let share = 1.0 / unmet.len() as f64;
        for &n in &unmet {
            plan.power[t][n] = cap;
            plan.frac[t][n] = share;
            delivered[n] += log2_1p(cap * real.receiver_gain[t][n]) * share;
        }
    }
    plan
}
