//! Scenario geometry and radio-map construction: node tracks, 3GPP UMi path
//! loss, elevation-based line-of-sight, distance-correlated shadowing, and
//! per-link small-scale fading statistics.

use crate::PlanError;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

/// Node position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, PlanError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(PlanError::BadInstance(
                "position coordinates must be finite".into(),
            ));
        }
        if z < 0.0 {
            return Err(PlanError::BadInstance(format!(
                "position altitude must be nonnegative, got {z}"
            )));
        }
        Ok(Self { x, y, z })
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Role of a node, decoded from its position in the id space: 0 is the
/// transmitter, then receivers, then neighboring base stations, then
/// evaluation-only users with unknown locations at planning time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Transmitter,
    Receiver,
    Neighbor,
    User,
}

/// One node's trajectory over the horizon, one position per slot.
#[derive(Debug, Clone)]
pub struct NodeTrack {
    pub node_id: usize,
    pub positions: Vec<Position>,
    pub speed_mps: f64,
}

impl NodeTrack {
    /// Checks length and that no step exceeds what the node's speed allows.
    pub fn validate(&self, slots: usize, slot_seconds: f64) -> Result<(), PlanError> {
        if self.positions.len() != slots {
            return Err(PlanError::BadInstance(format!(
                "track for node {} has {} positions, expected {slots}",
                self.node_id,
                self.positions.len()
            )));
        }
        let reach = self.speed_mps * slot_seconds * (1.0 + 1e-9) + 1e-9;
        for (t, pair) in self.positions.windows(2).enumerate() {
            let step = pair[0].distance(&pair[1]);
            if step > reach {
                return Err(PlanError::BadInstance(format!(
                    "node {} moves {step:.3} m between slots {t} and {} but can reach {reach:.3} m",
                    self.node_id,
                    t + 1
                )));
            }
        }
        Ok(())
    }
}

/// Large-scale channel state of one link in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    /// Linear power gain, path loss and shadowing combined.
    pub g: f64,
    /// Gamma shape of the small-scale fading factor.
    pub kappa: f64,
    pub los: bool,
}

/// Geometry, propagation, and randomness settings for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub area_size_m: f64,
    pub num_bs: usize,
    pub num_users: usize,
    pub num_receivers: usize,
    pub tx_height_m: f64,
    pub receiver_height_m: f64,
    pub bs_height_m: f64,
    pub user_height_m: f64,
    pub tx_speed_mps: f64,
    pub receiver_speed_mps: f64,
    pub carrier_freq_ghz: f64,
    pub shadowing_std_db: f64,
    pub shadowing_corr_dist_m: f64,
    pub los_a: f64,
    pub los_b: f64,
    pub los_threshold: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_size_m: 200.0,
            num_bs: 5,
            num_users: 100,
            num_receivers: 4,
            tx_height_m: 100.0,
            receiver_height_m: 100.0,
            bs_height_m: 10.0,
            user_height_m: 0.0,
            tx_speed_mps: 5.0,
            receiver_speed_mps: 3.0,
            carrier_freq_ghz: 3.0,
            shadowing_std_db: 8f64.sqrt(),
            shadowing_corr_dist_m: 5.0,
            los_a: 11.95,
            los_b: 0.14,
            los_threshold: 0.5,
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let positives = [
            ("area_size_m", self.area_size_m),
            ("tx_height_m", self.tx_height_m),
            ("carrier_freq_ghz", self.carrier_freq_ghz),
            ("shadowing_corr_dist_m", self.shadowing_corr_dist_m),
            ("los_a", self.los_a),
            ("los_b", self.los_b),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlanError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonnegatives = [
            ("receiver_height_m", self.receiver_height_m),
            ("bs_height_m", self.bs_height_m),
            ("user_height_m", self.user_height_m),
            ("tx_speed_mps", self.tx_speed_mps),
            ("receiver_speed_mps", self.receiver_speed_mps),
            ("shadowing_std_db", self.shadowing_std_db),
        ];
        for (name, v) in nonnegatives {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(PlanError::Config(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.num_receivers == 0 {
            return Err(PlanError::Config("num_receivers must be at least 1".into()));
        }
        if !(self.los_threshold > 0.0 && self.los_threshold < 1.0) {
            return Err(PlanError::Config(format!(
                "los_threshold must lie in (0, 1), got {}",
                self.los_threshold
            )));
        }
        Ok(())
    }

    /// Total node count: transmitter, receivers, neighbors, users.
    pub fn node_count(&self) -> usize {
        1 + self.num_receivers + self.num_bs + self.num_users
    }

    pub fn role_of(&self, node_id: usize) -> Result<NodeRole, PlanError> {
        let n = self.num_receivers;
        let m = self.num_bs;
        if node_id == 0 {
            Ok(NodeRole::Transmitter)
        } else if node_id <= n {
            Ok(NodeRole::Receiver)
        } else if node_id <= n + m {
            Ok(NodeRole::Neighbor)
        } else if node_id < self.node_count() {
            Ok(NodeRole::User)
        } else {
            Err(PlanError::BadInstance(format!(
                "node id {node_id} is outside the scenario's {} nodes",
                self.node_count()
            )))
        }
    }

    /// Altitude above which a node counts as airborne: strictly higher than
    /// every ground role. Links with both ends airborne are line-of-sight
    /// with no shadowing.
    fn ground_ceiling(&self) -> f64 {
        self.bs_height_m.max(self.user_height_m)
    }
}

/// 3GPP UMi path loss in dB for a 3D distance in meters and carrier in GHz.
pub fn path_loss_umi(distance_m: f64, carrier_ghz: f64, los: bool) -> Result<f64, PlanError> {
    if !(distance_m > 0.0) || !(carrier_ghz > 0.0) {
        return Err(PlanError::BadInstance(format!(
            "path loss needs positive distance and carrier, got d={distance_m}, fc={carrier_ghz}"
        )));
    }
    let d = distance_m.log10();
    let f = carrier_ghz.log10();
    Ok(if los {
        22.0 + 28.0 * d + 20.0 * f
    } else {
        22.7 + 36.7 * d + 26.0 * f
    })
}

/// Probability of line of sight at an elevation angle in degrees.
pub fn los_probability(elevation_deg: f64, a: f64, b: f64) -> Result<f64, PlanError> {
    if !(a > 0.0 && b > 0.0) {
        return Err(PlanError::Config(format!(
            "LOS model parameters must be positive, got a={a}, b={b}"
        )));
    }
    if !(0.0..=90.0).contains(&elevation_deg) {
        return Err(PlanError::BadInstance(format!(
            "elevation must lie in [0, 90] degrees, got {elevation_deg}"
        )));
    }
    Ok(1.0 / (1.0 + a * (-b * (elevation_deg - a)).exp()))
}

/// Elevation angle of the link in degrees, from relative height over 3D
/// distance.
pub fn elevation_deg(tx: &Position, rx: &Position) -> Result<f64, PlanError> {
    let d = tx.distance(rx);
    if d <= 0.0 {
        return Err(PlanError::BadInstance(
            "elevation is undefined for coincident positions".into(),
        ));
    }
    let u = (tx.z - rx.z).abs();
    Ok((u / d).min(1.0).asin().to_degrees())
}

/// Whether a link is in line of sight: airborne-to-airborne links always are;
/// links to ground nodes are when the LOS probability at the link's elevation
/// clears the configured threshold.
pub fn los_state(tx: &Position, rx: &Position, cfg: &ScenarioConfig) -> Result<bool, PlanError> {
    if tx.distance(rx) <= 0.0 {
        return Err(PlanError::BadInstance(
            "LOS state is undefined for coincident positions".into(),
        ));
    }
    let ceiling = cfg.ground_ceiling();
    if tx.z > ceiling && rx.z > ceiling {
        return Ok(true);
    }
    let theta = elevation_deg(tx, rx)?;
    let p = los_probability(theta, cfg.los_a, cfg.los_b)?;
    Ok(p >= cfg.los_threshold)
}

/// Correlated shadowing offsets in dB along a track, one per slot.
///
/// `track_distances` is the cumulative distance the link has moved by each
/// slot; successive offsets decorrelate as `exp(-Δd / corr_dist_m)` in an
/// order-one autoregression, so a static link keeps a single draw and a fast
/// one approaches independent draws.
pub fn shadowing_track(
    track_distances: &[f64],
    std_db: f64,
    corr_dist_m: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, PlanError> {
    if !(corr_dist_m > 0.0) {
        return Err(PlanError::Config(format!(
            "shadowing correlation distance must be positive, got {corr_dist_m}"
        )));
    }
    if std_db < 0.0 {
        return Err(PlanError::Config(format!(
            "shadowing standard deviation must be nonnegative, got {std_db}"
        )));
    }
    if track_distances.is_empty() {
        return Ok(Vec::new());
    }
    if std_db == 0.0 {
        return Ok(vec![0.0; track_distances.len()]);
    }
    let normal = Normal::new(0.0, std_db).expect("validated std");
    let mut out = Vec::with_capacity(track_distances.len());
    let mut current: f64 = normal.sample(rng);
    out.push(current);
    for pair in track_distances.windows(2) {
        let step = (pair[1] - pair[0]).max(0.0);
        let rho = (-step / corr_dist_m).exp();
        let innovation: f64 = normal.sample(rng);
        current = rho * current + (1.0 - rho * rho).sqrt() * innovation;
        out.push(current);
    }
    Ok(out)
}

/// One small-scale fading draw: a unit-mean Gamma factor with shape `kappa`.
pub fn sample_fading(kappa: f64, rng: &mut impl Rng) -> f64 {
    let gamma = Gamma::new(kappa, 1.0 / kappa).expect("kappa >= 1");
    gamma.sample(rng)
}

/// Large-scale parameters of one link across the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTrack {
    pub node_id: usize,
    pub params: Vec<LinkParams>,
}

/// Per-slot, per-link large-scale channel map for every non-transmitting
/// node in the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    pub slots: usize,
    pub links: Vec<LinkTrack>,
}

impl RadioMap {
    pub fn link(&self, node_id: usize) -> Option<&LinkTrack> {
        self.links.iter().find(|l| l.node_id == node_id)
    }
}

/// Builds the radio map from the transmitter's track to every other track:
/// per-slot LOS state from geometry, path loss plus correlated shadowing
/// folded into a linear gain, and one Gamma shape per link drawn uniformly
/// from 1 to 30 and held over the horizon. Deterministic for a given RNG
/// state and track order.
pub fn build_radio_map(
    cfg: &ScenarioConfig,
    tracks: &[NodeTrack],
    rng: &mut impl Rng,
) -> Result<RadioMap, PlanError> {
    cfg.validate()?;
    let tx = tracks
        .iter()
        .find(|t| t.node_id == 0)
        .ok_or_else(|| PlanError::BadInstance("tracks are missing the transmitter".into()))?;
    let slots = tx.positions.len();
    if slots == 0 {
        return Err(PlanError::BadInstance("transmitter track is empty".into()));
    }
    let mut links = Vec::new();
    let mut others: Vec<&NodeTrack> = tracks.iter().filter(|t| t.node_id != 0).collect();
    others.sort_by_key(|t| t.node_id);
    let ceiling = cfg.ground_ceiling();
    for track in others {
        if track.positions.len() != slots {
            return Err(PlanError::BadInstance(format!(
                "track for node {} has {} positions, expected {slots}",
                track.node_id,
                track.positions.len()
            )));
        }
        let kappa = rng.random_range(1..=30) as f64;
        let airborne = track
            .positions
            .iter()
            .zip(&tx.positions)
            .all(|(p, q)| p.z > ceiling && q.z > ceiling);
        let std_db = if airborne { 0.0 } else { cfg.shadowing_std_db };
        let mut cumulative = Vec::with_capacity(slots);
        let mut dist = 0.0;
        for t in 0..slots {
            if t > 0 {
                let prev = offset(&tx.positions[t - 1], &track.positions[t - 1]);
                let cur = offset(&tx.positions[t], &track.positions[t]);
                let dx = cur.0 - prev.0;
                let dy = cur.1 - prev.1;
                let dz = cur.2 - prev.2;
                dist += (dx * dx + dy * dy + dz * dz).sqrt();
            }
            cumulative.push(dist);
        }
        let shadow = shadowing_track(&cumulative, std_db, cfg.shadowing_corr_dist_m, rng)?;
        let mut params = Vec::with_capacity(slots);
        for t in 0..slots {
            let los = los_state(&tx.positions[t], &track.positions[t], cfg)?;
            let d = tx.positions[t].distance(&track.positions[t]);
            let pl = path_loss_umi(d, cfg.carrier_freq_ghz, los)?;
            let g = 10f64.powf(-(pl + shadow[t]) / 10.0);
            params.push(LinkParams { g, kappa, los });
        }
        links.push(LinkTrack {
            node_id: track.node_id,
            params,
        });
    }
    Ok(RadioMap { slots, links })
}

fn offset(a: &Position, b: &Position) -> (f64, f64, f64) {
    (a.x - b.x, a.y - b.y, a.z - b.z)
}

/// Expected link gain without a radio map: the LOS and NLOS path losses mixed
/// in the dB domain by the LOS probability, no shadowing. Airborne pairs
/// collapse to the pure LOS loss.
pub fn mean_path_gain(
    tx: &Position,
    rx: &Position,
    cfg: &ScenarioConfig,
) -> Result<f64, PlanError> {
    let d = tx.distance(rx);
    if d <= 0.0 {
        return Err(PlanError::BadInstance(
            "mean gain is undefined for coincident positions".into(),
        ));
    }
    let pl_los = path_loss_umi(d, cfg.carrier_freq_ghz, true)?;
    let ceiling = cfg.ground_ceiling();
    let pl = if tx.z > ceiling && rx.z > ceiling {
        pl_los
    } else {
        let theta = elevation_deg(tx, rx)?;
        let p = los_probability(theta, cfg.los_a, cfg.los_b)?;
        let pl_nlos = path_loss_umi(d, cfg.carrier_freq_ghz, false)?;
        p * pl_los + (1.0 - p) * pl_nlos
    };
    Ok(10f64.powf(-pl / 10.0))
}

/// Generates the scenario's tracks: the transmitter sweeps the horizontal
/// midline, receivers alternate between horizontal and vertical sweeps at
/// their own heights, and base stations and users stand still at uniform
/// random spots. Bounces at the area border keep every node inside.
pub fn generate_tracks(
    cfg: &ScenarioConfig,
    slots: usize,
    slot_seconds: f64,
    rng: &mut impl Rng,
) -> Result<Vec<NodeTrack>, PlanError> {
    cfg.validate()?;
    if slots == 0 || !(slot_seconds > 0.0) {
        return Err(PlanError::Config(format!(
            "track generation needs slots ≥ 1 and a positive slot length, got {slots} and {slot_seconds}"
        )));
    }
    let area = cfg.area_size_m;
    let mut tracks = Vec::with_capacity(cfg.node_count());
    tracks.push(sweep_track(
        0,
        rng.random_range(0.0..area),
        area / 2.0,
        cfg.tx_height_m,
        true,
        cfg.tx_speed_mps,
        slots,
        slot_seconds,
        area,
    ));
    for n in 0..cfg.num_receivers {
        let along = rng.random_range(0.0..area);
        let fixed = rng.random_range(0.0..area);
        tracks.push(sweep_track(
            1 + n,
            along,
            fixed,
            cfg.receiver_height_m,
            n % 2 == 0,
            cfg.receiver_speed_mps,
            slots,
            slot_seconds,
            area,
        ));
    }
    for m in 0..cfg.num_bs {
        tracks.push(static_track(
            1 + cfg.num_receivers + m,
            rng.random_range(0.0..area),
            rng.random_range(0.0..area),
            cfg.bs_height_m,
            slots,
        ));
    }
    for u in 0..cfg.num_users {
        tracks.push(static_track(
            1 + cfg.num_receivers + cfg.num_bs + u,
            rng.random_range(0.0..area),
            rng.random_range(0.0..area),
            cfg.user_height_m,
            slots,
        ));
    }
    Ok(tracks)
}

#[allow(clippy::too_many_arguments)]
fn sweep_track(
    node_id: usize,
    start_along: f64,
    fixed: f64,
    height: f64,
    horizontal: bool,
    speed: f64,
    slots: usize,
    slot_seconds: f64,
    area: f64,
) -> NodeTrack {
    let mut positions = Vec::with_capacity(slots);
    let mut along = start_along;
    let mut dir = 1.0;
    for t in 0..slots {
        if t > 0 {
            along += dir * speed * slot_seconds;
            if along > area {
                along = 2.0 * area - along;
                dir = -dir;
            } else if along < 0.0 {
                along = -along;
                dir = -dir;
            }
        }
        let (x, y) = if horizontal { (along, fixed) } else { (fixed, along) };
        positions.push(Position { x, y, z: height });
    }
    NodeTrack {
        node_id,
        positions,
        speed_mps: speed,
    }
}

fn static_track(node_id: usize, x: f64, y: f64, z: f64, slots: usize) -> NodeTrack {
    NodeTrack {
        node_id,
        positions: vec![Position { x, y, z }; slots],
        speed_mps: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn path_loss_matches_reference_points() {
        assert_eq!(path_loss_umi(1.0, 1.0, true).unwrap(), 22.0);
        let los = path_loss_umi(100.0, 3.0, true).unwrap();
        assert!((los - 87.5424250943932487).abs() < 1e-12);
        let nlos = path_loss_umi(100.0, 3.0, false).unwrap();
        assert!((nlos - 108.505152622711223).abs() < 1e-12);
        assert!(path_loss_umi(0.0, 3.0, true).is_err());
        assert!(path_loss_umi(10.0, 0.0, true).is_err());
    }

    #[test]
    fn los_probability_reference_points_and_monotonicity() {
        let a = 11.95;
        let b = 0.14;
        assert!((los_probability(11.95, a, b).unwrap() - 0.0772200772200772).abs() < 1e-15);
        assert!((los_probability(90.0, a, b).unwrap() - 0.999785346057983577).abs() < 1e-15);
        assert!((los_probability(0.0, a, b).unwrap() - 0.0154628497108987).abs() < 1e-15);
        let mut prev = 0.0;
        for deg in 0..=90 {
            let p = los_probability(deg as f64, a, b).unwrap();
            assert!(p > prev && p < 1.0);
            prev = p;
        }
        assert!(los_probability(91.0, a, b).is_err());
        assert!(los_probability(45.0, 0.0, b).is_err());
    }

    #[test]
    fn los_state_follows_roles_and_threshold() {
        let cfg = ScenarioConfig::default();
        let tx = Position::new(0.0, 0.0, 100.0).unwrap();
        let peer_uav = Position::new(150.0, 40.0, 95.0).unwrap();
        assert!(los_state(&tx, &peer_uav, &cfg).unwrap());

        let below = Position::new(0.0, 0.0, 0.0).unwrap();
        assert!(los_state(&tx, &below, &cfg).unwrap());

        // An elevation of 10 degrees gives a LOS probability near 0.06,
        // well under the 0.5 threshold.
        let d = 100.0 / (10f64.to_radians()).sin();
        let horizontal = (d * d - 100.0 * 100.0).sqrt();
        let far = Position::new(horizontal, 0.0, 0.0).unwrap();
        assert!(!los_state(&tx, &far, &cfg).unwrap());

        assert!(los_state(&tx, &tx.clone(), &cfg).is_err());
    }

    #[test]
    fn shadowing_degenerate_tracks() {
        let mut rng = StdRng::seed_from_u64(3);
        let dists = [0.0, 4.0, 9.0, 15.0];
        assert_eq!(
            shadowing_track(&dists, 0.0, 5.0, &mut rng).unwrap(),
            vec![0.0; 4]
        );
        let frozen = shadowing_track(&dists, 2.0, f64::INFINITY, &mut rng).unwrap();
        for v in &frozen {
            assert_eq!(*v, frozen[0]);
        }
        assert!(shadowing_track(&dists, 2.0, 0.0, &mut rng).is_err());
        assert!(shadowing_track(&[], 2.0, 5.0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn shadowing_autocorrelation_matches_the_design_decay() {
        let mut rng = StdRng::seed_from_u64(11);
        let var: f64 = 8.0;
        let std = var.sqrt();
        let corr = 5.0;
        let mut lag_product = 0.0;
        let mut mean = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            let track = shadowing_track(&[0.0, corr], std, corr, &mut rng).unwrap();
            lag_product += track[0] * track[1];
            mean += track[0];
        }
        lag_product /= draws as f64;
        mean /= draws as f64;
        let expected = var * (-1.0f64).exp();
        assert!(
            (lag_product - expected).abs() < 0.05 * expected,
            "autocorrelation {lag_product} vs expected {expected}"
        );
        assert!(mean.abs() < 0.05);
    }

    #[test]
    fn fading_moments_and_unit_mean() {
        let mut rng = StdRng::seed_from_u64(5);
        let draws = 1_000_000;
        let mut mean = 0.0;
        for _ in 0..draws {
            mean += sample_fading(1.0, &mut rng);
        }
        mean /= draws as f64;
        assert!((mean - 1.0).abs() < 0.01);

        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let x = sample_fading(4.0, &mut rng);
            sum += x;
            sq += x * x;
        }
        let m = sum / draws as f64;
        let var = sq / draws as f64 - m * m;
        assert!((var - 0.25).abs() < 0.02 * 0.25 + 5e-4);

        for _ in 0..1000 {
            assert!((sample_fading(1e6, &mut rng) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn realized_gain_keeps_the_predicted_mean() {
        let g = 1.76099243606790387e-9;
        let mut rng = StdRng::seed_from_u64(9);
        let draws = 1_000_000;
        let mut mean = 0.0;
        for _ in 0..draws {
            mean += g * sample_fading(7.0, &mut rng);
        }
        mean /= draws as f64;
        assert!((mean - g).abs() < 0.01 * g);
    }

    #[test]
    fn radio_map_is_deterministic_and_well_formed() {
        let cfg = ScenarioConfig {
            num_bs: 2,
            num_users: 3,
            num_receivers: 2,
            ..ScenarioConfig::default()
        };
        let mut rng = StdRng::seed_from_u64(cfg.rng_seed);
        let tracks = generate_tracks(&cfg, 6, 1.0, &mut rng).unwrap();
        let mut map_rng = StdRng::seed_from_u64(1);
        let map = build_radio_map(&cfg, &tracks, &mut map_rng).unwrap();
        let mut map_rng2 = StdRng::seed_from_u64(1);
        let again = build_radio_map(&cfg, &tracks, &mut map_rng2).unwrap();
        assert_eq!(map, again);

        assert_eq!(map.links.len(), cfg.node_count() - 1);
        for link in &map.links {
            assert_eq!(link.params.len(), 6);
            let kappa = link.params[0].kappa;
            assert!((1.0..=30.0).contains(&kappa));
            for p in &link.params {
                assert!(p.g > 0.0);
                assert_eq!(p.kappa, kappa);
            }
            if matches!(cfg.role_of(link.node_id).unwrap(), NodeRole::Receiver) {
                assert!(link.params.iter().all(|p| p.los));
            }
        }
    }

    #[test]
    fn airborne_link_gain_pins_the_pure_path_loss() {
        let cfg = ScenarioConfig::default();
        let tx = NodeTrack {
            node_id: 0,
            positions: vec![Position::new(0.0, 0.0, 100.0).unwrap()],
            speed_mps: 0.0,
        };
        let rx = NodeTrack {
            node_id: 1,
            positions: vec![Position::new(60.0, 80.0, 100.0).unwrap()],
            speed_mps: 0.0,
        };
        let mut rng = StdRng::seed_from_u64(2);
        let map = build_radio_map(&cfg, &[tx, rx], &mut rng).unwrap();
        let g = map.link(1).unwrap().params[0].g;
        let expected = 1.76099243606790387e-9;
        assert!((g - expected).abs() < 1e-12 * expected);
        assert!(map.link(1).unwrap().params[0].los);
    }

    #[test]
    fn mean_gain_mixes_path_loss_in_db() {
        let cfg = ScenarioConfig::default();
        let tx = Position::new(0.0, 0.0, 100.0).unwrap();
        let ground = Position::new(80.0, 60.0, 0.0).unwrap();
        let d = tx.distance(&ground);
        let theta = elevation_deg(&tx, &ground).unwrap();
        let p = los_probability(theta, cfg.los_a, cfg.los_b).unwrap();
        let pl_los = path_loss_umi(d, cfg.carrier_freq_ghz, true).unwrap();
        let pl_nlos = path_loss_umi(d, cfg.carrier_freq_ghz, false).unwrap();
        let expected = 10f64.powf(-(p * pl_los + (1.0 - p) * pl_nlos) / 10.0);
        let got = mean_path_gain(&tx, &ground, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-15 * expected);
        let g_los = 10f64.powf(-pl_los / 10.0);
        let g_nlos = 10f64.powf(-pl_nlos / 10.0);
        assert!(got > g_nlos && got < g_los);

        let peer = Position::new(30.0, 40.0, 100.0).unwrap();
        let airborne = mean_path_gain(&tx, &peer, &cfg).unwrap();
        let pure = 10f64.powf(-path_loss_umi(50.0, cfg.carrier_freq_ghz, true).unwrap() / 10.0);
        assert!((airborne - pure).abs() < 1e-15 * pure);
    }

    #[test]
    fn generated_tracks_respect_speed_area_and_roles() {
        let cfg = ScenarioConfig::default();
        let slots = 40;
        let mut rng = StdRng::seed_from_u64(cfg.rng_seed);
        let tracks = generate_tracks(&cfg, slots, 1.0, &mut rng).unwrap();
        assert_eq!(tracks.len(), cfg.node_count());
        for track in &tracks {
            track.validate(slots, 1.0).unwrap();
            let role = cfg.role_of(track.node_id).unwrap();
            let expected_z = match role {
                NodeRole::Transmitter => cfg.tx_height_m,
                NodeRole::Receiver => cfg.receiver_height_m,
                NodeRole::Neighbor => cfg.bs_height_m,
                NodeRole::User => cfg.user_height_m,
            };
            for p in &track.positions {
                assert!(p.x >= 0.0 && p.x <= cfg.area_size_m);
                assert!(p.y >= 0.0 && p.y <= cfg.area_size_m);
                assert_eq!(p.z, expected_z);
            }
            if matches!(role, NodeRole::Neighbor | NodeRole::User) {
                assert!(track.positions.iter().all(|p| *p == track.positions[0]));
            }
        }
        let mut rng2 = StdRng::seed_from_u64(cfg.rng_seed);
        let again = generate_tracks(&cfg, slots, 1.0, &mut rng2).unwrap();
        for (a, b) in tracks.iter().zip(&again) {
            assert_eq!(a.positions, b.positions);
        }
    }
}
