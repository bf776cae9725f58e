//! File formats: CSV round trips for radio maps, instances, plans, and
//! solver traces, TOML experiment configs, and the report bundle one
//! pipeline run leaves behind.
//!
//! Numbers are written with the shortest decimal form that parses back to
//! the same float, so re-running a seeded experiment reproduces every data
//! file byte for byte. Wall-clock measurements are quarantined in
//! `timings.csv` and `bench.csv`, which are excluded from that guarantee.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::channel::{LinkParams, LinkTrack, RadioMap};
use crate::experiment::{BenchReport, DeltaSweepRow, ExperimentConfig, MetricsRecord};
use crate::problem::{Plan, ProblemInstance};
use crate::solver::TraceRow;
use crate::PlanError;

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, PlanError> {
    s.trim()
        .parse()
        .map_err(|_| PlanError::Config(format!("cannot parse {what} from {s:?}")))
}

/// Writes a radio map as `slot,link_id,g_linear,kappa,los`, ordered by link
/// then slot, LOS encoded as 0/1.
pub fn write_radio_map(map: &RadioMap, path: &Path) -> Result<(), PlanError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["slot", "link_id", "g_linear", "kappa", "los"])?;
    for link in &map.links {
        for (t, p) in link.params.iter().enumerate() {
            w.write_record([
                t.to_string(),
                link.node_id.to_string(),
                p.g.to_string(),
                p.kappa.to_string(),
                u8::from(p.los).to_string(),
            ])?;
        }
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

/// Reads a radio map written by [`write_radio_map`]. Accepts any row order;
/// every link must cover the same contiguous slot range.
pub fn read_radio_map(path: &Path) -> Result<RadioMap, PlanError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut cells: Vec<(usize, usize, LinkParams)> = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(PlanError::Config(format!(
                "radio map row has {} fields, expected 5",
                record.len()
            )));
        }
        let slot: usize = parse_field(&record[0], "slot")?;
        let id: usize = parse_field(&record[1], "link_id")?;
        let g: f64 = parse_field(&record[2], "g_linear")?;
        let kappa: f64 = parse_field(&record[3], "kappa")?;
        let los: u8 = parse_field(&record[4], "los")?;
        cells.push((id, slot, LinkParams { g, kappa, los: los != 0 }));
    }
    if cells.is_empty() {
        return Err(PlanError::Config("radio map file has no data rows".into()));
    }
    let slots = cells.iter().map(|c| c.1).max().unwrap() + 1;
    let mut ids: Vec<usize> = cells.iter().map(|c| c.0).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut links = Vec::with_capacity(ids.len());
    for id in ids {
        let mut rows: Vec<&(usize, usize, LinkParams)> =
            cells.iter().filter(|c| c.0 == id).collect();
        rows.sort_by_key(|c| c.1);
        if rows.len() != slots || rows.iter().enumerate().any(|(t, c)| c.1 != t) {
            return Err(PlanError::Config(format!(
                "link {id} does not cover slots 0..{slots} exactly once"
            )));
        }
        links.push(LinkTrack {
            node_id: id,
            params: rows.into_iter().map(|c| c.2.clone()).collect(),
        });
    }
    Ok(RadioMap { slots, links })
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceMeta {
    demand: Vec<f64>,
    lambda: f64,
    slot_seconds: f64,
}

/// Writes an instance as two files: per-cell channel data
/// (`t,n,g_linear,eps_bits,p_cap_mw`, the cap repeated across each slot's
/// rows) and a TOML header with demand, penalty, and slot length.
pub fn save_instance(
    inst: &ProblemInstance,
    csv_path: &Path,
    meta_path: &Path,
) -> Result<(), PlanError> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["t", "n", "g_linear", "eps_bits", "p_cap_mw"])?;
    for t in 0..inst.slots {
        for n in 0..inst.receivers {
            w.write_record([
                t.to_string(),
                n.to_string(),
                inst.gain[t][n].to_string(),
                inst.eps[t][n].to_string(),
                inst.power_cap[t].to_string(),
            ])?;
        }
    }
    w.flush().map_err(std::io::Error::from)?;
    let meta = InstanceMeta {
        demand: inst.demand.clone(),
        lambda: inst.lambda,
        slot_seconds: inst.slot_seconds,
    };
    let text = toml::to_string_pretty(&meta)
        .map_err(|e| PlanError::Config(format!("cannot encode instance header: {e}")))?;
    fs::write(meta_path, text)?;
    Ok(())
}

/// Reads an instance written by [`save_instance`], revalidating it.
pub fn load_instance(csv_path: &Path, meta_path: &Path) -> Result<ProblemInstance, PlanError> {
    let meta: InstanceMeta = toml::from_str(&fs::read_to_string(meta_path)?)
        .map_err(|e| PlanError::Config(format!("bad instance header: {e}")))?;
    let mut r = csv::Reader::from_path(csv_path)?;
    let mut cells: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(PlanError::Config(format!(
                "instance row has {} fields, expected 5",
                record.len()
            )));
        }
        cells.push((
            parse_field(&record[0], "t")?,
            parse_field(&record[1], "n")?,
            parse_field(&record[2], "g_linear")?,
            parse_field(&record[3], "eps_bits")?,
            parse_field(&record[4], "p_cap_mw")?,
        ));
    }
    let receivers = meta.demand.len();
    let slots = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    if slots == 0 || receivers == 0 || cells.len() != slots * receivers {
        return Err(PlanError::Config(format!(
            "instance data has {} rows, expected {slots}×{receivers}",
            cells.len()
        )));
    }
    let mut gain = vec![vec![f64::NAN; receivers]; slots];
    let mut eps = vec![vec![f64::NAN; receivers]; slots];
    let mut power_cap = vec![f64::NAN; slots];
    for (t, n, g, e, cap) in cells {
        if t >= slots || n >= receivers {
            return Err(PlanError::Config(format!(
                "instance cell ({t},{n}) outside {slots}×{receivers}"
            )));
        }
        gain[t][n] = g;
        eps[t][n] = e;
        if power_cap[t].is_nan() {
            power_cap[t] = cap;
        } else if power_cap[t] != cap {
            return Err(PlanError::Config(format!(
                "slot {t} lists two different power caps"
            )));
        }
    }
    ProblemInstance::new(gain, eps, power_cap, meta.demand, meta.lambda, meta.slot_seconds)
}

/// Writes a schedule as `t,n,p_linear,l`, zeros included so the shape is
/// recoverable.
pub fn write_plan(plan: &Plan, path: &Path) -> Result<(), PlanError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "n", "p_linear", "l"])?;
    for (t, (p_row, l_row)) in plan.power.iter().zip(&plan.frac).enumerate() {
        for (n, (&p, &l)) in p_row.iter().zip(l_row).enumerate() {
            w.write_record([t.to_string(), n.to_string(), p.to_string(), l.to_string()])?;
        }
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

/// Reads a schedule written by [`write_plan`].
pub fn read_plan(path: &Path) -> Result<Plan, PlanError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut cells: Vec<(usize, usize, f64, f64)> = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != 4 {
            return Err(PlanError::Config(format!(
                "plan row has {} fields, expected 4",
                record.len()
            )));
        }
        cells.push((
            parse_field(&record[0], "t")?,
            parse_field(&record[1], "n")?,
            parse_field(&record[2], "p_linear")?,
            parse_field(&record[3], "l")?,
        ));
    }
    if cells.is_empty() {
        return Err(PlanError::Config("plan file has no data rows".into()));
    }
    let slots = cells.iter().map(|c| c.0 + 1).max().unwrap();
    let receivers = cells.iter().map(|c| c.1 + 1).max().unwrap();
    if cells.len() != slots * receivers {
        return Err(PlanError::Config(format!(
            "plan data has {} rows, expected {slots}×{receivers}",
            cells.len()
        )));
    }
    let mut plan = Plan::zeros(slots, receivers);
    for (t, n, p, l) in cells {
        plan.power[t][n] = p;
        plan.frac[t][n] = l;
    }
    Ok(plan)
}

/// Writes a solve trace as
/// `iteration,v_norm,dual_value,max_excess,max_compl`.
pub fn write_trace(trace: &[TraceRow], path: &Path) -> Result<(), PlanError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "v_norm", "dual_value", "max_excess", "max_compl"])?;
    for row in trace {
        w.write_record([
            row.iter.to_string(),
            row.v_norm.to_string(),
            row.dual_value.to_string(),
            row.max_excess.to_string(),
            row.max_compl.to_string(),
        ])?;
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

/// Reads an experiment config from a TOML file; omitted keys take their
/// defaults, and the result is validated.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, PlanError> {
    let cfg: ExperimentConfig = toml::from_str(&fs::read_to_string(path)?)
        .map_err(|e| PlanError::Config(format!("bad config {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<(), PlanError> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| PlanError::Config(format!("cannot encode config: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
}

fn fmt(x: f64) -> String {
    x.to_string()
}

/// Writes the report bundle for a batch of pipeline runs into
/// `cfg.output_dir`, creating it if needed, and returns the paths written.
///
/// Deterministic files: `interference.csv` (per-slot strongest-neighbor
/// leakage), `ratios.csv` (per-threshold per-slot interfered-user ratio),
/// `cumulative.csv`, `summary.csv` (cost and certificate columns),
/// `sweep.csv` (when a slot-duration sweep is supplied), and
/// `manifest.toml` echoing the full config. Timing files: `timings.csv`
/// per record and `bench.csv` when a benchmark report is supplied.
pub fn emit_reports(
    cfg: &ExperimentConfig,
    records: &[MetricsRecord],
    sweep: Option<&[DeltaSweepRow]>,
    bench: Option<&BenchReport>,
) -> Result<Vec<PathBuf>, PlanError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("interference.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["scheme", "seed", "lambda", "delta", "slot", "bs_peak_dbm"])?;
    for rec in records {
        for (t, &dbm) in rec.bs_peak_dbm.iter().enumerate() {
            w.write_record([
                rec.scheme.label().to_string(),
                rec.seed.to_string(),
                fmt(rec.lambda),
                fmt(rec.delta),
                t.to_string(),
                fmt(dbm),
            ])?;
        }
    }
    w.flush().map_err(std::io::Error::from)?;
    written.push(path);

    let path = dir.join("ratios.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "scheme",
        "seed",
        "lambda",
        "delta",
        "threshold_dbm",
        "slot",
        "ratio",
    ])?;
    for rec in records {
        for (k, row) in rec.interfered_ratio.iter().enumerate() {
            for (t, &ratio) in row.iter().enumerate() {
                w.write_record([
                    rec.scheme.label().to_string(),
                    rec.seed.to_string(),
                    fmt(rec.lambda),
                    fmt(rec.delta),
                    fmt(rec.ue_thresholds_dbm[k]),
                    t.to_string(),
                    fmt(ratio),
                ])?;
            }
        }
    }
    w.flush().map_err(std::io::Error::from)?;
    written.push(path);

    let path = dir.join("cumulative.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "scheme",
        "seed",
        "lambda",
        "delta",
        "threshold_dbm",
        "cumulative_ratio",
    ])?;
    for rec in records {
        for (k, &r) in rec.cumulative_ratio.iter().enumerate() {
            w.write_record([
                rec.scheme.label().to_string(),
                rec.seed.to_string(),
                fmt(rec.lambda),
                fmt(rec.delta),
                fmt(rec.ue_thresholds_dbm[k]),
                fmt(r),
            ])?;
        }
    }
    w.flush().map_err(std::io::Error::from)?;
    written.push(path);

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "scheme",
        "seed",
        "lambda",
        "delta",
        "slots",
        "energy",
        "active_slots",
        "total_cost",
        "relaxed_cost",
        "rounded_cost",
        "partial_slots",
        "gap_bound",
        "bs_violation_slots",
        "min_delivered_fraction",
    ])?;
    for rec in records {
        let (relaxed, rounded, partial, bound) = match &rec.certificate {
            Some(c) => (
                fmt(c.relaxed_cost),
                fmt(c.rounded_cost),
                c.partial_slot_count.to_string(),
                fmt(c.bound),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        let min_delivered = rec
            .delivered_fraction
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        w.write_record([
            rec.scheme.label().to_string(),
            rec.seed.to_string(),
            fmt(rec.lambda),
            fmt(rec.delta),
            rec.slots.to_string(),
            fmt(rec.energy),
            fmt(rec.active_slots),
            fmt(rec.total_cost),
            relaxed,
            rounded,
            partial,
            bound,
            rec.bs_violation_slots.to_string(),
            fmt(min_delivered),
        ])?;
    }
    w.flush().map_err(std::io::Error::from)?;
    written.push(path);

    if let Some(rows) = sweep {
        let path = dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["delta", "relaxed", "rounded", "unrounded", "bound"])?;
        for row in rows {
            w.write_record([
                fmt(row.delta),
                fmt(row.relaxed),
                fmt(row.rounded),
                fmt(row.unrounded),
                fmt(row.bound),
            ])?;
        }
        w.flush().map_err(std::io::Error::from)?;
        written.push(path);
    }

    let path = dir.join("manifest.toml");
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| PlanError::Config(format!("cannot encode manifest: {e}")))?;
    fs::write(&path, text)?;
    written.push(path);

    let path = dir.join("timings.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "scheme",
        "seed",
        "lambda",
        "delta",
        "solve_seconds",
        "round_seconds",
        "evaluate_seconds",
    ])?;
    for rec in records {
        w.write_record([
            rec.scheme.label().to_string(),
            rec.seed.to_string(),
            fmt(rec.lambda),
            fmt(rec.delta),
            fmt(rec.solve_seconds),
            fmt(rec.round_seconds),
            fmt(rec.evaluate_seconds),
        ])?;
    }
    w.flush().map_err(std::io::Error::from)?;
    written.push(path);

    if let Some(report) = bench {
        let path = dir.join("bench.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "slots",
            "receivers",
            "solve_median_s",
            "round_median_s",
            "reference_median_s",
        ])?;
        for row in &report.rows {
            w.write_record([
                row.slots.to_string(),
                row.receivers.to_string(),
                fmt(row.solve_median_s),
                fmt(row.round_median_s),
                row.reference_median_s.map(fmt).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(std::io::Error::from)?;
        written.push(path);
    }

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_radio_map, generate_tracks, ScenarioConfig};
    use crate::experiment::{run_pipeline, Scheme};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn scenario() -> ScenarioConfig {
        ScenarioConfig {
            num_receivers: 2,
            num_bs: 1,
            num_users: 3,
            rng_seed: 7,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn radio_map_round_trips() {
        let cfg = scenario();
        let mut rng = StdRng::seed_from_u64(cfg.rng_seed);
        let tracks = generate_tracks(&cfg, 5, 1.0, &mut rng).unwrap();
        let map = build_radio_map(&cfg, &tracks, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        write_radio_map(&map, &path).unwrap();
        let back = read_radio_map(&path).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn radio_map_rejects_gappy_links() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        fs::write(
            &path,
            "slot,link_id,g_linear,kappa,los\n0,1,1e-9,3,1\n2,1,1e-9,3,1\n",
        )
        .unwrap();
        assert!(read_radio_map(&path).is_err());
    }

    #[test]
    fn instance_round_trips() {
        let inst = crate::experiment::random_instance(6, 3, 4);
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("instance.csv");
        let meta_path = dir.path().join("instance.toml");
        save_instance(&inst, &csv_path, &meta_path).unwrap();
        let back = load_instance(&csv_path, &meta_path).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn plan_round_trips() {
        let mut plan = Plan::zeros(4, 2);
        plan.power[1][0] = 3.5;
        plan.frac[1][0] = 0.25;
        plan.power[3][1] = 1e-3;
        plan.frac[3][1] = 1.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.csv");
        write_plan(&plan, &path).unwrap();
        assert_eq!(read_plan(&path).unwrap(), plan);
    }

    #[test]
    fn trace_file_has_expected_shape() {
        let trace = vec![
            TraceRow {
                iter: 0,
                v_norm: 0.0,
                dual_value: 1.25,
                max_excess: 0.5,
                max_compl: 0.0,
            },
            TraceRow {
                iter: 1,
                v_norm: 0.1,
                dual_value: 1.5,
                max_excess: 1e-10,
                max_compl: 1e-9,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&trace, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "iteration,v_norm,dual_value,max_excess,max_compl");
        assert!(lines[2].starts_with("1,0.1,1.5,"));
    }

    #[test]
    fn config_round_trips_and_partial_files_take_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("experiment.toml");
        let cfg = ExperimentConfig {
            lambda: vec![0.0, 42.0],
            num_seeds: 3,
            ..ExperimentConfig::default()
        };
        save_config(&cfg, &path).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);

        fs::write(&path, "horizon_s = 10.0\n[scenario]\nnum_users = 9\n").unwrap();
        let partial = load_config(&path).unwrap();
        assert_eq!(partial.horizon_s, 10.0);
        assert_eq!(partial.scenario.num_users, 9);
        assert_eq!(partial.s_bits, ExperimentConfig::default().s_bits);

        fs::write(&path, "delta = [3.0]\n").unwrap();
        assert!(load_config(&path).is_err());
    }

    #[test]
    fn reports_are_byte_identical_across_runs() {
        let base = ExperimentConfig {
            scenario: scenario(),
            s_bits: 30e6,
            horizon_s: 6.0,
            num_fading_draws: 8,
            lambda: vec![2.0],
            delta: vec![1.0],
            i_ue_dbm: vec![-70.0],
            ..ExperimentConfig::default()
        };
        let records = run_pipeline(&base, Scheme::Proposed).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut bundles = Vec::new();
        for d in &dirs {
            let cfg = ExperimentConfig {
                output_dir: d.path().to_path_buf(),
                ..base.clone()
            };
            let written = emit_reports(&cfg, &records, None, None).unwrap();
            let deterministic: Vec<Vec<u8>> = written
                .iter()
                .filter(|p| !p.ends_with("timings.csv") && !p.ends_with("manifest.toml"))
                .map(|p| fs::read(p).unwrap())
                .collect();
            bundles.push(deterministic);
        }
        assert_eq!(bundles[0], bundles[1]);
        let manifest =
            fs::read_to_string(dirs[0].path().join("manifest.toml")).unwrap();
        assert!(manifest.contains("s_bits = 30000000.0"));
        assert!(manifest.contains("num_users = 3"));
        let summary = fs::read_to_string(dirs[0].path().join("summary.csv")).unwrap();
        assert!(summary.lines().count() >= 2);
        assert!(summary.lines().next().unwrap().starts_with("scheme,seed,lambda"));
    }
}
