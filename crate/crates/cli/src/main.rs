//! `skyplan` — plan, evaluate, and benchmark interference-aware
//! transmission schedules from the command line.
//!
//! Every subcommand reads an optional TOML config (`--config`) and applies
//! any matching flags on top of it. Exit codes: 0 on success, 2 when a
//! demand is infeasible, 3 when the solver fails to converge, 1 for
//! anything else.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::PathBuf;

use skyplan::experiment::{
    cost_vs_delta_sweep, mw_to_dbm, plan_cell, run_pipeline, runtime_benchmark, scenario_map,
    ExperimentConfig, MetricsRecord, Scheme, UePsdMode,
};
use skyplan::io::{
    emit_reports, load_config, save_config, save_instance, write_plan, write_radio_map,
    write_trace,
};
use skyplan::PlanError;

#[derive(Parser)]
#[command(
    name = "skyplan",
    version,
    about = "Interference-aware predictive schedules for an aerial relay",
    propagate_version = true
)]
struct Cli {
    /// TOML experiment config; flags below override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the config keys; unset flags keep the config's value.
#[derive(Args, Clone)]
struct Overrides {
    /// Demand per receiver over the horizon, in bits.
    #[arg(long, global = true)]
    s_bits: Option<f64>,
    #[arg(long, global = true)]
    bandwidth_hz: Option<f64>,
    /// Expected-interference threshold at the known neighbors.
    #[arg(long, global = true)]
    i_bs_dbm: Option<f64>,
    /// Interference thresholds for the user-ratio curves, comma-separated.
    #[arg(long, global = true, value_delimiter = ',')]
    i_ue_dbm: Option<Vec<f64>>,
    /// Activation penalties per second, comma-separated.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Slot durations in seconds, comma-separated; each must divide the
    /// horizon.
    #[arg(long, global = true, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
    #[arg(long, global = true)]
    horizon_s: Option<f64>,
    #[arg(long, global = true)]
    num_fading_draws: Option<usize>,
    #[arg(long, global = true)]
    num_seeds: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    noise_dbm: Option<f64>,
    #[arg(long, global = true)]
    p_max_dbm: Option<f64>,
    /// Capacity back-off of the map-free baseline, in (0, 1].
    #[arg(long, global = true)]
    womap_beta: Option<f64>,
    /// How users see the transmit power: the strongest active receiver's
    /// power, or the band average.
    #[arg(long, global = true, value_enum)]
    ue_psd_mode: Option<UeModeArg>,
    /// Base seed; per-run seeds are derived from it.
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    #[arg(long, global = true)]
    num_receivers: Option<usize>,
    #[arg(long, global = true)]
    num_bs: Option<usize>,
    #[arg(long, global = true)]
    num_users: Option<usize>,
    #[arg(long, global = true)]
    area_size_m: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = &self.$field { $target = v.clone(); })*
            };
        }
        set! {
            s_bits => cfg.s_bits,
            bandwidth_hz => cfg.bandwidth_hz,
            i_bs_dbm => cfg.i_bs_dbm,
            i_ue_dbm => cfg.i_ue_dbm,
            lambda => cfg.lambda,
            delta => cfg.delta,
            horizon_s => cfg.horizon_s,
            num_fading_draws => cfg.num_fading_draws,
            num_seeds => cfg.num_seeds,
            output_dir => cfg.output_dir,
            noise_dbm => cfg.noise_dbm,
            p_max_dbm => cfg.p_max_dbm,
            womap_beta => cfg.womap_beta,
            rng_seed => cfg.scenario.rng_seed,
            num_receivers => cfg.scenario.num_receivers,
            num_bs => cfg.scenario.num_bs,
            num_users => cfg.scenario.num_users,
            area_size_m => cfg.scenario.area_size_m,
        }
        if let Some(mode) = self.ue_psd_mode {
            cfg.ue_psd_mode = mode.into();
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UeModeArg {
    WorstCase,
    InnerProduct,
}

impl From<UeModeArg> for UePsdMode {
    fn from(m: UeModeArg) -> Self {
        match m {
            UeModeArg::WorstCase => UePsdMode::WorstCase,
            UeModeArg::InnerProduct => UePsdMode::InnerProduct,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Proposed,
    BestEffort,
    Womap,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Compute one schedule and save its instance, plan, and solve trace.
    ///
    /// Uses the first lambda and first delta of the config; writes
    /// instance.csv/instance.toml (the problem the schedule optimizes),
    /// plan.csv, and trace.csv under the output directory.
    Plan {
        #[arg(long, value_enum, default_value = "proposed")]
        scheme: SchemeArg,
        /// Seed index within the experiment.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay schemes against fading realizations and write the report
    /// bundle (interference, user ratios, cost summary, timings).
    Evaluate {
        #[arg(long, value_enum, default_value = "all")]
        scheme: SchemeArg,
    },
    /// Solve and round at every configured slot duration; tabulate relaxed,
    /// rounded, and unrounded costs against the a-priori bound.
    SweepDelta,
    /// Measure solver wall-clock scaling over problem sizes.
    Bench {
        /// Slot counts to time, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "100,320,1000")]
        slots: Vec<usize>,
        /// Receiver counts to time, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "4")]
        receivers: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Skip the exhaustive reference solver even on small cells.
        #[arg(long)]
        skip_reference: bool,
    },
    /// Scenario data utilities.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Generate a scenario's radio map and save it with the effective
    /// config.
    Gen {
        /// Seed index within the experiment.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let code = match err {
            PlanError::Infeasible { .. } => 2,
            PlanError::NoConvergence { .. } => 3,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<(), PlanError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    match cli.command {
        Command::Plan { scheme, seed } => cmd_plan(&cfg, scheme, seed),
        Command::Evaluate { scheme } => cmd_evaluate(&cfg, scheme),
        Command::SweepDelta => cmd_sweep(&cfg),
        Command::Bench {
            slots,
            receivers,
            reps,
            skip_reference,
        } => cmd_bench(&cfg, &slots, &receivers, reps, !skip_reference),
        Command::Scenario {
            command: ScenarioCommand::Gen { seed },
        } => cmd_scenario_gen(&cfg, seed),
    }
}

fn scheme_of(arg: SchemeArg) -> Result<Scheme, PlanError> {
    match arg {
        SchemeArg::Proposed => Ok(Scheme::Proposed),
        SchemeArg::BestEffort => Ok(Scheme::BestEffort),
        SchemeArg::Womap => Ok(Scheme::Womap),
        SchemeArg::All => Err(PlanError::Config(
            "this subcommand needs one concrete scheme".into(),
        )),
    }
}

fn cmd_plan(cfg: &ExperimentConfig, scheme: SchemeArg, seed: u64) -> Result<(), PlanError> {
    let scheme = scheme_of(scheme)?;
    let lambda = cfg.lambda[0];
    let delta = cfg.delta[0];
    let art = plan_cell(cfg, scheme, seed, lambda, delta)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let dir = &cfg.output_dir;
    save_instance(
        &art.planning_instance,
        &dir.join("instance.csv"),
        &dir.join("instance.toml"),
    )?;
    write_plan(&art.planned.plan, &dir.join("plan.csv"))?;
    write_trace(&art.planned.outcome.trace, &dir.join("trace.csv"))?;
    let cert = &art.planned.certificate;
    println!(
        "planned {} seed {seed}: lambda {lambda}/s, delta {delta} s, {} slots",
        scheme.label(),
        art.instance.slots,
    );
    println!(
        "  solver: {} iterations, residual {:.3e}",
        art.planned.outcome.iterations, art.planned.outcome.residual,
    );
    println!(
        "  cost: relaxed {:.6}, rounded {:.6}, bound {:.6} ({} partial slots)",
        cert.relaxed_cost, cert.rounded_cost, cert.bound, cert.partial_slot_count,
    );
    println!(
        "  wrote instance.csv, instance.toml, plan.csv, trace.csv to {}",
        dir.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &ExperimentConfig, scheme: SchemeArg) -> Result<(), PlanError> {
    let schemes: Vec<Scheme> = match scheme {
        SchemeArg::All => vec![Scheme::Proposed, Scheme::BestEffort, Scheme::Womap],
        one => vec![scheme_of(one)?],
    };
    let mut records: Vec<MetricsRecord> = Vec::new();
    for s in &schemes {
        records.extend(run_pipeline(cfg, *s)?);
    }
    let written = emit_reports(cfg, &records, None, None)?;
    println!("scheme       seed lambda/s delta  active    cost  bs_viol  peak_dbm");
    for r in &records {
        let peak = r
            .bs_peak_dbm
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{:<12} {:>4} {:>8} {:>5} {:>7.2} {:>7.2} {:>8} {:>9.1}",
            r.scheme.label(),
            r.seed,
            r.lambda,
            r.delta,
            r.active_slots,
            r.total_cost,
            r.bs_violation_slots,
            peak,
        );
    }
    println!(
        "wrote {} report files to {}",
        written.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(), PlanError> {
    let rows = cost_vs_delta_sweep(cfg)?;
    emit_reports(cfg, &[], Some(&rows), None)?;
    println!("delta  relaxed   rounded   unrounded  bound");
    for row in &rows {
        println!(
            "{:>5} {:>9.4} {:>9.4} {:>10.4} {:>9.4}",
            row.delta, row.relaxed, row.rounded, row.unrounded, row.bound,
        );
    }
    println!("wrote sweep.csv to {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_bench(
    cfg: &ExperimentConfig,
    slots: &[usize],
    receivers: &[usize],
    reps: usize,
    with_reference: bool,
) -> Result<(), PlanError> {
    if slots.is_empty() || receivers.is_empty() || reps == 0 {
        return Err(PlanError::Config(
            "bench needs at least one slot count, one receiver count, and one repetition".into(),
        ));
    }
    let report = runtime_benchmark(slots, receivers, reps, with_reference);
    emit_reports(cfg, &[], None, Some(&report))?;
    println!("slots  receivers  solve_s    round_s    reference_s");
    for row in &report.rows {
        let reference = row
            .reference_median_s
            .map(|s| format!("{s:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>5} {:>10} {:>9.4} {:>10.6} {:>12}",
            row.slots, row.receivers, row.solve_median_s, row.round_median_s, reference,
        );
    }
    if let Some(e) = report.solve_exponent {
        println!("solve exponent in T: {e:.3}");
    }
    if let Some(e) = report.round_exponent {
        println!("round exponent in NT·log2 T: {e:.3}");
    }
    println!("wrote bench.csv to {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_scenario_gen(cfg: &ExperimentConfig, seed: u64) -> Result<(), PlanError> {
    let delta = cfg.delta[0];
    let (scenario, _tracks, map) = scenario_map(cfg, seed, delta)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let map_path = cfg.output_dir.join("radio_map.csv");
    write_radio_map(&map, &map_path)?;
    save_config(cfg, &cfg.output_dir.join("experiment.toml"))?;
    let receiver_mean_dbm: f64 = {
        let n = scenario.num_receivers;
        let mut acc = 0.0;
        for id in 1..=n {
            let link = map.link(id).expect("map covers every receiver");
            acc += link.params.iter().map(|p| mw_to_dbm(p.g)).sum::<f64>()
                / link.params.len() as f64;
        }
        acc / n as f64
    };
    println!(
        "generated radio map: seed {seed}, {} slots x {} links, mean receiver gain {:.1} dB",
        map.slots,
        map.links.len(),
        receiver_mean_dbm,
    );
    println!(
        "wrote radio_map.csv and experiment.toml to {}",
        cfg.output_dir.display()
    );
    Ok(())
}
