//! `cfiot`: batch driver for the cell-free IoT simulator.
//!
//! Subcommands: `validate` (Monte Carlo tables for the closed forms),
//! `simulate` (long-term scheduler run), `baseline` (greedy benchmark run),
//! `sweep` (multi-seed / multi-W batch). Exits 0 on success, 1 with a
//! one-line diagnostic otherwise.

use clap::{Args, Parser, Subcommand};
use cfiot_core::simctl::{
    fmt_g17, run_greedy, run_lyapunov, validate_asymptotics, write_slots_csv,
    write_solver_trace, write_summary_json, write_validation_csvs,
};
use cfiot_core::SystemConfig;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cfiot", version, about = "Wirelessly powered cell-free IoT simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Flat key = value configuration file (defaults are desk scale).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the root PRNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the number of simulated slots.
    #[arg(long)]
    slots: Option<usize>,
    /// Override the drift-penalty weight W.
    #[arg(long)]
    w: Option<f64>,
    /// Account each slot with one finite-pilot draw instead of closed forms.
    #[arg(long = "finite-tau", default_value_t = false)]
    finite_tau: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo validation tables for the asymptotic expressions.
    Validate {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of pilot-draw trials.
        #[arg(long, default_value_t = 500)]
        trials: usize,
    },
    /// Run the long-term scheduling and power-control algorithm.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Also write a per-slot solver trace (iteration counts, objective
        /// paths) to solver_trace.log.
        #[arg(long, default_value_t = false)]
        trace: bool,
    },
    /// Run the greedy benchmark.
    Baseline {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Multi-seed, multi-W batch of scheduler-vs-baseline comparisons.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of seeds, starting at --seed (default config seed).
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Comma-separated list of W values.
        #[arg(long, default_value = "1,10,100")]
        w_list: String,
    },
}

fn load_config(common: &CommonOpts) -> cfiot_core::Result<SystemConfig> {
    let mut cfg = match &common.config {
        Some(path) => SystemConfig::load(path)?,
        None => SystemConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(slots) = common.slots {
        cfg.t_max = slots;
    }
    if let Some(w) = common.w {
        cfg.penalty_w = w;
    }
    cfg.finite_tau_accounting |= common.finite_tau;
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> cfiot_core::Result<()> {
    match Cli::parse().command {
        Command::Validate { common, trials } => {
            let cfg = load_config(&common)?;
            let tables = validate_asymptotics(&cfg, trials)?;
            std::fs::create_dir_all(&common.out)?;
            write_validation_csvs(&common.out, &tables)?;
            println!(
                "validate: wrote gamma/energy/rate/ka tables for active set {:?} to {}",
                tables.active,
                common.out.display()
            );
        }
        Command::Simulate { common, trace } => {
            let cfg = load_config(&common)?;
            let (records, summary) = run_lyapunov(&cfg)?;
            std::fs::create_dir_all(&common.out)?;
            write_slots_csv(&common.out.join("slots.csv"), &records, cfg.sensors)?;
            write_summary_json(&common.out.join("summary.json"), &summary)?;
            if trace {
                write_solver_trace(&common.out.join("solver_trace.log"), &records)?;
            }
            println!(
                "simulate: seed {} slots {} harvest {} transmit {} min-avg-rate {}",
                cfg.seed,
                summary.t_max,
                summary.harvest_slots,
                summary.transmit_slots,
                fmt_g17(summary.min_avg_rate.last().copied().unwrap_or(0.0))
            );
        }
        Command::Baseline { common } => {
            let cfg = load_config(&common)?;
            let (records, summary) = run_greedy(&cfg)?;
            std::fs::create_dir_all(&common.out)?;
            write_slots_csv(&common.out.join("slots.csv"), &records, cfg.sensors)?;
            write_summary_json(&common.out.join("summary.json"), &summary)?;
            println!(
                "baseline: seed {} slots {} harvest {} transmit {} min-avg-rate {}",
                cfg.seed,
                summary.t_max,
                summary.harvest_slots,
                summary.transmit_slots,
                fmt_g17(summary.min_avg_rate.last().copied().unwrap_or(0.0))
            );
        }
        Command::Sweep { common, seeds, w_list } => {
            let base = load_config(&common)?;
            let ws: Vec<f64> = w_list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| cfiot_core::Error::Config(format!("bad W `{s}`")))
                })
                .collect::<cfiot_core::Result<Vec<_>>>()?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("sweep.csv");
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(
                out,
                "seed,w,scheme,min_avg_rate_final,sigma_hat_final,x_bar_final,y_bar_final,harvest_slots"
            )?;
            for s in 0..seeds {
                for &w in &ws {
                    let mut cfg = base.clone();
                    cfg.seed = base.seed + s;
                    cfg.penalty_w = w;
                    for (scheme, result) in
                        [("lyapunov", run_lyapunov(&cfg)?), ("greedy", run_greedy(&cfg)?)]
                    {
                        let (_, summary) = result;
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{},{}",
                            cfg.seed,
                            fmt_g17(w),
                            scheme,
                            fmt_g17(summary.min_avg_rate.last().copied().unwrap_or(0.0)),
                            fmt_g17(summary.sigma_hat.last().copied().unwrap_or(0.0)),
                            fmt_g17(summary.x_bar.last().copied().unwrap_or(0.0)),
                            fmt_g17(summary.y_bar.last().copied().unwrap_or(0.0)),
                            summary.harvest_slots
                        )?;
                    }
                }
            }
            println!("sweep: wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cfiot: {e}");
            ExitCode::FAILURE
        }
    }
}
