//! Command-line front end for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use seqcal::harness::config::Granularity;
use seqcal::harness::{self, swarm, Config, ExperimentId, ExperimentOutput};

#[derive(Parser)]
#[command(name = "seqcal", version, about = "Anytime-valid coverage monitoring experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; omitted blocks keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory count override.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Exit nonzero if any acceptance-tagged metric fails.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One verbose end-to-end swarm trajectory, written as JSON Lines.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trajectory index within the master seed.
        #[arg(long, default_value_t = 0)]
        index: u32,
    },
    /// Run one experiment ensemble, or `all`.
    Experiment {
        id: String,
        #[command(flatten)]
        common: Common,
    },
    /// The one-at-a-time alpha / delta_e / cap sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Merge summaries in a directory into report.csv.
    Report {
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        check: bool,
    },
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.master_seed = s;
    }
    if let Some(w) = common.workers {
        cfg.run.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_one(id: ExperimentId, common: &Common, cfg: &Config) -> Result<ExperimentOutput> {
    let mut cfg = cfg.clone();
    if let Some(n) = common.seeds {
        cfg.set_seeds(id, n);
    }
    let out = harness::run_experiment(id, &cfg).with_context(|| format!("experiment {id}"))?;
    harness::write_outputs(&out, &common.out, cfg.run.trajectories)?;
    println!("{id}: {}", out.headline);
    for m in out.failures() {
        println!("  FAIL {} = {:.6} (band [{:?}, {:?}])", m.name, m.value, m.lower, m.upper);
    }
    Ok(out)
}

fn verdict(failed: usize, check: bool) -> ExitCode {
    if check && failed > 0 {
        eprintln!("{failed} acceptance metric(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common, index } => {
            let mut cfg = load(&common)?;
            cfg.run.trajectories = Granularity::Steps;
            let traj = swarm::simulate(&cfg, index)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("simulate.jsonl");
            let mut text = String::new();
            for row in &traj.record.rows {
                text.push_str(&serde_json::to_string(row)?);
                text.push('\n');
            }
            text.push_str(&serde_json::to_string(&traj.record.summary)?);
            text.push('\n');
            std::fs::write(&path, text)?;
            let s = &traj.record.summary;
            println!(
                "steps {}, alarm at {:?}, miss rate {:.4}, refreshes {}, b {:.4} -> {:.4}, cost {}; rows in {}",
                s.steps,
                s.alarm_step,
                traj.miss_rate,
                traj.refreshes,
                traj.b_first,
                traj.b_last,
                s.total_cost,
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Experiment { id, common } => {
            let cfg = load(&common)?;
            let ids: Vec<ExperimentId> = if id.eq_ignore_ascii_case("all") {
                ExperimentId::ALL.to_vec()
            } else {
                vec![id.parse()?]
            };
            let mut failed = 0;
            for id in ids {
                failed += run_one(id, &common, &cfg)?.failures().len();
            }
            Ok(verdict(failed, common.check))
        }
        Command::Sweep { common } => {
            let cfg = load(&common)?;
            let failed = run_one(ExperimentId::E12, &common, &cfg)?.failures().len();
            Ok(verdict(failed, common.check))
        }
        Command::Report { out, check } => {
            let rep = harness::report(&out)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} rows merged into {}", rep.rows.len(), out.join("report.csv").display());
            let failed = rep.failures();
            for r in &failed {
                println!("  FAIL {} {} = {:.6}", r.experiment, r.metric, r.value);
            }
            Ok(verdict(failed.len(), check))
        }
    }
}
