//! `mvx`: run dMVX scenarios and the benchmark suite.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use mvx_core::dipmon::MispredictionPolicy;
use mvx_core::error::MvxError;
use mvx_core::harness::bench::{bench_suite, load_policy, load_script, Suite};
use mvx_core::harness::{emit_report, run_repeated, AttackSpec, ChannelSpec, KernelFault, RunConfig};
use mvx_core::transport::ChannelFlavor;

const EXIT_USAGE: u8 = 64;
const EXIT_FAILURE: u8 = 1;

#[derive(Parser)]
#[command(name = "mvx", version, about = "Distributed multi-variant execution simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and report its verdict and metrics.
    Run(RunArgs),
    /// Run every suite workload under all optimization sets.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        /// Channel for the private link; latency falls back to the suite's.
        #[arg(long)]
        channel: Option<ChannelSpec>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Sensitivity policy; the built-in default is used when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, conflicts_with = "rsm")]
    ssm: bool,
    #[arg(long)]
    rsm: bool,
    #[arg(long)]
    sr: bool,
    #[arg(long, default_value = "sim:50")]
    channel: ChannelSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    repeat: u32,
    #[arg(long, default_value_t = 2)]
    variants: u16,
    #[arg(long = "attack")]
    attacks: Vec<AttackSpec>,
    #[arg(long = "fault")]
    faults: Vec<KernelFault>,
    #[arg(long, default_value = "/app")]
    app_root: String,
    #[arg(long, default_value = "retry")]
    misprediction: MispredictionPolicy,
    #[arg(long)]
    retry_budget: Option<u32>,
    #[arg(long)]
    cb_capacity: Option<usize>,
    /// Wall-clock lockstep barrier timeout in milliseconds.
    #[arg(long)]
    barrier_timeout_ms: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Print to stdout, ignoring a closed pipe.
fn say(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{}", text.trim_end());
}

fn build_config(a: &RunArgs) -> Result<RunConfig, MvxError> {
    let mut cfg = RunConfig::new(load_script(&a.scenario)?);
    if let Some(p) = &a.policy {
        cfg.policy = Arc::new(load_policy(p)?);
    }
    cfg.ssm = a.ssm;
    cfg.rsm = a.rsm;
    cfg.sr = a.sr;
    cfg.channel = a.channel;
    cfg.seed = a.seed;
    cfg.variants = a.variants;
    cfg.attacks = a.attacks.clone();
    cfg.faults = a.faults.clone();
    cfg.app_root = a.app_root.clone();
    cfg.misprediction = a.misprediction;
    if let Some(b) = a.retry_budget {
        cfg.retry_budget = b;
    }
    if let Some(c) = a.cb_capacity {
        cfg.cb_capacity = c;
    }
    if let Some(ms) = a.barrier_timeout_ms {
        cfg.barrier_timeout = Duration::from_millis(ms);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: &RunArgs) -> Result<u8, MvxError> {
    let cfg = build_config(a)?;
    let prefix = format!("{}-{}-s{}", cfg.workload.name, cfg.mode_label(), cfg.seed);
    let runs = run_repeated(&cfg, a.repeat, &prefix)?;
    for r in &runs {
        say(&r.summary());
    }
    if let Some(out) = &a.out {
        emit_report(&runs, out)?;
    }
    // The worst verdict across repetitions decides the exit code.
    Ok(runs.iter().map(|r| r.verdict.exit_code()).max().unwrap_or(0) as u8)
}

fn bench(dir: &Path, channel: Option<ChannelSpec>, out: Option<&PathBuf>) -> Result<u8, MvxError> {
    let mut suite = Suite::load(dir)?;
    let flavor = match channel {
        Some(c) => {
            suite.latency_us = c.latency_us;
            c.flavor
        }
        None => ChannelFlavor::Simulated,
    };
    let report = bench_suite(&suite, flavor)?;
    say(&report.table());
    if let Some(out) = out {
        emit_report(&report.runs, out)?;
    }
    Ok(if report.passed() { 0 } else { EXIT_FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Bench { suite, channel, out } => bench(suite, *channel, out.as_ref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e @ (MvxError::Config(_) | MvxError::Scenario(_))) => {
            eprintln!("mvx: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("mvx: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
