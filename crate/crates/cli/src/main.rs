use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use frameside::harness::{run_scenario, run_sweep, ScenarioConfig};
use frameside::trace::{
    format_summary, parse_summary, parse_trace, write_probe_log, write_summary, write_sweep,
    write_trace,
};
use frameside::Outcome;

/// Deterministic simulator of the Wi-Fi frame-size side channel against
/// off-path TCP.
#[derive(Parser)]
#[command(name = "frameside", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Scenario config (TOML); defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (FRAMESIDE_OUT overrides, default ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one attack scenario end to end.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Also write the full frame trace (can be large).
        #[arg(long)]
        trace: bool,
    },
    /// Sweep one config knob over several values.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Dotted config path, e.g. channel.loss_prob.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value_t = 5)]
        trials: u32,
    },
    /// Re-read a frame trace and print a size histogram.
    Replay {
        /// Path to a frameside-trace file.
        trace: PathBuf,
    },
    /// Pretty-print a run summary file.
    Report {
        /// Path to a frameside-summary file.
        summary: PathBuf,
    },
}

fn out_dir(opt: &Option<PathBuf>) -> PathBuf {
    if let Ok(env) = std::env::var("FRAMESIDE_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    opt.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn load_config(common: &CommonOpts) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ScenarioConfig::from_toml(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate().context("invalid scenario config")?;
    Ok(cfg)
}

fn cmd_run(common: &CommonOpts, with_trace: bool) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let dir = out_dir(&common.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let run = run_scenario(&cfg).context("running scenario")?;

    write_summary(&dir.join("summary.txt"), &run.summary)?;
    write_probe_log(&dir.join("probes.csv"), &run.probe_log)?;
    if with_trace {
        write_trace(&dir.join("trace.csv"), &run.trace)?;
    }
    print!("{}", format_summary(&run.summary));
    Ok(match run.report.outcome {
        Outcome::Success => ExitCode::SUCCESS,
        _ => ExitCode::from(2),
    })
}

fn cmd_sweep(common: &CommonOpts, axis: &str, values: &[String], trials: u32) -> Result<ExitCode> {
    anyhow::ensure!(!values.is_empty(), "sweep needs at least one --values entry");
    let cfg = load_config(common)?;
    let dir = out_dir(&common.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows = run_sweep(&cfg, axis, values, trials).map_err(anyhow::Error::msg)?;
    write_sweep(&dir.join("sweep.csv"), axis, &rows)?;

    println!("axis: {axis} ({trials} trials per value)");
    for value in values {
        let subset: Vec<_> = rows.iter().filter(|r| &r.axis_value == value).collect();
        let ok = subset.iter().filter(|r| r.outcome == "success").count();
        let mean_time =
            subset.iter().map(|r| r.time_us as f64).sum::<f64>() / subset.len().max(1) as f64;
        println!(
            "  {axis} = {value}: success {ok}/{}, mean virtual time {:.1}s",
            subset.len(),
            mean_time / 1e6
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(path: &Path) -> Result<ExitCode> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading trace {}", path.display()))?;
    let frames = parse_trace(&text)?;
    let mut sizes: BTreeMap<u32, u32> = BTreeMap::new();
    for f in &frames {
        *sizes.entry(f.observable_len).or_insert(0) += 1;
    }
    println!("frames: {}", frames.len());
    if let (Some(first), Some(last)) = (frames.first(), frames.last()) {
        println!("span_us: {}", last.t.0.saturating_sub(first.t.0));
    }
    for (len, n) in sizes {
        println!("len {len}: {n}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(path: &Path) -> Result<ExitCode> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading summary {}", path.display()))?;
    let fields = parse_summary(&text)?;
    let get = |k: &str| fields.get(k).map(String::as_str).unwrap_or("-");
    println!("scenario {} (seed {})", get("name"), get("seed"));
    println!("outcome: {}", get("outcome"));
    println!(
        "probes: {}  bytes: {}  virtual time: {}us  bandwidth: {} KB/s",
        get("probes"),
        get("bytes"),
        get("virtual_time_us"),
        get("bandwidth_kbps")
    );
    println!(
        "port: {} (true {})  rcv_nxt: {} (true {})",
        get("port_found"),
        get("port_true"),
        get("rcv_nxt_found"),
        get("rcv_nxt_true")
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, trace } => cmd_run(common, *trace),
        Command::Sweep { common, axis, values, trials } => {
            cmd_sweep(common, axis, values, *trials)
        }
        Command::Replay { trace } => cmd_replay(trace),
        Command::Report { summary } => cmd_report(summary),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
