//! Command-line front end: `generate`, `simulate`, `analyze` and `run`.
//!
//! Every subcommand accepts the full flag surface so that the statistics file
//! echoes the same configuration whichever way the phases are chained.
//! `--config FILE` reads `key=value` lines (keys are flag names without the
//! leading dashes, `#` starts a comment); flags on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::engine::{self, RunStats, SimConfig};
use crate::io::{self, StatisticsDocument};
use crate::model::EndpointPolicy;
use crate::netgen::{self, GenerationParams};
use crate::routing::DistanceWeights;
use crate::stats::{self, SimStatistics, StatsParams};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "htlcsim", version, about = "Discrete-event simulator for HTLC payment-channel networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a random network and payment script into --out.
    #[command(args_override_self = true)]
    Generate(Options),
    /// Simulate the network and payments in --in, writing raw results to --out.
    #[command(args_override_self = true)]
    Simulate(Options),
    /// Compute batch-means statistics from the raw results in --in.
    #[command(args_override_self = true)]
    Analyze(Options),
    /// Generate, simulate and analyze into --out, then print a summary.
    #[command(args_override_self = true)]
    Run(Options),
}

impl Command {
    pub fn options(&self) -> &Options {
        match self {
            Command::Generate(o) | Command::Simulate(o) | Command::Analyze(o) | Command::Run(o) => o,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Options {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    // generation
    #[arg(long, default_value_t = 1000)]
    pub peers: usize,
    #[arg(long, default_value_t = 5.0)]
    pub avg_channels: f64,
    #[arg(long, default_value_t = 100.0)]
    pub sigma_topology: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub avg_capacity: u64,
    #[arg(long, default_value_t = 0.5)]
    pub gini: f64,
    /// Payments per second.
    #[arg(long, default_value_t = 100.0)]
    pub payment_rate: f64,
    #[arg(long, default_value_t = 10_000)]
    pub n_payments: usize,
    #[arg(long, default_value_t = 3.0)]
    pub sigma_amount: f64,
    #[arg(long, default_value_t = 0.0)]
    pub same_recipient_fraction: f64,
    #[arg(long, default_value_t = 1000)]
    pub base_fee_msat: u64,
    #[arg(long, default_value_t = 1000)]
    pub prop_fee_ppm: u64,
    #[arg(long, default_value_t = 144)]
    pub timelock_delta: u32,
    #[arg(long, default_value_t = 1)]
    pub min_htlc: u64,

    // simulation
    #[arg(long, default_value_t = 0.0)]
    pub p_uncoop_before: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_uncoop_after: f64,
    #[arg(long, default_value_t = 10)]
    pub latency_min: u64,
    #[arg(long, default_value_t = 100)]
    pub latency_max: u64,
    #[arg(long, default_value_t = 60_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 600_000)]
    pub block_interval_ms: u64,
    #[arg(long, default_value_t = 900_000)]
    pub validity_window_ms: u64,
    #[arg(long, default_value_t = 144)]
    pub final_timelock: u32,
    #[arg(long, default_value_t = 1.0)]
    pub fee_weight: f64,
    #[arg(long, default_value_t = 10.0)]
    pub timelock_weight: f64,

    // analysis
    #[arg(long, default_value_t = 30)]
    pub batches: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup_batches: usize,
    /// Average attempts over successful payments only.
    #[arg(long)]
    pub attempts_over_successes: bool,

    // plumbing, not echoed
    #[arg(long = "in", value_name = "DIR")]
    #[serde(skip)]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Independent replicas, seeded seed, seed+1, ... in run-NNN subdirectories.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    pub runs: usize,
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Default for Options {
    fn default() -> Self {
        match Cli::try_parse_from(["htlcsim", "run"]) {
            Ok(Cli {
                command: Command::Run(o),
            }) => o,
            _ => unreachable!("defaults always parse"),
        }
    }
}

impl Options {
    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            n_peers: self.peers,
            avg_channels_per_peer: self.avg_channels,
            topology_sigma: self.sigma_topology,
            p_uncoop_before: self.p_uncoop_before,
            p_uncoop_after: self.p_uncoop_after,
            avg_channel_capacity: self.avg_capacity,
            capacity_gini: self.gini,
            payment_rate: self.payment_rate,
            n_payments: self.n_payments,
            amount_sigma: self.sigma_amount,
            same_recipient_fraction: self.same_recipient_fraction,
            policy: EndpointPolicy {
                base_fee_msat: self.base_fee_msat,
                prop_fee_ppm: self.prop_fee_ppm,
                timelock_delta: self.timelock_delta,
                min_htlc: self.min_htlc,
            },
            seed: self.seed,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            latency_min_ms: self.latency_min,
            latency_max_ms: self.latency_max,
            payment_timeout_ms: self.timeout_ms,
            block_interval_ms: self.block_interval_ms,
            validity_window_ms: self.validity_window_ms,
            p_uncoop_before: self.p_uncoop_before,
            p_uncoop_after: self.p_uncoop_after,
            weights: DistanceWeights {
                fee_weight: self.fee_weight,
                timelock_weight: self.timelock_weight,
            },
            final_timelock: self.final_timelock,
            seed: self.seed,
        }
    }

    pub fn stats_params(&self) -> StatsParams {
        StatsParams {
            n_batches: self.batches,
            warmup_batches: self.warmup_batches,
            attempts_over_successes_only: self.attempts_over_successes,
        }
    }

    /// The configuration echoed into the statistics file.
    pub fn echo(&self) -> BTreeMap<String, serde_json::Value> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(map)) => map.into_iter().collect(),
            _ => BTreeMap::new(),
        }
    }

    fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required".into()))
    }

    fn require_in(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Config("--in is required".into()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| {
        Error::Io(io::IoError::Io {
            path: dir.to_owned(),
            source,
        })
    })
}

/// Writes peers, channels, endpoints and payments into `out`.
pub fn cmd_generate(opts: &Options, out: &Path) -> Result<netgen::GeneratedInstance> {
    let params = opts.generation_params();
    let instance = netgen::generate(&params)?;
    create_dir(out)?;
    io::write_network(out, &instance.network)?;
    io::write_payments(&out.join(io::PAYMENTS_FILE), &instance.payments)?;
    eprintln!(
        "generated {} peers, {} channels, {} payments; channels per peer: {:.3} initiated, {:.3} incident",
        instance.network.n_peers(),
        instance.network.channels.len(),
        instance.payments.len(),
        instance.initiated_per_peer,
        instance.incident_per_peer,
    );
    Ok(instance)
}

/// Simulates the instance in `input` and writes the raw per-payment file into `out`.
pub fn cmd_simulate(opts: &Options, input: &Path, out: &Path) -> Result<RunStats> {
    let network = io::read_network(input)?;
    let payments = io::read_payments(&input.join(io::PAYMENTS_FILE), network.n_peers())?;
    let output = engine::run(network, payments, opts.sim_config())?;
    create_dir(out)?;
    let records = stats::records_from_payments(&output.payments);
    io::write_records(&out.join(io::RAW_OUTPUT_FILE), &records)?;
    Ok(output.stats)
}

/// Computes batch-means statistics from the raw file in `input` and writes them into `out`.
pub fn cmd_analyze(opts: &Options, input: &Path, out: &Path) -> Result<StatisticsDocument> {
    let records = io::read_records(&input.join(io::RAW_OUTPUT_FILE))?;
    let params = opts.stats_params();
    let report = stats::batch_means(&records, &params)?;
    let doc = StatisticsDocument::new(report.statistics, &params, opts.echo());
    create_dir(out)?;
    io::write_statistics(&out.join(io::STATISTICS_FILE), &doc)?;
    Ok(doc)
}

/// All three phases into `out`.
pub fn cmd_run(opts: &Options, out: &Path) -> Result<StatisticsDocument> {
    cmd_generate(opts, out)?;
    cmd_simulate(opts, out, out)?;
    cmd_analyze(opts, out, out)
}

fn fmt_measure(m: Option<&stats::MeasureStats>, scale: f64) -> String {
    match m {
        Some(m) => format!(
            "{:>12.6} {:>12.6} {:>12.6}",
            m.mean * scale,
            m.ci95_low * scale,
            m.ci95_high * scale
        ),
        None => format!("{:>12} {:>12} {:>12}", "n/a", "n/a", "n/a"),
    }
}

/// Human-readable table of the nine measures.
pub fn summary_table(s: &SimStatistics) -> String {
    let rows: [(&str, Option<&stats::MeasureStats>, f64); 9] = [
        ("P(success)", Some(&s.p_success), 1.0),
        ("P(fail, no route)", Some(&s.p_fail_no_route), 1.0),
        ("P(fail, unbalanced)", Some(&s.p_fail_unbalanced), 1.0),
        ("P(fail, uncooperative)", Some(&s.p_fail_uncooperative), 1.0),
        ("P(fail, timeout)", Some(&s.p_fail_timeout), 1.0),
        ("P(unknown)", Some(&s.p_unknown), 1.0),
        ("payment time (s)", s.payment_time_ms.as_ref(), 1e-3),
        ("attempts", s.attempts.as_ref(), 1.0),
        ("route length", s.route_length.as_ref(), 1.0),
    ];
    let mut out = format!("{:<24} {:>12} {:>12} {:>12}\n", "measure", "mean", "ci95 low", "ci95 high");
    for (name, m, scale) in rows {
        out.push_str(&format!("{name:<24} {}\n", fmt_measure(m, scale)));
    }
    out
}

/// Options for replica `k` of `opts.runs`: its seed and directories.
fn replica(opts: &Options, k: usize) -> Options {
    let mut o = opts.clone();
    o.runs = 1;
    if opts.runs > 1 {
        let sub = format!("run-{k:03}");
        o.seed = opts.seed.wrapping_add(k as u64);
        o.input = opts.input.as_ref().map(|d| d.join(&sub));
        o.out = opts.out.as_ref().map(|d| d.join(&sub));
    }
    o
}

/// Runs `job` once per replica, in parallel when there is more than one.
fn for_each_replica<T: Send>(opts: &Options, job: impl Fn(&Options) -> Result<T> + Sync) -> Result<Vec<T>> {
    if opts.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    if opts.runs == 1 {
        return Ok(vec![job(&replica(opts, 0))?]);
    }
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(opts.runs);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..opts.runs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= opts.runs {
                    break;
                }
                let r = job(&replica(opts, k));
                slots.lock().unwrap_or_else(|e| e.into_inner())[k] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(Error::Config("replica did not run".into()))))
        .collect()
}

/// Executes a parsed command, printing the `run` summary to stdout.
pub fn execute(command: &Command) -> Result<()> {
    let opts = command.options();
    match command {
        Command::Generate(_) => {
            for_each_replica(opts, |o| cmd_generate(o, o.require_out()?).map(|_| ()))?;
        }
        Command::Simulate(_) => {
            for_each_replica(opts, |o| {
                let input = o.require_in()?;
                cmd_simulate(o, input, o.out.as_deref().unwrap_or(input)).map(|_| ())
            })?;
        }
        Command::Analyze(_) => {
            for_each_replica(opts, |o| {
                let input = o.require_in()?;
                cmd_analyze(o, input, o.out.as_deref().unwrap_or(input)).map(|_| ())
            })?;
        }
        Command::Run(_) => {
            let docs = for_each_replica(opts, |o| cmd_run(o, o.require_out()?))?;
            for (k, doc) in docs.iter().enumerate() {
                if opts.runs > 1 {
                    println!("run-{k:03} (seed {})", opts.seed.wrapping_add(k as u64));
                }
                print!("{}", summary_table(&doc.statistics));
            }
        }
    }
    Ok(())
}

/// Turns `key=value` lines into `--key value` arguments.
pub fn config_file_args(text: &str, file: &str) -> Result<Vec<OsString>> {
    let mut args = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("{file}:{}: expected key=value", n + 1)));
        };
        let key = key.trim();
        if key.is_empty() || key == "config" {
            return Err(Error::Config(format!("{file}:{}: invalid key {key:?}", n + 1)));
        }
        // Switches take no value on the command line.
        match value.trim() {
            "false" => {}
            "true" => args.push(format!("--{key}").into()),
            v => {
                args.push(format!("--{key}").into());
                args.push(v.into());
            }
        }
    }
    Ok(args)
}

#[derive(Debug)]
pub enum ParseError {
    Clap(clap::Error),
    Config(Error),
}

/// Parses arguments, splicing in any `--config` file ahead of the command-line flags.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, ParseError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args).map_err(ParseError::Clap)?;
    let Some(path) = cli.command.options().config.clone() else {
        return Ok(cli);
    };
    let text = std::fs::read_to_string(&path).map_err(|source| {
        ParseError::Config(Error::Io(io::IoError::Io {
            path: path.clone(),
            source,
        }))
    })?;
    let file_args = config_file_args(&text, &path.display().to_string()).map_err(ParseError::Config)?;
    let mut spliced = args[..2].to_vec();
    spliced.extend(file_args);
    spliced.extend_from_slice(&args[2..]);
    Cli::try_parse_from(spliced).map_err(ParseError::Clap)
}

/// Entry point shared by the binary: parse, execute, map failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(args) {
        Ok(cli) => cli,
        Err(ParseError::Clap(e)) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
        Err(ParseError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library_defaults() {
        let o = Options::default();
        assert_eq!(o.generation_params(), GenerationParams::default());
        assert_eq!(o.sim_config(), SimConfig::default());
        assert_eq!(o.stats_params(), StatsParams::default());
    }

    #[test]
    fn config_lines_become_flags() {
        let args = config_file_args("# c\npeers = 20\n\nseed=7 # trailing\n", "f").unwrap();
        assert_eq!(args, ["--peers", "20", "--seed", "7"].map(OsString::from));
        assert!(config_file_args("peers\n", "f").is_err());
        assert!(config_file_args("config=x\n", "f").is_err());
    }

    #[test]
    fn command_line_overrides_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "peers=20\nseed=7\n").unwrap();
        let cli = parse_args([
            "htlcsim".into(),
            "run".into(),
            "--seed".into(),
            "9".into(),
            "--config".into(),
            cfg.into_os_string(),
        ])
        .unwrap();
        let o = cli.command.options();
        assert_eq!(o.peers, 20);
        assert_eq!(o.seed, 9);
    }

    #[test]
    fn echo_skips_paths() {
        let o = Options {
            out: Some("/tmp/x".into()),
            ..Options::default()
        };
        let echo = o.echo();
        assert!(!echo.contains_key("out"));
        assert!(!echo.contains_key("runs"));
        assert_eq!(echo["peers"], serde_json::json!(1000));
    }
}
