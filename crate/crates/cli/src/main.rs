use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use qaserve::catalog::Catalog;
use qaserve::config::{ConfigError, RunConfig};
use qaserve::metrics::export_csv;
use qaserve::sim::{run, Policy, RunOutput};
use qaserve::validate::{run_suite, Suite};
use qaserve::workload::{gen_bursty, gen_poisson, gen_ramp, ArrivalTrace, WorkloadError};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

const OUT_DIR_ENV: &str = "QASERVE_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "qaserve", version, about = "Quality-aware diffusion serving experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one policy for every configured seed.
    Run(RunArgs),
    /// Run several policies on the same arrivals and print a summary table.
    Compare(CompareArgs),
    /// Run the oracle equivalence suites.
    Validate(ValidateArgs),
    /// Write a synthetic arrival trace.
    GenTrace(GenTraceArgs),
}

/// Flags that override scalar fields of the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// Experiment definition (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Replaces the configured seed list; may be repeated.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; beats the config's `output_dir`.
    #[arg(short, long, env = OUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    policy: Option<Policy>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Overrides,
    /// Comma-separated; defaults to the config's `policies`.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<Policy>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Comma-separated subset of ilp, oda, eq3.
    #[arg(long, value_delimiter = ',')]
    suites: Vec<Suite>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GenTraceArgs {
    #[command(subcommand)]
    generator: Generator,
    /// Destination file, one arrival time in seconds per line.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Generator {
    Poisson {
        #[arg(long)]
        qpm: f64,
        #[arg(long)]
        duration_min: f64,
    },
    Ramp {
        #[arg(long)]
        start_qpm: f64,
        #[arg(long)]
        end_qpm: f64,
        #[arg(long)]
        duration_min: u32,
    },
    Bursty {
        #[arg(long)]
        low_qpm: f64,
        #[arg(long)]
        high_qpm: f64,
        #[arg(long)]
        period_min: f64,
        #[arg(long)]
        duty: f64,
        #[arg(long)]
        duration_min: f64,
    },
}

/// Exit 2: the experiment definition is unusable. Exit 1: it failed while running.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<WorkloadError> for Failure {
    fn from(e: WorkloadError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Validate(args) => cmd_validate(args),
        Command::GenTrace(args) => cmd_gen_trace(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Loads the config, applies flag overrides, validates it and prepares the
/// output directory.
fn prepare(o: &Overrides) -> Result<(RunConfig, Catalog, PathBuf), Failure> {
    let mut cfg = RunConfig::load(&o.config)?;
    if !o.seeds.is_empty() {
        cfg.seeds = o.seeds.clone();
    }
    if let Some(w) = o.workers {
        cfg.sim.workers = w;
    }
    let catalog = cfg.validate()?;
    let out = o
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(|d| cfg.base_dir.join(d)))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    Ok((cfg, catalog, out))
}

fn stem(cfg: &RunConfig, policy: Policy, seed: u64) -> String {
    format!("{}-{}-seed{}", cfg.name, policy, seed)
}

fn write_outputs(out_dir: &Path, stem: &str, catalog: &Catalog, result: &RunOutput) -> Result<(), Failure> {
    let csv = out_dir.join(format!("{stem}.csv"));
    export_csv(&result.report, &csv).map_err(runtime)?;
    let mut pasm = String::new();
    let mut plans = String::from("time_s epoch mode strategy w_t_qpm alive assignment loads f_dist infeasible\n");
    for r in &result.resolves {
        let labels: Vec<&str> = catalog.variants(r.strategy).iter().map(|v| v.id.as_str()).collect();
        if let Some(p) = &r.pasm {
            let _ = writeln!(pasm, "# t={}", r.time_s);
            pasm.push_str(&p.dump(&labels));
        }
        if let Some(p) = &r.plan {
            let _ = writeln!(
                plans,
                "{} {} {} {} {} {} {:?} {:?} {:?} {}",
                r.time_s, r.epoch, r.mode, r.strategy, r.w_t_qpm, r.alive_workers, p.assignment, p.loads, p.f_dist, p.infeasible
            );
        }
    }
    let write = |name: String, text: &str| fs::write(out_dir.join(&name), text).map_err(|e| runtime(format!("cannot write {name}: {e}")));
    write(format!("{stem}.pasm.txt"), &pasm)?;
    write(format!("{stem}.plans.txt"), &plans)?;
    info!("wrote {}", csv.display());
    Ok(())
}

fn summary_line(r: &RunOutput) -> String {
    let a = &r.report.aggregate;
    format!(
        "{:<20} {:>6} {:>10.2} {:>9.4} {:>9.3} {:>8.2} {:>7.1} {:>6}",
        r.policy.as_str(),
        r.seed,
        a.throughput_qpm,
        a.slo_violation_ratio,
        a.effective_quality,
        a.relative_quality_pct,
        a.utilization_pct,
        r.switches.len()
    )
}

const SUMMARY_HEADER: &str = "policy                 seed thrpt(qpm) slo_viol  eff_qual  rel_q(%)  util(%) switch";

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let (cfg, catalog, out_dir) = prepare(&args.common)?;
    let policy = args.policy.unwrap_or(cfg.policy);
    let faults = cfg.fault_script();
    println!("{SUMMARY_HEADER}");
    for &seed in &cfg.seeds {
        let trace = cfg.trace(seed)?;
        let result = run(&catalog, &cfg.sim, &trace, &faults, policy, seed).map_err(runtime)?;
        write_outputs(&out_dir, &stem(&cfg, policy, seed), &catalog, &result)?;
        println!("{}", summary_line(&result));
    }
    Ok(())
}

/// SHA-256 over the little-endian bytes of the arrival times.
fn arrival_checksum<'a>(times: impl Iterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for t in times {
        h.update(t.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Checksum of the arrivals a run actually served, in prompt order.
fn served_checksum(r: &RunOutput) -> String {
    let mut seen: Vec<(u64, f64)> = r.completions.iter().map(|c| (c.prompt_id, c.arrival_time_s)).collect();
    seen.sort_by_key(|(id, _)| *id);
    arrival_checksum(seen.iter().map(|(_, t)| t))
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let (cfg, catalog, out_dir) = prepare(&args.common)?;
    let mut policies = if args.policies.is_empty() { cfg.policies.clone() } else { args.policies };
    policies.dedup();
    if policies.len() < 2 {
        return Err(Failure::Config(format!("compare needs at least two policies, got {}", policies.len())));
    }
    let faults = cfg.fault_script();
    for &seed in &cfg.seeds {
        let trace: ArrivalTrace = cfg.trace(seed)?;
        let checksum = arrival_checksum(trace.arrivals.iter());
        println!("seed {seed}: {} arrivals, sha256 {checksum}", trace.len());
        let results: Vec<Result<RunOutput, String>> = policies
            .par_iter()
            .map(|p| run(&catalog, &cfg.sim, &trace, &faults, *p, seed).map_err(|e| e.to_string()))
            .collect();
        println!("{SUMMARY_HEADER} served_sha256");
        for r in results {
            let r = r.map_err(Failure::Runtime)?;
            write_outputs(&out_dir, &stem(&cfg, r.policy, seed), &catalog, &r)?;
            let served = served_checksum(&r);
            let tag = if r.unfinished == 0 && served == checksum { "match" } else { "partial" };
            println!("{} {}.. {tag}", summary_line(&r), &served[..12]);
        }
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let suites = if args.suites.is_empty() { Suite::ALL.to_vec() } else { args.suites };
    let mut failed = 0;
    for s in suites {
        let report = run_suite(s, args.seed);
        println!("{report}");
        if !report.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} suite(s) failed")));
    }
    Ok(())
}

fn cmd_gen_trace(args: GenTraceArgs) -> Result<(), Failure> {
    let trace = match args.generator {
        Generator::Poisson { qpm, duration_min } => gen_poisson(qpm, duration_min, args.seed),
        Generator::Ramp { start_qpm, end_qpm, duration_min } => gen_ramp(start_qpm, end_qpm, duration_min, args.seed),
        Generator::Bursty { low_qpm, high_qpm, period_min, duty, duration_min } => {
            gen_bursty(low_qpm, high_qpm, period_min, duty, duration_min, args.seed)
        }
    }?;
    let path = args.out.unwrap_or_else(|| PathBuf::from(format!("{}-seed{}.trace", trace.name, args.seed)));
    trace.write_to(&path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("{} arrivals over {} s -> {}", trace.len(), trace.duration_s, path.display());
    Ok(())
}
