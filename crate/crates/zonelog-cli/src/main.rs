//! Command-line front end: workload runs with recovery verification, and
//! copyset loss simulation.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use zonelog::copysets::{
    copyset_loss_fraction, random_replication_loss, ClusterView, CopysetManager,
};
use zonelog::Engine;

use zonelog_cli::metrics::{write_samples_csv, write_summary_json};
use zonelog_cli::oracle::ShadowOracle;
use zonelog_cli::runner::{run_workload, BackendArg, BenchConfig, StrategyArg, MIB};
use zonelog_cli::workload::{zone_layout, Distribution, WorkloadSpec};

#[derive(Parser)]
#[command(name = "zonelog", version, about = "Log-structured backup storage engine benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Workload benchmarks and recovery verification.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Copyset placement tooling.
    #[command(subcommand)]
    Copysets(CopysetsCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Load + update run with verification against the shadow oracle.
    Run(RunArgs),
    /// Recover a kept run directory and verify it against its oracle.
    Recover(RecoverArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Seq,
    Rand,
    Zipf,
    Hnc,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Distribution {
        match d {
            DistArg::Seq => Distribution::Sequential,
            DistArg::Rand => Distribution::Random,
            DistArg::Zipf => Distribution::Zipf,
            DistArg::Hnc => Distribution::HotNCold,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendOpt {
    Buffered,
    Direct,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyOpt {
    Basic,
    Timestamp,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyMode {
    Normal,
    Powerfail,
    None,
}

#[derive(Args)]
struct RunArgs {
    /// Access distribution of the update phase.
    #[arg(long, value_enum)]
    dist: DistArg,
    #[arg(long, default_value_t = 100_000)]
    chunks: u64,
    /// Chunk payload size in bytes.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Zipf skew (1 = harmonic).
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = BackendOpt::Buffered)]
    backend: BackendOpt,
    #[arg(long, value_enum, default_value_t = StrategyOpt::Basic)]
    strategy: StrategyOpt,
    /// Update-phase volume as a multiple of the chunk count.
    #[arg(long, default_value_t = 2)]
    update_factor: u32,
    #[arg(long, default_value_t = 10)]
    batch: u64,
    /// Working directory for logs and reports (a temporary directory when
    /// omitted).
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Keep the run directory (with oracle and config) for `bench recover`.
    #[arg(long)]
    keep: bool,
    /// Force a zone count instead of deriving it from the zone capacity.
    #[arg(long)]
    zones: Option<u64>,
    #[arg(long, default_value_t = 16 * MIB as u64)]
    zone_capacity: u64,
    #[arg(long, default_value_t = MIB)]
    segment: usize,
    #[arg(long, default_value_t = 4 * MIB)]
    write_buffer: usize,
    /// Two-level threshold and secondary log buffer size; 0 sends all
    /// batches directly to the secondary logs.
    #[arg(long, default_value_t = 128 * 1024)]
    two_level_threshold: usize,
    /// Disable the primary log entirely.
    #[arg(long)]
    no_two_level: bool,
    /// Store header timestamps (implied by --strategy timestamp).
    #[arg(long)]
    timestamps: bool,
    /// Run the background flusher/reorganizer threads instead of the
    /// synchronous pipeline.
    #[arg(long)]
    threaded: bool,
    /// Stop without flushing after this many acked operations: a simulated
    /// power cut (verify with --verify powerfail or `bench recover`).
    #[arg(long)]
    crash_after: Option<u64>,
    #[arg(long, value_enum, default_value_t = VerifyMode::Normal)]
    verify: VerifyMode,
    #[arg(long, default_value_t = 2000)]
    sample_every: u64,
}

#[derive(Args)]
struct RecoverArgs {
    /// A run directory produced by `bench run --keep`.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_enum)]
    mode: RecoverMode,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecoverMode {
    Normal,
    Powerfail,
}

#[derive(Subcommand)]
enum CopysetsCommand {
    /// Emits a loss-probability table comparing copyset and random
    /// replication as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 12)]
    nodes: u16,
    #[arg(long, default_value_t = 3)]
    r: usize,
    #[arg(long, default_value_t = 4)]
    s: usize,
    /// Zone count for the random-replication baseline.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(BenchCommand::Run(args)) => bench_run(args),
        Command::Bench(BenchCommand::Recover(args)) => bench_recover(args),
        Command::Copysets(CopysetsCommand::Simulate(args)) => copysets_simulate(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn bench_run(args: RunArgs) -> anyhow::Result<()> {
    let (dir, _tempdir) = match &args.dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            (d.clone(), None)
        }
        None => {
            let t = tempfile::TempDir::with_prefix("zonelog-bench-")?;
            (t.path().to_path_buf(), Some(t))
        }
    };

    // nominal per-chunk footprint in a zone: payload plus header overhead
    let per_chunk = (args.size + 16) as u64;
    let chunks_per_zone = match args.zones {
        Some(zones) => zone_layout(args.chunks, args.chunks.div_ceil(zones), args.batch),
        None => zone_layout(
            args.chunks,
            (args.zone_capacity / per_chunk).max(args.batch),
            args.batch,
        ),
    };
    let spec = WorkloadSpec {
        distribution: args.dist.into(),
        chunk_count: args.chunks,
        chunk_size: args.size,
        update_factor: args.update_factor,
        batch: args.batch,
        skew: args.skew,
        seed: args.seed,
        chunks_per_zone,
    };
    let mut bench = BenchConfig::desk(spec, dir.join("logs"));
    bench.backend = match args.backend {
        BackendOpt::Buffered => BackendArg::Buffered,
        BackendOpt::Direct => BackendArg::Direct,
        BackendOpt::Raw => BackendArg::Raw,
    };
    bench.strategy = match args.strategy {
        StrategyOpt::Basic => StrategyArg::Basic,
        StrategyOpt::Timestamp => StrategyArg::Timestamp,
        StrategyOpt::Random => StrategyArg::Random,
    };
    bench.zone_capacity = args.zone_capacity;
    bench.segment_size = args.segment;
    bench.write_buffer = args.write_buffer;
    bench.two_level_threshold = args.two_level_threshold;
    bench.two_level_enabled = !args.no_two_level;
    bench.timestamps = args.timestamps;
    bench.threaded = args.threaded;
    bench.sample_every = args.sample_every;

    let engine = Engine::open(bench.engine_config()).context("opening engine")?;
    eprintln!(
        "running {} / {} / {}: {} chunks x {} B, {} zones",
        bench.spec.distribution.name(),
        format!("{:?}", bench.backend).to_lowercase(),
        format!("{:?}", bench.strategy).to_lowercase(),
        bench.spec.chunk_count,
        bench.spec.chunk_size,
        bench.spec.zone_count()
    );
    let mut outcome = run_workload(&bench, &engine, args.crash_after)?;

    outcome.oracle.audit_stamps().map_err(anyhow::Error::msg)?;

    let verification = match args.verify {
        VerifyMode::None => None,
        VerifyMode::Normal if outcome.summary.crashed => {
            anyhow::bail!("a crashed run can only be verified with --verify powerfail")
        }
        VerifyMode::Normal => {
            let recovered = engine.recover_normal()?;
            Some(outcome.oracle.verify(&recovered))
        }
        VerifyMode::Powerfail => {
            // reopen from disk: in-memory state is gone
            drop(engine);
            let engine = Engine::open(bench.engine_config())?;
            let recovered = engine.recover_power_failure()?;
            Some(outcome.oracle.verify(&recovered))
        }
    };
    outcome.summary.verification = verification.as_ref().map(|v| match v {
        Ok(()) => "pass".to_string(),
        Err(e) => format!("fail: {e}"),
    });

    write_samples_csv(&dir.join("utilization.csv"), &outcome.samples)?;
    write_summary_json(&dir.join("summary.json"), &outcome.summary)?;
    if args.keep {
        bench.save(&dir.join("bench.json"))?;
        outcome.oracle.save(&dir.join("oracle.bin"))?;
    }
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);

    match verification {
        Some(Err(e)) => anyhow::bail!("verification failed: {e}"),
        _ => Ok(()),
    }
}

fn bench_recover(args: RecoverArgs) -> anyhow::Result<()> {
    let bench = BenchConfig::load(&args.dir.join("bench.json"))
        .context("reading bench.json (run with --keep)")?;
    let oracle = ShadowOracle::load(&args.dir.join("oracle.bin"))?;
    let mut cfg = bench.engine_config();
    cfg.data_dir = args.dir.join("logs");
    let engine = Engine::open(cfg)?;
    let recovered = match args.mode {
        RecoverMode::Normal => engine.recover_normal()?,
        RecoverMode::Powerfail => engine.recover_power_failure()?,
    };
    println!(
        "recovered {} chunks ({} checksum drops, {} incomplete chains)",
        recovered.chunks.len(),
        recovered.report.checksum_dropped,
        recovered.report.incomplete_chains
    );
    oracle
        .verify(&recovered)
        .map_err(|e| anyhow::anyhow!("verification failed: {e}"))?;
    println!("verification passed");
    Ok(())
}

fn copysets_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    anyhow::ensure!(args.r >= 2, "replication factor must be at least 2");
    let nodes: Vec<u16> = (1..=args.nodes).collect();
    let view = ClusterView {
        nodes: nodes.clone(),
        replication_factor: args.r,
        scatter_width: args.s,
        seed: args.seed,
    };
    let manager = CopysetManager::new(view)?;
    let (cs_hits, total) = copyset_loss_fraction(manager.copysets(), &nodes, args.r);
    let (rand_hits, _) = random_replication_loss(&nodes, args.r, args.trials, args.seed);

    println!("scheme,nodes,r,s,zones,sets,loss_sets,total_sets,loss_fraction");
    println!(
        "copyset,{},{},{},{},{},{},{},{:.6}",
        args.nodes,
        args.r,
        args.s,
        args.trials,
        manager.distinct_copysets(),
        cs_hits,
        total,
        cs_hits as f64 / total as f64
    );
    println!(
        "random,{},{},{},{},{},{},{},{:.6}",
        args.nodes,
        args.r,
        args.s,
        args.trials,
        args.trials,
        rand_hits,
        total,
        rand_hits as f64 / total as f64
    );
    Ok(())
}
