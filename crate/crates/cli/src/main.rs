use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omnizip::baselines::{random_prune, temporal_merge};
use omnizip::cost::{flops_ratio, ModelGeometry, DEFAULT_DECODE_STEPS, DEFAULT_PRESET};
use omnizip::io::{load_stream, read_json, save_compressed, save_stream, write_file};
use omnizip::report::{compare, comparison_csv, write_report, CompareOptions};
use omnizip::synth::{synth_stream, GenConfig, Scenario};
use omnizip::{compress_stream, CompressionResult, Error, PruneConfig, StrategyId};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_IO: u8 = 4;

const TIMING_NAME: &str = "timing.json";

#[derive(Parser)]
#[command(name = "omnizip", version, about = "Audio-guided token compression for audio-video streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic stream.
    Gen(GenArgs),
    /// Compress a stream and write the result, kept embeddings, and per-window report.
    Compress(CompressArgs),
    /// Prefill and decode FLOPs for a full and a compressed sequence.
    Cost(CostArgs),
    /// Run strategies over a retention ladder and write a comparison CSV.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Iid,
    Events,
}

#[derive(Args)]
struct GenArgs {
    /// JSON stream shape, optionally with `d_att` and `event_windows`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "iid")]
    scenario: ScenarioArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    /// Stream directory or manifest file.
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, default_value = "omnizip", value_parser = parse_strategy)]
    strategy: StrategyId,
    #[arg(long = "rho-a", default_value_t = PruneConfig::default().rho_a)]
    rho_a: f64,
    #[arg(long = "rho-v", default_value_t = PruneConfig::default().rho_v)]
    rho_v: f64,
    #[arg(long = "rho-max", default_value_t = PruneConfig::default().rho_max)]
    rho_max: f64,
    #[arg(long = "rho-min", default_value_t = PruneConfig::default().rho_min)]
    rho_min: f64,
    /// Maximum members per audio anchor.
    #[arg(short = 'G', default_value_t = PruneConfig::default().g)]
    g: usize,
    /// Neighbors for density scoring.
    #[arg(short = 'k', default_value_t = PruneConfig::default().k)]
    k: usize,
    #[arg(long = "anchor-fraction", default_value_t = PruneConfig::default().anchor_fraction)]
    anchor_fraction: f64,
    /// Kept fraction for the baseline strategies.
    #[arg(long)]
    retention: Option<f64>,
    /// Seed for the random baseline.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "OMNIZIP_WORKERS", default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    /// Named geometry; explicit dimensions override its fields.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    d: Option<u64>,
    #[arg(long)]
    m: Option<u64>,
    #[arg(long)]
    layers: Option<u64>,
    /// Decode steps.
    #[arg(short = 'R')]
    decode_steps: Option<u64>,
    #[arg(long = "n-full")]
    n_full: u64,
    #[arg(long = "n-compressed")]
    n_compressed: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_value = "omnizip,random,temporal_merge")]
    strategies: Vec<StrategyId>,
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.45,0.35")]
    retentions: Vec<f64>,
    #[arg(long, default_value = DEFAULT_PRESET)]
    preset: String,
    /// Sequence length the FLOPs ratio is computed at; the stream's token count by default.
    #[arg(long = "n-full")]
    n_full: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "OMNIZIP_WORKERS", default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_strategy(s: &str) -> Result<StrategyId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// What a finished command reports back to `main`.
enum Outcome {
    Done,
    Infeasible,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) | Error::Io { .. } | Error::Csv(_) => EXIT_IO,
        Error::InfeasibleBudget(_) => EXIT_INFEASIBLE,
        _ => EXIT_VALIDATION,
    }
}

fn gen(args: GenArgs) -> omnizip::Result<Outcome> {
    let gen_config: GenConfig = read_json(&args.config)?;
    if let Some(msg) = gen_config.stream.shape_errors().into_iter().next() {
        return Err(Error::InvalidConfig(msg));
    }
    let options = gen_config.options();
    if options.d_att == 0 {
        return Err(Error::InvalidConfig("d_att must be at least 1".into()));
    }
    let scenario = match args.scenario {
        ScenarioArg::Iid => Scenario::IidGaussian,
        ScenarioArg::Events => Scenario::PlantedEvents,
    };
    let stream = synth_stream(gen_config.stream, args.seed, scenario, options);
    save_stream(&stream, &args.out)?;
    println!(
        "wrote {} windows ({} audio, {} video tokens) to {}",
        gen_config.stream.num_windows,
        gen_config.stream.total_audio_tokens(),
        gen_config.stream.total_video_tokens(),
        args.out.display()
    );
    Ok(Outcome::Done)
}

fn write_timing(result: &CompressionResult, workers: usize, out: &Path) -> omnizip::Result<()> {
    let timing = serde_json::json!({
        "strategy": result.strategy,
        "elapsed_ms": result.elapsed_ms,
        "workers": workers,
    });
    let mut text = serde_json::to_string_pretty(&timing).expect("timing serializes");
    text.push('\n');
    write_file(&out.join(TIMING_NAME), text.as_bytes())
}

fn compress(args: CompressArgs) -> omnizip::Result<Outcome> {
    let stream = load_stream(&args.stream)?;
    let retention = || {
        args.retention
            .ok_or_else(|| Error::InvalidConfig(format!("--retention is required for strategy {}", args.strategy.name())))
    };
    let result = match args.strategy {
        StrategyId::Omnizip => {
            let config = PruneConfig {
                rho_a: args.rho_a,
                rho_v: args.rho_v,
                rho_max: args.rho_max,
                rho_min: args.rho_min,
                g: args.g,
                k: args.k,
                anchor_fraction: args.anchor_fraction,
            };
            for warning in config.validate()? {
                eprintln!("warning: {warning}");
            }
            compress_stream(&stream, &config, args.workers)?
        }
        StrategyId::Random => random_prune(&stream, retention()?, args.seed)?,
        StrategyId::TemporalMerge => temporal_merge(&stream, retention()?)?,
    };
    save_compressed(&result, &stream, &args.out)?;
    write_report(&result, &args.out)?;
    write_timing(&result, args.workers, &args.out)?;
    println!(
        "kept {} of {} tokens (retained ratio {:.4}) in {:.1} ms; wrote {}",
        result.totals.kept(),
        result.totals.before(),
        result.retained_ratio,
        result.elapsed_ms,
        args.out.display()
    );
    if result.infeasible_budget {
        eprintln!("warning: video rates could not meet the budget inside the clamp bounds");
        return Ok(Outcome::Infeasible);
    }
    Ok(Outcome::Done)
}

fn cost(args: CostArgs) -> omnizip::Result<Outcome> {
    let base = match &args.preset {
        Some(name) => Some(ModelGeometry::preset(name)?),
        None => None,
    };
    let pick = |value: Option<u64>, preset: Option<u64>, name: &str| {
        value
            .or(preset)
            .ok_or_else(|| Error::InvalidConfig(format!("--{name} is required without --preset")))
    };
    let geometry = ModelGeometry {
        d: pick(args.d, base.map(|g| g.d), "d")?,
        m: pick(args.m, base.map(|g| g.m), "m")?,
        layers: pick(args.layers, base.map(|g| g.layers), "layers")?,
        decode_steps: args
            .decode_steps
            .or(base.map(|g| g.decode_steps))
            .unwrap_or(DEFAULT_DECODE_STEPS),
    };
    let report = flops_ratio(args.n_compressed, args.n_full, &geometry)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    println!("{}", omnizip::cost::CostComparison::CSV_HEADER);
    println!("{}", report.csv_row());
    Ok(Outcome::Done)
}

fn run_compare(args: CompareArgs) -> omnizip::Result<Outcome> {
    let stream = load_stream(&args.stream)?;
    let options = CompareOptions {
        geometry: ModelGeometry::preset(&args.preset)?,
        n_full: args.n_full,
        seed: args.seed,
        template: PruneConfig::default(),
        workers: args.workers,
    };
    let rows = compare(&stream, &args.strategies, &args.retentions, &options)?;
    let csv = comparison_csv(&rows)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    write_file(&args.out, csv.as_bytes())?;
    print!("{csv}");
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(args) => gen(args),
        Command::Compress(args) => compress(args),
        Command::Cost(args) => cost(args),
        Command::Compare(args) => run_compare(args),
    };
    match outcome {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
