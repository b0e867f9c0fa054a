//! Batch CLI for the preference-optimization lab.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime abort.

use clap::{Args, Parser, Subcommand};
use sdpo_lab::config::{PartitionConfig, RunConfig};
use sdpo_lab::data::{generate_synthetic, write_jsonl, SyntheticSpec};
use sdpo_lab::diagnostics::{compare_arms, emit_csv, format_float, Arm, CompareSpec};
use sdpo_lab::error::Error;
use sdpo_lab::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sdpo-lab", version, about = "Preference-optimization experiments on a desk-scale policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic preference sources as JSONL files.
    GenerateData(GenerateArgs),
    /// Execute one training run into a run directory.
    Run(RunArgs),
    /// Run the four-arm partitioning comparison.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of dataset sources (difficulty levels).
    #[arg(long)]
    sources: usize,
    /// Triples per source.
    #[arg(long)]
    per_source: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prompt length in characters.
    #[arg(long, default_value_t = 12)]
    prompt_len: usize,
    /// Output directory (one JSONL file per source).
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (strict JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Run configuration (strict JSON); its mode is ignored.
    #[arg(long)]
    config: PathBuf,
    /// Number of comparison seeds (master seed, master seed + 1, ...).
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    env_logger::init();
    init_thread_pool();
    let cli = Cli::parse();
    match cli.command {
        Command::GenerateData(args) => generate_data(args),
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
    }
}

/// Honors SDPO_LAB_THREADS as a cap on evaluation fan-out.
fn init_thread_pool() {
    if let Ok(raw) = std::env::var("SDPO_LAB_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not apply SDPO_LAB_THREADS={n}: {e}");
                }
            }
            _ => log::warn!("ignoring invalid SDPO_LAB_THREADS={raw:?}"),
        }
    }
}

fn config_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn generate_data(args: GenerateArgs) -> ExitCode {
    let spec = SyntheticSpec {
        num_sources: args.sources,
        triples_per_source: args.per_source,
        prompt_len: args.prompt_len,
        ladder: None,
        seed: args.seed,
    };
    let sources = match generate_synthetic(&spec) {
        Ok(s) => s,
        Err(e) => return config_error(&e),
    };
    let paths: Vec<PathBuf> = sources
        .iter()
        .map(|s| args.out.join(format!("{}.jsonl", s.name)))
        .collect();
    if !args.force {
        for path in &paths {
            if path.exists() {
                return config_error(&Error::Config(format!(
                    "{} exists; pass --force to overwrite",
                    path.display()
                )));
            }
        }
    }
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    for (source, path) in sources.iter().zip(&paths) {
        if let Err(e) = write_jsonl(&source.triples, path) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
        println!(
            "{}: {} triples, declared_difficulty={:.3}, file={}",
            source.name,
            source.triples.len(),
            source.declared_difficulty.unwrap_or(f64::NAN),
            path.display()
        );
    }
    ExitCode::SUCCESS
}

fn run(args: RunArgs) -> ExitCode {
    let config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let prepared = match runner::prepare(config, args.seed, args.out, args.force) {
        Ok(p) => p,
        Err(e) => return config_error(&e),
    };
    let run_dir = prepared
        .config
        .output_dir()
        .expect("prepare validated output_dir")
        .clone();
    match runner::execute(&prepared) {
        Ok(outcome) => {
            println!("run complete: {}", outcome.run_dir.display());
            println!("config_hash: {}", outcome.config_hash);
            for (name, hash) in &outcome.snapshot_hashes {
                println!("snapshot {name}: {hash}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("runtime abort: {e}");
            match runner::last_good_snapshot(&run_dir) {
                Some(path) => eprintln!("last-good snapshot: {}", path.display()),
                None => eprintln!("last-good snapshot: none persisted"),
            }
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn compare(args: CompareArgs) -> ExitCode {
    if args.seeds == 0 {
        return config_error(&Error::Config("--seeds must be >= 1".into()));
    }
    let config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let prepared = match runner::prepare(config, args.seed, args.out, args.force) {
        Ok(p) => p,
        Err(e) => return config_error(&e),
    };
    let config = &prepared.config;
    let out_dir = config.output_dir().expect("prepare validated output_dir").clone();

    let master = config.seed;
    let seeds: Vec<u64> = (0..args.seeds).map(|i| master.wrapping_add(i)).collect();
    let spec = CompareSpec {
        dpo: config.dpo.clone(),
        target_init: config.target_init,
        random_chunks: match config.partition {
            PartitionConfig::Random { t } => t,
            _ => None,
        },
    };

    let report = (|| {
        let (train, holdout) = runner::split_prepared(&prepared)?;
        let base = runner::base_model(&prepared, &train)?;
        compare_arms(&base, &train, &holdout, &spec, &seeds)
    })();
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("runtime abort: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };

    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    let csv_path = out_dir.join("comparison.csv");
    if let Err(e) = emit_csv(&report.results, &csv_path) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    println!("comparison written: {}", csv_path.display());

    if seeds.len() > 1 {
        println!("median over {} seeds:", seeds.len());
        for arm in Arm::ALL {
            match (report.median_reward_acc(arm), report.median_mean_gamma(arm)) {
                (Some(acc), Some(gamma)) => println!(
                    "  {}: holdout_reward_acc={} holdout_mean_gamma={}",
                    arm.as_str(),
                    format_float(acc),
                    format_float(gamma)
                ),
                _ => println!("  {}: failed", arm.as_str()),
            }
        }
    }
    for r in &report.results {
        if let Err(msg) = &r.outcome {
            eprintln!("arm {} seed {} failed: {msg}", r.arm.as_str(), r.seed);
        }
    }

    let e2h = report.median_reward_acc(Arm::SdpoEasyToHard);
    let random = report.median_reward_acc(Arm::SdpoRandom);
    let sft = report.median_reward_acc(Arm::SftOnly);
    println!(
        "easy_to_hard >= random: {}",
        matches!((e2h, random), (Some(a), Some(b)) if a >= b)
    );
    println!(
        "sdpo_arms >= sft_only: {}",
        matches!((e2h, random, sft), (Some(a), Some(b), Some(s)) if a >= s && b >= s)
    );

    // Success requires at least one surviving arm per seed.
    let all_seeds_covered = seeds.iter().all(|&seed| {
        report
            .results
            .iter()
            .any(|r| r.seed == seed && r.outcome.is_ok())
    });
    if all_seeds_covered {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUNTIME)
    }
}
