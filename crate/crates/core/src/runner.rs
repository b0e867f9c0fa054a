//! Executes a [`RunConfig`] into a self-describing run directory:
//!
//! ```text
//! <output_dir>/
//!   config.json          resolved config; `hashes` filled in on completion
//!   chunk_plan.json      chunk order, member ids, reward accuracies
//!   snapshots/step_<t>.bin
//!   ledger.csv           per-optimizer-step loss trace
//!   report.csv           per-step holdout metrics
//! ```
//!
//! Validation (config parsing, data loading, output-dir collision) happens in
//! [`prepare`] before anything is written, so a failed validation leaves no
//! partial run directory. Failures inside [`execute`] are runtime aborts; by
//! then every completed step's snapshot is already on disk.

use crate::config::{DataConfig, Mode, PartitionConfig, RunConfig, RunHashes, SftSource};
use crate::data::{
    self, generate_synthetic, load_jsonl_many, partition_easy_to_hard, partition_random,
    split_holdout, ChunkPlan, DatasetSource, PreferenceTriple,
};
use crate::error::{Error, Result};
use crate::policy::{sft_train, PolicyModel};
use crate::snapshot::snapshot_load;
use crate::trainer::{run_sdpo, RunLedger, SdpoConfig};
use crate::vocab::Vocabulary;
use crate::Policy;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// A validated run, ready to execute.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub config: RunConfig,
    pub sources: Vec<DatasetSource>,
    vocab: Vocabulary,
}

/// Everything a finished run produced, for callers that want more than the
/// files.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub config_hash: String,
    /// snapshot file name -> content hash, in step order.
    pub snapshot_hashes: BTreeMap<String, String>,
    pub ledger: RunLedger,
    pub final_model: Policy,
}

/// Resolves and validates a config, loads (or generates) the data, and
/// checks the output directory. Nothing is written.
pub fn prepare(
    config: RunConfig,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
    force: bool,
) -> Result<PreparedRun> {
    let config = config.resolve(seed_override, out_override);
    config.validate()?;
    let out = config.output_dir()?;
    if out.exists() && !force {
        return Err(Error::Config(format!(
            "output directory {} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let vocab = Vocabulary::default_ascii();
    let sources = match &config.data {
        DataConfig::Synthetic(spec) => generate_synthetic(spec)?,
        DataConfig::Jsonl(paths) => load_jsonl_many(paths)?,
    };
    // Catch unencodable data now, not mid-training.
    for src in &sources {
        for t in src.triples.iter() {
            for text in [&t.prompt, &t.chosen, &t.rejected] {
                for c in text.chars() {
                    vocab.encode_char(c).map_err(|_| {
                        Error::Config(format!(
                            "triple {} contains symbol {c:?} outside the vocabulary",
                            t.id
                        ))
                    })?;
                }
            }
        }
    }
    if let SftSource::Load(path) = &config.sft {
        if !path.exists() {
            return Err(Error::Config(format!(
                "sft snapshot {} does not exist",
                path.display()
            )));
        }
    }
    Ok(PreparedRun {
        config,
        sources,
        vocab,
    })
}

/// Runs a prepared experiment to completion.
pub fn execute(prepared: &PreparedRun) -> Result<RunOutcome> {
    let config = &prepared.config;
    let run_dir = config.output_dir()?.clone();
    let snapshot_dir = run_dir.join("snapshots");
    std::fs::create_dir_all(&snapshot_dir).map_err(|e| Error::io(&snapshot_dir, e))?;

    let config_hash = config.content_hash();
    write_config(config, config_hash.clone(), BTreeMap::new(), &run_dir)?;

    let (train, holdout) = split_holdout(&prepared.sources, &config.split)?;

    let base = build_base_model(config, &prepared.vocab, &train)?;

    let plan = build_plan(config, &train, &base)?;
    let manifest_path = run_dir.join("chunk_plan.json");
    let manifest = serde_json::to_string_pretty(&plan.manifest())
        .expect("manifest serialization cannot fail");
    std::fs::write(&manifest_path, manifest + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    let sdpo_config = SdpoConfig {
        dpo: config.dpo.clone(),
        target_init: config.target_init,
        chunk_plan: plan,
        holdout,
        snapshot_dir: Some(snapshot_dir),
        config_hash: config_hash.clone(),
    };
    let run = run_sdpo(&base, &sdpo_config)?;

    crate::diagnostics::emit_ledger_csv(&run.ledger, run_dir.join("ledger.csv"))?;
    crate::diagnostics::emit_report_csv(&run.ledger, run_dir.join("report.csv"))?;

    let snapshot_hashes: BTreeMap<String, String> = run
        .snapshots
        .iter()
        .map(|s| (s.file_name(), s.content_hash()))
        .collect();
    write_config(config, config_hash.clone(), snapshot_hashes.clone(), &run_dir)?;

    Ok(RunOutcome {
        run_dir,
        config_hash,
        snapshot_hashes,
        ledger: run.ledger,
        final_model: run.final_model,
    })
}

/// The base model S: trained here on the split's train side, or loaded.
fn build_base_model(
    config: &RunConfig,
    vocab: &Vocabulary,
    train: &[DatasetSource],
) -> Result<Policy> {
    match &config.sft {
        SftSource::Train(sft_config) => {
            let init = PolicyModel::init(
                vocab.clone(),
                config.model.arch(vocab),
                config.init_seed(),
            )?;
            let corpus = data::sft_corpus(train);
            sft_train(&init, &corpus, sft_config)
        }
        SftSource::Load(path) => {
            let snapshot = snapshot_load(path)?;
            let arch = snapshot.model.arch();
            let expected = config.model.arch(snapshot.model.vocab());
            if arch != expected {
                return Err(Error::Config(format!(
                    "loaded snapshot arch {arch:?} does not match configured {expected:?}"
                )));
            }
            Ok(snapshot.model)
        }
    }
}

fn build_plan(config: &RunConfig, train: &[DatasetSource], base: &Policy) -> Result<ChunkPlan> {
    // Conventional DPO is the stepwise engine over one pooled chunk; that
    // keeps `mode = dpo` and `mode = sdpo, partition = single` byte-identical.
    if config.mode == Mode::Dpo {
        return ChunkPlan::single(train);
    }
    match config.partition {
        PartitionConfig::EasyToHard => partition_easy_to_hard(train, base),
        PartitionConfig::Random { t } => {
            partition_random(train, t.unwrap_or(train.len()), config.partition_seed())
        }
        PartitionConfig::Single => ChunkPlan::single(train),
    }
}

fn write_config(
    config: &RunConfig,
    config_hash: String,
    snapshots: BTreeMap<String, String>,
    run_dir: &Path,
) -> Result<()> {
    let mut recorded = config.clone();
    recorded.hashes = Some(RunHashes {
        config: config_hash,
        snapshots,
    });
    let path = run_dir.join("config.json");
    let text = serde_json::to_string_pretty(&recorded).expect("config serialization cannot fail");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Highest-step snapshot present under a run directory, if any. The CLI
/// reports it when a run aborts.
pub fn last_good_snapshot(run_dir: &Path) -> Option<PathBuf> {
    let dir = run_dir.join("snapshots");
    let mut best: Option<(u32, PathBuf)> = None;
    for entry in std::fs::read_dir(&dir).ok()? {
        let path = entry.ok()?.path();
        let name = path.file_name()?.to_str()?;
        let step: u32 = name.strip_prefix("step_")?.strip_suffix(".bin")?.parse().ok()?;
        if best.as_ref().map_or(true, |(s, _)| step > *s) {
            best = Some((step, path.clone()));
        }
    }
    best.map(|(_, p)| p)
}

/// Holdout triples of a prepared run, exposed for the compare command.
pub fn split_prepared(
    prepared: &PreparedRun,
) -> Result<(Vec<DatasetSource>, Vec<PreferenceTriple>)> {
    split_holdout(&prepared.sources, &prepared.config.split)
}

/// Base model of a prepared run (SFT or snapshot load), exposed for the
/// compare command.
pub fn base_model(prepared: &PreparedRun, train: &[DatasetSource]) -> Result<Policy> {
    build_base_model(&prepared.config, &prepared.vocab, train)
}
