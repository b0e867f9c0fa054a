//! Preference-training orchestration: single-run DPO and the stepwise
//! variant that rotates the reference model through the chunk plan.
//!
//! A stepwise run over chunks `D_1..D_T` trains `T` times. At step `t` the
//! reference is frozen at `M_{t-1}` (the previous step's result, `M_0` being
//! the base model) and the target starts from `M_{t-1}` as well — or from the
//! base model when `target_init = sft_base`, the less stable alternative kept
//! for ablations. Optimizer state is reset at every step boundary, so each
//! step is an ordinary DPO run on its chunk.

use crate::data::{ChunkPlan, PreferenceTriple};
use crate::diagnostics::StepReport;
use crate::dpo::{self, DpoConfig};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::snapshot::{snapshot_store, StepSnapshot};
use crate::Policy;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

/// How the target model is initialized at each step after the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetInit {
    /// Start from the previous step's model (same as the reference).
    #[default]
    Previous,
    /// Always restart from the base model.
    SftBase,
}

/// Full stepwise-run configuration.
#[derive(Debug, Clone)]
pub struct SdpoConfig {
    pub dpo: DpoConfig,
    pub target_init: TargetInit,
    pub chunk_plan: ChunkPlan,
    /// Evaluation-only triples for the per-step report; may be empty, in
    /// which case the holdout columns stay blank.
    pub holdout: Vec<PreferenceTriple>,
    /// When set, every snapshot is also written here as `step_<t>.bin`.
    pub snapshot_dir: Option<PathBuf>,
    /// Provenance string embedded in each snapshot.
    pub config_hash: String,
}

impl SdpoConfig {
    pub fn new(dpo: DpoConfig, chunk_plan: ChunkPlan) -> Self {
        SdpoConfig {
            dpo,
            target_init: TargetInit::default(),
            chunk_plan,
            holdout: Vec::new(),
            snapshot_dir: None,
            config_hash: String::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.dpo.validate()?;
        if self.chunk_plan.chunks.is_empty() {
            return Err(Error::Config("chunk plan has no chunks".into()));
        }
        for chunk in &self.chunk_plan.chunks {
            if chunk.triples.is_empty() {
                return Err(Error::Config(format!(
                    "chunk {} has zero triples",
                    chunk.chunk_id
                )));
            }
        }
        Ok(())
    }
}

/// One row of the optimizer-step loss trace (`ledger.csv`).
///
/// `batch` counts optimizer steps from 1 within each training step; a row
/// with `batch = 0` is the pre-training evaluation recorded when a step runs
/// zero epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step: u32,
    pub chunk_id: String,
    pub batch: usize,
    pub loss: f64,
}

/// Everything a run leaves behind besides the models themselves.
#[derive(Debug, Clone, Default)]
pub struct RunLedger {
    /// One report per chunk, in chunk order.
    pub reports: Vec<StepReport>,
    /// Per-optimizer-step loss trace across all chunks.
    pub trace: Vec<TraceEntry>,
    /// Wall-clock seconds per training step (not serialized; informational).
    pub wall_clock_secs: Vec<f64>,
}

/// A completed stepwise run.
#[derive(Debug, Clone)]
pub struct SdpoRun {
    pub final_model: Policy,
    pub ledger: RunLedger,
    /// `T + 1` snapshots: step 0 is the base model, step `t` the model after
    /// chunk `t`.
    pub snapshots: Vec<StepSnapshot>,
}

/// Conventional DPO: one run over `dataset` with the reference frozen at the
/// base model. Identical `(base, dataset, config)` produce bit-identical
/// parameters.
pub fn run_dpo(
    base: &Policy,
    dataset: &[PreferenceTriple],
    config: &DpoConfig,
) -> Result<(Policy, RunLedger)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Domain("run_dpo over an empty dataset".into()));
    }
    let start = Instant::now();
    let (model, trace) = train_one_chunk(base.clone(), base, dataset, config, 1, "chunk_1")?;
    let mut ledger = RunLedger::default();
    ledger.reports.push(step_report(1, "chunk_1", base, &model, &trace, &[])?);
    ledger.trace = trace;
    ledger.wall_clock_secs.push(start.elapsed().as_secs_f64());
    Ok((model, ledger))
}

/// Stepwise DPO over the configured chunk plan. Snapshot 0 (the base model)
/// is recorded before any training.
pub fn run_sdpo(base: &Policy, config: &SdpoConfig) -> Result<SdpoRun> {
    config.validate()?;
    if let Some(dir) = &config.snapshot_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut snapshots = vec![StepSnapshot {
        step_index: 0,
        chunk_id: String::new(),
        config_hash: config.config_hash.clone(),
        model: base.clone(),
    }];
    persist(&snapshots[0], config)?;

    let mut ledger = RunLedger::default();
    let mut previous = base.clone();
    for (i, chunk) in config.chunk_plan.chunks.iter().enumerate() {
        let step = (i + 1) as u32;
        let reference = previous;
        let target = match config.target_init {
            TargetInit::Previous => reference.clone(),
            TargetInit::SftBase => base.clone(),
        };
        let start = Instant::now();
        let (model, trace) = train_one_chunk(
            target,
            &reference,
            &chunk.triples,
            &config.dpo,
            step,
            &chunk.chunk_id,
        )?;
        ledger.wall_clock_secs.push(start.elapsed().as_secs_f64());
        ledger.reports.push(step_report(
            step,
            &chunk.chunk_id,
            &reference,
            &model,
            &trace,
            &config.holdout,
        )?);
        ledger.trace.extend(trace);

        let snapshot = StepSnapshot {
            step_index: step,
            chunk_id: chunk.chunk_id.clone(),
            config_hash: config.config_hash.clone(),
            model: model.clone(),
        };
        persist(&snapshot, config)?;
        snapshots.push(snapshot);
        previous = model;
    }

    Ok(SdpoRun {
        final_model: previous,
        ledger,
        snapshots,
    })
}

fn persist(snapshot: &StepSnapshot, config: &SdpoConfig) -> Result<()> {
    if let Some(dir) = &config.snapshot_dir {
        snapshot_store(snapshot, dir.join(snapshot.file_name()))?;
    }
    Ok(())
}

/// One DPO training pass over a chunk: shuffled mini-batches, loss recorded
/// before each update. With zero epochs the chunk is evaluated once (batch 0)
/// and the model returned unchanged.
fn train_one_chunk(
    mut target: Policy,
    reference: &Policy,
    triples: &[PreferenceTriple],
    config: &DpoConfig,
    step: u32,
    chunk_id: &str,
) -> Result<(Policy, Vec<TraceEntry>)> {
    let beta = config.beta;
    let mut trace = Vec::new();
    if config.epochs == 0 {
        trace.push(TraceEntry {
            step,
            chunk_id: chunk_id.to_string(),
            batch: 0,
            loss: dpo::dpo_loss(&target, reference, triples, beta)?,
        });
        return Ok((target, trace));
    }

    #[cfg(debug_assertions)]
    let reference_hash = reference.content_hash();

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut grad = vec![0.0; target.theta().len()];
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, grad.len());
    let mut batch_no = 0usize;
    let mut batch_buf: Vec<PreferenceTriple> = Vec::with_capacity(config.batch_size);

    for _epoch in 0..config.epochs {
        crate::policy::shuffle(&mut order, &mut rng);
        for batch_idx in order.chunks(config.batch_size) {
            batch_buf.clear();
            batch_buf.extend(batch_idx.iter().map(|&i| triples[i].clone()));
            let loss =
                dpo::dpo_loss_gradient_into(&target, reference, &batch_buf, beta, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("dpo loss at step {step}, batch {}", batch_no + 1),
                    detail: format!(
                        "loss {loss}, sample ids {:?}",
                        batch_buf.iter().map(|t| t.id.as_str()).collect::<Vec<_>>()
                    ),
                });
            }
            batch_no += 1;
            trace.push(TraceEntry {
                step,
                chunk_id: chunk_id.to_string(),
                batch: batch_no,
                loss,
            });
            optimizer.step(target.theta_mut(), &grad);
            // The reference must stay frozen within a chunk.
            #[cfg(debug_assertions)]
            debug_assert_eq!(reference_hash, reference.content_hash());
        }
    }
    Ok((target, trace))
}

fn step_report(
    step: u32,
    chunk_id: &str,
    reference: &Policy,
    model: &Policy,
    trace: &[TraceEntry],
    holdout: &[PreferenceTriple],
) -> Result<StepReport> {
    let (mean_gamma_ref, mean_gamma_target, reward_acc) = if holdout.is_empty() {
        (None, None, None)
    } else {
        (
            Some(dpo::mean_gamma(reference, holdout)?),
            Some(dpo::mean_gamma(model, holdout)?),
            Some(dpo::reward_accuracy(model, holdout)?),
        )
    };
    Ok(StepReport {
        step,
        chunk_id: chunk_id.to_string(),
        mean_gamma_ref_holdout: mean_gamma_ref,
        mean_gamma_target_holdout: mean_gamma_target,
        reward_accuracy_holdout: reward_acc,
        first_batch_loss: trace.first().map(|e| e.loss).unwrap_or(f64::NAN),
        final_train_loss: trace.last().map(|e| e.loss).unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, pooled_triples, ChunkPlan, SyntheticSpec};
    use crate::policy::{Arch, PolicyModel};
    use crate::vocab::Vocabulary;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn small_sources() -> Vec<crate::data::DatasetSource> {
        generate_synthetic(&SyntheticSpec {
            num_sources: 2,
            triples_per_source: 16,
            prompt_len: 6,
            ladder: Some(vec![2, 1]),
            seed: 3,
        })
        .unwrap()
    }

    fn base_model(seed: u64) -> Policy {
        let vocab = Vocabulary::default_ascii();
        let arch = Arch {
            context_window: 3,
            embedding_dim: 4,
            hidden_dim: 8,
            vocab_size: vocab.size(),
        };
        PolicyModel::init(vocab, arch, seed).unwrap()
    }

    fn quick_config(epochs: usize) -> DpoConfig {
        DpoConfig {
            epochs,
            batch_size: 8,
            ..DpoConfig::default()
        }
    }

    fn theta_bits(model: &Policy) -> Vec<u64> {
        model.theta().iter().map(|w| w.to_bits()).collect()
    }

    #[test]
    fn zero_epochs_returns_input_and_records_ln_2() {
        let base = base_model(1);
        let data = pooled_triples(&small_sources());
        let (model, ledger) = run_dpo(&base, &data, &quick_config(0)).unwrap();
        assert_eq!(theta_bits(&base), theta_bits(&model));
        assert_eq!(ledger.trace.len(), 1);
        assert_eq!(ledger.trace[0].batch, 0);
        // Every per-sample loss is exactly ln 2; the mean only wobbles by
        // accumulation rounding.
        assert!((ledger.trace[0].loss - LN_2).abs() < 1e-12);
        assert_eq!(ledger.reports.len(), 1);
        assert!((ledger.reports[0].first_batch_loss - LN_2).abs() < 1e-12);
    }

    #[test]
    fn run_dpo_is_deterministic() {
        let base = base_model(2);
        let data = pooled_triples(&small_sources());
        let config = quick_config(2);
        let (a, ledger_a) = run_dpo(&base, &data, &config).unwrap();
        let (b, ledger_b) = run_dpo(&base, &data, &config).unwrap();
        assert_eq!(theta_bits(&a), theta_bits(&b));
        assert_eq!(ledger_a.trace, ledger_b.trace);
    }

    #[test]
    fn single_chunk_sdpo_equals_run_dpo_bitwise() {
        let base = base_model(3);
        let sources = small_sources();
        let data = pooled_triples(&sources);
        let config = quick_config(2);

        let (dpo_model, _) = run_dpo(&base, &data, &config).unwrap();
        let plan = ChunkPlan::single(&sources).unwrap();
        let sdpo = run_sdpo(&base, &SdpoConfig::new(config, plan)).unwrap();
        assert_eq!(theta_bits(&dpo_model), theta_bits(&sdpo.final_model));
        assert_eq!(sdpo.snapshots.len(), 2);
        assert_eq!(sdpo.snapshots[0].step_index, 0);
        assert_eq!(theta_bits(&sdpo.snapshots[0].model), theta_bits(&base));
    }

    #[test]
    fn previous_init_starts_every_step_at_ln_2() {
        let base = base_model(4);
        let sources = small_sources();
        let plan = crate::data::partition_easy_to_hard(&sources, &base).unwrap();
        let config = SdpoConfig::new(quick_config(1), plan);
        let run = run_sdpo(&base, &config).unwrap();
        assert_eq!(run.ledger.reports.len(), 2);
        for report in &run.ledger.reports {
            assert!(
                (report.first_batch_loss - LN_2).abs() < 1e-9,
                "step {} first batch loss {}",
                report.step,
                report.first_batch_loss
            );
        }
    }

    #[test]
    fn snapshots_follow_chunk_order_and_cover_all_data_once() {
        let base = base_model(5);
        let sources = small_sources();
        let plan = crate::data::partition_easy_to_hard(&sources, &base).unwrap();
        let plan_ids: Vec<String> = plan.chunks.iter().map(|c| c.chunk_id.clone()).collect();
        let total = plan.total_triples();
        let config = SdpoConfig::new(quick_config(1), plan);
        let run = run_sdpo(&base, &config).unwrap();

        let ledger_ids: Vec<String> = run
            .ledger
            .reports
            .iter()
            .map(|r| r.chunk_id.clone())
            .collect();
        assert_eq!(plan_ids, ledger_ids);
        // Exposure parity: the chunks partition the data, so one pass over
        // the plan sees every triple exactly once per epoch.
        assert_eq!(total, pooled_triples(&sources).len());
        let mut seen = std::collections::BTreeSet::new();
        for chunk in &config.chunk_plan.chunks {
            for t in &chunk.triples {
                assert!(seen.insert(t.id.clone()));
            }
        }
        assert_eq!(seen.len(), total);
    }

    #[test]
    fn empty_chunk_is_rejected_before_training() {
        let base = base_model(6);
        let sources = small_sources();
        let mut plan = ChunkPlan::single(&sources).unwrap();
        plan.chunks.push(crate::data::Chunk {
            chunk_id: "chunk_2".into(),
            source_names: vec![],
            reward_accuracy: None,
            triples: vec![],
        });
        let config = SdpoConfig::new(quick_config(1), plan);
        assert!(matches!(run_sdpo(&base, &config), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_sample_ids() {
        let base = base_model(7);
        let data = pooled_triples(&small_sources());
        let mut config = quick_config(1);
        // An infinite learning rate poisons theta after the first update.
        config.learning_rate = f64::INFINITY;
        match run_dpo(&base, &data, &config) {
            Err(Error::NonFinite { detail, .. }) => {
                // The abort names the offending sample(s), whichever check
                // fires first (per-sample gamma or batch loss).
                assert!(detail.contains("sample"), "detail: {detail}");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn sft_base_init_restarts_from_base() {
        let base = base_model(8);
        let sources = small_sources();
        let plan = crate::data::partition_easy_to_hard(&sources, &base).unwrap();
        let mut config = SdpoConfig::new(quick_config(1), plan);
        config.target_init = TargetInit::SftBase;
        let run = run_sdpo(&base, &config).unwrap();
        // Step 2 trains from the base model again, so its first batch loss is
        // evaluated with target = S against reference = M_1, not ln 2.
        assert_eq!(run.ledger.reports.len(), 2);
        assert!((run.ledger.reports[0].first_batch_loss - LN_2).abs() < 1e-9);
        assert!((run.ledger.reports[1].first_batch_loss - LN_2).abs() > 1e-9);
    }
}
