//! Run diagnostics: per-step reports, snapshot sweeps of the log-ratio
//! statistics, CSV export, and the four-arm training comparison.
//!
//! CSV schemas (fixed column order, RFC 4180, floats printed with 17
//! significant digits so parsing them back is bit-exact):
//!
//! ```text
//! ledger.csv      step,chunk_id,batch,loss
//! report.csv      step,chunk_id,mean_gamma_ref,mean_gamma_target,reward_acc,first_batch_loss,final_train_loss
//! comparison.csv  arm,seed,holdout_reward_acc,holdout_mean_gamma
//! sweep.csv       step,mean_gamma,std_gamma,reward_acc
//! ```

use crate::data::{
    partition_easy_to_hard, partition_random, pooled_triples, DatasetSource, PreferenceTriple,
};
use crate::dpo::{self, DpoConfig};
use crate::error::{Error, Result};
use crate::snapshot::StepSnapshot;
use crate::trainer::{run_dpo, run_sdpo, RunLedger, SdpoConfig, TargetInit, TraceEntry};
use crate::Policy;
use std::path::Path;

/// Per-chunk training metrics. Holdout columns are `None` when the run had
/// no holdout set.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u32,
    pub chunk_id: String,
    pub mean_gamma_ref_holdout: Option<f64>,
    pub mean_gamma_target_holdout: Option<f64>,
    pub reward_accuracy_holdout: Option<f64>,
    /// Loss recorded before the first parameter update of the step.
    pub first_batch_loss: f64,
    /// Loss recorded before the last parameter update of the step.
    pub final_train_loss: f64,
}

/// One row of a snapshot sweep: every snapshot evaluated on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSweepRow {
    pub step: u32,
    pub mean_gamma: f64,
    pub std_gamma: f64,
    pub reward_accuracy: f64,
}

/// Evaluates every snapshot on the same dataset, in snapshot order.
pub fn gamma_sweep(
    snapshots: &[StepSnapshot],
    dataset: &[PreferenceTriple],
) -> Result<Vec<GammaSweepRow>> {
    if dataset.is_empty() {
        return Err(Error::Domain("gamma_sweep over an empty dataset".into()));
    }
    snapshots
        .iter()
        .map(|snap| {
            let (mean, std) = dpo::gamma_stats(&snap.model, dataset)?;
            Ok(GammaSweepRow {
                step: snap.step_index,
                mean_gamma: mean,
                std_gamma: std,
                reward_accuracy: dpo::reward_accuracy(&snap.model, dataset)?,
            })
        })
        .collect()
}

/// Formats a float with 17 significant digits; parsing the result recovers
/// the exact bit pattern.
pub fn format_float(value: f64) -> String {
    format!("{value:.16e}")
}

fn format_opt(value: Option<f64>) -> String {
    value.map(format_float).unwrap_or_default()
}

/// A table that knows its fixed CSV schema.
pub trait CsvTable {
    fn header() -> &'static [&'static str];
    fn row(&self) -> Vec<String>;
}

impl CsvTable for TraceEntry {
    fn header() -> &'static [&'static str] {
        &["step", "chunk_id", "batch", "loss"]
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.chunk_id.clone(),
            self.batch.to_string(),
            format_float(self.loss),
        ]
    }
}

impl CsvTable for StepReport {
    fn header() -> &'static [&'static str] {
        &[
            "step",
            "chunk_id",
            "mean_gamma_ref",
            "mean_gamma_target",
            "reward_acc",
            "first_batch_loss",
            "final_train_loss",
        ]
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.chunk_id.clone(),
            format_opt(self.mean_gamma_ref_holdout),
            format_opt(self.mean_gamma_target_holdout),
            format_opt(self.reward_accuracy_holdout),
            format_float(self.first_batch_loss),
            format_float(self.final_train_loss),
        ]
    }
}

impl CsvTable for GammaSweepRow {
    fn header() -> &'static [&'static str] {
        &["step", "mean_gamma", "std_gamma", "reward_acc"]
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            format_float(self.mean_gamma),
            format_float(self.std_gamma),
            format_float(self.reward_accuracy),
        ]
    }
}

/// Writes rows under the table's fixed header. An empty slice produces a
/// header-only file.
pub fn emit_csv<R: CsvTable>(rows: &[R], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("csv write failed for {}: {other:?}", path.display())),
    };
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(io_err)?;
    writer.write_record(R::header()).map_err(io_err)?;
    for row in rows {
        writer.write_record(row.row()).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes the optimizer-step trace of a ledger (`ledger.csv`).
pub fn emit_ledger_csv(ledger: &RunLedger, path: impl AsRef<Path>) -> Result<()> {
    emit_csv(&ledger.trace, path)
}

/// Writes the per-step reports of a ledger (`report.csv`).
pub fn emit_report_csv(ledger: &RunLedger, path: impl AsRef<Path>) -> Result<()> {
    emit_csv(&ledger.reports, path)
}

/// The four training arms of the partitioning comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    SftOnly,
    Dpo,
    SdpoEasyToHard,
    SdpoRandom,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::SftOnly, Arm::Dpo, Arm::SdpoEasyToHard, Arm::SdpoRandom];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::SftOnly => "sft_only",
            Arm::Dpo => "dpo",
            Arm::SdpoEasyToHard => "sdpo_easy_to_hard",
            Arm::SdpoRandom => "sdpo_random",
        }
    }
}

/// Final holdout metrics of one arm under one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmMetrics {
    pub holdout_reward_acc: f64,
    pub holdout_mean_gamma: f64,
}

/// Outcome of one `(arm, seed)` cell; a failed arm carries its error text and
/// does not block the others.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSeedResult {
    pub arm: Arm,
    pub seed: u64,
    pub outcome: std::result::Result<ArmMetrics, String>,
}

impl CsvTable for ArmSeedResult {
    fn header() -> &'static [&'static str] {
        &["arm", "seed", "holdout_reward_acc", "holdout_mean_gamma"]
    }

    fn row(&self) -> Vec<String> {
        let (acc, gamma) = match &self.outcome {
            Ok(m) => (format_float(m.holdout_reward_acc), format_float(m.holdout_mean_gamma)),
            Err(_) => (String::new(), String::new()),
        };
        vec![self.arm.as_str().to_string(), self.seed.to_string(), acc, gamma]
    }
}

/// All arms under all seeds, evaluated on one shared holdout set.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub results: Vec<ArmSeedResult>,
    pub seeds: Vec<u64>,
    /// Ids of the holdout triples every cell was evaluated on.
    pub holdout_ids: Vec<String>,
}

impl ComparisonReport {
    fn armwise<F: Fn(&ArmMetrics) -> f64>(&self, arm: Arm, f: F) -> Vec<f64> {
        let mut values: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| r.outcome.as_ref().ok().map(&f))
            .collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("metrics are finite"));
        values
    }

    /// Median holdout reward accuracy over the arm's successful seeds.
    pub fn median_reward_acc(&self, arm: Arm) -> Option<f64> {
        median(&self.armwise(arm, |m| m.holdout_reward_acc))
    }

    /// Median holdout mean γ over the arm's successful seeds.
    pub fn median_mean_gamma(&self, arm: Arm) -> Option<f64> {
        median(&self.armwise(arm, |m| m.holdout_mean_gamma))
    }

    pub fn arm_failed(&self, arm: Arm) -> bool {
        self.results
            .iter()
            .filter(|r| r.arm == arm)
            .all(|r| r.outcome.is_err())
    }
}

fn median(sorted: &[f64]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Arm-independent parameters of a comparison run.
#[derive(Debug, Clone)]
pub struct CompareSpec {
    pub dpo: DpoConfig,
    pub target_init: TargetInit,
    /// Chunk count for the random arm; defaults to the source count, matching
    /// the easy-to-hard arm.
    pub random_chunks: Option<usize>,
}

/// Runs the four arms for every seed from the identical base model, training
/// data and holdout set. Per-seed variation covers the batch shuffles and the
/// random partition; a failing arm is recorded and skipped, never fatal.
pub fn compare_arms(
    base: &Policy,
    train: &[DatasetSource],
    holdout: &[PreferenceTriple],
    spec: &CompareSpec,
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::Config("compare_arms needs at least one seed".into()));
    }
    if holdout.is_empty() {
        return Err(Error::Domain("compare_arms needs a holdout set".into()));
    }
    let pooled = pooled_triples(train);
    let t_random = spec.random_chunks.unwrap_or(train.len());

    let mut results = Vec::with_capacity(seeds.len() * Arm::ALL.len());
    for &seed in seeds {
        let mut dpo_config = spec.dpo.clone();
        dpo_config.seed = seed;

        for arm in Arm::ALL {
            let outcome = run_arm(arm, base, train, &pooled, holdout, &dpo_config, spec, t_random, seed);
            results.push(ArmSeedResult {
                arm,
                seed,
                outcome: outcome.map_err(|e| e.to_string()),
            });
        }
    }
    Ok(ComparisonReport {
        results,
        seeds: seeds.to_vec(),
        holdout_ids: holdout.iter().map(|t| t.id.clone()).collect(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_arm(
    arm: Arm,
    base: &Policy,
    train: &[DatasetSource],
    pooled: &[PreferenceTriple],
    holdout: &[PreferenceTriple],
    dpo_config: &DpoConfig,
    spec: &CompareSpec,
    t_random: usize,
    seed: u64,
) -> Result<ArmMetrics> {
    let final_model = match arm {
        Arm::SftOnly => base.clone(),
        Arm::Dpo => run_dpo(base, pooled, dpo_config)?.0,
        Arm::SdpoEasyToHard => {
            let plan = partition_easy_to_hard(train, base)?;
            let mut config = SdpoConfig::new(dpo_config.clone(), plan);
            config.target_init = spec.target_init;
            run_sdpo(base, &config)?.final_model
        }
        Arm::SdpoRandom => {
            let plan = partition_random(train, t_random, seed)?;
            let mut config = SdpoConfig::new(dpo_config.clone(), plan);
            config.target_init = spec.target_init;
            run_sdpo(base, &config)?.final_model
        }
    };
    Ok(ArmMetrics {
        holdout_reward_acc: dpo::reward_accuracy(&final_model, holdout)?,
        holdout_mean_gamma: dpo::mean_gamma(&final_model, holdout)?,
    })
}
