//! Preference data: triples, JSONL ingestion, a synthetic generator with a
//! controllable difficulty gradient, and the chunk partitioners.
//!
//! JSONL input is one object per line with fields `prompt`, `chosen`,
//! `rejected` and optional `source` / `id`; absent sources default to the
//! file stem and absent ids to `<stem>:<line>`.

use crate::error::{Error, Result};
use crate::policy::{PolicyModel, SftExample};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// One preference record: prompt, preferred response, rejected response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub source: String,
}

impl PreferenceTriple {
    /// A degenerate triple has identical responses; it is kept but always
    /// scores a zero log-ratio and counts against reward accuracy.
    pub fn is_degenerate(&self) -> bool {
        self.chosen == self.rejected
    }
}

/// A named group of triples, usually one ingested file or one generated
/// difficulty level.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSource {
    pub name: String,
    pub triples: Vec<PreferenceTriple>,
    /// Generator metadata only; ingestion leaves it unset.
    pub declared_difficulty: Option<f64>,
}

impl DatasetSource {
    pub fn degenerate_count(&self) -> usize {
        self.triples.iter().filter(|t| t.is_degenerate()).count()
    }
}

/// Raw JSONL record; `source` and `id` are filled in when absent.
#[derive(Deserialize)]
struct RawTriple {
    prompt: String,
    chosen: String,
    rejected: String,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    id: Option<String>,
}

/// Loads a JSONL preference file and groups its triples by source, in order
/// of first appearance. Lines that are blank after trimming are skipped.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<DatasetSource>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "jsonl".to_string());

    let mut sources: Vec<DatasetSource> = Vec::new();
    let mut seen_ids = BTreeSet::new();
    let mut line_no = 0usize;
    for line in std::io::BufReader::new(file).lines() {
        line_no += 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let raw: RawTriple = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if raw.chosen.is_empty() || raw.rejected.is_empty() {
            return Err(parse_err("chosen and rejected must be non-empty".into()));
        }
        let triple = PreferenceTriple {
            id: raw.id.unwrap_or_else(|| format!("{stem}:{line_no}")),
            prompt: raw.prompt,
            chosen: raw.chosen,
            rejected: raw.rejected,
            source: raw.source.unwrap_or_else(|| stem.clone()),
        };
        if !seen_ids.insert(triple.id.clone()) {
            return Err(parse_err(format!("duplicate triple id {:?}", triple.id)));
        }
        if triple.is_degenerate() {
            log::warn!("degenerate triple {} (chosen == rejected)", triple.id);
        }
        match sources.iter_mut().find(|s| s.name == triple.source) {
            Some(s) => s.triples.push(triple),
            None => sources.push(DatasetSource {
                name: triple.source.clone(),
                triples: vec![triple],
                declared_difficulty: None,
            }),
        }
    }
    if sources.is_empty() {
        return Err(Error::Domain(format!(
            "no triples in {}",
            path.display()
        )));
    }
    Ok(sources)
}

/// Loads several JSONL files, keeping sources distinct across files and
/// rejecting duplicate triple ids dataset-wide.
pub fn load_jsonl_many(paths: &[impl AsRef<Path>]) -> Result<Vec<DatasetSource>> {
    let mut all: Vec<DatasetSource> = Vec::new();
    let mut ids = BTreeSet::new();
    for path in paths {
        for src in load_jsonl(path)? {
            for t in &src.triples {
                if !ids.insert(t.id.clone()) {
                    return Err(Error::Domain(format!(
                        "duplicate triple id {:?} across input files",
                        t.id
                    )));
                }
            }
            match all.iter_mut().find(|s| s.name == src.name) {
                Some(existing) => existing.triples.extend(src.triples),
                None => all.push(src),
            }
        }
    }
    if all.is_empty() {
        return Err(Error::Domain("no input files given".into()));
    }
    Ok(all)
}

/// Writes triples as JSONL, one object per line, fields in the fixed order
/// `id, prompt, chosen, rejected, source`.
pub fn write_jsonl(triples: &[PreferenceTriple], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in triples {
        let line = serde_json::to_string(t).expect("triple serialization cannot fail");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic character-sorting task.
///
/// Each triple's prompt is a random lowercase string, `chosen` is the prompt
/// sorted, and `rejected` is `chosen` with `swaps` disjoint position pairs
/// exchanged (each pair holds two different characters, so a source with `s`
/// swaps differs from its chosen in exactly `2s` positions). Many swaps are
/// easy to tell apart from the sorted answer; a single swap is hard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_sources: usize,
    pub triples_per_source: usize,
    pub prompt_len: usize,
    /// Swap count per source, easiest (most swaps) first. Defaults to the
    /// geometric ladder `2^(N-1), ..., 2, 1` capped at `prompt_len / 3`.
    pub ladder: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_sources: 3,
            triples_per_source: 500,
            prompt_len: 12,
            ladder: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn resolved_ladder(&self) -> Vec<usize> {
        match &self.ladder {
            Some(l) => l.clone(),
            None => {
                let cap = (self.prompt_len / 3).max(1);
                (0..self.num_sources)
                    .map(|i| (1usize << (self.num_sources - 1 - i)).min(cap))
                    .collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_sources == 0 {
            return Err(Error::Config("num_sources must be >= 1".into()));
        }
        if self.triples_per_source == 0 {
            return Err(Error::Config("triples_per_source must be >= 1".into()));
        }
        if self.prompt_len < 2 {
            return Err(Error::Config("prompt_len must be >= 2".into()));
        }
        let ladder = self.resolved_ladder();
        if ladder.len() != self.num_sources {
            return Err(Error::Config(format!(
                "ladder length {} != num_sources {}",
                ladder.len(),
                self.num_sources
            )));
        }
        for &swaps in &ladder {
            if swaps == 0 {
                return Err(Error::Config("ladder entries must be >= 1".into()));
            }
            if 2 * swaps > self.prompt_len {
                return Err(Error::Config(format!(
                    "{swaps} swaps need {} distinct positions but prompts have length {}",
                    2 * swaps,
                    self.prompt_len
                )));
            }
        }
        Ok(())
    }
}

/// Generates the synthetic sources. Deterministic given the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<DatasetSource>> {
    spec.validate()?;
    let ladder = spec.resolved_ladder();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut sources = Vec::with_capacity(spec.num_sources);
    for (i, &swaps) in ladder.iter().enumerate() {
        let name = format!("s{i:02}_swaps{swaps}");
        let mut triples = Vec::with_capacity(spec.triples_per_source);
        for j in 1..=spec.triples_per_source {
            let (prompt, chosen, rejected) = synth_triple(&mut rng, spec.prompt_len, swaps);
            triples.push(PreferenceTriple {
                id: format!("{name}:{j}"),
                prompt,
                chosen,
                rejected,
                source: name.clone(),
            });
        }
        sources.push(DatasetSource {
            name,
            triples,
            declared_difficulty: Some(1.0 - (2 * swaps) as f64 / spec.prompt_len as f64),
        });
    }
    Ok(sources)
}

fn synth_triple(rng: &mut ChaCha20Rng, len: usize, swaps: usize) -> (String, String, String) {
    loop {
        let prompt: String = (0..len)
            .map(|_| (b'a' + rng.gen_range(0..26u8)) as char)
            .collect();
        let mut chosen: Vec<char> = prompt.chars().collect();
        chosen.sort_unstable();
        if let Some(rejected) = corrupt(rng, &chosen, swaps) {
            return (prompt, chosen.into_iter().collect(), rejected);
        }
        // not enough distinct characters for the requested swaps; new prompt
    }
}

/// Applies `swaps` disjoint adjacent-position swaps whose characters differ,
/// or gives up if the string cannot support that many.
///
/// Adjacent swaps are the subtlest corruption of a sorted string (one local
/// inversion each), which keeps the scoring task off its ceiling and lets
/// the swap count carry the difficulty signal.
fn corrupt(rng: &mut ChaCha20Rng, chosen: &[char], swaps: usize) -> Option<String> {
    // Adjacent pairs with differing characters, i.e. the legal swap sites.
    let sites: Vec<usize> = (0..chosen.len() - 1)
        .filter(|&i| chosen[i] != chosen[i + 1])
        .collect();
    for _ in 0..50 {
        let mut order: Vec<usize> = (0..sites.len()).collect();
        crate::policy::shuffle(&mut order, rng);
        let mut picked: Vec<usize> = Vec::with_capacity(swaps);
        for &site_idx in &order {
            let i = sites[site_idx];
            // Sites at distance 1 would share a position.
            if picked.iter().any(|&p| p.abs_diff(i) <= 1) {
                continue;
            }
            picked.push(i);
            if picked.len() == swaps {
                let mut rejected: Vec<char> = chosen.to_vec();
                for &p in &picked {
                    rejected.swap(p, p + 1);
                }
                return Some(rejected.into_iter().collect());
            }
        }
    }
    None
}

/// How a [`ChunkPlan`] was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    EasyToHard,
    Random { seed: u64, t: usize },
    Single,
}

/// One training chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub chunk_id: String,
    pub source_names: Vec<String>,
    /// Reward accuracy of the scoring model on this chunk; set by the
    /// easy-to-hard partitioner, absent otherwise.
    pub reward_accuracy: Option<f64>,
    pub triples: Vec<PreferenceTriple>,
}

/// Ordered partition of the training data into chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPlan {
    pub strategy: Strategy,
    pub chunks: Vec<Chunk>,
}

impl ChunkPlan {
    /// One pooled chunk holding every triple in source order.
    pub fn single(sources: &[DatasetSource]) -> Result<Self> {
        let triples = pooled_triples(sources);
        if triples.is_empty() {
            return Err(Error::Domain("cannot build a plan from zero triples".into()));
        }
        Ok(ChunkPlan {
            strategy: Strategy::Single,
            chunks: vec![Chunk {
                chunk_id: "chunk_1".into(),
                source_names: sources.iter().map(|s| s.name.clone()).collect(),
                reward_accuracy: None,
                triples,
            }],
        })
    }

    pub fn total_triples(&self) -> usize {
        self.chunks.iter().map(|c| c.triples.len()).sum()
    }

    /// Audit view with member ids instead of full triples.
    pub fn manifest(&self) -> ChunkPlanManifest {
        ChunkPlanManifest {
            strategy: self.strategy.clone(),
            chunks: self
                .chunks
                .iter()
                .map(|c| ChunkManifest {
                    chunk_id: c.chunk_id.clone(),
                    source_names: c.source_names.clone(),
                    reward_accuracy: c.reward_accuracy,
                    triple_ids: c.triples.iter().map(|t| t.id.clone()).collect(),
                })
                .collect(),
        }
    }
}

/// Serializable chunk-plan record written into every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPlanManifest {
    pub strategy: Strategy,
    pub chunks: Vec<ChunkManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkManifest {
    pub chunk_id: String,
    pub source_names: Vec<String>,
    pub reward_accuracy: Option<f64>,
    pub triple_ids: Vec<String>,
}

/// All triples pooled in source order.
pub fn pooled_triples(sources: &[DatasetSource]) -> Vec<PreferenceTriple> {
    sources.iter().flat_map(|s| s.triples.iter().cloned()).collect()
}

/// The `(prompt, chosen)` pairs of every source, for supervised fine-tuning.
pub fn sft_corpus(sources: &[DatasetSource]) -> Vec<SftExample> {
    sources
        .iter()
        .flat_map(|s| s.triples.iter())
        .map(|t| SftExample {
            prompt: t.prompt.clone(),
            response: t.chosen.clone(),
        })
        .collect()
}

/// One chunk per source, ordered by the scoring model's reward accuracy,
/// highest (easiest) first. Ties break by source name ascending.
pub fn partition_easy_to_hard<T: Scalar>(
    sources: &[DatasetSource],
    scorer: &PolicyModel<T>,
) -> Result<ChunkPlan> {
    if sources.is_empty() {
        return Err(Error::Domain("no sources to partition".into()));
    }
    let mut scored: Vec<(f64, &DatasetSource)> = sources
        .iter()
        .map(|s| Ok((crate::dpo::reward_accuracy(scorer, &s.triples)?, s)))
        .collect::<Result<_>>()?;
    scored.sort_by(|(acc_a, src_a), (acc_b, src_b)| {
        acc_b
            .partial_cmp(acc_a)
            .expect("reward accuracies are finite")
            .then_with(|| src_a.name.cmp(&src_b.name))
    });
    let chunks = scored
        .into_iter()
        .enumerate()
        .map(|(i, (acc, src))| Chunk {
            chunk_id: format!("chunk_{}", i + 1),
            source_names: vec![src.name.clone()],
            reward_accuracy: Some(acc),
            triples: src.triples.clone(),
        })
        .collect();
    Ok(ChunkPlan {
        strategy: Strategy::EasyToHard,
        chunks,
    })
}

/// Pools all triples, shuffles them with a seeded RNG and cuts `t` chunks
/// whose sizes differ by at most one (earlier chunks take the remainder).
pub fn partition_random(sources: &[DatasetSource], t: usize, seed: u64) -> Result<ChunkPlan> {
    if t == 0 {
        return Err(Error::Config("random partition needs t >= 1".into()));
    }
    let pool = pooled_triples(sources);
    if pool.len() < t {
        return Err(Error::Domain(format!(
            "cannot cut {} chunks from {} triples",
            t,
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    crate::policy::shuffle(&mut order, &mut rng);

    let base = pool.len() / t;
    let remainder = pool.len() % t;
    let mut chunks = Vec::with_capacity(t);
    let mut cursor = 0usize;
    for i in 0..t {
        let size = base + usize::from(i < remainder);
        let triples: Vec<PreferenceTriple> = order[cursor..cursor + size]
            .iter()
            .map(|&idx| pool[idx].clone())
            .collect();
        cursor += size;
        let source_names: Vec<String> = triples
            .iter()
            .map(|tr| tr.source.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        chunks.push(Chunk {
            chunk_id: format!("chunk_{}", i + 1),
            source_names,
            reward_accuracy: None,
            triples,
        });
    }
    Ok(ChunkPlan {
        strategy: Strategy::Random { seed, t },
        chunks,
    })
}

/// Train/holdout fractions and the seed that fixes the membership.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let in_open_unit = |f: f64| f > 0.0 && f < 1.0;
        if !in_open_unit(self.train_fraction) || !in_open_unit(self.holdout_fraction) {
            return Err(Error::Config("split fractions must lie in (0, 1)".into()));
        }
        if (self.train_fraction + self.holdout_fraction - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Per-source stratified split. The holdout side is pooled (source order,
/// then original triple order) and never enters any chunk. Membership depends
/// only on `(spec.seed, source name)`, not on source order.
pub fn split_holdout(
    sources: &[DatasetSource],
    spec: &SplitSpec,
) -> Result<(Vec<DatasetSource>, Vec<PreferenceTriple>)> {
    spec.validate()?;
    if sources.is_empty() {
        return Err(Error::Domain("no sources to split".into()));
    }
    let mut train = Vec::with_capacity(sources.len());
    let mut holdout = Vec::new();
    for src in sources {
        let n = src.triples.len();
        if n < 2 {
            return Err(Error::Domain(format!(
                "source {:?} has {} triples; need at least 2 to split",
                src.name, n
            )));
        }
        let take = (n as f64 * spec.holdout_fraction).round() as usize;
        if take == 0 || take == n {
            return Err(Error::Domain(format!(
                "holdout fraction {} leaves an empty side for source {:?} ({} triples)",
                spec.holdout_fraction, src.name, n
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha20Rng::from_seed(sub_seed(spec.seed, &src.name));
        crate::policy::shuffle(&mut order, &mut rng);
        let mut held: Vec<usize> = order[..take].to_vec();
        held.sort_unstable();
        let held_set: BTreeSet<usize> = held.iter().copied().collect();
        holdout.extend(held.iter().map(|&i| src.triples[i].clone()));
        train.push(DatasetSource {
            name: src.name.clone(),
            triples: src
                .triples
                .iter()
                .enumerate()
                .filter(|(i, _)| !held_set.contains(i))
                .map(|(_, t)| t.clone())
                .collect(),
            declared_difficulty: src.declared_difficulty,
        });
    }
    Ok((train, holdout))
}

fn sub_seed(seed: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Arch;
    use crate::vocab::Vocabulary;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn uniform_scorer() -> PolicyModel<f64> {
        let vocab = Vocabulary::default_ascii();
        let arch = Arch {
            context_window: 3,
            embedding_dim: 4,
            hidden_dim: 5,
            vocab_size: vocab.size(),
        };
        let mut model = PolicyModel::init(vocab, arch, 0).unwrap();
        model.zero_output_layer();
        model
    }

    /// Builds a source whose reward accuracy under the uniform scorer is
    /// exactly `wins / total`: winners have a longer rejected response,
    /// the rest are equal-length ties.
    fn source_with_accuracy(name: &str, wins: usize, total: usize) -> DatasetSource {
        let triples = (0..total)
            .map(|i| {
                let (chosen, rejected) = if i < wins { ("ab", "abc") } else { ("ab", "ba") };
                PreferenceTriple {
                    id: format!("{name}:{i}"),
                    prompt: "p".into(),
                    chosen: chosen.into(),
                    rejected: rejected.into(),
                    source: name.into(),
                }
            })
            .collect();
        DatasetSource {
            name: name.into(),
            triples,
            declared_difficulty: None,
        }
    }

    #[test]
    fn jsonl_groups_by_source() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, r#"{{"prompt":"p1","chosen":"c1","rejected":"r1","source":"a"}}"#).unwrap();
        writeln!(file, r#"{{"prompt":"p2","chosen":"c2","rejected":"r2","source":"a"}}"#).unwrap();
        writeln!(file, r#"{{"prompt":"p3","chosen":"c3","rejected":"r3","source":"b"}}"#).unwrap();
        let sources = load_jsonl(file.path()).unwrap();
        assert_eq!(sources.len(), 2);
        assert_eq!(sources[0].name, "a");
        assert_eq!(sources[0].triples.len(), 2);
        assert_eq!(sources[1].name, "b");
        assert_eq!(sources[1].triples.len(), 1);
    }

    #[test]
    fn jsonl_missing_chosen_cites_line_2() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, r#"{{"prompt":"p","chosen":"c","rejected":"r"}}"#).unwrap();
        writeln!(file, r#"{{"prompt":"p","rejected":"r"}}"#).unwrap();
        match load_jsonl(file.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("chosen"), "message: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_defaults_source_and_id_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mydata.jsonl");
        std::fs::write(&path, "{\"prompt\":\"p\",\"chosen\":\"c\",\"rejected\":\"r\"}\n").unwrap();
        let sources = load_jsonl(&path).unwrap();
        assert_eq!(sources[0].name, "mydata");
        assert_eq!(sources[0].triples[0].id, "mydata:1");
    }

    #[test]
    fn jsonl_empty_file_is_domain_error() {
        let file = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(load_jsonl(file.path()), Err(Error::Domain(_))));
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let spec = SyntheticSpec {
            num_sources: 2,
            triples_per_source: 25,
            ..SyntheticSpec::default()
        };
        let sources = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.jsonl");
        let triples = pooled_triples(&sources);
        write_jsonl(&triples, &path).unwrap();
        let reloaded = pooled_triples(&load_jsonl(&path).unwrap());
        assert_eq!(triples, reloaded);
        // Writing again produces identical bytes.
        let bytes_a = std::fs::read(&path).unwrap();
        write_jsonl(&triples, &path).unwrap();
        assert_eq!(bytes_a, std::fs::read(&path).unwrap());
    }

    #[test]
    fn generator_contract_on_differing_positions() {
        let spec = SyntheticSpec {
            num_sources: 3,
            triples_per_source: 60,
            ..SyntheticSpec::default()
        };
        assert_eq!(spec.resolved_ladder(), vec![4, 2, 1]);
        let sources = generate_synthetic(&spec).unwrap();
        let differing = |t: &PreferenceTriple| {
            t.chosen
                .chars()
                .zip(t.rejected.chars())
                .filter(|(a, b)| a != b)
                .count()
        };
        // Easiest source: every triple differs in at least 4 positions.
        assert!(sources[0].triples.iter().all(|t| differing(t) >= 4));
        // Hardest source: exactly one swap, two differing positions.
        assert!(sources[2].triples.iter().all(|t| differing(t) == 2));
        // Chosen really is the sorted prompt.
        for t in sources.iter().flat_map(|s| &s.triples) {
            let mut sorted: Vec<char> = t.prompt.chars().collect();
            sorted.sort_unstable();
            assert_eq!(t.chosen, sorted.into_iter().collect::<String>());
            assert!(!t.is_degenerate());
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let different_seed = SyntheticSpec { seed: 1, ..spec };
        assert_ne!(a, generate_synthetic(&different_seed).unwrap());
    }

    #[test]
    fn generator_rejects_impossible_ladder() {
        let spec = SyntheticSpec {
            num_sources: 1,
            prompt_len: 4,
            ladder: Some(vec![3]),
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn easy_to_hard_sorts_by_accuracy_descending() {
        let scorer = uniform_scorer();
        let sources = vec![
            source_with_accuracy("A", 9, 10),
            source_with_accuracy("B", 6, 10),
            source_with_accuracy("C", 15, 20),
        ];
        let plan = partition_easy_to_hard(&sources, &scorer).unwrap();
        let order: Vec<&str> = plan
            .chunks
            .iter()
            .map(|c| c.source_names[0].as_str())
            .collect();
        assert_eq!(order, ["A", "C", "B"]);
        let accs: Vec<f64> = plan.chunks.iter().map(|c| c.reward_accuracy.unwrap()).collect();
        assert_eq!(accs, [0.9, 0.75, 0.6]);
    }

    #[test]
    fn easy_to_hard_breaks_ties_by_name() {
        let scorer = uniform_scorer();
        // Same accuracy, deliberately inserted out of name order.
        let sources = vec![
            source_with_accuracy("B", 8, 10),
            source_with_accuracy("A", 8, 10),
        ];
        let plan = partition_easy_to_hard(&sources, &scorer).unwrap();
        let order: Vec<&str> = plan
            .chunks
            .iter()
            .map(|c| c.source_names[0].as_str())
            .collect();
        assert_eq!(order, ["A", "B"]);
    }

    #[test]
    fn easy_to_hard_single_source_is_one_chunk() {
        let scorer = uniform_scorer();
        let sources = vec![source_with_accuracy("only", 5, 10)];
        let plan = partition_easy_to_hard(&sources, &scorer).unwrap();
        assert_eq!(plan.chunks.len(), 1);
        assert_eq!(plan.chunks[0].triples.len(), 10);
    }

    #[test]
    fn random_partition_sizes_differ_by_at_most_one() {
        let sources = vec![source_with_accuracy("x", 5, 10)];
        let plan = partition_random(&sources, 3, 7).unwrap();
        let sizes: Vec<usize> = plan.chunks.iter().map(|c| c.triples.len()).collect();
        assert_eq!(sizes, [4, 3, 3]);
    }

    #[test]
    fn random_partition_is_deterministic() {
        let sources = vec![source_with_accuracy("x", 5, 12)];
        let a = partition_random(&sources, 4, 3).unwrap();
        let b = partition_random(&sources, 4, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, partition_random(&sources, 4, 4).unwrap());
    }

    #[test]
    fn random_partition_t1_is_a_permutation_of_the_pool() {
        let sources = vec![
            source_with_accuracy("x", 3, 6),
            source_with_accuracy("y", 2, 5),
        ];
        let plan = partition_random(&sources, 1, 11).unwrap();
        assert_eq!(plan.chunks.len(), 1);
        let mut got: Vec<String> = plan.chunks[0].triples.iter().map(|t| t.id.clone()).collect();
        let mut expected: Vec<String> =
            pooled_triples(&sources).iter().map(|t| t.id.clone()).collect();
        assert_ne!(got, expected, "expected a permuted order");
        got.sort();
        expected.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn random_partition_rejects_too_many_chunks() {
        let sources = vec![source_with_accuracy("x", 1, 3)];
        assert!(matches!(
            partition_random(&sources, 4, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let sources = vec![
            source_with_accuracy("a", 10, 60),
            source_with_accuracy("b", 10, 40),
        ];
        let spec = SplitSpec {
            train_fraction: 0.8,
            holdout_fraction: 0.2,
            seed: 5,
        };
        let (train, holdout) = split_holdout(&sources, &spec).unwrap();
        assert_eq!(holdout.len(), 20);
        assert_eq!(train[0].triples.len(), 48);
        assert_eq!(train[1].triples.len(), 32);

        let train_ids: BTreeSet<String> = train
            .iter()
            .flat_map(|s| s.triples.iter().map(|t| t.id.clone()))
            .collect();
        let holdout_ids: BTreeSet<String> = holdout.iter().map(|t| t.id.clone()).collect();
        assert!(train_ids.is_disjoint(&holdout_ids));
        let all_ids: BTreeSet<String> = pooled_triples(&sources)
            .iter()
            .map(|t| t.id.clone())
            .collect();
        let union: BTreeSet<String> = train_ids.union(&holdout_ids).cloned().collect();
        assert_eq!(union, all_ids);

        let (train2, holdout2) = split_holdout(&sources, &spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(holdout, holdout2);
    }

    #[test]
    fn split_rejects_empty_sides() {
        let sources = vec![source_with_accuracy("a", 1, 3)];
        let spec = SplitSpec {
            train_fraction: 0.9,
            holdout_fraction: 0.1,
            seed: 0,
        };
        // round(3 * 0.1) = 0 holdout triples
        assert!(matches!(split_holdout(&sources, &spec), Err(Error::Domain(_))));
        let bad = SplitSpec {
            train_fraction: 0.5,
            holdout_fraction: 0.6,
            seed: 0,
        };
        assert!(matches!(split_holdout(&sources, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_triples_are_counted() {
        let mut source = source_with_accuracy("a", 1, 2);
        source.triples.push(PreferenceTriple {
            id: "a:deg".into(),
            prompt: "p".into(),
            chosen: "same".into(),
            rejected: "same".into(),
            source: "a".into(),
        });
        assert_eq!(source.degenerate_count(), 1);
    }

    proptest! {
        /// Every random plan is a partition of the pooled input: disjoint
        /// chunks whose union is exactly the dataset.
        #[test]
        fn random_plans_partition_the_pool(
            counts in prop::collection::vec(2usize..15, 1..4),
            t in 1usize..5,
            seed in 0u64..1000,
        ) {
            let sources: Vec<DatasetSource> = counts
                .iter()
                .enumerate()
                .map(|(i, &n)| source_with_accuracy(&format!("s{i}"), n / 2, n))
                .collect();
            let total: usize = counts.iter().sum();
            prop_assume!(t <= total);
            let plan = partition_random(&sources, t, seed).unwrap();
            prop_assert_eq!(plan.chunks.len(), t);
            prop_assert_eq!(plan.total_triples(), total);
            let mut seen = BTreeSet::new();
            for chunk in &plan.chunks {
                for triple in &chunk.triples {
                    prop_assert!(seen.insert(triple.id.clone()), "duplicate {}", triple.id);
                }
            }
            let expected: BTreeSet<String> = pooled_triples(&sources)
                .iter()
                .map(|t| t.id.clone())
                .collect();
            prop_assert_eq!(seen, expected);
        }
    }
}
