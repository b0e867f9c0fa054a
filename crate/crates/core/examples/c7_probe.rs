//! Scratch: criterion-7 measurement at candidate beta defaults, exact
//! acceptance seed mapping.

use sdpo_lab::data::{generate_synthetic, sft_corpus, split_holdout, SplitSpec, SyntheticSpec};
use sdpo_lab::diagnostics::{compare_arms, Arm, CompareSpec};
use sdpo_lab::dpo::DpoConfig;
use sdpo_lab::policy::{sft_train, Arch, PolicyModel, SftConfig};
use sdpo_lab::trainer::TargetInit;
use sdpo_lab::vocab::Vocabulary;

fn main() {
    let vocab = Vocabulary::default_ascii();
    let arch = Arch {
        context_window: 8,
        embedding_dim: 16,
        hidden_dim: 64,
        vocab_size: vocab.size(),
    };
    let sources = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let (train, holdout) = split_holdout(
        &sources,
        &SplitSpec {
            seed: 1,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    let init = PolicyModel::init(vocab.clone(), arch, 0).unwrap();
    let base = sft_train(
        &init,
        &sft_corpus(&train),
        &SftConfig {
            seed: 2,
            ..SftConfig::default()
        },
    )
    .unwrap();

    for beta in [0.1, 0.3, 0.5, 1.0] {
        let spec = CompareSpec {
            dpo: DpoConfig {
                beta,
                ..DpoConfig::default()
            },
            target_init: TargetInit::Previous,
            random_chunks: None,
        };
        let report = compare_arms(&base, &train, &holdout, &spec, &[0, 1, 2, 3, 4]).unwrap();
        let acc = |arm: Arm| report.median_reward_acc(arm).unwrap();
        let per_seed = |arm: Arm| -> Vec<f64> {
            report
                .results
                .iter()
                .filter(|r| r.arm == arm)
                .map(|r| r.outcome.as_ref().unwrap().holdout_reward_acc)
                .collect()
        };
        println!(
            "beta {beta}: e2h {:.4} rand {:.4} dpo {:.4} sft {:.4}  [e2h>=rand: {}]",
            acc(Arm::SdpoEasyToHard),
            acc(Arm::SdpoRandom),
            acc(Arm::Dpo),
            acc(Arm::SftOnly),
            acc(Arm::SdpoEasyToHard) >= acc(Arm::SdpoRandom),
        );
        println!("   e2h per-seed {:?}", per_seed(Arm::SdpoEasyToHard));
        println!("  rand per-seed {:?}", per_seed(Arm::SdpoRandom));
    }
}
