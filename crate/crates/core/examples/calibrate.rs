//! Scratch calibration harness: sweeps hyperparameters and prints the
//! median behavior of every measured acceptance property.

use sdpo_lab::data::{
    generate_synthetic, partition_easy_to_hard, partition_random, sft_corpus, split_holdout,
    SplitSpec, SyntheticSpec,
};
use sdpo_lab::diagnostics::gamma_sweep;
use sdpo_lab::dpo::{mean_gamma, reward_accuracy, DpoConfig};
use sdpo_lab::policy::{sft_train, Arch, PolicyModel, SftConfig};
use sdpo_lab::trainer::{run_sdpo, SdpoConfig, TargetInit};
use sdpo_lab::vocab::Vocabulary;
use std::time::Instant;

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let sft_lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let sft_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let dpo_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let dpo_epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3);
    let n_seeds: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(5);
    let dpo_batch: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(32);
    let beta: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    println!(
        "sft lr={sft_lr} ep={sft_epochs}; dpo lr={dpo_lr} ep={dpo_epochs} batch={dpo_batch} beta={beta}; seeds={n_seeds}"
    );

    let t0 = Instant::now();
    let vocab = Vocabulary::default_ascii();
    let arch = Arch {
        context_window: 8,
        embedding_dim: 16,
        hidden_dim: 64,
        vocab_size: vocab.size(),
    };

    let mut acc_by_source: Vec<Vec<f64>> = vec![vec![], vec![], vec![]];
    let mut c4_ok = 0usize;
    let mut c5a_ok = 0usize;
    let mut holdout_gamma_by_step: Vec<Vec<f64>> = vec![vec![]; 4];
    let mut c5b_diffs = vec![];
    let mut c6_diffs = vec![];
    let mut acc_sft_all = vec![];
    let mut acc_e2h_all = vec![];
    let mut acc_rand_all = vec![];

    for seed in 0..n_seeds {
        let sources = generate_synthetic(&SyntheticSpec {
            num_sources: 3,
            triples_per_source: 500,
            prompt_len: 12,
            ladder: None,
            seed,
        })
        .unwrap();
        let (train, holdout) = split_holdout(
            &sources,
            &SplitSpec {
                train_fraction: 0.8,
                holdout_fraction: 0.2,
                seed: seed + 1,
            },
        )
        .unwrap();

        let init = PolicyModel::init(vocab.clone(), arch, seed).unwrap();
        let base = sft_train(
            &init,
            &sft_corpus(&train),
            &SftConfig {
                epochs: sft_epochs,
                batch_size: 32,
                learning_rate: sft_lr,
                seed: seed + 2,
            },
        )
        .unwrap();
        for (i, src) in train.iter().enumerate() {
            acc_by_source[i].push(reward_accuracy(&base, &src.triples).unwrap());
        }

        let dpo_cfg = DpoConfig {
            learning_rate: dpo_lr,
            epochs: dpo_epochs,
            batch_size: dpo_batch,
            beta,
            seed: seed + 3,
            ..DpoConfig::default()
        };

        let plan = partition_easy_to_hard(&train, &base).unwrap();
        let mut cfg = SdpoConfig::new(dpo_cfg.clone(), plan);
        cfg.holdout = holdout.clone();
        let run = run_sdpo(&base, &cfg).unwrap();

        let mut all_c4 = true;
        for (i, chunk) in cfg.chunk_plan.chunks.iter().enumerate() {
            let g_ref = mean_gamma(&run.snapshots[i].model, &chunk.triples).unwrap();
            let g_tgt = mean_gamma(&run.snapshots[i + 1].model, &chunk.triples).unwrap();
            all_c4 &= g_tgt > g_ref;
        }
        c4_ok += all_c4 as usize;

        let sweep = gamma_sweep(&run.snapshots, &holdout).unwrap();
        let means: Vec<f64> = sweep.iter().map(|r| r.mean_gamma).collect();
        c5a_ok += means.windows(2).all(|w| w[1] > w[0]) as usize;
        for (i, &m) in means.iter().enumerate() {
            holdout_gamma_by_step[i].push(m);
        }

        let last = cfg.chunk_plan.chunks.last().unwrap();
        let g_train = mean_gamma(&run.final_model, &last.triples).unwrap();
        let same_source: Vec<_> = holdout
            .iter()
            .filter(|t| last.source_names.contains(&t.source))
            .cloned()
            .collect();
        c5b_diffs.push(g_train - mean_gamma(&run.final_model, &same_source).unwrap());

        let plan2 = partition_easy_to_hard(&train, &base).unwrap();
        let mut cfg2 = SdpoConfig::new(dpo_cfg.clone(), plan2);
        cfg2.target_init = TargetInit::SftBase;
        let run2 = run_sdpo(&base, &cfg2).unwrap();
        c6_diffs.push(
            run2.ledger.reports[1].first_batch_loss - run.ledger.reports[1].first_batch_loss,
        );

        acc_sft_all.push(reward_accuracy(&base, &holdout).unwrap());
        acc_e2h_all.push(reward_accuracy(&run.final_model, &holdout).unwrap());
        let plan_r = partition_random(&train, 3, seed + 4).unwrap();
        let run_r = run_sdpo(&base, &SdpoConfig::new(dpo_cfg.clone(), plan_r)).unwrap();
        acc_rand_all.push(reward_accuracy(&run_r.final_model, &holdout).unwrap());
    }

    let n = n_seeds as usize;
    println!(
        "source acc medians: {:.4} / {:.4} / {:.4}  [monotone: {}]",
        median(&mut acc_by_source[0].clone()),
        median(&mut acc_by_source[1].clone()),
        median(&mut acc_by_source[2].clone()),
        median(&mut acc_by_source[0].clone()) >= median(&mut acc_by_source[1].clone())
            && median(&mut acc_by_source[1].clone()) >= median(&mut acc_by_source[2].clone())
    );
    println!("C4 ok {c4_ok}/{n}   C5a ok {c5a_ok}/{n}");
    let step_medians: Vec<f64> = holdout_gamma_by_step
        .iter()
        .map(|v| median(&mut v.clone()))
        .collect();
    println!(
        "C5a median holdout gamma by step: {step_medians:?} [increasing: {}]",
        step_medians.windows(2).all(|w| w[1] > w[0])
    );
    println!(
        "C5b per-seed diffs {:?} median {:.3}",
        c5b_diffs.iter().map(|d| (d * 100.0).round() / 100.0).collect::<Vec<_>>(),
        median(&mut c5b_diffs.clone())
    );
    println!(
        "C6 per-seed diffs {:?} median {:.4}",
        c6_diffs.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        median(&mut c6_diffs.clone())
    );
    let m_sft = median(&mut acc_sft_all.clone());
    let m_e2h = median(&mut acc_e2h_all.clone());
    let m_rand = median(&mut acc_rand_all.clone());
    println!(
        "C7 medians: sft {m_sft:.4} e2h {m_e2h:.4} rand {m_rand:.4}  [e2h>=rand: {}] [both>=sft: {}]",
        m_e2h >= m_rand,
        m_e2h >= m_sft && m_rand >= m_sft
    );
    println!(
        "per-seed e2h {:?}",
        acc_e2h_all.iter().map(|d| (d * 10000.0).round() / 10000.0).collect::<Vec<_>>()
    );
    println!(
        "per-seed rand {:?}",
        acc_rand_all.iter().map(|d| (d * 10000.0).round() / 10000.0).collect::<Vec<_>>()
    );
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
