// Scratch experiment for desk-scale dynamics. Not part of the suite.
// Run: cargo test -p anchorsv --test scratch_bench -- --ignored --nocapture

use anchorsv::data::{make_trials, split_speakers, synth_corpus};
use anchorsv::eval::full_eval;
use anchorsv::model::LossMode;
use anchorsv::trainer::{train_joint, train_stage1, train_stage2, Stage, TrainConfig};

#[test]
#[ignore]
fn desk_dynamics() {
    let t0 = std::time::Instant::now();
    let intra = 0.1;
    let channel = 0.1;
    for (margin, scale) in [(0.2, 30.0), (0.1, 10.0)] {
        for aug in [0.5, 0.25] {
            let mut wins_noisy = 0;
            let mut wins_joint_clean = 0;
            let mut wins_intra = 0;
            let mut wins_ratio = 0;
            let mut wins_clean_guard = 0;
            let seeds = [1u64, 2, 3];
            for &seed in &seeds {
                let corpus = synth_corpus(seed, 40, 20, 50, 16, intra, channel).unwrap();
                let (train, test) = split_speakers(&corpus, 8).unwrap();
                let trials = make_trials(&test, seed, 1200, 2400).unwrap();

                let decorate = |mut c: TrainConfig| {
                    c.seed = seed;
                    c.mode = LossMode::Aam { margin, scale };
                    c.augment_prob = aug;
                    c
                };
                let cfg1 = decorate(TrainConfig::reference(Stage::One));
                let (base, _) = train_stage1(&cfg1, &train).unwrap();
                let mut cfg2 = decorate(TrainConfig::reference(Stage::Two));
                cfg2.learning_rate = 0.0125;
                cfg2.lr_decay_every = 0;
                let (s2, log2) = train_stage2(&cfg2, &train, &base).unwrap();
                let cfgj = decorate(TrainConfig::reference(Stage::Joint));
                let (joint, _) = train_joint(&cfgj, &train).unwrap();

                let k_first = log2.records.first().unwrap().terms.unwrap().k_clean_noise;
                let k_last = log2.records.last().unwrap().terms.unwrap().k_clean_noise;

                let snrs = [0.0, 5.0, 10.0, 15.0, 20.0];
                let kinds = anchorsv::data::NoiseKind::ALL;
                let r1 = full_eval(base.extractor(), &test, &trials, &snrs, &kinds, seed).unwrap();
                let r2 = full_eval(s2.extractor(), &test, &trials, &snrs, &kinds, seed).unwrap();
                let rj = full_eval(joint.extractor(), &test, &trials, &snrs, &kinds, seed).unwrap();

                wins_noisy += (r2.avg_noisy_eer < r1.avg_noisy_eer) as u32;
                wins_joint_clean += (rj.clean_eer > r2.clean_eer) as u32;
                wins_intra += (r2.noisy_geometry.intra_var < r1.noisy_geometry.intra_var) as u32;
                wins_ratio += (r2.noisy_geometry.ratio > rj.noisy_geometry.ratio) as u32;
                wins_clean_guard += (r2.clean_eer <= 1.25 * r1.clean_eer) as u32;
                eprintln!(
                    "  aam({margin},{scale}) aug {aug} seed {seed}: k {k_first:.3}->{k_last:.3} | clean s1 {:.4} s2 {:.4} j {:.4} | noisy s1 {:.4} s2 {:.4} j {:.4} | intra s1 {:.1} s2 {:.1} | ratio s2 {:.2} j {:.2}",
                    r1.clean_eer, r2.clean_eer, rj.clean_eer,
                    r1.avg_noisy_eer, r2.avg_noisy_eer, rj.avg_noisy_eer,
                    r1.noisy_geometry.intra_var, r2.noisy_geometry.intra_var,
                    r2.noisy_geometry.ratio, rj.noisy_geometry.ratio,
                );
            }
            eprintln!(
                "aam({margin},{scale}) aug {aug}: noisy {wins_noisy}/3 joint-clean {wins_joint_clean}/3 intra {wins_intra}/3 ratio {wins_ratio}/3 guard {wins_clean_guard}/3"
            );
        }
    }
    eprintln!("total {:?}", t0.elapsed());
}
