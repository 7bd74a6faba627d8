//! The frame-classification variant of the abnormality protocol on synthetic
//! 1-D frames: clean tones are normal, tones mixed with white, pink or brown
//! noise are abnormal.

use ndarray::{s, Array2};
use ood_baseline::abnormality::{build_module, make_abnormal_set, ScorerTrainConfig};
use ood_baseline::data::{colored_noise, mix_signals, Dataset, DistortionRange, NoiseColor};
use ood_baseline::harness::softmax_scores;
use ood_baseline::metrics::build_report;
use ood_baseline::nn::mlp::LossWeights;
use ood_baseline::nn::{train_classifier, TrainConfig};
use ood_baseline::rng;
use ood_baseline::scores::ScoreKind;
use rand::Rng;

const LEN: usize = 64;
const CLASSES: usize = 4;

/// Class `c` is a tone at `c + 2` cycles per frame with random phase and gain.
fn frames(n: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, 1);
    let mut labels = Vec::with_capacity(n);
    let mut inputs = Array2::zeros((n, LEN));
    for i in 0..n {
        let c = i % CLASSES;
        let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let gain: f64 = r.random_range(0.3..0.6);
        for t in 0..LEN {
            let w = std::f64::consts::TAU * (c + 2) as f64 * t as f64 / LEN as f64;
            inputs[[i, t]] = gain * (w + phase).sin();
        }
        labels.push(c);
    }
    Dataset::labeled(inputs, labels, CLASSES, "tones").unwrap()
}

fn noisy(clean: &Dataset, color: NoiseColor, volume: f64, seed: u64) -> Array2<f64> {
    let mut out = clean.inputs.clone();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let noise = colored_noise(LEN, color, seed + i as u64).unwrap();
        let mixed = mix_signals(row.as_slice().unwrap(), &noise, volume).unwrap();
        row.assign(&ndarray::ArrayView1::from(&mixed));
    }
    out
}

#[test]
fn abnormality_module_flags_colored_noise_on_frames() {
    let train = frames(1200, 1);
    let test = frames(400, 2);
    let config = TrainConfig {
        epochs: 15,
        batch_size: 32,
        hidden: vec![64, 64],
        decoder: true,
        loss_weights: LossWeights::JOINT,
        seed: 3,
        ..TrainConfig::default()
    };
    let (model, _) = train_classifier(&config, &train, None).unwrap();

    let mut module = build_module(model.clone(), &[32], 4).unwrap();
    let set = make_abnormal_set(&train, &DistortionRange::frame_defaults(), 5).unwrap();
    let scorer = ScorerTrainConfig { seed: 6, ..ScorerTrainConfig::default() };
    let log = module.train_scorer(&set.data, &scorer).unwrap();
    assert_eq!(log.backbone_checksum_before, log.backbone_checksum_after);

    // Held-out frames distorted with the training recipe.
    let held = make_abnormal_set(&test, &DistortionRange::frame_defaults(), 7).unwrap();
    let n = test.len();
    let clean_scores = module.normality_scores(held.data.inputs.slice(s![..n, ..])).unwrap();
    let noisy_scores = module.normality_scores(held.data.inputs.slice(s![n.., ..])).unwrap();
    let r = build_report(&clean_scores, &noisy_scores).unwrap();
    assert!(r.auroc > 0.8 && r.ranksum_p < 0.01, "mixed colors: {r:?}");

    let (clean_soft, _) = softmax_scores(&model, test.inputs.view(), ScoreKind::MaxProb).unwrap();
    let clean_ab = module.normality_scores(test.inputs.view()).unwrap();
    let mut soft_sum = 0.0;
    let mut ab_sum = 0.0;
    for (k, color) in NoiseColor::ALL.into_iter().enumerate() {
        let x = noisy(&test, color, 0.3, 100 * k as u64);
        let (s, _) = softmax_scores(&model, x.view(), ScoreKind::MaxProb).unwrap();
        let a = module.normality_scores(x.view()).unwrap();
        soft_sum += build_report(&clean_soft, &s).unwrap().auroc;
        let ab = build_report(&clean_ab, &a).unwrap();
        assert!(ab.auroc > 0.5 && ab.ranksum_p < 0.01, "{color:?}: {ab:?}");
        ab_sum += ab.auroc;
    }
    assert!(ab_sum >= soft_sum, "abmod {ab_sum} vs softmax {soft_sum}");
}
