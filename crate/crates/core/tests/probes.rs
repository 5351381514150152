mod common;

use attnscope::probeclf::{
    self, decode_probe, encode_probe, objective_and_grad, train, AnyProbe, ArcScorer, AttnOnlyProbe, AttnWordsProbe,
    DistanceWordsProbe, ParseInstance, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::random_instance;

fn max_rel_error<S: ArcScorer<f64>>(probe: &S, insts: &[&ParseInstance<f64>], l2: f64) -> f64 {
    let (_, grad) = objective_and_grad(probe, insts, l2).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for p in 0..grad.len() {
        let mut a = probe.clone();
        a.params_mut()[p] += h;
        let mut b = probe.clone();
        b.params_mut()[p] -= h;
        let n = (objective_and_grad(&a, insts, l2).unwrap().0 - objective_and_grad(&b, insts, l2).unwrap().0) / (2.0 * h);
        worst = worst.max((grad[p] - n).abs() / grad[p].abs().max(n.abs()).max(1e-7));
    }
    worst
}

#[test]
fn batch_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let insts: Vec<_> = (0..4).map(|i| random_instance(&mut rng, 3 + i, 2, 3, i % 2 == 0)).collect();
    let refs: Vec<&ParseInstance<f64>> = insts.iter().collect();
    let a = AttnOnlyProbe::from_weights(vec![0.5, -1.0], vec![1.5, 0.2]).unwrap();
    assert!(max_rel_error(&a, &refs, 0.01) <= 1e-3);
    let mut b = AttnWordsProbe::zeros(2, 3);
    b.params_mut().iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
    assert!(max_rel_error(&b, &refs, 0.01) <= 1e-3);
    let c = DistanceWordsProbe::new(3, 4, 9);
    assert!(max_rel_error(&c, &refs, 0.01) <= 1e-3);
}

#[test]
fn full_batch_loss_never_rises() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let insts: Vec<_> = (0..12).map(|_| random_instance(&mut rng, 6, 3, 4, true)).collect();
    let config = TrainConfig {
        adaptive: false,
        epochs: 30,
        learning_rate: 1.0,
        ..TrainConfig::default()
    };
    let out = train(AttnWordsProbe::zeros(3, 4), &insts, None, &config).unwrap();
    for w in out.losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert!(out.dev_uas.iter().all(Option::is_none));
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let insts: Vec<_> = (0..10).map(|_| random_instance(&mut rng, 5, 2, 3, false)).collect();
    let config = TrainConfig { epochs: 5, seed: 11, batch_size: 3, ..TrainConfig::default() };
    let a = train(DistanceWordsProbe::new(3, 5, 1), &insts, Some(&insts), &config).unwrap();
    let b = train(DistanceWordsProbe::new(3, 5, 1), &insts, Some(&insts), &config).unwrap();
    assert_eq!(a.probe.params(), b.probe.params());
    assert_eq!(a.losses, b.losses);
}

#[test]
fn zero_epochs_returns_initial_probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let insts = vec![random_instance(&mut rng, 4, 2, 2, false)];
    let config = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let out = train(AttnOnlyProbe::zeros(2), &insts, None, &config).unwrap();
    assert!(out.losses.is_empty());
    assert!(out.probe.params().iter().all(|&p| p == 0.0));
}

#[test]
fn bad_config_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let insts = vec![random_instance(&mut rng, 4, 2, 2, false)];
    for config in [
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { l2: -1.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        let err = train(AttnOnlyProbe::zeros(2), &insts, None, &config).unwrap_err();
        assert_eq!(err.code(), "invalid-argument");
    }
}

#[test]
fn uniform_attention_gives_uniform_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inst = random_instance(&mut rng, 5, 2, 2, false);
    let dist = AttnOnlyProbe::zeros(2).score(&inst, 0).unwrap();
    assert_eq!(dist[0], 0.0);
    for p in &dist[1..] {
        assert!((p - 0.25).abs() < 1e-12);
    }
}

#[test]
fn checkpoints_round_trip_every_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inst = random_instance(&mut rng, 5, 2, 3, true);
    let mut words = AttnWordsProbe::zeros(2, 3);
    words.params_mut().iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
    let probes = [
        AnyProbe::AttnOnly(AttnOnlyProbe::from_weights(vec![1.0, 2.0], vec![-0.5, 0.5]).unwrap()),
        AnyProbe::AttnWords(words),
        AnyProbe::DistanceWords(DistanceWordsProbe::new(3, 4, 2)),
    ];
    for p in probes {
        let back = decode_probe(&encode_probe(&p)).unwrap();
        assert_eq!(back.kind(), p.kind());
        assert_eq!(back.params(), p.params());
        assert_eq!(back.score(&inst, 1).unwrap(), p.score(&inst, 1).unwrap());
        assert_eq!(probeclf::predict(&back, &inst, 2).unwrap(), probeclf::predict(&p, &inst, 2).unwrap());
    }
}
