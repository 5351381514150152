mod common;

use attnscope::headprobe::coref::{coref_baselines, eval_coref, CorefOptions};
use attnscope::headprobe::{eval_dependency, predict_most_attended, DepEvalOptions, Direction, ALL};
use attnscope::synth::oracle::{
    oracle_argmax, oracle_baselines, oracle_coref, oracle_dependency, oracle_word_attention,
};
use attnscope::synth::{generate, random_corpus, HeadBehavior, SynthSpec};
use attnscope::wordmap::to_word_attention;
use attnscope::HeadId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{coref_extract, random_doc};

fn noisy_spec(rng: &mut ChaCha8Rng, heads: usize) -> SynthSpec {
    let mut spec = SynthSpec::uniform(1, heads).with_split_rate(rng.random_range(0.0..1.0), rng.random());
    for h in 0..heads {
        let b = match rng.random_range(0..4) {
            0 => HeadBehavior::Noise { seed: rng.random() },
            1 => HeadBehavior::GoldHead { mass: rng.random_range(0.1..1.0) },
            2 => HeadBehavior::Uniform,
            _ => HeadBehavior::Offset([-1, 1][rng.random_range(0..2)]),
        };
        spec = spec.with_head(HeadId::new(0, h), b);
    }
    spec
}

#[test]
fn word_attention_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let corpus = random_corpus(2, 2, 20, case).unwrap();
        let set = generate(&noisy_spec(&mut rng, 3), &corpus).unwrap();
        for seg in &set.segments {
            for h in set.heads() {
                for keep in [false, true] {
                    let fast = to_word_attention::<f64>(seg, h, keep).unwrap();
                    let slow = oracle_word_attention(seg, h.layer, h.head, keep).unwrap();
                    assert_eq!(fast.n_words(), slow.len());
                    for (w, row) in slow.iter().enumerate() {
                        assert_eq!(fast.n_cols(), row.len());
                        for (c, v) in row.iter().enumerate() {
                            assert!((fast.get(w, c) - v).abs() < 1e-12, "case {case} ({w},{c})");
                        }
                    }
                    for w in 0..fast.n_words() {
                        let got = predict_most_attended(&fast, w).ok();
                        assert_eq!(got, oracle_argmax(&slow[w], w, fast.n_words()), "case {case} word {w}");
                    }
                }
            }
        }
    }
}

#[test]
fn dependency_scores_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let corpus = random_corpus(rng.random_range(1..4), 2, 25, 100 + case).unwrap();
        let set = generate(&noisy_spec(&mut rng, 2), &corpus).unwrap();
        for h in set.heads() {
            for dir in [Direction::DepToHead, Direction::HeadToDep] {
                let e = eval_dependency(&set, &corpus, h, dir, &DepEvalOptions::default()).unwrap();
                let h2d = dir == Direction::HeadToDep;
                let o = oracle_dependency(&set, &corpus, h.layer, h.head, ALL, h2d).unwrap();
                assert_eq!((e.overall.correct, e.overall.support), o, "case {case} {h}");
                for r in &e.per_relation {
                    let o = oracle_dependency(&set, &corpus, h.layer, h.head, &r.relation, h2d).unwrap();
                    assert_eq!((r.correct, r.support), o, "case {case} {h} {}", r.relation);
                }
            }
        }
    }
}

#[test]
fn coreference_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..30 {
        let docs: Vec<_> = (0..3)
            .map(|_| {
                let n = rng.random_range(2..=30);
                let m = rng.random_range(1..=8);
                random_doc(&mut rng, n, m)
            })
            .collect();
        let set = coref_extract(&docs, 2, case);
        for h in set.heads() {
            let e = eval_coref(&set, &docs, h, &CorefOptions::default()).unwrap();
            let mut want = ([0usize; 3], [0usize; 3]);
            for (seg, doc) in set.segments.iter().zip(&docs) {
                let c = oracle_coref(seg, doc, h.layer, h.head).unwrap();
                for i in 0..3 {
                    want.0[i] += c.0[i];
                    want.1[i] += c.1[i];
                }
            }
            assert_eq!((e.accuracy.correct, e.accuracy.total), want, "case {case} {h}");
        }
        let b = coref_baselines(&docs);
        let got = [
            (b.nearest.correct, b.nearest.total),
            (b.head_match.correct, b.head_match.total),
            (b.rule_sieve.correct, b.rule_sieve.total),
        ];
        assert_eq!(got, oracle_baselines(&docs).unwrap(), "case {case}");
    }
}

#[test]
fn oracle_refuses_large_inputs() {
    let corpus = random_corpus(1, 40, 40, 1).unwrap();
    let set = generate(&SynthSpec::uniform(1, 1), &corpus).unwrap();
    let err = oracle_word_attention(&set.segments[0], 0, 0, false).unwrap_err();
    assert_eq!(err.code(), "oracle-too-large");
}
