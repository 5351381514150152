mod common;

use attnscope::corpora::{parse_dep_corpus, write_dep_corpus};
use attnscope::headprobe::coref::{coref_baselines, eval_coref, CorefOptions};
use attnscope::interchange::{decode_extract, encode_extract};
use attnscope::synth::{generate, random_corpus, HeadBehavior, SynthSpec};
use attnscope::wordmap::to_word_attention;
use attnscope::HeadId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{coref_extract, random_doc};

fn behavior() -> impl Strategy<Value = HeadBehavior> {
    prop_oneof![
        Just(HeadBehavior::Uniform),
        (-3isize..=3).prop_map(HeadBehavior::Offset),
        (0.05f64..=1.0).prop_map(|mass| HeadBehavior::GoldHead { mass }),
        Just(HeadBehavior::SepSink),
        any::<u64>().prop_map(|seed| HeadBehavior::Noise { seed }),
    ]
}

fn spec() -> impl Strategy<Value = SynthSpec> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(l, h)| {
        (prop::collection::vec(behavior(), l * h), any::<u64>(), 0.0f64..=1.0).prop_map(move |(behaviors, seed, split_rate)| {
            SynthSpec { n_layers: l, n_heads: h, behaviors, seed, split_rate }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn synthetic_sets_are_valid(spec in spec(), corpus_seed in any::<u64>(), n in 1usize..6) {
        let corpus = random_corpus(n, 4, 14, corpus_seed).unwrap();
        let set = generate(&spec, &corpus).unwrap();
        prop_assert!(set.validate().is_ok());
        prop_assert_eq!(set.segments.len(), n);
        for (seg, sent) in set.segments.iter().zip(&corpus) {
            prop_assert_eq!(seg.n_words(), sent.len());
            for h in set.heads() {
                let m = to_word_attention::<f64>(seg, h, true).unwrap();
                for w in 0..m.n_words() {
                    prop_assert!((m.row(w).iter().sum::<f64>() - 1.0).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn extracts_round_trip(spec in spec(), corpus_seed in any::<u64>()) {
        let corpus = random_corpus(3, 2, 10, corpus_seed).unwrap();
        let set = generate(&spec, &corpus).unwrap();
        let bytes = encode_extract(&set).unwrap();
        let back = decode_extract(&bytes).unwrap();
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(encode_extract(&back).unwrap(), bytes);
    }

    #[test]
    fn dependency_corpora_round_trip(seed in any::<u64>(), n in 1usize..8) {
        let corpus = random_corpus(n, 1, 20, seed).unwrap();
        let text = write_dep_corpus(&corpus);
        prop_assert_eq!(parse_dep_corpus(text.as_bytes()).unwrap(), corpus);
    }

    #[test]
    fn coref_scores_ignore_cluster_labels(seed in any::<u64>(), shift in 1i64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs: Vec<_> = (0..4).map(|_| random_doc(&mut rng, 12, 5)).collect();
        let relabeled: Vec<_> = docs
            .iter()
            .cloned()
            .map(|mut d| {
                for m in &mut d.mentions {
                    m.cluster_id = m.cluster_id * 7 + shift;
                }
                d
            })
            .collect();
        let set = coref_extract(&docs, 2, seed % 1000);
        for h in set.heads() {
            let a = eval_coref(&set, &docs, h, &CorefOptions::default()).unwrap();
            let b = eval_coref(&set, &relabeled, h, &CorefOptions::default()).unwrap();
            prop_assert_eq!(a.accuracy, b.accuracy);
        }
        let a = coref_baselines(&docs);
        let b = coref_baselines(&relabeled);
        prop_assert_eq!(a.nearest, b.nearest);
        prop_assert_eq!(a.head_match, b.head_match);
        prop_assert_eq!(a.rule_sieve, b.rule_sieve);
    }
}

#[test]
fn one_hot_offsets_survive_splitting() {
    let corpus = random_corpus(20, 2, 10, 5).unwrap();
    let spec = SynthSpec::uniform(1, 1)
        .with_head(HeadId::new(0, 0), HeadBehavior::Offset(1))
        .with_split_rate(1.0, 1);
    let set = generate(&spec, &corpus).unwrap();
    for seg in &set.segments {
        let m = to_word_attention::<f64>(seg, HeadId::new(0, 0), false).unwrap();
        // a word's last piece points at the next word's first piece
        for w in 0..m.n_words().saturating_sub(1) {
            assert!((m.get(w, w + 1) - 1.0).abs() < 1e-6 || m.get(w, w) > 0.0);
        }
    }
}
