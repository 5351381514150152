#![allow(dead_code)]

use attnscope::corpora::{guess_mention_type, CorefDoc, Mention};
use attnscope::probeclf::ParseInstance;
use attnscope::synth::{chain_sentence, generate, HeadBehavior, SynthSpec};
use attnscope::{ExtractSet, HeadId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn strings(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

fn softmax_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0f64).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Random instance with softmax attention rows, Gaussian-ish embeddings and a
/// random head for every scored word.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n_words: usize,
    n_heads: usize,
    dim: usize,
    cls_root: bool,
) -> ParseInstance<f64> {
    let n_nodes = n_words + cls_root as usize;
    let mut attention = Vec::with_capacity(n_heads * n_nodes * n_nodes);
    for _ in 0..n_heads * n_nodes {
        attention.extend(softmax_row(rng, n_nodes).into_iter().map(|v| v as f32));
    }
    let embeddings: Vec<f64> = (0..n_nodes * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let root = rng.random_range(0..n_words);
    let gold = (0..n_words)
        .map(|d| {
            if d == root {
                cls_root.then_some(n_words)
            } else {
                let mut h = rng.random_range(0..n_words - 1);
                if h >= d {
                    h += 1;
                }
                Some(h)
            }
        })
        .collect();
    ParseInstance::from_parts(
        (0..n_words).map(|i| format!("w{i}")).collect(),
        gold,
        cls_root.then_some(n_words),
        n_heads,
        attention,
        dim,
        embeddings,
    )
    .unwrap()
}

const VOCAB: &[&str] = &["John", "Mary", "dog", "he", "she", "it", "they", "house", "the", "saw", "a", "her", "him"];

/// Random document with sorted random mentions drawn from a few clusters.
pub fn random_doc(rng: &mut ChaCha8Rng, n_words: usize, n_mentions: usize) -> CorefDoc {
    let tokens: Vec<String> = (0..n_words).map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string()).collect();
    let mut mentions: Vec<Mention> = (0..n_mentions)
        .map(|_| {
            let start = rng.random_range(0..n_words);
            let end = (start + rng.random_range(0..3)).min(n_words - 1);
            let head_index = rng.random_range(start..=end);
            Mention {
                start,
                end,
                cluster_id: rng.random_range(0..3),
                head_index,
                mention_type: guess_mention_type(&tokens, head_index),
            }
        })
        .collect();
    mentions.sort_by_key(|m| (m.start, m.end));
    CorefDoc {
        doc_id: "random".into(),
        tokens,
        mentions,
    }
}

/// One segment per document with noisy heads and some split words.
pub fn coref_extract(docs: &[CorefDoc], n_heads: usize, seed: u64) -> ExtractSet {
    let corpus: Vec<_> = docs.iter().map(|d| chain_sentence(&d.tokens)).collect();
    let mut spec = SynthSpec::uniform(1, n_heads).with_split_rate(0.3, seed);
    for h in 0..n_heads {
        spec = spec.with_head(HeadId::new(0, h), HeadBehavior::Noise { seed: seed * 31 + h as u64 });
    }
    generate(&spec, &corpus).unwrap()
}
