//! Synthetic attention extracts with known structure, and naive reference
//! implementations ([`oracle`]) to test the analyses against.

pub mod oracle;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpora::DepSentence;
use crate::error::{Error, Result};
use crate::interchange::{ExtractSet, HeadId, Segment, TokenKind};

/// What one synthetic head attends to, per source token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadBehavior {
    Uniform,
    /// One-hot on the token `offset` positions away; on itself where that
    /// token does not exist.
    Offset(isize),
    /// `mass` on the first token of the source word's gold head (`[CLS]` for
    /// root words), the rest spread evenly over all other tokens. Rows of
    /// `[CLS]`/`[SEP]` are uniform.
    GoldHead { mass: f64 },
    /// One-hot on the final `[SEP]`.
    SepSink,
    /// Softmax of seeded Gaussian logits.
    Noise { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Layer-major, one per head.
    pub behaviors: Vec<HeadBehavior>,
    /// Drives word splitting.
    pub seed: u64,
    /// Probability that a word of two or more characters is split into two
    /// wordpieces.
    pub split_rate: f64,
}

impl SynthSpec {
    /// All heads uniform, no splitting.
    pub fn uniform(n_layers: usize, n_heads: usize) -> Self {
        SynthSpec {
            n_layers,
            n_heads,
            behaviors: vec![HeadBehavior::Uniform; n_layers * n_heads],
            seed: 0,
            split_rate: 0.0,
        }
    }

    pub fn with_head(mut self, head: HeadId, behavior: HeadBehavior) -> Self {
        let k = head.flat(self.n_heads);
        self.behaviors[k] = behavior;
        self
    }

    pub fn with_split_rate(mut self, rate: f64, seed: u64) -> Self {
        self.split_rate = rate;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::InvalidArgument("need at least one layer and one head".into()));
        }
        if self.behaviors.len() != self.n_layers * self.n_heads {
            return Err(Error::InvalidArgument(format!(
                "{} behaviors for {} heads",
                self.behaviors.len(),
                self.n_layers * self.n_heads
            )));
        }
        if !(0.0..=1.0).contains(&self.split_rate) {
            return Err(Error::InvalidArgument(format!("split rate {} outside [0, 1]", self.split_rate)));
        }
        for b in &self.behaviors {
            if let HeadBehavior::GoldHead { mass } = *b {
                if !(mass > 0.0 && mass <= 1.0) {
                    return Err(Error::InvalidArgument(format!("gold-head mass {mass} outside (0, 1]")));
                }
            }
        }
        Ok(())
    }
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Random sentences over a syllable vocabulary with random dependency trees.
/// Labels depend only on where the head sits: `det` (next word), `nsubj`
/// (further right), `obj` (previous word), `obl` (further left).
pub fn random_corpus(n_sentences: usize, min_words: usize, max_words: usize, seed: u64) -> Result<Vec<DepSentence>> {
    if min_words == 0 || min_words > max_words {
        return Err(Error::InvalidArgument(format!("bad sentence length range {min_words}..={max_words}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let n = rng.random_range(min_words..=max_words);
        let words: Vec<String> = (0..n)
            .map(|_| {
                let syllables = rng.random_range(1..=3);
                (0..syllables)
                    .map(|_| format!("{}{}", ONSETS.choose(&mut rng).unwrap(), VOWELS.choose(&mut rng).unwrap()))
                    .collect()
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut gold_head = vec![None; n];
        for i in 1..n {
            let parent = order[rng.random_range(0..i)];
            gold_head[order[i]] = Some(parent);
        }
        let relation = gold_head
            .iter()
            .enumerate()
            .map(|(d, h)| relation_for(d, *h).to_string())
            .collect();
        out.push(DepSentence {
            words,
            gold_head,
            relation,
        });
    }
    Ok(out)
}

fn relation_for(d: usize, h: Option<usize>) -> &'static str {
    match h {
        None => "root",
        Some(h) if h == d + 1 => "det",
        Some(h) if h > d => "nsubj",
        Some(h) if h + 1 == d => "obj",
        Some(_) => "obl",
    }
}

/// A sentence whose words form a chain: word 0 is the root and every other
/// word depends on its left neighbor.
pub fn chain_sentence(words: &[String]) -> DepSentence {
    DepSentence {
        words: words.to_vec(),
        gold_head: (0..words.len()).map(|i| i.checked_sub(1)).collect(),
        relation: (0..words.len()).map(|i| if i == 0 { "root" } else { "dep" }.to_string()).collect(),
    }
}

/// Tokens and word indices of `[CLS] pieces.. [SEP]`.
fn tokenize(words: &[String], split_rate: f64, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<Option<usize>>) {
    let mut tokens = vec!["[CLS]".to_string()];
    let mut index = vec![None];
    for (w, word) in words.iter().enumerate() {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let split = chars.len() >= 2 && split_rate > 0.0 && rng.random_bool(split_rate);
        if split {
            let cut = chars[chars.len() / 2].0;
            tokens.push(word[..cut].to_string());
            tokens.push(format!("##{}", &word[cut..]));
            index.extend([Some(w), Some(w)]);
        } else {
            tokens.push(word.clone());
            index.push(Some(w));
        }
    }
    tokens.push("[SEP]".to_string());
    index.push(None);
    (tokens, index)
}

fn noise_rng(seed: u64, segment: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (segment as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn head_rows(
    behavior: HeadBehavior,
    sent: &DepSentence,
    index: &[Option<usize>],
    segment: usize,
) -> Result<Vec<f64>> {
    let t = index.len();
    let mut rows = vec![0.0; t * t];
    let uniform = |rows: &mut [f64], from: usize| rows[from * t..(from + 1) * t].fill(1.0 / t as f64);
    match behavior {
        HeadBehavior::Uniform => rows.fill(1.0 / t as f64),
        HeadBehavior::Offset(k) => {
            if k.unsigned_abs() >= t {
                return Err(Error::InvalidArgument(format!(
                    "offset {k} does not fit segment {segment} of {t} tokens"
                )));
            }
            for from in 0..t {
                let to = from as isize + k;
                let to = if (0..t as isize).contains(&to) { to as usize } else { from };
                rows[from * t + to] = 1.0;
            }
        }
        HeadBehavior::GoldHead { mass } => {
            let first_token = |w: usize| index.iter().position(|x| *x == Some(w)).expect("word has a token");
            for from in 0..t {
                let Some(w) = index[from] else {
                    uniform(&mut rows, from);
                    continue;
                };
                let target = match sent.gold_head[w] {
                    Some(h) => first_token(h),
                    None => 0,
                };
                let rest = (1.0 - mass) / (t - 1) as f64;
                let row = &mut rows[from * t..(from + 1) * t];
                row.fill(rest);
                row[target] = mass;
            }
        }
        HeadBehavior::SepSink => {
            for from in 0..t {
                rows[from * t + t - 1] = 1.0;
            }
        }
        HeadBehavior::Noise { seed } => {
            let mut rng = noise_rng(seed, segment);
            for from in 0..t {
                let row = &mut rows[from * t..(from + 1) * t];
                for v in row.iter_mut() {
                    *v = 2.0 * rng.sample::<f64, _>(StandardNormal);
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.iter_mut().for_each(|v| *v = (*v - max).exp());
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    Ok(rows)
}

/// One segment per sentence, every head realizing its declared behavior.
pub fn generate(spec: &SynthSpec, corpus: &[DepSentence]) -> Result<ExtractSet> {
    spec.validate()?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut segments = Vec::with_capacity(corpus.len());
    for (s, sent) in corpus.iter().enumerate() {
        sent.validate()?;
        if sent.is_empty() {
            return Err(Error::InvalidArgument(format!("sentence {s} has no words")));
        }
        let (tokens, word_index) = tokenize(&sent.words, spec.split_rate, &mut split_rng);
        let t = tokens.len();
        let mut attention = Vec::with_capacity(spec.behaviors.len() * t * t);
        for b in &spec.behaviors {
            attention.extend(head_rows(*b, sent, &word_index, s)?.into_iter().map(|v| v as f32));
        }
        segments.push(Segment {
            id: format!("synth-{s}"),
            special_flags: tokens.iter().map(|tok| TokenKind::classify(tok)).collect(),
            tokens,
            word_index,
            n_layers: spec.n_layers,
            n_heads: spec.n_heads,
            attention,
        });
    }
    ExtractSet::new(spec.n_layers, spec.n_heads, segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn offset_rows_are_one_hot() {
        let corpus = vec![chain_sentence(&words(&["a", "b"]))];
        let spec = SynthSpec::uniform(1, 1).with_head(HeadId::new(0, 0), HeadBehavior::Offset(1));
        let set = generate(&spec, &corpus).unwrap();
        let seg = &set.segments[0];
        assert_eq!(seg.len(), 4);
        for from in 0..4 {
            let row = seg.row(0, 0, from);
            let hot = if from < 3 { from + 1 } else { from };
            for (to, v) in row.iter().enumerate() {
                assert_eq!(*v, if to == hot { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn offset_longer_than_segment_is_rejected() {
        let corpus = vec![chain_sentence(&words(&["a"]))];
        let spec = SynthSpec::uniform(1, 1).with_head(HeadId::new(0, 0), HeadBehavior::Offset(-3));
        assert_eq!(generate(&spec, &corpus).unwrap_err().code(), "invalid-argument");
    }

    #[test]
    fn gold_head_rows_peak_at_gold() {
        let corpus = random_corpus(20, 2, 9, 3).unwrap();
        let spec = SynthSpec::uniform(1, 2)
            .with_head(HeadId::new(0, 1), HeadBehavior::GoldHead { mass: 0.9 })
            .with_split_rate(0.5, 11);
        let set = generate(&spec, &corpus).unwrap();
        for (seg, sent) in set.segments.iter().zip(&corpus) {
            for from in 0..seg.len() {
                let Some(w) = seg.word_index[from] else { continue };
                let row = seg.row(0, 1, from);
                let max = row.iter().copied().fold(0.0f32, f32::max);
                assert!(max >= 0.9 - 1e-6);
                let target = row.iter().position(|&v| v == max).unwrap();
                match sent.gold_head[w] {
                    Some(h) => assert_eq!(seg.word_index[target], Some(h)),
                    None => assert_eq!(target, 0),
                }
            }
        }
    }

    #[test]
    fn bad_mass_is_rejected() {
        let spec = SynthSpec::uniform(1, 1).with_head(HeadId::new(0, 0), HeadBehavior::GoldHead { mass: 0.0 });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let corpus = random_corpus(5, 1, 6, 9).unwrap();
        let spec = SynthSpec::uniform(1, 2)
            .with_head(HeadId::new(0, 0), HeadBehavior::Noise { seed: 4 })
            .with_split_rate(0.3, 2);
        assert_eq!(generate(&spec, &corpus).unwrap(), generate(&spec, &corpus).unwrap());
        assert_eq!(random_corpus(5, 1, 6, 9).unwrap(), corpus);
    }
}
