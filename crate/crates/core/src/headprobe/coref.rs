//! Antecedent selection: does the head word of a coreferent mention attend
//! most to the head word of one of its antecedents?
//!
//! For every mention, the candidates are the earlier mentions (in
//! `(start, end)` order) whose head word is a different word. A mention is
//! evaluated when at least one candidate is in its cluster. The attention
//! head and all baselines share this denominator.

use std::io::Write;

use rayon::prelude::*;

use crate::corpora::{align, AlignOptions, CorefDoc, MentionType};
use crate::error::{Error, Result};
use crate::interchange::{ExtractSet, HeadId};
use crate::wordmap::{to_word_attention, WordAttentionMatrix};

use super::{argmax_over, predict_most_attended};

/// Counts per mention type (pronoun, proper, nominal).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TypedAccuracy {
    pub correct: [usize; 3],
    pub total: [usize; 3],
}

impl TypedAccuracy {
    pub fn record(&mut self, t: MentionType, hit: bool) {
        self.correct[t.index()] += hit as usize;
        self.total[t.index()] += 1;
    }

    pub fn support(&self) -> usize {
        self.total.iter().sum()
    }

    pub fn overall(&self) -> f64 {
        ratio(self.correct.iter().sum(), self.support())
    }

    pub fn by_type(&self, t: MentionType) -> f64 {
        ratio(self.correct[t.index()], self.total[t.index()])
    }

    fn merge(&mut self, other: &TypedAccuracy) {
        for i in 0..3 {
            self.correct[i] += other.correct[i];
            self.total[i] += other.total[i];
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Which words the attention argmax ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateMode {
    /// Head words of earlier mentions.
    #[default]
    MentionHeads,
    /// Every other word; correct when it is an antecedent's head word.
    AllWords,
}

#[derive(Debug, Clone, Default)]
pub struct CorefOptions {
    pub candidates: CandidateMode,
    pub align: AlignOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorefEval {
    pub head: HeadId,
    pub accuracy: TypedAccuracy,
    /// Documents without any evaluable mention.
    pub skipped_docs: usize,
    /// Mentions dropped because the segment covers only a prefix of the document.
    pub dropped_mentions: usize,
}

/// Indices of earlier mentions with a different head word, nearest first.
pub(crate) fn candidates(doc: &CorefDoc, m: usize) -> Vec<usize> {
    let head = doc.mentions[m].head_index;
    (0..m).rev().filter(|&k| doc.mentions[k].head_index != head).collect()
}

fn evaluable(doc: &CorefDoc, m: usize, cands: &[usize]) -> bool {
    cands.iter().any(|&k| doc.mentions[k].cluster_id == doc.mentions[m].cluster_id)
}

/// Cuts documents to the words their segments cover and checks alignment.
fn prepare_docs(set: &ExtractSet, docs: &[CorefDoc], opts: &AlignOptions) -> Result<(Vec<CorefDoc>, usize)> {
    if set.segments.len() != docs.len() {
        return Err(Error::Alignment(format!(
            "{} segments but {} coreference documents",
            set.segments.len(),
            docs.len()
        )));
    }
    let mut dropped = 0;
    let mut out = Vec::with_capacity(docs.len());
    for (seg, doc) in set.segments.iter().zip(docs) {
        let mut doc = doc.clone();
        dropped += doc.truncate(seg.n_words());
        align(seg, &doc.tokens, opts)?;
        out.push(doc);
    }
    Ok((out, dropped))
}

fn score_doc(doc: &CorefDoc, matrix: &WordAttentionMatrix<f64>, mode: CandidateMode) -> Result<TypedAccuracy> {
    let mut acc = TypedAccuracy::default();
    for m in 0..doc.mentions.len() {
        let cands = candidates(doc, m);
        if !evaluable(doc, m, &cands) {
            continue;
        }
        let mention = &doc.mentions[m];
        let hit = match mode {
            CandidateMode::MentionHeads => {
                // nearest-first order reversed so ties resolve to the earliest mention
                let ordered: Vec<usize> = cands.iter().rev().copied().collect();
                let best = argmax_over(ordered.iter().map(|&k| matrix.get(mention.head_index, doc.mentions[k].head_index)))
                    .expect("nonempty candidates");
                doc.mentions[ordered[best]].cluster_id == mention.cluster_id
            }
            CandidateMode::AllWords => {
                let word = predict_most_attended(matrix, mention.head_index)?;
                cands
                    .iter()
                    .any(|&k| doc.mentions[k].cluster_id == mention.cluster_id && doc.mentions[k].head_index == word)
            }
        };
        acc.record(mention.mention_type, hit);
    }
    Ok(acc)
}

pub fn eval_coref(set: &ExtractSet, docs: &[CorefDoc], head: HeadId, opts: &CorefOptions) -> Result<CorefEval> {
    set.check_head(head)?;
    let (docs, dropped_mentions) = prepare_docs(set, docs, &opts.align)?;
    eval_prepared(set, &docs, head, opts.candidates, dropped_mentions)
}

fn eval_prepared(
    set: &ExtractSet,
    docs: &[CorefDoc],
    head: HeadId,
    mode: CandidateMode,
    dropped_mentions: usize,
) -> Result<CorefEval> {
    let mut accuracy = TypedAccuracy::default();
    let mut skipped_docs = 0;
    for (seg, doc) in set.segments.iter().zip(docs) {
        let matrix = to_word_attention(seg, head, false)?;
        let a = score_doc(doc, &matrix, mode)?;
        if a.support() == 0 {
            skipped_docs += 1;
        }
        accuracy.merge(&a);
    }
    Ok(CorefEval {
        head,
        accuracy,
        skipped_docs,
        dropped_mentions,
    })
}

/// Every head, layer-major.
pub fn eval_coref_all_heads(set: &ExtractSet, docs: &[CorefDoc], opts: &CorefOptions) -> Result<Vec<CorefEval>> {
    let (docs, dropped) = prepare_docs(set, docs, &opts.align)?;
    let heads: Vec<HeadId> = set.heads().collect();
    heads
        .into_par_iter()
        .map(|h| eval_prepared(set, &docs, h, opts.candidates, dropped))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Number {
    Singular,
    Plural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Masculine,
    Feminine,
    Neuter,
}

/// Grammatical attributes of a head word; `None` means unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Attributes {
    pub number: Option<Number>,
    pub gender: Option<Gender>,
    pub person: Option<u8>,
}

impl Attributes {
    pub fn compatible(&self, other: &Attributes) -> bool {
        fn ok<X: PartialEq>(a: Option<X>, b: Option<X>) -> bool {
            match (a, b) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
        }
        ok(self.number, other.number) && ok(self.gender, other.gender) && ok(self.person, other.person)
    }
}

/// Attributes of English personal and possessive pronouns; other words are
/// unknown on every attribute.
pub fn pronoun_attributes(word: &str) -> Attributes {
    use Gender::*;
    use Number::*;
    let a = |number, gender, person| Attributes { number, gender, person };
    match word.to_lowercase().as_str() {
        "i" | "me" | "my" | "mine" | "myself" => a(Some(Singular), None, Some(1)),
        "we" | "us" | "our" | "ours" | "ourselves" => a(Some(Plural), None, Some(1)),
        "you" | "your" | "yours" => a(None, None, Some(2)),
        "yourself" => a(Some(Singular), None, Some(2)),
        "yourselves" => a(Some(Plural), None, Some(2)),
        "he" | "him" | "his" | "himself" => a(Some(Singular), Some(Masculine), Some(3)),
        "she" | "her" | "hers" | "herself" => a(Some(Singular), Some(Feminine), Some(3)),
        "it" | "its" | "itself" => a(Some(Singular), Some(Neuter), Some(3)),
        "they" | "them" | "their" | "theirs" | "themselves" => a(Some(Plural), None, Some(3)),
        _ => Attributes::default(),
    }
}

/// Nearest earlier mention.
pub fn nearest_antecedent(doc: &CorefDoc, m: usize) -> Option<usize> {
    candidates(doc, m).first().copied()
}

/// Nearest earlier mention with the same case-folded head word, falling
/// back to the nearest mention.
pub fn head_match_antecedent(doc: &CorefDoc, m: usize) -> Option<usize> {
    let cands = candidates(doc, m);
    let head = doc.head_word(&doc.mentions[m]).to_lowercase();
    cands
        .iter()
        .copied()
        .find(|&k| doc.head_word(&doc.mentions[k]).to_lowercase() == head)
        .or_else(|| cands.first().copied())
}

/// Four sieves in order: full string match, head word match, compatible
/// number/gender/person, anything. The nearest mention passing the first
/// satisfiable sieve wins.
pub fn sieve_antecedent(doc: &CorefDoc, m: usize) -> Option<usize> {
    sieve_trace(doc, m).map(|(k, _)| k)
}

/// Like [`sieve_antecedent`], also returning the 1-based sieve that fired.
pub fn sieve_trace(doc: &CorefDoc, m: usize) -> Option<(usize, u8)> {
    let cands = candidates(doc, m);
    let cur = &doc.mentions[m];
    let text = doc.mention_text(cur);
    let head = doc.head_word(cur).to_lowercase();
    let attrs = pronoun_attributes(doc.head_word(cur));
    let sieves: [&dyn Fn(usize) -> bool; 4] = [
        &|k| doc.mention_text(&doc.mentions[k]) == text,
        &|k| doc.head_word(&doc.mentions[k]).to_lowercase() == head,
        &|k| pronoun_attributes(doc.head_word(&doc.mentions[k])).compatible(&attrs),
        &|_| true,
    ];
    for (i, sieve) in sieves.iter().enumerate() {
        if let Some(&k) = cands.iter().find(|&&k| sieve(k)) {
            return Some((k, i as u8 + 1));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorefBaselines {
    pub nearest: TypedAccuracy,
    pub head_match: TypedAccuracy,
    pub rule_sieve: TypedAccuracy,
}

pub fn coref_baselines(docs: &[CorefDoc]) -> CorefBaselines {
    let mut out = CorefBaselines {
        nearest: TypedAccuracy::default(),
        head_match: TypedAccuracy::default(),
        rule_sieve: TypedAccuracy::default(),
    };
    for doc in docs {
        for m in 0..doc.mentions.len() {
            if !evaluable(doc, m, &candidates(doc, m)) {
                continue;
            }
            let mention = &doc.mentions[m];
            let hit = |k: Option<usize>| k.is_some_and(|k| doc.mentions[k].cluster_id == mention.cluster_id);
            out.nearest.record(mention.mention_type, hit(nearest_antecedent(doc, m)));
            out.head_match.record(mention.mention_type, hit(head_match_antecedent(doc, m)));
            out.rule_sieve.record(mention.mention_type, hit(sieve_antecedent(doc, m)));
        }
    }
    out
}

/// Model x mention-type accuracy table (percentages).
pub fn write_coref_table(rows: &[(String, TypedAccuracy)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "all", "pronoun", "proper", "nominal", "support"])
        .map_err(Error::csv)?;
    let pct = |v: f64| if v.is_nan() { String::new() } else { format!("{:.1}", 100.0 * v) };
    for (name, acc) in rows {
        w.write_record([
            name.clone(),
            pct(acc.overall()),
            pct(acc.by_type(MentionType::Pronoun)),
            pct(acc.by_type(MentionType::Proper)),
            pct(acc.by_type(MentionType::Nominal)),
            acc.support().to_string(),
        ])
        .map_err(Error::csv)?;
    }
    w.flush().map_err(Error::csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpora::parse_coref_corpus;

    #[test]
    fn pronoun_compatibility() {
        let he = pronoun_attributes("He");
        assert!(!he.compatible(&pronoun_attributes("she")));
        assert!(!he.compatible(&pronoun_attributes("they")));
        assert!(he.compatible(&pronoun_attributes("John")));
        assert!(!pronoun_attributes("I").compatible(&pronoun_attributes("him")));
    }

    #[test]
    fn nearest_is_perfect_when_antecedent_adjacent() {
        let line = r#"{"tokens":["a","b","c","d"],"mentions":[{"start":0,"end":0,"cluster":1,"head":0},{"start":1,"end":1,"cluster":1,"head":1},{"start":2,"end":2,"cluster":2,"head":2},{"start":3,"end":3,"cluster":2,"head":3}]}"#;
        let docs = parse_coref_corpus(line.as_bytes()).unwrap();
        let b = coref_baselines(&docs);
        assert_eq!(b.nearest.support(), 2);
        assert_eq!(b.nearest.overall(), 1.0);
    }
}
