//! Individual heads as untrained classifiers: each word "predicts" the other
//! word it attends to most.
//!
//! Dependency evaluation works per relation in both directions and is
//! compared with a fixed-offset baseline. Coreference evaluation lives in
//! [`coref`].

pub mod coref;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::corpora::{align, AlignOptions, DepSentence};
use crate::error::{Error, Result};
use crate::interchange::{ExtractSet, HeadId, Segment};
use crate::scalar::{argmax, Scalar};
use crate::wordmap::{to_word_attention, WordAttentionMatrix};

pub use coref::{coref_baselines, eval_coref, CandidateMode, CorefBaselines, CorefEval, CorefOptions, TypedAccuracy};

/// Label used for the all-relations score.
pub const ALL: &str = "All";

/// Most attended other word. Specials are not candidates; ties go to the
/// lowest word index.
pub fn predict_most_attended<T: Scalar>(matrix: &WordAttentionMatrix<T>, from: usize) -> Result<usize> {
    let n = matrix.n_words();
    if from >= n {
        return Err(Error::Index(format!("word {from} outside {n}-word matrix")));
    }
    if n < 2 {
        return Err(Error::NoCandidate("single-word sentence".into()));
    }
    let row = matrix.word_row(from);
    let mut best = if from == 0 { 1 } else { 0 };
    for (i, &v) in row.iter().enumerate() {
        if i != from && v > row[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// The dependent attends to its head.
    DepToHead,
    /// The head attends to its dependent.
    HeadToDep,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::DepToHead => "dep->head",
            Direction::HeadToDep => "head->dep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationScore {
    pub relation: String,
    pub head: HeadId,
    pub direction: Direction,
    pub correct: usize,
    pub support: usize,
}

impl RelationScore {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.support as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependencyEval {
    pub head: HeadId,
    pub direction: Direction,
    /// All non-root arcs.
    pub overall: RelationScore,
    /// Sorted by relation label.
    pub per_relation: Vec<RelationScore>,
    /// `poss` accuracy when a possessive clitic standing in for the
    /// dependent also counts as correct. Only computed on request.
    pub clitic_adjusted: Option<RelationScore>,
}

impl DependencyEval {
    pub fn relation(&self, label: &str) -> Option<&RelationScore> {
        if label == ALL {
            return Some(&self.overall);
        }
        self.per_relation.iter().find(|r| r.relation == label)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DepEvalOptions {
    pub align: AlignOptions,
    pub possessive_clitics: bool,
}

/// Pairs segments with sentences by position and checks their alignment.
pub fn pair_sentences<'a>(
    set: &'a ExtractSet,
    corpus: &'a [DepSentence],
    opts: &AlignOptions,
) -> Result<Vec<(&'a Segment, &'a DepSentence)>> {
    if set.segments.len() != corpus.len() {
        return Err(Error::Alignment(format!(
            "{} segments but {} corpus sentences",
            set.segments.len(),
            corpus.len()
        )));
    }
    set.segments
        .iter()
        .zip(corpus)
        .map(|(seg, sent)| align(seg, &sent.words, opts).map(|_| (seg, sent)))
        .collect()
}

fn predictions(seg: &Segment, head: HeadId) -> Result<Vec<Option<usize>>> {
    let m: WordAttentionMatrix<f64> = to_word_attention(seg, head, false)?;
    (0..m.n_words())
        .map(|w| match predict_most_attended(&m, w) {
            Ok(p) => Ok(Some(p)),
            Err(Error::NoCandidate(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

fn clitic_of(sent: &DepSentence, d: usize) -> Option<usize> {
    let c = d + 1;
    (c < sent.len() && matches!(sent.words[c].to_lowercase().as_str(), "'s" | "'") && sent.gold_head[c] == Some(d))
        .then_some(c)
}

#[derive(Default)]
struct Tally {
    all: (usize, usize),
    rel: BTreeMap<String, (usize, usize)>,
    clitic: (usize, usize),
}

fn tally(
    pairs: &[(&Segment, &DepSentence)],
    preds: &[Vec<Option<usize>>],
    direction: Direction,
    clitics: bool,
) -> Tally {
    let mut t = Tally::default();
    for ((_, sent), pred) in pairs.iter().zip(preds) {
        for (d, h) in sent.arcs() {
            let hit = match direction {
                Direction::DepToHead => pred[d] == Some(h),
                Direction::HeadToDep => pred[h] == Some(d),
            };
            let hit = hit as usize;
            t.all.0 += hit;
            t.all.1 += 1;
            let e = t.rel.entry(sent.relation[d].clone()).or_default();
            e.0 += hit;
            e.1 += 1;
            if clitics && sent.relation[d] == "poss" {
                let alt = clitic_of(sent, d).is_some_and(|c| match direction {
                    Direction::DepToHead => pred[c] == Some(h),
                    Direction::HeadToDep => pred[h] == Some(c),
                });
                t.clitic.0 += (hit == 1 || alt) as usize;
                t.clitic.1 += 1;
            }
        }
    }
    t
}

fn build_eval(head: HeadId, direction: Direction, t: Tally, clitics: bool) -> Result<DependencyEval> {
    if t.all.1 == 0 {
        return Err(Error::Empty("corpus has no non-root words".into()));
    }
    let score = |relation: &str, (correct, support): (usize, usize)| RelationScore {
        relation: relation.to_string(),
        head,
        direction,
        correct,
        support,
    };
    Ok(DependencyEval {
        head,
        direction,
        overall: score(ALL, t.all),
        per_relation: t.rel.iter().map(|(k, v)| score(k, *v)).collect(),
        clitic_adjusted: (clitics && t.clitic.1 > 0).then(|| score("poss", t.clitic)),
    })
}

pub fn eval_dependency(
    set: &ExtractSet,
    corpus: &[DepSentence],
    head: HeadId,
    direction: Direction,
    opts: &DepEvalOptions,
) -> Result<DependencyEval> {
    set.check_head(head)?;
    let pairs = pair_sentences(set, corpus, &opts.align)?;
    let preds = pairs.iter().map(|(seg, _)| predictions(seg, head)).collect::<Result<Vec<_>>>()?;
    build_eval(head, direction, tally(&pairs, &preds, direction, opts.possessive_clitics), opts.possessive_clitics)
}

/// Both directions for every head, in layer-major head order.
pub fn eval_all_heads(set: &ExtractSet, corpus: &[DepSentence], opts: &DepEvalOptions) -> Result<Vec<DependencyEval>> {
    let pairs = pair_sentences(set, corpus, &opts.align)?;
    let heads: Vec<HeadId> = set.heads().collect();
    let per_head: Vec<Result<[DependencyEval; 2]>> = heads
        .into_par_iter()
        .map(|head| {
            let preds = pairs.iter().map(|(seg, _)| predictions(seg, head)).collect::<Result<Vec<_>>>()?;
            let c = opts.possessive_clitics;
            Ok([
                build_eval(head, Direction::DepToHead, tally(&pairs, &preds, Direction::DepToHead, c), c)?,
                build_eval(head, Direction::HeadToDep, tally(&pairs, &preds, Direction::HeadToDep, c), c)?,
            ])
        })
        .collect();
    let mut out = Vec::with_capacity(per_head.len() * 2);
    for r in per_head {
        out.extend(r?);
    }
    Ok(out)
}

/// Best (head, direction) for a relation. Ties keep the earlier evaluation.
pub fn best_for_relation<'a>(evals: &'a [DependencyEval], relation: &str) -> Option<&'a RelationScore> {
    let mut best: Option<&RelationScore> = None;
    for s in evals.iter().filter_map(|e| e.relation(relation)) {
        if best.is_none_or(|b| s.accuracy() > b.accuracy()) {
            best = Some(s);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetBaseline {
    pub relation: String,
    pub best_offset: isize,
    pub correct: usize,
    pub support: usize,
}

impl OffsetBaseline {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.support as f64
    }
}

/// Offsets in preference order: -1, +1, -2, +2, ...
pub fn offset_scan_order(max_offset: usize) -> impl Iterator<Item = isize> {
    (1..=max_offset as isize).flat_map(|k| [-k, k])
}

/// Best fixed offset `head = dependent + offset` for one relation (`"All"`
/// for every arc). Ties prefer smaller `|offset|`, then the negative one.
pub fn offset_baseline(corpus: &[DepSentence], relation: &str, max_offset: usize) -> Result<OffsetBaseline> {
    if max_offset == 0 {
        return Err(Error::InvalidArgument("offset range must be at least 1".into()));
    }
    let mut hits = vec![0usize; 2 * max_offset + 1];
    let mut support = 0usize;
    for sent in corpus {
        for (d, h) in sent.arcs() {
            if relation != ALL && sent.relation[d] != relation {
                continue;
            }
            support += 1;
            let off = h as isize - d as isize;
            if off.unsigned_abs() <= max_offset {
                hits[(off + max_offset as isize) as usize] += 1;
            }
        }
    }
    if support == 0 {
        return Err(Error::InvalidArgument(format!("relation {relation:?} does not occur in the corpus")));
    }
    let mut best: Option<(isize, usize)> = None;
    for off in offset_scan_order(max_offset) {
        let c = hits[(off + max_offset as isize) as usize];
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((off, c));
        }
    }
    let (best_offset, correct) = best.expect("nonempty range");
    Ok(OffsetBaseline {
        relation: relation.to_string(),
        best_offset,
        correct,
        support,
    })
}

/// Relation labels ordered by descending frequency, then name.
pub fn relations_by_frequency(corpus: &[DepSentence]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in corpus {
        for (d, _) in s.arcs() {
            *counts.entry(s.relation[d].as_str()).or_default() += 1;
        }
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// One row of the per-relation summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationRow {
    pub best: RelationScore,
    pub baseline: OffsetBaseline,
    pub clitic_adjusted: Option<RelationScore>,
}

pub fn relation_table(
    evals: &[DependencyEval],
    corpus: &[DepSentence],
    max_offset: usize,
) -> Result<Vec<RelationRow>> {
    let mut labels = vec![ALL.to_string()];
    labels.extend(relations_by_frequency(corpus).into_iter().map(|(l, _)| l));
    labels
        .iter()
        .filter_map(|label| {
            let best = best_for_relation(evals, label)?.clone();
            let clitic_adjusted = (label == "poss")
                .then(|| {
                    evals
                        .iter()
                        .find(|e| e.head == best.head && e.direction == best.direction)
                        .and_then(|e| e.clitic_adjusted.clone())
                })
                .flatten();
            Some(offset_baseline(corpus, label, max_offset).map(|baseline| RelationRow {
                best,
                baseline,
                clitic_adjusted,
            }))
        })
        .collect()
}

pub fn write_relation_table(rows: &[RelationRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "relation",
        "best_head",
        "direction",
        "accuracy",
        "support",
        "baseline_accuracy",
        "best_offset",
        "clitic_accuracy",
    ])
    .map_err(Error::csv)?;
    for r in rows {
        w.write_record([
            r.best.relation.clone(),
            r.best.head.to_string(),
            r.best.direction.name().to_string(),
            format!("{:.3}", r.best.accuracy()),
            r.best.support.to_string(),
            format!("{:.3}", r.baseline.accuracy()),
            r.baseline.best_offset.to_string(),
            r.clitic_adjusted.as_ref().map_or(String::new(), |c| format!("{:.3}", c.accuracy())),
        ])
        .map_err(Error::csv)?;
    }
    w.flush().map_err(Error::csv)
}

/// Every (head, direction, relation) score.
pub fn write_head_scores(evals: &[DependencyEval], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "head", "direction", "relation", "accuracy", "correct", "support"])
        .map_err(Error::csv)?;
    for e in evals {
        for s in std::iter::once(&e.overall).chain(&e.per_relation) {
            w.write_record([
                (e.head.layer + 1).to_string(),
                (e.head.head + 1).to_string(),
                e.direction.name().to_string(),
                s.relation.clone(),
                format!("{:.3}", s.accuracy()),
                s.correct.to_string(),
                s.support.to_string(),
            ])
            .map_err(Error::csv)?;
        }
    }
    w.flush().map_err(Error::csv)
}

/// Argmax over an arbitrary candidate list; ties go to the first candidate.
pub(crate) fn argmax_over<T: Scalar>(scores: impl Iterator<Item = T>) -> Option<usize> {
    let v: Vec<T> = scores.collect();
    argmax(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interchange::TokenKind;

    fn matrix(rows: Vec<Vec<f32>>) -> WordAttentionMatrix<f64> {
        let n = rows.len();
        let seg = Segment {
            id: "m".into(),
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            special_flags: vec![TokenKind::Other; n],
            word_index: (0..n).map(Some).collect(),
            n_layers: 1,
            n_heads: 1,
            attention: rows.concat(),
        };
        to_word_attention(&seg, HeadId::new(0, 0), false).unwrap()
    }

    #[test]
    fn argmax_skips_self() {
        let m = matrix(vec![vec![0.1, 0.6, 0.3], vec![0.5, 0.2, 0.3], vec![0.2, 0.2, 0.6]]);
        assert_eq!(predict_most_attended(&m, 0).unwrap(), 1);
        assert_eq!(predict_most_attended(&m, 2).unwrap(), 0);
    }

    #[test]
    fn argmax_tie_lowest() {
        let m = matrix(vec![vec![0.1, 0.45, 0.45], vec![0.5, 0.2, 0.3], vec![0.5, 0.5, 0.0]]);
        assert_eq!(predict_most_attended(&m, 0).unwrap(), 1);
        assert_eq!(predict_most_attended(&m, 2).unwrap(), 0);
    }

    #[test]
    fn single_word_has_no_candidate() {
        let m = matrix(vec![vec![1.0]]);
        assert_eq!(predict_most_attended(&m, 0).unwrap_err().code(), "no-candidate");
    }

    fn chain(n: usize, offset: isize) -> DepSentence {
        // every word's head is at `offset`, with the boundary word as root
        let gold_head = (0..n as isize)
            .map(|i| {
                let h = i + offset;
                (0..n as isize).contains(&h).then_some(h as usize)
            })
            .collect();
        DepSentence {
            words: (0..n).map(|i| format!("w{i}")).collect(),
            gold_head,
            relation: vec!["dep".into(); n],
        }
    }

    #[test]
    fn previous_word_corpus_offset() {
        let corpus = vec![chain(5, -1), chain(3, -1)];
        let b = offset_baseline(&corpus, ALL, 10).unwrap();
        assert_eq!(b.best_offset, -1);
        assert_eq!(b.correct, b.support);
        assert!(offset_baseline(&corpus, "nsubj", 10).is_err());
    }

    #[test]
    fn offset_ties_prefer_small_negative() {
        // one arc at +2 and one at -2, nothing at +-1
        let s = DepSentence {
            words: vec!["a".into(), "b".into(), "c".into()],
            gold_head: vec![Some(2), None, Some(0)],
            relation: vec!["x".into(); 3],
        };
        let b = offset_baseline(&[s], "x", 3).unwrap();
        assert_eq!((b.best_offset, b.correct, b.support), (-2, 1, 2));
        // +1 beats -2 on |offset| only when counts tie
        let s = DepSentence {
            words: vec!["a".into(), "b".into(), "c".into()],
            gold_head: vec![Some(1), None, Some(0)],
            relation: vec!["x".into(); 3],
        };
        let b = offset_baseline(&[s], "x", 3).unwrap();
        assert_eq!(b.best_offset, 1);
    }

    #[test]
    fn clitic_detection() {
        let s = DepSentence {
            words: vec!["John".into(), "'s".into(), "dog".into()],
            gold_head: vec![Some(2), Some(0), None],
            relation: vec!["poss".into(), "possessive".into(), "root".into()],
        };
        assert_eq!(clitic_of(&s, 0), Some(1));
        assert_eq!(clitic_of(&s, 1), None);
    }
}
