//! Slow, literal reference implementations for small inputs. Nothing here
//! calls into the modules these results are compared against.

use crate::corpora::{CorefDoc, DepSentence, MentionType};
use crate::error::{Error, Result};
use crate::interchange::{ExtractSet, Segment};

pub const MAX_WORDS: usize = 30;
pub const MAX_HEADS: usize = 4;

/// Correct / total counts per mention type, indexed pronoun, proper, nominal.
pub type TypedCounts = ([usize; 3], [usize; 3]);

fn guard_words(n: usize) -> Result<()> {
    if n > MAX_WORDS {
        return Err(Error::OracleTooLarge(format!("{n} words (limit {MAX_WORDS})")));
    }
    Ok(())
}

fn guard_heads(seg: &Segment) -> Result<()> {
    let h = seg.n_layers * seg.n_heads;
    if h > MAX_HEADS {
        return Err(Error::OracleTooLarge(format!("{h} heads (limit {MAX_HEADS})")));
    }
    Ok(())
}

/// Word-level map: each word row is the average of its tokens' rows, each
/// word column the sum of its tokens' columns. With `keep_special`, one
/// extra column per `[CLS]`/`[SEP]` token follows the words.
pub fn oracle_word_attention(seg: &Segment, layer: usize, head: usize, keep_special: bool) -> Result<Vec<Vec<f64>>> {
    guard_heads(seg)?;
    let t = seg.tokens.len();
    let mut n_words = 0;
    for w in seg.word_index.iter().flatten() {
        n_words = n_words.max(w + 1);
    }
    guard_words(n_words)?;
    let mut specials = Vec::new();
    for tok in 0..t {
        if seg.word_index[tok].is_none() {
            specials.push(tok);
        }
    }
    let at = |from: usize, to: usize| seg.attention[((layer * seg.n_heads + head) * t + from) * t + to] as f64;
    let mut out = Vec::new();
    for w in 0..n_words {
        let rows: Vec<usize> = (0..t).filter(|&x| seg.word_index[x] == Some(w)).collect();
        let mut row = Vec::new();
        for c in 0..n_words {
            let mut total = 0.0;
            for &r in &rows {
                for to in 0..t {
                    if seg.word_index[to] == Some(c) {
                        total += at(r, to);
                    }
                }
            }
            row.push(total / rows.len() as f64);
        }
        if keep_special {
            for &s in &specials {
                let mut total = 0.0;
                for &r in &rows {
                    total += at(r, s);
                }
                row.push(total / rows.len() as f64);
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Highest-scoring word other than `from` among the first `n_words`
/// entries of `row`; the lowest index among equal maxima.
pub fn oracle_argmax(row: &[f64], from: usize, n_words: usize) -> Option<usize> {
    let mut max = None::<f64>;
    for j in 0..n_words {
        if j != from {
            max = Some(match max {
                Some(m) if m >= row[j] => m,
                _ => row[j],
            });
        }
    }
    let max = max?;
    (0..n_words).find(|&j| j != from && row[j] == max)
}

/// Correct / total for one head, one relation (`"All"` for every arc), one
/// direction.
pub fn oracle_dependency(
    set: &ExtractSet,
    corpus: &[DepSentence],
    layer: usize,
    head: usize,
    relation: &str,
    head_to_dep: bool,
) -> Result<(usize, usize)> {
    let (mut correct, mut total) = (0, 0);
    for (seg, sent) in set.segments.iter().zip(corpus) {
        let m = oracle_word_attention(seg, layer, head, false)?;
        let n = sent.words.len();
        for d in 0..n {
            let Some(h) = sent.gold_head[d] else { continue };
            if relation != "All" && sent.relation[d] != relation {
                continue;
            }
            total += 1;
            let hit = if head_to_dep {
                oracle_argmax(&m[h], h, n) == Some(d)
            } else {
                oracle_argmax(&m[d], d, n) == Some(h)
            };
            if hit {
                correct += 1;
            }
        }
    }
    Ok((correct, total))
}

/// Tries every offset in `[-max, max] \ {0}` and keeps the best by count,
/// then smaller magnitude, then the negative sign. Returns
/// `(offset, correct, support)`.
pub fn oracle_offset_search(corpus: &[DepSentence], relation: &str, max_offset: usize) -> Result<(isize, usize, usize)> {
    for s in corpus {
        guard_words(s.words.len())?;
    }
    let m = max_offset as isize;
    let mut results: Vec<(isize, usize)> = Vec::new();
    let mut support = 0;
    for off in -m..=m {
        if off == 0 {
            continue;
        }
        let mut count = 0;
        support = 0;
        for s in corpus {
            for d in 0..s.words.len() {
                let Some(h) = s.gold_head[d] else { continue };
                if relation != "All" && s.relation[d] != relation {
                    continue;
                }
                support += 1;
                if h as isize == d as isize + off {
                    count += 1;
                }
            }
        }
        results.push((off, count));
    }
    if support == 0 {
        return Err(Error::InvalidArgument(format!("no {relation} arcs")));
    }
    results.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.abs().cmp(&b.0.abs())).then(a.0.cmp(&b.0)));
    let (off, count) = *results.first().ok_or_else(|| Error::InvalidArgument("empty offset range".into()))?;
    Ok((off, count, support))
}

fn type_slot(t: MentionType) -> usize {
    match t {
        MentionType::Pronoun => 0,
        MentionType::Proper => 1,
        MentionType::Nominal => 2,
    }
}

/// Earlier mentions (list order) with a different head word.
fn earlier(doc: &CorefDoc, m: usize) -> Vec<usize> {
    let mut v = Vec::new();
    for k in 0..m {
        if doc.mentions[k].head_index != doc.mentions[m].head_index {
            v.push(k);
        }
    }
    v
}

fn has_antecedent(doc: &CorefDoc, m: usize) -> bool {
    earlier(doc, m).into_iter().any(|k| doc.mentions[k].cluster_id == doc.mentions[m].cluster_id)
}

/// Antecedent accuracy of one head on one document: each evaluable mention
/// picks the earlier mention whose head word its own head word attends to
/// most, the earliest one on ties.
pub fn oracle_coref(seg: &Segment, doc: &CorefDoc, layer: usize, head: usize) -> Result<TypedCounts> {
    let m = oracle_word_attention(seg, layer, head, false)?;
    if m.len() != doc.tokens.len() {
        return Err(Error::Alignment(format!("{} words in segment, {} in document", m.len(), doc.tokens.len())));
    }
    let mut counts: TypedCounts = ([0; 3], [0; 3]);
    for i in 0..doc.mentions.len() {
        if !has_antecedent(doc, i) {
            continue;
        }
        let me = &doc.mentions[i];
        let cands = earlier(doc, i);
        let mut best = cands[0];
        for &k in &cands {
            if m[me.head_index][doc.mentions[k].head_index] > m[me.head_index][doc.mentions[best].head_index] {
                best = k;
            }
        }
        let slot = type_slot(me.mention_type);
        counts.1[slot] += 1;
        if doc.mentions[best].cluster_id == me.cluster_id {
            counts.0[slot] += 1;
        }
    }
    Ok(counts)
}

// (number, gender, person), '?' = unknown
const PRONOUN_TABLE: &[(&str, char, char, char)] = &[
    ("i", 's', '?', '1'),
    ("me", 's', '?', '1'),
    ("my", 's', '?', '1'),
    ("mine", 's', '?', '1'),
    ("myself", 's', '?', '1'),
    ("we", 'p', '?', '1'),
    ("us", 'p', '?', '1'),
    ("our", 'p', '?', '1'),
    ("ours", 'p', '?', '1'),
    ("ourselves", 'p', '?', '1'),
    ("you", '?', '?', '2'),
    ("your", '?', '?', '2'),
    ("yours", '?', '?', '2'),
    ("yourself", 's', '?', '2'),
    ("yourselves", 'p', '?', '2'),
    ("he", 's', 'm', '3'),
    ("him", 's', 'm', '3'),
    ("his", 's', 'm', '3'),
    ("himself", 's', 'm', '3'),
    ("she", 's', 'f', '3'),
    ("her", 's', 'f', '3'),
    ("hers", 's', 'f', '3'),
    ("herself", 's', 'f', '3'),
    ("it", 's', 'n', '3'),
    ("its", 's', 'n', '3'),
    ("itself", 's', 'n', '3'),
    ("they", 'p', '?', '3'),
    ("them", 'p', '?', '3'),
    ("their", 'p', '?', '3'),
    ("theirs", 'p', '?', '3'),
    ("themselves", 'p', '?', '3'),
];

fn features(word: &str) -> (char, char, char) {
    let w = word.to_lowercase();
    for &(p, n, g, pe) in PRONOUN_TABLE {
        if p == w {
            return (n, g, pe);
        }
    }
    ('?', '?', '?')
}

fn agree(a: char, b: char) -> bool {
    a == '?' || b == '?' || a == b
}

fn span_text(doc: &CorefDoc, k: usize) -> String {
    let m = &doc.mentions[k];
    let mut parts = Vec::new();
    for i in m.start..=m.end {
        parts.push(doc.tokens[i].to_lowercase());
    }
    parts.join(" ")
}

/// Antecedent picked by the four sieves, with the 1-based sieve number.
pub fn oracle_sieve(doc: &CorefDoc, m: usize) -> Option<(usize, u8)> {
    let mut cands = earlier(doc, m);
    cands.reverse();
    let me = &doc.mentions[m];
    let head = doc.tokens[me.head_index].to_lowercase();
    let text = span_text(doc, m);
    let (n, g, p) = features(&doc.tokens[me.head_index]);
    for sieve in 1..=4u8 {
        for &k in &cands {
            let other = &doc.mentions[k];
            let ok = match sieve {
                1 => span_text(doc, k) == text,
                2 => doc.tokens[other.head_index].to_lowercase() == head,
                3 => {
                    let (n2, g2, p2) = features(&doc.tokens[other.head_index]);
                    agree(n, n2) && agree(g, g2) && agree(p, p2)
                }
                _ => true,
            };
            if ok {
                return Some((k, sieve));
            }
        }
    }
    None
}

/// Nearest, head-match and sieve baselines over the evaluable mentions.
pub fn oracle_baselines(docs: &[CorefDoc]) -> Result<[TypedCounts; 3]> {
    let mut out: [TypedCounts; 3] = [([0; 3], [0; 3]); 3];
    for doc in docs {
        guard_words(doc.tokens.len())?;
        for i in 0..doc.mentions.len() {
            if !has_antecedent(doc, i) {
                continue;
            }
            let me = &doc.mentions[i];
            let cands = earlier(doc, i);
            let nearest = *cands.last().expect("evaluable mention has candidates");
            let head = doc.tokens[me.head_index].to_lowercase();
            let mut head_match = nearest;
            for &k in cands.iter().rev() {
                if doc.tokens[doc.mentions[k].head_index].to_lowercase() == head {
                    head_match = k;
                    break;
                }
            }
            let sieve = oracle_sieve(doc, i).map(|(k, _)| k).expect("evaluable mention has candidates");
            let slot = type_slot(me.mention_type);
            for (b, pick) in [nearest, head_match, sieve].into_iter().enumerate() {
                out[b].1[slot] += 1;
                if doc.mentions[pick].cluster_id == me.cluster_id {
                    out[b].0[slot] += 1;
                }
            }
        }
    }
    Ok(out)
}
