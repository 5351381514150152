//! Dependency treebanks, coreference documents, word embeddings, and the
//! alignment of corpus words to extract segments.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::Segment;
use crate::scalar::Scalar;

/// A dependency-annotated sentence. `gold_head[i] == None` marks a root word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepSentence {
    pub words: Vec<String>,
    pub gold_head: Vec<Option<usize>>,
    pub relation: Vec<String>,
}

impl DepSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.words.len();
        if self.gold_head.len() != n || self.relation.len() != n {
            return Err(Error::Validation("sentence columns have different lengths".into()));
        }
        for (i, h) in self.gold_head.iter().enumerate() {
            if let Some(h) = *h {
                if h >= n {
                    return Err(Error::Validation(format!("word {i}: head {h} outside sentence of {n} words")));
                }
                if h == i {
                    return Err(Error::Validation(format!("word {i} is its own head")));
                }
            }
        }
        if n > 0 && self.gold_head.iter().all(Option::is_some) {
            return Err(Error::Validation("sentence has no root word".into()));
        }
        Ok(())
    }

    /// (dependent, head) pairs, root words excluded.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.gold_head.iter().enumerate().filter_map(|(d, h)| h.map(|h| (d, h)))
    }
}

pub fn load_dep_corpus(path: impl AsRef<Path>) -> Result<Vec<DepSentence>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dep_corpus(BufReader::new(file))
}

/// Reads CoNLL-U or CoNLL-X. Uses the ID, FORM, HEAD and DEPREL columns.
/// Comment lines, multiword-token ranges (`3-4`) and empty nodes (`5.1`)
/// are skipped.
pub fn parse_dep_corpus(reader: impl BufRead) -> Result<Vec<DepSentence>> {
    let mut out = Vec::new();
    let mut rows: Vec<(usize, String, usize, String)> = Vec::new();
    let mut start_line = 1;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            if !rows.is_empty() {
                out.push(finish_sentence(std::mem::take(&mut rows), start_line)?);
            }
            start_line = line_no + 1;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if cols.len() < 8 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected at least 8 columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-integer ID {:?}", cols[0]),
        })?;
        if id != rows.len() + 1 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected ID {}, found {id}", rows.len() + 1),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-integer HEAD {:?}", cols[6]),
        })?;
        rows.push((line_no, cols[1].to_string(), head, cols[7].to_string()));
    }
    if !rows.is_empty() {
        out.push(finish_sentence(rows, start_line)?);
    }
    Ok(out)
}

fn finish_sentence(rows: Vec<(usize, String, usize, String)>, start_line: usize) -> Result<DepSentence> {
    let n = rows.len();
    let mut sent = DepSentence {
        words: Vec::with_capacity(n),
        gold_head: Vec::with_capacity(n),
        relation: Vec::with_capacity(n),
    };
    for (i, (line, form, head, rel)) in rows.into_iter().enumerate() {
        if head > n {
            return Err(Error::Parse {
                line,
                message: format!("HEAD {head} out of range for a {n}-word sentence"),
            });
        }
        if head == i + 1 {
            return Err(Error::Parse { line, message: "word is its own head".into() });
        }
        sent.words.push(form);
        sent.gold_head.push(head.checked_sub(1));
        sent.relation.push(rel);
    }
    if sent.gold_head.iter().all(Option::is_some) {
        return Err(Error::Parse {
            line: start_line,
            message: "sentence has no root (HEAD = 0) word".into(),
        });
    }
    Ok(sent)
}

/// Writes sentences in CoNLL-U layout (unused columns as `_`).
pub fn write_dep_corpus(sentences: &[DepSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for i in 0..s.len() {
            let head = s.gold_head[i].map_or(0, |h| h + 1);
            out.push_str(&format!("{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n", i + 1, s.words[i], head, s.relation[i]));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MentionType {
    Pronoun,
    Proper,
    Nominal,
}

impl MentionType {
    pub const ALL: [MentionType; 3] = [MentionType::Pronoun, MentionType::Proper, MentionType::Nominal];

    pub fn index(self) -> usize {
        match self {
            MentionType::Pronoun => 0,
            MentionType::Proper => 1,
            MentionType::Nominal => 2,
        }
    }
}

/// A mention span `[start, end]` (inclusive) with its head word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub cluster_id: i64,
    pub head_index: usize,
    pub mention_type: MentionType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorefDoc {
    pub doc_id: String,
    pub tokens: Vec<String>,
    /// Sorted by `(start, end)`.
    pub mentions: Vec<Mention>,
}

impl CorefDoc {
    /// Case-folded surface string of a mention.
    pub fn mention_text(&self, m: &Mention) -> String {
        self.tokens[m.start..=m.end].join(" ").to_lowercase()
    }

    pub fn head_word(&self, m: &Mention) -> &str {
        &self.tokens[m.head_index]
    }

    /// Cuts the document to its first `max_words` words. Mentions that do not
    /// fit entirely are dropped; returns how many were dropped.
    pub fn truncate(&mut self, max_words: usize) -> usize {
        if self.tokens.len() <= max_words {
            return 0;
        }
        self.tokens.truncate(max_words);
        let before = self.mentions.len();
        self.mentions.retain(|m| m.end < max_words);
        before - self.mentions.len()
    }
}

#[derive(Deserialize)]
struct RawDoc {
    #[serde(default)]
    doc_id: Option<String>,
    tokens: Vec<String>,
    mentions: Vec<RawMention>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ClusterKey {
    Int(i64),
    Name(String),
}

#[derive(Deserialize)]
struct RawMention {
    start: usize,
    end: usize,
    cluster: ClusterKey,
    head: usize,
    #[serde(rename = "type", default)]
    mention_type: Option<MentionType>,
}

pub fn load_coref_corpus(path: impl AsRef<Path>) -> Result<Vec<CorefDoc>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_coref_corpus(BufReader::new(file))
}

/// Parses newline-delimited JSON documents:
/// `{doc_id, tokens: [...], mentions: [{start, end, cluster, head, type?}]}`.
/// String cluster names are mapped to integers in order of first appearance.
pub fn parse_coref_corpus(reader: impl BufRead) -> Result<Vec<CorefDoc>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDoc = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let n = raw.tokens.len();
        let mut names: HashMap<String, i64> = HashMap::new();
        let mut mentions = Vec::with_capacity(raw.mentions.len());
        for m in raw.mentions {
            if !(m.start <= m.head && m.head <= m.end && m.end < n) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!(
                        "mention start={} head={} end={} out of range for {n} tokens",
                        m.start, m.head, m.end
                    ),
                });
            }
            let cluster_id = match m.cluster {
                ClusterKey::Int(c) => c,
                ClusterKey::Name(s) => {
                    let next = names.len() as i64;
                    *names.entry(s).or_insert(next)
                }
            };
            let mention_type = m.mention_type.unwrap_or_else(|| guess_mention_type(&raw.tokens, m.head));
            mentions.push(Mention {
                start: m.start,
                end: m.end,
                cluster_id,
                head_index: m.head,
                mention_type,
            });
        }
        mentions.sort_by_key(|m| (m.start, m.end));
        docs.push(CorefDoc {
            doc_id: raw.doc_id.unwrap_or_else(|| format!("doc{}", docs.len())),
            tokens: raw.tokens,
            mentions,
        });
    }
    Ok(docs)
}

const PRONOUNS: &[&str] = &[
    "i", "me", "my", "mine", "myself", "we", "us", "our", "ours", "ourselves", "you", "your", "yours", "yourself",
    "yourselves", "he", "him", "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself", "they",
    "them", "their", "theirs", "themselves",
];

pub fn is_pronoun(word: &str) -> bool {
    PRONOUNS.contains(&word.to_lowercase().as_str())
}

/// Pronoun list first, then capitalization away from sentence starts,
/// otherwise nominal.
pub fn guess_mention_type(tokens: &[String], head: usize) -> MentionType {
    let word = &tokens[head];
    if is_pronoun(word) {
        return MentionType::Pronoun;
    }
    let sentence_initial = head == 0 || matches!(tokens[head - 1].as_str(), "." | "!" | "?");
    let capitalized = word.chars().next().is_some_and(char::is_uppercase);
    if capitalized && !sentence_initial {
        MentionType::Proper
    } else {
        MentionType::Nominal
    }
}

/// Word vectors; unknown words look up as the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub dim: usize,
    entries: HashMap<String, Vec<T>>,
    zero: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: HashMap::new(),
            zero: vec![T::zero(); dim],
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<T>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!("vector of length {} in a {}-d table", vector.len(), self.dim)));
        }
        self.entries.insert(word.into(), vector);
        Ok(())
    }

    pub fn lookup(&self, word: &str) -> &[T] {
        self.entries.get(word).map_or(&self.zero, |v| v.as_slice())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<EmbeddingTable<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file))
}

/// One entry per line: a token followed by whitespace-separated reals. The
/// dimension comes from the first line.
pub fn parse_embeddings<T: Scalar>(mut reader: impl Read) -> Result<EmbeddingTable<T>> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    let mut table: Option<EmbeddingTable<T>> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let vector = fields
            .map(|f| {
                f.parse::<f64>().map(T::lit).map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad number {f:?}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.len() != table.dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} components, found {}", table.dim, vector.len()),
            });
        }
        table.entries.insert(word.to_string(), vector);
    }
    Ok(table.unwrap_or_else(|| EmbeddingTable::new(0)))
}

#[derive(Debug, Clone)]
pub struct AlignOptions {
    /// Prefix marking subword continuation pieces.
    pub continuation_marker: String,
    pub case_insensitive: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            continuation_marker: "##".into(),
            case_insensitive: false,
        }
    }
}

/// Checks that the segment's wordpieces spell exactly `words`, and that the
/// segment's `word_index` groups the pieces into those words.
pub fn align(segment: &Segment, words: &[String], opts: &AlignOptions) -> Result<()> {
    let norm = |s: &str| if opts.case_insensitive { s.to_lowercase() } else { s.to_string() };

    let mut pieces: Vec<(usize, String)> = Vec::new();
    let mut prev_word = None;
    for t in 0..segment.len() {
        let Some(w) = segment.word_index[t] else { continue };
        let tok = &segment.tokens[t];
        let piece = if prev_word == Some(w) {
            tok.strip_prefix(opts.continuation_marker.as_str()).unwrap_or(tok)
        } else {
            tok.as_str()
        };
        prev_word = Some(w);
        pieces.push((t, norm(piece)));
    }

    let spelled: Vec<char> = pieces.iter().flat_map(|(_, p)| p.chars()).collect();
    let joined: Vec<char> = words.iter().flat_map(|w| norm(w).chars().collect::<Vec<_>>()).collect();
    if let Some(pos) = spelled.iter().zip(&joined).position(|(a, b)| a != b) {
        return Err(Error::Alignment(format!(
            "segment {:?}: wordpieces diverge from corpus text at character {pos}",
            segment.id
        )));
    }
    if spelled.len() != joined.len() {
        return Err(Error::Alignment(format!(
            "segment {:?}: wordpieces spell {} characters, corpus words {}",
            segment.id,
            spelled.len(),
            joined.len()
        )));
    }

    let mut rebuilt = vec![String::new(); words.len()];
    for (t, p) in &pieces {
        let w = segment.word_index[*t].expect("non-special");
        if w >= words.len() {
            return Err(Error::Alignment(format!(
                "segment {:?}: token {t} maps to word {w}, corpus has {} words",
                segment.id,
                words.len()
            )));
        }
        rebuilt[w].push_str(p);
    }
    for (i, (got, want)) in rebuilt.iter().zip(words).enumerate() {
        if *got != norm(want) {
            return Err(Error::Alignment(format!(
                "segment {:?}: word {i} is {want:?} in the corpus but {got:?} in the segment",
                segment.id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interchange::TokenKind;

    #[test]
    fn conll_columns() {
        let text = "1 the _ _ _ _ 2 det\n2 cat _ _ _ _ 0 root\n";
        let c = parse_dep_corpus(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].words, vec!["the", "cat"]);
        assert_eq!(c[0].gold_head, vec![Some(1), None]);
        assert_eq!(c[0].relation, vec!["det", "root"]);
    }

    #[test]
    fn conll_errors() {
        let err = parse_dep_corpus("1 the _ _ _ _ 5 det\n2 cat _ _ _ _ 0 root\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_dep_corpus("1 the _ _ _ _ x det\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_dep_corpus("1\tthe\t_\t_\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(parse_dep_corpus("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn conllu_skips_ranges_and_comments() {
        let text = "# sent_id = 1\n1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n2\tn't\t_\t_\t_\t_\t1\tneg\t_\t_\n\n1\tok\t_\t_\t_\t_\t0\troot\t_\t_\n";
        let c = parse_dep_corpus(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].words, vec!["do", "n't"]);
        let back = parse_dep_corpus(write_dep_corpus(&c).as_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn coref_doc() {
        let line = r#"{"doc_id":"d","tokens":["John","saw","him"],"mentions":[{"start":2,"end":2,"cluster":"c1","head":2,"type":"PRONOUN"},{"start":0,"end":0,"cluster":"c1","head":0,"type":"PROPER"}]}"#;
        let docs = parse_coref_corpus(line.as_bytes()).unwrap();
        let d = &docs[0];
        assert_eq!(d.mentions.len(), 2);
        assert_eq!(d.mentions[0].start, 0);
        assert_eq!(d.mentions[0].cluster_id, d.mentions[1].cluster_id);
        assert_eq!(d.mentions[1].mention_type, MentionType::Pronoun);
    }

    #[test]
    fn coref_span_out_of_range() {
        let line = r#"{"tokens":["a","b"],"mentions":[{"start":0,"end":2,"cluster":1,"head":0}]}"#;
        assert!(matches!(parse_coref_corpus(line.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn mention_type_heuristic() {
        let toks: Vec<String> = ["Then", "he", "met", "Mary", ".", "Dogs", "bark"].iter().map(|s| s.to_string()).collect();
        assert_eq!(guess_mention_type(&toks, 1), MentionType::Pronoun);
        assert_eq!(guess_mention_type(&toks, 3), MentionType::Proper);
        assert_eq!(guess_mention_type(&toks, 0), MentionType::Nominal);
        assert_eq!(guess_mention_type(&toks, 5), MentionType::Nominal);
        assert_eq!(guess_mention_type(&toks, 6), MentionType::Nominal);
    }

    #[test]
    fn truncation_drops_crossing_mentions() {
        let line = r#"{"tokens":["a","b","c","d"],"mentions":[{"start":0,"end":1,"cluster":1,"head":0},{"start":1,"end":2,"cluster":1,"head":2},{"start":3,"end":3,"cluster":1,"head":3}]}"#;
        let mut d = parse_coref_corpus(line.as_bytes()).unwrap().remove(0);
        assert_eq!(d.truncate(2), 2);
        assert_eq!(d.mentions.len(), 1);
        assert_eq!(d.tokens.len(), 2);
    }

    #[test]
    fn embeddings() {
        let t: EmbeddingTable<f64> = parse_embeddings("the 0.1 0.2\n".as_bytes()).unwrap();
        assert_eq!(t.dim, 2);
        assert_eq!(t.lookup("the"), &[0.1, 0.2]);
        assert_eq!(t.lookup("zebra"), &[0.0, 0.0]);
        let err = parse_embeddings::<f64>("a 1 2\nb 1 2 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    fn seg(tokens: &[&str], word_index: Vec<Option<usize>>) -> Segment {
        Segment {
            id: "s".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            special_flags: tokens.iter().map(|t| TokenKind::classify(t)).collect(),
            word_index,
            n_layers: 0,
            n_heads: 0,
            attention: vec![],
        }
    }

    #[test]
    fn align_cases() {
        let opts = AlignOptions::default();
        let s = seg(&["[CLS]", "play", "##ing", "[SEP]"], vec![None, Some(0), Some(0), None]);
        align(&s, &["playing".to_string()], &opts).unwrap();
        let err = align(&s, &["played".to_string()], &opts).unwrap_err();
        assert_eq!(err.code(), "alignment");
        let empty = seg(&["[CLS]", "[SEP]"], vec![None, None]);
        align(&empty, &[], &opts).unwrap();
        // right characters, wrong grouping
        let s = seg(&["[CLS]", "a", "b", "[SEP]"], vec![None, Some(0), Some(1), None]);
        assert!(align(&s, &["ab".to_string()], &opts).is_err());
        assert!(align(&s, &["a".to_string(), "b".to_string()], &opts).is_ok());
    }
}
