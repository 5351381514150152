//! Attention-based probing classifiers for dependency parsing.
//!
//! Each classifier scores every other word `i` as the head of dependent `j`
//! and normalizes with a softmax over the candidates. Prediction is greedy
//! per word (no tree decoding). Two attention probes and a distance +
//! embedding baseline share the same [`ArcScorer`] interface and trainer.

mod checkpoint;
mod models;
mod train;

pub use checkpoint::{decode_probe, encode_probe, load_probe, save_probe, AnyProbe, ProbeKind};
pub use models::{distance_features, AttnOnlyProbe, AttnWordsProbe, DistanceWordsProbe, DISTANCE_FEATURES};
pub use train::{objective_and_grad, train, TrainConfig, TrainOutcome};

use std::io::Write;

use crate::corpora::{AlignOptions, DepSentence, EmbeddingTable};
use crate::error::{Error, Result};
use crate::headprobe::pair_sentences;
use crate::interchange::{ExtractSet, HeadId, Segment, TokenKind};
use crate::scalar::{argmax, softmax_in_place, Scalar};
use crate::wordmap::{cls_row_to_words, to_word_attention};

/// How root words are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootMode {
    /// Root words are neither trained on nor scored.
    #[default]
    Exclude,
    /// An extra `[CLS]` node is a candidate head; root words attach to it.
    ClsNode,
}

/// One sentence prepared for the probes.
///
/// Nodes are the words, plus a trailing `[CLS]` node in [`RootMode::ClsNode`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParseInstance<T> {
    pub words: Vec<String>,
    pub n_nodes: usize,
    pub root_node: Option<usize>,
    /// Gold head node of each word; `None` when the word is not scored.
    pub gold: Vec<Option<usize>>,
    pub n_heads: usize,
    /// `[head][from node][to node]`, stored at 32 bits.
    attn: Vec<f32>,
    pub dim: usize,
    /// `[node][dim]`
    emb: Vec<T>,
}

impl<T: Scalar> ParseInstance<T> {
    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    /// Attention from node `from` to node `to` under head `k`.
    #[inline]
    pub fn alpha(&self, k: usize, from: usize, to: usize) -> T {
        T::of_f32(self.attn[(k * self.n_nodes + from) * self.n_nodes + to])
    }

    pub fn embedding(&self, node: usize) -> &[T] {
        &self.emb[node * self.dim..(node + 1) * self.dim]
    }

    /// Signed sentence position of a node; the `[CLS]` node sits before word 0.
    pub fn position(&self, node: usize) -> isize {
        if Some(node) == self.root_node {
            -1
        } else {
            node as isize
        }
    }

    /// (dependent, gold head node) pairs that count toward loss and UAS.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.gold.iter().enumerate().filter_map(|(d, g)| g.map(|g| (d, g)))
    }

    /// Builds an instance from raw parts. `attention` is `[head][from][to]`
    /// over nodes, `embeddings` is `[node][dim]`.
    pub fn from_parts(
        words: Vec<String>,
        gold: Vec<Option<usize>>,
        root_node: Option<usize>,
        n_heads: usize,
        attention: Vec<f32>,
        dim: usize,
        embeddings: Vec<T>,
    ) -> Result<Self> {
        let n_nodes = words.len() + root_node.is_some() as usize;
        if let Some(r) = root_node {
            if r != words.len() {
                return Err(Error::InvalidArgument("root node must follow the words".into()));
            }
        }
        if gold.len() != words.len() {
            return Err(Error::Dimension(format!("{} gold heads for {} words", gold.len(), words.len())));
        }
        if attention.len() != n_heads * n_nodes * n_nodes {
            return Err(Error::Dimension(format!(
                "attention has {} values, expected {n_heads} x {n_nodes} x {n_nodes}",
                attention.len()
            )));
        }
        if embeddings.len() != n_nodes * dim {
            return Err(Error::Dimension(format!(
                "embeddings have {} values, expected {n_nodes} x {dim}",
                embeddings.len()
            )));
        }
        for (d, g) in gold.iter().enumerate() {
            if let Some(g) = *g {
                if g >= n_nodes || g == d {
                    return Err(Error::Validation(format!("word {d}: invalid gold head node {g}")));
                }
            }
        }
        Ok(ParseInstance {
            words,
            n_nodes,
            root_node,
            gold,
            n_heads,
            attn: attention,
            dim,
            emb: embeddings,
        })
    }
}

fn embedding_rows<T: Scalar>(words: &[String], n_nodes: usize, table: Option<&EmbeddingTable<T>>) -> (usize, Vec<T>) {
    match table {
        None => (0, Vec::new()),
        Some(t) => {
            let mut v = Vec::with_capacity(n_nodes * t.dim);
            for w in words {
                v.extend_from_slice(t.lookup(w));
            }
            v.resize(n_nodes * t.dim, T::zero());
            (t.dim, v)
        }
    }
}

/// An instance without attention features, for the distance baseline.
pub fn instance_from_sentence<T: Scalar>(sent: &DepSentence, embeddings: Option<&EmbeddingTable<T>>) -> ParseInstance<T> {
    let n = sent.len();
    let (dim, emb) = embedding_rows(&sent.words, n, embeddings);
    ParseInstance {
        words: sent.words.clone(),
        n_nodes: n,
        root_node: None,
        gold: sent.gold_head.clone(),
        n_heads: 0,
        attn: Vec::new(),
        dim,
        emb,
    }
}

/// Word-level attention of every head of `seg`, laid out over nodes.
pub fn build_instance<T: Scalar>(
    seg: &Segment,
    sent: &DepSentence,
    embeddings: Option<&EmbeddingTable<T>>,
    root: RootMode,
) -> Result<ParseInstance<T>> {
    let n = sent.len();
    let n_heads = seg.n_layers * seg.n_heads;
    let root_node = (root == RootMode::ClsNode).then_some(n);
    let n_nodes = n + root_node.is_some() as usize;
    let mut attn = vec![0f32; n_heads * n_nodes * n_nodes];

    let cls_col = match root {
        RootMode::Exclude => None,
        RootMode::ClsNode => Some(
            seg.special_positions()
                .iter()
                .position(|&t| seg.special_flags[t] == TokenKind::Cls)
                .ok_or_else(|| Error::Validation(format!("segment {:?} has no [CLS] token", seg.id)))?,
        ),
    };

    for k in 0..n_heads {
        let head = HeadId::from_flat(k, seg.n_heads);
        let m = to_word_attention::<f64>(seg, head, root == RootMode::ClsNode)?;
        if m.n_words() != n {
            return Err(Error::Alignment(format!(
                "segment {:?} covers {} words, sentence has {n}",
                seg.id,
                m.n_words()
            )));
        }
        let base = k * n_nodes * n_nodes;
        for i in 0..n {
            for j in 0..n {
                attn[base + i * n_nodes + j] = m.get(i, j) as f32;
            }
        }
        if let (Some(r), Some(c)) = (root_node, cls_col) {
            for i in 0..n {
                attn[base + i * n_nodes + r] = m.to_special(i, c) as f32;
            }
            let row: Vec<f64> = cls_row_to_words(seg, head)?.expect("checked above");
            for j in 0..n {
                attn[base + r * n_nodes + j] = row[j] as f32;
            }
        }
    }

    let gold = sent
        .gold_head
        .iter()
        .map(|g| match (g, root_node) {
            (Some(h), _) => Some(*h),
            (None, r) => r,
        })
        .collect();
    let (dim, emb) = embedding_rows(&sent.words, n_nodes, embeddings);
    Ok(ParseInstance {
        words: sent.words.clone(),
        n_nodes,
        root_node,
        gold,
        n_heads,
        attn,
        dim,
        emb,
    })
}

/// Aligns the extract with the corpus and builds one instance per sentence.
pub fn build_instances<T: Scalar>(
    set: &ExtractSet,
    corpus: &[DepSentence],
    embeddings: Option<&EmbeddingTable<T>>,
    root: RootMode,
    align: &AlignOptions,
) -> Result<Vec<ParseInstance<T>>> {
    pair_sentences(set, corpus, align)?
        .into_iter()
        .map(|(seg, sent)| build_instance(seg, sent, embeddings, root))
        .collect()
}

/// A trainable arc scorer with a flat parameter vector.
pub trait ArcScorer<T: Scalar>: Clone {
    fn params(&self) -> &[T];

    fn params_mut(&mut self) -> &mut [T];

    /// Checks that the instance has the shape this scorer expects.
    fn check(&self, inst: &ParseInstance<T>) -> Result<()>;

    /// Unnormalized score of every node as head of `dep`. The entry at `dep`
    /// is ignored.
    fn logits(&self, inst: &ParseInstance<T>, dep: usize, out: &mut [T]);

    /// Adds `sum_i delta[i] * d logit_i / d params` into `grad`.
    fn backprop(&self, inst: &ParseInstance<T>, dep: usize, delta: &[T], grad: &mut [T]);

    /// Head distribution for `dep` over all nodes; zero at `dep` itself.
    fn score(&self, inst: &ParseInstance<T>, dep: usize) -> Result<Vec<T>> {
        self.check(inst)?;
        if dep >= inst.n_words() {
            return Err(Error::Index(format!("dependent {dep} outside {}-word sentence", inst.n_words())));
        }
        if inst.n_nodes < 2 {
            return Err(Error::NoCandidate("sentence has a single node".into()));
        }
        let mut out = vec![T::zero(); inst.n_nodes];
        distribution(self, inst, dep, &mut out).map(|_| out)
    }
}

/// Fills `out` with the candidate distribution; returns the log-normalizer.
pub(crate) fn distribution<T: Scalar, S: ArcScorer<T>>(
    scorer: &S,
    inst: &ParseInstance<T>,
    dep: usize,
    out: &mut [T],
) -> Result<T> {
    scorer.logits(inst, dep, out);
    Ok(normalize_excluding(out, dep))
}

/// Softmax over every entry but `skip`, which is set to zero. Returns the
/// log-normalizer of the original values.
pub(crate) fn normalize_excluding<T: Scalar>(values: &mut [T], skip: usize) -> T {
    let mut cands: Vec<T> = values.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| *v).collect();
    let log_z = softmax_in_place(&mut cands);
    let mut it = cands.into_iter();
    for (i, v) in values.iter_mut().enumerate() {
        *v = if i == skip { T::zero() } else { it.next().expect("candidate count") };
    }
    log_z
}

/// Greedy head prediction; ties go to the lowest node.
pub fn predict<T: Scalar, S: ArcScorer<T>>(scorer: &S, inst: &ParseInstance<T>, dep: usize) -> Result<usize> {
    let mut p = scorer.score(inst, dep)?;
    p[dep] = T::neg_infinity();
    Ok(argmax(&p).expect("nonempty"))
}

/// Unlabeled attachment score over scored words.
pub fn eval_uas<T: Scalar, S: ArcScorer<T>>(scorer: &S, instances: &[ParseInstance<T>]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for inst in instances {
        for (d, g) in inst.arcs() {
            correct += (predict(scorer, inst, d)? == g) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("no scored words".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Every word's head is the next word. Sentence-final words count wrong.
pub fn right_branching(corpus: &[DepSentence]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for s in corpus {
        for (d, h) in s.arcs() {
            correct += (h == d + 1) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("no non-root words".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Trains the distance + embedding baseline and reports its dev UAS.
pub fn distance_words_baseline<T: Scalar>(
    train_corpus: &[DepSentence],
    dev_corpus: &[DepSentence],
    embeddings: &EmbeddingTable<T>,
    hidden: usize,
    config: &TrainConfig,
) -> Result<(DistanceWordsProbe<T>, f64)> {
    let tr: Vec<ParseInstance<T>> = train_corpus.iter().map(|s| instance_from_sentence(s, Some(embeddings))).collect();
    let dv: Vec<ParseInstance<T>> = dev_corpus.iter().map(|s| instance_from_sentence(s, Some(embeddings))).collect();
    let init = DistanceWordsProbe::new(embeddings.dim, hidden, config.seed);
    let out = train(init, &tr, None, config)?;
    let uas = eval_uas(&out.probe, &dv)?;
    Ok((out.probe, uas))
}

/// `epoch,loss,dev_uas` rows.
pub fn write_train_log<T: Scalar>(outcome: &TrainOutcome<impl ArcScorer<T>, T>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "dev_uas"]).map_err(Error::csv)?;
    for (e, loss) in outcome.losses.iter().enumerate() {
        let uas = outcome.dev_uas.get(e).copied().flatten();
        w.write_record([
            (e + 1).to_string(),
            format!("{:.9}", loss.as_f64()),
            uas.map_or(String::new(), |u| format!("{u:.4}")),
        ])
        .map_err(Error::csv)?;
    }
    w.flush().map_err(Error::csv)
}

/// `model,uas` rows.
pub fn write_uas_table(rows: &[(String, f64)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "uas"]).map_err(Error::csv)?;
    for (name, uas) in rows {
        w.write_record([name.clone(), format!("{:.1}", 100.0 * uas)]).map_err(Error::csv)?;
    }
    w.flush().map_err(Error::csv)
}
