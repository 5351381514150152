//! Token-level to word-level attention conversion.
//!
//! Attention *to* a split word is the sum over its tokens; attention *from*
//! a split word is the mean over its tokens. Rows of `[CLS]`/`[SEP]` are
//! dropped. Their columns are kept only on request and are never
//! renormalized away.

use crate::error::{Error, Result};
use crate::interchange::{HeadId, Segment};
use crate::scalar::Scalar;

/// Word-by-word attention of one head over one segment.
///
/// Columns `0..n_words` are words. When specials are kept, one extra column
/// per `[CLS]`/`[SEP]` token follows, in token order.
#[derive(Debug, Clone, PartialEq)]
pub struct WordAttentionMatrix<T> {
    pub words: Vec<String>,
    n_words: usize,
    n_cols: usize,
    data: Vec<T>,
    /// Token positions of the retained special columns.
    special_tokens: Vec<usize>,
}

impl<T: Scalar> WordAttentionMatrix<T> {
    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn kept_special(&self) -> bool {
        !self.special_tokens.is_empty()
    }

    pub fn special_tokens(&self) -> &[usize] {
        &self.special_tokens
    }

    /// Attention from word `from` to word `to`.
    pub fn get(&self, from: usize, to: usize) -> T {
        self.data[from * self.n_cols + to]
    }

    /// Full output row, special columns included.
    pub fn row(&self, from: usize) -> &[T] {
        &self.data[from * self.n_cols..(from + 1) * self.n_cols]
    }

    /// Row restricted to word columns.
    pub fn word_row(&self, from: usize) -> &[T] {
        &self.row(from)[..self.n_words]
    }

    /// Attention from `from` to the `k`-th retained special column.
    pub fn to_special(&self, from: usize, k: usize) -> T {
        self.row(from)[self.n_words + k]
    }
}

/// Order in which the two merges are applied. They commute; `ColumnsFirst`
/// is canonical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeOrder {
    #[default]
    ColumnsFirst,
    RowsFirst,
}

pub fn to_word_attention<T: Scalar>(segment: &Segment, head: HeadId, keep_special: bool) -> Result<WordAttentionMatrix<T>> {
    to_word_attention_ordered(segment, head, keep_special, MergeOrder::ColumnsFirst)
}

pub fn to_word_attention_ordered<T: Scalar>(
    segment: &Segment,
    head: HeadId,
    keep_special: bool,
    order: MergeOrder,
) -> Result<WordAttentionMatrix<T>> {
    let map = segment.head_map(head)?;
    let t = segment.len();
    let groups = segment.word_tokens();
    let n_words = groups.len();
    let special_tokens = if keep_special { segment.special_positions() } else { Vec::new() };
    let n_cols = n_words + special_tokens.len();

    // column index of each token, if its column survives
    let mut col_of = vec![None; t];
    for (tok, w) in segment.word_index.iter().enumerate() {
        col_of[tok] = *w;
    }
    for (k, &tok) in special_tokens.iter().enumerate() {
        col_of[tok] = Some(n_words + k);
    }

    let mut data = vec![T::zero(); n_words * n_cols];
    match order {
        MergeOrder::ColumnsFirst => {
            let mut merged = vec![T::zero(); n_cols];
            for (w, toks) in groups.iter().enumerate() {
                let scale = T::one() / T::lit(toks.len() as f64);
                for &from in toks {
                    merged.iter_mut().for_each(|v| *v = T::zero());
                    for (to, &a) in map[from * t..(from + 1) * t].iter().enumerate() {
                        if let Some(c) = col_of[to] {
                            merged[c] += T::of_f32(a);
                        }
                    }
                    for (c, v) in merged.iter().enumerate() {
                        data[w * n_cols + c] += *v * scale;
                    }
                }
            }
        }
        MergeOrder::RowsFirst => {
            let mut averaged = vec![T::zero(); t];
            for (w, toks) in groups.iter().enumerate() {
                let scale = T::one() / T::lit(toks.len() as f64);
                averaged.iter_mut().for_each(|v| *v = T::zero());
                for &from in toks {
                    for (to, &a) in map[from * t..(from + 1) * t].iter().enumerate() {
                        averaged[to] += T::of_f32(a) * scale;
                    }
                }
                for (to, v) in averaged.iter().enumerate() {
                    if let Some(c) = col_of[to] {
                        data[w * n_cols + c] += *v;
                    }
                }
            }
        }
    }

    Ok(WordAttentionMatrix {
        words: segment.words("##"),
        n_words,
        n_cols,
        data,
        special_tokens,
    })
}

/// Attention from the first `[CLS]` token to every word (columns summed).
pub fn cls_row_to_words<T: Scalar>(segment: &Segment, head: HeadId) -> Result<Option<Vec<T>>> {
    let map = segment.head_map(head)?;
    let t = segment.len();
    let Some(cls) = segment.special_flags.iter().position(|k| *k == crate::interchange::TokenKind::Cls) else {
        return Ok(None);
    };
    let mut out = vec![T::zero(); segment.n_words()];
    for (to, &a) in map[cls * t..(cls + 1) * t].iter().enumerate() {
        if let Some(w) = segment.word_index[to] {
            out[w] += T::of_f32(a);
        }
    }
    Ok(Some(out))
}

/// Word matrices of every head of a segment, layer-major.
pub fn all_heads<T: Scalar>(segment: &Segment, keep_special: bool) -> Result<Vec<WordAttentionMatrix<T>>> {
    if segment.n_layers * segment.n_heads == 0 {
        return Err(Error::Empty(format!("segment {:?} has no heads", segment.id)));
    }
    (0..segment.n_layers * segment.n_heads)
        .map(|k| to_word_attention(segment, HeadId::from_flat(k, segment.n_heads), keep_special))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interchange::TokenKind;

    fn segment(tokens: &[&str], word_index: Vec<Option<usize>>, map: Vec<f32>) -> Segment {
        Segment {
            id: "t".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            special_flags: tokens.iter().map(|t| TokenKind::classify(t)).collect(),
            word_index,
            n_layers: 1,
            n_heads: 1,
            attention: map,
        }
    }

    #[test]
    fn no_splits_drops_special_rows() {
        #[rustfmt::skip]
        let map = vec![
            0.1, 0.2, 0.3, 0.4,
            0.4, 0.3, 0.2, 0.1,
            0.25, 0.25, 0.25, 0.25,
            0.0, 0.5, 0.5, 0.0,
        ];
        let s = segment(&["[CLS]", "a", "b", "[SEP]"], vec![None, Some(0), Some(1), None], map.clone());
        let m: WordAttentionMatrix<f64> = to_word_attention(&s, HeadId::new(0, 0), true).unwrap();
        assert_eq!(m.n_words(), 2);
        // word columns, then CLS, then SEP
        for (w, tok) in [(0usize, 1usize), (1, 2)] {
            assert_eq!(m.get(w, 0), f64::from(map[tok * 4 + 1]));
            assert_eq!(m.get(w, 1), f64::from(map[tok * 4 + 2]));
            assert_eq!(m.to_special(w, 0), f64::from(map[tok * 4]));
            assert_eq!(m.to_special(w, 1), f64::from(map[tok * 4 + 3]));
        }
        let dropped: WordAttentionMatrix<f64> = to_word_attention(&s, HeadId::new(0, 0), false).unwrap();
        assert_eq!(dropped.n_cols(), 2);
        assert!((dropped.row(0).iter().sum::<f64>() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn split_word_columns_sum_and_rows_average() {
        // tokens: a, b1, ##b2 ; word 1 = {1, 2}
        #[rustfmt::skip]
        let map = vec![
            0.5, 0.2, 0.3,
            0.4, 0.6, 0.0,
            0.8, 0.2, 0.0,
        ];
        let s = segment(&["a", "b", "##c"], vec![Some(0), Some(1), Some(1)], map);
        let m: WordAttentionMatrix<f64> = to_word_attention(&s, HeadId::new(0, 0), true).unwrap();
        assert!((m.get(0, 1) - 0.5).abs() < 1e-7);
        assert!((m.get(1, 0) - 0.6).abs() < 1e-7);
        assert!((m.get(1, 1) - 0.4).abs() < 1e-7);
        assert_eq!(m.words, vec!["a", "bc"]);
    }

    #[test]
    fn head_out_of_range() {
        let s = segment(&["a"], vec![Some(0)], vec![1.0]);
        let r: Result<WordAttentionMatrix<f64>> = to_word_attention(&s, HeadId::new(0, 1), true);
        assert_eq!(r.unwrap_err().code(), "index");
    }

    #[test]
    fn cls_row() {
        let s = segment(&["[CLS]", "a", "##b", "c"], vec![None, Some(0), Some(0), Some(1)], {
            let mut m = vec![0.25f32; 16];
            m[..4].copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
            m
        });
        let r: Vec<f64> = cls_row_to_words(&s, HeadId::new(0, 0)).unwrap().unwrap();
        assert!((r[0] - 0.5).abs() < 1e-7 && (r[1] - 0.4).abs() < 1e-7);
    }
}
