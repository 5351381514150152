//! The `ATNX1` attention-extract container and the in-memory data model.
//!
//! Layout (little-endian):
//!
//! ```text
//! "ATNX1"
//! u32 n_layers, u32 n_heads, u32 n_segments
//! per segment:
//!     u32 metadata length, UTF-8 JSON {id, tokens, special_flags, word_index}
//!     f32 attention[layer][head][from][to]
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"ATNX1";

/// Tolerance on attention row sums (32-bit storage).
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

/// An attention head, 0-based internally. Displays as 1-based `<layer>-<head>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadId { layer, head }
    }

    /// Position in layer-major order.
    pub fn flat(self, n_heads: usize) -> usize {
        self.layer * n_heads + self.head
    }

    pub fn from_flat(index: usize, n_heads: usize) -> Self {
        HeadId {
            layer: index / n_heads,
            head: index % n_heads,
        }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.layer + 1, self.head + 1)
    }
}

impl FromStr for HeadId {
    type Err = Error;

    /// Parses the 1-based display form, e.g. `8-11`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("head must look like <layer>-<head> (1-based), got {s:?}"));
        let (l, h) = s.trim().split_once('-').ok_or_else(bad)?;
        let l: usize = l.parse().map_err(|_| bad())?;
        let h: usize = h.parse().map_err(|_| bad())?;
        if l == 0 || h == 0 {
            return Err(bad());
        }
        Ok(HeadId::new(l - 1, h - 1))
    }
}

/// Token category. `Cls` and `Sep` are the special tokens that carry no word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenKind {
    Cls,
    Sep,
    PeriodComma,
    Other,
}

impl TokenKind {
    pub const ALL: [TokenKind; 4] = [TokenKind::Cls, TokenKind::Sep, TokenKind::PeriodComma, TokenKind::Other];

    pub fn is_special(self) -> bool {
        matches!(self, TokenKind::Cls | TokenKind::Sep)
    }

    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Cls => "CLS",
            TokenKind::Sep => "SEP",
            TokenKind::PeriodComma => "PERIOD_COMMA",
            TokenKind::Other => "OTHER",
        }
    }

    /// Category a tokenizer would assign to a token string.
    pub fn classify(token: &str) -> TokenKind {
        match token {
            "[CLS]" => TokenKind::Cls,
            "[SEP]" => TokenKind::Sep,
            "." | "," => TokenKind::PeriodComma,
            _ => TokenKind::Other,
        }
    }
}

impl FromStr for TokenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TokenKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown token category {s:?}")))
    }
}

/// One text segment with its full attention tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub tokens: Vec<String>,
    pub special_flags: Vec<TokenKind>,
    /// Source word of each token; `None` for `[CLS]`/`[SEP]`.
    pub word_index: Vec<Option<usize>>,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Row-major `[layer][head][from][to]`.
    pub attention: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct SegmentMeta {
    id: String,
    tokens: Vec<String>,
    special_flags: Vec<TokenKind>,
    word_index: Vec<Option<usize>>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_special(&self, token: usize) -> bool {
        self.special_flags[token].is_special()
    }

    /// Number of words covered by the segment.
    pub fn n_words(&self) -> usize {
        self.word_index.iter().flatten().max().map_or(0, |&w| w + 1)
    }

    /// Token positions of every word, in word order.
    pub fn word_tokens(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_words()];
        for (t, w) in self.word_index.iter().enumerate() {
            if let Some(w) = w {
                out[*w].push(t);
            }
        }
        out
    }

    /// Token positions of `[CLS]`/`[SEP]`.
    pub fn special_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.is_special(t)).collect()
    }

    /// Reassembles words from their wordpieces, stripping `marker` from
    /// continuation pieces.
    pub fn words(&self, marker: &str) -> Vec<String> {
        let mut out = vec![String::new(); self.n_words()];
        for (t, w) in self.word_index.iter().enumerate() {
            if let Some(w) = w {
                let tok = &self.tokens[t];
                let piece = if out[*w].is_empty() { tok.as_str() } else { tok.strip_prefix(marker).unwrap_or(tok) };
                out[*w].push_str(piece);
            }
        }
        out
    }

    /// The `T x T` map of one head.
    pub fn map(&self, layer: usize, head: usize) -> &[f32] {
        let t = self.len();
        let start = (layer * self.n_heads + head) * t * t;
        &self.attention[start..start + t * t]
    }

    pub fn row(&self, layer: usize, head: usize, from: usize) -> &[f32] {
        let t = self.len();
        &self.map(layer, head)[from * t..(from + 1) * t]
    }

    pub fn head_map(&self, head: HeadId) -> Result<&[f32]> {
        if head.layer >= self.n_layers || head.head >= self.n_heads {
            return Err(Error::Index(format!(
                "head {head} outside {} layers x {} heads",
                self.n_layers, self.n_heads
            )));
        }
        Ok(self.map(head.layer, head.head))
    }

    /// Checks shape, word alignment bookkeeping, and row-stochasticity.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        self.check_word_index()?;
        self.check_rows()
    }

    fn check_shape(&self) -> Result<()> {
        let t = self.len();
        if self.special_flags.len() != t || self.word_index.len() != t {
            return Err(Error::Corrupt(format!(
                "segment {:?}: {} tokens but {} special flags and {} word indices",
                self.id,
                t,
                self.special_flags.len(),
                self.word_index.len()
            )));
        }
        let expected = self.n_layers * self.n_heads * t * t;
        if self.attention.len() != expected {
            return Err(Error::Corrupt(format!(
                "segment {:?}: attention has {} values, expected {} ({} x {} x {t} x {t})",
                self.id,
                self.attention.len(),
                expected,
                self.n_layers,
                self.n_heads
            )));
        }
        Ok(())
    }

    fn check_word_index(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for (t, (kind, w)) in self.special_flags.iter().zip(&self.word_index).enumerate() {
            match (kind.is_special(), w) {
                (true, None) => {}
                (true, Some(_)) => {
                    return Err(Error::Validation(format!(
                        "segment {:?}: special token {t} carries a word index",
                        self.id
                    )))
                }
                (false, None) => {
                    return Err(Error::Validation(format!(
                        "segment {:?}: non-special token {t} has no word index",
                        self.id
                    )))
                }
                (false, Some(w)) => {
                    let ok = match prev {
                        None => *w == 0,
                        Some(p) => *w == p || *w == p + 1,
                    };
                    if !ok {
                        return Err(Error::Validation(format!(
                            "segment {:?}: word index {w} at token {t} breaks contiguity",
                            self.id
                        )));
                    }
                    prev = Some(*w);
                }
            }
        }
        Ok(())
    }

    fn check_rows(&self) -> Result<()> {
        let t = self.len();
        for layer in 0..self.n_layers {
            for head in 0..self.n_heads {
                for from in 0..t {
                    let row = self.row(layer, head, from);
                    let mut sum = 0.0f64;
                    for &a in row {
                        if !(a >= 0.0) || !a.is_finite() {
                            return Err(Error::Validation(format!(
                                "segment {:?} layer {layer} head {head} row {from}: invalid entry {a}",
                                self.id
                            )));
                        }
                        sum += f64::from(a);
                    }
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(Error::Validation(format!(
                            "segment {:?} layer {layer} head {head} row {from}: sums to {sum}",
                            self.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A collection of segments sharing one model geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSet {
    pub n_layers: usize,
    pub n_heads: usize,
    pub segments: Vec<Segment>,
}

impl ExtractSet {
    pub fn new(n_layers: usize, n_heads: usize, segments: Vec<Segment>) -> Result<Self> {
        let set = ExtractSet {
            n_layers,
            n_heads,
            segments,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }

    /// All heads in layer-major order.
    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        (0..self.total_heads()).map(|i| HeadId::from_flat(i, self.n_heads))
    }

    pub fn total_tokens(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn check_head(&self, head: HeadId) -> Result<()> {
        if head.layer >= self.n_layers || head.head >= self.n_heads {
            return Err(Error::Index(format!(
                "head {head} outside {} layers x {} heads",
                self.n_layers, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for seg in &self.segments {
            if seg.n_layers != self.n_layers || seg.n_heads != self.n_heads {
                return Err(Error::Validation(format!(
                    "segment {:?} has {} layers x {} heads, set declares {} x {}",
                    seg.id, seg.n_layers, seg.n_heads, self.n_layers, self.n_heads
                )));
            }
            seg.validate()?;
        }
        Ok(())
    }
}

pub fn encode_extract(set: &ExtractSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [set.n_layers, set.n_heads, set.segments.len()] {
        out.extend_from_slice(&to_u32(v)?.to_le_bytes());
    }
    for seg in &set.segments {
        let meta = SegmentMeta {
            id: seg.id.clone(),
            tokens: seg.tokens.clone(),
            special_flags: seg.special_flags.clone(),
            word_index: seg.word_index.clone(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Validation(e.to_string()))?;
        out.extend_from_slice(&to_u32(json.len())?.to_le_bytes());
        out.extend_from_slice(&json);
        out.reserve(seg.attention.len() * 4);
        for a in &seg.attention {
            out.extend_from_slice(&a.to_le_bytes());
        }
    }
    Ok(out)
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{v} does not fit the u32 header field")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_extract(bytes: &[u8]) -> Result<ExtractSet> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing ATNX1 magic".into()));
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let n_layers = r.u32("n_layers")?;
    let n_heads = r.u32("n_heads")?;
    let n_segments = r.u32("n_segments")?;
    let mut segments = Vec::with_capacity(n_segments.min(1 << 16));
    for s in 0..n_segments {
        let meta_len = r.u32("metadata length")?;
        let meta: SegmentMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::Corrupt(format!("segment {s}: bad metadata: {e}")))?;
        let t = meta.tokens.len();
        let count = n_layers
            .checked_mul(n_heads)
            .and_then(|v| v.checked_mul(t))
            .and_then(|v| v.checked_mul(t))
            .ok_or_else(|| Error::Corrupt(format!("segment {s}: tensor size overflows")))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Corrupt("tensor size overflows".into()))?, "attention payload")?;
        let attention = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let seg = Segment {
            id: meta.id,
            tokens: meta.tokens,
            special_flags: meta.special_flags,
            word_index: meta.word_index,
            n_layers,
            n_heads,
            attention,
        };
        seg.check_shape()?;
        segments.push(seg);
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes after last segment", bytes.len() - r.pos)));
    }
    let set = ExtractSet {
        n_layers,
        n_heads,
        segments,
    };
    set.validate()?;
    Ok(set)
}

pub fn load_extract(path: impl AsRef<Path>) -> Result<ExtractSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_extract(&bytes)
}

pub fn save_extract(set: &ExtractSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_extract(set)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Mean gradient magnitude of the masked-LM loss with respect to attention
/// weights, per layer and target category. Produced by the extractor as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub n_layers: usize,
    pub layers: Vec<CategoryGradients>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryGradients {
    pub sep: f64,
    pub period_comma: f64,
    pub other: f64,
}

impl GradientReport {
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != self.n_layers {
            return Err(Error::Validation(format!(
                "gradient report declares {} layers but has {} rows",
                self.n_layers,
                self.layers.len()
            )));
        }
        for (l, g) in self.layers.iter().enumerate() {
            for v in [g.sep, g.period_comma, g.other] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Validation(format!("gradient report layer {l}: invalid magnitude {v}")));
                }
            }
        }
        Ok(())
    }
}

pub fn load_gradient_report(path: impl AsRef<Path>) -> Result<GradientReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: GradientReport =
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("gradient report: {e}")))?;
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn uniform_segment(n_layers: usize, n_heads: usize) -> Segment {
        let tokens: Vec<String> = ["[CLS]", "the", "cat", "[SEP]"].iter().map(|s| s.to_string()).collect();
        Segment {
            id: "s0".into(),
            special_flags: tokens.iter().map(|t| TokenKind::classify(t)).collect(),
            word_index: vec![None, Some(0), Some(1), None],
            tokens,
            n_layers,
            n_heads,
            attention: vec![0.25; n_layers * n_heads * 16],
        }
    }

    fn minimal() -> ExtractSet {
        ExtractSet::new(2, 2, vec![uniform_segment(2, 2)]).unwrap()
    }

    #[test]
    fn head_display_is_one_based() {
        let h = HeadId::new(7, 10);
        assert_eq!(h.to_string(), "8-11");
        assert_eq!("8-11".parse::<HeadId>().unwrap(), h);
        assert!("0-1".parse::<HeadId>().is_err());
        assert_eq!(HeadId::from_flat(h.flat(12), 12), h);
    }

    #[test]
    fn minimal_round_trip() {
        let set = minimal();
        let bytes = encode_extract(&set).unwrap();
        let back = decode_extract(&bytes).unwrap();
        assert_eq!(back, set);
        assert_eq!(encode_extract(&back).unwrap(), bytes);
    }

    #[test]
    fn scaled_row_is_rejected() {
        let mut bytes = encode_extract(&minimal()).unwrap();
        // first row of layer 1 head 0 lives 2*16 floats into the payload
        let payload = bytes.len() - 2 * 2 * 16 * 4;
        let off = payload + 2 * 16 * 4;
        for k in 0..4 {
            let p = off + 4 * k;
            bytes[p..p + 4].copy_from_slice(&0.5f32.to_le_bytes());
        }
        let err = decode_extract(&bytes).unwrap_err();
        assert_eq!(err.code(), "validation");
        let msg = err.to_string();
        assert!(msg.contains("layer 1 head 0 row 0"), "{msg}");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_extract(&minimal()).unwrap();
        bytes[..5].copy_from_slice(b"XXXX1");
        assert_eq!(decode_extract(&bytes).unwrap_err().code(), "format");
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = encode_extract(&minimal()).unwrap();
        for cut in [7, 20, bytes.len() - 1] {
            assert_eq!(decode_extract(&bytes[..cut]).unwrap_err().code(), "corrupt-file");
        }
    }

    #[test]
    fn empty_set_round_trips() {
        let set = ExtractSet::new(3, 4, vec![]).unwrap();
        let bytes = encode_extract(&set).unwrap();
        assert_eq!(bytes.len(), 5 + 12);
        assert_eq!(decode_extract(&bytes).unwrap(), set);
    }

    #[test]
    fn mismatched_layers_refused() {
        let set = ExtractSet {
            n_layers: 2,
            n_heads: 2,
            segments: vec![uniform_segment(2, 2), uniform_segment(1, 2)],
        };
        assert_eq!(encode_extract(&set).unwrap_err().code(), "validation");
    }

    #[test]
    fn word_index_gaps_rejected() {
        let mut seg = uniform_segment(1, 1);
        seg.word_index[2] = Some(2);
        assert!(seg.validate().is_err());
        let mut seg = uniform_segment(1, 1);
        seg.word_index[0] = Some(0);
        assert!(seg.validate().is_err());
    }

    #[test]
    fn words_strip_marker() {
        let seg = Segment {
            id: "x".into(),
            tokens: vec!["[CLS]".into(), "play".into(), "##ing".into(), "[SEP]".into()],
            special_flags: vec![TokenKind::Cls, TokenKind::Other, TokenKind::Other, TokenKind::Sep],
            word_index: vec![None, Some(0), Some(0), None],
            n_layers: 0,
            n_heads: 0,
            attention: vec![],
        };
        assert_eq!(seg.words("##"), vec!["playing".to_string()]);
        assert_eq!(seg.word_tokens(), vec![vec![1, 2]]);
    }

    #[test]
    fn gradient_report_checks_length() {
        let r = GradientReport {
            n_layers: 2,
            layers: vec![CategoryGradients { sep: 0.0, period_comma: 0.0, other: 0.0 }],
        };
        assert!(r.validate().is_err());
    }
}
