//! Probe checkpoint files.
//!
//! ```text
//! "ATPRB" u32 version=1 u32 kind u32 n_heads u32 dim u32 hidden u64 n_params
//! f64 params[n_params]
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{ArcScorer, AttnOnlyProbe, AttnWordsProbe, DistanceWordsProbe, ParseInstance};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"ATPRB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    AttnOnly,
    AttnWords,
    DistanceWords,
}

impl ProbeKind {
    fn code(self) -> u32 {
        match self {
            ProbeKind::AttnOnly => 0,
            ProbeKind::AttnWords => 1,
            ProbeKind::DistanceWords => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::AttnOnly => "attn",
            ProbeKind::AttnWords => "attn-words",
            ProbeKind::DistanceWords => "distance-words",
        }
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attn" => Ok(ProbeKind::AttnOnly),
            "attn-words" => Ok(ProbeKind::AttnWords),
            "distance-words" => Ok(ProbeKind::DistanceWords),
            _ => Err(Error::InvalidArgument(format!(
                "unknown probe kind {s:?} (expected attn, attn-words or distance-words)"
            ))),
        }
    }
}

/// Any of the trainable scorers, at 64-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyProbe {
    AttnOnly(AttnOnlyProbe<f64>),
    AttnWords(AttnWordsProbe<f64>),
    DistanceWords(DistanceWordsProbe<f64>),
}

impl AnyProbe {
    pub fn kind(&self) -> ProbeKind {
        match self {
            AnyProbe::AttnOnly(_) => ProbeKind::AttnOnly,
            AnyProbe::AttnWords(_) => ProbeKind::AttnWords,
            AnyProbe::DistanceWords(_) => ProbeKind::DistanceWords,
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            AnyProbe::AttnOnly($p) => $e,
            AnyProbe::AttnWords($p) => $e,
            AnyProbe::DistanceWords($p) => $e,
        }
    };
}

impl ArcScorer<f64> for AnyProbe {
    fn params(&self) -> &[f64] {
        dispatch!(self, p => p.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        dispatch!(self, p => p.params_mut())
    }

    fn check(&self, inst: &ParseInstance<f64>) -> Result<()> {
        dispatch!(self, p => p.check(inst))
    }

    fn logits(&self, inst: &ParseInstance<f64>, dep: usize, out: &mut [f64]) {
        dispatch!(self, p => p.logits(inst, dep, out))
    }

    fn backprop(&self, inst: &ParseInstance<f64>, dep: usize, delta: &[f64], grad: &mut [f64]) {
        dispatch!(self, p => p.backprop(inst, dep, delta, grad))
    }
}

pub fn encode_probe(probe: &AnyProbe) -> Vec<u8> {
    let (n_heads, dim, hidden) = match probe {
        AnyProbe::AttnOnly(p) => (p.n_heads(), 0, 0),
        AnyProbe::AttnWords(p) => (p.n_heads(), p.dim(), 0),
        AnyProbe::DistanceWords(p) => (0, p.dim(), p.hidden()),
    };
    let params = probe.params();
    let mut out = Vec::with_capacity(33 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, probe.kind().code(), n_heads as u32, dim as u32, hidden as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_probe(bytes: &[u8]) -> Result<AnyProbe> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing probe checkpoint magic".into()));
    }
    let header = MAGIC.len() + 5 * 4 + 8;
    if bytes.len() < header {
        return Err(Error::Corrupt("truncated checkpoint header".into()));
    }
    let u32_at = |i: usize| {
        let o = MAGIC.len() + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let version = u32_at(0) as u32;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let (kind, n_heads, dim, hidden) = (u32_at(1), u32_at(2), u32_at(3), u32_at(4));
    let mut n = [0u8; 8];
    n.copy_from_slice(&bytes[header - 8..header]);
    let n_params = u64::from_le_bytes(n) as usize;
    if bytes.len() - header != n_params.saturating_mul(8) {
        return Err(Error::Corrupt(format!(
            "checkpoint declares {n_params} parameters but carries {} bytes",
            bytes.len() - header
        )));
    }
    let params: Vec<f64> = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let probe = match kind {
        0 => {
            if n_params != 2 * n_heads {
                return Err(Error::Corrupt("attention-only checkpoint has wrong parameter count".into()));
            }
            let (w, u) = params.split_at(n_heads);
            AnyProbe::AttnOnly(AttnOnlyProbe::from_weights(w.to_vec(), u.to_vec())?)
        }
        1 => {
            let mut p = AttnWordsProbe::zeros(n_heads, dim);
            if p.params().len() != n_params {
                return Err(Error::Corrupt("attention-and-words checkpoint has wrong parameter count".into()));
            }
            p.params_mut().copy_from_slice(&params);
            AnyProbe::AttnWords(p)
        }
        2 => AnyProbe::DistanceWords(
            DistanceWordsProbe::from_params(dim, hidden, params).map_err(|e| Error::Corrupt(e.to_string()))?,
        ),
        k => return Err(Error::Format(format!("unknown probe kind code {k}"))),
    };
    Ok(probe)
}

pub fn save_probe(probe: &AnyProbe, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_probe(probe)).map_err(|e| Error::io(path, e))
}

pub fn load_probe(path: impl AsRef<Path>) -> Result<AnyProbe> {
    let path = path.as_ref();
    decode_probe(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_kinds() {
        let mut a = AttnOnlyProbe::zeros(3);
        a.w_mut()[1] = 0.25;
        a.u_mut()[2] = -1.5;
        let mut b = AttnWordsProbe::zeros(2, 3);
        b.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p = i as f64 * 0.1);
        let c = DistanceWordsProbe::new(2, 5, 3);
        for p in [AnyProbe::AttnOnly(a), AnyProbe::AttnWords(b), AnyProbe::DistanceWords(c)] {
            let bytes = encode_probe(&p);
            assert_eq!(decode_probe(&bytes).unwrap(), p);
            assert_eq!(decode_probe(&bytes[..bytes.len() - 1]).unwrap_err().code(), "corrupt-file");
        }
        assert_eq!(decode_probe(b"NOPE").unwrap_err().code(), "format");
    }
}
