//! Head-to-head Jensen-Shannon distances and a 2-D metric MDS embedding.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interchange::{ExtractSet, HeadId};
use crate::scalar::Scalar;

/// Tolerance on the sum of a probability vector passed to [`js_divergence`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Jensen-Shannon divergence in nats. Both inputs must be distributions over
/// the same support.
pub fn js_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    for (name, d) in [("p", p), ("q", q)] {
        if let Some(i) = d.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Validation(format!("{name}[{i}] = {} is not a probability", d[i])));
        }
        let s: T = d.iter().copied().sum();
        if (s.as_f64() - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::Validation(format!("{name} sums to {s}, not 1")));
        }
    }
    Ok(js_unchecked(p.iter().copied(), q.iter().copied()))
}

fn js_unchecked<T: Scalar>(p: impl Iterator<Item = T>, q: impl Iterator<Item = T>) -> T {
    let half = T::lit(0.5);
    let mut total = T::zero();
    for (a, b) in p.zip(q) {
        let m = (a + b) * half;
        let mut term = T::zero();
        if a > T::zero() {
            term += a * (a / m).ln();
        }
        if b > T::zero() {
            term += b * (b / m).ln();
        }
        total += term;
    }
    (total * half).max(T::zero())
}

/// Square distance matrix over heads, in layer-major head order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDistanceMatrix<T> {
    pub heads: Vec<HeadId>,
    d: Vec<T>,
}

impl<T: Scalar> HeadDistanceMatrix<T> {
    /// Builds a matrix from row-major entries, rejecting anything that is not
    /// a symmetric, nonnegative matrix with zero diagonal.
    pub fn new(heads: Vec<HeadId>, d: Vec<T>) -> Result<Self> {
        let n = heads.len();
        if d.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for {n} heads", d.len())));
        }
        let m = HeadDistanceMatrix { heads, d };
        m.validate()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.heads.len()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.d[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.n();
        &self.d[i * n..(i + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let tol = |v: T| T::lit(1e-9) * v.abs().max(T::one());
        for i in 0..n {
            for j in 0..n {
                let v = self.get(i, j);
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::Validation(format!("distance ({i},{j}) = {v}")));
                }
                if i == j && v > tol(v) {
                    return Err(Error::Validation(format!("nonzero diagonal at {i}: {v}")));
                }
                if (v - self.get(j, i)).abs() > tol(v) {
                    return Err(Error::Validation(format!(
                        "matrix is not symmetric at ({i},{j}): {v} vs {}",
                        self.get(j, i)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How per-token divergences are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Average over every token in the set.
    #[default]
    Mean,
    /// Plain sum over every token.
    Sum,
}

/// Distance between every pair of heads: the JS divergence of their
/// attention rows for the same source token, pooled over all tokens
/// (special tokens included).
pub fn head_distances<T: Scalar>(set: &ExtractSet, pooling: Pooling) -> Result<HeadDistanceMatrix<T>> {
    let tokens = set.total_tokens();
    if tokens == 0 || set.total_heads() == 0 {
        return Err(Error::Empty("extract set has no tokens".into()));
    }
    let heads: Vec<HeadId> = set.heads().collect();
    let n = heads.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let scale = match pooling {
        Pooling::Mean => T::one() / T::lit(tokens as f64),
        Pooling::Sum => T::one(),
    };
    let values: Vec<T> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (heads[i], heads[j]);
            let mut total = T::zero();
            for seg in &set.segments {
                for from in 0..seg.len() {
                    let p = seg.row(a.layer, a.head, from).iter().map(|&v| T::of_f32(v));
                    let q = seg.row(b.layer, b.head, from).iter().map(|&v| T::of_f32(v));
                    total += js_unchecked(p, q);
                }
            }
            total * scale
        })
        .collect();
    let mut d = vec![T::zero(); n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        d[i * n + j] = v;
        d[j * n + i] = v;
    }
    Ok(HeadDistanceMatrix { heads, d })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MdsInit {
    /// Top eigenvectors of the double-centered squared-distance matrix.
    #[default]
    Classical,
    /// Uniform coordinates in `[-1, 1)`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdsConfig {
    pub max_iterations: usize,
    /// Stop once `(previous - current) / previous` falls below this.
    pub tolerance: f64,
    pub init: MdsInit,
}

impl Default for MdsConfig {
    fn default() -> Self {
        MdsConfig {
            max_iterations: 500,
            tolerance: 1e-9,
            init: MdsInit::Classical,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub dims: usize,
    /// Row-major `n x dims`.
    pub coords: Vec<T>,
    /// Raw stress divided by the sum of squared input distances.
    pub stress: T,
    pub iterations: usize,
    /// Raw stress of the initial configuration and after every update.
    pub stress_history: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn n(&self) -> usize {
        self.coords.len().checked_div(self.dims).unwrap_or(0)
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }

    pub fn distance(&self, i: usize, j: usize) -> T {
        euclid(self.point(i), self.point(j))
    }
}

fn euclid<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum::<T>().sqrt()
}

fn raw_stress<T: Scalar>(dist: &HeadDistanceMatrix<T>, x: &[T], dims: usize) -> T {
    let n = dist.n();
    let mut s = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            let e = dist.get(i, j) - euclid(&x[i * dims..(i + 1) * dims], &x[j * dims..(j + 1) * dims]);
            s += e * e;
        }
    }
    s
}

fn classical_init<T: Scalar>(dist: &HeadDistanceMatrix<T>, dims: usize) -> Vec<T> {
    let n = dist.n();
    let sq = DMatrix::from_fn(n, n, |i, j| {
        let v = dist.get(i, j).as_f64();
        v * v
    });
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let mut x = vec![T::zero(); n * dims];
    for (k, &col) in order.iter().take(dims).enumerate() {
        let scale = eig.eigenvalues[col].max(0.0).sqrt();
        for i in 0..n {
            x[i * dims + k] = T::lit(eig.eigenvectors[(i, col)] * scale);
        }
    }
    x
}

/// Metric MDS by stress majorization (SMACOF) with unit weights.
pub fn mds_embed<T: Scalar>(dist: &HeadDistanceMatrix<T>, dims: usize, config: &MdsConfig) -> Result<Embedding<T>> {
    if dims == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
    }
    dist.validate()?;
    let n = dist.n();
    let mut x = match config.init {
        MdsInit::Classical => classical_init(dist, dims),
        MdsInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n * dims).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect()
        }
    };
    let total_sq: T = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| {
        let d = dist.get(i, j);
        d * d
    }).sum();
    let mut stress = raw_stress(dist, &x, dims);
    let mut history = vec![stress];
    let mut iterations = 0;
    let tol = T::lit(config.tolerance);
    let inv_n = T::one() / T::lit(n.max(1) as f64);
    let mut next = vec![T::zero(); n * dims];
    while iterations < config.max_iterations && stress > T::zero() {
        // Guttman transform: X <- B(X) X / n.
        next.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..n {
            let xi = &x[i * dims..(i + 1) * dims];
            let mut diag = T::zero();
            for j in 0..n {
                if i == j {
                    continue;
                }
                let xj = &x[j * dims..(j + 1) * dims];
                let e = euclid(xi, xj);
                if e > T::zero() {
                    let b = -dist.get(i, j) / e;
                    diag -= b;
                    for k in 0..dims {
                        next[i * dims + k] += b * xj[k];
                    }
                }
            }
            for k in 0..dims {
                next[i * dims + k] += diag * xi[k];
                next[i * dims + k] *= inv_n;
            }
        }
        std::mem::swap(&mut x, &mut next);
        iterations += 1;
        let updated = raw_stress(dist, &x, dims);
        history.push(updated);
        let converged = (stress - updated) / stress < tol;
        stress = updated;
        if converged {
            break;
        }
    }
    let normalized = if total_sq > T::zero() { stress / total_sq } else { T::zero() };
    Ok(Embedding {
        dims,
        coords: x,
        stress: normalized,
        iterations,
        stress_history: history,
    })
}

/// Reads `head,tag` rows (1-based `layer-head`). Later rows for the same head
/// replace earlier ones.
pub fn parse_tags(reader: impl Read) -> Result<BTreeMap<HeadId, String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut tags = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if rec.len() < 2 {
            return Err(Error::Parse { line, message: "expected head,tag".into() });
        }
        let head: HeadId = rec[0].trim().parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?;
        tags.insert(head, rec[1].trim().to_string());
    }
    Ok(tags)
}

/// Full matrix with a `head` label column; entries to 9 decimals.
pub fn write_distance_csv<T: Scalar>(dist: &HeadDistanceMatrix<T>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["head".to_string()];
    header.extend(dist.heads.iter().map(|h| h.to_string()));
    w.write_record(&header).map_err(Error::csv)?;
    for (i, h) in dist.heads.iter().enumerate() {
        let mut rec = vec![h.to_string()];
        rec.extend(dist.row(i).iter().map(|v| format!("{:.9}", v.as_f64())));
        w.write_record(&rec).map_err(Error::csv)?;
    }
    w.flush().map_err(Error::csv)?;
    Ok(())
}

pub fn write_coords_csv<T: Scalar>(
    heads: &[HeadId],
    emb: &Embedding<T>,
    tags: &BTreeMap<HeadId, String>,
    out: impl Write,
) -> Result<()> {
    check_points(heads, emb)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["head".to_string(), "layer".to_string()];
    header.extend((0..emb.dims).map(|k| format!("x{}", k + 1)));
    header.push("tag".into());
    w.write_record(&header).map_err(Error::csv)?;
    for (i, h) in heads.iter().enumerate() {
        let mut rec = vec![h.to_string(), (h.layer + 1).to_string()];
        rec.extend(emb.point(i).iter().map(|v| format!("{:.9}", v.as_f64())));
        rec.push(tags.get(h).cloned().unwrap_or_default());
        w.write_record(&rec).map_err(Error::csv)?;
    }
    w.flush().map_err(Error::csv)?;
    Ok(())
}

fn check_points<T: Scalar>(heads: &[HeadId], emb: &Embedding<T>) -> Result<()> {
    if heads.len() != emb.n() {
        return Err(Error::Dimension(format!("{} heads for {} points", heads.len(), emb.n())));
    }
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot of the first two coordinates, one color per layer, each
/// point labeled with its head and optional tag.
pub fn write_scatter_svg<T: Scalar>(
    heads: &[HeadId],
    emb: &Embedding<T>,
    tags: &BTreeMap<HeadId, String>,
    mut out: impl Write,
) -> Result<()> {
    check_points(heads, emb)?;
    const SIZE: f64 = 640.0;
    const MARGIN: f64 = 48.0;
    let xy: Vec<(f64, f64)> = (0..emb.n())
        .map(|i| {
            let p = emb.point(i);
            (p[0].as_f64(), p.get(1).map_or(0.0, |v| v.as_f64()))
        })
        .collect();
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &xy {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    let span = (hi_x - lo_x).max(hi_y - lo_y);
    let scale = if span > 0.0 { (SIZE - 2.0 * MARGIN) / span } else { 0.0 };
    let n_layers = heads.iter().map(|h| h.layer + 1).max().unwrap_or(1);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, h) in heads.iter().enumerate() {
        let (x, y) = xy[i];
        let cx = if scale > 0.0 { MARGIN + (x - lo_x) * scale } else { SIZE / 2.0 };
        let cy = if scale > 0.0 { SIZE - MARGIN - (y - lo_y) * scale } else { SIZE / 2.0 };
        let hue = 300.0 * h.layer as f64 / (n_layers.max(2) - 1) as f64;
        let mut label = h.to_string();
        if let Some(t) = tags.get(h) {
            label = format!("{label} {}", escape(t));
        }
        let _ = writeln!(
            s,
            r#"<circle class="head" cx="{cx:.2}" cy="{cy:.2}" r="5" fill="hsl({hue:.0},70%,45%)"><title>layer {}</title></circle>"#,
            h.layer + 1
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" font-family="sans-serif">{label}</text>"#,
            cx + 6.0,
            cy - 6.0
        );
    }
    s.push_str("</svg>\n");
    out.write_all(s.as_bytes()).map_err(|e| Error::Write(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, d: Vec<f64>) -> HeadDistanceMatrix<f64> {
        HeadDistanceMatrix::new((0..n).map(|i| HeadId::new(0, i)).collect(), d).unwrap()
    }

    #[test]
    fn js_extremes() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
        let v = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn js_rejects_bad_input() {
        assert_eq!(js_divergence(&[0.5, 0.5], &[1.0]).unwrap_err().code(), "dimension");
        assert_eq!(js_divergence(&[0.5, 0.4], &[0.5, 0.5]).unwrap_err().code(), "validation");
        assert_eq!(js_divergence(&[1.5, -0.5], &[0.5, 0.5]).unwrap_err().code(), "validation");
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let heads = vec![HeadId::new(0, 0), HeadId::new(0, 1)];
        let err = HeadDistanceMatrix::new(heads, vec![0.0, 1.0, 2.0, 0.0]).unwrap_err();
        assert_eq!(err.code(), "validation");
    }

    #[test]
    fn equilateral_triangle() {
        let m = matrix(3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let e = mds_embed(&m, 2, &MdsConfig::default()).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((e.distance(i, j) - 1.0).abs() < 1e-6);
        }
        assert!(e.stress < 1e-12);
    }

    #[test]
    fn zero_matrix_collapses() {
        let e = mds_embed(&matrix(4, vec![0.0; 16]), 2, &MdsConfig::default()).unwrap();
        assert!(e.coords.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(e.stress, 0.0);
    }

    #[test]
    fn random_init_is_monotone() {
        let pts: [(f64, f64); 5] = [(0.0, 0.0), (1.0, 0.2), (0.3, 1.4), (2.0, 2.0), (-1.0, 0.5)];
        let n = pts.len();
        let d = (0..n * n)
            .map(|k| {
                let (a, b) = (pts[k / n], pts[k % n]);
                ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt()
            })
            .collect();
        let cfg = MdsConfig {
            init: MdsInit::Random { seed: 7 },
            ..MdsConfig::default()
        };
        let e = mds_embed(&matrix(n, d), 2, &cfg).unwrap();
        for w in e.stress_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn tags_parse() {
        let tags = parse_tags("head,tag\n1-2,previous\n3-1,broad\n".as_bytes()).unwrap();
        assert_eq!(tags[&HeadId::new(0, 1)], "previous");
        assert_eq!(tags.len(), 2);
    }
}
