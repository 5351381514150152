use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArcScorer, ParseInstance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear combination of attention in both directions:
/// `logit(i | j) = sum_k w_k a^k(i, j) + u_k a^k(j, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnOnlyProbe<T> {
    n_heads: usize,
    /// `[w; u]`
    params: Vec<T>,
}

impl<T: Scalar> AttnOnlyProbe<T> {
    pub fn zeros(n_heads: usize) -> Self {
        AttnOnlyProbe {
            n_heads,
            params: vec![T::zero(); 2 * n_heads],
        }
    }

    pub fn from_weights(w: Vec<T>, u: Vec<T>) -> Result<Self> {
        if w.len() != u.len() {
            return Err(Error::Dimension(format!("w has {} entries, u has {}", w.len(), u.len())));
        }
        let n_heads = w.len();
        let mut params = w;
        params.extend(u);
        Ok(AttnOnlyProbe { n_heads, params })
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn w(&self) -> &[T] {
        &self.params[..self.n_heads]
    }

    pub fn u(&self) -> &[T] {
        &self.params[self.n_heads..]
    }

    pub fn w_mut(&mut self) -> &mut [T] {
        &mut self.params[..self.n_heads]
    }

    pub fn u_mut(&mut self) -> &mut [T] {
        &mut self.params[self.n_heads..]
    }
}

impl<T: Scalar> ArcScorer<T> for AttnOnlyProbe<T> {
    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn check(&self, inst: &ParseInstance<T>) -> Result<()> {
        if inst.n_heads != self.n_heads {
            return Err(Error::Dimension(format!(
                "probe has {} heads, instance {}",
                self.n_heads, inst.n_heads
            )));
        }
        Ok(())
    }

    fn logits(&self, inst: &ParseInstance<T>, dep: usize, out: &mut [T]) {
        let (w, u) = (self.w(), self.u());
        for (i, o) in out.iter_mut().enumerate() {
            *o = if i == dep {
                T::zero()
            } else {
                (0..self.n_heads)
                    .map(|k| w[k] * inst.alpha(k, i, dep) + u[k] * inst.alpha(k, dep, i))
                    .sum()
            };
        }
    }

    fn backprop(&self, inst: &ParseInstance<T>, dep: usize, delta: &[T], grad: &mut [T]) {
        let n = self.n_heads;
        for (i, &d) in delta.iter().enumerate() {
            if i == dep || d == T::zero() {
                continue;
            }
            for k in 0..n {
                grad[k] += d * inst.alpha(k, i, dep);
                grad[n + k] += d * inst.alpha(k, dep, i);
            }
        }
    }
}

/// Head weights set by the words' embeddings:
/// `logit(i | j) = sum_k W_k (v_i ++ v_j) a^k(i, j) + U_k (v_i ++ v_j) a^k(j, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnWordsProbe<T> {
    n_heads: usize,
    dim: usize,
    /// `W` then `U`, each `[n_heads][2 * dim]`.
    params: Vec<T>,
}

impl<T: Scalar> AttnWordsProbe<T> {
    pub fn zeros(n_heads: usize, dim: usize) -> Self {
        AttnWordsProbe {
            n_heads,
            dim,
            params: vec![T::zero(); 2 * n_heads * 2 * dim],
        }
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn width(&self) -> usize {
        2 * self.dim
    }

    pub fn w_row(&self, k: usize) -> &[T] {
        let c = self.width();
        &self.params[k * c..(k + 1) * c]
    }

    pub fn u_row(&self, k: usize) -> &[T] {
        let c = self.width();
        let off = self.n_heads * c;
        &self.params[off + k * c..off + (k + 1) * c]
    }

    pub fn w_row_mut(&mut self, k: usize) -> &mut [T] {
        let c = self.width();
        &mut self.params[k * c..(k + 1) * c]
    }

    pub fn u_row_mut(&mut self, k: usize) -> &mut [T] {
        let c = self.width();
        let off = self.n_heads * c;
        &mut self.params[off + k * c..off + (k + 1) * c]
    }
}

fn dot_pair<T: Scalar>(row: &[T], vi: &[T], vj: &[T]) -> T {
    let d = vi.len();
    let a: T = row[..d].iter().zip(vi).map(|(a, b)| *a * *b).sum();
    let b: T = row[d..].iter().zip(vj).map(|(a, b)| *a * *b).sum();
    a + b
}

impl<T: Scalar> ArcScorer<T> for AttnWordsProbe<T> {
    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn check(&self, inst: &ParseInstance<T>) -> Result<()> {
        if inst.n_heads != self.n_heads || inst.dim != self.dim {
            return Err(Error::Dimension(format!(
                "probe expects {} heads and {}-d embeddings, instance has {} and {}",
                self.n_heads, self.dim, inst.n_heads, inst.dim
            )));
        }
        Ok(())
    }

    fn logits(&self, inst: &ParseInstance<T>, dep: usize, out: &mut [T]) {
        let vj = inst.embedding(dep);
        for (i, o) in out.iter_mut().enumerate() {
            if i == dep {
                *o = T::zero();
                continue;
            }
            let vi = inst.embedding(i);
            *o = (0..self.n_heads)
                .map(|k| {
                    dot_pair(self.w_row(k), vi, vj) * inst.alpha(k, i, dep)
                        + dot_pair(self.u_row(k), vi, vj) * inst.alpha(k, dep, i)
                })
                .sum();
        }
    }

    fn backprop(&self, inst: &ParseInstance<T>, dep: usize, delta: &[T], grad: &mut [T]) {
        let d = self.dim;
        let c = self.width();
        let u_off = self.n_heads * c;
        let vj = inst.embedding(dep);
        for (i, &g) in delta.iter().enumerate() {
            if i == dep || g == T::zero() {
                continue;
            }
            let vi = inst.embedding(i);
            for k in 0..self.n_heads {
                let a = g * inst.alpha(k, i, dep);
                let b = g * inst.alpha(k, dep, i);
                let gw = &mut grad[k * c..(k + 1) * c];
                for x in 0..d {
                    gw[x] += a * vi[x];
                    gw[d + x] += a * vj[x];
                }
                let gu = &mut grad[u_off + k * c..u_off + (k + 1) * c];
                for x in 0..d {
                    gu[x] += b * vi[x];
                    gu[d + x] += b * vj[x];
                }
            }
        }
    }
}

/// Number of distance features: indicators for offsets -4..-1 and 1..4,
/// then the capped distance behind and ahead.
pub const DISTANCE_FEATURES: usize = 10;

const INDICATOR_SPAN: isize = 4;
const DISTANCE_CAP: isize = 40;

/// Features of candidate position `cand` relative to dependent position `dep`.
pub fn distance_features<T: Scalar>(dep: isize, cand: isize) -> [T; DISTANCE_FEATURES] {
    let mut f = [T::zero(); DISTANCE_FEATURES];
    let off = cand - dep;
    if off != 0 && off.abs() <= INDICATOR_SPAN {
        let slot = if off < 0 { off + INDICATOR_SPAN } else { off + INDICATOR_SPAN - 1 };
        f[slot as usize] = T::one();
    }
    let dist = T::lit(off.abs().min(DISTANCE_CAP) as f64);
    if off < 0 {
        f[8] = dist;
    } else {
        f[9] = dist;
    }
    f
}

/// One-hidden-layer scorer over `[v_dep ++ v_cand ++ distance features]`:
/// `logit = v . tanh(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceWordsProbe<T> {
    dim: usize,
    hidden: usize,
    /// `W [hidden][input]`, `b [hidden]`, `v [hidden]`.
    params: Vec<T>,
}

impl<T: Scalar> DistanceWordsProbe<T> {
    /// Seeded uniform initialization scaled by fan-in.
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = 2 * dim + DISTANCE_FEATURES;
        let n = hidden * input + 2 * hidden;
        let mut params = vec![T::zero(); n];
        let s_in = 1.0 / (input as f64).sqrt();
        let s_out = 1.0 / (hidden.max(1) as f64).sqrt();
        for (idx, p) in params.iter_mut().enumerate() {
            let r: f64 = rng.random_range(-1.0..1.0);
            *p = if idx < hidden * input {
                T::lit(r * s_in)
            } else if idx < hidden * input + hidden {
                T::zero()
            } else {
                T::lit(r * s_out)
            };
        }
        DistanceWordsProbe { dim, hidden, params }
    }

    pub fn from_params(dim: usize, hidden: usize, params: Vec<T>) -> Result<Self> {
        let expected = hidden * (2 * dim + DISTANCE_FEATURES) + 2 * hidden;
        if params.len() != expected {
            return Err(Error::Dimension(format!("{} parameters, expected {expected}", params.len())));
        }
        Ok(DistanceWordsProbe { dim, hidden, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn input_width(&self) -> usize {
        2 * self.dim + DISTANCE_FEATURES
    }

    fn input(&self, inst: &ParseInstance<T>, dep: usize, cand: usize) -> Vec<T> {
        let mut x = Vec::with_capacity(self.input_width());
        x.extend_from_slice(inst.embedding(dep));
        x.extend_from_slice(inst.embedding(cand));
        x.extend(distance_features::<T>(inst.position(dep), inst.position(cand)));
        x
    }

    fn hidden_layer(&self, x: &[T]) -> Vec<T> {
        let iw = self.input_width();
        let b = &self.params[self.hidden * iw..self.hidden * iw + self.hidden];
        (0..self.hidden)
            .map(|h| {
                let row = &self.params[h * iw..(h + 1) * iw];
                (row.iter().zip(x).map(|(a, b)| *a * *b).sum::<T>() + b[h]).tanh()
            })
            .collect()
    }

    fn out_weights(&self) -> &[T] {
        let off = self.hidden * self.input_width() + self.hidden;
        &self.params[off..off + self.hidden]
    }
}

impl<T: Scalar> ArcScorer<T> for DistanceWordsProbe<T> {
    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn check(&self, inst: &ParseInstance<T>) -> Result<()> {
        if inst.dim != self.dim {
            return Err(Error::Dimension(format!(
                "probe expects {}-d embeddings, instance has {}",
                self.dim, inst.dim
            )));
        }
        Ok(())
    }

    fn logits(&self, inst: &ParseInstance<T>, dep: usize, out: &mut [T]) {
        let v = self.out_weights();
        for (i, o) in out.iter_mut().enumerate() {
            *o = if i == dep {
                T::zero()
            } else {
                let h = self.hidden_layer(&self.input(inst, dep, i));
                h.iter().zip(v).map(|(a, b)| *a * *b).sum()
            };
        }
    }

    fn backprop(&self, inst: &ParseInstance<T>, dep: usize, delta: &[T], grad: &mut [T]) {
        let iw = self.input_width();
        let b_off = self.hidden * iw;
        let v_off = b_off + self.hidden;
        let v = self.out_weights().to_vec();
        for (i, &g) in delta.iter().enumerate() {
            if i == dep || g == T::zero() {
                continue;
            }
            let x = self.input(inst, dep, i);
            let h = self.hidden_layer(&x);
            for u in 0..self.hidden {
                grad[v_off + u] += g * h[u];
                let dz = g * v[u] * (T::one() - h[u] * h[u]);
                grad[b_off + u] += dz;
                let row = &mut grad[u * iw..(u + 1) * iw];
                for (r, xv) in row.iter_mut().zip(&x) {
                    *r += dz * *xv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_two_left() {
        let f = distance_features::<f64>(5, 3);
        let mut want = [0.0; DISTANCE_FEATURES];
        want[2] = 1.0; // offset -2
        want[8] = 2.0;
        assert_eq!(f, want);
    }

    #[test]
    fn features_far_right_capped() {
        let f = distance_features::<f64>(0, 100);
        assert_eq!(f[..8], [0.0; 8]);
        assert_eq!((f[8], f[9]), (0.0, 40.0));
        let f = distance_features::<f64>(0, 1);
        assert_eq!(f[4], 1.0);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = DistanceWordsProbe::<f64>::new(3, 8, 7);
        let b = DistanceWordsProbe::<f64>::new(3, 8, 7);
        assert_eq!(a, b);
        assert_ne!(a, DistanceWordsProbe::<f64>::new(3, 8, 8));
    }
}
