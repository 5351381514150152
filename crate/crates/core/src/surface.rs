//! Surface-level attention statistics: relative-position shares, attention
//! mass to token categories, entropies, and gradient-report curves.
//!
//! Averages are token-weighted: every source token in the set counts once.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interchange::{ExtractSet, GradientReport, HeadId, TokenKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadStat<T> {
    pub head: HeadId,
    pub value: T,
}

fn require_tokens(set: &ExtractSet) -> Result<()> {
    if set.total_tokens() == 0 || set.total_heads() == 0 {
        return Err(Error::Empty("extract set has no tokens".into()));
    }
    Ok(())
}

/// Runs `f` for every head in parallel, preserving head order.
fn per_head<T, F>(set: &ExtractSet, f: F) -> Vec<HeadStat<T>>
where
    T: Scalar,
    F: Fn(HeadId) -> T + Sync + Send,
{
    let heads: Vec<HeadId> = set.heads().collect();
    heads.into_par_iter().map(|head| HeadStat { head, value: f(head) }).collect()
}

/// Mean attention a head puts on the token at `from + offset`. Sources with
/// no such neighbor are left out of the denominator.
pub fn offset_stats<T: Scalar>(set: &ExtractSet, offset: isize) -> Result<Vec<HeadStat<T>>> {
    require_tokens(set)?;
    Ok(per_head(set, |h| {
        let mut total = T::zero();
        let mut count = 0usize;
        for seg in &set.segments {
            let t = seg.len() as isize;
            for from in 0..t {
                let to = from + offset;
                if (0..t).contains(&to) {
                    total += T::of_f32(seg.row(h.layer, h.head, from as usize)[to as usize]);
                    count += 1;
                }
            }
        }
        if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        }
    }))
}

/// Per-head attention to one token category, split by the source token.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStats<T> {
    pub category: TokenKind,
    /// Mean over all source tokens of the mass sent to `category` tokens.
    pub shares: Vec<HeadStat<T>>,
    /// Same, restricted to sources of the same category (`None` if there are none).
    pub from_same: Vec<(HeadId, Option<T>)>,
    /// Same, restricted to sources of other categories.
    pub from_other: Vec<(HeadId, Option<T>)>,
}

pub fn category_stats<T: Scalar>(set: &ExtractSet, category: TokenKind) -> Result<CategoryStats<T>> {
    require_tokens(set)?;
    let heads: Vec<HeadId> = set.heads().collect();
    let rows: Vec<(HeadId, T, Option<T>, Option<T>)> = heads
        .into_par_iter()
        .map(|h| {
            let (mut all, mut same, mut other) = (T::zero(), T::zero(), T::zero());
            let (mut n_all, mut n_same, mut n_other) = (0usize, 0usize, 0usize);
            for seg in &set.segments {
                let targets: Vec<usize> = (0..seg.len()).filter(|&t| seg.special_flags[t] == category).collect();
                for from in 0..seg.len() {
                    let row = seg.row(h.layer, h.head, from);
                    let mass: T = targets.iter().map(|&t| T::of_f32(row[t])).sum();
                    all += mass;
                    n_all += 1;
                    if seg.special_flags[from] == category {
                        same += mass;
                        n_same += 1;
                    } else {
                        other += mass;
                        n_other += 1;
                    }
                }
            }
            let mean = |s: T, n: usize| (n > 0).then(|| s / T::lit(n as f64));
            (h, mean(all, n_all).unwrap_or_else(T::zero), mean(same, n_same), mean(other, n_other))
        })
        .collect();
    Ok(CategoryStats {
        category,
        shares: rows.iter().map(|r| HeadStat { head: r.0, value: r.1 }).collect(),
        from_same: rows.iter().map(|r| (r.0, r.2)).collect(),
        from_other: rows.iter().map(|r| (r.0, r.3)).collect(),
    })
}

/// `-sum p ln p` in nats.
pub fn row_entropy<T: Scalar>(row: &[T]) -> T {
    -row.iter().map(|p| p.xlnx()).sum::<T>()
}

fn row_entropy_f32<T: Scalar>(row: &[f32]) -> T {
    -row.iter().map(|&p| T::of_f32(p).xlnx()).sum::<T>()
}

/// Mean entropy of each head's attention rows over all source tokens.
pub fn head_entropy<T: Scalar>(set: &ExtractSet) -> Result<Vec<HeadStat<T>>> {
    require_tokens(set)?;
    let n = T::lit(set.total_tokens() as f64);
    Ok(per_head(set, |h| {
        let mut total = T::zero();
        for seg in &set.segments {
            for from in 0..seg.len() {
                total += row_entropy_f32::<T>(seg.row(h.layer, h.head, from));
            }
        }
        total / n
    }))
}

/// Mean entropy of each head's `[CLS]` rows. Heads see no `[CLS]` in an
/// extract without one; the error says so.
pub fn cls_head_entropy<T: Scalar>(set: &ExtractSet) -> Result<Vec<HeadStat<T>>> {
    require_tokens(set)?;
    let sources: Vec<(usize, usize)> = set
        .segments
        .iter()
        .enumerate()
        .flat_map(|(s, seg)| (0..seg.len()).filter(move |&t| seg.special_flags[t] == TokenKind::Cls).map(move |t| (s, t)))
        .collect();
    if sources.is_empty() {
        return Err(Error::Empty("no [CLS] tokens in extract".into()));
    }
    let n = T::lit(sources.len() as f64);
    Ok(per_head(set, |h| {
        sources
            .iter()
            .map(|&(s, t)| row_entropy_f32::<T>(set.segments[s].row(h.layer, h.head, t)))
            .sum::<T>()
            / n
    }))
}

/// Layer means of `[CLS]` entropy.
pub fn cls_entropy<T: Scalar>(set: &ExtractSet) -> Result<Vec<T>> {
    Ok(layer_means(&cls_head_entropy(set)?, set.n_layers))
}

/// Average of per-head values within each layer.
pub fn layer_means<T: Scalar>(stats: &[HeadStat<T>], n_layers: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); n_layers];
    let mut counts = vec![0usize; n_layers];
    for s in stats {
        sums[s.head.layer] += s.value;
        counts[s.head.layer] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { T::zero() } else { s / T::lit(c as f64) })
        .collect()
}

/// One layer of gradient-importance curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientRow {
    pub layer: usize,
    pub sep: f64,
    pub period_comma: f64,
    pub other: f64,
}

pub fn aggregate_gradients(report: &GradientReport, expected_layers: Option<usize>) -> Result<Vec<GradientRow>> {
    report.validate()?;
    if let Some(n) = expected_layers {
        if n != report.n_layers {
            return Err(Error::Validation(format!(
                "gradient report has {} layers, extract has {n}",
                report.n_layers
            )));
        }
    }
    Ok(report
        .layers
        .iter()
        .enumerate()
        .map(|(layer, g)| GradientRow {
            layer,
            sep: g.sep,
            period_comma: g.period_comma,
            other: g.other,
        })
        .collect())
}

pub fn write_gradient_csv(rows: &[GradientRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "sep", "period_comma", "other"]).map_err(Error::csv)?;
    for r in rows {
        w.write_record([
            (r.layer + 1).to_string(),
            format!("{:.6e}", r.sep),
            format!("{:.6e}", r.period_comma),
            format!("{:.6e}", r.other),
        ])
        .map_err(Error::csv)?;
    }
    w.flush().map_err(Error::csv)?;
    Ok(())
}

/// Writes `layer,head,statistic,value` rows (1-based layer/head).
pub fn write_stats_csv<T: Scalar>(stats: &[(&str, &[HeadStat<T>])], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "head", "statistic", "value"]).map_err(Error::csv)?;
    for (name, rows) in stats {
        for s in rows.iter() {
            w.write_record([
                (s.head.layer + 1).to_string(),
                (s.head.head + 1).to_string(),
                name.to_string(),
                format!("{:.6}", s.value.as_f64()),
            ])
            .map_err(Error::csv)?;
        }
    }
    w.flush().map_err(Error::csv)?;
    Ok(())
}
