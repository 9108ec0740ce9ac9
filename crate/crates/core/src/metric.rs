//! Performance metrics over scored records. AUC is the built-in metric;
//! anything implementing [`Metric`] can be plugged into matching and
//! attribution.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ScoredRecord;
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined: needs positive total weight in both label classes")]
    Undefined,
    #[error("weights must be finite and nonnegative")]
    InvalidWeights,
    #[error("weights length {got} does not match record count {want}")]
    WeightLength { got: usize, want: usize },
    #[error("bootstrap needs at least 100 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("no records")]
    Empty,
}

/// Point estimate with a bootstrap percentile interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_pos: u64,
    pub n_neg: u64,
}

/// A metric evaluated over (score, label) pairs with per-record weights.
pub trait Metric: Send + Sync {
    fn name(&self) -> &str;

    fn evaluate(
        &self,
        scores: &[f64],
        labels: &[u8],
        weights: Option<&[f64]>,
    ) -> Result<f64, MetricError>;

    /// Bind the metric to a fixed record table so that repeated evaluation
    /// under varying weights avoids re-sorting.
    fn prepare(&self, scores: &[f64], labels: &[u8]) -> Box<dyn PreparedMetric>;
}

pub trait PreparedMetric: Send + Sync {
    fn evaluate_counts(&self, counts: &[u32]) -> Result<f64, MetricError>;
    fn evaluate_weights(&self, weights: &[f64]) -> Result<f64, MetricError>;
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a positive outscores a negative, with ties counted half.
#[derive(Debug, Clone, Copy, Default)]
pub struct Auc;

impl Metric for Auc {
    fn name(&self) -> &str {
        "auc"
    }

    fn evaluate(
        &self,
        scores: &[f64],
        labels: &[u8],
        weights: Option<&[f64]>,
    ) -> Result<f64, MetricError> {
        let prepared = self.prepare(scores, labels);
        match weights {
            Some(w) => prepared.evaluate_weights(w),
            None => prepared.evaluate_weights(&vec![1.0; scores.len()]),
        }
    }

    fn prepare(&self, scores: &[f64], labels: &[u8]) -> Box<dyn PreparedMetric> {
        assert_eq!(scores.len(), labels.len());
        let mut order: Vec<u32> = (0..scores.len() as u32).collect();
        order.sort_by(|&a, &b| scores[a as usize].total_cmp(&scores[b as usize]));
        // exclusive end of each tie group, scanned in ascending score order
        let mut group_ends = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let mut j = i + 1;
            while j < order.len()
                && scores[order[j] as usize].total_cmp(&scores[order[i] as usize]).is_eq()
            {
                j += 1;
            }
            group_ends.push(j as u32);
            i = j;
        }
        Box::new(PreparedAuc {
            order,
            group_ends,
            labels: labels.to_vec(),
        })
    }
}

struct PreparedAuc {
    order: Vec<u32>,
    group_ends: Vec<u32>,
    labels: Vec<u8>,
}

impl PreparedAuc {
    fn accumulate(&self, weight_of: impl Fn(u32) -> f64) -> Result<f64, MetricError> {
        if self.order.is_empty() {
            return Err(MetricError::Empty);
        }
        let mut num = 0.0;
        let mut cum_neg = 0.0;
        let mut w_pos = 0.0;
        let mut w_neg = 0.0;
        let mut start = 0usize;
        for &end in &self.group_ends {
            let mut gp = 0.0;
            let mut gn = 0.0;
            for &i in &self.order[start..end as usize] {
                let w = weight_of(i);
                if self.labels[i as usize] == 1 {
                    gp += w;
                } else {
                    gn += w;
                }
            }
            num += gp * (cum_neg + 0.5 * gn);
            cum_neg += gn;
            w_pos += gp;
            w_neg += gn;
            start = end as usize;
        }
        if w_pos <= 0.0 || w_neg <= 0.0 {
            return Err(MetricError::Undefined);
        }
        Ok(num / (w_pos * w_neg))
    }
}

impl PreparedMetric for PreparedAuc {
    fn evaluate_counts(&self, counts: &[u32]) -> Result<f64, MetricError> {
        if counts.len() != self.labels.len() {
            return Err(MetricError::WeightLength {
                got: counts.len(),
                want: self.labels.len(),
            });
        }
        self.accumulate(|i| f64::from(counts[i as usize]))
    }

    fn evaluate_weights(&self, weights: &[f64]) -> Result<f64, MetricError> {
        if weights.len() != self.labels.len() {
            return Err(MetricError::WeightLength {
                got: weights.len(),
                want: self.labels.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MetricError::InvalidWeights);
        }
        self.accumulate(|i| weights[i as usize])
    }
}

/// AUC of a record slice, optionally weighted.
pub fn auc(records: &[ScoredRecord], weights: Option<&[f64]>) -> Result<f64, MetricError> {
    let (scores, labels) = split(records);
    Auc.evaluate(&scores, &labels, weights)
}

fn split(records: &[ScoredRecord]) -> (Vec<f64>, Vec<u8>) {
    (
        records.iter().map(|r| r.score).collect(),
        records.iter().map(|r| r.label).collect(),
    )
}

/// Nonparametric bootstrap percentile interval (2.5th / 97.5th) around the
/// metric on the original records. Replicates draw records with replacement
/// under independent substreams of `seed`, so the result does not depend on
/// how the work is scheduled. Replicates on which the metric is undefined
/// are dropped.
pub fn bootstrap_ci(
    records: &[ScoredRecord],
    metric: &dyn Metric,
    replicates: usize,
    seed: u64,
) -> Result<MetricResult, MetricError> {
    let (scores, labels) = split(records);
    bootstrap_ci_prepared(metric.prepare(&scores, &labels).as_ref(), &labels, replicates, seed)
}

/// Bootstrap over an already-prepared metric. `labels` must be the table the
/// metric was prepared on; it supplies the class counts.
pub fn bootstrap_ci_prepared(
    prepared: &dyn PreparedMetric,
    labels: &[u8],
    replicates: usize,
    seed: u64,
) -> Result<MetricResult, MetricError> {
    let base: Vec<u32> = (0..labels.len() as u32).collect();
    bootstrap_ci_multiset(prepared, labels, &base, replicates, seed)
}

/// Bootstrap over a multiset of rows from a prepared table: the point value
/// is the metric on `base` and replicates redraw `base.len()` entries from
/// `base` with replacement.
pub fn bootstrap_ci_multiset(
    prepared: &dyn PreparedMetric,
    labels: &[u8],
    base: &[u32],
    replicates: usize,
    seed: u64,
) -> Result<MetricResult, MetricError> {
    if replicates < 100 {
        return Err(MetricError::TooFewReplicates(replicates));
    }
    let n = labels.len();
    if n == 0 || base.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut base_counts = vec![0u32; n];
    for &id in base {
        base_counts[id as usize] += 1;
    }
    let value = prepared.evaluate_counts(&base_counts)?;
    let mut draws: Vec<Option<f64>> = Vec::with_capacity(replicates);
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, "bootstrap", r as u64);
            let mut counts = vec![0u32; n];
            for _ in 0..base.len() {
                counts[base[rng.gen_range(0..base.len())] as usize] += 1;
            }
            prepared.evaluate_counts(&counts).ok()
        })
        .collect_into_vec(&mut draws);
    let mut kept: Vec<f64> = draws.into_iter().flatten().collect();
    kept.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = if kept.is_empty() {
        (value, value)
    } else {
        (percentile(&kept, 0.025), percentile(&kept, 0.975))
    };
    lo = lo.min(value);
    hi = hi.max(value);
    let n_pos: u64 = base
        .iter()
        .filter(|&&id| labels[id as usize] == 1)
        .count() as u64;
    Ok(MetricResult {
        value,
        ci_low: lo,
        ci_high: hi,
        n_pos,
        n_neg: base.len() as u64 - n_pos,
    })
}

/// Linear-interpolation quantile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
        Auc.evaluate(scores, labels, None)
    }

    #[test]
    fn four_record_example() {
        let v = eval(&[0.9, 0.4, 0.6, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_eq!(v, 0.75);
    }

    #[test]
    fn perfect_separation() {
        let v = eval(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn all_tied_scores() {
        let v = eval(&[0.5, 0.5, 0.5, 0.5], &[1, 1, 0, 0]).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(eval(&[0.9, 0.1], &[1, 1]), Err(MetricError::Undefined)));
    }

    #[test]
    fn zero_weight_class_is_undefined() {
        let r = Auc.evaluate(&[0.9, 0.1], &[1, 0], Some(&[1.0, 0.0]));
        assert!(matches!(r, Err(MetricError::Undefined)));
    }

    #[test]
    fn negative_weight_rejected() {
        let r = Auc.evaluate(&[0.9, 0.1], &[1, 0], Some(&[1.0, -1.0]));
        assert!(matches!(r, Err(MetricError::InvalidWeights)));
    }

    #[test]
    fn counts_match_weights_path() {
        let scores = [0.9, 0.4, 0.6, 0.2, 0.4];
        let labels = [1, 1, 0, 0, 0];
        let p = Auc.prepare(&scores, &labels);
        let a = p.evaluate_counts(&[2, 1, 3, 1, 1]).unwrap();
        let b = p.evaluate_weights(&[2.0, 1.0, 3.0, 1.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn percentile_endpoints() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
    }
}
