//! Quantitative evaluation of explanations: median rank of the true
//! features and post-hoc accuracy.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::explainers::{Explanation, Method};
use crate::models::{mask_rows, Classifier};
use crate::sampling::FeatureSet;
use crate::tensor::{argmax, Tensor};

/// Box-plot statistics; quartiles use linear interpolation between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("cannot summarize an empty list".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            q3: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Quantile of already-sorted data, interpolating at position `q·(n−1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    quantile(values, 0.5)
}

/// 1-based importance rank of every feature: descending score, lower index
/// first on ties (the same order [`crate::sampling::hard_top_k`] uses).
pub fn feature_ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = alloc::vec![0; scores.len()];
    for (pos, &feature) in order.iter().enumerate() {
        ranks[feature] = pos + 1;
    }
    ranks
}

/// Median of the ranks the scores assign to the true features.
pub fn sample_median_rank(scores: &[f64], truth: &FeatureSet) -> Result<f64> {
    let d = scores.len();
    if truth.is_empty() {
        return Err(Error::Data("empty truth set".into()));
    }
    if let Some(bad) = truth.iter().find(|&i| i >= d) {
        return Err(Error::Data(format!("truth index {bad} out of range for d={d}")));
    }
    let ranks = feature_ranks(scores);
    let mut mine: Vec<f64> = truth.iter().map(|i| ranks[i] as f64).collect();
    Ok(median_of(&mut mine))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianRankReport {
    pub per_sample: Vec<f64>,
    pub summary: BoxSummary,
    /// Best achievable median, `(|truth| + 1) / 2` (median over samples).
    pub optimal_median: f64,
}

pub fn median_rank(explanations: &[Explanation], truths: &[FeatureSet]) -> Result<MedianRankReport> {
    if explanations.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} explanations for {} truth sets",
            explanations.len(),
            truths.len()
        )));
    }
    let per_sample = explanations
        .iter()
        .zip(truths)
        .map(|(e, t)| sample_median_rank(&e.scores, t))
        .collect::<Result<Vec<_>>>()?;
    let mut optima: Vec<f64> = truths.iter().map(|t| (t.len() as f64 + 1.0) / 2.0).collect();
    Ok(MedianRankReport {
        summary: BoxSummary::from_values(&per_sample)?,
        optimal_median: median_of(&mut optima),
        per_sample,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostHocReport {
    pub accuracy: f64,
    pub matches: usize,
    pub n: usize,
    pub k: usize,
    pub method: Method,
}

/// Agreement between the classifier's prediction on the masked input and on
/// the full input, masking everything outside each selection with zeros.
pub fn post_hoc_accuracy(
    classifier: &Classifier,
    x: &Tensor,
    selections: &[FeatureSet],
    method: Method,
) -> Result<PostHocReport> {
    if selections.len() != x.rows() || selections.is_empty() {
        return Err(Error::Data(format!(
            "{} selections for {} samples",
            selections.len(),
            x.rows()
        )));
    }
    let full = classifier.predict(x)?;
    let masked = classifier.predict(&mask_rows(x, selections)?)?;
    let matches = (0..x.rows())
        .filter(|&r| argmax(full.row(r)) == argmax(masked.row(r)))
        .count();
    Ok(PostHocReport {
        accuracy: matches as f64 / x.rows() as f64,
        matches,
        n: x.rows(),
        k: selections[0].len(),
        method,
    })
}
