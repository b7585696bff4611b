//! Screening metrics: ROC curve, AUC, sensitivity at fixed specificity and
//! normalized Hamming distance over feature flags.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least one positive and one negative label ({positives} positives, {negatives} negatives)")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("specificity {0} outside [0, 1]")]
    BadSpecificity(f64),
    #[error("flag vectors must be non-empty and of equal length ({0} vs {1})")]
    FlagLength(usize, usize),
}

/// One operating point: samples scoring `>= threshold` are called positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub false_positives: usize,
    pub true_positives: usize,
}

/// Operating points ordered by decreasing threshold. The first point
/// (threshold `+inf`) is `(0, 0)`; the last is `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(s));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateLabels { positives, negatives });
    }
    Ok((positives, negatives))
}

/// ROC curve from one sorted sweep; tied scores share one point.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricsError> {
    let (positives, negatives) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let point = |threshold: f64, fp: usize, tp: usize| RocPoint {
        threshold,
        fpr: fp as f64 / negatives as f64,
        tpr: tp as f64 / positives as f64,
        false_positives: fp,
        true_positives: tp,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut fp, mut tp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(point(threshold, fp, tp));
    }
    Ok(RocCurve {
        points,
        positives,
        negatives,
    })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Largest true-positive rate over achievable thresholds whose
/// false-positive rate does not exceed `1 - specificity`. No interpolation.
pub fn tpr_at_specificity(scores: &[f64], labels: &[bool], specificity: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&specificity) {
        return Err(MetricsError::BadSpecificity(specificity));
    }
    let curve = roc_curve(scores, labels)?;
    Ok(tpr_at_specificity_on(&curve, specificity))
}

pub fn tpr_at_specificity_on(curve: &RocCurve, specificity: f64) -> f64 {
    // counted in whole negatives so 0.05 * 20 admits exactly one
    let allowed = ((1.0 - specificity) * curve.negatives as f64 + 1e-9).floor() as usize;
    curve
        .points
        .iter()
        .filter(|p| p.false_positives <= allowed)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

/// Fraction of positions where the flag vectors differ.
pub fn normalized_hamming(pred: &[bool], truth: &[bool]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(MetricsError::FlagLength(pred.len(), truth.len()));
    }
    let diff = pred.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(diff as f64 / pred.len() as f64)
}

/// Feature probability → flag. Ties at the threshold are negative.
pub fn threshold_flags(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p > threshold).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_samples: usize,
    pub tpr_at_95: f64,
    pub auc: f64,
    /// `None` when no feature predictions were evaluated.
    pub nhd_mean: Option<f64>,
    pub per_sample_nhd: Vec<f64>,
    pub threshold: f64,
    pub roc: RocCurve,
}

/// Report from raw per-sample outputs. `features` pairs each sample's
/// predicted probabilities with its truth flags; pass an empty slice to
/// skip the feature metric.
pub fn evaluate_scores(
    glaucoma_scores: &[f64],
    glaucoma_labels: &[bool],
    features: &[(Vec<f64>, Vec<bool>)],
    threshold: f64,
) -> Result<EvalReport, MetricsError> {
    let roc = roc_curve(glaucoma_scores, glaucoma_labels)?;
    let per_sample_nhd = features
        .iter()
        .map(|(probs, truth)| normalized_hamming(&threshold_flags(probs, threshold), truth))
        .collect::<Result<Vec<_>, _>>()?;
    let nhd_mean = (!per_sample_nhd.is_empty())
        .then(|| per_sample_nhd.iter().sum::<f64>() / per_sample_nhd.len() as f64);
    Ok(EvalReport {
        n_samples: glaucoma_scores.len(),
        tpr_at_95: tpr_at_specificity_on(&roc, 0.95),
        auc: auc(&roc),
        nhd_mean,
        per_sample_nhd,
        threshold,
        roc,
    })
}

impl EvalReport {
    /// `key=value` lines in fixed order.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_samples={}", self.n_samples);
        let _ = writeln!(s, "tpr_at_95={:.6}", self.tpr_at_95);
        let _ = writeln!(s, "auc={:.6}", self.auc);
        match self.nhd_mean {
            Some(v) => {
                let _ = writeln!(s, "nhd_mean={v:.6}");
            }
            None => {
                let _ = writeln!(s, "nhd_mean=na");
            }
        }
        let _ = writeln!(s, "feature_threshold={}", self.threshold);
        let _ = writeln!(s, "roc_points={}", self.roc.points.len());
        s
    }

    /// `threshold,fpr,tpr` table for plotting.
    pub fn roc_table_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.roc.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        s
    }
}
