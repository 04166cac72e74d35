use crate::tensor::Tensor;
use crate::{Error, Result};

/// One-vs-rest ROC curve for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Starts at 0 and ends at 1, non-decreasing.
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    /// `None` for a class with no positive or no negative example.
    pub curves: Vec<Option<RocCurve>>,
    /// Mean AUC over the classes that have a curve.
    pub macro_auc: Option<f64>,
}

/// Threshold sweep over the distinct scores, highest first. Tied scores move
/// the curve diagonally, which the trapezoid rule counts as one half.
fn curve(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut fpr, mut tpr) = (vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x, y) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let (x0, y0) = (*fpr.last().unwrap(), *tpr.last().unwrap());
        auc += (x - x0) * (y + y0) / 2.0;
        fpr.push(x);
        tpr.push(y);
    }
    Some(RocCurve { fpr, tpr, auc })
}

/// Per-class one-vs-rest ROC curves from `[n, K]` class probabilities.
pub fn roc_auc(scores: &Tensor, labels: &[usize]) -> Result<RocResult> {
    let s = scores.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::dim("roc_auc", s, &[labels.len()]));
    }
    let k = s[1];
    for (i, row) in scores.data().chunks_exact(k).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("score row {i} sums to {sum}, not 1")));
        }
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Contract(format!("label {l} at row {i} outside [0, {k})")));
    }
    let curves: Vec<Option<RocCurve>> = (0..k)
        .map(|c| {
            let col: Vec<f64> = scores.data().iter().skip(c).step_by(k).copied().collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            curve(&col, &positive)
        })
        .collect();
    let present: Vec<f64> = curves.iter().flatten().map(|c| c.auc).collect();
    let macro_auc = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(RocResult { curves, macro_auc })
}
