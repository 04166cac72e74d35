use std::fmt::Write as _;

use super::{confusion, prf, roc_auc, ClassMetrics, ConfusionMatrix, RocResult};
use crate::tensor::{softmax_in_place, Tensor};
use crate::train::argmax_rows;
use crate::{Error, Result};

/// Everything computed from one set of logits and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub n: usize,
    pub accuracy: f64,
    pub metrics: ClassMetrics,
    pub confusion: ConfusionMatrix,
    pub roc: RocResult,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Builds the report from `[n, K]` logits; `class_names` fixes `K`.
    pub fn build(logits: &Tensor, labels: &[usize], class_names: &[String]) -> Result<Self> {
        let k = class_names.len();
        if k == 0 {
            return Err(Error::Parameter("report needs at least one class".into()));
        }
        let s = logits.shape();
        if s.len() != 2 || s[0] != labels.len() || s[1] != k {
            return Err(Error::dim("EvalReport::build", s, &[labels.len(), k]));
        }
        let n = labels.len();
        let preds = argmax_rows(logits);
        let cm = confusion(labels, &preds, k)?;
        let mut probs = logits.clone();
        for row in probs.data_mut().chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        let roc = roc_auc(&probs, labels)?;
        let metrics = prf(&cm);
        let mut warnings = metrics.warnings;
        if n == 0 {
            warnings.push("no samples to evaluate".into());
        }
        for (c, curve) in roc.curves.iter().enumerate() {
            if curve.is_none() {
                warnings.push(format!("AUC undefined for class {}: only one side present", class_names[c]));
            }
        }
        Ok(Self {
            class_names: class_names.to_vec(),
            n,
            accuracy: cm.accuracy(),
            metrics: metrics.value,
            confusion: cm,
            roc,
            warnings,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn summary(&self) -> String {
        format!("n={} accuracy={:.4} macro_f1={:.4}", self.n, self.accuracy, self.metrics.macro_f1)
    }

    /// Key/value header, then per-class, confusion and ROC blocks.
    pub fn to_text(&self) -> String {
        let k = self.num_classes();
        let m = &self.metrics;
        let mut out = String::new();
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "empty = {}", self.n == 0);
        let _ = writeln!(out, "num_classes = {k}");
        let _ = writeln!(out, "classes = {}", self.class_names.join(","));
        let _ = writeln!(out, "averaging = macro");
        let _ = writeln!(out, "accuracy = {}", self.accuracy);
        let _ = writeln!(out, "macro_precision = {}", m.macro_precision);
        let _ = writeln!(out, "macro_recall = {}", m.macro_recall);
        let _ = writeln!(out, "macro_f1 = {}", m.macro_f1);
        match self.roc.macro_auc {
            Some(a) => {
                let _ = writeln!(out, "macro_auc = {a}");
            }
            None => {
                let _ = writeln!(out, "macro_auc = absent");
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning = {w}");
        }
        let _ = writeln!(out, "\n[per_class]\nclass\tprecision\trecall\tf1\tauc");
        for c in 0..k {
            let auc = self.roc.curves[c].as_ref().map_or("absent".to_string(), |r| r.auc.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                self.class_names[c], m.precision[c], m.recall[c], m.f1[c], auc
            );
        }
        let _ = writeln!(out, "\n[confusion_matrix]\n# rows = true, columns = predicted");
        for c in 0..k {
            let row: Vec<String> = self.confusion.row(c).iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}", row.join("\t"));
        }
        for (c, curve) in self.roc.curves.iter().enumerate() {
            let Some(curve) = curve else { continue };
            let _ = writeln!(out, "\n[roc.{}]\nfpr\ttpr", self.class_names[c]);
            for (x, y) in curve.fpr.iter().zip(&curve.tpr) {
                let _ = writeln!(out, "{x}\t{y}");
            }
        }
        out
    }
}
