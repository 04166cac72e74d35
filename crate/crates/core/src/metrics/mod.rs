//! Evaluation metrics: confusion matrix, precision/recall/F1, one-vs-rest
//! ROC with AUC, a PCA projection for feature plots, and the text report.

mod classification;
mod pca;
mod report;
mod roc;

pub use classification::{confusion, prf, ClassMetrics, ConfusionMatrix};
pub use pca::project_features;
pub use report::EvalReport;
pub use roc::{roc_auc, RocCurve, RocResult};
