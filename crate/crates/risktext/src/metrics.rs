//! Confusion matrices, per-class and macro precision/recall/F1, and
//! risk-distribution summaries.
//!
//! Conventions: a metric with a zero denominator is 0, and macro averages
//! always divide by the full four-class label set even when classes are
//! empty.

use serde::{Deserialize, Serialize};

use crate::corpus::RiskLevel;
use crate::error::{Error, Result};

/// 4x4 count matrix; rows are gold labels, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }
}

/// Precision/recall/F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: RiskLevel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Unweighted means of the four per-class metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Tallies predictions against gold labels.
pub fn confusion_matrix(preds: &[RiskLevel], golds: &[RiskLevel]) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::Validation(format!(
            "prediction/gold length mismatch: {} vs {}",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Validation("cannot tally zero predictions".into()));
    }
    let mut counts = [[0u64; 4]; 4];
    for (p, g) in preds.iter().zip(golds) {
        counts[g.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// F1 from precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    safe_div(2.0 * precision * recall, precision + recall)
}

/// Per-class precision, recall, and F1 in label order.
pub fn per_class_prf(cm: &ConfusionMatrix) -> [ClassMetrics; 4] {
    let mut out = [ClassMetrics {
        label: RiskLevel::NoRisk,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    }; 4];
    for (c, m) in out.iter_mut().enumerate() {
        let tp = cm.counts[c][c] as f64;
        let precision = safe_div(tp, cm.col_sum(c) as f64);
        let recall = safe_div(tp, cm.row_sum(c) as f64);
        *m = ClassMetrics {
            label: RiskLevel::from_index(c).unwrap(),
            precision,
            recall,
            f1: f1_score(precision, recall),
        };
    }
    out
}

/// Unweighted mean over a fixed set of per-class values.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Macro precision/recall/F1: the unweighted mean over all four classes,
/// empty classes included.
pub fn macro_prf(cm: &ConfusionMatrix) -> MacroMetrics {
    let per_class = per_class_prf(cm);
    MacroMetrics {
        macro_precision: macro_average(&per_class.map(|m| m.precision)),
        macro_recall: macro_average(&per_class.map(|m| m.recall)),
        macro_f1: macro_average(&per_class.map(|m| m.f1)),
    }
}

/// Per-class prediction fractions plus the no-risk / any-risk split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDistribution {
    pub fractions: [f64; 4],
    pub no_risk: f64,
    pub any_risk: f64,
    pub total: usize,
}

/// Fractions of predictions per class; errors on empty input.
pub fn risk_distribution(preds: &[RiskLevel]) -> Result<RiskDistribution> {
    if preds.is_empty() {
        return Err(Error::Validation(
            "cannot compute a distribution over zero predictions".into(),
        ));
    }
    let mut counts = [0usize; 4];
    for p in preds {
        counts[p.index()] += 1;
    }
    let total = preds.len();
    let fractions = counts.map(|c| c as f64 / total as f64);
    let no_risk = fractions[0];
    Ok(RiskDistribution {
        fractions,
        no_risk,
        any_risk: 1.0 - no_risk,
        total,
    })
}

/// Full evaluation report as emitted per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub confusion_matrix: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub macro_metrics: MacroMetrics,
    pub risk_distribution: RiskDistribution,
}

impl EvalReport {
    pub const VERSION: u32 = 1;

    pub fn from_predictions(preds: &[RiskLevel], golds: &[RiskLevel]) -> Result<EvalReport> {
        let cm = confusion_matrix(preds, golds)?;
        let per_class = per_class_prf(&cm).to_vec();
        let macro_metrics = macro_prf(&cm);
        let dist = risk_distribution(preds)?;
        Ok(EvalReport {
            version: Self::VERSION,
            confusion_matrix: cm,
            per_class,
            macro_metrics,
            risk_distribution: dist,
        })
    }

    /// Plain-text rendering: confusion matrix, class-wise "P/R/F1" triples,
    /// macro row, and the risk-distribution section.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Confusion matrix (rows = gold, cols = predicted)\n");
        out.push_str("       a      b      c      d\n");
        for (r, row) in self.confusion_matrix.counts.iter().enumerate() {
            out.push_str(&format!(
                "{}  {:>5}  {:>5}  {:>5}  {:>5}\n",
                RiskLevel::from_index(r).unwrap().letter(),
                row[0],
                row[1],
                row[2],
                row[3]
            ));
        }
        out.push_str("\nClass-wise metrics (P/R/F1)\n");
        for m in &self.per_class {
            out.push_str(&format!(
                "{}  {:.3}/{:.3}/{:.3}\n",
                m.label.letter(),
                m.precision,
                m.recall,
                m.f1
            ));
        }
        out.push_str(&format!(
            "\nMacro (P/R/F1): {:.3}/{:.3}/{:.3}\n",
            self.macro_metrics.macro_precision,
            self.macro_metrics.macro_recall,
            self.macro_metrics.macro_f1
        ));
        let d = &self.risk_distribution;
        out.push_str(&format!(
            "\nRisk distribution over {} users\n  a {:.2}%  b {:.2}%  c {:.2}%  d {:.2}%\n",
            d.total,
            d.fractions[0] * 100.0,
            d.fractions[1] * 100.0,
            d.fractions[2] * 100.0,
            d.fractions[3] * 100.0
        ));
        out.push_str(&format!(
            "  no-risk {:.2}%  any-risk {:.2}%\n",
            d.no_risk * 100.0,
            d.any_risk * 100.0
        ));
        out
    }
}
