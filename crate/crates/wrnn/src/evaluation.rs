//! Confusion matrix, per-class and macro precision/recall/F1, and
//! multi-model comparison tables.

use std::fmt::Write as _;

use crate::{Error, Result};

/// Rows are true classes, columns are predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        assert!(classes > 0);
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.count(c, p)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.count(t, c)).sum()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "confusion: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(labels.iter()) {
        if p >= classes || t >= classes {
            return Err(Error::Data(format!(
                "confusion: class id out of range (pred {p}, label {t}, classes {classes})"
            )));
        }
        m.add(t, p);
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub accuracy: f64,
    pub mean_loss: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    // 0/0 convention: zero (conservative)
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1, macro averages over classes present
/// in the labels, and overall accuracy.
pub fn metrics(m: &ConfusionMatrix, losses: &[f64]) -> Result<MetricsReport> {
    let total = m.total();
    if total == 0 {
        return Err(Error::Data("metrics: empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(m.classes());
    let mut macro_p = 0.0;
    let mut macro_r = 0.0;
    let mut macro_f = 0.0;
    let mut present = 0usize;
    let mut trace = 0u64;
    for c in 0..m.classes() {
        let tp = m.count(c, c);
        trace += tp;
        let precision = ratio(tp, m.col_sum(c));
        let recall = ratio(tp, m.row_sum(c));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics { precision, recall, f1 });
        if m.row_sum(c) > 0 {
            present += 1;
            macro_p += precision;
            macro_r += recall;
            macro_f += f1;
        }
    }
    let present = present.max(1) as f64;
    let mean_loss = if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    Ok(MetricsReport {
        per_class,
        precision_macro: macro_p / present,
        recall_macro: macro_r / present,
        f1_macro: macro_f / present,
        accuracy: trace as f64 / total as f64,
        mean_loss,
    })
}

/// One comparison row per model, sorted by descending macro-F1 (ties by
/// name). Rendered as CSV and as an aligned text table.
pub struct Comparison {
    pub rows: Vec<(String, MetricsReport)>,
}

pub fn compare_models(mut reports: Vec<(String, MetricsReport)>) -> Comparison {
    reports.sort_by(|a, b| {
        b.1.f1_macro
            .partial_cmp(&a.1.f1_macro)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Comparison { rows: reports }
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("model,precision_macro,recall_macro,f1_macro,accuracy,test_loss\n");
        for (name, r) in &self.rows {
            let _ = writeln!(
                out,
                "{name},{:.4},{:.4},{:.4},{:.4},{:.4}",
                r.precision_macro, r.recall_macro, r.f1_macro, r.accuracy, r.mean_loss
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "model", "prec", "recall", "f1", "accuracy", "loss"
        );
        for (name, r) in &self.rows {
            let _ = writeln!(
                out,
                "{name:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                r.precision_macro, r.recall_macro, r.f1_macro, r.accuracy, r.mean_loss
            );
        }
        out
    }
}

/// One comparison row after multi-seed aggregation: repeated model
/// names collapse to the metric mean, with sample standard deviations
/// alongside (zero for single runs).
pub struct AggregateRow {
    pub model: String,
    pub runs: usize,
    pub mean: MetricsReport,
    pub sd_precision: f64,
    pub sd_recall: f64,
    pub sd_f1: f64,
    pub sd_accuracy: f64,
    pub sd_loss: f64,
}

/// Group reports by model name (multi-seed runs of the same model),
/// averaging each macro metric. Rows sort by descending mean macro-F1,
/// ties by name, matching `compare_models`.
pub fn aggregate_runs(reports: Vec<(String, MetricsReport)>) -> Vec<AggregateRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<MetricsReport>> =
        std::collections::HashMap::new();
    for (name, r) in reports {
        if !groups.contains_key(&name) {
            order.push(name.clone());
        }
        groups.entry(name).or_default().push(r);
    }
    let mut rows: Vec<AggregateRow> = order
        .into_iter()
        .map(|model| {
            let rs = groups.remove(&model).unwrap();
            let n = rs.len() as f64;
            let stat = |f: fn(&MetricsReport) -> f64| -> (f64, f64) {
                let mean = rs.iter().map(f).sum::<f64>() / n;
                let sd = if rs.len() < 2 {
                    0.0
                } else {
                    (rs.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                };
                (mean, sd)
            };
            let (p, sd_p) = stat(|r| r.precision_macro);
            let (r_, sd_r) = stat(|r| r.recall_macro);
            let (f1, sd_f1) = stat(|r| r.f1_macro);
            let (a, sd_a) = stat(|r| r.accuracy);
            let (l, sd_l) = stat(|r| r.mean_loss);
            AggregateRow {
                model,
                runs: rs.len(),
                mean: MetricsReport {
                    per_class: Vec::new(),
                    precision_macro: p,
                    recall_macro: r_,
                    f1_macro: f1,
                    accuracy: a,
                    mean_loss: l,
                },
                sd_precision: sd_p,
                sd_recall: sd_r,
                sd_f1: sd_f1,
                sd_accuracy: sd_a,
                sd_loss: sd_l,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean
            .f1_macro
            .partial_cmp(&a.mean.f1_macro)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.model.cmp(&b.model))
    });
    rows
}

/// Aligned text table; multi-run rows show mean+-sd per metric.
pub fn aggregate_text(rows: &[AggregateRow]) -> String {
    let multi = rows.iter().any(|r| r.runs > 1);
    let cell = |mean: f64, sd: f64, runs: usize| {
        if multi && runs > 1 {
            format!("{mean:.4}+-{sd:.4}")
        } else {
            format!("{mean:.4}")
        }
    };
    let w = if multi { 16 } else { 9 };
    let mut out = format!(
        "{:<12} {:>4} {:>w$} {:>w$} {:>w$} {:>w$} {:>w$}\n",
        "model", "runs", "prec", "recall", "f1", "accuracy", "loss"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>4} {:>w$} {:>w$} {:>w$} {:>w$} {:>w$}",
            r.model,
            r.runs,
            cell(r.mean.precision_macro, r.sd_precision, r.runs),
            cell(r.mean.recall_macro, r.sd_recall, r.runs),
            cell(r.mean.f1_macro, r.sd_f1, r.runs),
            cell(r.mean.accuracy, r.sd_accuracy, r.runs),
            cell(r.mean.mean_loss, r.sd_loss, r.runs),
        );
    }
    out
}

/// `model,class,precision,recall,f1` rows.
pub fn per_class_csv(model: &str, report: &MetricsReport) -> String {
    let mut out = String::from("model,class,precision,recall,f1\n");
    for (c, m) in report.per_class.iter().enumerate() {
        let _ = writeln!(out, "{model},{c},{:.4},{:.4},{:.4}", m.precision, m.recall, m.f1);
    }
    out
}
