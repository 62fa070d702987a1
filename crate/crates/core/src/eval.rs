//! Metrics, batch prediction and vector export.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::corpus::Segment;
use crate::error::{Error, Result};
use crate::kv::format_sig9;
use crate::model::AspectModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub segment_id: usize,
    pub aspect: usize,
    pub aspect_name: String,
    pub probs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub per_aspect: Vec<ClassScores>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn check_lengths(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Shape {
            op: "metrics",
            expected: golds.len(),
            got: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    Ok(())
}

/// Pooled F1 over single-label decisions, which equals accuracy.
pub fn micro_f1(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn confusion_matrix(preds: &[usize], golds: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(preds, golds)?;
    let mut m = vec![vec![0; k]; k];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= k || g >= k {
            return Err(Error::InvalidArgument(format!("label {} outside 0..{k}", p.max(g))));
        }
        m[g][p] += 1;
    }
    Ok(m)
}

/// Precision, recall and F1 per class; every ratio with a zero denominator is 0.
pub fn per_aspect_scores(preds: &[usize], golds: &[usize], k: usize) -> Result<Vec<ClassScores>> {
    let m = confusion_matrix(preds, golds, k)?;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((0..k)
        .map(|c| {
            let tp = m[c][c];
            let predicted: usize = m.iter().map(|row| row[c]).sum();
            let support: usize = m[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect())
}

pub fn per_aspect_f1(preds: &[usize], golds: &[usize], k: usize) -> Result<Vec<f64>> {
    Ok(per_aspect_scores(preds, golds, k)?.into_iter().map(|s| s.f1).collect())
}

pub fn predict_segments(model: &AspectModel, segments: &[Segment]) -> Result<Vec<PredictionRecord>> {
    segments
        .iter()
        .map(|s| {
            let p = model.predict(&s.tokens)?;
            Ok(PredictionRecord {
                segment_id: s.id,
                aspect: p.aspect,
                aspect_name: model.lexicon.names()[p.aspect].clone(),
                probs: p.probs,
                gold: s.label,
            })
        })
        .collect()
}

/// Scores labeled segments. With `exclude_general`, segments whose gold label
/// is the general aspect are dropped before scoring.
pub fn evaluate(model: &AspectModel, segments: &[Segment], exclude_general: bool) -> Result<MetricsReport> {
    let general = model.lexicon.general();
    let labeled: Vec<Segment> = segments
        .iter()
        .filter(|s| s.label.is_some_and(|l| !(exclude_general && l == general)))
        .cloned()
        .collect();
    if labeled.is_empty() {
        return Err(Error::Data("no labeled segments to evaluate".into()));
    }
    let preds: Vec<usize> = predict_segments(model, &labeled)?.iter().map(|r| r.aspect).collect();
    let golds: Vec<usize> = labeled.iter().filter_map(|s| s.label).collect();
    metrics(&preds, &golds, model.num_aspects())
}

pub fn metrics(preds: &[usize], golds: &[usize], k: usize) -> Result<MetricsReport> {
    Ok(MetricsReport {
        micro_f1: micro_f1(preds, golds)?,
        per_aspect: per_aspect_scores(preds, golds, k)?,
        confusion: confusion_matrix(preds, golds, k)?,
    })
}

/// `name value` lines; per-aspect lines only when asked for.
pub fn format_metrics(report: &MetricsReport, names: &[String], per_aspect: bool) -> String {
    let mut out = format!("micro_f1 {:.4}\n", report.micro_f1);
    if per_aspect {
        for (name, s) in names.iter().zip(&report.per_aspect) {
            let _ = writeln!(out, "precision_{name} {:.4}", s.precision);
            let _ = writeln!(out, "recall_{name} {:.4}", s.recall);
            let _ = writeln!(out, "f1_{name} {:.4}", s.f1);
            let _ = writeln!(out, "support_{name} {}", s.support);
        }
    }
    out
}

pub fn format_confusion_csv(report: &MetricsReport, names: &[String]) -> String {
    let mut out = format!("gold\\predicted,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&report.confusion) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{name},{}", cells.join(","));
    }
    out
}

/// CSV `segment_id,aspect,p_<name>...`.
pub fn format_predictions_csv(records: &[PredictionRecord], names: &[String]) -> String {
    let mut out = String::from("segment_id,aspect");
    for n in names {
        let _ = write!(out, ",p_{n}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{}", r.segment_id, r.aspect_name);
        for p in &r.probs {
            let _ = write!(out, ",{}", format_sig9(*p));
        }
        out.push('\n');
    }
    out
}

pub fn format_predictions_jsonl(records: &[PredictionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// CSV `segment_id,label,v_1..v_d` of segment vectors as the model sees them.
pub fn format_vectors(model: &AspectModel, segments: &[Segment]) -> Result<String> {
    let mut out = String::from("segment_id,label");
    for i in 1..=model.dim() {
        let _ = write!(out, ",v_{i}");
    }
    out.push('\n');
    for s in segments {
        let v = model.segment_embedding(&s.tokens)?;
        let label = s.label.map_or("", |l| model.lexicon.names()[l].as_str());
        let _ = write!(out, "{},{label}", s.id);
        for x in v {
            let _ = write!(out, ",{}", format_sig9(x));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_vectors(model: &AspectModel, segments: &[Segment], path: &Path) -> Result<()> {
    let text = format_vectors(model, segments)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
