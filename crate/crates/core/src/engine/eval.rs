use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::predict::resize_labels;
use super::{EngineError, Segmenter};
use crate::data::FundusSample;
use crate::metrics::{aggregate, compute_cdr, evaluate_pair, SegMetrics};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub od: SegMetrics,
    pub oc: SegMetrics,
    /// Predicted vertical CDR; `None` when no disc was detected.
    pub cdr: Option<f64>,
    pub screen_positive: Option<bool>,
    pub gt_cdr: Option<f64>,
}

/// Per-image metrics and their unweighted means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub od: SegMetrics,
    pub oc: SegMetrics,
}

fn metrics_object(m: &SegMetrics, fields: &[&str]) -> Value {
    let mut obj = Map::new();
    for (name, v) in SegMetrics::FIELDS.iter().zip(m.values()) {
        if fields.contains(name) {
            obj.insert(name.to_string(), json!(v));
        }
    }
    Value::Object(obj)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self, EngineError> {
        let od = aggregate(&rows.iter().map(|r| r.od).collect::<Vec<_>>())?;
        let oc = aggregate(&rows.iter().map(|r| r.oc).collect::<Vec<_>>())?;
        Ok(Self { rows, od, oc })
    }

    /// One row per image followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for s in ["OD", "OC"] {
            for f in SegMetrics::FIELDS {
                write!(out, ",{s}_{f}").expect("string write");
            }
        }
        out.push_str(",cdr,screen_positive,gt_cdr\n");
        let mut line = |id: &str, od: &SegMetrics, oc: &SegMetrics, tail: [String; 3]| {
            out.push_str(id);
            for v in od.values().iter().chain(oc.values().iter()) {
                write!(out, ",{v}").expect("string write");
            }
            writeln!(out, ",{}", tail.join(",")).expect("string write");
        };
        for r in &self.rows {
            line(
                &r.id,
                &r.od,
                &r.oc,
                [opt(r.cdr), opt(r.screen_positive), opt(r.gt_cdr)],
            );
        }
        line("mean", &self.od, &self.oc, Default::default());
        out
    }

    /// Structured document: per-image rows, the DC/JC/Sen/Sp aggregate per
    /// structure, and the E/BA pair per structure.
    pub fn to_json(&self) -> String {
        let all = SegMetrics::FIELDS;
        let per_image: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "id": r.id,
                    "OD": metrics_object(&r.od, &all),
                    "OC": metrics_object(&r.oc, &all),
                    "cdr": r.cdr,
                    "screen_positive": r.screen_positive,
                    "gt_cdr": r.gt_cdr,
                })
            })
            .collect();
        let overlap = ["DC", "JC", "Sen", "Sp"];
        let error = ["E", "BA"];
        let doc = json!({
            "images": self.rows.len(),
            "aggregate": {
                "OD": metrics_object(&self.od, &overlap),
                "OC": metrics_object(&self.oc, &overlap),
            },
            "error_accuracy": {
                "OD": metrics_object(&self.od, &error),
                "OC": metrics_object(&self.oc, &error),
            },
            "per_image": per_image,
        });
        serde_json::to_string_pretty(&doc).expect("json document") + "\n"
    }

    /// Aggregate row in the order OD DC JC Sen Sp, OC DC JC Sen Sp, then E and BA
    /// for OD and OC, as percentages.
    pub fn summary(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let mut cols = Vec::new();
        for m in [&self.od, &self.oc] {
            cols.extend([m.dice, m.jaccard, m.sensitivity, m.specificity].map(pct));
        }
        format!(
            "OD DC/JC/Sen/Sp {} | OC DC/JC/Sen/Sp {} | OD E/BA {:.4}/{:.4} | OC E/BA {:.4}/{:.4}",
            cols[..4].join("/"),
            cols[4..].join("/"),
            self.od.overlap_error,
            self.od.balanced_accuracy,
            self.oc.overlap_error,
            self.oc.balanced_accuracy
        )
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), EngineError> {
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        fs::write(dir.join(format!("{stem}.json")), self.to_json())?;
        Ok(())
    }
}

/// Segments every sample and scores it at ground-truth resolution.
pub fn evaluate(
    segmenter: &dyn Segmenter,
    samples: &[FundusSample],
) -> Result<EvalReport, EngineError> {
    if samples.is_empty() {
        return Err(EngineError::EmptySet("evaluation"));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let seg = segmenter.segment(&s.image)?;
        let pred = resize_labels(&seg.labels, s.labels.dimensions())?;
        let pair = evaluate_pair(&pred, &s.labels)?;
        let cdr = compute_cdr(&pred).ok();
        rows.push(EvalRow {
            id: s.id.clone(),
            od: pair.od,
            oc: pair.oc,
            cdr: cdr.map(|c| c.cdr),
            screen_positive: cdr.map(|c| c.screen_positive),
            gt_cdr: compute_cdr(&s.labels).ok().map(|c| c.cdr),
        });
    }
    EvalReport::from_rows(rows)
}
