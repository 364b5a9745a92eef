use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::shapes::{infer_shapes, LayerKind};
use super::spec::{count_parameters, ConvLayerSpec, LayerRef, NetworkSpec, SkipMode, TensorShape};
use super::tables;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Match,
    /// Differs from the printed count in the way concatenated skips predict.
    Documented,
    Mismatch,
    NotPrinted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRow {
    pub name: String,
    pub kind: LayerKind,
    pub computed: u64,
    pub printed: Option<u64>,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A printed feature-map size that disagrees with the inferred shape chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeDiscrepancy {
    pub name: String,
    pub printed: TensorShape,
    pub inferred: TensorShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamAudit {
    pub skip_mode: SkipMode,
    pub rows: Vec<AuditRow>,
    pub discrepancies: Vec<ShapeDiscrepancy>,
    /// Set when the spec does not survive shape inference.
    pub shape_error: Option<String>,
    pub total_computed: u64,
}

impl ParamAudit {
    /// Parameter-bearing rows that have a printed count.
    pub fn audited_rows(&self) -> impl Iterator<Item = &AuditRow> {
        self.rows.iter().filter(|r| {
            r.printed.is_some() && matches!(r.kind, LayerKind::Conv | LayerKind::GroupedConv)
        })
    }

    pub fn mismatches(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r.status, RowStatus::Mismatch | RowStatus::Documented))
            .count()
    }

    pub fn unexplained_mismatches(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.status == RowStatus::Mismatch)
            .count()
    }

    pub fn is_clean(&self) -> bool {
        self.unexplained_mismatches() == 0 && self.shape_error.is_none()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "parameter audit (skip mode: {})", self.skip_mode);
        let _ = writeln!(
            out,
            "{:<22} {:<13} {:>10} {:>10}  status",
            "layer", "kind", "computed", "printed"
        );
        for r in &self.rows {
            let printed = r.printed.map_or_else(|| "-".to_string(), |p| p.to_string());
            let status = match r.status {
                RowStatus::Match => "ok",
                RowStatus::Documented => "documented deviation",
                RowStatus::Mismatch => "MISMATCH",
                RowStatus::NotPrinted => "not printed",
            };
            let _ = write!(
                out,
                "{:<22} {:<13} {:>10} {:>10}  {status}",
                r.name,
                format!("{:?}", r.kind),
                r.computed,
                printed
            );
            if let Some(note) = &r.note {
                let _ = write!(out, " ({note})");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "total parameters: {}   audited rows: {}   mismatches: {} ({} unexplained)",
            self.total_computed,
            self.audited_rows().count(),
            self.mismatches(),
            self.unexplained_mismatches()
        );
        if let Some(err) = &self.shape_error {
            let _ = writeln!(out, "shape inference failed: {err}");
        }
        if !self.discrepancies.is_empty() {
            let _ = writeln!(out, "printed feature-map sizes not reproduced:");
            for d in &self.discrepancies {
                let _ = writeln!(
                    out,
                    "  {:<20} printed {:<12} inferred {}",
                    d.name,
                    d.printed.to_string(),
                    d.inferred
                );
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "kind", "computed", "printed", "status", "note"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                format!("{:?}", r.kind).to_lowercase(),
                r.computed.to_string(),
                r.printed.map(|p| p.to_string()).unwrap_or_default(),
                serde_json::to_value(r.status)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
                r.note.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

fn kind_of(layer: &LayerRef<'_>) -> LayerKind {
    match layer {
        LayerRef::Conv(_) => LayerKind::Conv,
        LayerRef::Grouped(_) => LayerKind::GroupedConv,
        LayerRef::Pool(_) => LayerKind::Pool,
        LayerRef::Unpool(_) => LayerKind::Unpool,
        LayerRef::Fold(_) => LayerKind::Fold,
        LayerRef::Head(_) => LayerKind::Head,
    }
}

/// Channels contributed by the skip path into the decoder block owning `conv`.
fn skip_channels_for(spec: &NetworkSpec, conv: &ConvLayerSpec) -> Option<usize> {
    let block = spec.decoder.iter().find(|b| b.conv.name == conv.name)?;
    let skip = spec.skip_into(block.level)?;
    spec.encoder
        .get(skip.encoder_block.checked_sub(1)?)
        .map(|b| b.conv.out_channels)
}

/// Compares each layer's parameter count with the published tables.
pub fn audit_against_tables(spec: &NetworkSpec) -> ParamAudit {
    let mut rows = Vec::new();
    for layer in spec.layers() {
        let computed = count_parameters(layer);
        let printed = tables::lookup(layer.name()).map(|r| r.params);
        let mut note = None;
        let status = match printed {
            None => RowStatus::NotPrinted,
            Some(p) if p == computed => RowStatus::Match,
            Some(p) => {
                let documented = match layer {
                    LayerRef::Conv(conv) if spec.skip_mode == SkipMode::Concat => {
                        skip_channels_for(spec, conv).is_some_and(|skip| {
                            let unmerged = ConvLayerSpec {
                                in_channels: conv.in_channels.saturating_sub(skip),
                                ..conv.clone()
                            };
                            count_parameters(LayerRef::Conv(&unmerged)) == p
                        })
                    }
                    _ => false,
                };
                if documented {
                    note = Some(format!(
                        "concatenated skip widens input; delta {:+}",
                        computed as i64 - p as i64
                    ));
                    RowStatus::Documented
                } else {
                    RowStatus::Mismatch
                }
            }
        };
        rows.push(AuditRow {
            name: layer.name().to_string(),
            kind: kind_of(&layer),
            computed,
            printed,
            status,
            note,
        });
    }

    let (discrepancies, shape_error) = match infer_shapes(spec, spec.input) {
        Ok(trace) if spec.input == tables::TABLE_INPUT => {
            let found = tables::ENCODER_TABLE
                .iter()
                .chain(tables::DECODER_TABLE.iter())
                .filter_map(|row| {
                    let inferred = trace.get(row.name)?;
                    (inferred != row.shape).then(|| ShapeDiscrepancy {
                        name: row.name.to_string(),
                        printed: row.shape,
                        inferred,
                    })
                })
                .collect();
            (found, None)
        }
        Ok(_) => (Vec::new(), None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };

    ParamAudit {
        skip_mode: spec.skip_mode,
        total_computed: rows.iter().map(|r| r.computed).sum(),
        rows,
        discrepancies,
        shape_error,
    }
}
