//! Soft-label tables computed from an annotation log.
//!
//! The campaign service and the offline `postprocess` command both go
//! through [`export_rows`], so the two paths agree byte for byte.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatekeeper::drop_annotators;
use crate::label_model::{group_by_image, AnnotationRecord};
use crate::postprocess::{Method, PostprocessParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub image_id: String,
    pub probs: Vec<f64>,
    pub n_annotations: usize,
    pub method: Method,
}

/// Which records take part in an export.
#[derive(Debug, Clone, Default)]
pub struct ExportFilter {
    /// Restrict to these images; all images when `None`.
    pub images: Option<BTreeSet<String>>,
    pub excluded_annotators: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(Error::InvalidInput(format!("unknown format {other:?}"))),
        }
    }
}

/// One row per image with at least one remaining record, ordered by image id.
pub fn export_rows(
    records: &[AnnotationRecord],
    k: usize,
    params: &PostprocessParams,
    method: Method,
    filter: &ExportFilter,
) -> Result<Vec<ExportRow>> {
    let kept = drop_annotators(records, &filter.excluded_annotators);
    let kept = kept.into_iter().filter(|r| match &filter.images {
        Some(ids) => ids.contains(&r.image_id),
        None => true,
    });
    let sets = group_by_image(kept);
    let cfg = params.resolve(k, sets.values())?;
    sets.values()
        .map(|set| {
            let dist = method.apply(set, &cfg).map_err(|e| match e {
                Error::MixedProposals => Error::InvalidInput(format!(
                    "{method} needs a single proposal per image; image {} has none or several",
                    set.image_id()
                )),
                other => other,
            })?;
            Ok(ExportRow { image_id: set.image_id().to_string(), probs: dist.into(), n_annotations: set.len(), method })
        })
        .collect()
}

pub fn to_csv(rows: &[ExportRow], k: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    let mut header = vec!["image_id".to_string()];
    header.extend((0..k).map(|i| format!("p_{i}")));
    header.push("n_annotations".into());
    header.push("method".into());
    w.write_record(&header).map_err(err)?;
    for row in rows {
        let mut fields = vec![row.image_id.clone()];
        fields.extend(row.probs.iter().map(|p| p.to_string()));
        fields.push(row.n_annotations.to_string());
        fields.push(row.method.to_string());
        w.write_record(&fields).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_jsonl(rows: &[ExportRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("rows serialize"));
        out.push('\n');
    }
    out
}

pub fn render(rows: &[ExportRow], k: usize, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Csv => to_csv(rows, k),
        ExportFormat::Jsonl => Ok(to_jsonl(rows)),
    }
}

/// Parses an annotation log, one JSON record per line. Blank lines are
/// skipped; errors carry the 1-based line number.
pub fn parse_log(text: &str) -> std::result::Result<Vec<AnnotationRecord>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}
