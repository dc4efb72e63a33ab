//! Newline-delimited JSON score files (`.scores.jsonl`) and the optional
//! per-image mask dump (`.masks.jsonl`).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::ComplexityRecord;
use crate::saliency::ForegroundMask;

/// Relative tolerance on `omega = omega_dom·omega_prot` when loading.
pub const PRODUCT_RTOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScoreFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("score file holds no records")]
    Empty,
}

pub fn write_scores<W: Write>(
    records: &[ComplexityRecord],
    mut sink: W,
) -> Result<(), ScoreFileError> {
    for r in records {
        serde_json::to_writer(&mut sink, r)
            .map_err(|source| ScoreFileError::Json { line: 0, source })?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

fn validate(r: &ComplexityRecord, line: usize) -> Result<(), ScoreFileError> {
    let fail = |message: String| Err(ScoreFileError::Invalid { line, message });
    let fields = [r.r_bg, r.omega_dom, r.omega_prot, r.omega, r.omega_norm];
    if fields.iter().any(|x| !x.is_finite()) {
        return fail("non-finite score".into());
    }
    if !(0.0..=1.0).contains(&r.r_bg) {
        return fail(format!("r_bg {} outside [0, 1]", r.r_bg));
    }
    if !(r.omega_dom > 0.0 && r.omega_dom < 1.0) {
        return fail(format!("omega_dom {} outside (0, 1)", r.omega_dom));
    }
    if r.omega_prot < 0.0 || r.omega < 0.0 {
        return fail("negative omega_prot or omega".into());
    }
    if !(0.0..=1.0).contains(&r.omega_norm) {
        return fail(format!("omega_norm {} outside [0, 1]", r.omega_norm));
    }
    let product = r.omega_dom * r.omega_prot;
    let scale = product.abs().max(r.omega.abs());
    if (product - r.omega).abs() > PRODUCT_RTOL * scale {
        return fail(format!(
            "omega {} disagrees with omega_dom·omega_prot = {product}",
            r.omega
        ));
    }
    Ok(())
}

/// Loads and validates every record. Blank lines are skipped; ids must be
/// unique.
pub fn read_scores<R: BufRead>(source: R) -> Result<Vec<ComplexityRecord>, ScoreFileError> {
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ComplexityRecord =
            serde_json::from_str(&line).map_err(|source| ScoreFileError::Json {
                line: i + 1,
                source,
            })?;
        validate(&rec, i + 1)?;
        if !ids.insert(rec.image_id.clone()) {
            return Err(ScoreFileError::Invalid {
                line: i + 1,
                message: format!("duplicate image id {:?}", rec.image_id),
            });
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(ScoreFileError::Empty);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub image_id: String,
    pub mask: String,
    pub r_bg: f64,
}

pub fn write_masks<W: Write>(
    ids: &[String],
    masks: &[ForegroundMask],
    mut sink: W,
) -> Result<(), ScoreFileError> {
    for (id, m) in ids.iter().zip(masks) {
        let rec = MaskRecord {
            image_id: id.clone(),
            mask: m.bit_string(),
            r_bg: m.bg_ratio(),
        };
        serde_json::to_writer(&mut sink, &rec)
            .map_err(|source| ScoreFileError::Json { line: 0, source })?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}
