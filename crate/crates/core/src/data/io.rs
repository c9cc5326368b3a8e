//! File formats for cohorts.
//!
//! * Schema: JSON, `{"waves": w, "columns": [{"name", "kind", "categories"?}]}`.
//! * Raw panel: CSV with header `subject_id,wave,<schema columns...>`, one
//!   row per (subject, wave), waves numbered from 1, empty field = missing.
//! * Labels: CSV `subject_id,label`.
//! * Archetypes: CSV `subject_id,label,archetype`, archetype empty for negatives.
//! * Encoded cohort (binary, little-endian):
//!
//!   | bytes        | content                                        |
//!   |--------------|------------------------------------------------|
//!   | 0..4         | magic `MTEC`                                   |
//!   | 4            | format version                                 |
//!   | 5..13        | u64 length `H` of the JSON header              |
//!   | 13..13+H     | JSON header: n, waves, dim, subject_ids, labels, feature_names, groups |
//!   | rest         | `n·waves·dim` f64 values, subject-major, then wave, then feature |

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CohortSchema, ColumnKind, EncodedCohort, RawCohort, RawValue, SubjectRecord};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const ENCODED_MAGIC: &[u8; 4] = b"MTEC";
pub const ENCODED_VERSION: u8 = 1;

pub fn write_schema(path: &Path, schema: &CohortSchema) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, schema)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_schema(path: &Path) -> Result<CohortSchema> {
    let schema: CohortSchema = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    schema.validate()?;
    Ok(schema)
}

pub fn write_raw_csv(path: &Path, raw: &RawCohort, schema: &CohortSchema) -> Result<()> {
    raw.validate(schema)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["subject_id".to_string(), "wave".to_string()];
    header.extend(schema.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for s in &raw.subjects {
        for t in 0..raw.waves {
            let mut record = vec![s.id.clone(), (t + 1).to_string()];
            for c in 0..raw.columns {
                record.push(match &s.cells[t * raw.columns + c] {
                    None => String::new(),
                    Some(RawValue::Num(x)) => x.to_string(),
                    Some(RawValue::Cat(k)) => k.clone(),
                });
            }
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a raw panel and attaches labels by subject id. Subjects keep the
/// order of their first appearance in the panel.
pub fn read_raw_csv(path: &Path, labels_path: &Path, schema: &CohortSchema) -> Result<RawCohort> {
    schema.validate()?;
    let labels = read_labels(labels_path)?;
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let expected: Vec<&str> = ["subject_id", "wave"]
        .into_iter()
        .chain(schema.columns.iter().map(|c| c.name.as_str()))
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema {
            column: "<header>".into(),
            reason: format!("expected columns {expected:?}, found {:?}", header.iter().collect::<Vec<_>>()),
        });
    }

    let n_cols = schema.columns.len();
    let w = schema.waves;
    let mut order: Vec<String> = Vec::new();
    let mut grids: HashMap<String, (Vec<Option<RawValue>>, Vec<bool>)> = HashMap::new();
    for record in r.records() {
        let record = record?;
        let id = record[0].to_string();
        let wave: usize = record[1].parse().map_err(|_| Error::Schema {
            column: "wave".into(),
            reason: format!("invalid wave `{}` for subject {id}", &record[1]),
        })?;
        if wave == 0 || wave > w {
            return Err(Error::Schema {
                column: "wave".into(),
                reason: format!("wave {wave} outside 1..={w} for subject {id}"),
            });
        }
        let (cells, seen) = grids.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (vec![None; w * n_cols], vec![false; w])
        });
        if std::mem::replace(&mut seen[wave - 1], true) {
            return Err(Error::Schema {
                column: "wave".into(),
                reason: format!("subject {id} has wave {wave} twice"),
            });
        }
        for (c, col) in schema.columns.iter().enumerate() {
            let field = &record[c + 2];
            if field.is_empty() {
                continue;
            }
            let value = match &col.kind {
                ColumnKind::Numeric => RawValue::Num(field.parse().map_err(|_| Error::Schema {
                    column: col.name.clone(),
                    reason: format!("non-numeric value `{field}`"),
                })?),
                ColumnKind::Categorical { categories } => {
                    if !categories.iter().any(|k| k == field) {
                        return Err(Error::Schema {
                            column: col.name.clone(),
                            reason: format!("unknown category `{field}`"),
                        });
                    }
                    RawValue::Cat(field.to_string())
                }
            };
            cells[(wave - 1) * n_cols + c] = Some(value);
        }
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let (cells, seen) = grids.remove(&id).expect("every ordered id has a grid");
        if let Some(t) = seen.iter().position(|s| !s) {
            return Err(Error::Schema {
                column: "wave".into(),
                reason: format!("subject {id} is missing wave {}", t + 1),
            });
        }
        let label = *labels.get(&id).ok_or_else(|| Error::Schema {
            column: "label".into(),
            reason: format!("no label for subject {id}"),
        })?;
        subjects.push(SubjectRecord { id, label, cells });
    }
    let raw = RawCohort {
        waves: w,
        columns: n_cols,
        subjects,
    };
    raw.validate(schema)?;
    Ok(raw)
}

pub fn write_labels(path: &Path, ids: &[String], labels: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject_id", "label"])?;
    for (id, y) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<HashMap<String, u8>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for record in r.records() {
        let record = record?;
        let y = match &record[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Schema {
                    column: "label".into(),
                    reason: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        out.insert(record[0].to_string(), y);
    }
    Ok(out)
}

pub fn write_archetypes(path: &Path, raw: &RawCohort, archetypes: &[Option<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject_id", "label", "archetype"])?;
    for (s, a) in raw.subjects.iter().zip(archetypes) {
        let a = a.map(|k| k.to_string()).unwrap_or_default();
        w.write_record([s.id.as_str(), &s.label.to_string(), &a])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EncodedHeader {
    n: usize,
    waves: usize,
    dim: usize,
    subject_ids: Vec<String>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    groups: Vec<usize>,
}

pub fn write_encoded(path: &Path, cohort: &EncodedCohort) -> Result<()> {
    cohort.validate()?;
    let header = serde_json::to_vec(&EncodedHeader {
        n: cohort.len(),
        waves: cohort.waves,
        dim: cohort.dim,
        subject_ids: cohort.subject_ids.clone(),
        labels: cohort.labels.clone(),
        feature_names: cohort.feature_names.clone(),
        groups: cohort.groups.clone(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ENCODED_MAGIC)?;
    w.write_all(&[ENCODED_VERSION])?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for sample in &cohort.samples {
        for x in sample.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_encoded(path: &Path) -> Result<EncodedCohort> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let body = check_container(&bytes, ENCODED_MAGIC, ENCODED_VERSION, "encoded cohort")?;
    let (header, payload) = split_header(body, "encoded cohort")?;
    let h: EncodedHeader = serde_json::from_slice(header)?;
    let per = h.waves * h.dim;
    let values = read_f64s(payload, h.n * per, "encoded cohort")?;
    let samples = if per == 0 {
        Vec::new()
    } else {
        values
            .chunks_exact(per)
            .map(|c| Matrix::from_vec(h.waves, h.dim, c.to_vec()))
            .collect::<Result<Vec<_>>>()?
    };
    let cohort = EncodedCohort {
        waves: h.waves,
        dim: h.dim,
        subject_ids: h.subject_ids,
        samples,
        labels: h.labels,
        feature_names: h.feature_names,
        groups: h.groups,
    };
    cohort.validate().map_err(|e| Error::Corrupt(format!("encoded cohort: {e}")))?;
    Ok(cohort)
}

/// Checks magic and version; returns the bytes after the version byte.
pub(crate) fn check_container<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u8, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < 5 {
        return Err(Error::Corrupt(format!("{what}: file too short")));
    }
    if &bytes[..4] != magic {
        return Err(Error::Corrupt(format!("{what}: bad magic bytes")));
    }
    if bytes[4] != version {
        return Err(Error::Version {
            found: bytes[4],
            expected: version,
        });
    }
    Ok(&bytes[5..])
}

/// Splits a `u64 length + JSON` prefix from the payload that follows it.
pub(crate) fn split_header<'a>(body: &'a [u8], what: &str) -> Result<(&'a [u8], &'a [u8])> {
    if body.len() < 8 {
        return Err(Error::Corrupt(format!("{what}: truncated header length")));
    }
    let len = u64::from_le_bytes(body[..8].try_into().expect("8 bytes")) as usize;
    let rest = &body[8..];
    if rest.len() < len {
        return Err(Error::Corrupt(format!("{what}: truncated metadata")));
    }
    Ok(rest.split_at(len))
}

/// Decodes exactly `count` little-endian f64 values.
pub(crate) fn read_f64s(payload: &[u8], count: usize, what: &str) -> Result<Vec<f64>> {
    if payload.len() != count * 8 {
        return Err(Error::Corrupt(format!(
            "{what}: payload has {} bytes, expected {}",
            payload.len(),
            count * 8
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect())
}
