use serde::{Deserialize, Serialize};

use crate::data::{CohortSchema, ColumnKind, EncodedCohort, RawCohort, RawValue};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodeOptions {
    /// Keep only the first `window` waves. `None` keeps all.
    pub window: Option<usize>,
    /// Drop columns whose missing fraction exceeds `max_missing_fraction`.
    pub screen_sparse_columns: bool,
    pub max_missing_fraction: f64,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            window: None,
            screen_sparse_columns: false,
            max_missing_fraction: 0.5,
        }
    }
}

enum Fill {
    Numeric(f64),
    Categorical { categories: Vec<String>, mode: usize },
}

/// Mean/mode imputation followed by one-hot expansion.
///
/// Statistics pool every kept wave of every subject. Mode ties go to the
/// category listed first in the schema.
pub fn impute_and_encode(raw: &RawCohort, schema: &CohortSchema, opts: &EncodeOptions) -> Result<EncodedCohort> {
    schema.validate()?;
    raw.validate(schema)?;
    let waves = match opts.window {
        Some(w) if w == 0 || w > raw.waves => {
            return Err(Error::Config(format!("window {w} outside 1..={}", raw.waves)));
        }
        Some(w) => w,
        None => raw.waves,
    };
    let n = raw.subjects.len();

    let mut kept = Vec::new();
    let mut fills = Vec::new();
    for (c, col) in schema.columns.iter().enumerate() {
        let mut sum = 0.0;
        let mut observed = 0usize;
        let mut counts = match &col.kind {
            ColumnKind::Categorical { categories } => vec![0usize; categories.len()],
            ColumnKind::Numeric => Vec::new(),
        };
        for s in 0..n {
            for t in 0..waves {
                let Some(v) = raw.cell(s, t, c) else { continue };
                observed += 1;
                match (&col.kind, v) {
                    (ColumnKind::Numeric, RawValue::Num(x)) => {
                        if !x.is_finite() {
                            return Err(Error::Schema {
                                column: col.name.clone(),
                                reason: format!("non-finite value {x}"),
                            });
                        }
                        sum += x;
                    }
                    (ColumnKind::Categorical { categories }, RawValue::Cat(name)) => {
                        let k = categories.iter().position(|c| c == name).ok_or_else(|| Error::Schema {
                            column: col.name.clone(),
                            reason: format!("unknown category `{name}`"),
                        })?;
                        counts[k] += 1;
                    }
                    (_, other) => {
                        return Err(Error::Schema {
                            column: col.name.clone(),
                            reason: format!("value {other:?} does not match column kind"),
                        });
                    }
                }
            }
        }
        let total = n * waves;
        let missing_fraction = 1.0 - observed as f64 / total as f64;
        if opts.screen_sparse_columns && missing_fraction > opts.max_missing_fraction {
            continue;
        }
        if observed == 0 {
            return Err(Error::Schema {
                column: col.name.clone(),
                reason: "no observed values to impute from".into(),
            });
        }
        let fill = match &col.kind {
            ColumnKind::Numeric => Fill::Numeric(sum / observed as f64),
            ColumnKind::Categorical { categories } => {
                let mut mode = 0;
                for (k, &cnt) in counts.iter().enumerate() {
                    if cnt > counts[mode] {
                        mode = k;
                    }
                }
                Fill::Categorical {
                    categories: categories.clone(),
                    mode,
                }
            }
        };
        kept.push(c);
        fills.push(fill);
    }
    if kept.is_empty() {
        return Err(Error::Config("feature screening removed every column".into()));
    }

    let mut feature_names = Vec::new();
    let mut groups = Vec::new();
    for (g, (&c, fill)) in kept.iter().zip(&fills).enumerate() {
        let name = &schema.columns[c].name;
        match fill {
            Fill::Numeric(_) => {
                feature_names.push(name.clone());
                groups.push(g);
            }
            Fill::Categorical { categories, .. } => {
                for cat in categories {
                    feature_names.push(format!("{name}={cat}"));
                    groups.push(g);
                }
            }
        }
    }
    let dim = feature_names.len();

    let mut samples = Vec::with_capacity(n);
    for s in 0..n {
        let mut m = Matrix::zeros(waves, dim);
        for t in 0..waves {
            let row = m.row_mut(t);
            let mut offset = 0;
            for (&c, fill) in kept.iter().zip(&fills) {
                match fill {
                    Fill::Numeric(mean) => {
                        row[offset] = match raw.cell(s, t, c) {
                            Some(RawValue::Num(x)) => *x,
                            _ => *mean,
                        };
                        offset += 1;
                    }
                    Fill::Categorical { categories, mode } => {
                        let k = match raw.cell(s, t, c) {
                            Some(RawValue::Cat(name)) => categories.iter().position(|c| c == name).unwrap_or(*mode),
                            _ => *mode,
                        };
                        row[offset + k] = 1.0;
                        offset += categories.len();
                    }
                }
            }
        }
        samples.push(m);
    }

    Ok(EncodedCohort {
        waves,
        dim,
        subject_ids: raw.subjects.iter().map(|s| s.id.clone()).collect(),
        samples,
        labels: raw.labels(),
        feature_names,
        groups,
    })
}
