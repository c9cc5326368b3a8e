//! Longitudinal cohort data: schema, raw and encoded representations,
//! preprocessing, splitting and the synthetic cohort generator.

mod encode;
pub mod io;
mod split;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub use encode::{impute_and_encode, EncodeOptions};
pub use split::{largest_remainder, stratified_split, NestedSubsampler, SplitIndices};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCohort};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn numeric(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical {
                categories: categories.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    /// Number of encoded dimensions this column expands to.
    pub fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical { categories } => categories.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSchema {
    pub waves: usize,
    pub columns: Vec<Column>,
}

impl CohortSchema {
    pub fn validate(&self) -> Result<()> {
        if self.waves == 0 {
            return Err(Error::Config("schema must have at least one wave".into()));
        }
        if self.columns.is_empty() {
            return Err(Error::Config("schema has no columns".into()));
        }
        let mut seen = HashSet::new();
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema {
                    column: col.name.clone(),
                    reason: "duplicate column name".into(),
                });
            }
            if let ColumnKind::Categorical { categories } = &col.kind {
                if categories.len() < 2 {
                    return Err(Error::Schema {
                        column: col.name.clone(),
                        reason: "categorical columns need at least 2 categories".into(),
                    });
                }
                let unique: HashSet<_> = categories.iter().collect();
                if unique.len() != categories.len() {
                    return Err(Error::Schema {
                        column: col.name.clone(),
                        reason: "duplicate category".into(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn encoded_dim(&self) -> usize {
        self.columns.iter().map(Column::width).sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Num(f64),
    Cat(String),
}

/// One subject: `waves × columns` cells in wave-major order; `None` is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub label: u8,
    pub cells: Vec<Option<RawValue>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCohort {
    pub waves: usize,
    pub columns: usize,
    pub subjects: Vec<SubjectRecord>,
}

impl RawCohort {
    pub fn cell(&self, subject: usize, wave: usize, column: usize) -> Option<&RawValue> {
        self.subjects[subject].cells[wave * self.columns + column].as_ref()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.subjects
            .iter()
            .flat_map(|s| &s.cells)
            .filter(|c| c.is_none())
            .count()
    }

    pub fn validate(&self, schema: &CohortSchema) -> Result<()> {
        if self.waves != schema.waves || self.columns != schema.columns.len() {
            return Err(Error::Config(format!(
                "raw cohort is {} waves x {} columns, schema says {} x {}",
                self.waves,
                self.columns,
                schema.waves,
                schema.columns.len()
            )));
        }
        for s in &self.subjects {
            if s.label > 1 {
                return Err(Error::Label(s.label));
            }
            if s.cells.len() != self.waves * self.columns {
                return Err(Error::Config(format!("subject {} has a malformed cell grid", s.id)));
            }
        }
        Ok(())
    }
}

/// Fully numeric cohort: one `w × D` matrix per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCohort {
    pub waves: usize,
    pub dim: usize,
    pub subject_ids: Vec<String>,
    pub samples: Vec<Matrix>,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
    /// Source column of every encoded dimension; one-hot groups share an id.
    pub groups: Vec<usize>,
}

impl EncodedCohort {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn subset(&self, indices: &[usize]) -> EncodedCohort {
        EncodedCohort {
            waves: self.waves,
            dim: self.dim,
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            groups: self.groups.clone(),
        }
    }

    /// Encoded dimensions grouped by source column, in column order.
    pub fn group_members(&self) -> Vec<Vec<usize>> {
        let n_groups = self.groups.iter().max().map_or(0, |g| g + 1);
        let mut members = vec![Vec::new(); n_groups];
        for (dim, &g) in self.groups.iter().enumerate() {
            members[g].push(dim);
        }
        members.retain(|m| !m.is_empty());
        members
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.samples.len();
        if self.labels.len() != n || self.subject_ids.len() != n {
            return Err(Error::Config("encoded cohort field lengths disagree".into()));
        }
        if self.feature_names.len() != self.dim || self.groups.len() != self.dim {
            return Err(Error::Config("feature metadata does not match dimension".into()));
        }
        for s in &self.samples {
            if s.shape() != (self.waves, self.dim) {
                return Err(Error::shape("encoded cohort", s.shape_str(), format!("{}x{}", self.waves, self.dim)));
            }
            if !s.is_finite() {
                return Err(Error::Config("encoded cohort contains non-finite values".into()));
            }
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y > 1) {
            return Err(Error::Label(y));
        }
        Ok(())
    }
}
