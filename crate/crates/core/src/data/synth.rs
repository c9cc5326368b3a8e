//! Synthetic longitudinal cohort with heterogeneous positives.
//!
//! Negatives follow a base process: numeric columns are AR(1) around a
//! per-subject baseline, categorical columns persist from wave to wave and
//! occasionally redraw from a column-level distribution. Every positive is
//! assigned one of `n_archetypes` causes. Each archetype owns a disjoint
//! set of relevant columns and pushes them in a fixed direction (numeric)
//! or towards a fixed category (categorical) with an effect that grows
//! linearly over the waves. All other columns carry no label signal.

use serde::{Deserialize, Serialize};

use crate::data::{CohortSchema, Column, ColumnKind, RawCohort, RawValue, SubjectRecord};
use crate::diffcore::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub waves: usize,
    pub n_numeric: usize,
    pub n_categorical: usize,
    pub categories_per_column: usize,
    pub n_archetypes: usize,
    pub positive_rate: f64,
    /// Fraction of all columns assigned to each archetype.
    pub relevant_fraction: f64,
    /// Mean shift (in column standard deviations) reached at the last wave.
    pub trend_strength: f64,
    pub noise_sigma: f64,
    pub missing_rate: f64,
    /// Wave-to-wave autocorrelation of the base process.
    pub wave_correlation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 4000,
            waves: 7,
            n_numeric: 60,
            n_categorical: 30,
            categories_per_column: 3,
            n_archetypes: 5,
            positive_rate: 0.06,
            relevant_fraction: 0.1,
            trend_strength: 2.5,
            noise_sigma: 0.5,
            missing_rate: 0.05,
            wave_correlation: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_columns(&self) -> usize {
        self.n_numeric + self.n_categorical
    }

    pub fn relevant_per_archetype(&self) -> usize {
        ((self.relevant_fraction * self.n_columns() as f64).round() as usize).max(1)
    }

    pub fn n_positive(&self) -> usize {
        (self.positive_rate * self.n_subjects as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_subjects == 0 || self.waves == 0 || self.n_columns() == 0 {
            return bad("subjects, waves and columns must be positive".into());
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 0.5) {
            return bad(format!("positive_rate must be in (0, 0.5), got {}", self.positive_rate));
        }
        if self.n_archetypes < 2 {
            return bad("n_archetypes must be at least 2".into());
        }
        if self.n_categorical > 0 && self.categories_per_column < 2 {
            return bad("categorical columns need at least 2 categories".into());
        }
        if !(self.relevant_fraction > 0.0 && self.relevant_fraction <= 1.0) {
            return bad(format!("relevant_fraction must be in (0, 1], got {}", self.relevant_fraction));
        }
        if self.relevant_per_archetype() * self.n_archetypes > self.n_columns() {
            return bad(format!(
                "{} archetypes x {} relevant columns exceed {} columns",
                self.n_archetypes,
                self.relevant_per_archetype(),
                self.n_columns()
            ));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate must be in [0, 1), got {}", self.missing_rate));
        }
        if !(0.0..1.0).contains(&self.wave_correlation) || self.noise_sigma < 0.0 || self.trend_strength < 0.0 {
            return bad("wave_correlation must be in [0, 1); noise and trend nonnegative".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> CohortSchema {
        let mut columns: Vec<Column> = (0..self.n_numeric).map(|j| Column::numeric(format!("num_{j:03}"))).collect();
        for j in 0..self.n_categorical {
            columns.push(Column {
                name: format!("cat_{j:03}"),
                kind: ColumnKind::Categorical {
                    categories: (0..self.categories_per_column).map(|k| format!("c{k}")).collect(),
                },
            });
        }
        CohortSchema {
            waves: self.waves,
            columns,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub raw: RawCohort,
    pub schema: CohortSchema,
    /// Archetype of every subject; `None` for negatives.
    pub archetypes: Vec<Option<usize>>,
    /// Column indices owned by each archetype.
    pub relevant_columns: Vec<Vec<usize>>,
}

enum ColumnModel {
    Numeric { mean: f64, scale: f64 },
    Categorical { probs: Vec<f64> },
}

enum Effect {
    Shift(f64),
    Target(usize),
}

fn draw_category(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let schema = cfg.schema();
    let n_cols = cfg.n_columns();
    let mut rng = Rng::new(cfg.seed);
    let mut structure_rng = rng.fork();

    let models: Vec<ColumnModel> = (0..n_cols)
        .map(|c| {
            if c < cfg.n_numeric {
                ColumnModel::Numeric {
                    mean: structure_rng.uniform_range(-1.0, 1.0),
                    scale: structure_rng.uniform_range(0.5, 2.0),
                }
            } else {
                let raw: Vec<f64> = (0..cfg.categories_per_column)
                    .map(|_| structure_rng.uniform_range(0.2, 1.0))
                    .collect();
                let total: f64 = raw.iter().sum();
                ColumnModel::Categorical {
                    probs: raw.iter().map(|p| p / total).collect(),
                }
            }
        })
        .collect();

    // Disjoint relevant column sets and their effects.
    let per = cfg.relevant_per_archetype();
    let mut cols: Vec<usize> = (0..n_cols).collect();
    structure_rng.shuffle(&mut cols);
    let relevant_columns: Vec<Vec<usize>> = (0..cfg.n_archetypes)
        .map(|k| {
            let mut set = cols[k * per..(k + 1) * per].to_vec();
            set.sort_unstable();
            set
        })
        .collect();
    let effects: Vec<Vec<(usize, Effect)>> = relevant_columns
        .iter()
        .map(|set| {
            set.iter()
                .map(|&c| {
                    let effect = if c < cfg.n_numeric {
                        Effect::Shift(if structure_rng.bernoulli(0.5) { 1.0 } else { -1.0 })
                    } else {
                        Effect::Target(structure_rng.below(cfg.categories_per_column))
                    };
                    (c, effect)
                })
                .collect()
        })
        .collect();

    // Exactly round(rate · N) positives, archetypes balanced round-robin.
    let n_pos = cfg.n_positive();
    let mut order: Vec<usize> = (0..cfg.n_subjects).collect();
    rng.shuffle(&mut order);
    let mut archetypes = vec![None; cfg.n_subjects];
    for (rank, &s) in order.iter().take(n_pos).enumerate() {
        archetypes[s] = Some(rank % cfg.n_archetypes);
    }

    let rho = cfg.wave_correlation;
    let innovation = (1.0 - rho * rho).sqrt();
    let w = cfg.waves;
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    for (s, archetype) in archetypes.iter().enumerate() {
        let mut srng = rng.fork();
        let mut cells: Vec<Option<RawValue>> = vec![None; w * n_cols];
        for (c, model) in models.iter().enumerate() {
            match model {
                ColumnModel::Numeric { mean, scale } => {
                    let mut z = srng.normal();
                    for t in 0..w {
                        if t > 0 {
                            z = rho * z + innovation * srng.normal();
                        }
                        let x = mean + scale * (z + cfg.noise_sigma * srng.normal());
                        cells[t * n_cols + c] = Some(RawValue::Num(x));
                    }
                }
                ColumnModel::Categorical { probs } => {
                    let mut k = draw_category(probs, &mut srng);
                    for t in 0..w {
                        if t > 0 && !srng.bernoulli(rho) {
                            k = draw_category(probs, &mut srng);
                        }
                        cells[t * n_cols + c] = Some(RawValue::Cat(format!("c{k}")));
                    }
                }
            }
        }

        if let Some(a) = archetype {
            for (c, effect) in &effects[*a] {
                for t in 0..w {
                    let progress = if w > 1 { t as f64 / (w - 1) as f64 } else { 1.0 };
                    let strength = cfg.trend_strength * progress;
                    let cell = &mut cells[t * n_cols + c];
                    match (effect, &models[*c]) {
                        (Effect::Shift(sign), ColumnModel::Numeric { scale, .. }) => {
                            if let Some(RawValue::Num(x)) = cell {
                                *x += sign * scale * strength;
                            }
                        }
                        (Effect::Target(k), ColumnModel::Categorical { .. }) => {
                            if srng.bernoulli(1.0 - (-strength).exp()) {
                                *cell = Some(RawValue::Cat(format!("c{k}")));
                            }
                        }
                        _ => unreachable!("effect kind follows column kind"),
                    }
                }
            }
        }

        if cfg.missing_rate > 0.0 {
            for cell in &mut cells {
                if srng.bernoulli(cfg.missing_rate) {
                    *cell = None;
                }
            }
        }

        subjects.push(SubjectRecord {
            id: format!("S{s:05}"),
            label: u8::from(archetype.is_some()),
            cells,
        });
    }

    Ok(SyntheticCohort {
        raw: RawCohort {
            waves: w,
            columns: n_cols,
            subjects,
        },
        schema,
        archetypes,
        relevant_columns,
    })
}
