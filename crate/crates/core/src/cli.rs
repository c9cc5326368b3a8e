//! Experiment harness: configuration, data resolution and the
//! subcommand implementations behind the `mtnet` binary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::io::{read_encoded, read_raw_csv, read_schema, write_archetypes, write_encoded, write_labels, write_raw_csv, write_schema};
use crate::data::{generate_synthetic, impute_and_encode, stratified_split, EncodeOptions, EncodedCohort, NestedSubsampler, SplitIndices, SynthConfig};
use crate::diffcore::{Matrix, Rng};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::{aggregate_runs, evaluate, EvalResult, RunReport};
use crate::network::NetworkConfig;
use crate::train::{load_checkpoint, save_checkpoint, train_with_progress, Checkpoint, EpochRecord, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Encoded cohort file; takes precedence over everything else.
    pub encoded: Option<PathBuf>,
    /// Raw panel: schema JSON, panel CSV and labels CSV.
    pub schema: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Synthetic cohort, used when no files are given.
    pub synth: Option<SynthConfig>,
    pub encode: EncodeOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            encoded: None,
            schema: None,
            raw: None,
            labels: None,
            synth: None,
            encode: EncodeOptions {
                window: Some(5),
                ..EncodeOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub threshold: f64,
    /// Split the reports are computed on.
    pub split: SplitName,
    pub split_ratios: [f64; 3],
    /// Seed of the train/validation/test split, shared by all runs.
    pub split_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: vec![1, 2, 3, 4, 5],
            threshold: 0.5,
            split: SplitName::Test,
            split_ratios: [0.6, 0.2, 0.2],
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    Train,
    Evaluate,
    Ablate,
    SampleEfficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Command executed by `mtnet run`.
    pub mode: ExperimentMode,
    pub fractions: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            mode: ExperimentMode::Train,
            fractions: vec![0.125, 0.25, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// `input_dim` and `waves` are replaced by the dimensions of the data.
    pub model: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    /// Reads a config file; relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.encoded, &mut cfg.data.schema, &mut cfg.data.raw, &mut cfg.data.labels]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies a `--seed` override: the single training seed and the
    /// synthetic cohort seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.eval.seeds = vec![seed];
        if let Some(s) = &mut self.data.synth {
            s.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.train.validate()?;
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if self.experiment.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config(format!(
                "training fractions must lie in (0, 1], got {:?}",
                self.experiment.fractions
            )));
        }
        Ok(())
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} file {} does not exist", path.display())))
    }
}

/// Encoded cohort from whichever source the data section names.
pub fn load_cohort(cfg: &DataConfig) -> Result<EncodedCohort> {
    if let Some(p) = &cfg.encoded {
        require(p, "encoded cohort")?;
        return read_encoded(p);
    }
    match (&cfg.schema, &cfg.raw, &cfg.labels, &cfg.synth) {
        (Some(schema), Some(raw), Some(labels), _) => {
            require(schema, "schema")?;
            require(raw, "raw panel")?;
            require(labels, "labels")?;
            let schema = read_schema(schema)?;
            let raw = read_raw_csv(raw, labels, &schema)?;
            impute_and_encode(&raw, &schema, &cfg.encode)
        }
        (None, None, None, Some(synth)) => {
            let cohort = generate_synthetic(synth)?;
            impute_and_encode(&cohort.raw, &cohort.schema, &cfg.encode)
        }
        _ => Err(Error::Config(
            "data section needs `encoded`, all of `schema`/`raw`/`labels`, or `synth`".into(),
        )),
    }
}

/// One evaluated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub fraction: f64,
    pub seed: u64,
    pub result: EvalResult,
}

/// Aggregate over seeds for one (method, fraction) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: String,
    pub fraction: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: String,
    pub config: ExperimentConfig,
    pub split: SplitName,
    pub split_sizes: [usize; 3],
    pub cells: Vec<CellReport>,
    pub rows: Vec<RunRow>,
}

impl ExperimentReport {
    pub fn cell(&self, method: &str, fraction: f64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.method == method && c.fraction == fraction)
    }
}

/// `%.6g`-style formatting: six significant digits, trailing zeros removed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Rounding can carry into a new leading digit, e.g. 9.999995.
        let s_exp = s.trim_start_matches('-').split('.').next().map_or(0, |i| i.trim_start_matches('0').len());
        if s_exp > 6 {
            return format_sig6(s.parse().unwrap_or(x));
        }
        trim(s)
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        let e: i32 = e.parse().expect("integer exponent");
        format!("{}e{}{:02}", trim(mantissa.to_string()), if e < 0 { '-' } else { '+' }, e.abs())
    }
}

/// Everything a run needs: the cohort, its fixed split and the resolved
/// network dimensions.
pub struct Workspace {
    pub config: ExperimentConfig,
    pub cohort: EncodedCohort,
    pub split: SplitIndices,
    quiet: bool,
}

impl Workspace {
    pub fn new(mut config: ExperimentConfig, quiet: bool) -> Result<Self> {
        config.validate()?;
        let cohort = load_cohort(&config.data)?;
        config.model.input_dim = cohort.dim;
        config.model.waves = cohort.waves;
        config.model.validate()?;
        let split = stratified_split(&cohort.labels, config.eval.split_ratios, &mut Rng::new(config.eval.split_seed))?;
        Ok(Workspace {
            config,
            cohort,
            split,
            quiet,
        })
    }

    fn eval_indices(&self) -> &[usize] {
        match self.config.eval.split {
            SplitName::Train => &self.split.train,
            SplitName::Val => &self.split.val,
            SplitName::Test => &self.split.test,
        }
    }

    fn log(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    /// Trains one model on `train_idx` with the given toggles and seed.
    pub fn fit(&self, variant: Option<Variant>, train_idx: &[usize], seed: u64) -> Result<Checkpoint> {
        let mut cfg = match variant {
            Some(v) => v.apply(&self.config.train),
            None => self.config.train.clone(),
        };
        cfg.seed = seed;
        let data = self.cohort.subset(train_idx);
        let label = variant.map_or("model", Variant::name);
        train_with_progress(&data, &self.config.model, &self.config.loss, &cfg, |r: &EpochRecord| {
            self.log(&format!(
                "[{label} seed {seed}] epoch {:>3}: total {:.4} l_e {:.4} l_a {:.4} l_o {:.4}",
                r.epoch, r.total, r.l_e, r.l_a, r.l_o
            ));
        })
    }

    pub fn score(&self, model: &Checkpoint) -> Result<EvalResult> {
        let idx = self.eval_indices();
        let xs: Vec<&Matrix> = idx.iter().map(|&i| &self.cohort.samples[i]).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| self.cohort.labels[i]).collect();
        let p = model.predict_batch(&xs)?;
        evaluate(&p, &labels, self.config.eval.threshold)
    }

    fn report(&self, command: &str, rows: Vec<RunRow>) -> Result<ExperimentReport> {
        let mut cells: Vec<CellReport> = Vec::new();
        for row in &rows {
            if !cells.iter().any(|c| c.method == row.method && c.fraction == row.fraction) {
                let group: Vec<&RunRow> = rows
                    .iter()
                    .filter(|r| r.method == row.method && r.fraction == row.fraction)
                    .collect();
                let seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
                let results: Vec<EvalResult> = group.iter().map(|r| r.result).collect();
                cells.push(CellReport {
                    method: row.method.clone(),
                    fraction: row.fraction,
                    report: aggregate_runs(&seeds, &results)?,
                });
            }
        }
        Ok(ExperimentReport {
            command: command.into(),
            config: self.config.clone(),
            split: self.config.eval.split,
            split_sizes: [self.split.train.len(), self.split.val.len(), self.split.test.len()],
            cells,
            rows,
        })
    }
}

pub fn write_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(out.join("report.json"), json)?;
    let mut w = csv::Writer::from_path(out.join("results.csv"))?;
    w.write_record([
        "method", "fraction", "seed", "auc_roc", "auc_pr", "f_score", "precision", "recall", "threshold", "n_pos", "n_neg",
    ])?;
    for r in &report.rows {
        let e = &r.result;
        w.write_record([
            r.method.clone(),
            format_sig6(r.fraction),
            r.seed.to_string(),
            format_sig6(e.auc_roc),
            format_sig6(e.auc_pr),
            format_sig6(e.f_score),
            format_sig6(e.precision),
            format_sig6(e.recall),
            format_sig6(e.threshold),
            e.n_pos.to_string(),
            e.n_neg.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("seed_{seed}.ckpt"))
}

/// Writes schema, raw panel, labels and ground-truth archetypes.
pub fn run_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let synth = cfg
        .data
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("generate needs a data.synth section".into()))?;
    let cohort = generate_synthetic(synth)?;
    fs::create_dir_all(out)?;
    write_schema(&out.join("schema.json"), &cohort.schema)?;
    write_raw_csv(&out.join("raw.csv"), &cohort.raw, &cohort.schema)?;
    let ids: Vec<String> = cohort.raw.subjects.iter().map(|s| s.id.clone()).collect();
    write_labels(&out.join("labels.csv"), &ids, &cohort.raw.labels())?;
    write_archetypes(&out.join("archetypes.csv"), &cohort.raw, &cohort.archetypes)?;
    Ok(())
}

/// Writes the encoded cohort and its split.
pub fn run_preprocess(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<()> {
    let ws = Workspace::new(cfg.clone(), quiet)?;
    fs::create_dir_all(out)?;
    write_encoded(&out.join("cohort.bin"), &ws.cohort)?;
    let mut json = serde_json::to_string_pretty(&ws.split)?;
    json.push('\n');
    fs::write(out.join("split.json"), json)?;
    ws.log(&format!(
        "encoded {} subjects, {} waves x {} features; split {}/{}/{}",
        ws.cohort.len(),
        ws.cohort.waves,
        ws.cohort.dim,
        ws.split.train.len(),
        ws.split.val.len(),
        ws.split.test.len()
    ));
    Ok(())
}

/// Trains one model per seed with the configured toggles, saves the
/// checkpoints and reports metrics on the evaluation split.
pub fn run_train(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<ExperimentReport> {
    let ws = Workspace::new(cfg.clone(), quiet)?;
    fs::create_dir_all(out.join("checkpoints"))?;
    let method = method_name(&ws.config.train);
    let mut rows = Vec::new();
    for &seed in &ws.config.eval.seeds {
        let model = ws.fit(None, &ws.split.train, seed)?;
        save_checkpoint(&model, &checkpoint_path(out, seed))?;
        rows.push(RunRow {
            method: method.clone(),
            fraction: 1.0,
            seed,
            result: ws.score(&model)?,
        });
    }
    let report = ws.report("train", rows)?;
    write_report(&report, out)?;
    Ok(report)
}

/// Scores checkpoints saved by `run_train` in `out/checkpoints`.
pub fn run_evaluate(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<ExperimentReport> {
    let ws = Workspace::new(cfg.clone(), quiet)?;
    let mut rows = Vec::new();
    for &seed in &ws.config.eval.seeds {
        let path = checkpoint_path(out, seed);
        require(&path, "checkpoint")?;
        let model = load_checkpoint(&path)?;
        if model.network != ws.config.model {
            return Err(Error::Config(format!(
                "checkpoint {} does not match the configured model",
                path.display()
            )));
        }
        rows.push(RunRow {
            method: method_name(&model.train),
            fraction: 1.0,
            seed,
            result: ws.score(&model)?,
        });
    }
    let report = ws.report("evaluate", rows)?;
    write_report(&report, out)?;
    Ok(report)
}

fn method_name(cfg: &TrainConfig) -> String {
    Variant::ALL
        .iter()
        .find(|v| v.toggles() == (cfg.use_l_a, cfg.use_l_o, cfg.use_augmentation))
        .map_or_else(
            || {
                format!(
                    "custom(l_a={},l_o={},aug={})",
                    cfg.use_l_a, cfg.use_l_o, cfg.use_augmentation
                )
            },
            |v| v.name().to_string(),
        )
}

/// The five ablation variants over all seeds.
pub fn run_ablate(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<ExperimentReport> {
    let ws = Workspace::new(cfg.clone(), quiet)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        for &seed in &ws.config.eval.seeds {
            let model = ws.fit(Some(variant), &ws.split.train, seed)?;
            rows.push(RunRow {
                method: variant.name().into(),
                fraction: 1.0,
                seed,
                result: ws.score(&model)?,
            });
        }
    }
    let report = ws.report("ablate", rows)?;
    write_report(&report, out)?;
    Ok(report)
}

/// Methods compared by the sample-efficiency sweep.
pub const EFFICIENCY_METHODS: [Variant; 2] = [Variant::Lstm, Variant::Full];

/// LSTM and MTNet trained on nested stratified fractions of the training
/// split, all scored on the same evaluation split.
pub fn run_sample_efficiency(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<ExperimentReport> {
    let ws = Workspace::new(cfg.clone(), quiet)?;
    let mut rows = Vec::new();
    for &fraction in &ws.config.experiment.fractions {
        for variant in EFFICIENCY_METHODS {
            for &seed in &ws.config.eval.seeds {
                let sub = NestedSubsampler::new(&ws.split.train, &ws.cohort.labels, &mut Rng::new(seed))?;
                let idx = sub.take(fraction)?;
                let model = ws.fit(Some(variant), &idx, seed)?;
                rows.push(RunRow {
                    method: variant.name().into(),
                    fraction,
                    seed,
                    result: ws.score(&model)?,
                });
            }
        }
    }
    let report = ws.report("sample-efficiency", rows)?;
    write_report(&report, out)?;
    Ok(report)
}

/// Dispatches on `experiment.mode`.
pub fn run_mode(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<ExperimentReport> {
    match cfg.experiment.mode {
        ExperimentMode::Train => run_train(cfg, out, quiet),
        ExperimentMode::Evaluate => run_evaluate(cfg, out, quiet),
        ExperimentMode::Ablate => run_ablate(cfg, out, quiet),
        ExperimentMode::SampleEfficiency => run_sample_efficiency(cfg, out, quiet),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(0.8234567891), "0.823457");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(0.5), "0.5");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(0.125), "0.125");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(0.0000123456789), "1.23457e-05");
        assert_eq!(format_sig6(0.999_999_7), "1");
        assert_eq!(format_sig6(-2.5), "-2.5");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"train": {"epochz": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("epochz"));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn defaults_follow_the_reference_settings() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.train.batches_per_epoch, 20);
        assert_eq!((cfg.loss.alpha, cfg.loss.beta), (0.5, 2.0));
        assert_eq!(cfg.model.lstm_units, 200);
        assert_eq!(cfg.model.feature_dim, 20);
        assert_eq!(cfg.eval.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.experiment.fractions, vec![0.125, 0.25, 0.5, 1.0]);
        assert_eq!(cfg.data.encode.window, Some(5));
    }

    #[test]
    fn method_names_follow_toggles() {
        for v in Variant::ALL {
            assert_eq!(method_name(&v.apply(&TrainConfig::default())), v.name());
        }
    }
}
