//! Training loop, checkpoints and inference.
//!
//! Checkpoint files are little-endian:
//!
//! | bytes      | content                                                     |
//! |------------|-------------------------------------------------------------|
//! | 0..4       | magic `MTCK`                                                |
//! | 4          | format version                                              |
//! | 5..13      | u64 length `H` of the JSON metadata                         |
//! | 13..13+H   | JSON metadata: configs, seed, history, tensor names/shapes  |
//! | rest       | f64 values of every tensor in metadata order, then the center |

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batching::{augment_depression, balanced_batches, AugmentConfig};
use crate::data::EncodedCohort;
use crate::data::io::{check_container, read_f64s, split_header};
use crate::diffcore::{Matrix, Mode, Rng};
use crate::error::{Error, Result};
use crate::losses::{deviation, total_batch_loss, Center, LossConfig, LossTerms};
use crate::network::{backward, forward_batch, NetworkConfig, NetworkParams};
use crate::optim::{RmsProp, RmsPropConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MTCK";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Samples per forward pass at inference time.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub use_l_a: bool,
    pub use_l_o: bool,
    pub use_augmentation: bool,
    pub augmentation: AugmentConfig,
    pub optimizer: RmsPropConfig,
    pub seed: u64,
    /// Record per-epoch feature-space and score diagnostics on the training data.
    pub track_diagnostics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 256,
            batches_per_epoch: 20,
            use_l_a: true,
            use_l_o: true,
            use_augmentation: true,
            augmentation: AugmentConfig::default(),
            optimizer: RmsPropConfig::default(),
            seed: 0,
            track_diagnostics: false,
        }
    }
}

/// The ablation variants, from the plain recurrent classifier to the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "LSTM+l_a")]
    LstmDeviation,
    #[serde(rename = "LSTM+l_o")]
    LstmOneClass,
    #[serde(rename = "LSTM+l_a+l_o")]
    LstmBoth,
    #[serde(rename = "MTNet")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Lstm,
        Variant::LstmDeviation,
        Variant::LstmOneClass,
        Variant::LstmBoth,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "LSTM",
            Variant::LstmDeviation => "LSTM+l_a",
            Variant::LstmOneClass => "LSTM+l_o",
            Variant::LstmBoth => "LSTM+l_a+l_o",
            Variant::Full => "MTNet",
        }
    }

    /// `(use_l_a, use_l_o, use_augmentation)`.
    pub fn toggles(self) -> (bool, bool, bool) {
        match self {
            Variant::Lstm => (false, false, false),
            Variant::LstmDeviation => (true, false, false),
            Variant::LstmOneClass => (false, true, false),
            Variant::LstmBoth => (true, true, false),
            Variant::Full => (true, true, true),
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let (use_l_a, use_l_o, use_augmentation) = self.toggles();
        TrainConfig {
            use_l_a,
            use_l_o,
            use_augmentation,
            ..cfg.clone()
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config("epochs and batches_per_epoch must be positive".into()));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("batch_size must be positive and even, got {}", self.batch_size)));
        }
        self.optimizer.validate()?;
        if self.use_augmentation {
            self.augmentation.validate()?;
        }
        Ok(())
    }

    fn terms(&self) -> LossTerms {
        LossTerms {
            deviation: self.use_l_a,
            one_class: self.use_l_o,
        }
    }
}

/// Eval-mode statistics over the (unaugmented) training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean distance of negatives' feature vectors from the center.
    pub neg_center_distance: f64,
    pub pos_center_distance: f64,
    /// Mean Z-score deviation of the anomaly score.
    pub pos_deviation: f64,
    pub neg_deviation: f64,
}

/// Per-epoch means over the epoch's batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_e: f64,
    pub l_a: f64,
    pub l_o: f64,
    pub total: f64,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub params: NetworkParams,
    pub center: Center,
    pub history: Vec<EpochRecord>,
}

/// All head outputs for a set of samples, eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub p: Vec<f64>,
    pub score: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl Checkpoint {
    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.network.input_dim || x.rows() != self.network.waves {
            return Err(Error::shape(
                "predict",
                x.shape_str(),
                format!("{}x{}", self.network.waves, self.network.input_dim),
            ));
        }
        Ok(())
    }

    /// Classification probability for one subject.
    pub fn predict(&self, x: &Matrix) -> Result<f64> {
        Ok(self.predict_batch(&[x])?[0])
    }

    /// Classification probabilities, eval mode.
    pub fn predict_batch(&self, xs: &[&Matrix]) -> Result<Vec<f64>> {
        Ok(self.outputs(xs)?.p)
    }

    /// Probabilities plus the auxiliary outputs, for diagnostics.
    pub fn outputs(&self, xs: &[&Matrix]) -> Result<Predictions> {
        let mut out = Predictions {
            p: Vec::with_capacity(xs.len()),
            score: Vec::with_capacity(xs.len()),
            q: Vec::with_capacity(xs.len()),
        };
        // Eval mode never draws from the generator.
        let mut rng = Rng::new(0);
        for chunk in xs.chunks(EVAL_CHUNK) {
            for x in chunk {
                self.check_input(x)?;
            }
            let (o, _) = forward_batch(&self.params, self.network.dropout_rate, chunk, Mode::Eval, &mut rng)?;
            out.p.extend(o.p);
            out.score.extend(o.score);
            out.q.extend((0..o.q.rows()).map(|r| o.q.row(r).to_vec()));
        }
        Ok(out)
    }

    pub fn diagnostics(&self, samples: &[&Matrix], labels: &[u8]) -> Result<Diagnostics> {
        let o = self.outputs(samples)?;
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 2];
        for (k, &y) in labels.iter().enumerate() {
            let c = usize::from(y == 1);
            counts[c] += 1;
            sums[c] += self.center.distance(&o.q[k]);
            sums[2 + c] += deviation(o.score[k], &self.loss);
        }
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        Ok(Diagnostics {
            neg_center_distance: mean(sums[0], counts[0]),
            pos_center_distance: mean(sums[1], counts[1]),
            neg_deviation: mean(sums[2], counts[0]),
            pos_deviation: mean(sums[3], counts[1]),
        })
    }
}

/// Trains from scratch. Returns the final model with its per-epoch history.
pub fn train(data: &EncodedCohort, network: &NetworkConfig, loss: &LossConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    train_with_progress(data, network, loss, cfg, |_| {})
}

pub fn train_with_progress(
    data: &EncodedCohort,
    network: &NetworkConfig,
    loss: &LossConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    network.validate()?;
    loss.validate()?;
    cfg.validate()?;
    data.validate()?;
    if data.dim != network.input_dim || data.waves != network.waves {
        return Err(Error::shape(
            "train",
            format!("{}x{}", data.waves, data.dim),
            format!("{}x{}", network.waves, network.input_dim),
        ));
    }
    let n_pos = data.n_positive();
    if n_pos == 0 || n_pos == data.len() {
        return Err(Error::Sampling("training data must contain both classes".into()));
    }

    // Independent streams, drawn in a fixed order so that toggles never
    // shift another component's randomness.
    let mut master = Rng::new(cfg.seed);
    let mut init_rng = master.fork();
    let mut center_rng = master.fork();
    let mut augment_rng = master.fork();
    let mut batch_rng = master.fork();
    let mut dropout_rng = master.fork();

    let params = NetworkParams::init(network, &mut init_rng)?;
    let center = Center::draw(network.feature_dim, &mut center_rng);

    let mut pool: Vec<&Matrix> = data.samples.iter().collect();
    let mut labels = data.labels.clone();
    let augmented = if cfg.use_augmentation {
        let positives: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == 1).collect();
        augment_depression(&data.subset(&positives), &cfg.augmentation, &mut augment_rng)?
    } else {
        Vec::new()
    };
    pool.extend(augmented.iter().map(|a| &a.sample));
    labels.extend(std::iter::repeat_n(1u8, augmented.len()));

    let mut model = Checkpoint {
        network: network.clone(),
        loss: loss.clone(),
        train: cfg.clone(),
        params,
        center,
        history: Vec::with_capacity(cfg.epochs),
    };
    let mut optimizer = RmsProp::for_network(cfg.optimizer.clone(), &model.params)?;
    let original: Vec<&Matrix> = data.samples.iter().collect();
    let terms = cfg.terms();

    for epoch in 1..=cfg.epochs {
        let plan = balanced_batches(&labels, cfg.batch_size, cfg.batches_per_epoch, &mut batch_rng)?;
        let mut sums = [0.0; 4];
        for (b, batch) in plan.batches.iter().enumerate() {
            let diverged = |reason: String| Error::Divergence {
                epoch,
                batch: b + 1,
                reason,
            };
            let xs: Vec<&Matrix> = batch.iter().map(|&i| pool[i]).collect();
            let ys: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (outputs, trace) = forward_batch(&model.params, network.dropout_rate, &xs, Mode::Train, &mut dropout_rng)?;
            let bundle = total_batch_loss(&outputs, &ys, loss, &model.center, terms)?;
            if !bundle.total.is_finite() {
                return Err(diverged(format!("non-finite loss {}", bundle.total)));
            }
            let grads = backward(&trace, &bundle.d_p, &bundle.d_score, &bundle.d_q, &model.params)?;
            optimizer.step_network(&mut model.params, &grads).map_err(|e| match e {
                Error::Divergence { reason, .. } => diverged(reason),
                other => other,
            })?;
            if !model.params.is_finite() {
                return Err(diverged("non-finite parameters after update".into()));
            }
            for (s, v) in sums.iter_mut().zip([bundle.l_e, bundle.l_a, bundle.l_o, bundle.total]) {
                *s += v;
            }
        }
        let n = plan.batches.len() as f64;
        let diagnostics = if cfg.track_diagnostics {
            Some(model.diagnostics(&original, &data.labels)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            l_e: sums[0] / n,
            l_a: sums[1] / n,
            l_o: sums[2] / n,
            total: sums[3] / n,
            diagnostics,
        };
        on_epoch(&record);
        model.history.push(record);
    }
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    network: NetworkConfig,
    loss: LossConfig,
    train: TrainConfig,
    seed: u64,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorMeta>,
    center_dim: usize,
}

pub fn save_checkpoint(model: &Checkpoint, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        network: model.network.clone(),
        loss: model.loss.clone(),
        train: model.train.clone(),
        seed: model.train.seed,
        history: model.history.clone(),
        tensors: NetworkParams::names()
            .into_iter()
            .zip(model.params.tensors())
            .map(|(name, m)| TensorMeta {
                name,
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
        center_dim: model.center.dim(),
    };
    let header = serde_json::to_vec(&meta)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for m in model.params.tensors() {
        for x in m.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for x in model.center.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let body = check_container(&bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let (header, payload) = split_header(body, "checkpoint")?;
    let meta: CheckpointMeta =
        serde_json::from_slice(header).map_err(|e| Error::Corrupt(format!("checkpoint metadata: {e}")))?;
    meta.network.validate()?;

    let mut params = NetworkParams::zeros(&meta.network);
    let names = NetworkParams::names();
    if meta.tensors.len() != names.len() {
        return Err(Error::Corrupt(format!(
            "checkpoint lists {} tensors, expected {}",
            meta.tensors.len(),
            names.len()
        )));
    }
    for ((t, name), m) in meta.tensors.iter().zip(&names).zip(params.tensors()) {
        if &t.name != name || (t.rows, t.cols) != m.shape() {
            return Err(Error::Corrupt(format!(
                "tensor `{}` {}x{} does not match expected `{name}` {}",
                t.name,
                t.rows,
                t.cols,
                m.shape_str()
            )));
        }
    }
    if meta.center_dim != meta.network.feature_dim {
        return Err(Error::Corrupt("center dimension does not match feature dimension".into()));
    }
    let values = read_f64s(payload, params.num_values() + meta.center_dim, "checkpoint")?;
    let mut offset = 0;
    for m in params.tensors_mut() {
        let n = m.len();
        m.as_mut_slice().copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    let center = Center::from_matrix(Matrix::row_vector(values[offset..].to_vec()))
        .map_err(|e| Error::Corrupt(format!("checkpoint center: {e}")))?;
    let mut train = meta.train;
    train.seed = meta.seed;
    Ok(Checkpoint {
        network: meta.network,
        loss: meta.loss,
        train,
        params,
        center,
        history: meta.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc_roc;

    /// Two well-separated Gaussian clusters, 20% positives.
    fn separable(n: usize, seed: u64) -> EncodedCohort {
        let mut rng = Rng::new(seed);
        let (waves, dim) = (2, 4);
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 5 == 0)).collect();
        let samples = labels
            .iter()
            .map(|&y| {
                let shift = if y == 1 { 2.0 } else { -2.0 };
                Matrix::from_vec(waves, dim, (0..waves * dim).map(|_| shift + 0.5 * rng.normal()).collect()).unwrap()
            })
            .collect();
        EncodedCohort {
            waves,
            dim,
            subject_ids: (0..n).map(|i| format!("s{i}")).collect(),
            samples,
            labels,
            feature_names: (0..dim).map(|j| format!("f{j}")).collect(),
            groups: (0..dim).collect(),
        }
    }

    fn small_net() -> NetworkConfig {
        NetworkConfig {
            input_dim: 4,
            waves: 2,
            lstm_units: 8,
            feature_dim: 4,
            dropout_rate: 0.5,
        }
    }

    fn quick(cfg: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            batches_per_epoch: 4,
            ..cfg
        }
    }

    #[test]
    fn disabled_terms_record_zero() {
        let data = separable(60, 1);
        let cfg = quick(Variant::Lstm.apply(&TrainConfig::default()));
        let model = train(&data, &small_net(), &LossConfig::default(), &cfg).unwrap();
        assert_eq!(model.history.len(), 3);
        for r in &model.history {
            assert_eq!((r.l_a, r.l_o), (0.0, 0.0));
            assert_eq!(r.total, r.l_e);
        }
    }

    #[test]
    fn same_seed_same_model() {
        let data = separable(60, 2);
        let cfg = quick(TrainConfig::default());
        let a = train(&data, &small_net(), &LossConfig::default(), &cfg).unwrap();
        let b = train(&data, &small_net(), &LossConfig::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&data, &small_net(), &LossConfig::default(), &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn separable_toy_cohort_is_fit() {
        let data = separable(200, 3);
        let cfg = TrainConfig {
            track_diagnostics: true,
            ..TrainConfig::default()
        };
        let model = train(&data, &small_net(), &LossConfig::default(), &cfg).unwrap();
        let xs: Vec<&Matrix> = data.samples.iter().collect();
        let p = model.predict_batch(&xs).unwrap();
        assert_eq!(auc_roc(&p, &data.labels).unwrap(), 1.0);
        let first = model.history[0].diagnostics.unwrap();
        let last = model.history[29].diagnostics.unwrap();
        assert!(last.neg_center_distance < first.neg_center_distance);
        assert!(last.pos_deviation - last.neg_deviation >= 3.0, "{last:?}");
    }

    #[test]
    fn zero_weight_model_predicts_one_half() {
        let net = small_net();
        let model = Checkpoint {
            params: NetworkParams::zeros(&net),
            center: Center::draw(4, &mut Rng::new(0)),
            network: net,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            history: Vec::new(),
        };
        let data = separable(10, 4);
        for x in &data.samples {
            assert_eq!(model.predict(x).unwrap(), 0.5);
        }
    }

    #[test]
    fn batch_prediction_matches_single() {
        let data = separable(300, 5);
        let model = train(&data, &small_net(), &LossConfig::default(), &quick(TrainConfig::default())).unwrap();
        let xs: Vec<&Matrix> = data.samples.iter().collect();
        let batch = model.predict_batch(&xs).unwrap();
        for (x, pb) in xs.iter().zip(&batch) {
            let single = model.predict(x).unwrap();
            assert!((single - pb).abs() <= 1e-9);
            assert_eq!(single.to_bits(), model.predict(x).unwrap().to_bits());
        }
        let wrong = Matrix::zeros(2, 5);
        assert!(matches!(model.predict(&wrong), Err(Error::Shape { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let data = separable(60, 6);
        let cfg = TrainConfig {
            track_diagnostics: true,
            ..quick(TrainConfig::default())
        };
        let model = train(&data, &small_net(), &LossConfig::default(), &cfg).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        for x in &data.samples {
            assert_eq!(model.predict(x).unwrap().to_bits(), back.predict(x).unwrap().to_bits());
        }

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt(_))));
        std::fs::write(&path, &bytes[..3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt(_))));
        let mut wrong = bytes.clone();
        wrong[4] = 7;
        std::fs::write(&path, &wrong).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Version { found: 7, expected: 1 }));
        assert!(err.to_string().contains('7') && err.to_string().contains('1'));
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let data = separable(60, 7);
        let cfg = TrainConfig {
            optimizer: RmsPropConfig {
                lr: 1e300,
                ..RmsPropConfig::default()
            },
            ..quick(TrainConfig::default())
        };
        match train(&data, &small_net(), &LossConfig::default(), &cfg) {
            Err(Error::Divergence { epoch, batch, .. }) => assert!(epoch >= 1 && batch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let data = separable(60, 8);
        let net = NetworkConfig {
            input_dim: 5,
            ..small_net()
        };
        assert!(matches!(
            train(&data, &net, &LossConfig::default(), &TrainConfig::default()),
            Err(Error::Shape { .. })
        ));
    }
}
