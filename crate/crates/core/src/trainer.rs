//! Mini-batch supervised training: Adam with bias correction, per-epoch
//! evaluation of both splits, history capture, and an overfitting detector.
//!
//! Runs are deterministic: the shuffle and dropout streams derive from the
//! train seed, batches keep their encounter order, and every reduction is a
//! sequential loop.

use std::time::Instant;

use crate::metrics;
use crate::model::{Batch, ClassifierModel, ModelError};
use crate::numerics::kernels::{cross_entropy_backward, cross_entropy_forward};
use crate::numerics::Rng;
use crate::tokenizer::EncodedExample;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGrad { name: String },
    #[error("adam state tracks {state} parameters but the model has {params}")]
    StateMismatch { state: usize, params: usize },
    #[error("bad history csv: {0}")]
    BadHistory(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// When false, history records wall_seconds as 0.0 so two identical runs
    /// emit byte-identical history files.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            shuffle: true,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs and batch_size must be > 0".to_string(),
            ));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) || beta == 0.0 {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {beta}"
                )));
            }
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig(
                "learning_rate and weight_decay must be >= 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// First/second moment buffers per parameter plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &ClassifierModel) -> Self {
        let sizes: Vec<usize> = model.params().iter().map(|t| t.numel()).collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every model parameter, reading each
/// tensor's grad buffer. Weight decay is classic L2 (added to the gradient).
pub fn adam_step(
    model: &mut ClassifierModel,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let names = model.param_names();
    let params = model.params_mut();
    if params.len() != state.m.len() {
        return Err(TrainError::StateMismatch {
            state: state.m.len(),
            params: params.len(),
        });
    }
    state.step += 1;
    let t = state.step;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    for (i, tensor) in params.into_iter().enumerate() {
        let n = tensor.numel();
        let grad = tensor
            .grad()
            .ok_or_else(|| TrainError::InvalidConfig(format!(
                "parameter {} has no gradient buffer",
                names[i]
            )))?
            .to_vec();
        for &g in &grad {
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGrad {
                    name: names[i].clone(),
                });
            }
        }
        let data = tensor.data_mut();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..n {
            let g = grad[j] + cfg.weight_decay * data[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            data[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// One row of the per-epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

/// Per-epoch train/test curves; the plotting source for accuracy-vs-epoch
/// figures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// CSV with columns epoch,train_loss,train_acc,test_loss,test_acc,seconds.
    /// Floats print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_loss,test_acc,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy, r.wall_seconds
            ));
        }
        out
    }

    pub fn from_csv(content: &str) -> Result<Self, TrainError> {
        let mut lines = content.lines();
        let header = lines.next().ok_or_else(|| {
            TrainError::BadHistory("missing header".to_string())
        })?;
        if header != "epoch,train_loss,train_acc,test_loss,test_acc,seconds" {
            return Err(TrainError::BadHistory(format!(
                "unexpected columns '{header}'"
            )));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(TrainError::BadHistory(format!(
                    "row {} has {} fields, expected 6",
                    i + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64, TrainError> {
                s.parse()
                    .map_err(|_| TrainError::BadHistory(format!("bad number '{s}'")))
            };
            records.push(EpochRecord {
                epoch: fields[0]
                    .parse()
                    .map_err(|_| TrainError::BadHistory(format!("bad epoch '{}'", fields[0])))?,
                train_loss: parse(fields[1])?,
                train_accuracy: parse(fields[2])?,
                test_loss: parse(fields[3])?,
                test_accuracy: parse(fields[4])?,
                wall_seconds: parse(fields[5])?,
            });
        }
        Ok(TrainHistory { records })
    }
}

/// Mean loss and argmax predictions over a split, dropout off. Predictions
/// tie-break toward the lowest class id.
pub fn evaluate_split(
    model: &ClassifierModel,
    data: &[EncodedExample],
    batch_size: usize,
) -> Result<(f64, Vec<u32>), TrainError> {
    let k = model.config().num_classes;
    let mut preds = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    for chunk in data.chunks(batch_size) {
        let batch = Batch::from_slice(chunk)?;
        let fwd = model.forward(&batch, None)?;
        let mut probs = vec![0.0; batch.batch_size * k];
        let loss = cross_entropy_forward(&mut probs, &fwd.logits, &batch.labels, batch.batch_size, k);
        loss_sum += loss * batch.batch_size as f64;
        for bi in 0..batch.batch_size {
            let row = &fwd.logits[bi * k..(bi + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            preds.push(best as u32);
        }
    }
    Ok((loss_sum / data.len() as f64, preds))
}

fn split_accuracy(preds: &[u32], data: &[EncodedExample]) -> f64 {
    let correct = preds
        .iter()
        .zip(data)
        .filter(|(p, ex)| **p == ex.label_id)
        .count();
    correct as f64 / data.len() as f64
}

/// Train in place. Per epoch: deterministic shuffle, mini-batches (final
/// short batch kept), forward/backward/adam per batch with dropout on, then
/// a full pass over both splits with dropout off.
pub fn train(
    model: &mut ClassifierModel,
    train_set: &[EncodedExample],
    test_set: &[EncodedExample],
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    train_with(model, train_set, test_set, cfg, |_, _| Ok(()))
}

/// `train` with a per-epoch hook, called after each history record is
/// complete. Lets callers checkpoint or log without touching the loop.
pub fn train_with(
    model: &mut ClassifierModel,
    train_set: &[EncodedExample],
    test_set: &[EncodedExample],
    cfg: &TrainConfig,
    mut after_epoch: impl FnMut(&ClassifierModel, &EpochRecord) -> Result<(), TrainError>,
) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if test_set.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let k = model.config().num_classes;
    let mut state = AdamState::new(model);
    let mut shuffle_rng = Rng::with_stream(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = Rng::with_stream(cfg.seed, DROPOUT_STREAM);
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        if cfg.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let examples: Vec<&EncodedExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::from_examples(&examples)?;
            model.zero_grads();
            let fwd = model.forward(&batch, Some(&mut dropout_rng))?;
            let mut probs = vec![0.0; batch.batch_size * k];
            let loss =
                cross_entropy_forward(&mut probs, &fwd.logits, &batch.labels, batch.batch_size, k);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            let mut dlogits = vec![0.0; batch.batch_size * k];
            cross_entropy_backward(&mut dlogits, &probs, &batch.labels, batch.batch_size, k);
            model.backward(&batch, &fwd, &dlogits)?;
            adam_step(model, &mut state, cfg)?;
        }

        let (train_loss, train_preds) = evaluate_split(model, train_set, cfg.batch_size)?;
        let (test_loss, test_preds) = evaluate_split(model, test_set, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy: split_accuracy(&train_preds, train_set),
            test_loss,
            test_accuracy: split_accuracy(&test_preds, test_set),
            wall_seconds: if cfg.record_timing {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        after_epoch(model, &record)?;
        history.records.push(record);
    }
    Ok(history)
}

/// First epoch `e` (1-based) where test loss increased for `patience`
/// consecutive epochs ending at `e` while train loss decreased over the same
/// window. None if training never turned.
pub fn detect_overfit(history: &TrainHistory, patience: usize) -> Option<usize> {
    let r = &history.records;
    if patience == 0 || r.len() <= patience {
        return None;
    }
    'outer: for end in patience..r.len() {
        for j in (end - patience + 1)..=end {
            let test_up = r[j].test_loss > r[j - 1].test_loss;
            let train_down = r[j].train_loss < r[j - 1].train_loss;
            if !(test_up && train_down) {
                continue 'outer;
            }
        }
        return Some(r[end].epoch);
    }
    None
}

/// History accuracy cross-check helper: recompute a split's accuracy through
/// the metrics module from dumped predictions.
pub fn accuracy_via_metrics(preds: &[u32], data: &[EncodedExample]) -> Result<f64, TrainError> {
    let golds: Vec<u32> = data.iter().map(|ex| ex.label_id).collect();
    let c = preds
        .iter()
        .chain(&golds)
        .copied()
        .max()
        .map(|m| m as usize + 1)
        .unwrap_or(1);
    let matrix = metrics::confusion_matrix(preds, &golds, c)
        .map_err(|e| TrainError::BadHistory(e.to_string()))?;
    Ok(matrix.trace() as f64 / matrix.total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchKind, ModelConfig};
    use crate::tokenizer::{EncodedExample, CLS_ID, SEP_ID};

    fn tiny_config(classes: usize) -> ModelConfig {
        ModelConfig {
            arch: ArchKind::Encoder,
            hidden_size: 16,
            num_layers: 1,
            num_heads: 2,
            ffn_size: 32,
            max_seq_len: 8,
            vocab_size: 32,
            num_classes: classes,
            dropout: 0.0,
        }
    }

    fn example(words: &[u32], label: u32, t: usize) -> EncodedExample {
        let mut ids = vec![CLS_ID];
        ids.extend_from_slice(words);
        ids.push(SEP_ID);
        let real = ids.len();
        ids.resize(t, 0);
        let mut mask = vec![1u8; real];
        mask.resize(t, 0);
        EncodedExample {
            ids,
            mask,
            label_id: label,
            last_real_pos: real - 1,
        }
    }

    fn toy_sets(n: usize) -> (Vec<EncodedExample>, Vec<EncodedExample>) {
        // Token 10+label is perfectly discriminative.
        let train: Vec<EncodedExample> = (0..n)
            .map(|i| {
                let label = (i % 3) as u32;
                example(&[10 + label, 6 + (i % 4) as u32], label, 8)
            })
            .collect();
        let test: Vec<EncodedExample> = (0..9)
            .map(|i| {
                let label = (i % 3) as u32;
                example(&[10 + label, 7], label, 8)
            })
            .collect();
        (train, test)
    }

    #[test]
    fn adam_zero_gradients_leave_parameters_unchanged() {
        let mut model = ClassifierModel::init(tiny_config(3), 0, 1).unwrap();
        let before: Vec<f64> = model.params().iter().flat_map(|t| t.data().to_vec()).collect();
        model.zero_grads();
        let mut state = AdamState::new(&model);
        adam_step(&mut model, &mut state, &TrainConfig::default()).unwrap();
        let after: Vec<f64> = model.params().iter().flat_map(|t| t.data().to_vec()).collect();
        assert_eq!(before, after);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut model = ClassifierModel::init(tiny_config(3), 0, 1).unwrap();
        let before: Vec<f64> = model.params().iter().flat_map(|t| t.data().to_vec()).collect();
        model.zero_grads();
        for t in model.params_mut() {
            let n = t.numel();
            t.set_grad(vec![0.5; n]).unwrap();
        }
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&model);
        adam_step(&mut model, &mut state, &cfg).unwrap();
        let after: Vec<f64> = model.params().iter().flat_map(|t| t.data().to_vec()).collect();
        for (b, a) in before.iter().zip(&after) {
            let delta = a - b;
            assert!(
                (delta + cfg.learning_rate).abs() <= cfg.learning_rate * 1e-6,
                "delta {delta}"
            );
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient_with_name() {
        let mut model = ClassifierModel::init(tiny_config(3), 0, 1).unwrap();
        model.zero_grads();
        {
            let mut params = model.params_mut();
            let n = params[3].numel();
            params[3].set_grad(vec![f64::NAN; n]).unwrap();
        }
        let mut state = AdamState::new(&model);
        let err = adam_step(&mut model, &mut state, &TrainConfig::default()).unwrap_err();
        match err {
            TrainError::NonFiniteGrad { name } => assert_eq!(name, "layer0.ln1_bias"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn train_produces_one_record_per_epoch() {
        let (train_set, test_set) = toy_sets(24);
        let mut model = ClassifierModel::init(tiny_config(3), 0, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_set, &test_set, &cfg).unwrap();
        assert_eq!(history.records.len(), 3);
        assert_eq!(
            history.records.iter().map(|r| r.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (train_set, test_set) = toy_sets(24);
        let mut model = ClassifierModel::init(tiny_config(3), 0, 2).unwrap();
        let before: Vec<f64> = model.params().iter().flat_map(|t| t.data().to_vec()).collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.0,
            seed: 5,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_set, &test_set, &cfg).unwrap();
        let after: Vec<f64> = model.params().iter().flat_map(|t| t.data().to_vec()).collect();
        assert_eq!(before, after);
        assert_eq!(
            history.records[0].train_accuracy,
            history.records[1].train_accuracy
        );
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (train_set, test_set) = toy_sets(30);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = ClassifierModel::init(
                ModelConfig {
                    dropout: 0.1,
                    ..tiny_config(3)
                },
                0,
                7,
            )
            .unwrap();
            let history = train(&mut model, &train_set, &test_set, &cfg).unwrap();
            let params: Vec<u64> = model
                .params()
                .iter()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect();
            (params, history.to_csv())
        };
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(p1, p2);
        // wall_seconds differ between runs; compare every other column.
        let strip = |csv: &str| {
            csv.lines()
                .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&h1), strip(&h2));
    }

    #[test]
    fn empty_train_set_is_an_error() {
        let (_, test_set) = toy_sets(6);
        let mut model = ClassifierModel::init(tiny_config(3), 0, 2).unwrap();
        assert!(matches!(
            train(&mut model, &[], &test_set, &TrainConfig::default()),
            Err(TrainError::EmptyTrainSet)
        ));
    }

    #[test]
    fn exploding_learning_rate_aborts_with_coordinates() {
        let (train_set, test_set) = toy_sets(24);
        let mut model = ClassifierModel::init(tiny_config(3), 0, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e30,
            seed: 5,
            ..TrainConfig::default()
        };
        match train(&mut model, &train_set, &test_set, &cfg) {
            Err(TrainError::NonFiniteLoss { epoch, .. }) => assert!(epoch >= 1),
            Err(TrainError::NonFiniteGrad { .. }) => {}
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn single_batch_overfit_reaches_near_zero_loss() {
        // Optimization sanity: 8 examples, desk-like model, 200 steps.
        let config = ModelConfig {
            arch: ArchKind::Encoder,
            hidden_size: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_size: 256,
            max_seq_len: 8,
            vocab_size: 32,
            num_classes: 4,
            dropout: 0.0,
        };
        let mut model = ClassifierModel::init(config, 0, 3).unwrap();
        let examples: Vec<EncodedExample> = (0..8)
            .map(|i| example(&[10 + (i % 4) as u32, 20 + (i % 2) as u32], (i % 4) as u32, 8))
            .collect();
        let batch = Batch::from_slice(&examples).unwrap();
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&model);
        let mut last_loss = f64::INFINITY;
        for _ in 0..200 {
            model.zero_grads();
            let fwd = model.forward(&batch, None).unwrap();
            let mut probs = vec![0.0; 8 * 4];
            last_loss = cross_entropy_forward(&mut probs, &fwd.logits, &batch.labels, 8, 4);
            let mut dlogits = vec![0.0; 8 * 4];
            cross_entropy_backward(&mut dlogits, &probs, &batch.labels, 8, 4);
            model.backward(&batch, &fwd, &dlogits).unwrap();
            adam_step(&mut model, &mut state, &cfg).unwrap();
            if last_loss < 0.01 {
                break;
            }
        }
        assert!(last_loss < 0.01, "final loss {last_loss}");
    }

    #[test]
    fn detect_overfit_finds_the_turn() {
        let mk = |epoch, train_loss, test_loss| EpochRecord {
            epoch,
            train_loss,
            train_accuracy: 0.0,
            test_loss,
            test_accuracy: 0.0,
            wall_seconds: 0.0,
        };
        let history = TrainHistory {
            records: vec![
                mk(1, 1.0, 1.0),
                mk(2, 0.8, 0.8),
                mk(3, 0.6, 0.9),
                mk(4, 0.4, 1.1),
            ],
        };
        assert_eq!(detect_overfit(&history, 2), Some(4));

        let monotone = TrainHistory {
            records: vec![mk(1, 1.0, 1.0), mk(2, 0.8, 0.9), mk(3, 0.6, 0.8)],
        };
        assert_eq!(detect_overfit(&monotone, 2), None);

        let single = TrainHistory {
            records: vec![mk(1, 1.0, 1.0)],
        };
        assert_eq!(detect_overfit(&single, 2), None);
    }

    #[test]
    fn history_csv_roundtrip() {
        let history = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.25,
                train_accuracy: 0.5,
                test_loss: 1.5,
                test_accuracy: 0.25,
                wall_seconds: 0.125,
            }],
        };
        let parsed = TrainHistory::from_csv(&history.to_csv()).unwrap();
        assert_eq!(history, parsed);
    }

    #[test]
    fn history_csv_rejects_missing_columns() {
        let err = TrainHistory::from_csv("epoch,train_loss\n1,2\n").unwrap_err();
        assert!(matches!(err, TrainError::BadHistory(_)));
    }

    #[test]
    fn history_accuracy_matches_metrics_recount() {
        let (train_set, test_set) = toy_sets(24);
        let mut model = ClassifierModel::init(tiny_config(3), 0, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_set, &test_set, &cfg).unwrap();
        let (_, preds) = evaluate_split(&model, &train_set, cfg.batch_size).unwrap();
        let via_metrics = accuracy_via_metrics(&preds, &train_set).unwrap();
        assert_eq!(history.records[1].train_accuracy, via_metrics);
    }
}
