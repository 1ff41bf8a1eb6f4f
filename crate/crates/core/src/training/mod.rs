//! Loss, the mini-batch training loop and hyperparameter search.

mod normalize;
mod optim;
mod search;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Crnn, ModelParams};
use crate::tensor::{Tape, Tensor, Var};

pub use normalize::{LabelTransform, Preprocessing, StandardizationStats, DEFAULT_SIGMA_FLOOR, LABEL_CLIP};
pub use optim::{Optimizer, OptimizerConfig};
pub use search::{random_search, ParamRange, SearchConfig, SearchReport, SearchSpace, Trial, TrialOutcome};

/// Root-mean-square of `pred − label` over every element, recorded on the tape.
pub fn l2_loss(tape: &mut Tape, pred: Var, label: Var) -> Result<Var> {
    let diff = tape.sub(pred, label)?;
    let sq = tape.mul(diff, diff)?;
    let ms = tape.mean(sq);
    Ok(tape.sqrt(ms))
}

/// Value-only [`l2_loss`].
pub fn l2_loss_value(pred: &Tensor, label: &Tensor) -> Result<f64> {
    if pred.shape() != label.shape() {
        return Err(Error::Dimension(format!(
            "loss operands differ in shape: {:?} vs {:?}",
            pred.shape(),
            label.shape()
        )));
    }
    let ss: f64 = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Emit a checkpoint every this many epochs; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Log a progress line every this many epochs; 0 disables.
    #[serde(default)]
    pub log_every: usize,
}

impl TrainConfig {
    /// Full-scale setting: 35000 epochs, batch 100, learning rate 1e-4.
    pub fn full_scale() -> Self {
        Self {
            epochs: 35_000,
            batch_size: 100,
            ..Self::desk()
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs: 2000,
            batch_size: 16,
            learning_rate: 1e-4,
            optimizer: OptimizerConfig::adam(),
            seed: 0,
            checkpoint_every: 0,
            log_every: 100,
        }
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::Config(format!(
                "batch_size {} must be in 1..={n_train} (number of training storms)",
                self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} is invalid",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Preprocessed sequences: inputs `[N, T, F]`, labels `[N, T, n_sp]`.
#[derive(Debug, Clone)]
pub struct TrainingData {
    inputs: Tensor,
    labels: Tensor,
}

impl TrainingData {
    pub fn new(inputs: Tensor, labels: Tensor) -> Result<Self> {
        let (si, sl) = (inputs.shape(), labels.shape());
        if si.len() != 3 || sl.len() != 3 || si[0] != sl[0] || si[1] != sl[1] {
            return Err(Error::Dimension(format!(
                "training inputs {si:?} and labels {sl:?} are not [N, T, F] and [N, T, n_sp]"
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn gather(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let pick = |t: &Tensor| {
            let parts: Vec<Tensor> = indices.iter().map(|&i| t.index_axis0(i)).collect();
            Tensor::stack(&parts).expect("equal shapes")
        };
        (pick(&self.inputs), pick(&self.labels))
    }

    /// Splits off the last `ceil(fraction·N)` sequences (at least one, and
    /// at least one left behind).
    pub fn split_tail(&self, fraction: f64) -> Result<(TrainingData, TrainingData)> {
        let n = self.len();
        let n_tail = ((fraction * n as f64).ceil() as usize).max(1);
        if n < 2 || n_tail >= n {
            return Err(Error::Contract(format!("cannot hold out {n_tail} of {n} sequences")));
        }
        let head: Vec<usize> = (0..n - n_tail).collect();
        let tail: Vec<usize> = (n - n_tail..n).collect();
        let (hi, hl) = self.gather(&head);
        let (ti, tl) = self.gather(&tail);
        Ok((TrainingData::new(hi, hl)?, TrainingData::new(ti, tl)?))
    }
}

/// Per-epoch callback payload.
#[derive(Debug)]
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub params: &'a ModelParams,
    pub improved: bool,
    pub checkpoint_due: bool,
    pub log_due: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Epoch-mean loss, one entry per epoch.
    pub history: Vec<f64>,
    pub best_epoch: usize,
    pub best_params: ModelParams,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{:.16e}\n", i + 1, l));
    }
    out
}

/// Loss and gradients for one batch; parameters are left untouched.
pub fn batch_gradients(model: &Crnn, inputs: &Tensor, labels: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape, true)?;
    let pred = model.forward_sequence(&mut tape, &vars, inputs)?;
    let label = tape.constant(labels.clone());
    let loss = l2_loss(&mut tape, pred, label)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let grads = vars
        .all()
        .into_iter()
        .map(|v| grads.take(v).expect("parameters always receive a gradient"))
        .collect();
    Ok((value, grads))
}

/// Loss of the current parameters on `data`, without gradients.
pub fn evaluate_loss(model: &Crnn, data: &TrainingData) -> Result<f64> {
    let pred = model.predict(data.inputs())?;
    l2_loss_value(&pred, data.labels())
}

pub fn train(model: &mut Crnn, data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, cfg, |_| Ok(()))
}

/// Mini-batch training. Storms are reshuffled each epoch from a generator
/// seeded with `cfg.seed`; the loss of each batch is the RMSE over its full
/// predicted sequence. `on_epoch` sees every epoch's mean loss and the
/// current parameters. On return `model` holds the final parameters and the
/// outcome holds the lowest-loss ones.
pub fn train_with(
    model: &mut Crnn,
    data: &TrainingData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(data.len())?;
    let arch = model.config();
    let (ds, ls) = (data.inputs.shape(), data.labels.shape());
    if ds[1] != arch.n_steps || ds[2] != arch.n_features || ls[2] != arch.n_sp() {
        return Err(Error::Dimension(format!(
            "training data inputs {ds:?} / labels {ls:?} do not fit the architecture (T={}, F={}, n_sp={})",
            arch.n_steps,
            arch.n_features,
            arch.n_sp()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.params().tensors());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.gather(chunk);
            let (loss, grads) = batch_gradients(model, &x, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            opt.step(&mut model.params_mut().tensors_mut(), &grad_refs);
            total += loss;
            batches += 1;
        }
        let mean_loss = total / batches as f64;
        history.push(mean_loss);
        let improved = best.as_ref().is_none_or(|(_, l, _)| mean_loss < *l);
        if improved {
            best = Some((epoch, mean_loss, model.params().clone()));
        }
        let report = EpochReport {
            epoch,
            mean_loss,
            params: model.params(),
            improved,
            checkpoint_due: cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0,
            log_due: cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch == 1),
        };
        on_epoch(&report)?;
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchitectureConfig;

    fn tiny_data(n: usize, t: usize, seed: u64) -> TrainingData {
        use rand::Rng;
        let cfg = ArchitectureConfig::tiny(t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[n, t, cfg.n_features], |_| rng.gen_range(-1.0..1.0));
        let y = Tensor::from_fn(&[n, t, cfg.n_sp()], |_| rng.gen_range(-0.5..0.5));
        TrainingData::new(x, y).unwrap()
    }

    #[test]
    fn loss_examples() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(l2_loss_value(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 1.0);
        assert_eq!(l2_loss_value(&b, &a).unwrap(), 1.0);
        let d = l2_loss_value(&Tensor::from_vec(vec![3.0, 4.0]), &Tensor::zeros(&[2])).unwrap();
        assert!((d - (12.5f64).sqrt()).abs() < 1e-15);
        assert!(matches!(
            l2_loss_value(&a, &Tensor::zeros(&[2, 2])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn tape_loss_matches_value() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::from_vec(vec![3.0, 4.0]));
        let l = tape.constant(Tensor::zeros(&[2]));
        let loss = l2_loss(&mut tape, p, l).unwrap();
        assert!((tape.value(loss).item() - 12.5f64.sqrt()).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        // d/dp sqrt(mean(p²)) = p / (n·rms)
        let rms = 12.5f64.sqrt();
        let expected = [3.0 / (2.0 * rms), 4.0 / (2.0 * rms)];
        for (a, b) in g.get(p).unwrap().data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_untouched() {
        let data = tiny_data(3, 2, 1);
        let mut model = Crnn::init(ArchitectureConfig::tiny(2), 5).unwrap();
        let before = model.params().clone();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            ..TrainConfig::desk()
        };
        train(&mut model, &data, &cfg).unwrap();
        for (a, b) in model.params().tensors().iter().zip(before.tensors()) {
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn small_sgd_steps_descend() {
        let data = tiny_data(1, 2, 2);
        let mut model = Crnn::init(ArchitectureConfig::tiny(2), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 1,
            learning_rate: 1e-5,
            optimizer: OptimizerConfig::Sgd,
            ..TrainConfig::desk()
        };
        let out = train(&mut model, &data, &cfg).unwrap();
        assert!(out.history[1] <= out.history[0]);
    }

    #[test]
    fn training_is_reproducible() {
        let data = tiny_data(4, 2, 3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 1e-3,
            ..TrainConfig::desk()
        };
        let run = || {
            let mut model = Crnn::init(ArchitectureConfig::tiny(2), 9).unwrap();
            train(&mut model, &data, &cfg).unwrap().history
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn batch_larger_than_data_is_config_error() {
        let data = tiny_data(2, 2, 4);
        let mut model = Crnn::init(ArchitectureConfig::tiny(2), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 3,
            ..TrainConfig::desk()
        };
        assert!(matches!(train(&mut model, &data, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn diverging_run_names_epoch_and_batch() {
        let mut data = tiny_data(2, 2, 5);
        data.labels.data_mut()[0] = f64::NAN;
        let mut model = Crnn::init(ArchitectureConfig::tiny(2), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::desk()
        };
        assert!(matches!(
            train(&mut model, &data, &cfg),
            Err(Error::NonFiniteLoss { epoch: 1, batch: 1 })
        ));
    }

    #[test]
    fn history_csv_layout() {
        let csv = history_csv(&[0.5, 0.25]);
        assert_eq!(
            csv,
            "epoch,mean_loss\n1,5.0000000000000000e-1\n2,2.5000000000000000e-1\n"
        );
    }
}
