//! Random hyperparameter search.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_loss, train, OptimizerConfig, TrainConfig, TrainingData};
use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, Crnn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamRange {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Choice { values: Vec<f64> },
}

impl ParamRange {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamRange::Fixed { value } => value.is_finite(),
            ParamRange::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            ParamRange::LogUniform { lo, hi } => *lo > 0.0 && hi.is_finite() && lo <= hi,
            ParamRange::Choice { values } => !values.is_empty() && values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "search range for {name} is empty or invalid: {self:?}"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ParamRange::Fixed { value } => *value,
            ParamRange::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            ParamRange::LogUniform { lo, hi } => (lo.ln() + (hi.ln() - lo.ln()) * rng.gen::<f64>()).exp(),
            ParamRange::Choice { values } => values[rng.gen_range(0..values.len())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: ParamRange,
    pub batch_size: ParamRange,
    pub residual_step: ParamRange,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: ParamRange::LogUniform { lo: 1e-5, hi: 1e-2 },
            batch_size: ParamRange::Choice {
                values: vec![4.0, 8.0, 16.0],
            },
            residual_step: ParamRange::Fixed { value: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    #[serde(default)]
    pub space: SearchSpace,
    pub budget: usize,
    pub trial_epochs: usize,
    pub seed: u64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_validation_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialOutcome {
    Completed { train_loss: f64, validation_loss: f64 },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Position in sampling order.
    pub index: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub residual_step: f64,
    pub outcome: TrialOutcome,
}

impl Trial {
    pub fn validation_loss(&self) -> Option<f64> {
        match self.outcome {
            TrialOutcome::Completed { validation_loss, .. } => Some(validation_loss),
            TrialOutcome::Failed { .. } => None,
        }
    }
}

/// Trials ranked by validation loss; failed trials last, in sampling order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub trials: Vec<Trial>,
}

impl SearchReport {
    pub fn best(&self) -> &Trial {
        &self.trials[0]
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("rank,trial,learning_rate,batch_size,residual_step,status,train_loss,validation_loss\n");
        for (rank, t) in self.trials.iter().enumerate() {
            let (status, tl, vl) = match &t.outcome {
                TrialOutcome::Completed {
                    train_loss,
                    validation_loss,
                } => (
                    "completed".to_string(),
                    format!("{train_loss:.16e}"),
                    format!("{validation_loss:.16e}"),
                ),
                TrialOutcome::Failed { reason } => (
                    format!("failed: {}", reason.replace(',', ";")),
                    String::new(),
                    String::new(),
                ),
            };
            out.push_str(&format!(
                "{},{},{:.16e},{},{:.16e},{},{},{}\n",
                rank + 1,
                t.index + 1,
                t.learning_rate,
                t.batch_size,
                t.residual_step,
                status,
                tl,
                vl
            ));
        }
        out
    }
}

/// Samples `budget` configurations, trains each from the same initial
/// parameters on all but the last `validation_fraction` of `data`, and ranks
/// them by loss on the held-out tail. Diverging trials are recorded, not fatal.
pub fn random_search(arch: &ArchitectureConfig, data: &TrainingData, cfg: &SearchConfig) -> Result<SearchReport> {
    if cfg.budget == 0 || cfg.trial_epochs == 0 {
        return Err(Error::Config(
            "search budget and trial_epochs must be at least 1".into(),
        ));
    }
    cfg.space.learning_rate.validate("learning_rate")?;
    cfg.space.batch_size.validate("batch_size")?;
    cfg.space.residual_step.validate("residual_step")?;
    let (train_set, validation) = data.split_tail(cfg.validation_fraction)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut completed = Vec::new();
    let mut failed = Vec::new();
    for index in 0..cfg.budget {
        let learning_rate = cfg.space.learning_rate.sample(&mut rng);
        let batch_size = cfg.space.batch_size.sample(&mut rng).round().max(0.0) as usize;
        let residual_step = cfg.space.residual_step.sample(&mut rng);
        let outcome = run_trial(
            arch,
            &train_set,
            &validation,
            cfg,
            learning_rate,
            batch_size,
            residual_step,
        )?;
        let trial = Trial {
            index,
            learning_rate,
            batch_size,
            residual_step,
            outcome,
        };
        if trial.validation_loss().is_some() {
            completed.push(trial);
        } else {
            failed.push(trial);
        }
    }
    if completed.is_empty() {
        return Err(Error::NoTrainableConfig);
    }
    completed.sort_by(|a, b| {
        a.validation_loss()
            .unwrap()
            .total_cmp(&b.validation_loss().unwrap())
            .then(a.index.cmp(&b.index))
    });
    completed.extend(failed);
    Ok(SearchReport { trials: completed })
}

fn run_trial(
    arch: &ArchitectureConfig,
    train_set: &TrainingData,
    validation: &TrainingData,
    cfg: &SearchConfig,
    learning_rate: f64,
    batch_size: usize,
    residual_step: f64,
) -> Result<TrialOutcome> {
    let arch = ArchitectureConfig {
        residual_step,
        ..arch.clone()
    };
    let mut model = Crnn::init(arch, cfg.seed)?;
    let tc = TrainConfig {
        epochs: cfg.trial_epochs,
        batch_size,
        learning_rate,
        optimizer: cfg.optimizer,
        seed: cfg.seed,
        checkpoint_every: 0,
        log_every: 0,
    };
    let failed = |reason: String| Ok(TrialOutcome::Failed { reason });
    match train(&mut model, train_set, &tc) {
        Ok(out) => {
            let validation_loss = evaluate_loss(&model, validation)?;
            if !validation_loss.is_finite() {
                return failed("non-finite validation loss".into());
            }
            Ok(TrialOutcome::Completed {
                train_loss: *out.history.last().expect("at least one epoch"),
                validation_loss,
            })
        }
        Err(e @ (Error::NonFiniteLoss { .. } | Error::Config(_))) => failed(e.to_string()),
        Err(e) => Err(e),
    }
}
