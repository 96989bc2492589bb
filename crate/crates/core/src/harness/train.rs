use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, VqaModel};
use crate::objectives::{build_prior_table, reshaped_objective, BatchLossRecord, LossVariant, ObjectiveInputs, PriorTable};
use crate::synthbench::rng::{derive_seed, Mt64};
use crate::synthbench::Split;
use crate::tensorcore::{adam_step, AdamConfig, ParamSet, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: LossVariant,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub model: ModelConfig,
    pub shuffle: bool,
    /// Floor on the per-sample weight; 0 leaves the objective unchanged.
    pub min_weight: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::Lpf { gamma: 1.0 },
            lr: 3e-4,
            batch_size: 256,
            epochs: 21,
            seed: 0,
            model: ModelConfig::default(),
            shuffle: true,
            min_weight: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Defaults with one seed driving both initialization and shuffling.
    pub fn seeded(variant: LossVariant, model: ModelConfig, seed: u64) -> Self {
        Self {
            variant,
            seed,
            model: ModelConfig { seed, ..model },
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_weight) {
            return Err(Error::invalid("min_weight", "must lie in [0, 1]"));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_lpf: f64,
    pub mean_qo: f64,
    pub mean_alpha: f64,
    pub mean_beta: f64,
    /// Fused-path accuracy on the training batches, before each update.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub variant: String,
    pub gamma: f64,
    pub epochs: Vec<EpochLog>,
}

/// Gradients of the two loss terms taken separately on one batch.
#[derive(Debug, Clone)]
pub struct ComponentGradients {
    pub lpf: ParamSet,
    pub qo: ParamSet,
}

/// Owns the model and optimizer state of one run and steps through batches.
#[derive(Debug)]
pub struct Trainer<'a> {
    split: &'a Split,
    config: TrainConfig,
    pub model: VqaModel,
    priors: Option<PriorTable>,
}

struct BatchData {
    tokens: Vec<Vec<usize>>,
    features: Tensor,
    targets: Vec<usize>,
    qtypes: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(split: &'a Split, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        config.model.check_split(split)?;
        if split.is_empty() {
            return Err(Error::invalid("split", "training split is empty"));
        }
        let priors = match config.variant {
            LossVariant::Precomputed => Some(build_prior_table(split)?),
            _ => None,
        };
        Ok(Self {
            split,
            model: VqaModel::init(config.model.clone())?,
            config,
            priors,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn gather(&self, indices: &[usize]) -> Result<BatchData> {
        let samples = &self.split.samples;
        let mut features = Vec::with_capacity(indices.len() * self.split.v_in_dim);
        for &i in indices {
            features.extend_from_slice(&samples[i].visual_feature);
        }
        Ok(BatchData {
            tokens: indices.iter().map(|&i| samples[i].question_tokens.clone()).collect(),
            features: Tensor::new(vec![indices.len(), self.split.v_in_dim], features)?,
            targets: indices.iter().map(|&i| samples[i].answer_id).collect(),
            qtypes: indices.iter().map(|&i| samples[i].qtype_id).collect(),
        })
    }

    /// Builds forward pass and objective for a batch on `tape`, reading values from `params`.
    fn objective(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        batch: &BatchData,
    ) -> Result<(crate::objectives::LossVars, BatchLossRecord, Tensor)> {
        let f = self
            .model
            .layout
            .forward(params, tape, &batch.tokens, batch.features.clone())?;
        let (vars, record) = reshaped_objective(
            tape,
            ObjectiveInputs {
                variant: self.config.variant,
                logits_vqa: f.logits_vqa,
                logits_qo: f.logits_qo,
                targets: &batch.targets,
                qtype_ids: &batch.qtypes,
                priors: self.priors.as_ref(),
                min_weight: self.config.min_weight,
            },
        )?;
        if !record.total.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                location: format!("batch of {} samples", batch.targets.len()),
            });
        }
        Ok((vars, record, tape.value(f.logits_vqa).clone()))
    }

    /// One update: forward, `L_total` backward, Adam on every parameter, zero grads.
    ///
    /// Returns the batch record and the number of correct fused predictions
    /// made before the update.
    pub fn step(&mut self, indices: &[usize]) -> Result<(BatchLossRecord, usize)> {
        let batch = self.gather(indices)?;
        let mut tape = Tape::new();
        let (vars, record, logits) = self.objective(&self.model.params, &mut tape, &batch)?;
        let correct = (0..indices.len())
            .filter(|&i| argmax(logits.row(i)) == batch.targets[i])
            .count();
        self.model.params.zero_grad();
        tape.backward(vars.total, &mut self.model.params)?;
        if let Some(p) = self.model.params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                location: p.name.clone(),
            });
        }
        adam_step(&mut self.model.params, &self.config.adam())?;
        self.model.params.zero_grad();
        Ok((record, correct))
    }

    /// Backpropagates `L_LPF` and `L_QO` separately at the current parameters.
    pub fn component_gradients(&self, indices: &[usize]) -> Result<ComponentGradients> {
        let batch = self.gather(indices)?;
        let run = |pick_qo: bool| -> Result<ParamSet> {
            let mut params = self.model.params.clone();
            params.zero_grad();
            let mut tape = Tape::new();
            let (vars, _, _) = self.objective(&self.model.params, &mut tape, &batch)?;
            tape.backward(if pick_qo { vars.qo } else { vars.lpf }, &mut params)?;
            Ok(params)
        };
        Ok(ComponentGradients {
            lpf: run(false)?,
            qo: run(true)?,
        })
    }

    /// Sample order for an epoch: shuffled with a seed derived from (run seed, epoch).
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.split.len()).collect();
        if self.config.shuffle {
            Mt64::new(derive_seed(self.config.seed, epoch as u64)).shuffle(&mut order);
        }
        order
    }

    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochLog> {
        let order = self.epoch_order(epoch);
        let (mut lpf, mut qo, mut alpha, mut beta) = (0.0, 0.0, 0.0, 0.0);
        let mut correct = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let (record, c) = self.step(chunk)?;
            let b = chunk.len() as f64;
            lpf += record.lpf * b;
            qo += record.qo * b;
            alpha += record.alpha.iter().sum::<f64>();
            beta += record.beta.iter().sum::<f64>();
            correct += c;
        }
        let n = order.len() as f64;
        Ok(EpochLog {
            epoch,
            mean_lpf: lpf / n,
            mean_qo: qo / n,
            mean_alpha: alpha / n,
            mean_beta: beta / n,
            train_accuracy: correct as f64 / n,
        })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains both branches jointly under `L_total` for `config.epochs` epochs.
///
/// The returned model keeps the question-only weights; inference through
/// [`VqaModel::predict`] never reads them.
pub fn train(split: &Split, config: &TrainConfig) -> Result<(VqaModel, RunLog)> {
    let mut trainer = Trainer::new(split, config.clone())?;
    let mut log = RunLog {
        variant: config.variant.kind().to_string(),
        gamma: config.variant.gamma(),
        epochs: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        log.epochs.push(trainer.run_epoch(epoch)?);
    }
    Ok((trainer.model, log))
}
