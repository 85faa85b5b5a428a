//! Mini-batch training with Adam, global-norm clipping and best-validation
//! model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cab_autodiff::{clip_global_norm, global_norm, Adam, AdamConfig, AdError, Graph};
use cab_core::Instance;
use cab_eval::ade;
use cab_model::{training_objective, Batch, CvaeModel, DebiasConfig, LossConfig, ModelError};
use cab_synthworld::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// Write the latest weights every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Re-measure the clipped gradient norm on every step.
    pub debug_checks: bool,
    /// Horizon of the selection metric, seconds.
    pub select_horizon_s: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 30,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 0,
            debug_checks: false,
            select_horizon_s: 6.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.grad_clip > 0.0) {
            return Err(format!(
                "need lr > 0, batch_size >= 1 and grad_clip > 0, got {}, {}, {}",
                self.lr, self.batch_size, self.grad_clip
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("non-finite loss at step {step}; batch ids {ids:?}; components {components:?}")]
    NonFinite { step: u64, ids: Vec<u64>, components: Vec<(&'static str, f64)> },
    #[error("post-clip gradient norm {norm} exceeds bound {bound} at step {step}")]
    Clip { step: u64, norm: f64, bound: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty training set")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub components: Vec<(&'static str, f64)>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Owns the model and optimizer state between steps.
pub struct Trainer {
    pub model: CvaeModel,
    pub loss: LossConfig,
    pub debias: DebiasConfig,
    pub config: TrainConfig,
    opt: Adam,
}

impl Trainer {
    pub fn new(mut model: CvaeModel, loss: LossConfig, debias: DebiasConfig, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        model.loss = loss;
        Ok(Self { model, loss, debias, opt: Adam::new(config.adam()), config })
    }

    pub fn steps(&self) -> u64 {
        self.opt.steps()
    }

    pub fn step(&mut self, insts: &[&Instance]) -> Result<StepStats, TrainError> {
        let step = self.opt.steps();
        let batch = Batch::new(insts, &self.model.config)?;
        let (components, mut grads) = {
            let g = Graph::with_params(&self.model.params);
            let obj = training_objective(&g, &self.model.config, &self.loss, &self.debias, &batch, step)?;
            let components = obj.components();
            if components.iter().any(|(_, v)| !v.is_finite()) {
                return Err(TrainError::NonFinite { step, ids: batch.ids.clone(), components });
            }
            (components, g.backward(obj.total)?.param_grads(&self.model.params))
        };
        let grad_norm = clip_global_norm(&mut grads, self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(TrainError::NonFinite { step, ids: batch.ids, components });
        }
        if self.config.debug_checks {
            let norm = global_norm(&grads);
            if norm > self.config.grad_clip * (1.0 + 1e-12) {
                return Err(TrainError::Clip { step, norm, bound: self.config.grad_clip });
            }
        }
        self.opt.step(&mut self.model.params, &grads);
        Ok(StepStats { components, grad_norm })
    }

    /// Objective components averaged over `insts`, without updating anything.
    pub fn loss_on(&self, insts: &[&Instance]) -> Result<Vec<(&'static str, f64)>, TrainError> {
        let step = self.opt.steps();
        let mut acc: Vec<(&'static str, f64)> = Vec::new();
        for chunk in insts.chunks(self.config.batch_size) {
            let batch = Batch::new(chunk, &self.model.config)?;
            let g = Graph::with_params(&self.model.params);
            let obj = training_objective(&g, &self.model.config, &self.loss, &self.debias, &batch, step)?;
            accumulate(&mut acc, &obj.components(), chunk.len() as f64);
        }
        let n = insts.len() as f64;
        acc.iter_mut().for_each(|(_, v)| *v /= n);
        Ok(acc)
    }
}

fn accumulate(acc: &mut Vec<(&'static str, f64)>, comps: &[(&'static str, f64)], w: f64) {
    if acc.is_empty() {
        acc.extend(comps.iter().map(|&(k, _)| (k, 0.0)));
    }
    for ((_, a), (_, v)) in acc.iter_mut().zip(comps) {
        *a += w * v;
    }
}

/// Most-likely ADE over the first `horizon_s` seconds.
pub fn ml_ade(model: &CvaeModel, insts: &[&Instance], horizon_s: f64) -> Result<f64, TrainError> {
    let steps = ((horizon_s / model.config.dt).round() as usize).clamp(1, model.config.horizon_steps);
    let mut sum = 0.0;
    for chunk in insts.chunks(64) {
        for (p, inst) in model.predict_most_likely(chunk)?.iter().zip(chunk) {
            sum += ade(p, &inst.future, steps).map_err(|e| TrainError::Config(e.to_string()))?;
        }
    }
    Ok(sum / insts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub train: Vec<(String, f64)>,
    pub val: Vec<(String, f64)>,
    pub val_ade: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation ADE, or the last
    /// epoch when there is no validation set.
    pub best: CvaeModel,
    pub best_epoch: usize,
    pub best_val_ade: Option<f64>,
    pub log: Vec<EpochLog>,
}

fn owned(v: Vec<(&'static str, f64)>) -> Vec<(String, f64)> {
    v.into_iter().map(|(k, x)| (k.to_string(), x)).collect()
}

/// Shuffled mini-batch training. `on_epoch` sees every epoch's log and the
/// current weights.
pub fn train(
    model: CvaeModel,
    loss: LossConfig,
    debias: DebiasConfig,
    config: TrainConfig,
    train_set: &[Instance],
    val_set: &[Instance],
    mut on_epoch: impl FnMut(&EpochLog, &CvaeModel),
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1, 0));
    let mut trainer = Trainer::new(model, loss, debias, config)?;
    let val: Vec<&Instance> = val_set.iter().collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut out = TrainOutcome { best: trainer.model.clone(), best_epoch: 0, best_val_ade: None, log: Vec::new() };
    for epoch in 1..=trainer.config.epochs {
        let start = std::time::Instant::now();
        order.shuffle(&mut rng);
        let mut acc = Vec::new();
        for chunk in order.chunks(trainer.config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let stats = trainer.step(&batch)?;
            accumulate(&mut acc, &stats.components, chunk.len() as f64);
        }
        acc.iter_mut().for_each(|(_, v)| *v /= train_set.len() as f64);
        let (val_loss, val_ade) = if val.is_empty() {
            (Vec::new(), None)
        } else {
            (trainer.loss_on(&val)?, Some(ml_ade(&trainer.model, &val, trainer.config.select_horizon_s)?))
        };
        let log = EpochLog {
            epoch,
            steps: trainer.steps(),
            train: owned(acc),
            val: owned(val_loss),
            val_ade,
            seconds: start.elapsed().as_secs_f64(),
        };
        let improved = match (val_ade, out.best_val_ade) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            out.best = trainer.model.clone();
            out.best_epoch = epoch;
            out.best_val_ade = val_ade;
        }
        on_epoch(&log, &trainer.model);
        out.log.push(log);
    }
    Ok(out)
}
