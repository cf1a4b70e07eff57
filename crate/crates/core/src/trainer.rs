//! Alignment training loop.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Backbone, StudentModel};
use crate::error::{Error, Result};
use crate::losses::{cosine_similarity, LossConfig, LossKind, NceDenominator, DEFAULT_TEMPERATURE};

/// Parameter update rule. Weight decay is always decoupled from the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adamw {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adamw() -> Self {
        Optimizer::Adamw {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub loss: LossKind,
    pub nce_denominator: NceDenominator,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 1e-2,
            batch_size: 32,
            epochs: 50,
            temperature: DEFAULT_TEMPERATURE,
            loss: LossKind::Nce,
            nce_denominator: NceDenominator::Inclusive,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            temperature: self.temperature,
            denominator: self.nce_denominator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.loss == LossKind::Nce && self.batch_size < 2 {
            return bad("NCE needs batch_size >= 2".into());
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                bad(format!("momentum must be in [0, 1), got {momentum}"))
            }
            Optimizer::Adamw { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                bad("adamw needs beta1, beta2 in [0, 1) and eps > 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// Student input and the target vector it should align with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub features: Array2<f64>,
    pub target: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_val_cosine: f64,
    pub train_loss: Vec<f64>,
    pub val_cosine: Vec<f64>,
    /// 1-based epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// One `{"epoch", "train_loss", "val_cosine"}` JSON object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (i, (loss, cos)) in self.train_loss.iter().zip(&self.val_cosine).enumerate() {
            let rec = serde_json::json!({ "epoch": i + 1, "train_loss": loss, "val_cosine": cos });
            writeln!(out, "{rec}").expect("write to vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Mean cosine similarity between encoded features and their targets.
pub fn validate<B: Backbone>(model: &StudentModel<B>, pairs: &[TrainPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("validation needs at least one pair".into()));
    }
    let mut total = 0.0;
    for (row, p) in pairs.iter().enumerate() {
        let emb = model.encode(p.features.view())?;
        total += cosine_similarity(emb.view(), p.target.view()).map_err(|e| match e {
            Error::ZeroNorm { what, .. } => Error::ZeroNorm { what, row },
            other => other,
        })?;
    }
    Ok(total / pairs.len() as f64)
}

struct OptimizerState {
    kind: Optimizer,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    step: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, shapes: &[Array2<f64>]) -> Self {
        let zeros = || shapes.iter().map(|g| Array2::zeros(g.dim())).collect();
        Self {
            kind,
            first: zeros(),
            second: match kind {
                Optimizer::Adamw { .. } => zeros(),
                Optimizer::Sgd { .. } => Vec::new(),
            },
            step: 0,
        }
    }

    fn apply(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>], lr: f64, decay: f64) {
        self.step += 1;
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if decay != 0.0 {
                p.mapv_inplace(|v| v * (1.0 - lr * decay));
            }
            match self.kind {
                Optimizer::Sgd { momentum } => {
                    if momentum == 0.0 {
                        p.scaled_add(-lr, g);
                    } else {
                        let v = &mut self.first[k];
                        v.zip_mut_with(g, |v, g| *v = momentum * *v + g);
                        p.scaled_add(-lr, v);
                    }
                }
                Optimizer::Adamw { beta1, beta2, eps } => {
                    let m = &mut self.first[k];
                    m.zip_mut_with(g, |m, g| *m = beta1 * *m + (1.0 - beta1) * g);
                    let v = &mut self.second[k];
                    v.zip_mut_with(g, |v, g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    ndarray::Zip::from(p)
                        .and(&*m)
                        .and(&*v)
                        .for_each(|p, m, v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
                }
            }
        }
    }
}

/// Train `model` in place-by-value and return the best-validation parameters.
///
/// Batches are drawn from a seeded shuffle each epoch. Under NCE the trailing
/// incomplete batch is dropped; under CS it is kept.
pub fn train<B: Backbone>(
    config: &TrainConfig,
    train_pairs: &[TrainPair],
    val_pairs: &[TrainPair],
    mut model: StudentModel<B>,
) -> Result<(StudentModel<B>, TrainHistory)> {
    config.validate()?;
    model.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation pairs must be nonempty".into(),
        ));
    }
    let out_dim = model.output_dim();
    if let Some(p) = train_pairs.iter().chain(val_pairs).find(|p| p.target.len() != out_dim) {
        return Err(Error::Shape(format!(
            "target of length {} for a model producing {out_dim}",
            p.target.len()
        )));
    }
    let drop_last = config.loss == LossKind::Nce;
    if drop_last && train_pairs.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "NCE with batch_size {} needs at least that many training pairs, got {}",
            config.batch_size,
            train_pairs.len()
        )));
    }

    let mut history = TrainHistory {
        initial_val_cosine: validate(&model, val_pairs)?,
        ..Default::default()
    };
    if config.epochs == 0 {
        return Ok((model, history));
    }

    let loss_cfg = config.loss_config();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut opt = OptimizerState::new(config.optimizer, &model.zero_grads());
    let mut best: Option<(f64, StudentModel<B>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            if drop_last && batch.len() < config.batch_size {
                break;
            }
            let caches = batch
                .iter()
                .map(|&i| model.forward(train_pairs[i].features.view()))
                .collect::<Result<Vec<_>>>()?;
            let mut students = Array2::zeros((batch.len(), out_dim));
            let mut targets = Array2::zeros((batch.len(), out_dim));
            for (r, (&i, c)) in batch.iter().zip(&caches).enumerate() {
                students.row_mut(r).assign(&c.output);
                targets.row_mut(r).assign(&train_pairs[i].target);
            }
            let res = loss_cfg.evaluate(students.view(), targets.view())?;
            if !res.value.is_finite() || res.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += res.value;
            seen += batch.len();

            let mut grads = model.zero_grads();
            for (r, (&i, c)) in batch.iter().zip(&caches).enumerate() {
                model.backward(train_pairs[i].features.view(), c, res.grad.row(r), &mut grads);
            }
            opt.apply(
                model.parameters_mut(),
                &grads,
                config.learning_rate,
                config.weight_decay,
            );
        }
        let epoch_loss = loss_sum / seen as f64;
        let val = validate(&model, val_pairs)?;
        log::debug!("epoch {epoch}: train_loss {epoch_loss:.6} val_cosine {val:.6}");
        history.train_loss.push(epoch_loss);
        history.val_cosine.push(val);
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, model.clone()));
            history.best_epoch = Some(epoch);
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}
