//! Single linear layer with a softmax output, trained from zero by
//! mini-batch SGD on mean cross-entropy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CbclError, Result};
use crate::feature_store::{ClassId, FeatureVector};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// L2-normalize inputs before the linear layer (training and inference).
    #[serde(default)]
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            normalize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CbclError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CbclError::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean training loss over the whole set, before training and after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// Ascending; row `k` of `weights` scores `class_ids[k]`.
    class_ids: Vec<ClassId>,
    dim: usize,
    /// Row-major `C × d`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    normalize: bool,
}

impl LinearClassifier {
    /// Zero-initialized classifier over `class_ids` (sorted and deduplicated).
    pub fn zeros(mut class_ids: Vec<ClassId>, dim: usize, normalize: bool) -> Result<Self> {
        class_ids.sort_unstable();
        class_ids.dedup();
        if class_ids.is_empty() || dim == 0 {
            return Err(CbclError::Config(
                "classifier needs >= 1 class and dimension >= 1".into(),
            ));
        }
        let c = class_ids.len();
        Ok(LinearClassifier {
            class_ids,
            dim,
            weights: vec![0.0; c * dim],
            bias: vec![0.0; c],
            normalize,
        })
    }

    pub fn from_parts(
        class_ids: Vec<ClassId>,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        normalize: bool,
    ) -> Result<Self> {
        let c = class_ids.len();
        if c == 0 || dim == 0 || weights.len() != c * dim || bias.len() != c {
            return Err(CbclError::Data("classifier parameter shapes are inconsistent".into()));
        }
        if class_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CbclError::Data(
                "classifier class ids must be strictly ascending".into(),
            ));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(CbclError::Data("classifier parameters must be finite".into()));
        }
        Ok(LinearClassifier {
            class_ids,
            dim,
            weights,
            bias,
            normalize,
        })
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }

    fn input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(CbclError::Data(format!(
                "input has dimension {}, classifier expects {}",
                x.len(),
                self.dim
            )));
        }
        if !self.normalize {
            return Ok(x.to_vec());
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(if norm > 0.0 {
            x.iter().map(|v| v / norm).collect()
        } else {
            x.to_vec()
        })
    }

    fn logits_of(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    /// Raw scores `Wx + b`, one per entry of [`class_ids`](Self::class_ids).
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits_of(&self.input(x)?))
    }

    /// Highest-scoring class; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<ClassId> {
        let logits = self.logits(x)?;
        let mut best = 0;
        for (k, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = k;
            }
        }
        Ok(self.class_ids[best])
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    fn class_index(&self, label: ClassId) -> Result<usize> {
        self.class_ids
            .binary_search(&label)
            .map_err(|_| CbclError::Data(format!("label {label} is not a classifier class")))
    }

    /// Mean cross-entropy over `data` with its gradient with respect to the
    /// weights (row-major, like [`weights`](Self::weights)) and the bias.
    pub fn loss_and_gradient(&self, data: &[(FeatureVector, ClassId)]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let inputs = data
            .iter()
            .map(|(x, y)| Ok((self.input(x)?, self.class_index(*y)?)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<(&[f64], usize)> = inputs.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        Ok(self.batch_gradient(&refs))
    }

    fn batch_gradient(&self, batch: &[(&[f64], usize)]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.bias.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(x, y) in batch {
            let logits = self.logits_of(x);
            let lse = log_sum_exp(&logits);
            loss += lse - logits[y];
            for (k, l) in logits.iter().enumerate() {
                let p = (l - lse).exp();
                let g = (p - if k == y { 1.0 } else { 0.0 }) * scale;
                gb[k] += g;
                for (w, v) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *w += g * v;
                }
            }
        }
        (loss * scale, gw, gb)
    }

    fn mean_loss(&self, all: &[(&[f64], usize)]) -> f64 {
        let total: f64 = all
            .iter()
            .map(|&(x, y)| {
                let logits = self.logits_of(x);
                log_sum_exp(&logits) - logits[y]
            })
            .sum();
        total / all.len() as f64
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

pub fn train(data: &[(FeatureVector, ClassId)], config: &TrainConfig) -> Result<LinearClassifier> {
    train_with_history(data, config).map(|(c, _)| c)
}

/// Trains from zero; each epoch visits the data in a fresh permutation drawn
/// from a generator seeded once with `config.seed`.
pub fn train_with_history(
    data: &[(FeatureVector, ClassId)],
    config: &TrainConfig,
) -> Result<(LinearClassifier, TrainingHistory)> {
    config.validate()?;
    let Some((first, _)) = data.first() else {
        return Err(CbclError::Config("training set is empty".into()));
    };
    let mut model = LinearClassifier::zeros(data.iter().map(|(_, y)| *y).collect(), first.dim(), config.normalize)?;
    let inputs = data
        .iter()
        .map(|(x, y)| Ok((model.input(x)?, model.class_index(*y)?)))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<(&[f64], usize)> = inputs.iter().map(|(x, y)| (x.as_slice(), *y)).collect();

    let initial_loss = model.mean_loss(&all);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| all[i]));
            let (loss, gw, gb) = model.batch_gradient(&batch);
            if !loss.is_finite() {
                return Err(CbclError::Numerics {
                    epoch,
                    message: format!("mini-batch loss became {loss}"),
                });
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= config.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= config.learning_rate * g;
            }
        }
        let loss = model.mean_loss(&all);
        if !loss.is_finite() || model.weights.iter().chain(&model.bias).any(|v| !v.is_finite()) {
            return Err(CbclError::Numerics {
                epoch,
                message: format!("training loss became {loss}"),
            });
        }
        epoch_losses.push(loss);
    }
    Ok((
        model,
        TrainingHistory {
            initial_loss,
            epoch_losses,
        },
    ))
}
