use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::Layer;
use super::network::{Gradients, Network};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// SGD-with-momentum settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective over the epoch's batches (task loss plus penalty).
    pub loss: f64,
    /// Mean cross-entropy over the epoch's batches.
    pub task_loss: f64,
    /// Fraction of samples classified correctly while they were trained on.
    pub accuracy: f64,
    /// Largest per-layer `max |F^T F - I|` at the end of the epoch.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ortho_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Accuracy on the training set with the final, frozen parameters.
    pub final_train_accuracy: f64,
}

/// An extra term added to the training objective.
pub trait Regularizer<T: Scalar> {
    /// Adds the term's gradient into `grads` and returns its value.
    fn apply(&self, network: &Network<T>, grads: &mut Gradients<T>) -> T;

    fn residual(&self, _network: &Network<T>) -> Option<f64> {
        None
    }
}

/// Which layers the optimizer updates and what is added to the loss.
pub struct FitOptions<'a, T: Scalar> {
    pub trainable: &'a dyn Fn(&Layer<T>) -> bool,
    pub regularizer: Option<&'a dyn Regularizer<T>>,
}

/// Softmax cross-entropy of `logits` against `label`, with its gradient.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> (T, Tensor<T>) {
    let z = logits.data();
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let lse = m + sum.ln();
    let loss = lse - z[label];
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / sum).collect();
    grad[label] -= T::one();
    (loss, Tensor::new(logits.shape().to_vec(), grad).expect("same shape"))
}

/// Fraction of samples whose arg-max prediction equals the label; ties in
/// the logits go to the lowest class index.
pub fn evaluate<T: Scalar>(network: &Network<T>, dataset: &Dataset<T>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in dataset.images().iter().zip(dataset.labels()) {
        if network.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Plain SGD training of every parameter on cross-entropy.
pub fn train<T: Scalar>(network: &mut Network<T>, dataset: &Dataset<T>, config: &TrainConfig) -> Result<TrainReport> {
    fit(
        network,
        dataset,
        config,
        FitOptions {
            trainable: &|_| true,
            regularizer: None,
        },
    )
}

pub fn fit<T: Scalar>(
    network: &mut Network<T>,
    dataset: &Dataset<T>,
    config: &TrainConfig,
    options: FitOptions<'_, T>,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if network.num_outputs() != dataset.num_classes() {
        return Err(Error::dim("network outputs", dataset.num_classes(), network.num_outputs()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let trainable: Vec<bool> = network.layers().iter().map(|l| (options.trainable)(l)).collect();
    let mut velocity = network.zero_gradients();
    let lr = T::lit(config.learning_rate);
    let mu = T::lit(config.momentum);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut task_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = network.zero_gradients();
            let mut task = T::zero();
            for &i in batch {
                let (x, y) = dataset.sample(i);
                let (logits, caches) = network.forward_cached(x)?;
                if logits.argmax() == y {
                    correct += 1;
                }
                let (loss, g) = softmax_cross_entropy(&logits, y);
                task += loss;
                let sample_grads = network.backward(&caches, &g)?;
                for (acc, g) in grads.iter_mut().zip(&sample_grads) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        a.axpy(T::one(), b)?;
                    }
                }
            }
            let inv = T::one() / T::lit(batch.len() as f64);
            task *= inv;
            for g in grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            let penalty = match options.regularizer {
                Some(r) => r.apply(network, &mut grads),
                None => T::zero(),
            };
            let total = task + penalty;
            if !total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    loss: total.as_f64(),
                });
            }

            for (((layer, grads), vel), &on) in network
                .layers_mut()
                .iter_mut()
                .zip(&grads)
                .zip(velocity.iter_mut())
                .zip(&trainable)
            {
                if !on {
                    continue;
                }
                for ((p, g), v) in layer.params_mut().into_iter().zip(grads).zip(vel.iter_mut()) {
                    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vv = mu * *vv + gv;
                        *pv -= lr * *vv;
                    }
                }
            }

            loss_sum += total.as_f64();
            task_sum += task.as_f64();
            batches += 1;
        }

        epochs.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            task_loss: task_sum / batches as f64,
            accuracy: correct as f64 / dataset.len() as f64,
            ortho_residual: options.regularizer.and_then(|r| r.residual(network)),
        });
    }

    Ok(TrainReport {
        epochs,
        final_train_accuracy: evaluate(network, dataset)?,
    })
}
