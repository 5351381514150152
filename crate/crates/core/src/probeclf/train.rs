use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{eval_uas, normalize_excluding, ArcScorer, ParseInstance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Coefficient of `0.5 * l2 * |params|^2` in the objective.
    pub l2: f64,
    pub seed: u64,
    /// Minibatch steps with accumulated squared-gradient scaling. When off,
    /// full-batch descent whose step halves until the objective decreases.
    pub adaptive: bool,
    /// Sentences per minibatch in adaptive mode.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 20,
            l2: 1e-5,
            seed: 0,
            adaptive: true,
            batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("L2 coefficient must be >= 0, got {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P, T> {
    pub probe: P,
    /// Full training objective after each epoch.
    pub losses: Vec<T>,
    /// Dev UAS after each epoch, when a dev set was given.
    pub dev_uas: Vec<Option<f64>>,
}

/// Mean negative log-likelihood of the gold heads plus the L2 term, and its
/// gradient with respect to the scorer's parameters.
pub fn objective_and_grad<T: Scalar, S: ArcScorer<T>>(
    scorer: &S,
    instances: &[&ParseInstance<T>],
    l2: T,
) -> Result<(T, Vec<T>)> {
    let mut grad = vec![T::zero(); scorer.params().len()];
    let mut loss = T::zero();
    let mut count = 0usize;
    let mut probs = Vec::new();
    for inst in instances {
        scorer.check(inst)?;
        probs.resize(inst.n_nodes, T::zero());
        for (d, g) in inst.arcs() {
            scorer.logits(inst, d, &mut probs);
            let gold_logit = probs[g];
            loss += normalize_excluding(&mut probs, d) - gold_logit;
            probs[g] -= T::one();
            scorer.backprop(inst, d, &probs, &mut grad);
            count += 1;
        }
    }
    let params = scorer.params();
    if count > 0 {
        let inv = T::one() / T::lit(count as f64);
        loss *= inv;
        grad.iter_mut().for_each(|g| *g *= inv);
    }
    let sq: T = params.iter().map(|p| *p * *p).sum();
    loss += T::lit(0.5) * l2 * sq;
    for (g, p) in grad.iter_mut().zip(params) {
        *g += l2 * *p;
    }
    Ok((loss, grad))
}

fn objective<T: Scalar, S: ArcScorer<T>>(scorer: &S, instances: &[&ParseInstance<T>], l2: T) -> Result<T> {
    objective_and_grad(scorer, instances, l2).map(|(l, _)| l)
}

fn finite<T: Scalar>(v: T, epoch: usize, what: &str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v} at epoch {}", epoch + 1)))
    }
}

/// Trains `init` on the scored arcs of `train_set`. Single-threaded and
/// deterministic for a given seed.
pub fn train<T: Scalar, S: ArcScorer<T>>(
    init: S,
    train_set: &[ParseInstance<T>],
    dev_set: Option<&[ParseInstance<T>]>,
    config: &TrainConfig,
) -> Result<TrainOutcome<S, T>> {
    config.validate()?;
    let mut probe = init;
    let l2 = T::lit(config.l2);
    let lr = T::lit(config.learning_rate);
    let all: Vec<&ParseInstance<T>> = train_set.iter().collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut dev_uas = Vec::with_capacity(config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut accum = vec![T::zero(); probe.params().len()];
    let mut step = lr;
    let eps = T::lit(1e-8);

    for epoch in 0..config.epochs {
        if config.adaptive {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&ParseInstance<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
                let (loss, grad) = objective_and_grad(&probe, &batch, l2)?;
                finite(loss, epoch, "minibatch loss")?;
                for ((p, g), a) in probe.params_mut().iter_mut().zip(&grad).zip(accum.iter_mut()) {
                    *a += *g * *g;
                    *p -= lr * *g / (a.sqrt() + eps);
                }
            }
            losses.push(finite(objective(&probe, &all, l2)?, epoch, "training loss")?);
        } else {
            let (loss, grad) = objective_and_grad(&probe, &all, l2)?;
            let loss = finite(loss, epoch, "training loss")?;
            let mut accepted = loss;
            for _ in 0..40 {
                let mut trial = probe.clone();
                for (p, g) in trial.params_mut().iter_mut().zip(&grad) {
                    *p -= step * *g;
                }
                let l = objective(&trial, &all, l2)?;
                if l.is_finite() && l <= loss {
                    probe = trial;
                    accepted = l;
                    break;
                }
                step *= T::lit(0.5);
            }
            losses.push(accepted);
        }
        dev_uas.push(match dev_set {
            Some(dev) => Some(eval_uas(&probe, dev)?),
            None => None,
        });
    }
    Ok(TrainOutcome {
        probe,
        losses,
        dev_uas,
    })
}
