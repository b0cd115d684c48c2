//! Frame-level cross-entropy, momentum SGD, the epoch loop, evaluation and
//! the finite-difference gradient checker.
//!
//! Updates are per utterance: the summed frame loss of one utterance is
//! differentiated and applied as a single step, in a permutation fixed by
//! `(shuffle_seed, epoch)`.

use std::fmt;
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix, Vector};
use crate::network::{backward_into, forward_with, init_params, ForwardOptions, NetworkConfig, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// `0` is accepted and turns training into pure evaluation.
    pub learning_rate: f64,
    /// In `[0, 1)`.
    pub momentum: f64,
    /// Global L2 norm bound on each utterance gradient.
    pub grad_clip: Option<f64>,
    pub epochs: usize,
    pub shuffle_seed: u64,
    /// Cell activation clip, off by default.
    pub cell_clip: Option<f64>,
    /// Utterances whose gradients are computed concurrently against one
    /// parameter snapshot. `1` is plain sequential SGD.
    pub jobs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.001,
            momentum: 0.9,
            grad_clip: Some(5.0),
            epochs: 20,
            shuffle_seed: 0,
            cell_clip: None,
            jobs: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad clip must be positive, got {c}"));
            }
        }
        if let Some(c) = self.cell_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("cell clip must be positive, got {c}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1".into());
        }
        Ok(())
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            cell_clip: self.cell_clip,
        }
    }
}

/// `logsumexp(logits) - logits[label]` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vector)> {
    if label >= logits.len() {
        return Err(Error::Contract(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut d: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    d[label] -= 1.0;
    // rounding can leave a tiny negative value when the label dominates
    Ok((loss.max(0.0), Vector::from_vec(d)))
}

/// Summed frame loss of one utterance and the gradient of that sum.
pub fn utterance_gradient(
    params: &NetworkParams,
    config: &NetworkConfig,
    utt: &Utterance,
    opts: &ForwardOptions,
) -> Result<(f64, NetworkParams)> {
    let run = || -> Result<(f64, NetworkParams)> {
        utt.validate(config.n_out)?;
        let (logits, trace) = forward_with(params, config, &utt.frames, opts)?;
        let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
        let mut loss = 0.0;
        for (t, &label) in utt.labels.iter().enumerate() {
            let (l, d) = softmax_ce(logits.row(t), label)?;
            loss += l;
            d_logits.row_mut(t).copy_from_slice(&d);
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        let mut grads = params.zeros_like();
        backward_into(params, config, &trace, &d_logits, &mut grads)?;
        Ok((loss, grads))
    };
    run().map_err(|e| e.in_utterance(&utt.id))
}

pub fn global_norm(grads: &NetworkParams) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, _, t)| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// One momentum step in place: `v = μ·v - lr·g`, `θ = θ + v`, with `g`
/// rescaled to norm `grad_clip` when it exceeds it. A non-finite gradient
/// leaves both `params` and `velocity` untouched.
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    velocity: &mut NetworkParams,
    hyper: &Hyperparams,
) -> Result<()> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    if params.num_elements() != grads.num_elements() || params.num_elements() != velocity.num_elements() {
        return Err(Error::dim("sgd_step", "params, grads and velocity differ in size"));
    }
    let scale = match hyper.grad_clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    let g_tensors = grads.tensors();
    for ((p, v), (_, _, g)) in params.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(g_tensors) {
        for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = hyper.momentum * *vi - hyper.learning_rate * (scale * gi);
            *pi += *vi;
        }
    }
    Ok(())
}

/// Visiting order of epoch `epoch` over `n` utterances.
pub fn epoch_permutation(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass over `dataset`. Returns the frame-averaged loss, each frame's
/// loss taken before the update of its own utterance.
pub fn train_epoch(
    params: &mut NetworkParams,
    velocity: &mut NetworkParams,
    config: &NetworkConfig,
    dataset: &[Utterance],
    hyper: &Hyperparams,
    epoch: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    hyper.validate()?;
    let opts = hyper.forward_options();
    let order = epoch_permutation(dataset.len(), hyper.shuffle_seed, epoch);
    let mut total = 0.0;
    let mut frames = 0usize;
    for chunk in order.chunks(hyper.jobs) {
        let results: Vec<Result<(f64, NetworkParams)>> = if chunk.len() == 1 {
            vec![utterance_gradient(params, config, &dataset[chunk[0]], &opts)]
        } else {
            let snapshot: &NetworkParams = params;
            thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&i| s.spawn(move || utterance_gradient(snapshot, config, &dataset[i], &opts)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
            })
        };
        for (&i, res) in chunk.iter().zip(results) {
            let (loss, grads) = res?;
            sgd_step(params, &grads, velocity, hyper).map_err(|e| e.in_utterance(&dataset[i].id))?;
            total += loss;
            frames += dataset[i].num_frames();
        }
    }
    Ok(total / frames as f64)
}

/// Per-frame argmax predictions (ties to the lowest class).
pub fn predict(params: &NetworkParams, config: &NetworkConfig, frames: &Matrix) -> Result<Vec<usize>> {
    let (logits, _) = forward_with(params, config, frames, &ForwardOptions::default())?;
    Ok((0..logits.rows()).map(|t| argmax(logits.row(t))).collect())
}

/// Fraction of frames whose argmax prediction differs from the label.
pub fn evaluate(params: &NetworkParams, config: &NetworkConfig, dataset: &[Utterance]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let mut wrong = 0usize;
    let mut total = 0usize;
    for u in dataset {
        u.validate(config.n_out).map_err(|e| e.in_utterance(&u.id))?;
        let pred = predict(params, config, &u.frames).map_err(|e| e.in_utterance(&u.id))?;
        wrong += pred.iter().zip(&u.labels).filter(|(p, l)| p != l).count();
        total += pred.len();
    }
    Ok(wrong as f64 / total as f64)
}

/// Frame-averaged cross-entropy without any update.
pub fn evaluate_loss(params: &NetworkParams, config: &NetworkConfig, dataset: &[Utterance]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let mut total = 0.0;
    let mut frames = 0usize;
    for u in dataset {
        let run = || -> Result<f64> {
            u.validate(config.n_out)?;
            let (logits, _) = forward_with(params, config, &u.frames, &ForwardOptions::default())?;
            let mut loss = 0.0;
            for (t, &label) in u.labels.iter().enumerate() {
                loss += softmax_ce(logits.row(t), label)?.0;
            }
            Ok(loss)
        };
        total += run().map_err(|e| e.in_utterance(&u.id))?;
        frames += u.num_frames();
    }
    Ok(total / frames as f64)
}

/// Rounds to 6 decimals and prints the shortest round-trip form, so `0`
/// shows as `0.0`.
pub fn format_metric(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    format!("{r:?}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub fer: f64,
}

impl fmt::Display for EpochReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={} fer={}",
            self.epoch,
            format_metric(self.loss),
            format_metric(self.fer)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_fer(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.fer)
    }
}

/// Parameters, momentum buffer and hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: NetworkConfig,
    pub params: NetworkParams,
    pub velocity: NetworkParams,
    pub hyper: Hyperparams,
}

impl Trainer {
    pub fn new(config: NetworkConfig, params: NetworkParams, hyper: Hyperparams) -> Result<Self> {
        config.validate()?;
        hyper.validate()?;
        params.check_shapes(&config)?;
        let velocity = params.zeros_like();
        Ok(Trainer {
            config,
            params,
            velocity,
            hyper,
        })
    }

    /// `epoch` is 0-based and selects the visiting order.
    pub fn train_epoch(&mut self, dataset: &[Utterance], epoch: usize) -> Result<f64> {
        train_epoch(
            &mut self.params,
            &mut self.velocity,
            &self.config,
            dataset,
            &self.hyper,
            epoch,
        )
    }

    /// Runs `hyper.epochs` epochs, measuring FER on `heldout` after each and
    /// handing every report to `on_epoch` as soon as it is complete.
    pub fn fit(
        &mut self,
        train: &[Utterance],
        heldout: &[Utterance],
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        for epoch in 0..self.hyper.epochs {
            let loss = self.train_epoch(train, epoch)?;
            let fer = evaluate(&self.params, &self.config, heldout)?;
            let r = EpochReport {
                epoch: epoch + 1,
                loss,
                fer,
            };
            on_epoch(&r);
            report.epochs.push(r);
        }
        Ok(report)
    }
}

/// Analytic and central-difference gradients of a total CE loss, one entry
/// per parameter in tensor order.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Tensor name of each entry.
    pub names: Vec<&'static str>,
}

impl GradCheckReport {
    pub fn rel_err(&self, k: usize) -> f64 {
        let (a, n) = (self.analytic[k], self.numeric[k]);
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    pub fn max_rel_err(&self) -> f64 {
        (0..self.analytic.len()).map(|k| self.rel_err(k)).fold(0.0, f64::max)
    }
}

fn total_loss(params: &NetworkParams, config: &NetworkConfig, frames: &Matrix, labels: &[usize]) -> Result<f64> {
    let (logits, _) = forward_with(params, config, frames, &ForwardOptions::default())?;
    let mut loss = 0.0;
    for (t, &label) in labels.iter().enumerate() {
        loss += softmax_ce(logits.row(t), label)?.0;
    }
    Ok(loss)
}

fn param_slot(params: &mut NetworkParams, mut k: usize) -> &mut f64 {
    for t in params.tensors_mut() {
        if k < t.len() {
            return &mut t[k];
        }
        k -= t.len();
    }
    panic!("parameter index out of range");
}

/// Compares the BPTT gradient of the summed CE loss over `frames` with
/// central differences at step `eps`, for every parameter.
pub fn grad_check_params(
    params: &NetworkParams,
    config: &NetworkConfig,
    frames: &Matrix,
    labels: &[usize],
    eps: f64,
) -> Result<GradCheckReport> {
    let utt = Utterance {
        id: "grad-check".into(),
        frames: frames.clone(),
        labels: labels.to_vec(),
        speaker_vec: None,
    };
    let (_, grads) = utterance_gradient(params, config, &utt, &ForwardOptions::default())?;
    let names = grads
        .tensors()
        .iter()
        .flat_map(|(name, _, t)| std::iter::repeat_n(*name, t.len()))
        .collect();
    let analytic = grads.flatten();
    let mut probe = params.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..analytic.len() {
        let theta = *param_slot(&mut probe, k);
        *param_slot(&mut probe, k) = theta + eps;
        let up = total_loss(&probe, config, frames, labels)?;
        *param_slot(&mut probe, k) = theta - eps;
        let down = total_loss(&probe, config, frames, labels)?;
        *param_slot(&mut probe, k) = theta;
        numeric.push((up - down) / (2.0 * eps));
    }
    Ok(GradCheckReport {
        analytic,
        numeric,
        names,
    })
}

/// Seeded instance for [`grad_check`]: initial weights plus a uniform
/// `±0.5` perturbation on every parameter (so biases and peepholes are
/// exercised away from zero), frames in `[-1, 1]`, uniform labels.
pub fn grad_check_instance(config: &NetworkConfig, seed: u64, n_t: usize) -> Result<(NetworkParams, Matrix, Vec<usize>)> {
    config.validate()?;
    if n_t == 0 {
        return Err(Error::Config("grad check needs T >= 1".into()));
    }
    let mut params = init_params(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let frames = Matrix::from_fn(n_t, config.dims.n_x, |_, _| rng.random_range(-1.0..=1.0));
    let labels = (0..n_t).map(|_| rng.random_range(0..config.n_out)).collect();
    Ok((params, frames, labels))
}

pub fn grad_check_detailed(config: &NetworkConfig, seed: u64, n_t: usize, eps: f64) -> Result<GradCheckReport> {
    let (params, frames, labels) = grad_check_instance(config, seed, n_t)?;
    grad_check_params(&params, config, &frames, &labels, eps)
}

/// Maximum of `|a - n| / max(|a|, |n|, 1e-8)` over all parameters.
pub fn grad_check(config: &NetworkConfig, seed: u64, n_t: usize, eps: f64) -> Result<f64> {
    Ok(grad_check_detailed(config, seed, n_t, eps)?.max_rel_err())
}
