//! Losses, Adam, and the early-stopping training loop.

pub mod adam;
pub mod config;
pub mod history;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var, PROB_CLAMP};
use crate::data::{batch_signals, batch_targets, EcgRecord, Scheme};
use crate::error::{Error, Result};
use crate::models::{Demographics, Head, Mode, ModelBundle};
use crate::tensor::norm::BN_MOMENTUM;
use crate::tensor::{BnMode, Tensor};

pub use adam::{adam_step, AdamState};
pub use config::{LossKind, TrainConfig};
pub use history::{EpochStats, TrainHistory};

/// Mean loss of a probability matrix against target rows.
pub fn loss(probabilities: &Tensor, targets: &Tensor, kind: LossKind) -> Result<f64> {
    if probabilities.shape() != targets.shape() || probabilities.rank() != 2 {
        return Err(Error::Usage(format!(
            "loss: probabilities {:?} vs targets {:?}",
            probabilities.shape(),
            targets.shape()
        )));
    }
    let b = probabilities.shape()[0] as f64;
    let pairs = probabilities.data().iter().zip(targets.data());
    Ok(match kind {
        LossKind::CrossEntropy => -pairs.map(|(&p, &y)| y * p.max(PROB_CLAMP).ln()).sum::<f64>() / b,
        LossKind::BceMultilabel => {
            let n = probabilities.numel() as f64;
            -pairs
                .map(|(&p, &y)| y * p.max(PROB_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(PROB_CLAMP).ln())
                .sum::<f64>()
                / n
        }
    })
}

fn tape_loss(tape: &mut Tape, p: Var, targets: Tensor, kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::CrossEntropy => tape.cross_entropy(p, targets),
        LossKind::BceMultilabel => tape.bce(p, targets),
    }
}

/// Checks that the model head, the task and the loss agree.
pub fn check_task(model: &ModelBundle, scheme: Scheme, kind: LossKind) -> Result<()> {
    let spec = &model.spec;
    if spec.n_outputs != scheme.n_outputs() || spec.head != scheme.head() {
        return Err(Error::Usage(format!(
            "{} model with {} {:?} outputs cannot serve a {scheme} task",
            spec.name, spec.n_outputs, spec.head
        )));
    }
    let ok = matches!(
        (spec.head, kind),
        (Head::Softmax, LossKind::CrossEntropy) | (Head::Sigmoid, LossKind::BceMultilabel)
    );
    if !ok {
        return Err(Error::Usage(format!("{kind} loss does not fit a {:?} head", spec.head)));
    }
    Ok(())
}

fn scheme_of(records: &[EcgRecord], what: &str) -> Result<Scheme> {
    let first = records
        .first()
        .ok_or_else(|| Error::Usage(format!("{what} split is empty")))?;
    Ok(first.labels.scheme())
}

fn demographics(records: &[&EcgRecord]) -> Vec<Demographics> {
    records.iter().map(|r| r.demographics).collect()
}

/// Mean over heads of the per-head loss, recorded on the tape.
pub fn record_loss(
    model: &ModelBundle,
    tape: &mut Tape,
    records: &[&EcgRecord],
    kind: LossKind,
    mode: BnMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, crate::models::Recorded)> {
    let x = batch_signals(records)?;
    let y = batch_targets(records)?;
    let rec = model.record(tape, &x, &demographics(records), mode, rng)?;
    let heads = rec
        .outputs
        .iter()
        .map(|&o| tape_loss(tape, o, y.clone(), kind))
        .collect::<Result<Vec<_>>>()?;
    let mut total = heads[0];
    for &h in &heads[1..] {
        total = tape.add(total, h)?;
    }
    if heads.len() > 1 {
        total = tape.scale(total, 1.0 / heads.len() as f64);
    }
    Ok((total, rec))
}

/// Infer-mode loss (mean over heads), evaluated in batches.
pub fn evaluate_loss(model: &ModelBundle, records: &[EcgRecord], kind: LossKind, batch_size: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<&EcgRecord> = chunk.iter().collect();
        let x = batch_signals(&refs)?;
        let y = batch_targets(&refs)?;
        let mut m = model.clone();
        m.set_mode(Mode::Infer);
        let outs = m.forward_outputs(&x, &demographics(&refs))?;
        let per: f64 = outs.iter().map(|p| loss(p, &y, kind)).sum::<Result<f64>>()? / outs.len() as f64;
        sum += per * chunk.len() as f64;
    }
    Ok(sum / records.len() as f64)
}

/// Gradients of every parameter tensor, in `weights, bias` order per layer;
/// layers the loss does not reach get zeros.
pub fn collect_grads(model: &ModelBundle, tape: &Tape, rec: &crate::models::Recorded) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(model.params.len() * 2);
    for (p, leaf) in model.params.iter().zip(&rec.leaves) {
        let get = |v: Option<Var>, like: &Tensor| {
            v.and_then(|v| tape.grad(v).cloned())
                .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
        };
        out.push(get(leaf.map(|l| l.0), &p.weights));
        out.push(get(leaf.map(|l| l.1), &p.bias));
    }
    out
}

fn param_names(model: &ModelBundle) -> Vec<String> {
    model
        .params
        .iter()
        .flat_map(|p| [format!("{}.weights", p.name), format!("{}.bias", p.name)])
        .collect()
}

/// Applies one Adam step to all parameters of `model`.
pub fn apply_grads(model: &mut ModelBundle, grads: &[Tensor], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    let names = param_names(model);
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut params: Vec<&mut Tensor> = model
        .params
        .iter_mut()
        .flat_map(|p| [&mut p.weights, &mut p.bias])
        .collect();
    let grads: Vec<&Tensor> = grads.iter().collect();
    adam_step(&mut params, &grads, &names, state, config)
}

pub fn adam_state_for(model: &ModelBundle) -> AdamState {
    AdamState::new(model.params.iter().flat_map(|p| [p.weights.numel(), p.bias.numel()]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience rule on the validation loss. The first epoch always becomes
/// the best, so the untrained weights are never returned.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        if val_loss < self.best_loss - self.min_delta {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }
}

/// Trains with per-epoch seeded shuffling and early stopping on the
/// validation loss; returns the weights of the best epoch in infer mode.
pub fn fit(model: &ModelBundle, train: &[EcgRecord], val: &[EcgRecord], config: &TrainConfig) -> Result<(ModelBundle, TrainHistory)> {
    fit_with(model, train, val, config, |_| {})
}

/// [`fit`] that reports each finished epoch to `observer`.
pub fn fit_with(
    model: &ModelBundle,
    train: &[EcgRecord],
    val: &[EcgRecord],
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochStats),
) -> Result<(ModelBundle, TrainHistory)> {
    config.validate()?;
    let scheme = scheme_of(train, "training")?;
    if scheme_of(val, "validation")? != scheme {
        return Err(Error::Usage("training and validation splits use different tasks".into()));
    }
    check_task(model, scheme, config.loss_kind)?;

    let mut model = model.clone();
    model.set_mode(Mode::Train);
    let mut state = adam_state_for(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial = evaluate_loss(&model, val, config.loss_kind, config.batch_size)?;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        initial_val_loss: initial,
        best_epoch: 0,
        stopped_epoch: 0,
    };
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            // Batch norm needs two values per channel.
            if chunk.len() < 2 {
                continue;
            }
            let refs: Vec<&EcgRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let (total, rec) = record_loss(&model, &mut tape, &refs, config.loss_kind, BnMode::Train, &mut rng)?;
            let value = tape.value(total).item()?;
            if !value.is_finite() {
                history.stopped_epoch = epoch;
                return Err(Error::Training(format!(
                    "non-finite training loss at epoch {epoch}, batch {} after {} completed epochs",
                    bi + 1,
                    history.epochs.len()
                )));
            }
            tape.backward(total)?;
            let grads = collect_grads(&model, &tape, &rec);
            drop(tape);
            apply_grads(&mut model, &grads, &mut state, config)?;
            model.apply_bn_stats(&rec.stats, BN_MOMENTUM);
            sum += value * chunk.len() as f64;
            seen += chunk.len();
        }
        if seen == 0 {
            return Err(Error::Usage("training split has fewer than two records".into()));
        }
        let val_loss = evaluate_loss(&model, val, config.loss_kind, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        let stats = EpochStats {
            epoch,
            train_loss: sum / seen as f64,
            val_loss,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        observer(&stats);
        history.epochs.push(stats);
        history.stopped_epoch = epoch;
        match stopper.observe(epoch, val_loss) {
            Verdict::Improved => best_params = model.params.clone(),
            Verdict::Stop => break,
            Verdict::Continue => {}
        }
        history.best_epoch = stopper.best_epoch;
    }
    model.params = best_params;
    model.set_mode(Mode::Infer);
    Ok((model, history))
}

/// Infer-mode scores `(n_records, n_outputs)` and targets, in input order.
pub fn predict(model: &ModelBundle, records: &[EcgRecord], batch_size: usize) -> Result<(Tensor, Tensor)> {
    if model.mode != Mode::Infer {
        return Err(Error::Usage("predict needs a model in infer mode".into()));
    }
    if records.is_empty() {
        return Err(Error::Usage("nothing to predict".into()));
    }
    let n_out = model.spec.n_outputs;
    let mut scores = Vec::with_capacity(records.len() * n_out);
    let mut targets = Vec::with_capacity(records.len() * n_out);
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<&EcgRecord> = chunk.iter().collect();
        let p = model.forward(&batch_signals(&refs)?, &demographics(&refs))?;
        scores.extend_from_slice(p.data());
        targets.extend_from_slice(batch_targets(&refs)?.data());
    }
    let n = records.len();
    if targets.len() != n * n_out {
        return Err(Error::Usage(format!(
            "records have {} targets each, model has {n_out} outputs",
            targets.len() / n
        )));
    }
    Ok((Tensor::new(vec![n, n_out], scores)?, Tensor::new(vec![n, n_out], targets)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_losses() {
        let y = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let uniform = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!((loss(&uniform, &y, LossKind::CrossEntropy).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss(&y, &y, LossKind::CrossEntropy).unwrap() <= 1e-10);
        assert!(loss(&y, &y, LossKind::BceMultilabel).unwrap() <= 1e-10);
        assert!(loss(&uniform, &Tensor::zeros(vec![2, 1]), LossKind::BceMultilabel).is_err());
    }
}
