//! Training of one task, in any of the sequential modes.

use rand::seq::SliceRandom;

use super::{evaluate, validation_loss, EpochRecord, Gating, Mode, Observer, TaskRunRecord, TrainConfig};
use crate::data::Task;
use crate::error::{arg_err, Error, Result};
use crate::hat::{
    anneal_s, binarize_units, clamp_embedding, compensate_embedding_gradient, gate_derivative,
    mask_bias_gradient_in_place, mask_weight_gradient_in_place, regularized_loss, sparsity_regularizer, HatState,
    UnitVectors,
};
use crate::monitor::{capacity_sample, CapacitySample};
use crate::nn::{sgd_step, softmax_xent_batch, BackwardScope, NetGrads, Network, OptimizerState, UnitGates};
use crate::rng::{stream, Stream};

/// Train head `t` (and, depending on the mode, the body and task embeddings)
/// on `task`. In HAT mode the task's embeddings are created if needed and its
/// attention is folded into the cumulative state when training ends.
pub fn train_task(
    net: &mut Network,
    mut hat: Option<&mut HatState>,
    task: &Task,
    t: usize,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<TaskRunRecord> {
    cfg.validate()?;
    if task.train.is_empty() || task.valid.is_empty() {
        return Err(arg_err!("task {t} has an empty train or validation split"));
    }
    if t >= net.heads().len() {
        return Err(arg_err!("no head for task {t}"));
    }
    match (cfg.mode, hat.as_deref_mut()) {
        (Mode::Hat, Some(h)) => {
            if h.completed_tasks() != t {
                return Err(Error::State(format!("hat state holds {} tasks, training task {t}", h.completed_tasks())));
            }
            while h.task_count() <= t {
                h.add_task(seed)?;
            }
        }
        (Mode::Hat, None) => return Err(arg_err!("hat mode needs a hat state")),
        (Mode::Multitask, _) => return Err(arg_err!("multitask training goes through train_joint")),
        (_, Some(_)) => return Err(arg_err!("{:?} mode takes no hat state", cfg.mode)),
        _ => {}
    }

    let scope = if cfg.mode == Mode::SgdFreeze && t > 0 {
        BackwardScope::HeadOnly
    } else {
        BackwardScope::Full
    };
    let past = hat.as_deref().map(|h| h.cumulative(t).map(|c| c.units.clone())).transpose()?;
    let plateau = cfg.plateau();
    let mut opt = OptimizerState::new(cfg.lr0);
    let mut shuffle_rng = stream(seed, Stream::Shuffle, t as u64);
    let mut dropout_rng = stream(seed, Stream::Dropout, t as u64);
    let mut order: Vec<usize> = (0..task.train.len()).collect();
    let batches = order.len().div_ceil(cfg.batch_size);

    let mut best: Option<(Network, Option<UnitVectors>)> = None;
    let mut best_loss = f64::INFINITY;
    let mut final_valid = f64::NAN;
    let mut capacity = Vec::new();
    let mut epochs = 0;
    let mut converged = false;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(&mut shuffle_rng);
        let lr = opt.lr;
        let mut loss_sum = 0.0;
        let mut reg_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = task.train.gather(idx)?;
            let (loss, r) = match hat.as_deref_mut() {
                Some(h) => {
                    let s = anneal_s(b + 1, batches, h.config().s_max, h.config().anneal)?;
                    hat_step(net, h, past.as_ref().expect("hat mode has past"), t, &x, &y, s, lr, &mut dropout_rng)?
                }
                None => (sgd_batch(net, t, &x, &y, scope, lr, &mut dropout_rng)?, 0.0),
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("task {t} epoch {epoch} batch {}: loss is {loss}", b + 1)));
            }
            loss_sum += loss * idx.len() as f64;
            reg_sum += r;
        }

        let (valid_loss, _) = validation_loss(net, hat.as_deref(), t, &task.valid)?;
        final_valid = valid_loss;
        let step = crate::nn::plateau_schedule(&mut opt, &plateau, valid_loss)?;
        if step.improved {
            best_loss = valid_loss;
            if cfg.restore_best {
                let emb = hat.as_deref().map(|h| h.embeddings(t).cloned()).transpose()?;
                best = Some((net.clone(), emb));
            }
        }
        let sample = hat.as_deref().map(|h| live_sample(h, past.as_ref().expect("hat mode has past"), t, epoch, net.input_dim())).transpose()?;
        observer.epoch(&EpochRecord {
            task: t,
            epoch,
            lr,
            train_loss: loss_sum / task.train.len() as f64,
            valid_loss,
            reg: hat.is_some().then(|| reg_sum / batches as f64),
            capacity: sample.as_ref().map(|s| s.capacity),
            improved: step.improved,
        });
        capacity.extend(sample);
        if step.stop {
            converged = true;
            break;
        }
    }

    if let Some((best_net, emb)) = best {
        *net = best_net;
        if let (Some(h), Some(e)) = (hat.as_deref_mut(), emb) {
            h.set_embeddings(t, e)?;
        }
    }
    if let Some(h) = hat.as_deref_mut() {
        h.complete_task(t)?;
        let thr = h.config().threshold;
        capacity.push(capacity_sample(t, epochs + 1, &binarize_units(&h.current_cumulative().units, thr), net.input_dim(), thr));
    }
    let test_accuracy = evaluate(net, Gating::for_mode(cfg.mode, hat.as_deref()), t, &task.test)?;
    let record = TaskRunRecord {
        task: t,
        epochs,
        best_valid_loss: best_loss,
        final_valid_loss: final_valid,
        test_accuracy,
        converged,
        capacity,
    };
    observer.task_done(t, net, hat.as_deref(), &record)?;
    Ok(record)
}

fn live_sample(h: &HatState, past: &UnitVectors, t: usize, epoch: usize, input_dim: usize) -> Result<CapacitySample> {
    let thr = h.config().threshold;
    let live = binarize_units(&h.attention(t, h.config().s_max)?.units, thr);
    let merged = binarize_units(past, thr).zip_with(&live, f64::max)?;
    Ok(capacity_sample(t, epoch, &merged, input_dim, thr))
}

fn apply_grads(net: &mut Network, t: usize, grads: &NetGrads, lr: f64) -> Result<()> {
    for (layer, (dw, db)) in net.body_mut().iter_mut().zip(&grads.body) {
        sgd_step(layer.weight.data_mut(), dw.data(), lr)?;
        sgd_step(layer.bias.data_mut(), db.data(), lr)?;
    }
    let head = net.head_mut(t)?;
    sgd_step(head.weight.data_mut(), grads.head.0.data(), lr)?;
    sgd_step(head.bias.data_mut(), grads.head.1.data(), lr)
}

/// One plain SGD update; returns the batch loss.
pub(crate) fn sgd_batch(
    net: &mut Network,
    t: usize,
    x: &crate::Tensor,
    y: &[usize],
    scope: BackwardScope,
    lr: f64,
    rng: &mut crate::rng::Rng,
) -> Result<f64> {
    let (logits, tape) = net.forward_train(x, t, None, rng)?;
    let (loss, dlogits) = softmax_xent_batch(&logits, y)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    let grads = net.backward(&tape, None, &dlogits, scope)?;
    apply_grads(net, t, &grads, lr)?;
    Ok(loss)
}

/// One HAT update at gate scale `s`; returns `(L + c·R, R)`.
#[allow(clippy::too_many_arguments)]
fn hat_step(
    net: &mut Network,
    hat: &mut HatState,
    past: &UnitVectors,
    t: usize,
    x: &crate::Tensor,
    y: &[usize],
    s: f64,
    lr: f64,
    rng: &mut crate::rng::Rng,
) -> Result<(f64, f64)> {
    let cfg = hat.config().clone();
    let att = hat.attention(t, s)?.units;
    let gates = UnitGates {
        input: att.input.as_deref(),
        layers: &att.layers,
    };
    let (logits, tape) = net.forward_train(x, t, Some(gates), rng)?;
    let (loss, dlogits) = softmax_xent_batch(&logits, y)?;
    let (r, dr) = sparsity_regularizer(&att, past, cfg.regularizer)?;
    let total = regularized_loss(loss, r, cfg.c)?;
    if !total.is_finite() {
        return Ok((total, r));
    }
    let mut grads = net.backward(&tape, Some(gates), &dlogits, BackwardScope::Full)?;

    // attention → embedding gradients, compensated for the annealed slope
    let gate_grads = grads.gates.take().expect("gated backward returns gate gradients");
    let da = UnitVectors {
        input: gate_grads.input,
        layers: gate_grads.layers,
    }
    .zip_with(&dr, |g, d| g + cfg.c * d)?;
    let emb = hat.embeddings(t)?;
    let mut de = Vec::new();
    for (q, e) in da.iter().zip(emb.iter()) {
        let slope = gate_derivative(e, s)?;
        let q: Vec<f64> = q.iter().zip(&slope).map(|(a, b)| a * b).collect();
        de.push(compensate_embedding_gradient(&q, e, s, cfg.s_max)?);
    }

    if t > 0 {
        for (l, (dw, db)) in grads.body.iter_mut().enumerate() {
            let a_in = if l == 0 { past.input.as_deref() } else { Some(past.layers[l - 1].as_slice()) };
            mask_weight_gradient_in_place(dw, &past.layers[l], a_in)?;
            mask_bias_gradient_in_place(db, &past.layers[l])?;
        }
    }
    apply_grads(net, t, &grads, lr)?;
    let emb = hat.embeddings_mut(t)?;
    for (e, g) in emb.iter_mut().zip(&de) {
        sgd_step(e, g, lr)?;
        clamp_embedding(e);
    }
    Ok((total, r))
}
