//! Epoch loops for both fine-tuning modes.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::dataset::{align_answer, Dataset};
use crate::encoder::{qa_loss, Bound, Encoder};
use crate::exec::Exec;
use crate::numerics::{AdamWState, Gradients, ParamStore, Real, Tape};
use crate::rng::{SeedStream, StreamRng};
use crate::tokenizer::{encode_pair, EncodedWindow, Vocabulary, WindowConfig};

use super::lora::{lora_regularizer, LoraAdapter};
use super::{FinetuneConfig, FinetuneError, Mode};

/// One training window with its gold span (`(0, 0)` when the answer is not
/// inside it). Padding is already trimmed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainWindow {
    pub example: usize,
    pub window: EncodedWindow,
    pub start: usize,
    pub end: usize,
}

pub fn build_train_windows(
    dataset: &Dataset,
    vocab: &Vocabulary,
    window: WindowConfig,
) -> Result<Vec<TrainWindow>, FinetuneError> {
    let mut out = Vec::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        for w in encode_pair(&ex.question, &ex.context, vocab, window)? {
            let (start, end) = align_answer(ex, &w);
            out.push(TrainWindow {
                example: i,
                window: w.trimmed(),
                start,
                end,
            });
        }
    }
    Ok(out)
}

/// `L_QA` for one window and, optionally, its gradient. `rng` switches on
/// adapter dropout.
pub fn window_loss<T: Real>(
    model: &Encoder<T>,
    item: &TrainWindow,
    rng: Option<&mut StreamRng>,
    want_grads: bool,
) -> Result<(f64, Option<Gradients<T>>), FinetuneError> {
    let mut tape = Tape::new();
    let mut bound = Bound::new(model);
    let h = model.hidden_states(&mut tape, &mut bound, (&item.window).into(), rng)?;
    let (ps, pe) = model.span_probs(&mut tape, &mut bound, h, &item.window)?;
    let loss = qa_loss(&mut tape, ps, pe, &item.window, item.start, item.end)?;
    let value = tape.scalar(loss).as_f64();
    let grads = if want_grads { Some(tape.backward(loss)?) } else { None };
    Ok((value, grads))
}

/// Mean `L_QA` over windows, without dropout.
pub fn mean_loss<T: Real>(model: &Encoder<T>, items: &[TrainWindow], exec: Exec) -> Result<f64, FinetuneError> {
    if items.is_empty() {
        return Err(FinetuneError::Input("no windows to evaluate".into()));
    }
    let losses = exec.map(items, |_, it| window_loss(model, it, None, false).map(|(l, _)| l));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / items.len() as f64)
}

/// Loss `Σ L_QA (+ λ·Σ‖B·Aᵀ‖²)` of one batch and its gradient. Per-window
/// tapes run through `exec`; gradients are summed in batch order.
pub fn batch_loss_and_grads<T: Real>(
    model: &Encoder<T>,
    batch: &[&TrainWindow],
    adapters: &[LoraAdapter],
    lambda: f64,
    dropout_seed: Option<SeedStream>,
    exec: Exec,
) -> Result<(f64, Gradients<T>), FinetuneError> {
    let results = exec.map(batch, |i, it| {
        let mut rng = dropout_seed.map(|s| s.fork("window", i as u64).rng());
        window_loss(model, it, rng.as_mut(), true)
    });
    let mut loss = 0.0;
    let mut grads = Gradients::new();
    for r in results {
        let (l, g) = r?;
        loss += l;
        grads.accumulate(&g.expect("requested"));
    }
    if !adapters.is_empty() {
        let (reg, g) = lora_regularizer(model, adapters, lambda, true)?;
        loss += reg;
        grads.accumulate(&g.expect("requested"));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    /// Summed batch losses divided by the number of windows seen.
    pub loss: f64,
    pub steps: u64,
    pub windows: usize,
}

/// Drives the optimizer for one model. The step counter spans epochs so
/// dropout streams never repeat.
pub struct Trainer {
    pub model: Encoder<f32>,
    pub optimizer: AdamWState,
    pub config: FinetuneConfig,
    pub adapters: Vec<LoraAdapter>,
    pub exec: Exec,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Encoder<f32>, config: FinetuneConfig, adapters: Vec<LoraAdapter>, exec: Exec) -> Result<Self, FinetuneError> {
        config.validate()?;
        match config.mode {
            Mode::Sft if !adapters.is_empty() => {
                return Err(FinetuneError::Config("sft mode cannot train adapters".into()))
            }
            Mode::Lora if adapters.is_empty() => {
                return Err(FinetuneError::Config("lora mode needs injected adapters".into()))
            }
            _ => {}
        }
        Ok(Self {
            model,
            optimizer: AdamWState::new(config.optimizer()),
            config,
            adapters,
            exec,
            step: 0,
        })
    }

    pub fn steps_left(&self) -> Option<u64> {
        self.config.max_steps.map(|m| m.saturating_sub(self.step))
    }

    /// One pass over `items` in a seeded shuffled order. Stops early if
    /// the step budget runs out.
    pub fn epoch(&mut self, items: &[TrainWindow], epoch: usize) -> Result<EpochStats, FinetuneError> {
        if items.is_empty() {
            return Err(FinetuneError::Input("empty training set".into()));
        }
        let root = SeedStream::new(self.config.seed);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut root.fork("epoch-order", epoch as u64).rng());
        let lambda = if self.config.mode == Mode::Lora { self.config.lambda_reg } else { 0.0 };
        let use_dropout = self.config.mode == Mode::Lora && self.config.lora_dropout > 0.0;
        let mut total = 0.0;
        let mut seen = 0usize;
        let mut steps = 0u64;
        for chunk in order.chunks(self.config.batch_size) {
            if self.steps_left() == Some(0) {
                break;
            }
            let batch: Vec<&TrainWindow> = chunk.iter().map(|&i| &items[i]).collect();
            let dropout = use_dropout.then(|| root.fork("dropout", self.step));
            let (loss, grads) = batch_loss_and_grads(&self.model, &batch, &self.adapters, lambda, dropout, self.exec)?;
            self.optimizer.step(&mut self.model.params, &grads)?;
            self.step += 1;
            steps += 1;
            total += loss;
            seen += batch.len();
        }
        Ok(EpochStats {
            loss: if seen == 0 { 0.0 } else { total / seen as f64 },
            steps,
            windows: seen,
        })
    }
}

/// Full fine-tuning epoch: every QA weight must be trainable.
pub fn sft_epoch(trainer: &mut Trainer, items: &[TrainWindow], epoch: usize) -> Result<EpochStats, FinetuneError> {
    if trainer.config.mode != Mode::Sft || trainer.model.has_adapters() {
        return Err(FinetuneError::Config("sft_epoch requires sft mode without adapters".into()));
    }
    trainer.epoch(items, epoch)
}

/// LoRA epoch: only adapters and span heads may be trainable.
pub fn lora_epoch(trainer: &mut Trainer, items: &[TrainWindow], epoch: usize) -> Result<EpochStats, FinetuneError> {
    if trainer.config.mode != Mode::Lora {
        return Err(FinetuneError::Config("lora_epoch requires lora mode".into()));
    }
    let allowed: Vec<_> = trainer
        .adapters
        .iter()
        .flat_map(|a| [a.a, a.b])
        .chain(trainer.model.span_head_ids())
        .collect();
    if trainer.model.params.trainable_ids().iter().any(|id| !allowed.contains(id)) {
        return Err(FinetuneError::Config("lora_epoch found trainable base weights".into()));
    }
    trainer.epoch(items, epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EarlyStop {
    /// 1-based epoch after which training stops, if the rule fired.
    pub stop_after: Option<usize>,
    /// 1-based epoch with the lowest loss; ties go to the earliest.
    pub best_epoch: usize,
}

/// Stops once `patience` consecutive epochs fail to improve on the best
/// validation loss. Patience 0 never stops.
pub fn early_stop(val_losses: &[f64], patience: usize) -> EarlyStop {
    let mut best = f64::INFINITY;
    let mut best_epoch = 1;
    let mut stale = 0usize;
    let mut stop_after = None;
    for (i, &l) in val_losses.iter().enumerate() {
        if l < best {
            best = l;
            best_epoch = i + 1;
            stale = 0;
        } else {
            stale += 1;
            if patience > 0 && stale >= patience && stop_after.is_none() {
                stop_after = Some(i + 1);
            }
        }
        if stop_after.is_some() {
            break;
        }
    }
    EarlyStop { stop_after, best_epoch }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub total_steps: u64,
}

/// Trains up to `max_epochs` (or `max_steps`), tracks validation loss,
/// applies early stopping and restores the weights of the best epoch.
/// `on_epoch` sees each record as it is produced.
pub fn fit(
    trainer: &mut Trainer,
    train: &[TrainWindow],
    validation: &[TrainWindow],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitReport, FinetuneError> {
    let mut records = Vec::new();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut stopped_early = false;
    for epoch in 1..=trainer.config.max_epochs {
        if trainer.steps_left() == Some(0) {
            break;
        }
        let stats = match trainer.config.mode {
            Mode::Sft => sft_epoch(trainer, train, epoch)?,
            Mode::Lora => lora_epoch(trainer, train, epoch)?,
        };
        let val_loss = if validation.is_empty() {
            stats.loss
        } else {
            mean_loss(&trainer.model, validation, trainer.exec)?
        };
        let rec = EpochRecord {
            epoch,
            train_loss: stats.loss,
            val_loss,
            steps: trainer.step,
        };
        on_epoch(&rec);
        records.push(rec);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, trainer.model.params.clone()));
        }
        let losses: Vec<f64> = records.iter().map(|r| r.val_loss).collect();
        if early_stop(&losses, trainer.config.early_stop_patience).stop_after.is_some() {
            stopped_early = true;
            break;
        }
    }
    let losses: Vec<f64> = records.iter().map(|r| r.val_loss).collect();
    let best_epoch = early_stop(&losses, 0).best_epoch;
    if let Some((_, params)) = best {
        trainer.model.params = params;
    }
    Ok(FitReport {
        epochs: records,
        best_epoch,
        stopped_early,
        total_steps: trainer.step,
    })
}
