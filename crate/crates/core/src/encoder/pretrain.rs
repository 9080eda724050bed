//! Masked-LM and sentence-pair pretraining.

use rand::Rng;

use crate::exec::Exec;
use crate::numerics::{AdamWState, Gradients, Real, Tape};
use crate::rng::SeedStream;
use crate::tokenizer::{pack_sentence_pair, split_words, EncodedWindow, Vocabulary, MASK, NUM_SPECIALS, DANDA, DOUBLE_DANDA};

use super::forward::Bound;
use super::model::{Encoder, MaskingMode};
use super::EncoderError;

/// A sequence after masking: the ids fed to the encoder plus the positions
/// whose original ids must be recovered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub token_ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Selects each maskable position with probability `p`; at least one is
/// always selected. A selected position becomes `[MASK]` 80% of the time, a
/// random ordinary piece 10% of the time and stays unchanged otherwise.
/// Special tokens and padding are never selected.
pub fn mask_tokens<R: Rng + ?Sized>(
    window: &EncodedWindow,
    vocab_size: usize,
    p: f64,
    rng: &mut R,
) -> Result<MaskedInput, EncoderError> {
    let maskable: Vec<usize> = (0..window.len())
        .filter(|&i| window.attention_mask[i] == 1 && window.token_ids[i] as usize >= NUM_SPECIALS)
        .collect();
    if maskable.is_empty() {
        return Err(EncoderError::Input("sequence has no maskable tokens".into()));
    }
    if vocab_size <= NUM_SPECIALS {
        return Err(EncoderError::Config(format!("vocab_size {vocab_size} has no ordinary pieces")));
    }
    let mut positions: Vec<usize> = maskable.iter().copied().filter(|_| rng.random::<f64>() < p).collect();
    if positions.is_empty() {
        positions.push(maskable[rng.random_range(0..maskable.len())]);
    }
    let mut token_ids = window.token_ids.clone();
    let targets = positions.iter().map(|&i| window.token_ids[i]).collect();
    for &i in &positions {
        let r: f64 = rng.random();
        if r < 0.8 {
            token_ids[i] = MASK;
        } else if r < 0.9 {
            token_ids[i] = rng.random_range(NUM_SPECIALS as u32..vocab_size as u32);
        }
    }
    Ok(MaskedInput {
        token_ids,
        positions,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainExample {
    pub index: usize,
    pub window: EncodedWindow,
    /// 1 when the second segment really follows the first.
    pub nsp_label: u8,
    /// Fixed mask under static masking.
    pub mask: Option<MaskedInput>,
}

/// Splits text into sentences at dandas and full stops.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split([DANDA, DOUBLE_DANDA, '.', '\n'])
        .map(|s| split_words(s).into_iter().map(|w| w.text).collect::<Vec<_>>().join(" "))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Builds sentence pairs from consecutive sentences. Half of the pairs (by
/// coin flip) replace the second sentence with a different random one.
pub fn build_pretrain_set(
    sentences: &[String],
    vocab: &Vocabulary,
    max_len: usize,
    model_config: &super::EncoderConfig,
    seed: u64,
) -> Result<Vec<PretrainExample>, EncoderError> {
    if sentences.len() < 3 {
        return Err(EncoderError::Input(format!(
            "pretraining needs at least 3 sentences, got {}",
            sentences.len()
        )));
    }
    if max_len > model_config.max_positions {
        return Err(EncoderError::Config(format!(
            "max_len {max_len} exceeds max_positions {}",
            model_config.max_positions
        )));
    }
    let root = SeedStream::new(seed);
    let mut out = Vec::with_capacity(sentences.len() - 1);
    for i in 0..sentences.len() - 1 {
        let mut rng = root.fork("nsp-pair", i as u64).rng();
        let is_next = rng.random::<bool>();
        let second = if is_next {
            i + 1
        } else {
            loop {
                let j = rng.random_range(0..sentences.len());
                if j != i + 1 && j != i {
                    break j;
                }
            }
        };
        let window = pack_sentence_pair(&sentences[i], &sentences[second], vocab, max_len)?;
        let mask = match model_config.masking_mode {
            MaskingMode::Static => {
                let mut mrng = root.fork("mlm-static", i as u64).rng();
                Some(mask_tokens(&window, model_config.vocab_size, model_config.mask_prob, &mut mrng)?)
            }
            MaskingMode::Dynamic => None,
        };
        out.push(PretrainExample {
            index: i,
            window,
            nsp_label: u8::from(is_next),
            mask,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PretrainLoss {
    /// Mean negative log-likelihood over every masked position in the batch.
    pub mlm: f64,
    /// Mean sentence-pair cross-entropy; zero when disabled.
    pub nsp: f64,
    pub total: f64,
}

/// Masks for a batch: the stored static ones, or fresh draws keyed by
/// `(seed, step, example index)`.
pub fn batch_masks(
    batch: &[PretrainExample],
    config: &super::EncoderConfig,
    seed: u64,
    step: u64,
) -> Result<Vec<MaskedInput>, EncoderError> {
    batch
        .iter()
        .map(|ex| match (&ex.mask, config.masking_mode) {
            (Some(m), MaskingMode::Static) => Ok(m.clone()),
            _ => {
                let mut rng = SeedStream::new(seed)
                    .fork("mlm-dynamic", step)
                    .fork("example", ex.index as u64)
                    .rng();
                mask_tokens(&ex.window, config.vocab_size, config.mask_prob, &mut rng)
            }
        })
        .collect()
}

/// Loss of a batch and, if requested, its gradient. Each example builds its
/// own tape; gradients are reduced in batch order.
pub fn pretrain_loss_and_grads<T: Real>(
    model: &Encoder<T>,
    batch: &[PretrainExample],
    masks: &[MaskedInput],
    want_grads: bool,
    exec: Exec,
) -> Result<(PretrainLoss, Option<Gradients<T>>), EncoderError> {
    if batch.is_empty() || batch.len() != masks.len() {
        return Err(EncoderError::Input(format!(
            "batch of {} examples with {} masks",
            batch.len(),
            masks.len()
        )));
    }
    for ex in batch {
        if ex.nsp_label > 1 {
            return Err(EncoderError::Input(format!("sentence-pair label {} is not 0 or 1", ex.nsp_label)));
        }
    }
    let use_nsp = model.config.use_nsp;
    let total_masked: usize = masks.iter().map(|m| m.positions.len()).sum();
    let n = batch.len() as f64;
    let pairs: Vec<(&PretrainExample, &MaskedInput)> = batch.iter().zip(masks).collect();
    let results = exec.map(&pairs, |_, &(ex, m)| -> Result<(f64, f64, Option<Gradients<T>>), EncoderError> {
        let mut tape = Tape::new();
        let mut bound = Bound::new(model);
        let input = super::SequenceInput {
            token_ids: &m.token_ids,
            segment_ids: &ex.window.segment_ids,
            attention_mask: &ex.window.attention_mask,
        };
        let h = model.hidden_states(&mut tape, &mut bound, input, None)?;
        let probs = model.mlm_probs(&mut tape, &mut bound, h, &m.positions)?;
        let targets: Vec<usize> = m.targets.iter().map(|&t| t as usize).collect();
        let mlm_sum = tape.nll_pick_rows(probs, &targets)?;
        let mlm_raw = tape.scalar(mlm_sum).as_f64();
        let mut loss = tape.scale(mlm_sum, 1.0 / total_masked as f64);
        let mut nsp_raw = 0.0;
        if use_nsp {
            let p = model.nsp_probs(&mut tape, &mut bound, h)?;
            let nll = tape.nll_pick(p, ex.nsp_label as usize)?;
            nsp_raw = tape.scalar(nll).as_f64();
            let scaled = tape.scale(nll, 1.0 / n);
            loss = tape.add(loss, scaled)?;
        }
        let grads = if want_grads { Some(tape.backward(loss)?) } else { None };
        Ok((mlm_raw, nsp_raw, grads))
    });
    let mut mlm = 0.0;
    let mut nsp = 0.0;
    let mut grads = want_grads.then(Gradients::new);
    for r in results {
        let (m, s, g) = r?;
        mlm += m;
        nsp += s;
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            acc.accumulate(&g);
        }
    }
    let mlm = mlm / total_masked as f64;
    let nsp = if use_nsp { nsp / n } else { 0.0 };
    Ok((
        PretrainLoss {
            mlm,
            nsp,
            total: mlm + nsp,
        },
        grads,
    ))
}

/// One optimizer step on a batch. Returns the loss before the update.
pub fn pretrain_step(
    model: &mut Encoder<f32>,
    opt: &mut AdamWState,
    batch: &[PretrainExample],
    seed: u64,
    step: u64,
    exec: Exec,
) -> Result<PretrainLoss, EncoderError> {
    let masks = batch_masks(batch, &model.config, seed, step)?;
    let (loss, grads) = pretrain_loss_and_grads(model, batch, &masks, true, exec)?;
    let grads = grads.expect("gradients requested");
    opt.step(&mut model.params, &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Length of each packed sentence pair.
    pub max_len: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            max_len: 64,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.steps == 0 || self.batch_size == 0 || self.max_len < 3 {
            return Err(EncoderError::Config(
                "pretraining needs steps > 0, batch_size > 0 and max_len >= 3".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(EncoderError::Config("pretraining learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Runs `config.steps` optimizer steps. Batches are consecutive slices of a
/// per-pass shuffled order; `on_step` sees the 1-based step and its loss.
pub fn pretrain(
    model: &mut Encoder<f32>,
    examples: &[PretrainExample],
    config: &PretrainConfig,
    seed: u64,
    exec: Exec,
    mut on_step: impl FnMut(u64, &PretrainLoss),
) -> Result<Vec<PretrainLoss>, EncoderError> {
    use rand::seq::SliceRandom;

    config.validate()?;
    if examples.is_empty() {
        return Err(EncoderError::Input("no pretraining examples".into()));
    }
    let mut opt = AdamWState::new(crate::numerics::AdamWConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        ..Default::default()
    });
    let root = SeedStream::new(seed);
    let bs = config.batch_size.min(examples.len());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut pass = 0u64;
    let mut history = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut root.fork("pretrain-order", pass).rng());
                pass += 1;
                cursor = 0;
            }
            batch.push(examples[order[cursor]].clone());
            cursor += 1;
        }
        let loss = pretrain_step(model, &mut opt, &batch, seed, step, exec)?;
        on_step(step + 1, &loss);
        history.push(loss);
    }
    Ok(history)
}
