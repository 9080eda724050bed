//! Low-rank adapters on the query and value projections.

use crate::encoder::{
    adapter_names, parameter_count, parameter_shapes, tensor_hash, AdapterMeta, Checkpoint,
    CheckpointKind, CheckpointMeta, Encoder, EncoderConfig, Projection,
};
use crate::numerics::{Gradients, NumericsError, ParamId, Real, Tape, Tensor};
use crate::rng::SeedStream;
use crate::tokenizer::{Vocabulary, WindowConfig};

use rand_distr::{Distribution, Normal};

use super::{FinetuneConfig, FinetuneError, Mode};

pub const TARGETS: [Projection; 2] = [Projection::Query, Projection::Value];

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub layer: usize,
    pub target: Projection,
    /// `k × r`.
    pub a: ParamId,
    /// `d × r`, zero at injection.
    pub b: ParamId,
    pub rank: usize,
}

/// Adapters attached to a model plus the hash of the base it was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraState {
    pub adapters: Vec<LoraAdapter>,
    pub rank: usize,
    pub dropout: f64,
    pub base_hash: String,
}

/// SHA-256 over every tensor in the model, in store order.
pub fn model_hash(model: &Encoder<f32>) -> String {
    tensor_hash(model.params.iter().map(|(_, n, t)| (n, t)))
}

/// SHA-256 over the tensors that LoRA training must never touch.
pub fn frozen_hash(model: &Encoder<f32>) -> String {
    let ids = model.base_param_ids();
    tensor_hash(ids.iter().map(|&id| (model.params.name(id), model.params.get(id))))
}

fn pretraining_heads<T: Real>(model: &Encoder<T>) -> [ParamId; 4] {
    let l = model.layout();
    [l.mlm_w, l.mlm_b, l.nsp_w, l.nsp_b]
}

/// Full fine-tuning: everything trains except the pretraining heads, which
/// the QA loss never reaches.
pub fn prepare_sft<T: Real>(model: &mut Encoder<T>) -> Result<(), FinetuneError> {
    if model.has_adapters() {
        return Err(FinetuneError::Config("sft expects a model without adapters".into()));
    }
    model.params.set_requires_grad(true);
    for id in pretraining_heads(model) {
        model.params.get_mut(id).requires_grad = false;
    }
    Ok(())
}

/// Freezes the base, adds `A` (normal, std 0.02) and `B` (zero) on the
/// query and value projections of every layer and keeps the span heads
/// trainable.
pub fn inject_lora(model: &mut Encoder<f32>, config: &FinetuneConfig) -> Result<LoraState, FinetuneError> {
    if config.mode != Mode::Lora {
        return Err(FinetuneError::Config("inject_lora requires mode = lora".into()));
    }
    config.validate()?;
    if model.has_adapters() {
        return Err(FinetuneError::Config("model already carries adapters".into()));
    }
    let base_hash = model_hash(model);
    let adapters = add_adapters(model, config.lora_rank, config.lora_dropout, config.seed)?;
    Ok(LoraState {
        adapters,
        rank: config.lora_rank,
        dropout: config.lora_dropout,
        base_hash,
    })
}

/// Generic core of [`inject_lora`], also used by gradient checks in `f64`.
pub fn add_adapters<T: Real>(
    model: &mut Encoder<T>,
    rank: usize,
    dropout: f64,
    seed: u64,
) -> Result<Vec<LoraAdapter>, FinetuneError> {
    let d = model.config.hidden;
    if rank == 0 || rank >= d {
        return Err(FinetuneError::Config(format!(
            "lora rank {rank} must satisfy 0 < r < min(d, k) = {d}"
        )));
    }
    model.params.set_requires_grad(false);
    for id in model.span_head_ids() {
        model.params.get_mut(id).requires_grad = true;
    }
    let root = SeedStream::new(seed).fork("lora-init", 0);
    let normal = Normal::new(0.0, 0.02).expect("finite std");
    let mut adapters = Vec::new();
    for layer in 0..model.config.layers {
        for (t, target) in TARGETS.into_iter().enumerate() {
            let w = model.layout().layers[layer].projection_weight(target);
            let (dd, k) = model.params.get(w).matrix_dims();
            let mut rng = root.fork("adapter", (2 * layer + t) as u64).rng();
            let a_vals: Vec<T> = (0..k * rank).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
            let (an, bn) = adapter_names(layer, target);
            let a = model.params.push(an, Tensor::new(vec![k, rank], a_vals)?.trainable());
            let b = model.params.push(bn, Tensor::zeros(vec![dd, rank]).trainable());
            model.attach_adapter(layer, target, a, b, dropout)?;
            adapters.push(LoraAdapter {
                layer,
                target,
                a,
                b,
                rank,
            });
        }
    }
    Ok(adapters)
}

/// Lists the adapters already attached to a model.
pub fn attached_adapters<T: Real>(model: &Encoder<T>) -> Vec<LoraAdapter> {
    let mut out = Vec::new();
    for (layer, lp) in model.layout().layers.iter().enumerate() {
        for target in TARGETS {
            if let Some(slot) = lp.adapter(target) {
                out.push(LoraAdapter {
                    layer,
                    target,
                    a: slot.a,
                    b: slot.b,
                    rank: model.params.get(slot.a).shape()[1],
                });
            }
        }
    }
    out
}

/// `W + B·Aᵀ`.
pub fn effective_weight<T: Real>(w: &Tensor<T>, b: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (d, k) = w.matrix_dims();
    let (bd, br) = b.matrix_dims();
    let (ak, ar) = a.matrix_dims();
    if w.shape().len() != 2 || bd != d || ak != k || br != ar {
        return Err(NumericsError::Dimension {
            op: "effective_weight",
            left: w.shape().to_vec(),
            right: vec![bd, br, ak, ar],
        });
    }
    let mut out = w.data().to_vec();
    for i in 0..d {
        for j in 0..k {
            let mut acc = 0.0f64;
            for t in 0..br {
                acc += b.data()[i * br + t].as_f64() * a.data()[j * ar + t].as_f64();
            }
            out[i * k + j] = out[i * k + j] + T::from_f64_lossy(acc);
        }
    }
    Tensor::new(vec![d, k], out)
}

/// `λ · Σ ‖B·Aᵀ‖_F²` and, optionally, its gradient.
pub fn lora_regularizer<T: Real>(
    model: &Encoder<T>,
    adapters: &[LoraAdapter],
    lambda: f64,
    want_grads: bool,
) -> Result<(f64, Option<Gradients<T>>), FinetuneError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(FinetuneError::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if adapters.is_empty() || lambda == 0.0 {
        return Ok((0.0, want_grads.then(Gradients::new)));
    }
    let mut tape = Tape::new();
    let mut terms = Vec::with_capacity(adapters.len());
    for ad in adapters {
        let b = tape.param(ad.b, model.params.get(ad.b));
        let a = tape.param(ad.a, model.params.get(ad.a));
        terms.push(tape.low_rank_frobenius(b, a)?);
    }
    let sum = tape.add_scalars(&terms)?;
    let loss = tape.scale(sum, lambda);
    let value = tape.scalar(loss).as_f64();
    let grads = if want_grads { Some(tape.backward(loss)?) } else { None };
    Ok((value, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
    pub reduction_percent: f64,
}

/// Scalars of the QA model: the encoder plus span heads, without the
/// pretraining heads.
pub fn qa_parameter_count(geometry: &EncoderConfig) -> usize {
    let heads: usize = parameter_shapes(geometry)
        .iter()
        .filter(|(n, _)| n.starts_with("mlm.") || n.starts_with("nsp."))
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    parameter_count(geometry) - heads
}

/// Trainable scalars for a mode, against the full-fine-tuning count.
pub fn trainable_param_count(config: &FinetuneConfig, geometry: &EncoderConfig) -> ParamCount {
    let total = qa_parameter_count(geometry);
    let trainable = match config.mode {
        Mode::Sft => total,
        Mode::Lora => {
            let d = geometry.hidden;
            let per_adapter = config.lora_rank * (d + d);
            geometry.layers * TARGETS.len() * per_adapter + 2 * d
        }
    };
    ParamCount {
        trainable,
        total,
        reduction_percent: 100.0 * (1.0 - trainable as f64 / total as f64),
    }
}

/// Adapter tensors plus span heads, tagged with the base hash.
pub fn adapter_checkpoint(
    model: &Encoder<f32>,
    state: &LoraState,
    vocab: &Vocabulary,
    window: WindowConfig,
    seed: u64,
) -> Checkpoint {
    let meta = CheckpointMeta {
        kind: CheckpointKind::Adapter,
        encoder: model.config.clone(),
        window,
        vocab: vocab.pieces().to_vec(),
        seed,
        adapter: Some(AdapterMeta {
            rank: state.rank,
            dropout: state.dropout,
            base_hash: state.base_hash.clone(),
        }),
    };
    let mut ids: Vec<ParamId> = Vec::new();
    for ad in &state.adapters {
        ids.push(ad.a);
        ids.push(ad.b);
    }
    ids.extend(model.span_head_ids());
    Checkpoint::from_store(meta, &model.params, &ids)
}

/// Rebuilds a LoRA model from its base and adapter checkpoints after
/// checking that the adapter was trained on exactly this base.
pub fn load_with_adapter(base: &Checkpoint, adapter: &Checkpoint) -> Result<(Encoder<f32>, LoraState), FinetuneError> {
    let meta = adapter
        .meta
        .adapter
        .as_ref()
        .filter(|_| adapter.meta.kind == CheckpointKind::Adapter)
        .ok_or_else(|| FinetuneError::Integrity("not an adapter checkpoint".into()))?;
    let actual = base.hash();
    if actual != meta.base_hash {
        return Err(FinetuneError::Integrity(format!(
            "adapter expects base {} but the given base hashes to {actual}",
            meta.base_hash
        )));
    }
    if base.meta.encoder != adapter.meta.encoder || base.meta.vocab != adapter.meta.vocab {
        return Err(FinetuneError::Integrity("adapter and base disagree on geometry or vocabulary".into()));
    }
    let mut model = Encoder::from_checkpoint(base)?;
    if model.has_adapters() {
        return Err(FinetuneError::Integrity("base checkpoint already carries adapters".into()));
    }
    model.params.set_requires_grad(false);
    let span = model.span_head_ids();
    for (name, t) in &adapter.tensors {
        if name.contains(".lora_") {
            continue;
        }
        let id = model
            .params
            .find(name)
            .filter(|id| span.contains(id))
            .ok_or_else(|| FinetuneError::Integrity(format!("unexpected tensor {name} in adapter checkpoint")))?;
        if model.params.get(id).shape() != t.shape() {
            return Err(FinetuneError::Integrity(format!("span head {name} has the wrong shape")));
        }
        *model.params.get_mut(id) = t.clone().trainable();
    }
    let mut adapters = Vec::new();
    for layer in 0..model.config.layers {
        for target in TARGETS {
            let (an, bn) = adapter_names(layer, target);
            let find = |n: &str| adapter.tensors.iter().find(|(x, _)| x == n).map(|(_, t)| t.clone());
            let (Some(at), Some(bt)) = (find(&an), find(&bn)) else {
                return Err(FinetuneError::Integrity(format!("adapter for layer {layer} {} missing", target.name())));
            };
            let rank = at.shape().get(1).copied().unwrap_or(0);
            let a = model.params.push(an, at.trainable());
            let b = model.params.push(bn, bt.trainable());
            model.attach_adapter(layer, target, a, b, meta.dropout)?;
            adapters.push(LoraAdapter {
                layer,
                target,
                a,
                b,
                rank,
            });
        }
    }
    let expected = 2 * adapters.len() + 2;
    if adapter.tensors.len() != expected {
        return Err(FinetuneError::Integrity(format!(
            "adapter checkpoint holds {} tensors, expected {expected}",
            adapter.tensors.len()
        )));
    }
    Ok((
        model,
        LoraState {
            adapters,
            rank: meta.rank,
            dropout: meta.dropout,
            base_hash: meta.base_hash.clone(),
        },
    ))
}
