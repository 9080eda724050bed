//! Parameter layout and initialisation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{ParamId, ParamStore, Real, Tensor};
use crate::rng::SeedStream;

use super::EncoderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskingMode {
    /// One mask per example, fixed when the pretraining set is built.
    Static,
    /// Masks redrawn every batch.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub mask_prob: f64,
    pub masking_mode: MaskingMode,
    /// When false the pretraining objective is masked-LM only.
    pub use_nsp: bool,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden: 32,
            ffn: 64,
            vocab_size: 256,
            max_positions: 384,
            mask_prob: 0.15,
            masking_mode: MaskingMode::Static,
            use_nsp: true,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub const SEGMENT_TYPES: usize = 2;

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ffn == 0 {
            return bad("layers, heads, hidden and ffn must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.vocab_size <= crate::tokenizer::NUM_SPECIALS {
            return bad(format!("vocab_size {} leaves no room for pieces", self.vocab_size));
        }
        if self.max_positions == 0 {
            return bad("max_positions must be positive".into());
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return bad(format!("mask_prob must lie in (0, 1), got {}", self.mask_prob));
        }
        if !(self.layer_norm_eps > 0.0) || !(self.init_std >= 0.0) {
            return bad("layer_norm_eps must be > 0 and init_std >= 0".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Query,
    Value,
}

impl Projection {
    pub fn name(self) -> &'static str {
        match self {
            Projection::Query => "query",
            Projection::Value => "value",
        }
    }
}

/// Low-rank branch on one projection: `x·W + (dropout(x)·B)·Aᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterSlot {
    pub a: ParamId,
    pub b: ParamId,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query_w: ParamId,
    pub query_b: ParamId,
    pub key_w: ParamId,
    pub key_b: ParamId,
    pub value_w: ParamId,
    pub value_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ffn_in_w: ParamId,
    pub ffn_in_b: ParamId,
    pub ffn_out_w: ParamId,
    pub ffn_out_b: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub query_adapter: Option<AdapterSlot>,
    pub value_adapter: Option<AdapterSlot>,
}

impl LayerParams {
    pub fn projection_weight(&self, p: Projection) -> ParamId {
        match p {
            Projection::Query => self.query_w,
            Projection::Value => self.value_w,
        }
    }

    pub fn adapter(&self, p: Projection) -> Option<AdapterSlot> {
        match p {
            Projection::Query => self.query_adapter,
            Projection::Value => self.value_adapter,
        }
    }

    fn adapter_mut(&mut self, p: Projection) -> &mut Option<AdapterSlot> {
        match p {
            Projection::Query => &mut self.query_adapter,
            Projection::Value => &mut self.value_adapter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub token_emb: ParamId,
    pub position_emb: ParamId,
    pub segment_emb: ParamId,
    pub emb_gamma: ParamId,
    pub emb_beta: ParamId,
    pub layers: Vec<LayerParams>,
    pub mlm_w: ParamId,
    pub mlm_b: ParamId,
    pub nsp_w: ParamId,
    pub nsp_b: ParamId,
    pub span_start: ParamId,
    pub span_end: ParamId,
}

pub const SPAN_START: &str = "span.start";
pub const SPAN_END: &str = "span.end";

/// Parameter names and shapes in canonical order.
pub fn parameter_shapes(c: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, v) = (c.hidden, c.ffn, c.vocab_size);
    let mut out = vec![
        ("embeddings.token".to_string(), vec![v, d]),
        ("embeddings.position".to_string(), vec![c.max_positions, d]),
        ("embeddings.segment".to_string(), vec![EncoderConfig::SEGMENT_TYPES, d]),
        ("embeddings.norm.gamma".to_string(), vec![d]),
        ("embeddings.norm.beta".to_string(), vec![d]),
    ];
    for l in 0..c.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        out.extend([
            (p("attn.query.weight"), vec![d, d]),
            (p("attn.query.bias"), vec![d]),
            (p("attn.key.weight"), vec![d, d]),
            (p("attn.key.bias"), vec![d]),
            (p("attn.value.weight"), vec![d, d]),
            (p("attn.value.bias"), vec![d]),
            (p("attn.output.weight"), vec![d, d]),
            (p("attn.output.bias"), vec![d]),
            (p("attn.norm.gamma"), vec![d]),
            (p("attn.norm.beta"), vec![d]),
            (p("ffn.in.weight"), vec![d, f]),
            (p("ffn.in.bias"), vec![f]),
            (p("ffn.out.weight"), vec![f, d]),
            (p("ffn.out.bias"), vec![d]),
            (p("ffn.norm.gamma"), vec![d]),
            (p("ffn.norm.beta"), vec![d]),
        ]);
    }
    out.extend([
        ("mlm.weight".to_string(), vec![d, v]),
        ("mlm.bias".to_string(), vec![v]),
        ("nsp.weight".to_string(), vec![d, 2]),
        ("nsp.bias".to_string(), vec![2]),
        (SPAN_START.to_string(), vec![d]),
        (SPAN_END.to_string(), vec![d]),
    ]);
    out
}

pub fn adapter_names(layer: usize, p: Projection) -> (String, String) {
    (
        format!("layer{layer}.attn.{}.lora_a", p.name()),
        format!("layer{layer}.attn.{}.lora_b", p.name()),
    )
}

fn is_unit_gain(name: &str) -> bool {
    name.ends_with(".gamma")
}

fn is_zero_init(name: &str) -> bool {
    name.ends_with(".beta") || name.ends_with(".bias")
}

/// Truncated normal: redraw anything beyond two standard deviations.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64, n: usize) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect()
}

/// Encoder parameters plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T: Real = f32> {
    pub config: EncoderConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Encoder<T> {
    /// Random initialisation; every tensor draws from its own forked stream.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let root = SeedStream::new(seed).fork("encoder-init", 0);
        let mut params = ParamStore::new();
        for (i, (name, shape)) in parameter_shapes(&config).into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if is_unit_gain(&name) {
                vec![T::one(); n]
            } else if is_zero_init(&name) {
                vec![T::zero(); n]
            } else {
                let mut rng = root.fork("tensor", i as u64).rng();
                truncated_normal(&mut rng, config.init_std, n)
                    .into_iter()
                    .map(T::from_f64_lossy)
                    .collect()
            };
            params.push(name, Tensor::new(shape, data)?.trainable());
        }
        Self::from_params(config, params)
    }

    /// All-zero weights with unit layer-norm gains.
    pub fn zeros(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let n: usize = shape.iter().product();
            let fill = if is_unit_gain(&name) { T::one() } else { T::zero() };
            params.push(name, Tensor::new(shape, vec![fill; n])?.trainable());
        }
        Self::from_params(config, params)
    }

    /// Rebuilds the layout from named parameters, checking every shape.
    /// Adapter tensors present in the store are re-attached.
    pub fn from_params(config: EncoderConfig, params: ParamStore<T>) -> Result<Self, EncoderError> {
        config.validate()?;
        let lookup = |name: &str, shape: &[usize]| -> Result<ParamId, EncoderError> {
            let id = params
                .find(name)
                .ok_or_else(|| EncoderError::Checkpoint(format!("missing tensor {name}")))?;
            if params.get(id).shape() != shape {
                return Err(EncoderError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    params.get(id).shape()
                )));
            }
            Ok(id)
        };
        let shapes = parameter_shapes(&config);
        let mut ids = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            ids.push(lookup(name, shape)?);
        }
        let mut it = ids.into_iter();
        let mut next = || it.next().expect("layout matches parameter_shapes");
        let (token_emb, position_emb, segment_emb, emb_gamma, emb_beta) =
            (next(), next(), next(), next(), next());
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(LayerParams {
                query_w: next(),
                query_b: next(),
                key_w: next(),
                key_b: next(),
                value_w: next(),
                value_b: next(),
                out_w: next(),
                out_b: next(),
                ln1_gamma: next(),
                ln1_beta: next(),
                ffn_in_w: next(),
                ffn_in_b: next(),
                ffn_out_w: next(),
                ffn_out_b: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
                query_adapter: None,
                value_adapter: None,
            });
        }
        let layout = Layout {
            token_emb,
            position_emb,
            segment_emb,
            emb_gamma,
            emb_beta,
            layers,
            mlm_w: next(),
            mlm_b: next(),
            nsp_w: next(),
            nsp_b: next(),
            span_start: next(),
            span_end: next(),
        };
        let mut enc = Self {
            config,
            params,
            layout,
        };
        for l in 0..enc.config.layers {
            for p in [Projection::Query, Projection::Value] {
                let (an, bn) = adapter_names(l, p);
                if let (Some(a), Some(b)) = (enc.params.find(&an), enc.params.find(&bn)) {
                    enc.attach_adapter(l, p, a, b, 0.0)?;
                }
            }
        }
        Ok(enc)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Registers an adapter pair already present in `params` on one
    /// projection. `A` must be `k × r` and `B` `d × r` for a `d × k` weight.
    pub fn attach_adapter(
        &mut self,
        layer: usize,
        projection: Projection,
        a: ParamId,
        b: ParamId,
        dropout: f64,
    ) -> Result<(), EncoderError> {
        let lp = self
            .layout
            .layers
            .get(layer)
            .ok_or_else(|| EncoderError::Config(format!("no layer {layer}")))?;
        let w = self.params.get(lp.projection_weight(projection)).shape().to_vec();
        let (ash, bsh) = (self.params.get(a).shape(), self.params.get(b).shape());
        let ok = ash.len() == 2
            && bsh.len() == 2
            && ash[1] == bsh[1]
            && bsh[0] == w[0]
            && ash[0] == w[1];
        if !ok {
            return Err(EncoderError::Config(format!(
                "adapter shapes A{ash:?} B{bsh:?} do not fit weight {w:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(EncoderError::Config(format!("adapter dropout {dropout} outside [0, 1)")));
        }
        *self.layout.layers[layer].adapter_mut(projection) = Some(AdapterSlot { a, b, dropout });
        Ok(())
    }

    pub fn set_adapter_dropout(&mut self, dropout: f64) {
        for lp in &mut self.layout.layers {
            for slot in [&mut lp.query_adapter, &mut lp.value_adapter].into_iter().flatten() {
                slot.dropout = dropout;
            }
        }
    }

    pub fn adapter_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for lp in &self.layout.layers {
            for slot in [lp.query_adapter, lp.value_adapter].into_iter().flatten() {
                ids.push(slot.a);
                ids.push(slot.b);
            }
        }
        ids
    }

    pub fn has_adapters(&self) -> bool {
        !self.adapter_param_ids().is_empty()
    }

    /// Every parameter that is neither an adapter nor a span head.
    pub fn base_param_ids(&self) -> Vec<ParamId> {
        let adapters = self.adapter_param_ids();
        self.params
            .ids()
            .filter(|id| {
                !adapters.contains(id) && *id != self.layout.span_start && *id != self.layout.span_end
            })
            .collect()
    }

    pub fn span_head_ids(&self) -> [ParamId; 2] {
        [self.layout.span_start, self.layout.span_end]
    }
}
