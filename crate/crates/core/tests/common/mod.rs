//! Finite-difference gradient checks shared by the integration tests.

#![allow(dead_code)]

pub mod fuzz;
pub mod oracle;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use spanforge::encoder::{
    mask_tokens, pretrain_loss_and_grads, Encoder, EncoderConfig, MaskedInput, PretrainExample,
};
use spanforge::finetune::{add_adapters, batch_loss_and_grads, LoraAdapter, TrainWindow};
use spanforge::numerics::{Gradients, NodeId, ParamId, ParamStore, Tape, Tensor};
use spanforge::tokenizer::{pack_windows, Token, WindowConfig};
use spanforge::Exec;

pub const STEP: f64 = 1e-5;
/// Denominator floor for relative errors: gradients smaller than this are
/// compared absolutely. Central differences at `STEP` on losses of order 10
/// carry about 2e-10 of rounding noise, so exactly-zero gradients (biases
/// the softmax cancels, say) read as that much.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn normals(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Largest relative error between backward and central differences over
/// `coords`. `params` exposes the store inside `model`; `eval` returns the
/// loss and, when asked, its gradient.
pub fn fd_max_error<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> &mut ParamStore<f64>,
    coords: &[(ParamId, usize)],
    eval: impl Fn(&M, bool) -> (f64, Option<Gradients<f64>>),
) -> f64 {
    let (_, g) = eval(model, true);
    let g = g.expect("gradients requested");
    let mut worst = 0.0f64;
    for &(id, i) in coords {
        let mut plus = model.clone();
        params(&mut plus).get_mut(id).data_mut()[i] += STEP;
        let mut minus = model.clone();
        params(&mut minus).get_mut(id).data_mut()[i] -= STEP;
        let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * STEP);
        let analytic = g.get(id).map_or(0.0, |v| v[i]);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

/// Every coordinate of every trainable tensor.
pub fn all_coords(store: &ParamStore<f64>) -> Vec<(ParamId, usize)> {
    store
        .trainable_ids()
        .into_iter()
        .flat_map(|id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect()
}

/// Up to `per_tensor` random coordinates from each trainable tensor.
pub fn sampled_coords(store: &ParamStore<f64>, per_tensor: usize, rng: &mut StdRng) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for id in store.trainable_ids() {
        let n = store.get(id).len();
        if n <= per_tensor {
            out.extend((0..n).map(|i| (id, i)));
        } else {
            out.extend((0..per_tensor).map(|_| (id, rng.random_range(0..n))));
        }
    }
    out
}

pub const OPS: [&str; 22] = [
    "matmul",
    "matmul_bt",
    "transpose",
    "add",
    "add_row",
    "mul",
    "scale",
    "gelu",
    "dropout",
    "softmax_rows",
    "masked_softmax_rows",
    "layer_norm",
    "gather_rows",
    "slice_cols",
    "concat_cols",
    "nll_pick",
    "nll_pick_rows",
    "softmax_nll",
    "sum",
    "sum_squares",
    "low_rank_frobenius",
    "add_scalars",
];

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub seed: u64,
    pub max_error: f64,
}

fn push_param(store: &mut ParamStore<f64>, rng: &mut StdRng, r: usize, c: usize) -> ParamId {
    let vals = normals(rng, r * c);
    let n = store.len();
    store.push(format!("p{n}"), Tensor::new(vec![r, c], vals).unwrap().trainable())
}

fn push_positive(store: &mut ParamStore<f64>, rng: &mut StdRng, r: usize, c: usize) -> ParamId {
    let vals = (0..r * c).map(|_| rng.random_range(0.2..1.0)).collect();
    let n = store.len();
    store.push(format!("p{n}"), Tensor::new(vec![r, c], vals).unwrap().trainable())
}

/// One random configuration of one tape operation (`d ≤ 8` columns,
/// `≤ 16` rows), checked on every input coordinate. Non-scalar outputs are
/// reduced with a fixed random weighting.
pub fn op_case(op: usize, seed: u64) -> CaseResult {
    let mut r = rng(seed);
    let m = r.random_range(1..=16usize);
    let k = r.random_range(1..=8usize);
    let n = r.random_range(1..=8usize);
    let mut store = ParamStore::<f64>::new();
    let name = OPS[op];
    let mut aux: Vec<usize> = Vec::new();
    let mut factor = 0.0;
    let mut valid: Vec<bool> = Vec::new();
    match name {
        "matmul" => {
            push_param(&mut store, &mut r, m, k);
            push_param(&mut store, &mut r, k, n);
        }
        "matmul_bt" => {
            push_param(&mut store, &mut r, m, k);
            push_param(&mut store, &mut r, n, k);
        }
        "add" | "mul" => {
            push_param(&mut store, &mut r, m, n);
            push_param(&mut store, &mut r, m, n);
        }
        "add_row" => {
            push_param(&mut store, &mut r, m, n);
            push_param(&mut store, &mut r, 1, n);
        }
        "layer_norm" => {
            let d = n.max(2);
            push_param(&mut store, &mut r, m, d);
            push_param(&mut store, &mut r, 1, d);
            push_param(&mut store, &mut r, 1, d);
        }
        "gather_rows" => {
            push_param(&mut store, &mut r, m, n);
            aux = (0..r.random_range(1..=16)).map(|_| r.random_range(0..m)).collect();
        }
        "slice_cols" => {
            push_param(&mut store, &mut r, m, n);
            let start = r.random_range(0..n);
            aux = vec![start, r.random_range(1..=n - start)];
        }
        "concat_cols" => {
            for _ in 0..r.random_range(1..=3) {
                let c = r.random_range(1..=4);
                push_param(&mut store, &mut r, m, c);
            }
        }
        "nll_pick" => {
            push_positive(&mut store, &mut r, 1, n);
            aux = vec![r.random_range(0..n)];
        }
        "nll_pick_rows" => {
            push_positive(&mut store, &mut r, m, n);
            aux = (0..m).map(|_| r.random_range(0..n)).collect();
        }
        "softmax_nll" => {
            push_param(&mut store, &mut r, m, n);
            aux = (0..m).map(|_| r.random_range(0..n)).collect();
        }
        "masked_softmax_rows" => {
            push_param(&mut store, &mut r, m, n);
            valid = (0..n).map(|_| r.random_bool(0.6)).collect();
            let j = r.random_range(0..n);
            valid[j] = true;
        }
        "low_rank_frobenius" => {
            let rank = r.random_range(1..=4);
            push_param(&mut store, &mut r, n, rank);
            push_param(&mut store, &mut r, k, rank);
        }
        "add_scalars" => {
            for _ in 0..r.random_range(1..=4) {
                push_param(&mut store, &mut r, 1, 1);
            }
        }
        "scale" => {
            push_param(&mut store, &mut r, m, n);
            factor = r.random_range(-3.0..3.0);
        }
        _ => {
            push_param(&mut store, &mut r, m, n);
        }
    }
    let dropout_seed: u64 = r.random();
    let weights_seed: u64 = r.random();
    let ids: Vec<ParamId> = store.ids().collect();

    let eval = |s: &ParamStore<f64>, want: bool| -> (f64, Option<Gradients<f64>>) {
        let mut tape = Tape::<f64>::new();
        let x: Vec<NodeId> = ids.iter().map(|&id| tape.param(id, s.get(id))).collect();
        let out = match name {
            "matmul" => tape.matmul(x[0], x[1]).unwrap(),
            "matmul_bt" => tape.matmul_bt(x[0], x[1]).unwrap(),
            "transpose" => tape.transpose(x[0]),
            "add" => tape.add(x[0], x[1]).unwrap(),
            "add_row" => tape.add_row(x[0], x[1]).unwrap(),
            "mul" => tape.mul(x[0], x[1]).unwrap(),
            "scale" => tape.scale(x[0], factor),
            "gelu" => tape.gelu(x[0]),
            "dropout" => {
                let mut dr = rng(dropout_seed);
                tape.dropout(x[0], 0.3, Some(&mut dr)).unwrap()
            }
            "softmax_rows" => tape.softmax_rows(x[0]).unwrap(),
            "masked_softmax_rows" => tape.masked_softmax_rows(x[0], Some(&valid)).unwrap(),
            "layer_norm" => tape.layer_norm(x[0], x[1], x[2], 1e-12).unwrap(),
            "gather_rows" => tape.gather_rows(x[0], &aux).unwrap(),
            "slice_cols" => tape.slice_cols(x[0], aux[0], aux[1]).unwrap(),
            "concat_cols" => tape.concat_cols(&x).unwrap(),
            "nll_pick" => tape.nll_pick(x[0], aux[0]).unwrap(),
            "nll_pick_rows" => tape.nll_pick_rows(x[0], &aux).unwrap(),
            "softmax_nll" => {
                let p = tape.softmax_rows(x[0]).unwrap();
                tape.nll_pick_rows(p, &aux).unwrap()
            }
            "sum" => tape.sum(x[0]),
            "sum_squares" => tape.sum_squares(x[0]),
            "low_rank_frobenius" => tape.low_rank_frobenius(x[0], x[1]).unwrap(),
            "add_scalars" => tape.add_scalars(&x).unwrap(),
            other => unreachable!("unknown op {other}"),
        };
        let loss = if tape.dims(out) == (1, 1) {
            out
        } else {
            let (rr, cc) = tape.dims(out);
            let w = normals(&mut rng(weights_seed), rr * cc);
            let w = tape.constant(rr, cc, w).unwrap();
            let prod = tape.mul(out, w).unwrap();
            tape.sum(prod)
        };
        let grads = want.then(|| tape.backward(loss).unwrap());
        (tape.scalar(loss), grads)
    };
    let coords = all_coords(&store);
    let max_error = fd_max_error(&store, |s| s, &coords, eval);
    CaseResult {
        name: name.to_string(),
        seed,
        max_error,
    }
}

pub fn tiny_geometry(r: &mut StdRng) -> EncoderConfig {
    let hidden = [4usize, 6, 8][r.random_range(0..3)];
    let heads = if hidden % 2 == 0 && r.random_bool(0.5) { 2 } else { 1 };
    EncoderConfig {
        layers: r.random_range(1..=2),
        heads,
        hidden,
        ffn: r.random_range(4..=12),
        vocab_size: r.random_range(8..=16),
        max_positions: 16,
        ..EncoderConfig::default()
    }
}

/// An encoder whose weights are drawn at a larger scale than the default
/// initialisation, so every path carries a visible gradient.
pub fn tiny_model(cfg: &EncoderConfig, r: &mut StdRng) -> Encoder<f64> {
    let mut m = Encoder::<f64>::new(cfg.clone(), r.random()).unwrap();
    let ids: Vec<ParamId> = m.params.ids().collect();
    for id in ids {
        let t = m.params.get_mut(id);
        let n = t.len();
        let noise = normals(r, n);
        for (v, z) in t.data_mut().iter_mut().zip(noise) {
            *v += 0.3 * z;
        }
    }
    m
}

/// A random window of length ≤ 16 with a question and a context segment.
pub fn random_window(vocab: usize, r: &mut StdRng) -> spanforge::tokenizer::EncodedWindow {
    let q = r.random_range(1..=4);
    let c = r.random_range(1..=16 - q - 3);
    let q_ids: Vec<u32> = (0..q).map(|_| r.random_range(5..vocab as u32)).collect();
    let ctx: Vec<Token> = (0..c)
        .map(|i| Token {
            id: r.random_range(5..vocab as u32),
            start: 2 * i,
            end: 2 * i + 1,
        })
        .collect();
    pack_windows(&q_ids, &ctx, WindowConfig { max_len: 16, stride: 8 })
        .unwrap()
        .remove(0)
        .trimmed()
}

pub fn random_target(w: &spanforge::tokenizer::EncodedWindow, r: &mut StdRng) -> (usize, usize) {
    if r.random_bool(0.2) {
        return (0, 0);
    }
    let ctx = w.context_positions();
    let s = r.random_range(ctx.clone());
    let e = r.random_range(s..ctx.end);
    (s, e)
}

/// Masked-LM plus sentence-pair loss of a random batch.
pub fn pretrain_case(seed: u64) -> CaseResult {
    let mut r = rng(seed);
    let mut cfg = tiny_geometry(&mut r);
    cfg.use_nsp = r.random_bool(0.7);
    let model = tiny_model(&cfg, &mut r);
    let bs = r.random_range(1..=3);
    let mut batch = Vec::new();
    let mut masks: Vec<MaskedInput> = Vec::new();
    for i in 0..bs {
        let window = random_window(cfg.vocab_size, &mut r);
        masks.push(mask_tokens(&window, cfg.vocab_size, 0.3, &mut r).unwrap());
        batch.push(PretrainExample {
            index: i,
            window,
            nsp_label: r.random_range(0..2),
            mask: None,
        });
    }
    let coords = sampled_coords(&model.params, 6, &mut r);
    let max_error = fd_max_error(&model, |m| &mut m.params, &coords, |m, want| {
        let (l, g) = pretrain_loss_and_grads(m, &batch, &masks, want, Exec::Sequential).unwrap();
        (l.total, g)
    });
    CaseResult {
        name: "pretrain_loss".into(),
        seed,
        max_error,
    }
}

fn train_windows(cfg: &EncoderConfig, r: &mut StdRng, n: usize) -> Vec<TrainWindow> {
    (0..n)
        .map(|i| {
            let window = random_window(cfg.vocab_size, r);
            let (start, end) = random_target(&window, r);
            TrainWindow {
                example: i,
                window,
                start,
                end,
            }
        })
        .collect()
}

/// Span loss of a random batch with every weight trainable.
pub fn qa_case(seed: u64) -> CaseResult {
    let mut r = rng(seed);
    let cfg = tiny_geometry(&mut r);
    let model = tiny_model(&cfg, &mut r);
    let count = r.random_range(1..=3);
    let items = train_windows(&cfg, &mut r, count);
    let coords = sampled_coords(&model.params, 6, &mut r);
    let max_error = fd_max_error(&model, |m| &mut m.params, &coords, |m, want| {
        let refs: Vec<&TrainWindow> = items.iter().collect();
        let (l, g) = batch_loss_and_grads(m, &refs, &[], 0.0, None, Exec::Sequential).unwrap();
        (l, want.then_some(g))
    });
    CaseResult {
        name: "qa_loss".into(),
        seed,
        max_error,
    }
}

/// Span loss plus the adapter penalty, with adapter dropout on and `B`
/// moved off zero so that both adapter factors carry gradient.
pub fn lora_case(seed: u64) -> CaseResult {
    let mut r = rng(seed);
    let cfg = tiny_geometry(&mut r);
    let mut model = tiny_model(&cfg, &mut r);
    let rank = r.random_range(1..cfg.hidden);
    let adapters: Vec<LoraAdapter> = add_adapters(&mut model, rank, 0.2, r.random()).unwrap();
    for ad in &adapters {
        for id in [ad.a, ad.b] {
            let t = model.params.get_mut(id);
            let n = t.len();
            let noise = normals(&mut r, n);
            for (v, z) in t.data_mut().iter_mut().zip(noise) {
                *v = 0.3 * z;
            }
        }
    }
    let count = r.random_range(1..=3);
    let items = train_windows(&cfg, &mut r, count);
    let lambda = r.random_range(0.01..0.5);
    let dropout_seed = spanforge::rng::SeedStream::new(r.random());
    let coords = sampled_coords(&model.params, 6, &mut r);
    let max_error = fd_max_error(&model, |m| &mut m.params, &coords, |m, want| {
        let refs: Vec<&TrainWindow> = items.iter().collect();
        let (l, g) =
            batch_loss_and_grads(m, &refs, &adapters, lambda, Some(dropout_seed), Exec::Sequential).unwrap();
        (l, want.then_some(g))
    });
    CaseResult {
        name: "lora_loss".into(),
        seed,
        max_error,
    }
}

/// The whole suite: every tape operation on `per_op` configurations and
/// each loss path on `per_loss` configurations.
pub fn gradient_suite(per_op: u64, per_loss: u64) -> Vec<CaseResult> {
    let mut out = Vec::new();
    for op in 0..OPS.len() {
        for s in 0..per_op {
            out.push(op_case(op, 1000 * op as u64 + s));
        }
    }
    for s in 0..per_loss {
        out.push(pretrain_case(50_000 + s));
        out.push(qa_case(60_000 + s));
        out.push(lora_case(70_000 + s));
    }
    out
}
