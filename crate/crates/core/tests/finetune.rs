use proptest::prelude::*;
use spanforge::encoder::{Encoder, EncoderConfig};
use spanforge::evalkit::{evaluate, DecodeConfig};
use spanforge::finetune::{
    build_train_windows, fit, inject_lora, mean_loss, prepare_sft, trainable_param_count, FinetuneConfig, Mode,
    Trainer,
};
use spanforge::fixtures::toy_qa;
use spanforge::tokenizer::{train_vocab, Vocabulary, WindowConfig};
use spanforge::Exec;

const WINDOW: WindowConfig = WindowConfig { max_len: 48, stride: 16 };

fn toy_setup() -> (Vocabulary, EncoderConfig) {
    let ds = toy_qa();
    let texts: Vec<&str> = ds.examples.iter().flat_map(|e| [&*e.context, e.question.as_str()]).collect();
    let vocab = train_vocab(&texts, 150).unwrap();
    let geo = EncoderConfig {
        layers: 1,
        heads: 2,
        hidden: 16,
        ffn: 32,
        vocab_size: vocab.len(),
        max_positions: 64,
        ..EncoderConfig::default()
    };
    (vocab, geo)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fresh_adapters_leave_logits_unchanged(seed in any::<u64>(), rank in 1usize..16) {
        let (vocab, geo) = toy_setup();
        let items = build_train_windows(&toy_qa(), &vocab, WINDOW).unwrap();
        let base = Encoder::<f32>::new(geo, seed).unwrap();
        let mut adapted = base.clone();
        let cfg = FinetuneConfig { mode: Mode::Lora, lora_rank: rank, seed, ..FinetuneConfig::default() };
        inject_lora(&mut adapted, &cfg).unwrap();
        for it in items.iter().step_by(5) {
            prop_assert_eq!(base.span_logits(&it.window).unwrap(), adapted.span_logits(&it.window).unwrap());
        }
    }
}

#[test]
fn short_runs_lower_the_training_loss() {
    let (vocab, geo) = toy_setup();
    let ds = toy_qa();
    let items = build_train_windows(&ds, &vocab, WINDOW).unwrap();
    for (mode, lr) in [(Mode::Sft, 2e-3), (Mode::Lora, 2e-2)] {
        let mut model = Encoder::<f32>::new(geo.clone(), 5).unwrap();
        let cfg = FinetuneConfig {
            mode,
            learning_rate: lr,
            batch_size: 4,
            max_epochs: 20,
            early_stop_patience: 0,
            max_steps: Some(60),
            seed: 5,
            ..FinetuneConfig::default()
        };
        let adapters = match mode {
            Mode::Sft => {
                prepare_sft(&mut model).unwrap();
                vec![]
            }
            Mode::Lora => inject_lora(&mut model, &cfg).unwrap().adapters,
        };
        let before = mean_loss(&model, &items, Exec::Sequential).unwrap();
        let mut trainer = Trainer::new(model, cfg, adapters, Exec::default()).unwrap();
        let report = fit(&mut trainer, &items, &[], |_| {}).unwrap();
        assert_eq!(report.total_steps, 60);
        let after = mean_loss(&trainer.model, &items, Exec::Sequential).unwrap();
        assert!(after < before, "{mode:?}: {before} -> {after}");
        let (rep, preds) = evaluate(&trainer.model, &vocab, &ds, WINDOW, DecodeConfig::default(), "t", Exec::default())
            .unwrap();
        assert_eq!(preds.len(), ds.len());
        assert_eq!(rep.merged().examples, ds.len());
    }
}

#[test]
fn lora_trains_a_small_fraction() {
    let geo = EncoderConfig {
        layers: 4,
        hidden: 64,
        ffn: 256,
        vocab_size: 1000,
        ..EncoderConfig::default()
    };
    let sft = trainable_param_count(&FinetuneConfig::default(), &geo);
    let lora = trainable_param_count(&FinetuneConfig { mode: Mode::Lora, lora_rank: 4, ..FinetuneConfig::default() }, &geo);
    assert_eq!(sft.trainable, sft.total);
    assert_eq!(lora.total, sft.total);
    assert_eq!(lora.trainable, 4 * 2 * 4 * 128 + 2 * 64);
}
