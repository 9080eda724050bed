use spanforge::encoder::{build_pretrain_set, pretrain, Checkpoint, Encoder, EncoderConfig, PretrainConfig};
use spanforge::fixtures::toy_corpus;
use spanforge::tokenizer::{train_vocab, WindowConfig};
use spanforge::Exec;

fn small(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        heads: 2,
        hidden: 32,
        ffn: 64,
        vocab_size,
        max_positions: 64,
        ..EncoderConfig::default()
    }
}

#[test]
fn pretraining_loss_halves_on_toy_corpus() {
    let corpus = toy_corpus();
    let vocab = train_vocab(&corpus, 200).unwrap();
    let geo = small(vocab.len());
    let set = build_pretrain_set(&corpus, &vocab, 64, &geo, 42).unwrap();
    let mut model = Encoder::<f32>::new(geo, 42).unwrap();
    let history = pretrain(&mut model, &set, &PretrainConfig::default(), 42, Exec::default(), |_, _| {}).unwrap();
    assert_eq!(history.len(), 200);
    let head: f64 = history[..10].iter().map(|l| l.total).sum::<f64>() / 10.0;
    let tail: f64 = history[190..].iter().map(|l| l.total).sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "loss went from {head:.3} to {tail:.3}");
}

#[test]
fn pretraining_is_identical_across_execution_modes() {
    let all = toy_corpus();
    let corpus = &all[..16];
    let vocab = train_vocab(corpus, 120).unwrap();
    let geo = small(vocab.len());
    let set = build_pretrain_set(corpus, &vocab, 48, &geo, 1).unwrap();
    let cfg = PretrainConfig {
        steps: 5,
        ..PretrainConfig::default()
    };
    let run = |exec| {
        let mut m = Encoder::<f32>::new(geo.clone(), 1).unwrap();
        let h = pretrain(&mut m, &set, &cfg, 1, exec, |_, _| {}).unwrap();
        (h, m.to_checkpoint(&vocab, WindowConfig::default(), 1).to_bytes().unwrap())
    };
    assert_eq!(run(Exec::Sequential), run(Exec::default()));
}

#[test]
fn checkpoint_bytes_round_trip() {
    let vocab = train_vocab(&toy_corpus(), 100).unwrap();
    let m = Encoder::<f32>::new(small(vocab.len()), 9).unwrap();
    let bytes = m.to_checkpoint(&vocab, WindowConfig::default(), 9).to_bytes().unwrap();
    let back = Encoder::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.params, m.params);
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"NOPE").is_err());
}
