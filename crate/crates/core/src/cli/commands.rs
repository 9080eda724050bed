use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataset::{self, Dataset, DedupResult, SubdomainReport};
use crate::encoder::{self, build_pretrain_set, split_sentences, Checkpoint, CheckpointKind, Encoder, PretrainLoss};
use crate::evalkit::{self, DecodeConfig, DomainReport, Prediction};
use crate::exec::Exec;
use crate::finetune::{
    adapter_checkpoint, build_train_windows, fit, inject_lora, load_with_adapter, prepare_sft, EpochRecord, FitReport,
    Mode, Trainer,
};
use crate::tokenizer::{train_vocab, Vocabulary, WindowConfig};

use super::{io_err, CliError, RunConfig};

/// Printed by `predict` instead of an empty answer.
pub const NO_ANSWER: &str = "<no-answer>";

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn prepare_out_dir(flag: Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf, CliError> {
    let dir = flag
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory (use --out or output_dir)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    cfg.output_dir = Some(dir.clone());
    Ok(dir)
}

fn timing_csv(rows: &[(&str, f64)]) -> String {
    let mut s = String::from("phase,seconds\n");
    for (phase, secs) in rows {
        let _ = writeln!(s, "{phase},{secs:.3}");
    }
    s
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Trains a vocabulary on the non-empty lines of `corpus` and writes it.
pub fn vocab(corpus: &Path, size: usize, out: &Path) -> Result<Vocabulary, CliError> {
    let text = read_text(corpus)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(CliError::Config(format!("{} has no text", corpus.display())));
    }
    let v = train_vocab(&lines, size).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write(out, v.to_text())?;
    Ok(v)
}

#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    pub config: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct PretrainSummary {
    pub out_dir: PathBuf,
    pub history: Vec<PretrainLoss>,
}

fn vocab_for(cfg: &RunConfig, texts: &[String]) -> Result<Vocabulary, CliError> {
    match &cfg.tokenizer.vocab {
        Some(p) => Ok(Vocabulary::load(p)?),
        None => train_vocab(texts, cfg.tokenizer.vocab_size).map_err(|e| CliError::Config(e.to_string())),
    }
}

/// Masked-LM (plus sentence-pair) pretraining on a plain-text corpus.
/// Writes `model.ckpt`, `vocab.txt`, `pretrain_log.csv`, `timing.csv` and
/// the resolved `config.toml`.
pub fn pretrain(opts: PretrainOptions) -> Result<PretrainSummary, CliError> {
    let t0 = Instant::now();
    let mut cfg = RunConfig::load_or_default(opts.config.as_deref())?;
    let seed = cfg.resolve_seed(opts.seed)?;
    if let Some(c) = opts.corpus {
        cfg.data.corpus = Some(c);
    }
    if let Some(v) = opts.vocab {
        cfg.tokenizer.vocab = Some(v);
    }
    if let Some(s) = opts.steps {
        cfg.pretrain.steps = s;
    }
    let out = prepare_out_dir(opts.out, &mut cfg)?;
    let corpus = cfg
        .data
        .corpus
        .clone()
        .ok_or_else(|| CliError::Config("no corpus (use --corpus or data.corpus)".into()))?;
    let sentences = split_sentences(&read_text(&corpus)?);
    let vocab = vocab_for(&cfg, &sentences)?;
    cfg.encoder.vocab_size = vocab.len();
    cfg.pretrain.validate()?;
    let examples = build_pretrain_set(&sentences, &vocab, cfg.pretrain.max_len, &cfg.encoder, seed)?;
    let mut model = Encoder::<f32>::new(cfg.encoder.clone(), seed)?;
    let t_setup = t0.elapsed().as_secs_f64();
    let history = encoder::pretrain(&mut model, &examples, &cfg.pretrain, seed, opts.exec, |_, _| {})?;
    let t_train = t0.elapsed().as_secs_f64() - t_setup;

    let mut log = String::from("step,mlm,nsp,total\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(log, "{},{},{},{}", i + 1, l.mlm, l.nsp, l.total);
    }
    model
        .to_checkpoint(&vocab, cfg.tokenizer.window(), seed)
        .save(&out.join("model.ckpt"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&out.join("vocab.txt"), vocab.to_text())?;
    write(&out.join("pretrain_log.csv"), log)?;
    cfg.save(&out.join("config.toml"))?;
    write(
        &out.join("timing.csv"),
        timing_csv(&[("setup", t_setup), ("train", t_train), ("total", t0.elapsed().as_secs_f64())]),
    )?;
    Ok(PretrainSummary { out_dir: out, history })
}

#[derive(Debug, Clone, Default)]
pub struct FinetuneOptions {
    pub config: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub rank: Option<usize>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub base: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_steps: Option<u64>,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct FinetuneSummary {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report: FitReport,
}

/// Train/validation parts of a dataset under the run's fractions.
fn training_parts(ds: &Dataset, cfg: &RunConfig, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    cfg.check_fractions()?;
    let train = if cfg.data.train_fraction >= 1.0 {
        ds.clone()
    } else {
        dataset::split(ds, cfg.data.train_fraction, seed)?.0
    };
    if cfg.data.validation_fraction > 0.0 {
        Ok(dataset::split(&train, 1.0 - cfg.data.validation_fraction, seed)?)
    } else {
        Ok((train, Dataset::default()))
    }
}

fn dataset_texts(ds: &Dataset) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut texts = Vec::new();
    for ex in &ds.examples {
        if seen.insert(ex.context_id.as_str()) {
            texts.push(ex.context.to_string());
        }
        texts.push(ex.question.clone());
    }
    texts
}

fn train_log(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,steps\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.steps);
    }
    s
}

/// Span fine-tuning in either mode. SFT writes `model.ckpt`; LoRA writes
/// `adapter.ckpt` holding only adapters and span heads. Both write
/// `train_log.csv`, `timing.csv` and the resolved `config.toml`.
pub fn finetune(opts: FinetuneOptions) -> Result<FinetuneSummary, CliError> {
    let t0 = Instant::now();
    let mut cfg = RunConfig::load_or_default(opts.config.as_deref())?;
    let seed = cfg.resolve_seed(opts.seed)?;
    if let Some(m) = opts.mode {
        cfg.finetune.mode = m;
    }
    if let Some(r) = opts.rank {
        cfg.finetune.lora_rank = r;
    }
    if let Some(d) = opts.data {
        cfg.data.path = Some(d);
    }
    if let Some(b) = opts.base {
        cfg.model.base = Some(b);
    }
    if let Some(v) = opts.vocab {
        cfg.tokenizer.vocab = Some(v);
    }
    if opts.max_steps.is_some() {
        cfg.finetune.max_steps = opts.max_steps;
    }
    cfg.finetune.validate()?;
    cfg.check_fractions()?;
    let mode = cfg.finetune.mode;
    if mode == Mode::Lora && cfg.model.base.is_none() {
        return Err(CliError::Config("lora mode needs a base checkpoint (--base)".into()));
    }
    let data_path = cfg
        .data
        .path
        .clone()
        .ok_or_else(|| CliError::Config("no dataset (use --data or data.path)".into()))?;
    let out = prepare_out_dir(opts.out, &mut cfg)?;
    let ds = Dataset::load(&data_path, cfg.data.strict)?;
    if ds.is_empty() {
        return Err(CliError::Data(format!("{} holds no examples", data_path.display())));
    }
    let (train, val) = training_parts(&ds, &cfg, seed)?;

    let (mut model, vocab) = match &cfg.model.base {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let model = Encoder::from_checkpoint(&ck)?;
            cfg.encoder = ck.meta.encoder.clone();
            cfg.tokenizer.max_len = ck.meta.window.max_len;
            cfg.tokenizer.stride = ck.meta.window.stride;
            (model, Vocabulary::from_pieces(ck.meta.vocab.clone())?)
        }
        None => {
            let vocab = vocab_for(&cfg, &dataset_texts(&ds))?;
            cfg.encoder.vocab_size = vocab.len();
            (Encoder::<f32>::new(cfg.encoder.clone(), seed)?, vocab)
        }
    };
    let window = cfg.tokenizer.window();
    if window.max_len > cfg.encoder.max_positions {
        return Err(CliError::Config(format!(
            "window length {} exceeds encoder max_positions {}",
            window.max_len, cfg.encoder.max_positions
        )));
    }
    let (adapters, state) = match mode {
        Mode::Sft => {
            prepare_sft(&mut model)?;
            (Vec::new(), None)
        }
        Mode::Lora => {
            let st = inject_lora(&mut model, &cfg.finetune)?;
            (st.adapters.clone(), Some(st))
        }
    };
    let train_items = build_train_windows(&train, &vocab, window)?;
    let val_items = build_train_windows(&val, &vocab, window)?;
    let t_setup = t0.elapsed().as_secs_f64();

    let mut trainer = Trainer::new(model, cfg.finetune.clone(), adapters, opts.exec)?;
    let report = fit(&mut trainer, &train_items, &val_items, |_| {})?;
    let t_train = t0.elapsed().as_secs_f64() - t_setup;

    let (checkpoint, ck) = match &state {
        None => (out.join("model.ckpt"), trainer.model.to_checkpoint(&vocab, window, seed)),
        Some(st) => (
            out.join("adapter.ckpt"),
            adapter_checkpoint(&trainer.model, st, &vocab, window, seed),
        ),
    };
    ck.save(&checkpoint).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&out.join("train_log.csv"), train_log(&report.epochs))?;
    cfg.save(&out.join("config.toml"))?;
    write(
        &out.join("timing.csv"),
        timing_csv(&[("setup", t_setup), ("train", t_train), ("total", t0.elapsed().as_secs_f64())]),
    )?;
    Ok(FinetuneSummary {
        out_dir: out,
        checkpoint,
        report,
    })
}

pub struct LoadedModel {
    pub model: Encoder<f32>,
    pub vocab: Vocabulary,
    pub window: WindowConfig,
    /// `full` or `lora-r{rank}`.
    pub tag: String,
}

/// A full checkpoint, optionally with an adapter trained on it.
pub fn load_model(model: &Path, adapter: Option<&Path>) -> Result<LoadedModel, CliError> {
    let base = load_checkpoint(model)?;
    if base.meta.kind != CheckpointKind::Full {
        return Err(CliError::Checkpoint(format!(
            "{} is an adapter checkpoint; pass it with --adapter",
            model.display()
        )));
    }
    let vocab = Vocabulary::from_pieces(base.meta.vocab.clone()).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let (model, window, tag) = match adapter {
        None => (Encoder::from_checkpoint(&base)?, base.meta.window, "full".to_string()),
        Some(p) => {
            let ad = load_checkpoint(p)?;
            let (m, st) = load_with_adapter(&base, &ad)?;
            (m, ad.meta.window, format!("lora-r{}", st.rank))
        }
    };
    Ok(LoadedModel {
        model,
        vocab,
        window,
        tag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSplit {
    Train,
    #[default]
    Test,
    All,
}

impl std::str::FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::All),
            _ => Err(format!("unknown split {s:?}; expected train, test or all")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub model: PathBuf,
    pub adapter: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: EvalSplit,
    pub seed: Option<u64>,
    pub tag: Option<String>,
    pub exec: Exec,
}

/// Scores a checkpoint on one split. The split is recomputed from the
/// configured seed and train fraction, so it matches the training run.
pub fn eval(opts: EvalOptions) -> Result<(DomainReport, Vec<Prediction>), CliError> {
    let mut cfg = RunConfig::load_or_default(opts.config.as_deref())?;
    let seed = cfg.resolve_seed(opts.seed)?;
    cfg.check_fractions()?;
    let loaded = load_model(&opts.model, opts.adapter.as_deref())?;
    let data_path = opts
        .data
        .or(cfg.data.path.clone())
        .ok_or_else(|| CliError::Config("no dataset (use --data or data.path)".into()))?;
    let ds = Dataset::load(&data_path, cfg.data.strict)?;
    let part = match (opts.split, cfg.data.train_fraction >= 1.0) {
        (EvalSplit::All, _) | (EvalSplit::Train, true) => ds,
        (EvalSplit::Test, true) => Dataset::default(),
        (EvalSplit::Train, false) => dataset::split(&ds, cfg.data.train_fraction, seed)?.0,
        (EvalSplit::Test, false) => dataset::split(&ds, cfg.data.train_fraction, seed)?.1,
    };
    if part.is_empty() {
        return Err(CliError::Data("the selected split is empty".into()));
    }
    let tag = opts.tag.unwrap_or(loaded.tag);
    Ok(evalkit::evaluate(
        &loaded.model,
        &loaded.vocab,
        &part,
        loaded.window,
        cfg.decode,
        &tag,
        opts.exec,
    )?)
}

#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    pub model: PathBuf,
    pub adapter: Option<PathBuf>,
    pub question: String,
    pub context: String,
    pub decode: DecodeConfig,
}

pub fn predict(opts: PredictOptions) -> Result<Prediction, CliError> {
    let loaded = load_model(&opts.model, opts.adapter.as_deref())?;
    Ok(evalkit::predict(
        &loaded.model,
        &loaded.vocab,
        "cli",
        &opts.question,
        &opts.context,
        loaded.window,
        opts.decode,
    )?)
}

/// Loads leniently and reports every problem; fails with a data error if
/// there is any.
pub fn data_validate(path: &Path) -> Result<usize, CliError> {
    let text = read_text(path)?;
    let doc: dataset::Document = serde_json::from_str(&text).map_err(|e| CliError::Data(e.to_string()))?;
    let v = doc.validate(false);
    if v.issues.is_empty() {
        Ok(v.dataset.len())
    } else {
        let list: Vec<String> = v.issues.iter().map(|i| i.to_string()).collect();
        Err(CliError::Data(format!(
            "{} invalid record(s):\n  {}",
            list.len(),
            list.join("\n  ")
        )))
    }
}

/// Writes `train.json` and `test.json` into `out`.
pub fn data_split(path: &Path, out: &Path, fraction: f64, seed: Option<u64>) -> Result<(usize, usize), CliError> {
    let seed = super::resolve_seed(seed, None)?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Config(format!("fraction {fraction} outside (0, 1)")));
    }
    let ds = Dataset::load(path, true)?;
    let (train, test) = dataset::split(&ds, fraction, seed)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write(&out.join("train.json"), train.to_json())?;
    write(&out.join("test.json"), test.to_json())?;
    Ok((train.len(), test.len()))
}

/// Near-duplicate filtering; optionally writes the kept dataset.
pub fn data_dedup(path: &Path, threshold: f64, out: Option<&Path>) -> Result<DedupResult, CliError> {
    let ds = Dataset::load(path, true)?;
    let r = dataset::dedup(&ds, threshold).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(o) = out {
        write(o, r.kept.to_json())?;
    }
    Ok(r)
}

fn read_labels(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Agreement between two label files, one label per line.
pub fn data_kappa(a: &Path, b: &Path) -> Result<f64, CliError> {
    let (la, lb) = (read_labels(a)?, read_labels(b)?);
    dataset::cohen_kappa(&la, &lb).map_err(|e| CliError::Data(e.to_string()))
}

pub fn data_report(path: &Path) -> Result<SubdomainReport, CliError> {
    Ok(dataset::subdomain_report(&Dataset::load(path, true)?))
}
