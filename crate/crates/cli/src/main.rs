use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spanforge::cli::{self, CliError, EvalOptions, EvalSplit, FinetuneOptions, PredictOptions, PretrainOptions};
use spanforge::finetune::Mode;
use spanforge::Exec;

/// Extractive question answering: vocabularies, toy pretraining, SFT and
/// LoRA span fine-tuning, evaluation and dataset utilities.
#[derive(Parser)]
#[command(name = "spanforge", version)]
struct Cli {
    /// Run per-example work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a subword vocabulary on a text file (one passage per line).
    Vocab {
        corpus: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-LM pretraining of a small encoder on a text corpus.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune span heads with full updates (sft) or adapters (lora).
    Finetune {
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full checkpoint to start from; required for lora.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Per-subdomain F1, BLEU and ROUGE-L of a checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// train, test or all.
        #[arg(long, default_value = "test")]
        split: EvalSplit,
        #[arg(long)]
        seed: Option<u64>,
        /// Model label used in the report rows.
        #[arg(long)]
        tag: Option<String>,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write per-example predictions as JSON.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Answer one question about one context.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long)]
        question: String,
        #[arg(long)]
        context: String,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Check every record and list the invalid ones.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Stratified split into train.json and test.json.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Drop near-duplicate questions within each context.
    Dedup {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        threshold: f64,
        /// Where to write the kept examples.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cohen's kappa between two label files.
    Kappa { a: PathBuf, b: PathBuf },
    /// Pair counts per subdomain and provenance.
    Report {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn write_file(path: &PathBuf, text: String) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn run(args: Cli) -> Result<(), CliError> {
    let exec = if args.sequential { Exec::Sequential } else { Exec::default() };
    match args.command {
        Command::Vocab { corpus, size, out } => {
            let v = cli::vocab(&corpus, size, &out)?;
            println!("wrote {} pieces to {}", v.len(), out.display());
        }
        Command::Pretrain {
            config,
            corpus,
            vocab,
            out,
            steps,
            seed,
        } => {
            let s = cli::pretrain(PretrainOptions {
                config,
                corpus,
                vocab,
                out,
                steps,
                seed,
                exec,
            })?;
            if let (Some(first), Some(last)) = (s.history.first(), s.history.last()) {
                println!(
                    "{} steps, loss {:.4} -> {:.4}; outputs in {}",
                    s.history.len(),
                    first.total,
                    last.total,
                    s.out_dir.display()
                );
            }
        }
        Command::Finetune {
            mode,
            rank,
            config,
            data,
            out,
            base,
            vocab,
            seed,
            max_steps,
        } => {
            let s = cli::finetune(FinetuneOptions {
                config,
                mode,
                rank,
                data,
                out,
                base,
                vocab,
                seed,
                max_steps,
                exec,
            })?;
            for e in &s.report.epochs {
                println!(
                    "epoch {} train_loss {:.5} val_loss {:.5} steps {}",
                    e.epoch, e.train_loss, e.val_loss, e.steps
                );
            }
            println!("best epoch {}; wrote {}", s.report.best_epoch, s.checkpoint.display());
        }
        Command::Eval {
            model,
            adapter,
            data,
            config,
            split,
            seed,
            tag,
            json,
            csv,
            predictions,
        } => {
            let (report, preds) = cli::eval(EvalOptions {
                model,
                adapter,
                config,
                data,
                split,
                seed,
                tag,
                exec,
            })?;
            if let Some(p) = csv {
                write_file(&p, report.to_csv())?;
            }
            if let Some(p) = predictions {
                let lines: Vec<String> = preds
                    .iter()
                    .map(|p| format!("{}\t{}", p.id, if p.text.is_empty() { cli::NO_ANSWER } else { &p.text }))
                    .collect();
                write_file(&p, lines.join("\n") + "\n")?;
            }
            if json {
                println!("{}", report.to_json());
            } else {
                println!("{report}");
            }
        }
        Command::Predict {
            model,
            adapter,
            question,
            context,
        } => {
            let p = cli::predict(PredictOptions {
                model,
                adapter,
                question,
                context,
                ..Default::default()
            })?;
            let answer = if p.text.is_empty() { cli::NO_ANSWER } else { p.text.as_str() };
            println!("{answer}\t{}", p.score);
        }
        Command::Data { command } => match command {
            DataCommand::Validate { data } => {
                let n = cli::data_validate(&data)?;
                println!("{n} valid examples");
            }
            DataCommand::Split {
                data,
                out,
                fraction,
                seed,
            } => {
                let (tr, te) = cli::data_split(&data, &out, fraction, seed)?;
                println!("train {tr} / test {te} written to {}", out.display());
            }
            DataCommand::Dedup { data, threshold, out } => {
                let r = cli::data_dedup(&data, threshold, out.as_deref())?;
                println!("kept_id,dropped_id,score");
                for rm in &r.removed {
                    println!("{},{},{}", rm.kept_id, rm.dropped_id, rm.score);
                }
                eprintln!("{} removed, {} kept", r.removed.len(), r.kept.len());
            }
            DataCommand::Kappa { a, b } => {
                println!("{}", cli::data_kappa(&a, &b)?);
            }
            DataCommand::Report { data, csv } => {
                let r = cli::data_report(&data)?;
                if let Some(p) = csv {
                    write_file(&p, r.to_csv())?;
                }
                println!("{r}");
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
