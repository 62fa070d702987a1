//! Command-line surface. Exit code 0 on success, 1 on usage errors and 2 on
//! data, configuration or I/O errors.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::corpus::{
    encode_segment, format_corpus, format_seed_lexicon, generate_synthetic_corpus, load_corpus,
    load_embeddings, load_seed_lexicon, load_stopwords, split_line, write_embeddings, Segment,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, export_vectors, format_confusion_csv, format_metrics, format_predictions_csv,
    format_predictions_jsonl, predict_segments,
};
use crate::model::AspectModel;
use crate::training::{format_loss_csv, train, TrainConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hdae", version, about = "Seed-guided hyperbolic aspect extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write it with its loss log to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// One segment per line, optionally prefixed by `label<TAB>`.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// `aspect<TAB>seed,seed,...` per line.
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Score a model on a labeled corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labeled_corpus: PathBuf,
        #[arg(long)]
        per_aspect: bool,
        /// Drop segments whose gold label is the general aspect.
        #[arg(long)]
        exclude_general: bool,
        /// Also write the confusion matrix as CSV.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Predict aspects for every line of a file, or stdin with `-`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: String,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Write segment vectors as CSV.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with embeddings and seeds.
    Synth {
        /// `key = value` overrides of the default generator settings.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            corpus,
            embeddings,
            seeds,
            out: dir,
            stopwords,
        } => {
            let cfg = TrainConfig::from_kv(&read_text(&config)?, &config)?;
            let (vocab, table) = load_embeddings(&embeddings)?;
            let lexicon = load_seed_lexicon(&seeds, &vocab)?;
            let stop = stopwords.as_deref().map(load_stopwords).transpose()?;
            let segments = load_corpus(&corpus, &vocab, &lexicon, stop.as_ref())?;
            let run = train(&cfg, vocab, table, lexicon, &segments)?;
            create_dir(&dir)?;
            let ck = Checkpoint::new(run.model, Some(cfg.clone()), Some(run.teacher));
            ck.save(&dir.join("model.json"))?;
            write_file(&dir.join("losses.csv"), &format_loss_csv(&run.reports))?;
            write_file(&dir.join("config.txt"), &cfg.to_kv())?;
            if let Some(last) = run.reports.last() {
                emit(out, &format!("final_loss {:.6}\n", last.total))?;
            }
            Ok(())
        }
        Command::Eval {
            model,
            labeled_corpus,
            per_aspect,
            exclude_general,
            confusion,
        } => {
            let m = Checkpoint::load(&model)?.model;
            let segments = load_corpus(&labeled_corpus, &m.vocab, &m.lexicon, None)?;
            if segments.iter().all(|s| s.label.is_none()) {
                return Err(Error::Data(format!(
                    "{}: no labeled segments",
                    labeled_corpus.display()
                )));
            }
            let report = evaluate(&m, &segments, exclude_general)?;
            emit(out, &format_metrics(&report, m.lexicon.names(), per_aspect))?;
            if let Some(path) = confusion {
                write_file(&path, &format_confusion_csv(&report, m.lexicon.names()))?;
            }
            Ok(())
        }
        Command::Predict {
            model,
            input,
            format,
        } => {
            let m = Checkpoint::load(&model)?.model;
            let (text, origin) = if input == "-" {
                let mut s = String::new();
                std::io::stdin()
                    .read_to_string(&mut s)
                    .map_err(|e| Error::io(Path::new("<stdin>"), e))?;
                (s, PathBuf::from("<stdin>"))
            } else {
                let p = PathBuf::from(&input);
                (read_text(&p)?, p)
            };
            let segments = parse_prediction_input(&text, &origin, &m)?;
            let records = predict_segments(&m, &segments)?;
            let rendered = match format {
                Format::Csv => format_predictions_csv(&records, m.lexicon.names()),
                Format::Jsonl => format_predictions_jsonl(&records)?,
            };
            emit(out, &rendered)
        }
        Command::Export {
            model,
            corpus,
            out: path,
        } => {
            let m = Checkpoint::load(&model)?.model;
            let segments = load_corpus(&corpus, &m.vocab, &m.lexicon, None)?;
            export_vectors(&m, &segments, &path)
        }
        Command::Synth { spec, seed, out: dir } => {
            let spec = match spec {
                Some(p) => SyntheticSpec::from_kv(&read_text(&p)?, &p)?,
                None => SyntheticSpec::default(),
            };
            let c = generate_synthetic_corpus(&spec, seed)?;
            create_dir(&dir)?;
            write_embeddings(&dir.join("embeddings.txt"), &c.vocab, &c.embeddings)?;
            write_file(&dir.join("seeds.tsv"), &format_seed_lexicon(&c.lexicon, &c.vocab))?;
            for (name, part) in [
                ("train.txt", &c.dataset.train),
                ("validation.txt", &c.dataset.validation),
                ("test.txt", &c.dataset.test),
            ] {
                write_file(&dir.join(name), &format_corpus(part, &c.vocab, &c.lexicon))?;
            }
            Ok(())
        }
    }
}

/// Every non-blank line becomes one segment; a line with no known word is an
/// error so that output rows line up with input lines.
fn parse_prediction_input(text: &str, origin: &Path, m: &AspectModel) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw = split_line(line);
        let label = match raw.label {
            Some(l) => Some(m.lexicon.aspect_index(l).ok_or_else(|| {
                Error::parse(origin, lineno + 1, format!("unknown aspect label {l:?}"))
            })?),
            None => None,
        };
        let tokens = encode_segment(raw.text, &m.vocab, None)
            .map_err(|_| Error::parse(origin, lineno + 1, "no in-vocabulary tokens"))?;
        out.push(Segment {
            id: out.len(),
            tokens,
            label,
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no segments", origin.display())));
    }
    Ok(out)
}
