use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crossaug::harness::io::{read_pairs, read_vocab, write_jsonl, write_pairs, write_vocab};
use crossaug::harness::{
    align_pairs, decode, evaluate, generate_dataset, gradcheck, pseudo_pairs, run_ablation, train, AblationGrid,
    SyntheticConfig, TrainConfig,
};
use crossaug::model::Checkpoint;
use crossaug::{Error, Result};

#[derive(Parser)]
#[command(name = "crossaug", version, about = "Cross-modal augmentation toolkit for CTC recognizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus: train.jsonl, test.jsonl and vocab.json.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on <data>/train.jsonl, writing checkpoints and logs into <out>.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus metrics of a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        beam: usize,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print ranked beam-search candidates for every video in a dataset file.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        beam: usize,
    },
    /// Write one pseudo pair per input pair. Segments come from the
    /// checkpoint's forced alignment when given, else from the file.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, required_unless_present = "checkpoint")]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        max_edits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of the full objective.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 20)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Train and evaluate once per value of a λ, K or mode grid.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::GenData { config, seed, out } => {
            let mut cfg: SyntheticConfig = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = generate_dataset(&cfg)?;
            fs::create_dir_all(&out)?;
            write_pairs(out.join("train.jsonl"), &ds.train, &ds.vocabulary)?;
            write_pairs(out.join("test.jsonl"), &ds.test, &ds.vocabulary)?;
            write_vocab(out.join("vocab.json"), &ds.vocabulary)?;
            write_json(&out.join("synthetic.json"), &cfg)?;
            print_json(&json!({ "train": ds.train.len(), "test": ds.test.len(), "glosses": ds.vocabulary.len() }))?;
        }
        Command::Train { config, seed, data, out } => {
            let mut cfg: TrainConfig = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let vocab = read_vocab(data.join("vocab.json"))?;
            let pairs = read_pairs(data.join("train.jsonl"), &vocab)?;
            let outcome = train(&cfg, &pairs, &vocab, Some(&out))?;
            let meta = json!({ "epoch": cfg.epochs.saturating_sub(1), "train": cfg });
            Checkpoint::new(outcome.params.clone(), vocab, cfg.seed, meta).save(out.join("model.ckpt"))?;
            write_jsonl(io::BufWriter::new(fs::File::create(out.join("steps.jsonl"))?), &outcome.steps)?;
            write_jsonl(io::BufWriter::new(fs::File::create(out.join("epochs.jsonl"))?), &outcome.epochs)?;
            print_json(&json!({
                "epochs": outcome.epochs.len(),
                "steps": outcome.steps.len(),
                "non_convergent": outcome.non_convergent,
                "final_ctc_real": outcome.epochs.last().map(|e| e.ctc_real),
            }))?;
        }
        Command::Eval { checkpoint, data, beam, k_max, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let pairs = read_pairs(&data, &ckpt.header.vocabulary)?;
            let report = evaluate(&ckpt.params, &pairs, beam, k_max)?;
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            print_json(&report)?;
        }
        Command::Decode { checkpoint, data, beam } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let vocab = &ckpt.header.vocabulary;
            let pairs = read_pairs(&data, vocab)?;
            for pair in &pairs {
                for (rank, c) in decode(&ckpt.params, &pair.features, beam)?.iter().enumerate() {
                    print_json(&json!({
                        "id": pair.id,
                        "rank": rank + 1,
                        "log_prob": c.log_prob,
                        "glosses": vocab.decode(&c.sequence),
                    }))?;
                }
            }
        }
        Command::Augment { data, checkpoint, vocab, max_edits, seed, out } => {
            let (vocab, params) = match &checkpoint {
                Some(p) => {
                    let c = Checkpoint::load(p)?;
                    (c.header.vocabulary, Some(c.params))
                }
                None => (read_vocab(vocab.as_deref().expect("clap requires --vocab"))?, None),
            };
            let pairs = read_pairs(&data, &vocab)?;
            let aligned = match &params {
                Some(p) => align_pairs(p, &pairs)?,
                None => pairs,
            };
            let generated: Vec<_> = pseudo_pairs(&aligned, max_edits, seed, 0)?.into_iter().flatten().collect();
            write_pairs(&out, &generated, &vocab)?;
            print_json(&json!({ "input": aligned.len(), "generated": generated.len() }))?;
        }
        Command::Gradcheck { instances, probes, seed, tolerance } => {
            let report = gradcheck(instances, probes, seed, tolerance)?;
            print_json(&report)?;
            if !report.passed {
                emit_error(
                    "gradcheck",
                    &format!("max relative error {} exceeds {}", report.max_rel_error, report.tolerance),
                );
                return Ok(false);
            }
        }
        Command::Ablate { config, grid, data, k_max, out } => {
            let cfg: TrainConfig = read_config(config.as_deref())?;
            let grid: AblationGrid = read_config_required(&grid)?;
            let vocab = read_vocab(data.join("vocab.json"))?;
            let train_set = read_pairs(data.join("train.jsonl"), &vocab)?;
            let test_set = read_pairs(data.join("test.jsonl"), &vocab)?;
            let table = run_ablation(&cfg, &grid, &train_set, &test_set, &vocab, k_max)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                write_json(&dir.join("ablation.json"), &table)?;
                fs::write(dir.join("ablation.txt"), table.to_text())?;
            }
            print_json(&table)?;
        }
    }
    Ok(true)
}

fn read_config_required<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn emit_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            emit_error(e.kind(), &e.to_string());
            ExitCode::from(1)
        }
    }
}
