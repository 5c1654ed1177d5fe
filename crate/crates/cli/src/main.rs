use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ecan::corpus::synth::{generate, SynthOptions};
use ecan::corpus::{load_categories, load_corpus, write_categories, write_corpus};
use ecan::model::attention_summary;
use ecan::trainer::checkpoint::{self, write_atomic};
use ecan::trainer::{gradcheck, train};
use ecan::{Error, TrainConfig};

#[derive(Parser)]
#[command(name = "ecan", version, about = "Coherence-aware aspect-category sentiment analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint plus a JSONL log.
    Train(TrainArgs),
    /// Print ACD/ACSC metrics of a checkpoint on a corpus as JSON.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write per-sentence channel attention and pool weights as CSV.
    DumpAttention(DumpArgs),
    /// Write a synthetic corpus and its category list.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Development corpus; a seeded tenth of the training corpus otherwise.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Category list, one name per line (overrides `categories_file`).
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Starts from the tiny configuration when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    review_id: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    categories_out: PathBuf,
    #[arg(long, default_value_t = 32)]
    reviews: usize,
    #[arg(long, default_value_t = 4)]
    categories: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Outcome of a command that ran to completion but may report a failed check.
enum Status {
    Ok,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::DumpAttention(a) => cmd_dump_attention(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = TrainConfig::from_json(&text).with_context(|| format!("config {}", path.display()))?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

/// `m.ckpt` → `m.log.jsonl`.
fn log_path(out: &Path) -> PathBuf {
    out.with_extension("log.jsonl")
}

fn cmd_train(a: TrainArgs) -> Result<Status> {
    let mut cfg = read_config(&a.config, &a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    cfg.validate_bounds()?;
    let cat_path = match (&a.categories, &cfg.categories_file) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => bail!("no category list: pass --categories or set categories_file"),
    };
    println!("{}", cfg.to_json_pretty());
    let categories = load_categories(&cat_path)?;
    let corpus = load_corpus(&a.corpus, &categories)?;
    let dev = a.dev.as_ref().map(|p| load_corpus(p, &categories)).transpose()?;

    let log_every = cfg.log_every;
    let outcome = train(&corpus, dev.as_deref(), categories, &cfg, |r| {
        if log_every > 0 && r.epoch % log_every == 0 {
            eprintln!(
                "epoch {:>4}  l_cl {:.4}  l_acd {:.4}  l_acsc {:.4}  dev {:.4}",
                r.epoch,
                r.l_cl,
                r.l_acd,
                r.l_acsc,
                r.dev.selection_score()
            );
        }
    })?;

    let mut log = Vec::new();
    for r in &outcome.log {
        serde_json::to_writer(&mut log, &r.to_json())?;
        log.push(b'\n');
    }
    write_atomic(&log_path(&a.out), &log)?;
    checkpoint::save(&a.out, &outcome.best)?;
    eprintln!("best epoch {} written to {}", outcome.best_epoch, a.out.display());
    Ok(Status::Ok)
}

fn cmd_eval(a: EvalArgs) -> Result<Status> {
    let state = checkpoint::load(&a.model)?;
    eprintln!("{}", state.config.to_json_pretty());
    let docs = load_corpus(&a.corpus, state.vocab.categories())?;
    let metrics = state.evaluate(&docs)?;
    println!("{}", serde_json::to_string_pretty(&metrics.to_json())?);
    Ok(Status::Ok)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<Status> {
    let cfg = match &a.config {
        Some(p) => read_config(p, &a.overrides)?,
        None => {
            let mut cfg = TrainConfig::tiny();
            for o in &a.overrides {
                cfg.apply_override(o)?;
            }
            cfg
        }
    };
    println!("{}", cfg.to_json_pretty());
    let report = gradcheck(&cfg, a.eps, a.tol)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "loss {:.12}  eps {:e}  tol {:e}", report.loss, report.eps, report.tol)?;
    writeln!(out, "{:<24} {:>9} {:>12} {:>12}  status", "tensor", "shape", "max_abs", "rel_err")?;
    for t in &report.tensors {
        let status = if t.rel_err < report.tol { "ok" } else { "FAIL" };
        writeln!(
            out,
            "{:<24} {:>9} {:>12.3e} {:>12.3e}  {status}",
            t.name,
            format!("{}x{}", t.shape[0], t.shape[1]),
            t.max_abs_err,
            t.rel_err
        )?;
    }
    if report.passed() {
        writeln!(out, "all {} tensors within tolerance", report.tensors.len())?;
        Ok(Status::Ok)
    } else {
        let names: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
        writeln!(out, "{} tensors exceed tolerance: {}", names.len(), names.join(", "))?;
        Ok(Status::CheckFailed)
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn channel_csv(path: &Path, tokens: &[String], channels: &[Vec<f64>]) -> Result<()> {
    let mut header = vec!["token".to_string()];
    header.extend((0..channels.len()).map(|k| format!("channel_{k}")));
    let rows = tokens.iter().enumerate().map(|(i, tok)| {
        let mut row = vec![tok.clone()];
        row.extend(channels.iter().map(|c| c[i].to_string()));
        row
    });
    write_csv(path, &header, rows)
}

fn cmd_dump_attention(a: DumpArgs) -> Result<Status> {
    let state = checkpoint::load(&a.model)?;
    eprintln!("{}", state.config.to_json_pretty());
    let docs = load_corpus(&a.corpus, state.vocab.categories())?;
    let Some(doc) = docs.iter().find(|d| d.review_id == a.review_id) else {
        bail!("unknown review id {:?} in {}", a.review_id, a.corpus.display());
    };
    let summary = attention_summary(&state.config, &state.params, &state.vocab, doc)?;
    for (k, s) in summary.iter().enumerate() {
        let dir = a.out_dir.join(format!("sentence_{k}"));
        fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        if !s.category.is_empty() {
            channel_csv(&dir.join("cat_channels.csv"), &s.tokens, &s.category)?;
        }
        if !s.sentiment.is_empty() {
            channel_csv(&dir.join("sent_channels.csv"), &s.tokens, &s.sentiment)?;
        }
        if !s.alpha.is_empty() {
            let rows = s.alpha.iter().enumerate().map(|(j, v)| vec![format!("channel_{j}"), v.to_string()]);
            write_csv(&dir.join("alpha.csv"), &["channel".into(), "alpha".into()], rows)?;
        }
    }
    eprintln!("{} sentences written to {}", summary.len(), a.out_dir.display());
    Ok(Status::Ok)
}

fn cmd_synth(a: SynthArgs) -> Result<Status> {
    let opts = SynthOptions {
        reviews: a.reviews,
        categories: a.categories,
        seed: a.seed,
        ..SynthOptions::default()
    };
    let (categories, docs) = generate(&opts);
    write_corpus(&a.out, &docs, &categories)?;
    write_categories(&a.categories_out, &categories)?;
    Ok(Status::Ok)
}
