//! `ecorag` command line: mine → train-encoder → train-evaluator → compress → bench.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error. Errors are
//! printed to stderr as one JSON object.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use ecorag::compressor::{compress_dataset, CompressError};
use ecorag::corpus::{load_dataset, QuestionRecord};
use ecorag::encoder::{load_model, save_model, train, EncoderModel};
use ecorag::evaluator::{
    build_trainset, load_classifier, save_classifier, train_evaluator, ClassifierEvaluator,
    Evaluator, EvaluatorError, OracleEvaluator, ThresholdEvaluator,
};
use ecorag::harness::{comparison_table, run_benchmark, write_reports, BenchOptions, Components, StrategyKind};
use ecorag::io::{write_json, write_jsonl};
use ecorag::miner::{mine_dataset, MinedDataset};
use ecorag::oracle::{CachedOracle, HttpConfig, HttpOracle, Oracle, ScriptedOracle, ScriptedOracleTable};
use serde_json::{json, Value};

use config::{BenchSettings, EvaluatorKind, OracleMode, RunConfig};

#[derive(Parser)]
#[command(name = "ecorag", version, about = "Evidentiality-guided context compression")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Rest {
    /// --config PATH, then --key value overrides
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "ARGS")]
    args: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Label every retrieved sentence strong / weak / distractor with the oracle
    Mine(Rest),
    /// Train the dual encoder on mined labels
    TrainEncoder(Rest),
    /// Train the evidentiality classifier on top of a trained encoder
    TrainEvaluator(Rest),
    /// Compress every question's context adaptively
    Compress(Rest),
    /// Run compression strategies end to end and write reports
    Bench(Rest),
}

enum Failure {
    Config(Vec<String>),
    Runtime { message: String, details: Value },
}

impl Failure {
    fn runtime(message: impl std::fmt::Display) -> Self {
        Failure::Runtime {
            message: message.to_string(),
            details: Value::Null,
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let help = config::key_listing();
    let mut cmd = Args::command();
    for name in ["mine", "train-encoder", "train-evaluator", "compress", "bench"] {
        cmd = cmd.mut_subcommand(name, |s| s.after_long_help(help.clone()));
    }
    let args = match Args::from_arg_matches(&cmd.get_matches()) {
        Ok(a) => a,
        Err(e) => e.exit(),
    };
    let (run, rest): (fn(&RunConfig, &BenchSettings) -> Outcome, Rest) = match args.command {
        Command::Mine(r) => (cmd_mine, r),
        Command::TrainEncoder(r) => (cmd_train_encoder, r),
        Command::TrainEvaluator(r) => (cmd_train_evaluator, r),
        Command::Compress(r) => (cmd_compress, r),
        Command::Bench(r) => (cmd_bench, r),
    };
    let outcome = config::parse_args(&rest.args)
        .and_then(|cli| config::resolve(&cli))
        .map_err(Failure::Config)
        .and_then(|(cfg, bench)| {
            if cfg.workers > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build_global()
                    .map_err(Failure::runtime)?;
            }
            run(&cfg, &bench)
        });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(errors)) => {
            eprintln!("{}", json!({"error": "config", "messages": errors}));
            ExitCode::from(2)
        }
        Err(Failure::Runtime { message, details }) => {
            let mut out = json!({"error": "runtime", "message": message});
            if let Value::Object(extra) = details {
                out.as_object_mut().expect("object").extend(extra);
            }
            eprintln!("{out}");
            ExitCode::from(3)
        }
    }
}

/// Precondition checks that run before any work; all problems at once.
#[derive(Default)]
struct Checks(Vec<String>);

impl Checks {
    fn file(&mut self, key: &str, path: Option<&Path>) {
        match path {
            None => self.0.push(format!("{key} is required")),
            Some(p) if !p.is_file() => self.0.push(format!("{key}: {} does not exist", p.display())),
            Some(_) => {}
        }
    }

    fn oracle(&mut self, cfg: &RunConfig) {
        match cfg.oracle.mode {
            OracleMode::Scripted => self.file("paths.oracle_script", cfg.paths.oracle_script.as_deref()),
            OracleMode::Http => {
                if cfg.oracle.base_url.is_none() {
                    self.0.push("oracle.base_url is required for the http oracle".into());
                }
                if cfg.oracle.model.is_none() {
                    self.0.push("oracle.model is required for the http oracle".into());
                }
            }
        }
    }

    fn done(self) -> Outcome {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Failure::Config(self.0))
        }
    }
}

fn dataset_path(cfg: &RunConfig) -> &Path {
    cfg.paths.dataset.as_deref().expect("checked")
}

fn records(cfg: &RunConfig) -> Result<Vec<QuestionRecord>, Failure> {
    let data = load_dataset(dataset_path(cfg), !cfg.lenient).map_err(Failure::runtime)?;
    if !data.skipped.is_empty() {
        log::warn!("skipped {} malformed dataset lines", data.skipped.len());
    }
    Ok(data.records)
}

fn labels(cfg: &RunConfig) -> Result<MinedDataset, Failure> {
    MinedDataset::read_jsonl(&cfg.paths.labels).map_err(Failure::runtime)
}

fn encoder(cfg: &RunConfig) -> Result<EncoderModel, Failure> {
    load_model(&cfg.paths.encoder)
        .map_err(|e| Failure::runtime(format!("{}: {e}", cfg.paths.encoder.display())))
}

fn oracle(cfg: &RunConfig) -> Result<CachedOracle<Box<dyn Oracle>>, Failure> {
    let inner: Box<dyn Oracle> = match cfg.oracle.mode {
        OracleMode::Scripted => {
            let path = cfg.paths.oracle_script.as_deref().expect("checked");
            let text = std::fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
            let table: ScriptedOracleTable = serde_json::from_str(&text)
                .map_err(|e| Failure::Config(vec![format!("{}: {e}", path.display())]))?;
            Box::new(ScriptedOracle::new(table))
        }
        OracleMode::Http => {
            let o = &cfg.oracle;
            let mut http = HttpConfig::new(
                o.base_url.clone().expect("checked"),
                o.model.clone().expect("checked"),
            );
            http.timeout = Duration::from_secs_f64(o.timeout_secs);
            http.max_in_flight = o.max_in_flight;
            http.attempts = o.attempts;
            http.backoff = Duration::from_millis(o.backoff_ms);
            Box::new(HttpOracle::new(http))
        }
    };
    match &cfg.paths.cache {
        None => Ok(CachedOracle::in_memory(inner)),
        Some(path) => CachedOracle::open(inner, path)
            .map_err(|e| Failure::runtime(format!("cache {}: {e}", path.display()))),
    }
}

/// `foo/labels.jsonl` → `foo/labels.<suffix>`
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn write<T: serde::Serialize>(path: &Path, value: &T) -> Outcome {
    write_json(path, value).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn cmd_mine(cfg: &RunConfig, _: &BenchSettings) -> Outcome {
    let mut checks = Checks::default();
    checks.file("paths.dataset", cfg.paths.dataset.as_deref());
    checks.oracle(cfg);
    checks.done()?;

    let records = records(cfg)?;
    let oracle = oracle(cfg)?;
    let (mined, stats) = mine_dataset(&records, &oracle, &cfg.miner, &cfg.tokenizer);
    mined
        .write_jsonl(&cfg.paths.labels)
        .map_err(|e| Failure::runtime(format!("{}: {e}", cfg.paths.labels.display())))?;
    write(&sidecar(&cfg.paths.labels, "stats.json"), &stats)?;
    println!(
        "{}",
        json!({
            "labels": cfg.paths.labels,
            "questions": stats.questions,
            "trainable": stats.trainable,
            "oracle_calls": stats.total_calls,
            "cache_misses": stats.cache_misses,
        })
    );
    if !stats.failures.is_empty() {
        return Err(Failure::Runtime {
            message: format!("{} questions failed to mine", stats.failures.len()),
            details: json!({"failures": stats.failures}),
        });
    }
    Ok(())
}

fn cmd_train_encoder(cfg: &RunConfig, _: &BenchSettings) -> Outcome {
    let mut checks = Checks::default();
    checks.file("paths.dataset", cfg.paths.dataset.as_deref());
    checks.file("paths.labels", Some(&cfg.paths.labels));
    checks.done()?;

    let records = records(cfg)?;
    let mined = labels(cfg)?;
    let (model, report) = train(&mined, &records, &cfg.encoder, &cfg.tokenizer).map_err(Failure::runtime)?;
    save_model(&model, &cfg.paths.encoder)
        .map_err(|e| Failure::runtime(format!("{}: {e}", cfg.paths.encoder.display())))?;
    write(&sidecar(&cfg.paths.encoder, "report.json"), &report)?;
    println!(
        "{}",
        json!({
            "encoder": cfg.paths.encoder,
            "fingerprint": report.fingerprint,
            "trainable_questions": report.trainable_questions,
            "losses": report.losses(),
        })
    );
    Ok(())
}

fn cmd_train_evaluator(cfg: &RunConfig, _: &BenchSettings) -> Outcome {
    let mut checks = Checks::default();
    checks.file("paths.dataset", cfg.paths.dataset.as_deref());
    checks.file("paths.labels", Some(&cfg.paths.labels));
    checks.file("paths.encoder", Some(&cfg.paths.encoder));
    checks.done()?;

    let records = records(cfg)?;
    let mined = labels(cfg)?;
    let encoder = encoder(cfg)?;
    let ev = &cfg.evaluator;
    let set = build_trainset(&mined, &records, &encoder, ev.negative_ratio, &cfg.tokenizer, ev.augment)
        .map_err(Failure::runtime)?;
    let (clf, report) = train_evaluator(&set, &encoder, &cfg.tokenizer, &ev.train).map_err(Failure::runtime)?;
    save_classifier(&clf, &cfg.paths.evaluator)
        .map_err(|e| Failure::runtime(format!("{}: {e}", cfg.paths.evaluator.display())))?;
    write(&sidecar(&cfg.paths.evaluator, "report.json"), &report)?;
    println!(
        "{}",
        json!({
            "evaluator": cfg.paths.evaluator,
            "positives": report.positives,
            "negatives": report.negatives,
            "shortfall": set.shortfall,
            "train_accuracy": report.train_accuracy,
        })
    );
    Ok(())
}

fn mismatch(evaluator: String, encoder: String) -> Failure {
    Failure::Runtime {
        message: format!("evaluator was trained on encoder {evaluator}, but the loaded encoder is {encoder}"),
        details: json!({"evaluator_fingerprint": evaluator, "encoder_fingerprint": encoder}),
    }
}

fn evaluator_error(e: EvaluatorError) -> Failure {
    match e {
        EvaluatorError::FingerprintMismatch { evaluator, encoder } => mismatch(evaluator, encoder),
        e => Failure::runtime(e),
    }
}

fn check_evaluator(cfg: &RunConfig, checks: &mut Checks) {
    match cfg.evaluator.kind {
        EvaluatorKind::Classifier => checks.file("paths.evaluator", Some(&cfg.paths.evaluator)),
        EvaluatorKind::Oracle => checks.oracle(cfg),
        EvaluatorKind::Threshold => {}
    }
}

fn build_evaluator<'a>(
    cfg: &RunConfig,
    encoder: &Arc<EncoderModel>,
    oracle: Option<&'a dyn Oracle>,
) -> Result<Box<dyn Evaluator + 'a>, Failure> {
    Ok(match cfg.evaluator.kind {
        EvaluatorKind::Classifier => {
            let clf = load_classifier(&cfg.paths.evaluator, encoder).map_err(evaluator_error)?;
            Box::new(ClassifierEvaluator::new(clf, encoder.clone(), cfg.tokenizer).map_err(evaluator_error)?)
        }
        EvaluatorKind::Oracle => Box::new(
            OracleEvaluator::new(oracle.expect("oracle built"), cfg.miner.match_mode).with_judge(cfg.evaluator.judge),
        ),
        EvaluatorKind::Threshold => Box::new(ThresholdEvaluator::new(encoder.clone(), cfg.evaluator.threshold)),
    })
}

fn cmd_compress(cfg: &RunConfig, _: &BenchSettings) -> Outcome {
    let mut checks = Checks::default();
    checks.file("paths.dataset", cfg.paths.dataset.as_deref());
    checks.file("paths.encoder", Some(&cfg.paths.encoder));
    check_evaluator(cfg, &mut checks);
    checks.done()?;

    let records = records(cfg)?;
    let encoder = Arc::new(encoder(cfg)?);
    let oracle = match cfg.evaluator.kind {
        EvaluatorKind::Oracle => Some(oracle(cfg)?),
        _ => None,
    };
    let evaluator = build_evaluator(cfg, &encoder, oracle.as_ref().map(|o| o as &dyn Oracle))?;
    let run = compress_dataset(&records, &encoder, evaluator.as_ref(), &cfg.limits, &cfg.tokenizer, !cfg.lenient)
        .map_err(|e| match e {
            CompressError::FingerprintMismatch { evaluator, encoder } => mismatch(evaluator, encoder),
            e => Failure::runtime(e),
        })?;
    let rows: Vec<_> = run.results.iter().map(|r| r.row()).collect();
    write_jsonl(&cfg.paths.compressed, &rows)
        .map_err(|e| Failure::runtime(format!("{}: {e}", cfg.paths.compressed.display())))?;
    write(
        &sidecar(&cfg.paths.compressed, "summary.json"),
        &json!({"summary": run.summary, "failures": run.failures}),
    )?;
    println!("{}", json!({"compressed": cfg.paths.compressed, "summary": run.summary}));
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, bench: &BenchSettings) -> Outcome {
    let kinds: Vec<StrategyKind> = bench.strategies.iter().map(|s| s.kind).collect();
    let needs_encoder = kinds.iter().any(|k| k.needs_encoder());
    let needs_evaluator = kinds.contains(&StrategyKind::EcoragAdaptive);
    let mut checks = Checks::default();
    checks.file("paths.dataset", cfg.paths.dataset.as_deref());
    checks.oracle(cfg);
    if needs_encoder {
        checks.file("paths.encoder", Some(&cfg.paths.encoder));
    }
    if needs_evaluator {
        check_evaluator(cfg, &mut checks);
    }
    checks.done()?;

    let records = records(cfg)?;
    let oracle = oracle(cfg)?;
    let encoder = if needs_encoder { Some(Arc::new(encoder(cfg)?)) } else { None };
    let evaluator = match (&encoder, needs_evaluator) {
        (Some(enc), true) => Some(build_evaluator(cfg, enc, Some(&oracle))?),
        _ => None,
    };
    // labels only feed NDCG, so a missing file just drops that column
    let mined = if cfg.paths.labels.is_file() { Some(labels(cfg)?) } else { None };

    let components = Components {
        encoder: encoder.as_deref(),
        evaluator: evaluator.as_deref(),
        labels: mined.as_ref(),
    };
    let opts = BenchOptions {
        limits: cfg.limits.clone(),
        tokenizer: cfg.tokenizer,
        ndcg_ks: bench.ndcg_ks.clone(),
        record_timing: bench.record_timing,
    };
    let reports =
        run_benchmark(&records, &bench.strategies, &oracle, components, &opts).map_err(Failure::runtime)?;
    write_reports(&cfg.paths.reports, &reports).map_err(Failure::runtime)?;
    print!("{}", comparison_table(&reports));
    Ok(())
}
