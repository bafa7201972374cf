//! Run configuration: built-in defaults, then a JSON file, then dotted flag
//! overrides. Every problem found is reported at once.

use std::path::{Path, PathBuf};

use ecorag::compressor::CompressionLimits;
use ecorag::corpus::TokenizerConfig;
use ecorag::encoder::TrainConfig;
use ecorag::evaluator::{EvalTrainConfig, OracleJudge};
use ecorag::harness::{default_strategies, StrategySpec};
use ecorag::miner::MinerConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    /// Oracle response cache (JSON lines). Unset keeps the cache in memory.
    pub cache: Option<PathBuf>,
    /// Rule table for the scripted oracle.
    pub oracle_script: Option<PathBuf>,
    pub labels: PathBuf,
    pub encoder: PathBuf,
    pub evaluator: PathBuf,
    pub compressed: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: None,
            cache: None,
            oracle_script: None,
            labels: "out/labels.jsonl".into(),
            encoder: "out/encoder.bin".into(),
            evaluator: "out/evaluator.bin".into(),
            compressed: "out/compressed.jsonl".into(),
            reports: "out/reports".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub mode: OracleMode,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            mode: OracleMode::Scripted,
            base_url: None,
            model: None,
            timeout_secs: 60.0,
            max_in_flight: 4,
            attempts: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Classifier,
    Oracle,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorSettings {
    /// Which evaluator `compress` and `bench` use.
    pub kind: EvaluatorKind,
    /// Negatives kept per positive when building the training set.
    pub negative_ratio: usize,
    pub augment: bool,
    pub threshold: f64,
    pub judge: OracleJudge,
    pub train: EvalTrainConfig,
}

impl Default for EvaluatorSettings {
    fn default() -> Self {
        Self {
            kind: EvaluatorKind::Classifier,
            negative_ratio: 3,
            augment: false,
            threshold: 0.0,
            judge: OracleJudge::Answer,
            train: EvalTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub strategies: Vec<StrategySpec>,
    pub ndcg_ks: Vec<usize>,
    pub record_timing: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            strategies: default_strategies(),
            ndcg_ks: vec![1, 5, 10],
            record_timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub oracle: OracleSettings,
    pub miner: MinerConfig,
    /// `encoder.seed` is the run seed; training the evaluator is deterministic.
    pub encoder: TrainConfig,
    pub evaluator: EvaluatorSettings,
    pub limits: CompressionLimits,
    pub tokenizer: TokenizerConfig,
    /// Skip malformed dataset lines instead of failing.
    pub lenient: bool,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

/// Short flags and the keys they set.
pub const ALIASES: [(&str, &str); 9] = [
    ("seed", "encoder.seed"),
    ("dataset", "paths.dataset"),
    ("cache", "paths.cache"),
    ("max_pieces", "limits.max_pieces"),
    ("step", "limits.step"),
    ("max_tokens", "limits.max_tokens"),
    ("epochs", "encoder.epochs"),
    ("lr", "encoder.learning_rate"),
    ("strategies", "bench.strategies"),
];

/// Keys whose defaults are the reference hyperparameters.
const REFERENCE_KEYS: [&str; 7] = [
    "encoder.tau",
    "encoder.positives_per_batch",
    "encoder.negatives_per_batch",
    "encoder.weak_fraction_in_se_negatives",
    "evaluator.negative_ratio",
    "limits.max_pieces",
    "limits.step",
];

#[derive(Debug, Clone)]
pub struct Override {
    pub key: String,
    pub value: Value,
}

#[derive(Debug, Clone, Default)]
pub struct Cli {
    pub config: Option<PathBuf>,
    pub overrides: Vec<Override>,
}

/// Everything after the subcommand: `--config PATH` and `--a.b v` /
/// `--a.b=v` overrides. Dashes in keys read as underscores.
pub fn parse_args(args: &[String]) -> Result<Cli, Vec<String>> {
    let mut cli = Cli::default();
    let mut errors = Vec::new();
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            errors.push(format!("unexpected argument {arg:?}; overrides look like --key value"));
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_owned())),
            None => (flag, None),
        };
        let value = match inline {
            Some(v) => v,
            None => match it.next_if(|v| !v.starts_with("--")) {
                Some(v) => v.clone(),
                None => {
                    errors.push(format!("--{name} needs a value"));
                    continue;
                }
            },
        };
        if name == "config" {
            cli.config = Some(value.into());
            continue;
        }
        let key = name.replace('-', "_");
        let key = ALIASES
            .iter()
            .find(|(a, _)| *a == key)
            .map_or(key, |(_, full)| (*full).to_owned());
        cli.overrides.push(Override {
            key,
            value: parse_value(&value),
        });
    }
    if errors.is_empty() {
        Ok(cli)
    } else {
        Err(errors)
    }
}

/// JSON if it parses, else the raw string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

fn defaults() -> Value {
    serde_json::to_value(RunConfig::default()).expect("defaults serialize")
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        cur = cur
            .as_object_mut()
            .expect("object")
            .entry(*part)
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !cur.is_object() {
        *cur = Value::Object(Map::new());
    }
    cur.as_object_mut()
        .expect("object")
        .insert(parts[parts.len() - 1].to_owned(), value);
}

/// Internally tagged settings; their fields depend on the variant.
const TAGGED: [&str; 1] = ["encoder.optimizer"];

/// Whether `key` names a setting. Below a leaf, a null default or a tagged
/// setting the shape is left to deserialization.
fn known(defaults: &Value, key: &str) -> bool {
    let mut cur = defaults;
    let mut path = String::new();
    for part in key.split('.') {
        if TAGGED.contains(&path.as_str()) {
            return true;
        }
        match cur {
            Value::Object(m) => match m.get(part) {
                Some(v) => cur = v,
                None => return false,
            },
            _ => return true,
        }
        if !path.is_empty() {
            path.push('.');
        }
        path.push_str(part);
    }
    true
}

fn unknown_keys(defaults: &Value, value: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Object(m) = value else { return };
    for (k, v) in m {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if !known(defaults, &key) {
            out.push(format!("unknown key {key}"));
        } else if v.is_object() {
            unknown_keys(defaults, v, &key, out);
        }
    }
}

fn section<T: DeserializeOwned + Default>(doc: &Value, key: &str, errors: &mut Vec<String>) -> T {
    match doc.get(key) {
        None => T::default(),
        Some(v) => serde_json::from_value(v.clone()).unwrap_or_else(|e| {
            errors.push(format!("{key}: {e}"));
            T::default()
        }),
    }
}

/// The file (if any) and overrides on top of defaults, plus the extra
/// `bench` section kept apart from [`RunConfig`].
pub fn resolve(cli: &Cli) -> Result<(RunConfig, BenchSettings), Vec<String>> {
    let base = defaults();
    let mut shape = base.clone();
    set_path(
        &mut shape,
        "bench",
        serde_json::to_value(BenchSettings::default()).expect("bench defaults serialize"),
    );
    let mut doc = shape.clone();
    let mut errors = Vec::new();

    if let Some(path) = &cli.config {
        match read_json(path) {
            Ok(file) if file.is_object() => {
                unknown_keys(&shape, &file, "", &mut errors);
                merge(&mut doc, file);
            }
            Ok(_) => errors.push(format!("{}: expected a JSON object", path.display())),
            Err(e) => errors.push(e),
        }
    }
    for o in &cli.overrides {
        if known(&shape, &o.key) {
            set_path(&mut doc, &o.key, o.value.clone());
        } else {
            errors.push(format!("unknown key {}", o.key));
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let cfg = RunConfig {
        paths: section(&doc, "paths", &mut errors),
        oracle: section(&doc, "oracle", &mut errors),
        miner: section(&doc, "miner", &mut errors),
        encoder: section(&doc, "encoder", &mut errors),
        evaluator: section(&doc, "evaluator", &mut errors),
        limits: section(&doc, "limits", &mut errors),
        tokenizer: section(&doc, "tokenizer", &mut errors),
        lenient: section(&doc, "lenient", &mut errors),
        workers: section(&doc, "workers", &mut errors),
    };
    let bench: BenchSettings = section(&doc, "bench", &mut errors);
    if !errors.is_empty() {
        return Err(errors);
    }
    errors.extend(cfg.validate());
    errors.extend(bench.validate());
    if errors.is_empty() {
        Ok((cfg, bench))
    } else {
        Err(errors)
    }
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
}

impl RunConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = self.encoder.validate();
        errors.extend(self.limits.validate());
        errors.extend(self.evaluator.train.validate());
        if self.evaluator.negative_ratio == 0 {
            errors.push("evaluator.negative_ratio must be positive".into());
        }
        if !self.evaluator.threshold.is_finite() {
            errors.push("evaluator.threshold must be finite".into());
        }
        let o = &self.oracle;
        if !(o.timeout_secs.is_finite() && o.timeout_secs > 0.0) {
            errors.push(format!("oracle.timeout_secs must be positive, got {}", o.timeout_secs));
        }
        if o.max_in_flight == 0 {
            errors.push("oracle.max_in_flight must be positive".into());
        }
        if o.attempts == 0 {
            errors.push("oracle.attempts must be positive".into());
        }
        errors
    }
}

impl BenchSettings {
    pub fn validate(&self) -> Vec<String> {
        let mut errors: Vec<String> = self.strategies.iter().flat_map(|s| s.validate()).collect();
        if self.strategies.is_empty() {
            errors.push("bench.strategies must not be empty".into());
        }
        let mut names: Vec<&str> = self.strategies.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        for w in names.windows(2) {
            if w[0] == w[1] {
                errors.push(format!("bench.strategies: duplicate name {}", w[0]));
            }
        }
        if self.ndcg_ks.contains(&0) {
            errors.push("bench.ndcg_ks entries must be positive".into());
        }
        errors
    }
}

fn leaves(value: &Value, prefix: &str, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(m) if !m.is_empty() && !TAGGED.contains(&prefix) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(v, &key, out);
            }
        }
        v => out.push((prefix.to_owned(), v.to_string())),
    }
}

/// Every key with its default, for `--help`.
pub fn key_listing() -> String {
    let mut doc = defaults();
    set_path(
        &mut doc,
        "bench",
        serde_json::to_value(BenchSettings::default()).expect("bench defaults serialize"),
    );
    let mut rows = Vec::new();
    leaves(&doc, "", &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from(
        "Configuration keys (override with --key value or --key=value; values parse as JSON, \
         otherwise as strings). [ref] marks defaults taken from the reference setup.\n\n",
    );
    for (k, v) in rows {
        let mark = if REFERENCE_KEYS.contains(&k.as_str()) { "  [ref]" } else { "" };
        out.push_str(&format!("  {k:width$}  {v}{mark}\n"));
    }
    out.push_str("\nShort flags:");
    for (a, full) in ALIASES {
        out.push_str(&format!(" --{} ({full})", a.replace('_', "-")));
    }
    out.push_str("\nEnvironment: ECORAG_API_KEY (http oracle).\n");
    out
}
