//! The `mmndb` command line.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for bad or missing data.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mmndb_core::corpus::MultimodalDatabase;
use mmndb_core::embedding::{synth_generate, AnchorEncoder, EmbeddingStore, QueryEncoder};
use mmndb_core::eval::SettingContext;
use mmndb_core::query::{canonical_template, parse_query, QueryType};
use mmndb_core::reasoner::{DamageModel, NoisyReasoner, OracleReasoner, Reasoner};
use mmndb_core::retriever::{retrieve, train_selector, SelectorModel, Strategy};
use serde::de::DeserializeOwned;

use crate::bench::{render_table, reports_to_json, run_benchmark, run_query, BenchSpec, EvalReport};
use crate::config::{BackendKind, ConfigError, EngineConfig, Manifest, Overrides, SettingKind};
use crate::ingest::{load_annotations, summarize, write_simple_jsonl, AnnotationFormat};
use crate::remote::{RemoteQueryEncoder, RemoteReasoner};
use crate::selector_io::{read_selector, write_selector};
use crate::store_io::{read_store, write_store};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Format(#[from] crate::store_io::FormatError),
    #[error(transparent)]
    Bench(#[from] crate::bench::BenchError),
    #[error(transparent)]
    Eval(#[from] mmndb_core::eval::EvalError),
    #[error(transparent)]
    Embedding(#[from] mmndb_core::embedding::EmbeddingError),
    #[error(transparent)]
    Retriever(#[from] mmndb_core::retriever::RetrieverError),
    #[error(transparent)]
    Noise(#[from] mmndb_core::reasoner::NoiseError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid report file: {0}")]
    Report(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(ConfigError::Invalid(_)) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mmndb", version, about = "Multimodal neural database engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load annotations and write them as simple-jsonl.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Annotation file; overrides corpus.annotations.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// coco-json or simple-jsonl; overrides corpus.format.
        #[arg(long)]
        format: Option<String>,
    },
    /// Generate a planted-similarity embedding store and its category anchors.
    SynthEmbed {
        #[command(flatten)]
        common: Common,
        /// Where to write the anchors; defaults to `<out>.anchors`.
        #[arg(long)]
        anchors_out: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Train the neural selector on a share of the categories.
    TrainSelector {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Answer one natural-language query.
    Query {
        #[command(flatten)]
        common: Common,
        /// e.g. "How many dogs are in the database?"
        text: String,
    },
    /// Run the benchmark and write an evaluation report.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Render a saved evaluation report.
    Report {
        /// Report JSON written by `eval`.
        input: PathBuf,
        /// table or json.
        #[arg(long, default_value = "table")]
        format: String,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Engine configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// IR setting: perfect, noisy, damaging or full. Repeatable.
    #[arg(long = "setting", value_delimiter = ',')]
    settings: Vec<String>,
    /// Reasoner backend: oracle, noisy or remote.
    #[arg(long)]
    backend: Option<String>,
    /// Model server base URL for the remote backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Retriever: topk, threshold, neural, mixed or batched.
    #[arg(long)]
    strategy: Option<String>,
    /// Documents kept by topk (and the topk half of mixed).
    #[arg(long)]
    k: Option<usize>,
    /// Similarity cutoff for threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Documents per window for batched.
    #[arg(long)]
    window: Option<usize>,
    /// Batched stops after a window with at most this many picks.
    #[arg(long)]
    tolerance: Option<usize>,
    /// Sets every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for retrieval and reasoning.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| CliError::Usage(format!("unknown {what} `{s}`")))
}

impl Common {
    fn config(&self) -> Result<EngineConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => EngineConfig::load(path)?,
            None => EngineConfig::default(),
        };
        let overrides = Overrides {
            settings: self
                .settings
                .iter()
                .map(|s| s.parse::<SettingKind>())
                .collect::<Result<_, _>>()?,
            backend: self
                .backend
                .as_deref()
                .map(|b| parse_enum::<BackendKind>("backend", b))
                .transpose()?,
            endpoint: self.endpoint.clone(),
            strategy: self
                .strategy
                .as_deref()
                .map(|s| parse_enum::<Strategy>("strategy", s))
                .transpose()?,
            k: self.k,
            tau: self.tau,
            window: self.window,
            tolerance: self.tolerance,
            seed: self.seed,
            parallelism: self.parallelism,
        };
        config.apply(&overrides);
        Ok(config)
    }

    fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required for this command".into()))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_corpus(config: &EngineConfig) -> Result<MultimodalDatabase, CliError> {
    let path = EngineConfig::existing("corpus.annotations", &config.corpus.annotations)?;
    Ok(load_annotations(path, config.corpus.format)?)
}

/// Everything loaded from the configuration that a query or benchmark needs.
struct Engine {
    config: EngineConfig,
    db: MultimodalDatabase,
    store: Option<EmbeddingStore>,
    encoder: Option<Box<dyn QueryEncoder>>,
    selector: Option<SelectorModel>,
}

impl Engine {
    fn load(config: EngineConfig) -> Result<Self, CliError> {
        let db = load_corpus(&config)?;
        let store = match &config.embeddings.store {
            Some(_) => Some(read_store(EngineConfig::existing("embeddings.store", &config.embeddings.store)?)?),
            None => None,
        };
        let encoder: Option<Box<dyn QueryEncoder>> = match &config.embeddings.anchors {
            Some(_) => {
                let path = EngineConfig::existing("embeddings.anchors", &config.embeddings.anchors)?;
                Some(Box::new(AnchorEncoder::new(read_store(path)?)))
            }
            None if config.backend.endpoint.is_some() => {
                Some(Box::new(RemoteQueryEncoder::new(config.remote_config()?)))
            }
            None => None,
        };
        let selector = match &config.retriever.selector {
            Some(_) => Some(read_selector(EngineConfig::existing(
                "retriever.selector",
                &config.retriever.selector,
            )?)?),
            None => None,
        };
        Ok(Self {
            config,
            db,
            store,
            encoder,
            selector,
        })
    }

    fn context(&self) -> SettingContext<'_> {
        SettingContext {
            db: &self.db,
            store: self.store.as_ref(),
            encoder: self.encoder.as_deref(),
            selector: self.selector.as_ref(),
        }
    }

    fn reasoner(&self) -> Result<Box<dyn Reasoner + '_>, CliError> {
        Ok(match self.config.backend.kind {
            BackendKind::Oracle => Box::new(OracleReasoner),
            BackendKind::Noisy => {
                let noisy = NoisyReasoner::new(self.config.noise_params())?;
                let gain = self.config.backend.damage_gain;
                if gain > 0.0 {
                    let store = self.store.as_ref().ok_or(ConfigError::Missing("embeddings.store"))?;
                    let encoder = self.encoder.as_deref().ok_or(ConfigError::Missing("embeddings.anchors"))?;
                    Box::new(noisy.with_damage(DamageModel { store, encoder, gain })?)
                } else {
                    Box::new(noisy)
                }
            }
            BackendKind::Remote => Box::new(RemoteReasoner::new(self.config.remote_config()?)),
        })
    }
}

fn supported_templates() -> String {
    QueryType::ALL
        .iter()
        .map(|t| format!("  {}: {}", t.as_str(), canonical_template(*t)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn json_line<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

fn cmd_ingest(
    common: &Common,
    annotations: &Option<PathBuf>,
    format: &Option<String>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mut config = common.config()?;
    if let Some(a) = annotations {
        config.corpus.annotations = Some(a.clone());
    }
    if let Some(f) = format {
        config.corpus.format = f
            .parse::<AnnotationFormat>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let db = load_corpus(&config)?;
    if let Some(out) = &common.out {
        let mut buf = Vec::new();
        write_simple_jsonl(&db, &mut buf).expect("write to memory");
        write_file(out, &buf)?;
        Manifest::new("ingest", &config, &[out]).write_beside(out)?;
    }
    let _ = stdout.write_all(json_line(&summarize(&db)).as_bytes());
    Ok(())
}

fn cmd_synth(
    common: &Common,
    anchors_out: &Option<PathBuf>,
    dim: Option<usize>,
    noise_sigma: Option<f64>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mut config = common.config()?;
    if let Some(d) = dim {
        config.synth.dim = d;
    }
    if let Some(s) = noise_sigma {
        config.synth.noise_sigma = s;
    }
    let out = common.out()?;
    let anchors_path = anchors_out.clone().unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".anchors");
        PathBuf::from(name)
    });
    let db = load_corpus(&config)?;
    let (store, encoder) = synth_generate(&db, &config.synth_params())?;
    write_store(out, &store)?;
    write_store(&anchors_path, encoder.anchors())?;
    Manifest::new("synth-embed", &config, &[out, &anchors_path]).write_beside(out)?;
    let _ = writeln!(
        stdout,
        "wrote {} document vectors and {} anchors (dim {})",
        store.len(),
        encoder.anchors().len(),
        store.dim()
    );
    Ok(())
}

/// Splits categories into train and held-out halves by a seeded hash order.
fn split_categories(vocabulary: &[String], fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    use sha2::{Digest, Sha256};
    let mut keyed: Vec<(Vec<u8>, &String)> = vocabulary
        .iter()
        .map(|c| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(c.as_bytes());
            (h.finalize().to_vec(), c)
        })
        .collect();
    keyed.sort();
    let n_train = ((vocabulary.len() as f64 * fraction).ceil() as usize).clamp(1, vocabulary.len());
    let (train, held) = keyed.split_at(n_train);
    let collect = |part: &[(Vec<u8>, &String)]| {
        let mut v: Vec<String> = part.iter().map(|(_, c)| (*c).clone()).collect();
        v.sort();
        v
    };
    (collect(train), collect(held))
}

fn cmd_train(common: &Common, epochs: Option<usize>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut config = common.config()?;
    if let Some(e) = epochs {
        config.selector.epochs = e;
    }
    let f = config.selector.train_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(ConfigError::Invalid("selector.train_fraction must lie in (0, 1]".into()).into());
    }
    let out = common.out()?.to_path_buf();
    // the configured selector is what this command produces
    config.retriever.selector = None;
    let engine = Engine::load(config)?;
    let store = engine.store.as_ref().ok_or(ConfigError::Missing("embeddings.store"))?;
    let encoder = engine.encoder.as_deref().ok_or(ConfigError::Missing("embeddings.anchors"))?;
    let vocabulary: Vec<String> = engine.db.vocabulary().iter().cloned().collect();
    if vocabulary.is_empty() {
        return Err(CliError::Usage("the corpus has no categories to train on".into()));
    }
    let (train, held) = split_categories(&vocabulary, f, engine.config.selector.seed);
    let to_queries = |cats: &[String]| -> Result<Vec<_>, CliError> {
        cats.iter()
            .map(|c| mmndb_core::query::Query::new(QueryType::In, c).map_err(|e| CliError::Usage(e.to_string())))
            .collect()
    };
    let train_q = to_queries(&train)?;
    let model = train_selector(store, &engine.db, encoder, &train_q, &engine.config.selector_hyper())?;
    write_selector(&out, &model)?;
    Manifest::new("train-selector", &engine.config, &[&out]).write_beside(&out)?;

    let mut ir = Vec::new();
    for q in to_queries(&held)? {
        let qv = encoder.encode(&q)?;
        let r = retrieve(
            &mmndb_core::retriever::RetrieverConfig {
                strategy: Strategy::Neural,
                ..Default::default()
            },
            store,
            &qv,
            Some(&model),
        )?;
        ir.push((engine.db.ground_truth(&q).relevant, r.retrieved));
    }
    let summary = serde_json::json!({
        "train_categories": train,
        "held_out_categories": held,
        "held_out": mmndb_core::eval::retrieval_metrics(&ir).ok(),
        "param_count": model.param_count(),
    });
    let _ = stdout.write_all(json_line(&summary).as_bytes());
    Ok(())
}

fn cmd_query(common: &Common, text: &str, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let query = match parse_query(text) {
        Ok(q) => q,
        Err(e) => {
            let _ = writeln!(stderr, "{e}\nsupported query forms:\n{}", supported_templates());
            return Err(CliError::Usage("unsupported query".into()));
        }
    };
    let mut config = common.config()?;
    let engine_ready = config.embeddings.store.is_some()
        && (config.embeddings.anchors.is_some() || config.backend.endpoint.is_some());
    if common.settings.is_empty() {
        // the real pipeline when embeddings are configured, the annotations otherwise
        let default = if engine_ready { SettingKind::Full } else { SettingKind::Perfect };
        config.eval.settings = vec![default];
    }
    let setting = *config
        .settings()?
        .first()
        .ok_or_else(|| CliError::Usage("no setting selected".into()))?;
    let parallelism = config.eval.parallelism;
    let policy = config.eval.policy;
    let manifest = Manifest::new("query", &config, &[]);
    let engine = Engine::load(config)?;
    let reasoner = engine.reasoner()?;
    let run = run_query(&engine.context(), reasoner.as_ref(), &query, &setting, policy, parallelism)?;
    let mut value = serde_json::to_value(&run).expect("query run serializes");
    value["setting"] = serde_json::to_value(setting).expect("setting serializes");
    value["manifest"] = serde_json::to_value(&manifest).expect("manifest serializes");
    let json = json_line(&value);
    match &common.out {
        Some(out) => write_file(out, json.as_bytes())?,
        None => {
            let _ = stdout.write_all(json.as_bytes());
        }
    }
    Ok(())
}

fn cmd_eval(common: &Common, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = common.config()?;
    let spec = BenchSpec {
        settings: config.settings()?,
        query_types: config.eval.query_types.clone(),
        categories: config.eval.categories.clone(),
        policy: config.eval.policy,
        parallelism: config.eval.parallelism,
        seeds: config.seeds(),
        config: serde_json::json!({
            "sha256": config.sha256(),
            "retriever": config.retriever_config()?,
            "backend": config.backend.kind,
            "synth": config.synth_params(),
        }),
    };
    let engine = Engine::load(config)?;
    let reasoner = engine.reasoner()?;
    let reports = run_benchmark(&engine.context(), reasoner.as_ref(), &spec)?;
    let json = reports_to_json(&reports);
    match &common.out {
        Some(out) => {
            write_file(out, json.as_bytes())?;
            Manifest::new("eval", &engine.config, &[out]).write_beside(out)?;
            let _ = stdout.write_all(render_table(&reports).as_bytes());
        }
        None => {
            let _ = stdout.write_all(json.as_bytes());
        }
    }
    Ok(())
}

fn cmd_report(input: &Path, format: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(input).map_err(|source| CliError::Io {
        path: input.display().to_string(),
        source,
    })?;
    let reports: Vec<EvalReport> =
        serde_json::from_str(&text).map_err(|e| CliError::Report(e.to_string()))?;
    let rendered = match format {
        "table" => render_table(&reports),
        "json" => reports_to_json(&reports),
        other => return Err(CliError::Usage(format!("unknown report format `{other}`"))),
    };
    let _ = stdout.write_all(rendered.as_bytes());
    Ok(())
}

/// Runs the command line with explicit output streams and returns the exit code.
pub fn run_cli_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(rendered.as_bytes())
            } else {
                stdout.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Ingest {
            common,
            annotations,
            format,
        } => cmd_ingest(common, annotations, format, stdout),
        Command::SynthEmbed {
            common,
            anchors_out,
            dim,
            noise_sigma,
        } => cmd_synth(common, anchors_out, *dim, *noise_sigma, stdout),
        Command::TrainSelector { common, epochs } => cmd_train(common, *epochs, stdout),
        Command::Query { common, text } => cmd_query(common, text, stdout, stderr),
        Command::Eval { common } => cmd_eval(common, stdout),
        Command::Report { input, format } => cmd_report(input, format, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_seeded_and_disjoint() {
        let vocab: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let (a, b) = split_categories(&vocab, 0.5, 1);
        assert_eq!((a.len(), b.len()), (5, 5));
        assert!(a.iter().all(|c| !b.contains(c)));
        assert_eq!(split_categories(&vocab, 0.5, 1), (a.clone(), b));
        assert_ne!(split_categories(&vocab, 0.5, 2).0, a);
        assert_eq!(split_categories(&vocab, 1.0, 1).0.len(), 10);
    }
}
