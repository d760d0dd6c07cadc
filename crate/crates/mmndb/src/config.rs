//! TOML engine configuration, command-line overrides and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mmndb_core::aggregator::IndecisivePolicy;
use mmndb_core::embedding::{SimilarityMetric, SynthParams};
use mmndb_core::eval::{IrSetting, DEFAULT_DAMAGING_NEGATIVES, DEFAULT_NOISY_NEGATIVES};
use mmndb_core::query::QueryType;
use mmndb_core::reasoner::NoiseParams;
use mmndb_core::retriever::{RetrieverConfig, SelectorHyper, Strategy, DEFAULT_MIXED_K, DEFAULT_TAU};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::AnnotationFormat;
use crate::remote::{RemoteConfig, DEFAULT_MAX_IN_FLIGHT};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("config key `{0}` is required for this command")]
    Missing(&'static str),
    #[error("`{key}` points to {path}, which does not exist")]
    NotFound { key: &'static str, path: String },
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub corpus: CorpusSection,
    pub embeddings: EmbeddingSection,
    pub synth: SynthSection,
    pub retriever: RetrieverSection,
    pub selector: SelectorSection,
    pub backend: BackendSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub annotations: Option<PathBuf>,
    pub format: AnnotationFormat,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            annotations: None,
            format: AnnotationFormat::CocoJson,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    /// Document embeddings (`MMNB`).
    pub store: Option<PathBuf>,
    /// One embedding per category, used as the query encoder (`MMNB`).
    pub anchors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub dim: usize,
    pub signal_weight: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub orthogonal_anchors: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        Self {
            dim: p.dim,
            signal_weight: p.signal_weight,
            noise_sigma: p.noise_sigma,
            seed: p.seed,
            orthogonal_anchors: p.orthogonal_anchors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverSection {
    pub strategy: Strategy,
    pub k: usize,
    pub tau: f64,
    pub window: usize,
    pub tolerance: usize,
    pub metric: Option<SimilarityMetric>,
    /// Trained selector (`MMSL`), needed by neural, mixed and batched.
    pub selector: Option<PathBuf>,
}

impl Default for RetrieverSection {
    fn default() -> Self {
        let r = RetrieverConfig::default();
        Self {
            strategy: r.strategy,
            k: DEFAULT_MIXED_K,
            tau: DEFAULT_TAU,
            window: r.window,
            tolerance: r.tolerance,
            metric: None,
            selector: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorSection {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub balance_classes: bool,
    /// Share of the categories used for training; the rest are held out.
    pub train_fraction: f64,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let h = SelectorHyper::default();
        Self {
            hidden: h.hidden,
            epochs: h.epochs,
            learning_rate: h.learning_rate,
            seed: h.seed,
            balance_classes: h.balance_classes,
            train_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Oracle,
    Noisy,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub p_err: f64,
    pub max_offset: u64,
    pub p_indecisive: f64,
    pub many_threshold: u64,
    pub seed: u64,
    /// Extra error probability per unit of query/document cosine similarity.
    pub damage_gain: f64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let n = NoiseParams::default();
        Self {
            kind: BackendKind::Oracle,
            endpoint: None,
            timeout_secs: 30.0,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            p_err: n.p_err,
            max_offset: n.max_offset,
            p_indecisive: n.p_indecisive,
            many_threshold: n.many_threshold,
            seed: n.seed,
            damage_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingKind {
    Perfect,
    Noisy,
    Damaging,
    Full,
}

impl std::str::FromStr for SettingKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "perfect" | "perfectir" => Ok(SettingKind::Perfect),
            "noisy" | "noisyir" => Ok(SettingKind::Noisy),
            "damaging" | "damagingir" => Ok(SettingKind::Damaging),
            "full" => Ok(SettingKind::Full),
            other => Err(ConfigError::Invalid(format!(
                "unknown setting `{other}` (expected perfect, noisy, damaging or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub settings: Vec<SettingKind>,
    pub query_types: Vec<QueryType>,
    /// Categories to query; empty means the whole vocabulary.
    pub categories: Vec<String>,
    pub n_random: usize,
    pub noisy_seed: u64,
    pub n_top: usize,
    pub damaging_metric: SimilarityMetric,
    pub policy: IndecisivePolicy,
    pub parallelism: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            settings: vec![SettingKind::Perfect, SettingKind::Noisy, SettingKind::Damaging],
            query_types: QueryType::ALL.to_vec(),
            categories: Vec::new(),
            n_random: DEFAULT_NOISY_NEGATIVES,
            noisy_seed: 0,
            n_top: DEFAULT_DAMAGING_NEGATIVES,
            damaging_metric: SimilarityMetric::Cosine,
            policy: IndecisivePolicy::AsZero,
            parallelism: 1,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub settings: Vec<SettingKind>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub strategy: Option<Strategy>,
    pub k: Option<usize>,
    pub tau: Option<f64>,
    pub window: Option<usize>,
    pub tolerance: Option<usize>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a config file; relative paths in it are taken from the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.corpus.annotations,
            &mut self.embeddings.store,
            &mut self.embeddings.anchors,
            &mut self.retriever.selector,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if !o.settings.is_empty() {
            self.eval.settings = o.settings.clone();
        }
        if let Some(kind) = o.backend {
            self.backend.kind = kind;
        }
        if let Some(endpoint) = &o.endpoint {
            self.backend.endpoint = Some(endpoint.clone());
        }
        if let Some(s) = o.strategy {
            self.retriever.strategy = s;
        }
        if let Some(k) = o.k {
            self.retriever.k = k;
        }
        if let Some(tau) = o.tau {
            self.retriever.tau = tau;
        }
        if let Some(w) = o.window {
            self.retriever.window = w;
        }
        if let Some(t) = o.tolerance {
            self.retriever.tolerance = t;
        }
        if let Some(seed) = o.seed {
            self.synth.seed = seed;
            self.selector.seed = seed;
            self.backend.seed = seed;
            self.eval.noisy_seed = seed;
        }
        if let Some(p) = o.parallelism {
            self.eval.parallelism = p;
        }
    }

    /// Fails unless `path` is set and exists.
    pub fn existing(
        key: &'static str,
        path: &Option<PathBuf>,
    ) -> Result<PathBuf, ConfigError> {
        let p = path.as_ref().ok_or(ConfigError::Missing(key))?;
        if !p.exists() {
            return Err(ConfigError::NotFound {
                key,
                path: p.display().to_string(),
            });
        }
        Ok(p.clone())
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            dim: self.synth.dim,
            signal_weight: self.synth.signal_weight,
            noise_sigma: self.synth.noise_sigma,
            seed: self.synth.seed,
            orthogonal_anchors: self.synth.orthogonal_anchors,
        }
    }

    pub fn retriever_config(&self) -> Result<RetrieverConfig, ConfigError> {
        let r = &self.retriever;
        if r.k == 0 || r.window == 0 {
            return Err(ConfigError::Invalid("retriever k and window must be at least 1".into()));
        }
        if !r.tau.is_finite() {
            return Err(ConfigError::Invalid("retriever tau must be finite".into()));
        }
        Ok(RetrieverConfig {
            strategy: r.strategy,
            k: r.k,
            tau: r.tau,
            window: r.window,
            tolerance: r.tolerance,
            metric: r.metric,
        })
    }

    pub fn selector_hyper(&self) -> SelectorHyper {
        let s = &self.selector;
        SelectorHyper {
            hidden: s.hidden,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            seed: s.seed,
            balance_classes: s.balance_classes,
        }
    }

    pub fn noise_params(&self) -> NoiseParams {
        let b = &self.backend;
        NoiseParams {
            p_err: b.p_err,
            max_offset: b.max_offset,
            p_indecisive: b.p_indecisive,
            many_threshold: b.many_threshold,
            seed: b.seed,
        }
    }

    pub fn remote_config(&self) -> Result<RemoteConfig, ConfigError> {
        let endpoint = self
            .backend
            .endpoint
            .clone()
            .ok_or(ConfigError::Missing("backend.endpoint"))?;
        let t = self.backend.timeout_secs;
        if !(t.is_finite() && t > 0.0) {
            return Err(ConfigError::Invalid("backend.timeout_secs must be positive".into()));
        }
        let mut remote = RemoteConfig::new(endpoint);
        remote.timeout = std::time::Duration::from_secs_f64(t);
        remote.max_in_flight = self.backend.max_in_flight.max(1);
        Ok(remote)
    }

    pub fn settings(&self) -> Result<Vec<IrSetting>, ConfigError> {
        let e = &self.eval;
        let mut out = Vec::with_capacity(e.settings.len());
        for kind in &e.settings {
            out.push(match kind {
                SettingKind::Perfect => IrSetting::Perfect,
                SettingKind::Noisy => IrSetting::Noisy {
                    n_random: e.n_random,
                    seed: e.noisy_seed,
                },
                SettingKind::Damaging => IrSetting::Damaging {
                    n_top: e.n_top,
                    metric: e.damaging_metric,
                },
                SettingKind::Full => IrSetting::Full {
                    retriever: self.retriever_config()?,
                },
            });
        }
        Ok(out)
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("synth".to_string(), self.synth.seed),
            ("selector".to_string(), self.selector.seed),
            ("reasoner".to_string(), self.backend.seed),
            ("noisy_ir".to_string(), self.eval.noisy_seed),
        ])
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that can change results; `eval.parallelism` is left out.
    pub fn sha256(&self) -> String {
        let mut canonical = self.clone();
        canonical.eval.parallelism = EvalSection::default().parallelism;
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }
}

/// Provenance record written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &EngineConfig, outputs: &[&Path]) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config.sha256(),
            seeds: config.seeds(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    /// Writes `<artifact>.manifest.json`.
    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf, ConfigError> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = EngineConfig::from_toml("").unwrap();
        assert_eq!(c, EngineConfig::default());
        assert_eq!(c.retriever.strategy, Strategy::Mixed);
        assert_eq!(c.retriever.k, 50);
        assert_eq!(c.retriever.tau, 0.25);
        assert_eq!(c.backend.timeout_secs, 30.0);
    }

    #[test]
    fn parses_sections() {
        let c = EngineConfig::from_toml(
            r#"
            [corpus]
            annotations = "ann.jsonl"
            format = "simple-jsonl"
            [retriever]
            strategy = "topk"
            k = 5
            metric = "cosine"
            [backend]
            kind = "noisy"
            p_err = 0.2
            [eval]
            settings = ["perfect", "full"]
            query_types = ["count", "max"]
            policy = "skip"
            "#,
        )
        .unwrap();
        assert_eq!(c.corpus.format, AnnotationFormat::SimpleJsonl);
        let r = c.retriever_config().unwrap();
        assert_eq!((r.strategy, r.k, r.metric()), (Strategy::TopK, 5, SimilarityMetric::Cosine));
        assert_eq!(c.noise_params().p_err, 0.2);
        assert_eq!(c.eval.query_types, [QueryType::Count, QueryType::Max]);
        let settings = c.settings().unwrap();
        assert_eq!(settings[0], IrSetting::Perfect);
        assert!(matches!(settings[1], IrSetting::Full { .. }));
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = EngineConfig::from_toml("[retriever]\nstrategy = \"topk\"\nkk = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kk"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(EngineConfig::from_toml("[bogus]\n").is_err());
        assert!(EngineConfig::from_toml("[retriever]\nstrategy = \"best\"\n").is_err());
    }

    #[test]
    fn overrides_and_hash() {
        let mut c = EngineConfig::default();
        let before = c.sha256();
        c.apply(&Overrides {
            settings: vec![SettingKind::Full],
            strategy: Some(Strategy::Threshold),
            tau: Some(0.3),
            seed: Some(9),
            ..Overrides::default()
        });
        assert_eq!(c.eval.settings, [SettingKind::Full]);
        assert_eq!(c.retriever.tau, 0.3);
        assert!(c.seeds().values().all(|s| *s == 9));
        assert_ne!(c.sha256(), before);
        assert_eq!(c.sha256(), c.clone().sha256());
        let mut wider = c.clone();
        wider.eval.parallelism = 8;
        assert_eq!(wider.sha256(), c.sha256());
        assert_eq!(EngineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn relative_paths_and_existence() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("ann.json"), "{}").unwrap();
        let cfg = dir.path().join("engine.toml");
        fs::write(&cfg, "[corpus]\nannotations = \"ann.json\"\n[embeddings]\nstore = \"missing.mmnb\"\n").unwrap();
        let c = EngineConfig::load(&cfg).unwrap();
        assert_eq!(
            EngineConfig::existing("corpus.annotations", &c.corpus.annotations).unwrap(),
            dir.path().join("ann.json")
        );
        assert!(matches!(
            EngineConfig::existing("embeddings.store", &c.embeddings.store),
            Err(ConfigError::NotFound { key: "embeddings.store", .. })
        ));
        assert!(matches!(
            EngineConfig::existing("embeddings.anchors", &c.embeddings.anchors),
            Err(ConfigError::Missing(_))
        ));
    }
}
