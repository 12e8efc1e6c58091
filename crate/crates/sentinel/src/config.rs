//! Backend config file.
//!
//! ```json
//! {
//!   "sampler":    {"kind": "mock", "script": "script.json"},
//!   "detector_a": {"kind": "mock", "table": "det_a.json"},
//!   "detector_b": {"kind": "http", "url": "http://127.0.0.1:8002", "timeout_ms": 30000},
//!   "parser":     {"kind": "builtin"},
//!   "lexnames":   "lexnames.tsv",
//!   "retry":      {"attempts": 3, "base_delay_ms": 100, "factor": 2.0}
//! }
//! ```
//!
//! `script` and `table` take either a path or the file contents inline.
//! Relative paths resolve against the config file's directory. Pipe
//! backends take `{"kind": "pipe", "command": [..], "timeout_ms": ..}`.
//! `{"kind": "synthetic", "count", "seed"}` selects the seeded synthetic
//! captioner (sampler) or its oracle (detectors).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sentinel_core::grammar::{PatternParser, WithFallback};
use sentinel_core::lexnames::LexnameTable;
use sentinel_core::mock::{
    DetectorTable, SamplerScript, ScriptedSampler, SyntheticCaptioner, SyntheticParams, TableDetector,
};
use sentinel_core::protocol::DetectorPair;
use sentinel_core::{BackendError, Detector, Sampler, SamplerRequest, SamplerResponse, TripletParser};

use crate::error::{Error, Result};
use crate::retry::{RetryPolicy, Retrying};
use crate::transport::{HttpTransport, PipeTransport, Remote, Transport, DEFAULT_TIMEOUT};

pub const CONFIG_ENV: &str = "SENTINEL_BACKEND_CONFIG";

/// A path to a JSON file, or the file's contents inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(String),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    fn load(&self, base: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => read_json(&base.join(p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    Mock {
        script: Source<SamplerScript>,
    },
    Synthetic {
        count: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        params: Option<SyntheticParams>,
    },
    Pipe {
        command: Vec<String>,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
    Http {
        url: String,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorSpec {
    Mock {
        table: Source<DetectorTable>,
    },
    Synthetic {
        count: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        detector_id: Option<String>,
    },
    Pipe {
        command: Vec<String>,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
    Http {
        url: String,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParserSpec {
    #[default]
    Builtin,
    Pipe {
        command: Vec<String>,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
    Http {
        url: String,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub sampler: SamplerSpec,
    pub detector_a: DetectorSpec,
    pub detector_b: DetectorSpec,
    #[serde(default)]
    pub parser: ParserSpec,
    #[serde(default)]
    pub lexnames: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// The config path to use: the environment variable wins over the flag.
pub fn resolve_config_path(flag: Option<&Path>) -> Option<PathBuf> {
    match std::env::var_os(CONFIG_ENV) {
        Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => flag.map(Path::to_path_buf),
    }
}

impl BackendConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let cfg: Self = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn build(&self, base: &Path) -> Result<BuiltBackends> {
        let retry = self.retry;
        let sampler = match &self.sampler {
            SamplerSpec::Mock { script } => {
                let script = script.load(base)?;
                let id = format!("mock:{}", script.model_id);
                SamplerSource::shared(ScriptedSampler::new(script), id)
            }
            SamplerSpec::Synthetic { count, seed, params } => {
                let s = SyntheticCaptioner::corpus(*count, *seed, params.unwrap_or_default());
                let id = format!("synthetic:{}:{count}:{seed}", s.model_id);
                SamplerSource::shared(s, id)
            }
            SamplerSpec::Pipe { command, timeout_ms } => {
                SamplerSource::Remote(Retrying::new(pipe(command, *timeout_ms)?, retry))
            }
            SamplerSpec::Http { url, timeout_ms } => {
                SamplerSource::Remote(Retrying::new(http(url, *timeout_ms), retry))
            }
        };
        let detector_a = build_detector(&self.detector_a, "detector-a", base, retry)?;
        let detector_b = build_detector(&self.detector_b, "detector-b", base, retry)?;
        let (parser, parser_id): (Arc<dyn TripletParser + Send + Sync>, String) = match &self.parser {
            ParserSpec::Builtin => (Arc::new(PatternParser::new()), "builtin-grammar".to_string()),
            ParserSpec::Pipe { command, timeout_ms } => {
                let r = pipe(command, *timeout_ms)?;
                let id = r.describe();
                (Arc::new(WithFallback::new(Some(Retrying::new(r, retry)))), id)
            }
            ParserSpec::Http { url, timeout_ms } => {
                let r = http(url, *timeout_ms);
                let id = r.describe();
                (Arc::new(WithFallback::new(Some(Retrying::new(r, retry)))), id)
            }
        };
        let lexnames = match &self.lexnames {
            None => LexnameTable::builtin(),
            Some(p) => {
                let path = base.join(p);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                LexnameTable::from_tsv(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        };
        let identities = BackendIdentities {
            sampler: sampler.describe(),
            detector_a: detector_a.1,
            detector_b: detector_b.1,
            parser: parser_id,
        };
        Ok(BuiltBackends { sampler, detector_a: detector_a.0, detector_b: detector_b.0, parser, lexnames, identities })
    }
}

fn timeout(ms: Option<u64>) -> Duration {
    ms.map_or(DEFAULT_TIMEOUT, Duration::from_millis)
}

fn pipe(command: &[String], ms: Option<u64>) -> Result<Remote> {
    let t: Arc<dyn Transport> = Arc::new(PipeTransport::new(command.to_vec(), timeout(ms))?);
    Ok(Remote::new(t))
}

fn http(url: &str, ms: Option<u64>) -> Remote {
    Remote::new(Arc::new(HttpTransport::new(url, timeout(ms))))
}

type SharedDetector = Arc<dyn Detector + Send + Sync>;

fn build_detector(
    spec: &DetectorSpec,
    slot: &str,
    base: &Path,
    retry: RetryPolicy,
) -> Result<(SharedDetector, String)> {
    Ok(match spec {
        DetectorSpec::Mock { table } => {
            let t = table.load(base)?;
            let id = format!("mock:{}", t.detector_id);
            (Arc::new(TableDetector::new(t)), id)
        }
        DetectorSpec::Synthetic { count, seed, detector_id } => {
            let id = detector_id.clone().unwrap_or_else(|| format!("oracle-{slot}"));
            let d = SyntheticCaptioner::corpus(*count, *seed, SyntheticParams::default()).oracle_detector(&id);
            (Arc::new(d), format!("synthetic:{id}:{count}:{seed}"))
        }
        DetectorSpec::Pipe { command, timeout_ms } => {
            let r = pipe(command, *timeout_ms)?;
            let id = r.describe();
            (Arc::new(Retrying::new(r, retry)), id)
        }
        DetectorSpec::Http { url, timeout_ms } => {
            let r = http(url, *timeout_ms);
            let id = r.describe();
            (Arc::new(Retrying::new(r, retry)), id)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentities {
    pub sampler: String,
    pub detector_a: String,
    pub detector_b: String,
    pub parser: String,
}

/// Hands out a sampler per worker. In-process mocks are shared behind a
/// lock so their per-image call counters stay consistent; remote clients
/// are cloned, since each exchange is independent.
pub enum SamplerSource {
    Shared { sampler: Arc<Mutex<Box<dyn Sampler + Send>>>, id: String },
    Remote(Retrying<Remote>),
}

impl SamplerSource {
    pub fn shared(s: impl Sampler + Send + 'static, id: String) -> Self {
        Self::Shared { sampler: Arc::new(Mutex::new(Box::new(s))), id }
    }

    pub fn open(&self) -> Box<dyn Sampler + Send + '_> {
        match self {
            Self::Shared { sampler, .. } => Box::new(Locked(sampler)),
            Self::Remote(r) => Box::new(r.clone()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Shared { id, .. } => id.clone(),
            Self::Remote(r) => r.inner().describe(),
        }
    }
}

struct Locked<'a>(&'a Mutex<Box<dyn Sampler + Send>>);

impl Sampler for Locked<'_> {
    fn sample(&mut self, req: &SamplerRequest) -> Result<SamplerResponse, BackendError> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).sample(req)
    }
}

pub struct BuiltBackends {
    pub sampler: SamplerSource,
    pub detector_a: SharedDetector,
    pub detector_b: SharedDetector,
    pub parser: Arc<dyn TripletParser + Send + Sync>,
    pub lexnames: LexnameTable,
    pub identities: BackendIdentities,
}

impl BuiltBackends {
    pub fn detectors(&self) -> DetectorPair<'_> {
        DetectorPair::new(&*self.detector_a, &*self.detector_b)
    }
}
