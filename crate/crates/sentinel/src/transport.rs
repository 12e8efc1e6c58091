//! Request/response transports and the remote backend client.
//!
//! A transport moves one JSON payload to a backend and returns the reply
//! body. Two are provided: a child process speaking line-delimited JSON on
//! stdin/stdout, and an HTTP endpoint. [`Remote`] layers the protocol
//! validation on top and implements the core backend traits.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use sentinel_core::{
    BackendError, DetectionQuery, DetectionResult, Detector, Sampler, SamplerRequest, SamplerResponse,
    TripletParseResult, TripletParser,
};

use crate::wire::{self, Health, ParseRequest, Route};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

pub trait Transport: Send + Sync {
    fn call(&self, route: Route, body: &str) -> Result<String, BackendError>;

    /// Human-readable endpoint, for manifests and logs.
    fn describe(&self) -> String;
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Pipe {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Line-delimited JSON over a child process. The child is started on first
/// use and restarted after a timeout or broken pipe.
pub struct PipeTransport {
    command: Vec<String>,
    timeout: Duration,
    pipe: Mutex<Option<Pipe>>,
}

impl PipeTransport {
    pub fn new(command: Vec<String>, timeout: Duration) -> Result<Self, BackendError> {
        if command.is_empty() {
            return Err(BackendError::InvalidRequest("pipe command is empty".into()));
        }
        Ok(Self { command, timeout, pipe: Mutex::new(None) })
    }

    fn spawn(&self) -> Result<Pipe, BackendError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unreachable(format!("spawning {:?}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Pipe { child, stdin, lines: rx })
    }
}

impl Transport for PipeTransport {
    fn call(&self, route: Route, body: &str) -> Result<String, BackendError> {
        if route == Route::Health {
            return Err(BackendError::InvalidRequest("pipe backends have no health route".into()));
        }
        let mut guard = self.pipe.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let pipe = guard.as_mut().expect("pipe was just started");
        let sent = pipe.stdin.write_all(body.as_bytes()).and_then(|()| {
            pipe.stdin.write_all(b"\n")?;
            pipe.stdin.flush()
        });
        if let Err(e) = sent {
            *guard = None;
            return Err(BackendError::Unreachable(format!("writing to backend: {e}")));
        }
        let reply = pipe.lines.recv_timeout(self.timeout);
        match reply {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => {
                *guard = None;
                Err(BackendError::Unreachable(format!("reading from backend: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                *guard = None;
                Err(BackendError::Timeout(format!("no reply within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                *guard = None;
                Err(BackendError::Unreachable("backend process exited".into()))
            }
        }
    }

    fn describe(&self) -> String {
        format!("pipe:{}", self.command.join(" "))
    }
}

pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { base: base_url.trim_end_matches('/').to_string(), agent }
    }
}

fn http_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout(io.to_string()),
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            BackendError::Unreachable(e.to_string())
        }
        other => BackendError::Malformed(other.to_string()),
    }
}

impl Transport for HttpTransport {
    fn call(&self, route: Route, body: &str) -> Result<String, BackendError> {
        let url = format!("{}{}", self.base, route.path());
        let resp = if route == Route::Health {
            self.agent.get(&url).call()
        } else {
            self.agent.post(&url).header("content-type", "application/json").send(body)
        };
        let mut resp = resp.map_err(http_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(http_error)?;
        if (200..300).contains(&status) {
            return Ok(text);
        }
        if let Ok(env) = serde_json::from_str::<wire::ErrorEnvelope>(&text) {
            return Err(BackendError::from_kind(&env.error.kind, env.error.message));
        }
        if matches!(status, 502..=504) {
            return Err(BackendError::Unreachable(format!("HTTP {status} from {url}")));
        }
        Err(BackendError::Remote(format!("HTTP {status} from {url}")))
    }

    fn describe(&self) -> String {
        self.base.clone()
    }
}

/// A backend reached over a transport. Implements all three roles; which
/// one the process behind the transport actually serves is up to the config.
#[derive(Clone)]
pub struct Remote {
    transport: Arc<dyn Transport>,
}

impl Remote {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self { transport }
    }

    pub fn describe(&self) -> String {
        self.transport.describe()
    }

    pub fn health(&self) -> Result<Health, BackendError> {
        wire::decode_reply(&self.transport.call(Route::Health, "")?)
    }
}

impl Sampler for Remote {
    fn sample(&mut self, req: &SamplerRequest) -> Result<SamplerResponse, BackendError> {
        req.validate()?;
        let resp: SamplerResponse = wire::decode_reply(&self.transport.call(Route::Sample, &wire::encode(req))?)?;
        resp.validate(req)?;
        Ok(resp)
    }
}

impl Detector for Remote {
    fn detect(&self, q: &DetectionQuery) -> Result<DetectionResult, BackendError> {
        q.validate()?;
        let res: DetectionResult = wire::decode_reply(&self.transport.call(Route::Detect, &wire::encode(q))?)?;
        res.validate(q)?;
        Ok(res)
    }
}

impl TripletParser for Remote {
    fn parse(&self, sentence: &str) -> Result<TripletParseResult, BackendError> {
        let body = wire::encode(&ParseRequest { sentence: sentence.to_string() });
        let res: TripletParseResult = wire::decode_reply(&self.transport.call(Route::Parse, &body)?)?;
        res.validate()?;
        Ok(res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Canned(&'static str);

    impl Transport for Canned {
        fn call(&self, _: Route, _: &str) -> Result<String, BackendError> {
            Ok(self.0.to_string())
        }
        fn describe(&self) -> String {
            "canned".into()
        }
    }

    fn remote(reply: &'static str) -> Remote {
        Remote::new(Arc::new(Canned(reply)))
    }

    #[test]
    fn detector_reply_must_cover_the_query() {
        let q = DetectionQuery::new("img1", vec!["cat".into(), "dog".into()]).unwrap();
        let partial = remote(r#"{"present":{"cat":true},"detector_id":"d"}"#);
        assert!(matches!(partial.detect(&q), Err(BackendError::Malformed(_))));
        let full = remote(r#"{"present":{"cat":true,"dog":false},"detector_id":"d","confidence":{"cat":0.9}}"#);
        let r = full.detect(&q).unwrap();
        assert!(r.is_present("cat") && !r.is_present("dog"));
    }

    #[test]
    fn sampler_reply_is_validated_against_request() {
        let req = SamplerRequest {
            image_ref: "img1".into(),
            prompt: "Describe.".into(),
            context: String::new(),
            n: 2,
            stop_at_sentence_end: true,
            seed: Some(0),
        };
        let short = remote(r#"{"candidates":[{"text":"A cat.","is_eos":false,"logprob":null}],"model_id":"m"}"#);
        assert!(matches!(short.clone().sample(&req), Err(BackendError::Malformed(_))));
        let ok = remote(
            r#"{"candidates":[{"text":"A cat.","is_eos":false,"logprob":-1.0},{"text":"","is_eos":true,"logprob":null}],"model_id":"m"}"#,
        );
        assert_eq!(ok.clone().sample(&req).unwrap().candidates.len(), 2);
    }

    #[test]
    fn error_envelope_surfaces_as_backend_error() {
        let r = remote(r#"{"error":{"kind":"unknown_image","message":"img9"}}"#);
        assert_eq!(r.parse("A cat sits."), Err(BackendError::UnknownImage("img9".into())));
    }

    #[test]
    fn missing_pipe_binary_is_unreachable() {
        let t = PipeTransport::new(vec!["/nonexistent/backend".into()], Duration::from_secs(1)).unwrap();
        assert!(matches!(t.call(Route::Parse, "{}"), Err(BackendError::Unreachable(_))));
    }
}
