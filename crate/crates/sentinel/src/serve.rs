//! Serves an in-process backend over the wire protocol, on stdin/stdout or
//! HTTP. Used to exercise the transports against the deterministic mocks and
//! as a stand-in while real model services are unavailable.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sentinel_core::{BackendError, DetectionQuery, Detector, Sampler, SamplerRequest, TripletParser};

use crate::wire::{self, Health, ParseRequest, Route};

pub enum Role {
    Sampler(Mutex<Box<dyn Sampler + Send>>),
    Detector(Box<dyn Detector + Send + Sync>),
    Parser(Box<dyn TripletParser + Send + Sync>),
}

impl Role {
    fn route(&self) -> Route {
        match self {
            Role::Sampler(_) => Route::Sample,
            Role::Detector(_) => Route::Detect,
            Role::Parser(_) => Route::Parse,
        }
    }
}

pub struct Service {
    role: Role,
    model_id: String,
    /// Requests still to be answered with a timeout error.
    fail_first: AtomicUsize,
}

impl Service {
    pub fn new(role: Role, model_id: impl Into<String>) -> Self {
        Self { role, model_id: model_id.into(), fail_first: AtomicUsize::new(0) }
    }

    /// Answers the first `n` requests with a retryable timeout error.
    pub fn failing_first(self, n: usize) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    /// Reply body for one request; errors are encoded as the envelope.
    pub fn handle(&self, route: Route, body: &str) -> (bool, String) {
        if route == Route::Health {
            return (true, wire::encode(&Health { ok: true, model_id: self.model_id.clone() }));
        }
        match self.dispatch(route, body) {
            Ok(reply) => (true, reply),
            Err(e) => (false, wire::encode_error(&e)),
        }
    }

    fn dispatch(&self, route: Route, body: &str) -> Result<String, BackendError> {
        let armed = self.fail_first.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok();
        if armed {
            return Err(BackendError::Timeout("injected failure".into()));
        }
        if route != self.role.route() {
            return Err(BackendError::InvalidRequest(format!("this backend does not serve {}", route.path())));
        }
        match &self.role {
            Role::Sampler(s) => {
                let req: SamplerRequest = wire::decode_request(body)?;
                let resp = s.lock().unwrap_or_else(|p| p.into_inner()).sample(&req)?;
                Ok(wire::encode(&resp))
            }
            Role::Detector(d) => {
                let q: DetectionQuery = wire::decode_request(body)?;
                Ok(wire::encode(&d.detect(&q)?))
            }
            Role::Parser(p) => {
                let req: ParseRequest = wire::decode_request(body)?;
                Ok(wire::encode(&p.parse(&req.sentence)?))
            }
        }
    }

    /// One request per input line, one reply per output line, until EOF.
    pub fn serve_lines<R: BufRead, W: Write>(&self, input: R, mut output: W) -> std::io::Result<()> {
        let route = self.role.route();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (_, reply) = self.handle(route, &line);
            output.write_all(reply.as_bytes())?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
        Ok(())
    }

    /// Blocks serving HTTP requests on `server`.
    pub fn serve_http(&self, server: &tiny_http::Server) {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            let reply = match Route::from_path(req.url()) {
                None => (404, wire::encode_error(&BackendError::InvalidRequest(format!("no route {}", req.url())))),
                Some(route) => match req.as_reader().read_to_string(&mut body) {
                    Err(e) => (400, wire::encode_error(&BackendError::InvalidRequest(e.to_string()))),
                    Ok(_) => match self.handle(route, &body) {
                        (true, r) => (200, r),
                        (false, r) => (500, r),
                    },
                },
            };
            let header = tiny_http::Header::from_bytes("content-type", "application/json").expect("static header");
            let resp = tiny_http::Response::from_string(reply.1).with_status_code(reply.0).with_header(header);
            if let Err(e) = req.respond(resp) {
                log::warn!("responding: {e}");
            }
        }
    }
}
