//! Pipe and HTTP transports against `sentinel serve-mock` child processes.

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use sentinel::config::BackendConfig;
use sentinel::dataset;
use sentinel::retry::{RetryPolicy, Retrying};
use sentinel::runner::run_images;
use sentinel::transport::{HttpTransport, PipeTransport, Remote, Transport};
use sentinel::wire::Route;
use sentinel_core::pipeline::PipelineConfig;
use sentinel_core::{BackendError, DetectionQuery, Detector, Sampler, SamplerRequest, TripletParser};

const BIN: &str = env!("CARGO_BIN_EXE_sentinel");

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn serve_cmd(role: &str, file: Option<&Path>, extra: &[&str]) -> Vec<String> {
    let mut c = vec![BIN.to_string(), "serve-mock".into(), "--role".into(), role.into()];
    if let Some(f) = file {
        c.extend(["--file".to_string(), f.display().to_string()]);
    }
    c.extend(extra.iter().map(|s| s.to_string()));
    c
}

struct HttpMock {
    child: Child,
    url: String,
}

impl HttpMock {
    fn start(role: &str, file: Option<&Path>, extra: &[&str]) -> Self {
        let cmd = serve_cmd(role, file, &[extra, &["--http", "127.0.0.1:0"]].concat());
        let mut child = Command::new(&cmd[0]).args(&cmd[1..]).stdout(Stdio::piped()).spawn().unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().strip_prefix("listening on ").expect("server announces its address").to_string();
        Self { child, url }
    }
}

impl Drop for HttpMock {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn pipe(cmd: Vec<String>) -> Remote {
    Remote::new(Arc::new(PipeTransport::new(cmd, Duration::from_secs(10)).unwrap()))
}

fn req(image: &str, n: usize) -> SamplerRequest {
    SamplerRequest {
        image_ref: image.into(),
        prompt: "Describe this image.".into(),
        context: String::new(),
        n,
        stop_at_sentence_end: true,
        seed: Some(0),
    }
}

#[test]
fn pipe_sampler_answers_in_script_order() {
    let mut s = pipe(serve_cmd("sampler", Some(&golden("single_round/script.json")), &[]));
    let r = s.sample(&req("img1", 2)).unwrap();
    let texts: Vec<&str> = r.candidates.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, ["A cat sits.", "A dog runs."]);
    assert_eq!(r.model_id, "golden-sampler");
    assert!(s.sample(&req("img1", 2)).unwrap().is_finished());
    assert!(matches!(s.sample(&req("nope", 2)), Err(BackendError::UnknownImage(_))));
}

#[test]
fn http_detector_and_health() {
    let m = HttpMock::start("detector", Some(&golden("icb_chain/det_b.json")), &[]);
    let d = Remote::new(Arc::new(HttpTransport::new(&m.url, Duration::from_secs(10))));
    assert_eq!(d.health().unwrap().model_id, "det-b");
    let q = DetectionQuery::new("img2", vec!["cat".into(), "vase".into(), "dog".into()]).unwrap();
    let r = d.detect(&q).unwrap();
    assert_eq!(r.detector_id, "det-b");
    assert_eq!(
        r.present.into_iter().collect::<Vec<_>>(),
        [("cat".into(), true), ("dog".into(), false), ("vase".into(), false)]
    );
    let unknown = DetectionQuery::new("img404", vec!["cat".into()]).unwrap();
    assert!(matches!(d.detect(&unknown), Err(BackendError::UnknownImage(_))));
}

#[test]
fn http_parser_serves_the_grammar() {
    let m = HttpMock::start("parser", None, &[]);
    let p = Remote::new(Arc::new(HttpTransport::new(&m.url, Duration::from_secs(10))));
    let r = p.parse("A little black cat sits on a chair next to a table.").unwrap();
    let got: Vec<(String, String, String)> =
        r.triplets.into_iter().map(|t| (t.subject, t.predicate, t.object)).collect();
    for want in
        [("cat", "is", "little"), ("cat", "is", "black"), ("cat", "sit on", "chair"), ("chair", "next to", "table")]
    {
        assert!(got.contains(&(want.0.into(), want.1.into(), want.2.into())), "{want:?} missing from {got:?}");
    }
}

#[test]
fn retries_ride_out_transient_failures() {
    let flaky = |n: &str| pipe(serve_cmd("parser", None, &["--fail-first", n]));
    let fast = |attempts| RetryPolicy { attempts, base_delay_ms: 1, factor: 2.0 };
    let ok = Retrying::new(flaky("2"), fast(3));
    assert!(ok.parse("A cat sits.").is_ok());
    let exhausted = Retrying::new(flaky("3"), fast(3));
    assert!(matches!(exhausted.parse("A cat sits."), Err(BackendError::Timeout(_))));
}

#[test]
fn http_retries_ride_out_transient_failures() {
    let m = HttpMock::start("parser", None, &["--fail-first", "1"]);
    let p = Retrying::new(
        Remote::new(Arc::new(HttpTransport::new(&m.url, Duration::from_secs(10)))),
        RetryPolicy { attempts: 2, base_delay_ms: 1, factor: 2.0 },
    );
    assert_eq!(p.parse("Hello.").unwrap().triplets, []);
}

#[test]
fn silent_pipe_times_out_and_restarts() {
    let t = PipeTransport::new(vec!["sh".into(), "-c".into(), "cat > /dev/null".into()], Duration::from_millis(200))
        .unwrap();
    assert!(matches!(t.call(Route::Parse, "{}"), Err(BackendError::Timeout(_))));
    assert!(matches!(t.call(Route::Parse, "{}"), Err(BackendError::Timeout(_))));
}

#[test]
fn closed_port_is_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let t = HttpTransport::new(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2));
    let e = t.call(Route::Parse, "{}").unwrap_err();
    assert!(e.is_retryable(), "{e:?}");
}

#[test]
fn non_json_reply_is_malformed() {
    let mut s = pipe(vec!["sh".into(), "-c".into(), "while read l; do echo not-json; done".into()]);
    assert!(matches!(s.sample(&req("img1", 1)), Err(BackendError::Malformed(_))));
}

/// The chain scenario again, with every backend behind a transport; the
/// dataset bytes must not change.
#[test]
fn golden_chain_over_wire_is_byte_identical() {
    let dir = golden("icb_chain");
    let det_a = HttpMock::start("detector", Some(&dir.join("det_a.json")), &[]);
    let cfg = serde_json::json!({
        "sampler": {"kind": "pipe", "command": serve_cmd("sampler", Some(&dir.join("script.json")), &[])},
        "detector_a": {"kind": "http", "url": det_a.url},
        "detector_b": {"kind": "pipe", "command": serve_cmd("detector", Some(&dir.join("det_b.json")), &[])},
        "parser": {"kind": "pipe", "command": serve_cmd("parser", None, &[])},
        "retry": {"attempts": 1}
    });
    let backends = serde_json::from_value::<BackendConfig>(cfg).unwrap().build(Path::new(".")).unwrap();
    let pcfg: PipelineConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.join("pipeline.json")).unwrap()).unwrap();
    let run = run_images(&["img2".to_string()], "Describe this image.", &pcfg, &backends, 1);
    let mut bytes = Vec::new();
    dataset::write_pairs(&run.pairs(), &mut bytes).unwrap();
    assert_eq!(String::from_utf8(bytes).unwrap(), std::fs::read_to_string(dir.join("expected.jsonl")).unwrap());
}
