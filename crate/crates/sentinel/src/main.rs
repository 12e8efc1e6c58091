use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sentinel::analysis_io::{self, read_jsonl};
use sentinel::checks;
use sentinel::config::{self, BackendConfig, BuiltBackends};
use sentinel::dataset;
use sentinel::error::{Error, Result};
use sentinel::runner;
use sentinel::serve::{Role, Service};
use sentinel_core::analysis::{
    annotate_caption, intervene_decode, kind_totals, position_histogram, sentence_frequency, AnnotatedCaption,
    Annotator, CaptionObject, DecodeBackends, DecodeConfig,
};
use sentinel_core::cdpo::{cdpo_loss, CdpoConfig, LogpBundle};
use sentinel_core::grammar::PatternParser;
use sentinel_core::metrics::{evaluate, summarize, MetricInputs};
use sentinel_core::mock::{
    DetectorTable, SamplerScript, ScriptedSampler, SyntheticCaptioner, SyntheticParams, TableDetector,
};
use sentinel_core::pipeline::{ContextGrowthPolicy, PipelineConfig};
use sentinel_core::validator::UncertainPolicy;

#[derive(Parser)]
#[command(name = "sentinel", version, about = "Sentence-level hallucination preference data toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build preference pairs by iterative contextual bootstrapping.
    Gen(GenArgs),
    /// Subsample a dataset to a coherent/agnostic positive ratio.
    Filter(FilterArgs),
    /// Convert a dataset for an external trainer.
    Export(ExportArgs),
    /// Object position statistics over annotated captions.
    Analyze(AnalyzeArgs),
    /// CHAIR / Hal / Cog over object-set records.
    Metrics(MetricsArgs),
    /// Numerical checks of the C-DPO objective on a micro model.
    CdpoCheck(CdpoArgs),
    /// Caption images sentence by sentence, resampling hallucinated sentences.
    DecodeIntervene(DecodeArgs),
    /// Serve a mock backend over stdin/stdout or HTTP.
    ServeMock(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct BackendArgs {
    /// Backend config file; SENTINEL_BACKEND_CONFIG takes precedence.
    #[arg(long)]
    backend_config: Option<PathBuf>,
}

impl BackendArgs {
    fn build(&self) -> Result<BuiltBackends> {
        let path = config::resolve_config_path(self.backend_config.as_deref()).ok_or_else(|| {
            Error::Config(format!("no backend config: pass --backend-config or set {}", config::CONFIG_ENV))
        })?;
        let (cfg, base) = BackendConfig::load(&path)?;
        cfg.build(&base)
    }
}

#[derive(Args)]
struct GenArgs {
    /// File with one image ref per line, or a comma-separated list.
    #[arg(long)]
    images: String,
    /// Prompt text, or a file holding it.
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    max_iters: usize,
    #[arg(long, value_enum, default_value = "on")]
    icb: OnOff,
    #[arg(long, default_value = "ignore")]
    uncertain: UncertainPolicy,
    #[arg(long, default_value = "non_hallucinated")]
    context_policy: ContextGrowthPolicy,
    /// Accept context-agnostic positives after the first round.
    #[arg(long)]
    allow_agnostic: bool,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    coherent_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Trainer,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "trainer")]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// JSON lines of {"caption","objects":[{"lemma","kind","token_index","sentence_index"}]}.
    #[arg(long)]
    captions: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// JSON lines of {"response_objects","annotated_objects","hallucinatory_targets"}.
    #[arg(long = "in")]
    input: PathBuf,
    /// Per-record reports, one JSON object per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CdpoArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 50)]
    batches: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = sentinel_core::cdpo::recipe::BETA)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV of (step, loss, chosen_logp, rejected_logp).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    images: String,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// First sentence index that is checked and resampled.
    #[arg(long, default_value_t = 0)]
    intervene_from: usize,
    /// Take the first sample everywhere (baseline run).
    #[arg(long)]
    no_intervention: bool,
    #[arg(long, default_value_t = 32)]
    max_sentences: usize,
    #[arg(long, default_value = "ignore")]
    uncertain: UncertainPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    backend: BackendArgs,
    /// Annotated captions, readable by `analyze`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ServeRole {
    Sampler,
    Detector,
    Parser,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, value_enum)]
    role: ServeRole,
    /// Sampler script or detector table (JSON).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Use the synthetic captioner / its oracle with this many images.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Listen on this address instead of stdin/stdout; prints the bound URL.
    #[arg(long)]
    http: Option<String>,
    /// Answer the first N requests with a timeout error.
    #[arg(long, default_value_t = 0)]
    fail_first: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Filter(a) => filter(a),
        Cmd::Export(a) => export(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::Metrics(a) => metrics(a),
        Cmd::CdpoCheck(a) => cdpo_check(a),
        Cmd::DecodeIntervene(a) => decode(a),
        Cmd::ServeMock(a) => serve(a),
    };
    match r {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn list_arg(s: &str) -> Result<Vec<String>> {
    let p = Path::new(s);
    let text = if p.is_file() { fs::read_to_string(p).map_err(|e| Error::io(p, e))? } else { s.replace(',', "\n") };
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect())
}

fn text_arg(s: &str) -> Result<String> {
    let p = Path::new(s);
    if p.is_file() {
        Ok(fs::read_to_string(p).map_err(|e| Error::io(p, e))?.trim().to_string())
    } else {
        Ok(s.to_string())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn gen(a: GenArgs) -> Result<bool> {
    let cfg = PipelineConfig {
        n: a.n,
        max_iterations: a.max_iters,
        icb_enabled: matches!(a.icb, OnOff::On),
        context_growth_policy: a.context_policy,
        require_coherent_positive: !a.allow_agnostic,
        uncertain_policy: a.uncertain,
        seed: a.seed,
    };
    cfg.validate()?;
    let images = list_arg(&a.images)?;
    let prompt = text_arg(&a.prompt)?;
    let backends = a.backend.build()?;
    let run = runner::run_images(&images, &prompt, &cfg, &backends, a.workers);
    let pairs = run.pairs();
    dataset::write_dataset(&pairs, &a.out)?;
    let manifest = run.manifest(&cfg, &backends);
    manifest.write(&dataset::manifest_path(&a.out))?;
    let c = &manifest.counts;
    eprintln!(
        "{} pairs ({} coherent, {} agnostic) from {} images, {} skipped",
        c.pairs, c.coherent, c.agnostic, c.images_processed, c.images_skipped
    );
    Ok(true)
}

fn filter(a: FilterArgs) -> Result<bool> {
    let pairs = dataset::read_dataset(&a.input)?;
    let kept = dataset::mix_filter(&pairs, a.coherent_fraction, a.seed)?;
    let c = dataset::write_dataset(&kept, &a.out)?;
    eprintln!("kept {} of {} ({} coherent, {} agnostic)", c.pairs, pairs.len(), c.coherent, c.agnostic);
    Ok(true)
}

fn export(a: ExportArgs) -> Result<bool> {
    let pairs = dataset::read_dataset(&a.input)?;
    match a.format {
        ExportFormat::Trainer => {
            dataset::export_trainer(&pairs, create(&a.out)?).map_err(|e| Error::io(&a.out, e))?;
        }
    }
    Ok(true)
}

fn analyze(a: AnalyzeArgs) -> Result<bool> {
    let captions: Vec<AnnotatedCaption> = read_jsonl(&a.captions)?;
    let objects: Vec<_> = captions.iter().flat_map(AnnotatedCaption::positioned).collect();
    let hist = position_histogram(&objects, a.bins).map_err(|e| Error::Config(e.to_string()))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let at = |name: &str| a.out_dir.join(name);
    analysis_io::write_histogram_csv(&hist, create(&at("position_histogram.csv"))?)?;
    analysis_io::write_sentence_frequency_csv(&sentence_frequency(&captions), create(&at("sentence_frequency.csv"))?)?;
    let svg = at("position_histogram.svg");
    fs::write(&svg, analysis_io::histogram_svg(&hist)).map_err(|e| Error::io(&svg, e))?;
    let totals = kind_totals(&captions);
    println!("{}", serde_json::json!({ "captions": captions.len(), "objects": totals }));
    Ok(true)
}

fn metrics(a: MetricsArgs) -> Result<bool> {
    let records: Vec<MetricInputs> = read_jsonl(&a.input)?;
    let reports: Vec<_> = records.iter().map(evaluate).collect();
    if let Some(out) = &a.out {
        let mut w = create(out)?;
        for r in &reports {
            writeln!(w, "{}", serde_json::to_string(r).expect("reports serialize")).map_err(|e| Error::io(out, e))?;
        }
        w.flush().map_err(|e| Error::io(out, e))?;
    }
    println!("{}", serde_json::to_string(&summarize(&reports)).expect("summary serializes"));
    Ok(true)
}

fn report_line(name: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("{} {name} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn cdpo_check(a: CdpoArgs) -> Result<bool> {
    let fail = |e: sentinel_core::cdpo::CdpoError| Error::Config(e.to_string());
    let mut ok = true;
    let cfg = CdpoConfig { beta: a.beta, mask_context: true };
    let ln2 = cdpo_loss(&LogpBundle::new(-3.0, -5.0, -3.0, -5.0), &cfg).map_err(fail)?;
    ok &= report_line("loss-identity", (ln2 - std::f64::consts::LN_2).abs() <= 1e-12, format_args!("loss={ln2:.15}"));
    for s in [
        checks::cancellation_suite(a.instances, a.seed, a.beta).map_err(fail)?,
        checks::gradient_suite(a.batches, a.seed, a.beta).map_err(fail)?,
    ] {
        ok &= report_line(
            s.name,
            s.pass,
            format_args!("instances={} worst={:.3e} tol={:.0e}", s.instances, s.worst, s.tolerance),
        );
    }
    let trace = checks::training_trace(a.steps, a.lr, a.seed, a.beta).map_err(fail)?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        let slope = checks::margin_slope(&trace);
        ok &= report_line(
            "training",
            last.loss < std::f64::consts::LN_2 && slope > 0.0,
            format_args!("steps={} loss {:.4} -> {:.4} margin_slope={slope:.3e}", trace.len(), first.loss, last.loss),
        );
    }
    if let Some(path) = &a.trace {
        analysis_io::write_trace_csv(&trace, create(path)?)?;
    }
    Ok(ok)
}

#[derive(Serialize)]
struct DecodedCaption<'a> {
    image_ref: &'a str,
    caption: &'a str,
    objects: &'a [CaptionObject],
    fallbacks: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

fn decode(a: DecodeArgs) -> Result<bool> {
    let mut cfg = DecodeConfig {
        n: a.n,
        intervene_from: a.intervene_from,
        max_sentences: a.max_sentences,
        seed: a.seed,
        uncertain_policy: a.uncertain,
    };
    if a.no_intervention {
        cfg = cfg.greedy();
    }
    let images = list_arg(&a.images)?;
    let prompt = text_arg(&a.prompt)?;
    let b = a.backend.build()?;
    let annotator = Annotator { parser: &*b.parser, lexnames: &b.lexnames, detectors: b.detectors() };
    let mut sampler = b.sampler.open();
    let mut w = create(&a.out)?;
    for image in &images {
        let out = intervene_decode(image, &prompt, &cfg, &mut DecodeBackends { sampler: &mut *sampler, annotator });
        let annotated = match annotate_caption(image, &out.caption, &annotator) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("{image}: annotating caption: {e}");
                AnnotatedCaption { caption: out.caption.clone(), objects: Vec::new() }
            }
        };
        let rec = DecodedCaption {
            image_ref: image,
            caption: &out.caption,
            objects: &annotated.objects,
            fallbacks: &out.fallbacks,
            error: out.error.as_deref(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("captions serialize"))
            .map_err(|e| Error::io(&a.out, e))?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    Ok(true)
}

fn serve(a: ServeArgs) -> Result<bool> {
    let synthetic = a.synthetic.map(|count| SyntheticCaptioner::corpus(count, a.seed, SyntheticParams::default()));
    let need_file = || a.file.as_deref().ok_or_else(|| Error::Config("--file or --synthetic is required".into()));
    let (role, model_id) = match a.role {
        ServeRole::Parser => (Role::Parser(Box::new(PatternParser::new())), "builtin-grammar".to_string()),
        ServeRole::Sampler => match synthetic {
            Some(s) => {
                let id = s.model_id.clone();
                (Role::Sampler(std::sync::Mutex::new(Box::new(s))), id)
            }
            None => {
                let script: SamplerScript = config::read_json(need_file()?)?;
                let id = script.model_id.clone();
                (Role::Sampler(std::sync::Mutex::new(Box::new(ScriptedSampler::new(script)))), id)
            }
        },
        ServeRole::Detector => match synthetic {
            Some(s) => (Role::Detector(Box::new(s.oracle_detector("oracle"))), "oracle".to_string()),
            None => {
                let table: DetectorTable = config::read_json(need_file()?)?;
                let id = table.detector_id.clone();
                (Role::Detector(Box::new(TableDetector::new(table))), id)
            }
        },
    };
    let svc = Service::new(role, model_id).failing_first(a.fail_first);
    match &a.http {
        None => svc.serve_lines(io::stdin().lock(), io::stdout().lock()).map_err(|e| Error::io("<stdio>", e))?,
        Some(addr) => {
            let server =
                tiny_http::Server::http(addr.as_str()).map_err(|e| Error::Config(format!("binding {addr}: {e}")))?;
            let bound = server.server_addr().to_ip().ok_or_else(|| Error::Config("not an IP listener".into()))?;
            println!("listening on http://{bound}");
            io::stdout().flush().map_err(|e| Error::io("<stdout>", e))?;
            svc.serve_http(&server);
        }
    }
    Ok(true)
}
