//! Readers and writers for the analysis commands: JSON-lines inputs, CSV
//! tables and a plain SVG bar chart of the position densities.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;

use sentinel_core::analysis::{PositionHistogram, SentenceFrequencyRow};
use sentinel_core::cdpo::TracePoint;

use crate::error::{Error, Result};

/// Reads one JSON value per non-blank line. Errors name the line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_histogram_csv<W: Write>(h: &PositionHistogram, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bin_start", "bin_end", "hallucinated_density", "factual_density"])?;
    for (i, start) in h.edges().into_iter().enumerate() {
        let end = (i + 1) as f64 / h.bins as f64;
        wr.write_record([
            start.to_string(),
            end.to_string(),
            h.hallucinated.values[i].to_string(),
            h.factual.values[i].to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_sentence_frequency_csv<W: Write>(rows: &[SentenceFrequencyRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_trace_csv<W: Write>(trace: &[TracePoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "loss", "chosen_logp", "rejected_logp"])?;
    for t in trace {
        wr.write_record([
            t.step.to_string(),
            t.loss.to_string(),
            t.chosen_logp.to_string(),
            t.rejected_logp.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<csv>", e))
}

const W: f64 = 640.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

/// Side-by-side bars per bin: hallucinated in red, factual in blue.
pub fn histogram_svg(h: &PositionHistogram) -> String {
    let peak = h.hallucinated.values.iter().chain(&h.factual.values).copied().fold(0.0f64, f64::max).max(1e-12);
    let plot_w = W - 2.0 * PAD;
    let plot_h = H - 2.0 * PAD;
    let slot = plot_w / h.bins as f64;
    let bar = slot * 0.4;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/>"#, y = H - PAD, x = W - PAD);
    for i in 0..h.bins {
        let x0 = PAD + i as f64 * slot + slot * 0.1;
        for (k, (vals, color)) in
            [(&h.hallucinated.values, "#c0392b"), (&h.factual.values, "#2e86c1")].into_iter().enumerate()
        {
            let bh = vals[i] / peak * plot_h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                x0 + k as f64 * bar,
                H - PAD - bh,
                bar,
                bh
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-size="12">0</text>"#, H - PAD + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">1</text>"#, W - PAD - 6.0, H - PAD + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="20" font-size="12">relative position: hallucinated (red) vs factual (blue)</text>"#
    );
    s.push_str("</svg>\n");
    s
}
