//! Fans images out over a bounded worker pool. Each image's context chain
//! runs on one worker; outcomes come back in input order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use sentinel_core::pipeline::{run_image, Backends, ImageOutcome, PipelineConfig, PreferencePair};

use crate::config::BuiltBackends;
use crate::dataset::{PairCounts, RunCounts, RunManifest, SCHEMA_VERSION};

pub struct RunResult {
    pub outcomes: Vec<ImageOutcome>,
    pub wall_clock_ms: u128,
}

impl RunResult {
    /// Pairs in image order, then round order.
    pub fn pairs(&self) -> Vec<PreferencePair> {
        self.outcomes.iter().flat_map(|o| o.pairs.iter().cloned()).collect()
    }

    pub fn manifest(&self, cfg: &PipelineConfig, backends: &BuiltBackends) -> RunManifest {
        let pairs = self.pairs();
        let c = PairCounts::of(&pairs);
        let skipped: std::collections::BTreeMap<String, String> =
            self.outcomes.iter().filter_map(|o| o.skipped.as_ref().map(|r| (o.image_ref.clone(), r.clone()))).collect();
        RunManifest {
            schema_version: SCHEMA_VERSION,
            config: serde_json::to_value(cfg).expect("config serializes"),
            backends: serde_json::to_value(&backends.identities).expect("identities serialize"),
            seed: cfg.seed,
            counts: RunCounts {
                images_processed: self.outcomes.len() - skipped.len(),
                images_skipped: skipped.len(),
                pairs: c.pairs,
                coherent: c.coherent,
                agnostic: c.agnostic,
            },
            skipped,
            wall_clock_ms: self.wall_clock_ms,
        }
    }
}

pub fn run_images(
    images: &[String],
    prompt: &str,
    cfg: &PipelineConfig,
    b: &BuiltBackends,
    workers: usize,
) -> RunResult {
    let start = Instant::now();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ImageOutcome>>> = Mutex::new(vec![None; images.len()]);
    let workers = workers.clamp(1, images.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| {
                let mut sampler = b.sampler.open();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(image) = images.get(i) else { break };
                    let mut backends = Backends {
                        sampler: &mut *sampler,
                        detectors: b.detectors(),
                        parser: &*b.parser,
                        lexnames: &b.lexnames,
                    };
                    let out = run_image(image, prompt, cfg, &mut backends);
                    match &out.skipped {
                        Some(reason) => log::warn!("skipping {image}: {reason}"),
                        None => log::info!("{image}: {} pairs in {} rounds", out.pairs.len(), out.rounds),
                    }
                    slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(out);
                }
            });
        }
    });
    let outcomes = slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|o| o.expect("every image ran"))
        .collect();
    RunResult { outcomes, wall_clock_ms: start.elapsed().as_millis() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BackendConfig;
    use std::path::Path;

    fn synthetic(count: usize) -> BuiltBackends {
        let cfg: BackendConfig = serde_json::from_value(serde_json::json!({
            "sampler": {"kind": "synthetic", "count": count, "seed": 3},
            "detector_a": {"kind": "synthetic", "count": count, "seed": 3},
            "detector_b": {"kind": "synthetic", "count": count, "seed": 3}
        }))
        .unwrap();
        cfg.build(Path::new(".")).unwrap()
    }

    #[test]
    fn worker_count_does_not_change_the_dataset() {
        let images: Vec<String> = (0..12).map(|i| format!("img{i:04}")).collect();
        let cfg = PipelineConfig::default();
        let one = run_images(&images, "Describe this image.", &cfg, &synthetic(12), 1).pairs();
        let four = run_images(&images, "Describe this image.", &cfg, &synthetic(12), 4).pairs();
        assert!(!one.is_empty());
        assert_eq!(one, four);
    }

    #[test]
    fn unknown_images_are_skipped_not_fatal() {
        let images = vec!["img0000".to_string(), "missing".to_string()];
        let cfg = PipelineConfig::default();
        let b = synthetic(1);
        let r = run_images(&images, "Describe this image.", &cfg, &b, 2);
        let m = r.manifest(&cfg, &b);
        assert_eq!((m.counts.images_processed, m.counts.images_skipped), (1, 1));
        assert!(m.skipped.contains_key("missing"));
        assert!(m.consistent_with(&r.pairs()));
    }
}
