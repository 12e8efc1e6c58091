//! Randomized C-DPO self-checks behind the `cdpo-check` command.

use serde::Serialize;

use sentinel_core::cdpo::{
    cancellation_check, grad_check, random_example, training_dynamics, trend_slope, CdpoConfig, CdpoError, Example,
    MicroLM, TracePoint,
};
use sentinel_core::rng::SplitMix64;

/// Worst-case figures over a suite of random instances.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Masked vs unmasked loss and gradient on random shared-context pairs.
pub fn cancellation_suite(instances: usize, seed: u64, beta: f64) -> Result<SuiteReport, CdpoError> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    let mut pass = true;
    for _ in 0..instances {
        let vocab = 2 + rng.below(14);
        let scale = rng.uniform(0.1, 3.0);
        let policy = MicroLM::random(vocab, scale, &mut rng)?;
        let reference = MicroLM::random(vocab, scale, &mut rng)?;
        let (p, c, r) = (1 + rng.below(4), rng.below(24), 1 + rng.below(10));
        let ex = random_example(&mut rng, vocab, p, c, r);
        let r = cancellation_check(&policy, &reference, &ex, beta)?;
        worst = worst.max((r.loss_masked - r.loss_unmasked).abs()).max(r.max_grad_diff);
        pass &= r.pass;
    }
    Ok(SuiteReport { name: "cancellation", instances, worst, tolerance: sentinel_core::cdpo::CANCELLATION_TOL, pass })
}

pub const GRAD_TOL: f64 = 1e-4;

/// Analytic gradient against central differences on random batches.
pub fn gradient_suite(batches: usize, seed: u64, beta: f64) -> Result<SuiteReport, CdpoError> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for b in 0..batches {
        let vocab = 2 + rng.below(9);
        let policy = MicroLM::random(vocab, 1.0, &mut rng)?;
        let reference = MicroLM::random(vocab, 1.0, &mut rng)?;
        let size = 1 + rng.below(4);
        let batch: Vec<Example> = (0..size)
            .map(|_| {
                let (p, c, r) = (1 + rng.below(3), rng.below(5), 1 + rng.below(6));
                random_example(&mut rng, vocab, p, c, r)
            })
            .collect();
        let cfg = CdpoConfig { beta, mask_context: b % 2 == 0 };
        worst = worst.max(grad_check(&policy, &reference, &batch, &cfg)?);
    }
    Ok(SuiteReport { name: "gradient", instances: batches, worst, tolerance: GRAD_TOL, pass: worst < GRAD_TOL })
}

/// Trains a policy initialised at the reference on random pairs.
pub fn training_trace(steps: usize, lr: f64, seed: u64, beta: f64) -> Result<Vec<TracePoint>, CdpoError> {
    let mut rng = SplitMix64::new(seed);
    let vocab = 8;
    let reference = MicroLM::random(vocab, 0.5, &mut rng)?;
    let data: Vec<Example> = (0..16).map(|_| random_example(&mut rng, vocab, 2, 4, 5)).collect();
    let mut policy = reference.clone();
    training_dynamics(&mut policy, &reference, &data, steps, lr, &CdpoConfig { beta, mask_context: true })
}

pub fn margin_slope(trace: &[TracePoint]) -> f64 {
    trend_slope(&trace.iter().map(TracePoint::margin).collect::<Vec<_>>())
}
