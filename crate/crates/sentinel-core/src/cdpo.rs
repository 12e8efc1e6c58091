//! Context-aware DPO.
//!
//! The loss is `-log σ(β·((πc − πr) − (rc − rr)))` over summed, unmasked
//! token log-probabilities. Prompt tokens are always masked; context tokens
//! are masked when `mask_context` is set. Because chosen and rejected share
//! the context, its log-probabilities (and their gradients) are identical in
//! both branches and cancel in the policy log-ratio, so masking changes
//! nothing but the amount of arithmetic. With an empty context the loss is
//! standard DPO.
//!
//! [`MicroLM`] is a bigram softmax model small enough to differentiate by
//! hand, used to check those claims numerically.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

pub type Token = u16;

/// Largest vocabulary [`MicroLM`] accepts.
pub const MAX_VOCAB: usize = 32;

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Tolerance for [`cancellation_check`].
pub const CANCELLATION_TOL: f64 = 1e-9;

/// Hyperparameters of the full-scale recipe, kept for reference; the micro
/// trainer only uses `BETA`.
pub mod recipe {
    pub const BETA: f64 = 0.1;
    /// Learning rates (7B, 13B) from the hyperparameter table.
    pub const LR_TABLE: [f64; 2] = [2e-6, 3e-6];
    /// Learning rates (7B, 13B) as quoted in the experimental setup prose;
    /// they disagree with the table by a factor of ten.
    pub const LR_PROSE: [f64; 2] = [2e-7, 3e-7];
    pub const SCHEDULE: &str = "cosine";
    pub const EPOCHS: usize = 1;
    pub const LORA_RANK: usize = 128;
    pub const LORA_ALPHA: usize = 256;
    pub const GLOBAL_BATCH: usize = 64;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CdpoError {
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("token {token} outside vocabulary of {vocab}")]
    OutOfVocabulary { token: Token, vocab: usize },
    #[error("mask has {mask} entries for {tokens} tokens")]
    MaskLength { mask: usize, tokens: usize },
    #[error("vocabulary size {0} not in 1..={MAX_VOCAB}")]
    VocabSize(usize),
    #[error("parameter table has {got} entries, expected {want}")]
    TableSize { got: usize, want: usize },
    #[error("loss diverged at step {step}")]
    Diverged { step: usize },
    #[error("empty batch")]
    EmptyBatch,
}

/// Summed log-probabilities feeding the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogpBundle {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl LogpBundle {
    pub fn new(policy_chosen: f64, policy_rejected: f64, ref_chosen: f64, ref_rejected: f64) -> Self {
        Self { policy_chosen, policy_rejected, ref_chosen, ref_rejected }
    }

    pub fn validate(&self) -> Result<(), CdpoError> {
        for (v, name) in [
            (self.policy_chosen, "policy_chosen"),
            (self.policy_rejected, "policy_rejected"),
            (self.ref_chosen, "ref_chosen"),
            (self.ref_rejected, "ref_rejected"),
        ] {
            if !v.is_finite() {
                return Err(CdpoError::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Policy log-ratio minus reference log-ratio.
    pub fn logits(&self) -> f64 {
        let policy_logratios = self.policy_chosen - self.policy_rejected;
        let ref_logratios = self.ref_chosen - self.ref_rejected;
        policy_logratios - ref_logratios
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdpoConfig {
    pub beta: f64,
    pub mask_context: bool,
}

impl Default for CdpoConfig {
    fn default() -> Self {
        Self { beta: recipe::BETA, mask_context: true }
    }
}

impl CdpoConfig {
    pub fn validate(&self) -> Result<(), CdpoError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(CdpoError::InvalidBeta(self.beta));
        }
        Ok(())
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `-log σ(β·logits)`.
pub fn cdpo_loss(b: &LogpBundle, cfg: &CdpoConfig) -> Result<f64, CdpoError> {
    b.validate()?;
    cfg.validate()?;
    Ok(softplus(-cfg.beta * b.logits()))
}

/// The loss written per sample as `β·log(πθ/πref)(y_w) − β·log(πθ/πref)(y_l)`.
/// Algebraically equal to [`cdpo_loss`]; rounding differs.
pub fn dpo_loss_ratio_form(b: &LogpBundle, beta: f64) -> Result<f64, CdpoError> {
    b.validate()?;
    CdpoConfig { beta, mask_context: true }.validate()?;
    let chosen = beta * (b.policy_chosen - b.ref_chosen);
    let rejected = beta * (b.policy_rejected - b.ref_rejected);
    Ok(softplus(-(chosen - rejected)))
}

/// Bigram softmax language model: logits `W[prev][next]`, with an extra
/// beginning-of-sequence row at index `vocab`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroLM {
    vocab: usize,
    logits: Vec<f64>,
}

impl MicroLM {
    /// All-zero logits: the uniform model.
    pub fn uniform(vocab: usize) -> Result<Self, CdpoError> {
        Self::from_table(vocab, vec![0.0; (vocab + 1) * vocab])
    }

    pub fn from_table(vocab: usize, logits: Vec<f64>) -> Result<Self, CdpoError> {
        if vocab == 0 || vocab > MAX_VOCAB {
            return Err(CdpoError::VocabSize(vocab));
        }
        let want = (vocab + 1) * vocab;
        if logits.len() != want {
            return Err(CdpoError::TableSize { got: logits.len(), want });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(CdpoError::NonFinite("logit table"));
        }
        Ok(Self { vocab, logits })
    }

    /// Logits drawn uniformly from `[-scale, scale)`.
    pub fn random(vocab: usize, scale: f64, rng: &mut SplitMix64) -> Result<Self, CdpoError> {
        let n = (vocab + 1) * vocab;
        Self::from_table(vocab, (0..n).map(|_| rng.uniform(-scale, scale)).collect())
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn bos(&self) -> usize {
        self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    /// Index of `W[prev][next]` in [`MicroLM::params`].
    pub fn param_index(&self, prev: usize, next: usize) -> usize {
        prev * self.vocab + next
    }

    /// Next-token distribution after `prev` (`bos()` for the first token).
    pub fn probs(&self, prev: usize) -> Vec<f64> {
        let row = &self.logits[prev * self.vocab..(prev + 1) * self.vocab];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| libm::exp(x - max)).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    fn log_prob(&self, prev: usize, next: usize) -> f64 {
        let row = &self.logits[prev * self.vocab..(prev + 1) * self.vocab];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>());
        row[next] - lse
    }

    fn check(&self, tokens: &[Token], mask: &[bool]) -> Result<(), CdpoError> {
        if mask.len() != tokens.len() {
            return Err(CdpoError::MaskLength { mask: mask.len(), tokens: tokens.len() });
        }
        if let Some(&t) = tokens.iter().find(|t| usize::from(**t) >= self.vocab) {
            return Err(CdpoError::OutOfVocabulary { token: t, vocab: self.vocab });
        }
        Ok(())
    }

    /// Per-position `log p(t_i | t_{i-1})`.
    pub fn token_logps(&self, tokens: &[Token]) -> Result<Vec<f64>, CdpoError> {
        self.check(tokens, &vec![false; tokens.len()])?;
        let mut prev = self.bos();
        Ok(tokens
            .iter()
            .map(|&t| {
                let lp = self.log_prob(prev, usize::from(t));
                prev = usize::from(t);
                lp
            })
            .collect())
    }

    /// Sum of log-probabilities at positions where `mask` is false.
    pub fn sequence_logp(&self, tokens: &[Token], mask: &[bool]) -> Result<f64, CdpoError> {
        self.check(tokens, mask)?;
        let mut prev = self.bos();
        let mut sum = 0.0;
        for (&t, &masked) in tokens.iter().zip(mask) {
            if !masked {
                sum += self.log_prob(prev, usize::from(t));
            }
            prev = usize::from(t);
        }
        Ok(sum)
    }

    /// Gradient of [`MicroLM::sequence_logp`] with respect to every logit:
    /// each unmasked position adds `1[j = t] − p_j` to row `prev`.
    pub fn sequence_logp_grad(&self, tokens: &[Token], mask: &[bool]) -> Result<Vec<f64>, CdpoError> {
        self.check(tokens, mask)?;
        let mut g = vec![0.0; self.logits.len()];
        let mut prev = self.bos();
        for (&t, &masked) in tokens.iter().zip(mask) {
            let t = usize::from(t);
            if !masked {
                let base = prev * self.vocab;
                for (j, p) in self.probs(prev).into_iter().enumerate() {
                    g[base + j] -= p;
                }
                g[base + t] += 1.0;
            }
            prev = t;
        }
        Ok(g)
    }
}

/// One tokenized preference sample. Chosen and rejected normally share
/// `context`; [`Example::with_contexts`] builds the mismatched form used as a
/// negative control.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub prompt: Vec<Token>,
    pub chosen_context: Vec<Token>,
    pub rejected_context: Vec<Token>,
    pub chosen: Vec<Token>,
    pub rejected: Vec<Token>,
}

impl Example {
    pub fn new(prompt: Vec<Token>, context: Vec<Token>, chosen: Vec<Token>, rejected: Vec<Token>) -> Self {
        Self { prompt, chosen_context: context.clone(), rejected_context: context, chosen, rejected }
    }

    pub fn with_contexts(
        prompt: Vec<Token>,
        chosen_context: Vec<Token>,
        rejected_context: Vec<Token>,
        chosen: Vec<Token>,
        rejected: Vec<Token>,
    ) -> Self {
        Self { prompt, chosen_context, rejected_context, chosen, rejected }
    }

    pub fn shares_context(&self) -> bool {
        self.chosen_context == self.rejected_context
    }

    /// Full token sequence and loss mask (true = masked) for one branch.
    pub fn branch(&self, chosen: bool, mask_context: bool) -> (Vec<Token>, Vec<bool>) {
        let (ctx, resp) =
            if chosen { (&self.chosen_context, &self.chosen) } else { (&self.rejected_context, &self.rejected) };
        let mut toks = self.prompt.clone();
        toks.extend_from_slice(ctx);
        toks.extend_from_slice(resp);
        let mut mask = vec![true; self.prompt.len()];
        mask.extend(core::iter::repeat_n(mask_context, ctx.len()));
        mask.extend(core::iter::repeat_n(false, resp.len()));
        (toks, mask)
    }
}

/// Four summed log-probabilities of `ex` under `policy` and `reference`.
pub fn bundle(
    policy: &MicroLM,
    reference: &MicroLM,
    ex: &Example,
    mask_context: bool,
) -> Result<LogpBundle, CdpoError> {
    let (cw, mw) = ex.branch(true, mask_context);
    let (cl, ml) = ex.branch(false, mask_context);
    Ok(LogpBundle {
        policy_chosen: policy.sequence_logp(&cw, &mw)?,
        policy_rejected: policy.sequence_logp(&cl, &ml)?,
        ref_chosen: reference.sequence_logp(&cw, &mw)?,
        ref_rejected: reference.sequence_logp(&cl, &ml)?,
    })
}

/// Loss of one example and its gradient with respect to the policy logits.
/// `d/dθ softplus(−βz) = −β·σ(−βz)·(∇πc − ∇πr)`.
pub fn loss_and_grad(
    policy: &MicroLM,
    reference: &MicroLM,
    ex: &Example,
    cfg: &CdpoConfig,
) -> Result<(f64, Vec<f64>), CdpoError> {
    let b = bundle(policy, reference, ex, cfg.mask_context)?;
    let loss = cdpo_loss(&b, cfg)?;
    let scale = -cfg.beta * sigmoid(-cfg.beta * b.logits());
    let (cw, mw) = ex.branch(true, cfg.mask_context);
    let (cl, ml) = ex.branch(false, cfg.mask_context);
    let gw = policy.sequence_logp_grad(&cw, &mw)?;
    let gl = policy.sequence_logp_grad(&cl, &ml)?;
    Ok((loss, gw.iter().zip(&gl).map(|(w, l)| scale * (w - l)).collect()))
}

/// Mean loss over a batch and its gradient.
pub fn batch_loss_and_grad(
    policy: &MicroLM,
    reference: &MicroLM,
    batch: &[Example],
    cfg: &CdpoConfig,
) -> Result<(f64, Vec<f64>), CdpoError> {
    if batch.is_empty() {
        return Err(CdpoError::EmptyBatch);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; policy.num_params()];
    for ex in batch {
        let (l, g) = loss_and_grad(policy, reference, ex, cfg)?;
        loss += l;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

pub fn batch_loss(
    policy: &MicroLM,
    reference: &MicroLM,
    batch: &[Example],
    cfg: &CdpoConfig,
) -> Result<f64, CdpoError> {
    if batch.is_empty() {
        return Err(CdpoError::EmptyBatch);
    }
    let mut loss = 0.0;
    for ex in batch {
        loss += cdpo_loss(&bundle(policy, reference, ex, cfg.mask_context)?, cfg)?;
    }
    Ok(loss / batch.len() as f64)
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between the analytic gradient of the batch loss
/// and central finite differences, over every policy parameter.
pub fn grad_check(
    policy: &MicroLM,
    reference: &MicroLM,
    batch: &[Example],
    cfg: &CdpoConfig,
) -> Result<f64, CdpoError> {
    let (_, analytic) = batch_loss_and_grad(policy, reference, batch, cfg)?;
    let mut probe = policy.clone();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.logits[i];
        probe.logits[i] = orig + FD_STEP;
        let up = batch_loss(&probe, reference, batch, cfg)?;
        probe.logits[i] = orig - FD_STEP;
        let down = batch_loss(&probe, reference, batch, cfg)?;
        probe.logits[i] = orig;
        worst = worst.max(relative_error(*a, (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationReport {
    pub loss_masked: f64,
    pub loss_unmasked: f64,
    pub max_grad_diff: f64,
    pub pass: bool,
}

/// Compares loss and gradient with the context masked and unmasked.
pub fn cancellation_check(
    policy: &MicroLM,
    reference: &MicroLM,
    ex: &Example,
    beta: f64,
) -> Result<CancellationReport, CdpoError> {
    let (loss_masked, g_masked) = loss_and_grad(policy, reference, ex, &CdpoConfig { beta, mask_context: true })?;
    let (loss_unmasked, g_unmasked) = loss_and_grad(policy, reference, ex, &CdpoConfig { beta, mask_context: false })?;
    let max_grad_diff = g_masked.iter().zip(&g_unmasked).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = (loss_masked - loss_unmasked).abs() <= CANCELLATION_TOL && max_grad_diff <= CANCELLATION_TOL;
    Ok(CancellationReport { loss_masked, loss_unmasked, max_grad_diff, pass })
}

/// Rows of the logit table (by previous token) that condition only masked
/// positions of `ex`; perturbing them cannot move the masked loss.
pub fn context_only_rows(model: &MicroLM, ex: &Example) -> Vec<usize> {
    let mut used = vec![false; model.vocab() + 1];
    for chosen in [true, false] {
        let (toks, mask) = ex.branch(chosen, true);
        let mut prev = model.bos();
        for (&t, &m) in toks.iter().zip(&mask) {
            if !m {
                used[prev] = true;
            }
            prev = usize::from(t);
        }
    }
    (0..=model.vocab()).filter(|r| !used[*r]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    /// Batch means of the policy's summed logps.
    pub chosen_logp: f64,
    pub rejected_logp: f64,
}

impl TracePoint {
    pub fn margin(&self) -> f64 {
        self.chosen_logp - self.rejected_logp
    }
}

/// Full-batch gradient descent with constant `lr`; records the state before
/// each update.
pub fn training_dynamics(
    policy: &mut MicroLM,
    reference: &MicroLM,
    dataset: &[Example],
    steps: usize,
    lr: f64,
    cfg: &CdpoConfig,
) -> Result<Vec<TracePoint>, CdpoError> {
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grad) = batch_loss_and_grad(policy, reference, dataset, cfg)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(CdpoError::Diverged { step });
        }
        let (mut cw, mut rj) = (0.0, 0.0);
        for ex in dataset {
            let b = bundle(policy, reference, ex, cfg.mask_context)?;
            cw += b.policy_chosen;
            rj += b.policy_rejected;
        }
        let n = dataset.len() as f64;
        trace.push(TracePoint { step, loss, chosen_logp: cw / n, rejected_logp: rj / n });
        for (p, g) in policy.logits.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        if policy.logits.iter().any(|p| !p.is_finite()) {
            return Err(CdpoError::Diverged { step });
        }
    }
    Ok(trace)
}

/// Least-squares slope of `ys` against their index.
pub fn trend_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        num += dx * (y - my);
        den += dx * dx;
    }
    num / den
}

/// Random example over `vocab` tokens with the given segment lengths.
pub fn random_example(rng: &mut SplitMix64, vocab: usize, prompt: usize, context: usize, response: usize) -> Example {
    let mut seq = |len: usize| -> Vec<Token> { (0..len).map(|_| rng.below(vocab) as Token).collect() };
    let p = seq(prompt);
    let c = seq(context);
    let w = seq(response);
    let l = seq(response);
    Example::new(p, c, w, l)
}
