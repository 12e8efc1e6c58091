use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use sentinel_core::{
    BackendError, DetectionQuery, DetectionResult, Detector, Sampler, SamplerRequest, SamplerResponse,
    TripletParseResult, TripletParser,
};

/// Bounded exponential backoff for retryable backend errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total tries, including the first.
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay_ms: 100, factor: 2.0 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { attempts: 1, ..Self::default() }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.factor.powi(retry as i32);
        Duration::from_millis(ms.min(60_000.0) as u64)
    }

    pub fn run<T>(&self, what: &str, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let attempts = self.attempts.max(1);
        let mut tried = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && tried + 1 < attempts => {
                    let wait = self.delay(tried);
                    log::warn!("{what}: {e}; retry {} of {} in {wait:?}", tried + 1, attempts - 1);
                    thread::sleep(wait);
                    tried += 1;
                }
                other => return other,
            }
        }
    }
}

/// Wraps a backend so every call goes through a [`RetryPolicy`].
#[derive(Debug, Clone)]
pub struct Retrying<B> {
    inner: B,
    policy: RetryPolicy,
}

impl<B> Retrying<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Sampler> Sampler for Retrying<B> {
    fn sample(&mut self, req: &SamplerRequest) -> Result<SamplerResponse, BackendError> {
        let Self { inner, policy } = self;
        policy.run("sample", || inner.sample(req))
    }
}

impl<B: Detector> Detector for Retrying<B> {
    fn detect(&self, q: &DetectionQuery) -> Result<DetectionResult, BackendError> {
        self.policy.run("detect", || self.inner.detect(q))
    }
}

impl<B: TripletParser> TripletParser for Retrying<B> {
    fn parse(&self, sentence: &str) -> Result<TripletParseResult, BackendError> {
        self.policy.run("parse", || self.inner.parse(sentence))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn fast(attempts: u32) -> RetryPolicy {
        RetryPolicy { attempts, base_delay_ms: 0, factor: 2.0 }
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!([p.delay(0), p.delay(1), p.delay(2)].map(|d| d.as_millis()), [100, 200, 400]);
    }

    #[test]
    fn retryable_errors_are_retried_up_to_the_bound() {
        let calls = Cell::new(0);
        let r: Result<(), _> = fast(3).run("t", || {
            calls.set(calls.get() + 1);
            Err(BackendError::Timeout("x".into()))
        });
        assert_eq!(calls.get(), 3);
        assert!(matches!(r, Err(BackendError::Timeout(_))));
    }

    #[test]
    fn success_after_transient_failure() {
        let calls = Cell::new(0);
        let r = fast(3).run("t", || {
            calls.set(calls.get() + 1);
            if calls.get() < 2 {
                Err(BackendError::Unreachable("down".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!((r, calls.get()), (Ok(7), 2));
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let calls = Cell::new(0);
        let r: Result<(), _> = fast(3).run("t", || {
            calls.set(calls.get() + 1);
            Err(BackendError::Malformed("bad".into()))
        });
        assert_eq!(calls.get(), 1);
        assert!(r.is_err());
    }
}
